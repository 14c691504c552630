//! Segmenting phase: a square moving window over the image, each window
//! flattened to a vector in (row, col, channel) order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub origin_row: usize,
    pub origin_col: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SegmentGrid {
    segments: Vec<Segment>,
    kernel: usize,
    stride: usize,
    height: usize,
    width: usize,
    channels: usize,
}

/// Number of window origins along one axis of length `len`.
pub fn positions(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

/// Closed-form segment count for an `height`×`width` image.
pub fn segment_count(height: usize, width: usize, kernel: usize, stride: usize) -> usize {
    positions(height, kernel, stride) * positions(width, kernel, stride)
}

/// Extracts every window at origins `(i·stride, j·stride)` that fits fully
/// inside the image. Trailing pixels beyond the last full window are not
/// segmented.
pub fn segment(img: &Image, kernel: usize, stride: usize) -> Result<SegmentGrid> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be >= 1".into()));
    }
    if kernel == 0 || kernel > img.height() || kernel > img.width() {
        return Err(Error::KernelTooLarge {
            kernel,
            height: img.height(),
            width: img.width(),
        });
    }
    let rows = positions(img.height(), kernel, stride);
    let cols = positions(img.width(), kernel, stride);
    let channels = img.channels();
    let row_len = kernel * channels;

    let segments = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let origin_row = (i / cols) * stride;
            let origin_col = (i % cols) * stride;
            let mut vector = Vec::with_capacity(kernel * row_len);
            for r in origin_row..origin_row + kernel {
                let start = img.index(r, origin_col, 0);
                vector.extend_from_slice(&img.data()[start..start + row_len]);
            }
            Segment {
                origin_row,
                origin_col,
                vector,
            }
        })
        .collect();

    Ok(SegmentGrid {
        segments,
        kernel,
        stride,
        height: img.height(),
        width: img.width(),
        channels,
    })
}

impl SegmentGrid {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `(height, width, channels)` of the source image.
    pub fn source_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vector_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Borrowed segment vectors in grid order.
    pub fn vectors(&self) -> Vec<&[f64]> {
        self.segments.iter().map(|s| s.vector.as_slice()).collect()
    }

    /// Pixel mask of the k×k region covered by `seg`.
    pub fn footprint(&self, seg: &Segment) -> Result<PixelMask> {
        self.check_origin(seg)?;
        Ok(PixelMask::square(
            self.height,
            self.width,
            seg.origin_row,
            seg.origin_col,
            self.kernel,
        ))
    }

    /// Union of the footprints of the segments at `indices`.
    pub fn footprint_union(&self, indices: &[usize]) -> PixelMask {
        let mut mask = PixelMask::new(self.height, self.width);
        for &i in indices {
            let s = &self.segments[i];
            mask.fill_square(s.origin_row, s.origin_col, self.kernel);
        }
        mask
    }

    fn check_origin(&self, seg: &Segment) -> Result<()> {
        if seg.origin_row + self.kernel > self.height || seg.origin_col + self.kernel > self.width
        {
            return Err(Error::InvalidParameter(format!(
                "segment origin ({}, {}) outside a {}x{} image with kernel {}",
                seg.origin_row, seg.origin_col, self.height, self.width, self.kernel
            )));
        }
        Ok(())
    }

    /// Inverse of the flattening: channel values of window pixel `(r, c)`.
    pub fn window_pixel<'a>(&self, seg: &'a Segment, r: usize, c: usize) -> &'a [f64] {
        let start = (r * self.kernel + c) * self.channels;
        &seg.vector[start..start + self.channels]
    }

    /// Writes each segment's pixels back into `base` in grid order.
    pub fn reassemble(&self, base: &Image) -> Result<Image> {
        if (base.height(), base.width(), base.channels()) != self.source_dims() {
            return Err(Error::DimensionMismatch("reassembly target".into()));
        }
        let mut out = base.clone();
        for seg in &self.segments {
            for r in 0..self.kernel {
                for c in 0..self.kernel {
                    for (ch, v) in self.window_pixel(seg, r, c).iter().enumerate() {
                        out.set(seg.origin_row + r, seg.origin_col + c, ch, *v);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`SegmentGrid::footprint`].
pub fn footprint(seg: &Segment, grid: &SegmentGrid) -> Result<PixelMask> {
    grid.footprint(seg)
}
