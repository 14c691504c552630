//! Small dense helpers for symmetric positive definite systems.

use rayon::prelude::*;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors a row-major symmetric matrix. Returns `None` when a pivot is
    /// not strictly positive (matrix not positive definite).
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= a[j * n + k] * a[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return None;
            }
            let pivot = diag.sqrt();
            a[j * n + j] = pivot;
            let (head, tail) = a.split_at_mut((j + 1) * n);
            let row_j = &head[j * n..j * n + j];
            tail.par_chunks_mut(n).for_each(|row_i| {
                let dot: f64 = row_i[..j].iter().zip(row_j).map(|(x, y)| x * y).sum();
                row_i[j] = (row_i[j] - dot) / pivot;
            });
        }
        for i in 0..n {
            for j in i + 1..n {
                a[i * n + j] = 0.0;
            }
        }
        Some(Self { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&y[..i]).map(|(x, v)| x * v).sum();
            y[i] = (y[i] - dot) / self.l[i * n + i];
        }
        y
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * x[k];
            }
            x[i] = v / self.l[i * n + i];
        }
        x
    }

    /// `bᵀ A⁻¹ b`, evaluated as `‖L⁻¹ b‖²`.
    pub fn inv_quadratic(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|v| v * v).sum()
    }
}

/// `X Xᵀ` for the row-major `rows`×`cols` matrix `x`.
pub fn gram(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; rows * rows];
    g.par_chunks_mut(rows.max(1))
        .enumerate()
        .for_each(|(i, out)| {
            let xi = &x[i * cols..(i + 1) * cols];
            for (j, slot) in out.iter_mut().enumerate().skip(i) {
                let xj = &x[j * cols..(j + 1) * cols];
                *slot = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
            }
        });
    for i in 0..rows {
        for j in 0..i {
            g[i * rows + j] = g[j * rows + i];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve() {
        // A = [[4, 2], [2, 3]]
        let chol = Cholesky::factor(vec![4.0, 2.0, 2.0, 3.0], 2).unwrap();
        let x = chol.solve(&[2.0, 1.0]);
        // A x = b → x = (0.5, 0)
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1].abs() < 1e-12);
        let q = chol.inv_quadratic(&[2.0, 1.0]);
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::factor(vec![1.0, 2.0, 2.0, 1.0], 2).is_none());
        assert!(Cholesky::factor(vec![0.0], 1).is_none());
    }

    #[test]
    fn gram_matches_naive() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = gram(&x, 2, 3);
        assert_eq!(g, vec![14.0, 32.0, 32.0, 77.0]);
    }
}
