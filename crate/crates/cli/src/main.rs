use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use patch_defense::analyze::{export_histogram, fit_distribution, fit_reduced, modality_report, score_grid};
use patch_defense::attack::{AdaptiveBounds, BaseField, PatchKind, PatchSpec, Placement, PATCH_SIZES};
use patch_defense::config::{DefenseConfig, MinPts, OverlapMode, Replacement};
use patch_defense::harness::calibrate::{calibrate, list_images};
use patch_defense::harness::evaluate::{evaluate_manifest, score_file, RunManifest};
use patch_defense::image::save_mask;
use patch_defense::synth::{write_corpus, TextureParams};
use patch_defense::{defend_batch, load_image, make_patch, save_image, segment, Metric};

#[derive(Parser)]
#[command(name = "patch-defense", version, about = "Segment, isolate and block adversarial patches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sanitize images; writes `<stem>_sanitized.png`, `<stem>_mask.png` and summary.csv.
    Defend {
        /// Image files or directories of PNGs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        defense: DefenseArgs,
    },
    /// Inject a synthetic patch; writes the composed image and its ground-truth mask.
    Inject {
        input: PathBuf,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_mask: PathBuf,
        #[command(flatten)]
        patch: PatchArgs,
        #[arg(long, default_value_t = 50)]
        size: usize,
    },
    /// Mahalanobis distances of an image's segments: modality report and histogram CSV.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Project onto principal components explaining this fraction of variance first.
        #[arg(long)]
        pca: Option<f64>,
        #[command(flatten)]
        defense: DefenseArgs,
    },
    /// Choose eps from clean images; prints the resulting configuration.
    Calibrate {
        clean_dir: PathBuf,
        /// Write the calibrated configuration to this file.
        #[arg(long)]
        write_config: Option<PathBuf>,
        #[command(flatten)]
        defense: DefenseArgs,
    },
    /// Clean and patched pass over a corpus with metrics CSVs and a run manifest.
    Evaluate {
        corpus_dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Calibrate eps on this directory of clean images first.
        #[arg(long)]
        calibrate: Option<PathBuf>,
        /// Rerun a previous manifest; other run options are ignored.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated patch sides cycled over the corpus.
        #[arg(long, value_delimiter = ',', default_values_t = PATCH_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[command(flatten)]
        patch: PatchArgs,
        #[command(flatten)]
        defense: DefenseArgs,
    },
    /// Defend an externally patched image and score it against its ground-truth mask.
    Score {
        image: PathBuf,
        /// PNG or whitespace-separated 0/1 matrix.
        mask: PathBuf,
        #[command(flatten)]
        defense: DefenseArgs,
    },
    /// Write seeded textured host images.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Defense settings: a config file, then flag overrides.
#[derive(Args)]
struct DefenseArgs {
    /// `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// `1201` or `rho:0.6`.
    #[arg(long)]
    min_pts: Option<MinPts>,
    #[arg(long)]
    replacement: Option<Replacement>,
    #[arg(long)]
    distance: Option<Metric>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    overlap: Option<OverlapMode>,
}

impl DefenseArgs {
    fn resolve(&self) -> Result<DefenseConfig> {
        let mut cfg = match &self.config {
            Some(p) => DefenseConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => DefenseConfig::default(),
        };
        if let Some(v) = self.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.min_pts {
            cfg.min_pts = v;
        }
        if let Some(v) = self.replacement {
            cfg.replacement = v;
        }
        if let Some(v) = self.distance {
            cfg.distance_kind = v;
        }
        if let Some(v) = self.lambda {
            cfg.shrinkage_lambda = v;
        }
        if let Some(v) = self.overlap {
            cfg.overlap = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PatchArgs {
    /// `random`, `top-left` or `fixed:<row>,<col>`.
    #[arg(long, default_value = "random")]
    placement: Placement,
    /// `uniform`, `high-frequency`, `constant:<v>` or `adaptive`.
    #[arg(long, default_value = "uniform")]
    kind: PatchKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    mean_diff_low: Option<f64>,
    #[arg(long)]
    mean_diff_high: Option<f64>,
    #[arg(long)]
    std_ratio_low: Option<f64>,
    #[arg(long)]
    std_ratio_high: Option<f64>,
    #[arg(long)]
    n_fragments: Option<usize>,
    #[arg(long)]
    fragment_size: Option<usize>,
    /// `host-sample`, `host-in-place` or `uniform`.
    #[arg(long)]
    base: Option<BaseField>,
    #[arg(long)]
    aim: Option<f64>,
}

impl PatchArgs {
    fn spec(&self, size: usize) -> PatchSpec {
        let kind = match self.kind {
            PatchKind::AdaptiveConstrained(mut b) => {
                let d = AdaptiveBounds::default();
                b.mean_diff_low = self.mean_diff_low.unwrap_or(d.mean_diff_low);
                b.mean_diff_high = self.mean_diff_high.unwrap_or(d.mean_diff_high);
                b.std_ratio_low = self.std_ratio_low.unwrap_or(d.std_ratio_low);
                b.std_ratio_high = self.std_ratio_high.unwrap_or(d.std_ratio_high);
                b.n_fragments = self.n_fragments.unwrap_or(d.n_fragments);
                b.fragment_size = self.fragment_size.unwrap_or(d.fragment_size);
                b.base = self.base.unwrap_or(d.base);
                b.aim = self.aim.unwrap_or(d.aim);
                PatchKind::AdaptiveConstrained(b)
            }
            other => other,
        };
        PatchSpec::new(size, self.placement, kind, self.seed)
    }
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            paths.extend(list_images(p)?);
        } else {
            paths.push(p.clone());
        }
    }
    if paths.is_empty() {
        bail!("no input images");
    }
    Ok(paths)
}

fn run_defend(inputs: &[PathBuf], out: &Path, cfg: &DefenseConfig) -> Result<()> {
    let paths = expand_inputs(inputs)?;
    let summary = defend_batch(&paths, cfg, out)?;
    for row in &summary.rows {
        match &row.result {
            Ok(s) => println!(
                "{}: {}/{} segments anomalous{}",
                row.file,
                s.n_anomalous,
                s.n_segments,
                if s.all_noise { " (all noise)" } else { "" }
            ),
            Err(e) => println!("{}: failed: {e}", row.file),
        }
    }
    println!("summary: {}", summary.summary_path.display());
    let failed = summary.failures().count();
    if failed == summary.rows.len() {
        bail!("every input failed");
    }
    Ok(())
}

fn run_analyze(input: &Path, out: &Path, bins: usize, pca: Option<f64>, cfg: &DefenseConfig) -> Result<()> {
    let img = load_image(input)?;
    let grid = segment(&img, cfg.kernel, cfg.stride)?;
    let dist = match pca {
        Some(frac) => fit_reduced(&grid.vectors(), cfg.shrinkage_lambda, frac)?,
        None => fit_distribution(&grid, cfg.shrinkage_lambda)?,
    };
    let d = score_grid(&grid, &dist)?;
    let report = modality_report(&d)?;
    export_histogram(&d, out, bins)?;
    println!(
        "{:?}: separation {:.3}, threshold {:.3}, groups {} / {}",
        report.modality,
        report.separation_score,
        report.threshold,
        report.low_group.count,
        report.high_group.count
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    corpus_dir: &Path,
    out: &Path,
    calibrate_dir: Option<&Path>,
    manifest: Option<&Path>,
    sizes: Vec<usize>,
    bins: usize,
    spec: PatchSpec,
    mut cfg: DefenseConfig,
) -> Result<()> {
    let manifest = match manifest {
        Some(p) => RunManifest::load(p)?,
        None => {
            if let Some(dir) = calibrate_dir {
                let cal = calibrate(dir, &cfg)?;
                cfg = cal.apply(&cfg);
                info!("calibrated eps {}", cfg.eps);
            }
            let mut m = RunManifest::for_corpus(corpus_dir, cfg, spec, sizes)?;
            m.histogram_bins = bins;
            m
        }
    };
    let summary = evaluate_manifest(&manifest, corpus_dir, out)?;
    let a = summary.aggregate;
    let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
    println!("images: {} ({} failed)", summary.rows.len(), summary.failures().count());
    println!("seg_precision: {}", fmt(a.segment_precision));
    println!("seg_recall: {}", fmt(a.segment_recall));
    println!("pixel_iou: {}", fmt(a.pixel_iou));
    println!("patch_pixel_recall: {}", fmt(a.patch_pixel_recall));
    println!("clean_fp_rate: {}", fmt(a.clean_fp_segment_rate));
    println!("metrics: {}", summary.metrics_path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Defend { inputs, out, defense } => run_defend(&inputs, &out, &defense.resolve()?),
        Command::Inject {
            input,
            out_image,
            out_mask,
            patch,
            size,
        } => {
            let host = load_image(&input)?;
            let inj = make_patch(&patch.spec(size), &host)?;
            save_image(&inj.image, &out_image)?;
            save_mask(&inj.mask, &out_mask)?;
            println!("patch {}x{} at {:?}", inj.size, inj.size, inj.origin);
            if let Some(checks) = inj.checks {
                for (ch, c) in checks.iter().enumerate() {
                    println!(
                        "channel {ch}: mean diff {:.4}, std ratio {:.3}",
                        c.mean_diff(),
                        c.std_ratio()
                    );
                }
            }
            Ok(())
        }
        Command::Analyze {
            input,
            out,
            bins,
            pca,
            defense,
        } => run_analyze(&input, &out, bins, pca, &defense.resolve()?),
        Command::Calibrate {
            clean_dir,
            write_config,
            defense,
        } => {
            let mut cfg = defense.resolve()?;
            if defense.min_pts.is_none() && defense.config.is_none() {
                cfg.min_pts = MinPts::Fraction(patch_defense::config::DEFAULT_RHO);
            }
            let cal = calibrate(&clean_dir, &cfg)?;
            let cfg = cal.apply(&cfg);
            println!(
                "eps = {} (min_pts {} over {} segments, {} images{})",
                cal.params.eps,
                cal.params.min_pts,
                cal.segments,
                cal.images,
                if cal.floored { ", floored" } else { "" }
            );
            if let Some(path) = write_config {
                std::fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Evaluate {
            corpus_dir,
            out,
            calibrate,
            manifest,
            sizes,
            bins,
            patch,
            defense,
        } => {
            let mut cfg = defense.resolve()?;
            if defense.min_pts.is_none() && defense.config.is_none() {
                cfg.min_pts = MinPts::Fraction(patch_defense::config::DEFAULT_RHO);
            }
            let spec = patch.spec(sizes.first().copied().unwrap_or(50));
            run_evaluate(
                &corpus_dir,
                &out,
                calibrate.as_deref(),
                manifest.as_deref(),
                sizes,
                bins,
                spec,
                cfg,
            )
        }
        Command::Score { image, mask, defense } => {
            let m = score_file(&image, &mask, &defense.resolve()?)?;
            let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
            println!("seg_precision: {}", fmt(m.segment_precision));
            println!("seg_recall: {}", fmt(m.segment_recall));
            println!("pixel_iou: {}", fmt(m.pixel_iou));
            println!("patch_pixel_recall: {}", fmt(m.patch_pixel_recall));
            Ok(())
        }
        Command::Synth {
            out_dir,
            count,
            size,
            seed,
        } => {
            let paths = write_corpus(&out_dir, count, size, size, &TextureParams::default(), seed)?;
            println!("wrote {} images to {}", paths.len(), out_dir.display());
            Ok(())
        }
    }
}
