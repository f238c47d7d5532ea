use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lrf_core::train::{latent_normalize, load_dataset, train_lrf, write_metrics_csv, TrainConfig};

#[derive(Args)]
pub struct TrainArgs {
    /// Data directory: cameras.txt, latents/{id}.lrf, split.txt, optional
    /// points.txt.
    #[arg(long)]
    data: PathBuf,

    /// Output scene path (.ply).
    #[arg(long)]
    out: PathBuf,

    /// TrainConfig as JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Metrics CSV path (default: metrics.csv next to the scene).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

pub fn run(args: TrainArgs, seed_override: Option<u64>) -> Result<i32> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("bad train config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed_override {
        config.seed = seed;
    }

    let (dataset, points) = load_dataset(&args.data)?;
    let (normalized, _) = latent_normalize(&dataset)?;
    eprintln!(
        "training on {} views ({} held out), latents {:?}, {} iterations",
        normalized.train.len(),
        normalized.test.len(),
        normalized.latent_shape(),
        config.iterations
    );
    let result = train_lrf(&normalized, points.as_deref(), &config)?;

    lrf_core::ply::save_scene(&args.out, &result.scene)?;
    let metrics_path = args
        .metrics
        .unwrap_or_else(|| args.out.parent().unwrap_or(std::path::Path::new(".")).join("metrics.csv"));
    write_metrics_csv(&metrics_path, &result.metrics)?;

    if let Some(last) = result.metrics.last() {
        eprintln!(
            "done: {} gaussians, final loss {:.6} (l1 {:.6}, dssim {:.6})",
            result.scene.len(),
            last.loss,
            last.l1,
            last.dssim
        );
    }
    println!("{}", args.out.display());
    Ok(0)
}
