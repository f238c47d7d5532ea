use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use lrf_core::metrics::{psnr, ssim, EvalReport, ViewMetrics, LATENT_PEAK};
use rayon::prelude::*;

#[derive(Clone, Copy, ValueEnum)]
pub enum EvalMode {
    /// Compare .lrf files with peak 2.0 (normalized latent range).
    Latent,
    /// Compare .png files with peak 1.0.
    Image,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of rendered outputs.
    #[arg(long)]
    rendered: PathBuf,

    /// Directory of reference files with matching stems.
    #[arg(long)]
    reference: PathBuf,

    #[arg(long, value_enum)]
    mode: EvalMode,

    /// Report CSV path (default: report.csv inside the rendered directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> Result<i32> {
    let ext = match args.mode {
        EvalMode::Latent => "lrf",
        EvalMode::Image => "png",
    };
    let rendered = super::stems_with_ext(&args.rendered, ext)?;
    let reference = super::stems_with_ext(&args.reference, ext)?;

    let only_rendered: Vec<&String> =
        rendered.keys().filter(|k| !reference.contains_key(*k)).collect();
    let only_reference: Vec<&String> =
        reference.keys().filter(|k| !rendered.contains_key(*k)).collect();
    if !only_rendered.is_empty() || !only_reference.is_empty() {
        bail!(
            "unmatched ids: only in rendered: [{}]; only in reference: [{}]",
            only_rendered.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
            only_reference.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        );
    }

    let peak = match args.mode {
        EvalMode::Latent => LATENT_PEAK,
        EvalMode::Image => 1.0,
    };
    let ids: Vec<&String> = rendered.keys().collect();
    let views: Vec<ViewMetrics> = ids
        .par_iter()
        .map(|id| -> Result<ViewMetrics> {
            let (a, b) = match args.mode {
                EvalMode::Latent => (
                    lrf_core::latent::read_lrf(&rendered[*id])?,
                    lrf_core::latent::read_lrf(&reference[*id])?,
                ),
                EvalMode::Image => (
                    lrf_core::latent::read_png(&rendered[*id])?,
                    lrf_core::latent::read_png(&reference[*id])?,
                ),
            };
            Ok(ViewMetrics {
                id: (*id).clone(),
                psnr_db: psnr(&a, &b, peak)?,
                ssim: ssim(&a, &b, peak)?,
            })
        })
        .collect::<Result<_>>()?;

    let report = EvalReport { views };
    let out = args.out.unwrap_or_else(|| args.rendered.join("report.csv"));
    std::fs::write(&out, report.to_csv())?;
    print!("{}", report.summary());
    eprintln!("report written to {}", out.display());
    Ok(0)
}
