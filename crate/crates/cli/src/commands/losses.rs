use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use lrf_core::losses::{corres_loss, sample_latent, CorrespondenceBatch};
use nalgebra::Vector2;

#[derive(Args)]
pub struct LossesArgs {
    /// Directory of {view_id}.lrf latent maps.
    #[arg(long)]
    latents: PathBuf,

    #[arg(long)]
    cameras: PathBuf,

    #[arg(long)]
    matches: PathBuf,

    /// Image-to-latent downsampling factor.
    #[arg(long, default_value_t = 8)]
    f: u32,

    /// Report CSV path (default: stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: LossesArgs) -> Result<i32> {
    let cameras = lrf_core::geometry::read_cameras_txt(&args.cameras)?;
    let matches = lrf_core::geometry::read_matches_txt(&args.matches)?;

    // APE weights over the unique view pairs in this batch; every
    // correspondence inherits the weight of its pair.
    let pairs = super::weights::unique_pairs(&matches);
    let rows = super::weights::pair_weights(&cameras, &pairs)?;
    let weight_of: BTreeMap<(String, String), (f64, f64)> = rows
        .iter()
        .map(|(a, b, ape, w)| ((a.clone(), b.clone()), (*ape, *w)))
        .collect();
    let key_of = |m: &lrf_core::geometry::CorrespondencePair| {
        if m.view_i <= m.view_j {
            (m.view_i.clone(), m.view_j.clone())
        } else {
            (m.view_j.clone(), m.view_i.clone())
        }
    };

    let mut latents = BTreeMap::new();
    for (a, b) in &pairs {
        for id in [a, b] {
            if !latents.contains_key(id) {
                let path = args.latents.join(format!("{id}.lrf"));
                let img = lrf_core::latent::read_lrf(&path)
                    .with_context(|| format!("latent map for view '{id}'"))?;
                latents.insert(id.clone(), img);
            }
        }
    }

    let weighted: Vec<_> = matches
        .iter()
        .map(|m| (m.clone(), weight_of[&key_of(m)].1))
        .collect();
    let batch = CorrespondenceBatch::new(weighted, args.f)?;
    let (total, _) = corres_loss(&latents, &batch)?;

    // Per-pair residual totals.
    let mut residuals: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for m in &matches {
        let zi = &latents[&m.view_i];
        let zj = &latents[&m.view_j];
        let si = sample_latent(zi, &Vector2::new(m.x_i.x, m.x_i.y), args.f)?;
        let sj = sample_latent(zj, &Vector2::new(m.x_j.x, m.x_j.y), args.f)?;
        let l1: f64 = si.iter().zip(&sj).map(|(a, b)| (a - b).abs()).sum();
        let entry = residuals.entry(key_of(m)).or_insert((0.0, 0));
        entry.0 += l1;
        entry.1 += 1;
    }

    let mut csv = String::from("view_i,view_j,ape,weight,correspondences,residual_l1\n");
    for (a, b, ape, w) in &rows {
        let (res, n) = residuals.get(&(a.clone(), b.clone())).copied().unwrap_or((0.0, 0));
        csv.push_str(&format!("{a},{b},{ape},{w},{n},{res}\n"));
    }
    print!("{csv}");
    println!("corres_loss,{total}");
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{csv}corres_loss,,,,,{total}\n"))?;
        eprintln!("report written to {}", out.display());
    }
    Ok(0)
}
