use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use lrf_core::geometry::{ape, ape_weights, pose_relative, Camera};

#[derive(Args)]
pub struct WeightsArgs {
    /// cameras.txt defining the views.
    #[arg(long)]
    cameras: PathBuf,

    /// Restrict to the view pairs appearing in this matches.txt
    /// (default: every unordered camera pair).
    #[arg(long)]
    matches: Option<PathBuf>,

    /// Output CSV (default: stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Unique unordered view pairs with APE values and batch-normalized weights.
/// APE is symmetric under swapping the pair, so unordered pairs are
/// well-defined.
pub fn pair_weights(
    cameras: &[Camera],
    pairs: &[(String, String)],
) -> Result<Vec<(String, String, f64, f64)>> {
    let by_id: BTreeMap<&str, &Camera> = cameras.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut pose_pairs = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let (Some(ca), Some(cb)) = (by_id.get(a.as_str()), by_id.get(b.as_str())) else {
            bail!("pair ({a}, {b}) references a view missing from cameras.txt");
        };
        pose_pairs.push((ca.pose.clone(), cb.pose.clone()));
    }
    let weights = ape_weights(&pose_pairs)?;
    Ok(pairs
        .iter()
        .zip(&pose_pairs)
        .zip(&weights)
        .map(|(((a, b), (pa, pb)), w)| (a.clone(), b.clone(), ape(&pose_relative(pa, pb)), *w))
        .collect())
}

/// Unique unordered pairs from a match list, in first-appearance order.
pub fn unique_pairs(matches: &[lrf_core::geometry::CorrespondencePair]) -> Vec<(String, String)> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for m in matches {
        let key = if m.view_i <= m.view_j {
            (m.view_i.clone(), m.view_j.clone())
        } else {
            (m.view_j.clone(), m.view_i.clone())
        };
        if seen.insert(key.clone()) {
            out.push(key);
        }
    }
    out
}

pub fn run(args: WeightsArgs) -> Result<i32> {
    let cameras = lrf_core::geometry::read_cameras_txt(&args.cameras)?;
    let pairs: Vec<(String, String)> = match &args.matches {
        Some(path) => unique_pairs(&lrf_core::geometry::read_matches_txt(path)?),
        None => {
            let mut all = Vec::new();
            for i in 0..cameras.len() {
                for j in i + 1..cameras.len() {
                    all.push((cameras[i].id.clone(), cameras[j].id.clone()));
                }
            }
            all
        }
    };
    if pairs.is_empty() {
        bail!("no view pairs to weight");
    }
    let rows = pair_weights(&cameras, &pairs)?;

    let mut csv = String::from("view_i,view_j,ape,weight\n");
    for (a, b, ape_v, w) in &rows {
        csv.push_str(&format!("{a},{b},{ape_v},{w}\n"));
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        std::fs::write(out, &csv)?;
        eprintln!("weights written to {}", out.display());
    }
    Ok(0)
}
