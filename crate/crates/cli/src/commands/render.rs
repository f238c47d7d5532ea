use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use lrf_core::align::{decode, load_decoder};
use lrf_core::latent::{write_lrf, write_pfm_channels, write_png};
use lrf_core::render::render;
use lrf_core::train::denormalize_image;

#[derive(Args)]
pub struct RenderArgs {
    /// Scene file (.ply).
    #[arg(long)]
    scene: PathBuf,

    /// cameras.txt with the views to render.
    #[arg(long)]
    cameras: PathBuf,

    /// Comma-separated view ids (default: every camera).
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<String>>,

    /// Latent resolution HxW (default: each camera's own size).
    #[arg(long)]
    size: Option<String>,

    /// Output directory for {id}.lrf (and {id}.png with --decoder).
    #[arg(long)]
    out: PathBuf,

    /// Patch-linear decoder; adds decoded PNGs.
    #[arg(long)]
    decoder: Option<PathBuf>,

    /// Also write per-channel PFM files for inspection.
    #[arg(long)]
    pfm: bool,
}

pub fn run(args: RenderArgs) -> Result<i32> {
    let scene = lrf_core::ply::load_scene(&args.scene)?;
    let cameras = lrf_core::geometry::read_cameras_txt(&args.cameras)?;
    let size = args.size.as_deref().map(super::parse_size).transpose()?;
    let decoder = args.decoder.as_deref().map(load_decoder).transpose()?;

    let selected: Vec<&lrf_core::geometry::Camera> = match &args.views {
        None => cameras.iter().collect(),
        Some(ids) => {
            let mut picked = Vec::new();
            for id in ids {
                match cameras.iter().find(|c| &c.id == id) {
                    Some(c) => picked.push(c),
                    None => {
                        let available: Vec<&str> =
                            cameras.iter().map(|c| c.id.as_str()).collect();
                        bail!(
                            "unknown view id '{id}'; available: {}",
                            available.join(", ")
                        );
                    }
                }
            }
            picked
        }
    };

    std::fs::create_dir_all(&args.out)?;
    for cam in selected {
        let (h, w) = size.unwrap_or((cam.intrinsics.height as usize, cam.intrinsics.width as usize));
        let rendered = render(&scene, cam, (h, w))?;
        let raw = match &scene.norm {
            Some(record) => denormalize_image(&rendered, record),
            None => rendered,
        };
        if !raw.is_finite() {
            return Err(lrf_core::LrfError::NumericalFailure(format!(
                "non-finite values rendering view '{}'",
                cam.id
            ))
            .into());
        }
        let lrf_path = args.out.join(format!("{}.lrf", cam.id));
        write_lrf(&lrf_path, &raw)?;
        if args.pfm {
            write_pfm_channels(&lrf_path, &raw)?;
        }
        if let Some(d) = &decoder {
            let image = decode(d, &raw)?;
            write_png(args.out.join(format!("{}.png", cam.id)), &image)?;
        }
        eprintln!("rendered {}", cam.id);
    }
    println!("{}", args.out.display());
    Ok(0)
}
