use anyhow::Result;
use clap::Args;
use lrf_core::geometry::{Camera, CameraIntrinsics, Pose};
use lrf_core::grad::gradient_check;
use lrf_core::latent::LatentImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Args)]
pub struct CheckGradArgs {
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Gaussian count.
    #[arg(long, default_value_t = 10)]
    gaussians: usize,

    /// Render size HxW.
    #[arg(long, default_value = "16x16")]
    size: String,

    /// Latent channels.
    #[arg(long, default_value_t = 4)]
    channels: usize,

    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,

    /// Relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,

    /// Absolute tolerance floor.
    #[arg(long, default_value_t = 1e-7)]
    abs_tol: f64,
}

/// Identity-pose probe camera for a raster of the given size.
pub fn probe_camera(height: usize, width: usize) -> Camera {
    Camera::new(
        "probe",
        CameraIntrinsics::new(
            1.25 * width as f64,
            1.25 * height as f64,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width as u32,
            height as u32,
        )
        .expect("probe intrinsics are valid"),
        Pose::identity(),
    )
}

/// Random loss-gradient image for the probe.
pub fn probe_gradient(height: usize, width: usize, channels: usize, seed: u64) -> LatentImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * channels)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    LatentImage::from_data(height, width, channels, data).expect("sized to match")
}

pub fn run(args: CheckGradArgs, seed_override: Option<u64>) -> Result<i32> {
    let seed = seed_override.unwrap_or(args.seed);
    let (h, w) = super::parse_size(&args.size)?;
    let scene = lrf_core::oracle::gradcheck_scene(args.gaussians, args.channels, seed);
    let cam = probe_camera(h, w);
    let dl_dz = probe_gradient(h, w, args.channels, seed.wrapping_add(0x9e3779b9));

    let report = gradient_check(&scene, &cam, (h, w), &dl_dz, args.step, args.rel_tol, args.abs_tol)?;
    println!(
        "checked {} parameters across {} gaussians ({}x{}x{}, seed {seed})",
        report.params_checked, args.gaussians, h, w, args.channels
    );
    println!(
        "worst offender: gaussian {} {}: analytic {:.9e}, numeric {:.9e}, rel err {:.3e}",
        report.worst.gaussian,
        report.worst.param,
        report.worst.analytic,
        report.worst.numeric,
        report.worst.rel_err
    );
    if report.pass {
        println!("PASS (rel tol {:.1e}, abs floor {:.1e})", args.rel_tol, args.abs_tol);
        Ok(0)
    } else {
        println!("FAIL (rel tol {:.1e}, abs floor {:.1e})", args.rel_tol, args.abs_tol);
        Ok(3)
    }
}
