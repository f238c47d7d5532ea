use anyhow::Result;
use clap::Args;
use lrf_core::grad::gradient_check;
use lrf_core::latent::LatentImage;
use lrf_core::metrics::psnr;
use lrf_core::oracle;
use lrf_core::render::{composite_pixel, render};
use lrf_core::ssim::SsimPadding;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Args)]
pub struct SelftestArgs {
    /// Fewer seeds per suite.
    #[arg(long)]
    quick: bool,
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

pub fn run(args: SelftestArgs) -> Result<i32> {
    let mut suite = Suite { failures: 0 };
    let (raster_seeds, grad_seeds, kl_samples) = if args.quick {
        (10, 2, 100_000)
    } else {
        (50, 5, 400_000)
    };

    // Spherical harmonics against the from-first-principles basis.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let dir = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0f64),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 {
                    break v.normalize();
                }
            };
            let a = lrf_core::sh::sh_basis(&dir);
            let b = oracle::sh_basis_reference(&dir);
            for k in 0..16 {
                worst = worst.max((a[k] - b[k]).abs());
            }
        }
        suite.report("sh-basis", worst < 1e-12, format!("max abs deviation {worst:.3e}"));
    }

    // Compositing closed forms.
    {
        let a = [1.0];
        let b = [1.0];
        let (out, t) = composite_pixel(1, &[(0.5, &a[..]), (0.5, &b[..])]);
        let ok = (out[0] - 0.75).abs() < 1e-15 && (t - 0.25).abs() < 1e-15;
        suite.report("composite-identities", ok, format!("0.5/0.5 -> {} T {}", out[0], t));
    }

    // PSNR closed forms.
    {
        let a = LatentImage::zeros(8, 8, 3);
        let mut b = LatentImage::zeros(8, 8, 3);
        for v in b.data_mut() {
            *v = 0.1;
        }
        let v20 = psnr(&a, &b, 1.0)?.unwrap();
        let identical = psnr(&a, &a.clone(), 1.0)?.is_none();
        let ok = (v20 - 20.0).abs() < 1e-9 && identical;
        suite.report("psnr-closed-form", ok, format!("uniform 0.1 -> {v20:.9} dB"));
    }

    // SSIM against the naive reference.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            let mut a = LatentImage::zeros(13, 15, 3);
            let mut b = LatentImage::zeros(13, 15, 3);
            for v in a.data_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            for v in b.data_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            let fast = lrf_core::ssim::ssim(&a, &b, 1.0, SsimPadding::Valid)?;
            let slow = oracle::ssim_reference(&a, &b, 1.0, SsimPadding::Valid)?;
            worst = worst.max((fast - slow).abs());
        }
        suite.report("ssim-reference", worst < 1e-6, format!("max deviation {worst:.3e}"));
    }

    // Tiled renderer vs brute force, bit-identical.
    {
        let cam = super::checkgrad::probe_camera(16, 16);
        let mut mismatches = 0;
        for seed in 0..raster_seeds {
            let scene = oracle::random_training_scene(20, 4, seed);
            let tiled = render(&scene, &cam, (16, 16))?;
            let brute = oracle::render_brute_force(&scene, &cam, (16, 16), 3)?;
            if tiled != brute {
                mismatches += 1;
            }
        }
        suite.report(
            "rasterizer-oracle",
            mismatches == 0,
            format!("{raster_seeds} scenes, {mismatches} mismatches"),
        );
    }

    // Analytic gradients vs finite differences.
    {
        let cam = super::checkgrad::probe_camera(16, 16);
        let mut worst = 0.0f64;
        let mut pass = true;
        for seed in 0..grad_seeds {
            let scene = oracle::gradcheck_scene(8, 4, seed);
            let dl = super::checkgrad::probe_gradient(16, 16, 4, seed + 1000);
            let report = gradient_check(&scene, &cam, (16, 16), &dl, 1e-4, 1e-4, 1e-7)?;
            pass &= report.pass;
            worst = worst.max(report.worst.rel_err);
        }
        suite.report(
            "gradient-check",
            pass,
            format!("{grad_seeds} seeds, worst rel err {worst:.3e}"),
        );
    }

    // Closed-form KL vs Monte-Carlo.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| {
            let mut mean = LatentImage::zeros(3, 3, 2);
            let mut log_var = LatentImage::zeros(3, 3, 2);
            for v in mean.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            for v in log_var.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
            lrf_core::losses::PosteriorParams::new(mean, log_var).expect("shapes match")
        };
        let q = mk(&mut rng);
        let p = mk(&mut rng);
        let closed = lrf_core::losses::kl_regularizer(&q, &p)?;
        let mc = oracle::mc_kl_divergence(&q, &p, kl_samples, 99);
        let rel = (closed - mc).abs() / closed.abs().max(1e-6);
        suite.report(
            "kl-monte-carlo",
            rel < 0.02,
            format!("closed {closed:.6} vs mc {mc:.6} (rel {rel:.4})"),
        );
    }

    println!(
        "selftest: {}",
        if suite.failures == 0 {
            "all suites passed".to_string()
        } else {
            format!("{} suite(s) FAILED", suite.failures)
        }
    );
    Ok(if suite.failures == 0 { 0 } else { 3 })
}
