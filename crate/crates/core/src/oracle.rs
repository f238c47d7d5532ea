//! Independent reference implementations used to verify the fast paths.
//!
//! Everything here trades speed for obviousness: direct summations, naive
//! window loops, Monte-Carlo estimates. The `selftest` CLI command and the
//! test suites compare the production implementations against these.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::geometry::Camera;
use crate::latent::LatentImage;
use crate::losses::PosteriorParams;
use crate::render;
use crate::scene::{covariance3d, LatentGaussian, Scene};
use crate::sh::SH_COEFFS;

/// Spherical-harmonics basis computed from first principles: the real-basis
/// normalization constants are assembled from sqrt/pi expressions instead of
/// hard-coded decimals, and each polynomial is written out directly.
pub fn sh_basis_reference(dir: &Vector3<f64>) -> [f64; SH_COEFFS] {
    use std::f64::consts::PI;
    let (x, y, z) = (dir.x, dir.y, dir.z);

    let c00 = 0.5 * (1.0 / PI).sqrt();
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let c2m2 = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    let c22 = 0.25 * (15.0 / PI).sqrt();
    let c3m3 = 0.25 * (35.0 / (2.0 * PI)).sqrt();
    let c3m2 = 0.5 * (105.0 / PI).sqrt();
    let c3m1 = 0.25 * (21.0 / (2.0 * PI)).sqrt();
    let c30 = 0.25 * (7.0 / PI).sqrt();
    let c32 = 0.25 * (105.0 / PI).sqrt();

    [
        c00,
        c1 * y,
        c1 * z,
        c1 * x,
        c2m2 * x * y,
        c2m2 * y * z,
        c20 * (3.0 * z * z - 1.0),
        c2m2 * x * z,
        c22 * (x * x - y * y),
        c3m3 * y * (3.0 * x * x - y * y),
        c3m2 * x * y * z,
        c3m1 * y * (5.0 * z * z - 1.0),
        c30 * z * (5.0 * z * z - 3.0),
        c3m1 * x * (5.0 * z * z - 1.0),
        c32 * z * (x * x - y * y),
        c3m3 * x * (x * x - 3.0 * y * y),
    ]
}

/// Brute-force renderer: every pixel walks the full depth-sorted projected
/// list with no tile binning. Per-contributor arithmetic is shared with the
/// tiled path, so in deterministic mode the two must agree bit for bit.
pub fn render_brute_force(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    degree: usize,
) -> Result<LatentImage> {
    let (height, width) = out_size;
    let cam = render::camera_at_resolution(cam, width, height);
    let projected = render::project_and_sort(scene, &cam, degree)?;
    let channels = scene.channels;
    let mut img = LatentImage::zeros(height, width, channels);
    let mut alpha_map = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut acc = vec![0.0; channels];
            let mut transmittance = 1.0;
            for pg in &projected {
                if transmittance < render::EARLY_STOP_TRANSMITTANCE {
                    break;
                }
                let alpha = render::splat_alpha(pg, &pixel);
                if alpha <= 0.0 {
                    continue;
                }
                let weight = alpha * transmittance;
                for (a, z) in acc.iter_mut().zip(&pg.view_latent) {
                    *a += weight * z;
                }
                transmittance *= 1.0 - alpha;
            }
            for (c, v) in acc.iter().enumerate() {
                img.set(y, x, c, *v);
            }
            alpha_map[y * width + x] = 1.0 - transmittance;
        }
    }
    img.alpha = Some(alpha_map);
    Ok(img)
}

/// Monte-Carlo estimate of the projected 2D covariance of a 3D Gaussian:
/// draw samples from N(mu, Sigma), push each through the exact (nonlinear)
/// pinhole projection, and fit the sample covariance of the pixel
/// coordinates. Compare against the local affine approximation before
/// dilation.
pub fn mc_projected_covariance(
    g: &LatentGaussian,
    cam: &Camera,
    samples: usize,
    seed: u64,
) -> Result<Matrix2<f64>> {
    let sigma = covariance3d(&g.log_scale, &g.rotation)?;
    let chol = nalgebra::Cholesky::new(sigma)
        .ok_or_else(|| crate::LrfError::NumericalFailure("covariance not PD".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pts = Vec::with_capacity(samples);
    let mut mean = Vector2::zeros();
    while pts.len() < samples {
        let n = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        let world = g.position + l * n;
        let Ok((px, _)) = crate::geometry::project_point(cam, &world) else {
            continue;
        };
        mean += px;
        pts.push(px);
    }
    mean /= samples as f64;
    let mut cov = Matrix2::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    Ok(cov / (samples as f64 - 1.0))
}

/// Monte-Carlo estimate of KL(q || p) between diagonal Gaussians, normalized
/// the same way as the closed form: summed over channels, averaged over
/// pixels.
pub fn mc_kl_divergence(
    q: &PosteriorParams,
    p: &PosteriorParams,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = q.mean.data().len();
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for i in 0..n {
            let mq = q.mean.data()[i];
            let lvq = q.log_var.data()[i];
            let mp = p.mean.data()[i];
            let lvp = p.log_var.data()[i];
            let sq = (0.5 * lvq).exp();
            let sp = (0.5 * lvp).exp();
            let eps: f64 = StandardNormal.sample(&mut rng);
            let z = mq + sq * eps;
            // log N(z; m, s) = -0.5 ((z-m)/s)^2 - log s - 0.5 log 2pi
            let lq = -0.5 * ((z - mq) / sq).powi(2) - sq.ln();
            let lp = -0.5 * ((z - mp) / sp).powi(2) - sp.ln();
            log_ratio += lq - lp;
        }
        acc += log_ratio;
    }
    acc / samples as f64 / (q.mean.height() * q.mean.width()) as f64
}

/// Monte-Carlo estimate of KL(q || N(0, I)), same normalization as above.
pub fn mc_kl_prior(q: &PosteriorParams, samples: usize, seed: u64) -> f64 {
    let standard = PosteriorParams::new(
        LatentImage::zeros(q.mean.height(), q.mean.width(), q.mean.channels()),
        LatentImage::zeros(q.mean.height(), q.mean.width(), q.mean.channels()),
    )
    .expect("zero maps share shapes");
    mc_kl_divergence(q, &standard, samples, seed)
}

/// Naive SSIM: direct nested loops over window positions and taps, no
/// separable filtering, no incremental statistics.
pub fn ssim_reference(
    a: &LatentImage,
    b: &LatentImage,
    peak: f64,
    padding: crate::ssim::SsimPadding,
) -> Result<f64> {
    use crate::ssim::{SsimPadding, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(crate::LrfError::ShapeMismatch {
            context: "ssim_reference".into(),
            expected: format!("{}x{}x{}", a.height(), a.width(), a.channels()),
            actual: format!("{}x{}x{}", b.height(), b.width(), b.channels()),
        });
    }
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let half = SSIM_WINDOW as isize / 2;
    if matches!(padding, SsimPadding::Valid) && (h < SSIM_WINDOW || w < SSIM_WINDOW) {
        return Err(crate::LrfError::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }

    // 2D Gaussian window, normalized to unit sum.
    let mut kernel = [[0.0; 11]; 11];
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, kv) in row.iter_mut().enumerate() {
            let di = i as f64 - half as f64;
            let dj = j as f64 - half as f64;
            *kv = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            ksum += *kv;
        }
    }
    for row in kernel.iter_mut() {
        for kv in row.iter_mut() {
            *kv /= ksum;
        }
    }

    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);

    let (y_range, x_range) = match padding {
        SsimPadding::Valid => (
            (half as usize)..(h - half as usize),
            (half as usize)..(w - half as usize),
        ),
        SsimPadding::SameZero => (0..h, 0..w),
    };

    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for cy in y_range.clone() {
            for cx in x_range.clone() {
                let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in kernel.iter().enumerate() {
                    for (j, &kv) in row.iter().enumerate() {
                        let yy = cy as isize + i as isize - half;
                        let xx = cx as isize + j as isize - half;
                        let (va, vb) = if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            (0.0, 0.0) // zero padding
                        } else {
                            (a.get(yy as usize, xx as usize, c), b.get(yy as usize, xx as usize, c))
                        };
                        mx += kv * va;
                        my += kv * vb;
                        mxx += kv * va * va;
                        myy += kv * vb * vb;
                        mxy += kv * va * vb;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let vxy = mxy - mx * my;
                let val = ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Rank-2 check helper used by tests: smallest/largest singular value ratio.
pub fn singular_value_ratio(m: &Matrix3<f64>) -> f64 {
    let s = m.svd(false, false).singular_values;
    s.min() / s.max()
}

/// Random scene for gradient checks: gaussians sit in front of an
/// identity-pose camera, opacities stay moderate so the alpha clamp and the
/// transmittance cutoff keep away from the finite-difference probe points.
pub fn gradcheck_scene(n: usize, channels: usize, seed: u64) -> Scene {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let mut sh = vec![0.0; channels * SH_COEFFS];
            for v in sh.iter_mut() {
                *v = rng.random_range(-0.6..0.6);
            }
            let mut rotation = nalgebra::Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if rotation.norm() < 0.2 {
                rotation = nalgebra::Vector4::new(1.0, 0.3, -0.2, 0.1);
            }
            LatentGaussian {
                position: Vector3::new(
                    rng.random_range(-0.55..0.55),
                    rng.random_range(-0.55..0.55),
                    rng.random_range(1.5..3.5),
                ),
                log_scale: Vector3::new(
                    rng.random_range(-2.2..-1.0),
                    rng.random_range(-2.2..-1.0),
                    rng.random_range(-2.2..-1.0),
                ),
                rotation,
                opacity_logit: rng.random_range(-2.0..0.5),
                sh,
            }
        })
        .collect();
    Scene {
        gaussians,
        channels,
        sh_degree: 3,
        norm: None,
    }
}

/// Camera at `center` looking at `target`, y-up convention, world-to-camera.
pub fn look_at_camera(
    id: &str,
    center: Vector3<f64>,
    target: Vector3<f64>,
    focal: f64,
    width: u32,
    height: u32,
) -> Camera {
    let forward = (target - center).normalize();
    let up = Vector3::new(0.0, 1.0, 0.0);
    let right = up.cross(&forward).normalize();
    let down = forward.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -rot * center;
    Camera::new(
        id,
        crate::geometry::CameraIntrinsics::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
        .expect("look-at intrinsics are valid"),
        crate::geometry::Pose::from_rt(rot, t).expect("look-at rotation is orthonormal"),
    )
}

/// Cameras on a tilted ring around the origin, all looking inward.
pub fn ring_cameras(count: usize, radius: f64, focal: f64, size: u32) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let angle = i as f64 / count as f64 * std::f64::consts::TAU;
            let height = 0.55 * radius * (angle * 2.0).sin() * 0.5 + 0.3;
            look_at_camera(
                &format!("view{i:02}"),
                Vector3::new(radius * angle.cos(), height, radius * angle.sin()),
                Vector3::zeros(),
                focal,
                size,
                size,
            )
        })
        .collect()
}

/// Forward-facing arc of cameras (LLFF-style): spread over `arc_degrees`
/// around the origin at the given radius, small height wobble, all looking
/// at the scene center.
pub fn arc_cameras(count: usize, radius: f64, arc_degrees: f64, focal: f64, size: u32) -> Vec<Camera> {
    let arc = arc_degrees.to_radians();
    (0..count)
        .map(|i| {
            let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            let angle = (frac - 0.5) * arc + std::f64::consts::FRAC_PI_2;
            let height = 0.25 * radius * ((frac - 0.5) * 5.0).sin();
            look_at_camera(
                &format!("view{i:02}"),
                Vector3::new(radius * angle.cos(), height, radius * angle.sin()),
                Vector3::zeros(),
                focal,
                size,
                size,
            )
        })
        .collect()
}

/// Random scene for synthesizing training data: gaussians spread around the
/// origin with smooth view dependence, sized to overlap at desk-scale
/// renders.
pub fn random_training_scene(n: usize, channels: usize, seed: u64) -> Scene {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|_| {
            let mut sh = vec![0.0; channels * SH_COEFFS];
            for c in 0..channels {
                sh[c * SH_COEFFS] = rng.random_range(-1.5..1.5);
                // Mild higher-order terms: view-dependent but smooth.
                for k in 1..SH_COEFFS {
                    sh[c * SH_COEFFS + k] = rng.random_range(-0.02..0.02);
                }
            }
            let mut rotation = nalgebra::Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if rotation.norm() < 0.2 {
                rotation = nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0);
            }
            LatentGaussian {
                position: Vector3::new(
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                ),
                log_scale: Vector3::new(
                    rng.random_range(-1.2..-0.4),
                    rng.random_range(-1.2..-0.4),
                    rng.random_range(-1.2..-0.4),
                ),
                rotation,
                opacity_logit: rng.random_range(0.0..2.5),
                sh,
            }
        })
        .collect();
    Scene {
        gaussians,
        channels,
        sh_degree: 3,
        norm: None,
    }
}
