//! Loss evaluators over supplied latent maps and posterior parameters:
//! APE-weighted correspondence consistency, the KL regularizer toward a
//! pre-trained posterior, plain VAE terms, and their weighted combination.
//!
//! These are evaluators only; no encoder is trained here.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::error::{LrfError, Result};
use crate::geometry::CorrespondencePair;
use crate::latent::{check_same_shape, LatentImage};

/// Weight on the KL-to-prior term inside the VAE objective.
pub const KL_WEIGHT: f64 = 1e-6;

/// Diagonal-Gaussian posterior maps.
#[derive(Debug, Clone)]
pub struct PosteriorParams {
    pub mean: LatentImage,
    pub log_var: LatentImage,
}

impl PosteriorParams {
    pub fn new(mean: LatentImage, log_var: LatentImage) -> Result<Self> {
        check_same_shape("posterior params", &mean, &log_var)?;
        if !log_var.is_finite() {
            return Err(LrfError::NumericalFailure(
                "posterior log-variance contains non-finite values".into(),
            ));
        }
        Ok(Self { mean, log_var })
    }
}

/// Matched pixel pairs with their APE weights and the image-to-latent
/// downsampling factor.
#[derive(Debug, Clone)]
pub struct CorrespondenceBatch {
    pub pairs: Vec<(CorrespondencePair, f64)>,
    pub downsample: u32,
}

impl CorrespondenceBatch {
    pub fn new(pairs: Vec<(CorrespondencePair, f64)>, downsample: u32) -> Result<Self> {
        if downsample < 1 {
            return Err(LrfError::InvalidValue("downsample factor must be >= 1".into()));
        }
        Ok(Self { pairs, downsample })
    }
}

struct BilinearTaps {
    // (y, x, weight) for up to four corners.
    taps: [(usize, usize, f64); 4],
}

/// Bilinear taps for a full-resolution pixel sampled on the latent grid at
/// `pixel / f - 0.5` (latent pixel centers), clamped to the edges.
fn bilinear_taps(z: &LatentImage, pixel: &Vector2<f64>, f: u32) -> Result<BilinearTaps> {
    let (h, w) = (z.height(), z.width());
    let full_w = w as f64 * f as f64;
    let full_h = h as f64 * f as f64;
    if pixel.x < 0.0 || pixel.x >= full_w || pixel.y < 0.0 || pixel.y >= full_h {
        return Err(LrfError::PixelOutOfBounds {
            x: pixel.x,
            y: pixel.y,
            width: full_w as usize,
            height: full_h as usize,
        });
    }
    let x = (pixel.x / f as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (pixel.y / f as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    Ok(BilinearTaps {
        taps: [
            (y0, x0, (1.0 - fy) * (1.0 - fx)),
            (y0, x1, (1.0 - fy) * fx),
            (y1, x0, fy * (1.0 - fx)),
            (y1, x1, fy * fx),
        ],
    })
}

/// Bilinear sample of a latent map at a full-resolution pixel coordinate.
pub fn sample_latent(z: &LatentImage, pixel_full_res: &Vector2<f64>, f: u32) -> Result<Vec<f64>> {
    let taps = bilinear_taps(z, pixel_full_res, f)?;
    let mut out = vec![0.0; z.channels()];
    for (y, x, wgt) in taps.taps {
        for (o, v) in out.iter_mut().zip(z.pixel(y, x)) {
            *o += wgt * v;
        }
    }
    Ok(out)
}

/// Weighted L1 consistency across corresponding latent pixels,
/// `sum_pairs lambda * ||sample(Z_i, x_i) - sample(Z_j, x_j)||_1`,
/// plus gradients w.r.t. every latent map (bilinear-weight scatter).
pub fn corres_loss(
    latents: &BTreeMap<String, LatentImage>,
    batch: &CorrespondenceBatch,
) -> Result<(f64, BTreeMap<String, LatentImage>)> {
    let mut grads: BTreeMap<String, LatentImage> = latents
        .iter()
        .map(|(k, v)| (k.clone(), LatentImage::zeros(v.height(), v.width(), v.channels())))
        .collect();

    let get = |id: &str| {
        latents.get(id).ok_or_else(|| LrfError::MissingView { id: id.into() })
    };

    let mut loss = 0.0;
    for (pair, lambda) in &batch.pairs {
        let z_i = get(&pair.view_i)?;
        let z_j = get(&pair.view_j)?;
        if z_i.channels() != z_j.channels() {
            return Err(LrfError::ShapeMismatch {
                context: format!("latent channels of '{}' vs '{}'", pair.view_i, pair.view_j),
                expected: format!("{}", z_i.channels()),
                actual: format!("{}", z_j.channels()),
            });
        }
        let taps_i = bilinear_taps(z_i, &pair.x_i, batch.downsample)?;
        let taps_j = bilinear_taps(z_j, &pair.x_j, batch.downsample)?;
        let s_i = sample_latent(z_i, &pair.x_i, batch.downsample)?;
        let s_j = sample_latent(z_j, &pair.x_j, batch.downsample)?;

        for c in 0..s_i.len() {
            let diff = s_i[c] - s_j[c];
            loss += lambda * diff.abs();
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g = grads.get_mut(&pair.view_i).expect("created above");
            for (y, x, wgt) in taps_i.taps {
                g.pixel_mut(y, x)[c] += lambda * sign * wgt;
            }
            let g = grads.get_mut(&pair.view_j).expect("created above");
            for (y, x, wgt) in taps_j.taps {
                g.pixel_mut(y, x)[c] -= lambda * sign * wgt;
            }
        }
    }
    Ok((loss, grads))
}

fn kl_diag_entry(m1: f64, lv1: f64, m2: f64, lv2: f64) -> f64 {
    // KL(N(m1, e^lv1) || N(m2, e^lv2)) in closed form.
    0.5 * ((lv2 - lv1) + ((lv1 - lv2).exp()) + (m1 - m2) * (m1 - m2) / lv2.exp() - 1.0)
}

/// Closed-form KL between diagonal Gaussian posteriors, summed over channels
/// and averaged over pixels. Positive, minimized toward zero.
pub fn kl_regularizer(q: &PosteriorParams, q_original: &PosteriorParams) -> Result<f64> {
    check_same_shape("kl_regularizer", &q.mean, &q_original.mean)?;
    let n = q.mean.data().len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += kl_diag_entry(
            q.mean.data()[i],
            q.log_var.data()[i],
            q_original.mean.data()[i],
            q_original.log_var.data()[i],
        );
    }
    Ok(acc / (q.mean.height() * q.mean.width()) as f64)
}

/// Plain VAE terms: L1 reconstruction (Laplace likelihood stand-in) and the
/// closed-form KL to the standard normal prior, channel-summed and
/// pixel-averaged like [`kl_regularizer`].
pub fn vae_terms(
    recon: &LatentImage,
    target: &LatentImage,
    q: &PosteriorParams,
) -> Result<(f64, f64)> {
    check_same_shape("vae_terms reconstruction", recon, target)?;
    let recon_loss = recon
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / recon.data().len() as f64;

    let mut kl = 0.0;
    for i in 0..q.mean.data().len() {
        let m = q.mean.data()[i];
        let lv = q.log_var.data()[i];
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    }
    let kl_prior = kl / (q.mean.height() * q.mean.width()) as f64;
    Ok((recon_loss, kl_prior))
}

/// The component losses entering the stage-I objective.
#[derive(Debug, Clone, Copy)]
pub struct Stage1Terms {
    pub recon: f64,
    pub kl_prior: f64,
    pub corres: f64,
    pub reg: f64,
}

/// `L = (recon + KL_WEIGHT * kl_prior) + lambda1 * corres + lambda2 * reg`.
pub fn stage1_objective(terms: &Stage1Terms, lambda1: f64, lambda2: f64) -> f64 {
    let l_vae = terms.recon + KL_WEIGHT * terms.kl_prior;
    l_vae + lambda1 * terms.corres + lambda2 * terms.reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{mc_kl_divergence, mc_kl_prior};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, c: usize, seed: u64, lo: f64, hi: f64) -> LatentImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect();
        LatentImage::from_data(h, w, c, data).unwrap()
    }

    fn pair(vi: &str, vj: &str, xi: (f64, f64), xj: (f64, f64)) -> CorrespondencePair {
        CorrespondencePair {
            view_i: vi.into(),
            view_j: vj.into(),
            x_i: Vector2::new(xi.0, xi.1),
            x_j: Vector2::new(xj.0, xj.1),
        }
    }

    #[test]
    fn sample_at_latent_center_is_exact() {
        let z = random_image(4, 4, 2, 1, -1.0, 1.0);
        // Latent pixel (2, 1) center in full resolution: ((1+0.5)*8, (2+0.5)*8).
        let s = sample_latent(&z, &Vector2::new(12.0, 20.0), 8).unwrap();
        assert_relative_eq!(s[0], z.get(2, 1, 0), epsilon = 1e-15);
        assert_relative_eq!(s[1], z.get(2, 1, 1), epsilon = 1e-15);
    }

    #[test]
    fn sample_constant_map() {
        let mut z = LatentImage::zeros(3, 3, 1);
        for v in z.data_mut() {
            *v = 0.75;
        }
        for p in [(0.0, 0.0), (11.9, 3.0), (23.0, 23.0), (5.5, 17.2)] {
            let s = sample_latent(&z, &Vector2::new(p.0, p.1), 8).unwrap();
            assert_relative_eq!(s[0], 0.75, epsilon = 1e-15);
        }
    }

    #[test]
    fn sample_midpoint_averages() {
        let mut z = LatentImage::zeros(1, 2, 1);
        z.set(0, 0, 0, 1.0);
        z.set(0, 1, 0, 3.0);
        // Midpoint between latent centers 0 and 1 on x: x = 0.5 in latent
        // coords -> full res (0.5 + 0.5) * 8 = 8.
        let s = sample_latent(&z, &Vector2::new(8.0, 4.0), 8).unwrap();
        assert_relative_eq!(s[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn sample_out_of_bounds_errors() {
        let z = LatentImage::zeros(4, 4, 1);
        assert!(matches!(
            sample_latent(&z, &Vector2::new(32.0, 0.0), 8),
            Err(LrfError::PixelOutOfBounds { .. })
        ));
        assert!(matches!(
            sample_latent(&z, &Vector2::new(-0.1, 0.0), 8),
            Err(LrfError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn corres_loss_zero_on_identical_maps() {
        let z = random_image(4, 4, 4, 2, -1.0, 1.0);
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), z.clone());
        latents.insert("b".to_string(), z);
        let batch = CorrespondenceBatch::new(
            vec![
                (pair("a", "b", (3.0, 5.0), (3.0, 5.0)), 0.5),
                (pair("b", "a", (17.0, 9.0), (17.0, 9.0)), 0.5),
            ],
            8,
        )
        .unwrap();
        let (loss, _) = corres_loss(&latents, &batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn corres_loss_single_pair_hand_value() {
        // Sampled difference (0.5, -0.5, 0, 0) with weight 1 -> loss 1.0.
        let mut za = LatentImage::zeros(2, 2, 4);
        let mut zb = LatentImage::zeros(2, 2, 4);
        for y in 0..2 {
            for x in 0..2 {
                za.pixel_mut(y, x).copy_from_slice(&[0.5, 0.0, 0.2, 0.3]);
                zb.pixel_mut(y, x).copy_from_slice(&[0.0, 0.5, 0.2, 0.3]);
            }
        }
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), za);
        latents.insert("b".to_string(), zb);
        let batch =
            CorrespondenceBatch::new(vec![(pair("a", "b", (4.0, 4.0), (12.0, 4.0)), 1.0)], 8)
                .unwrap();
        let (loss, _) = corres_loss(&latents, &batch).unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn corres_loss_missing_view_errors() {
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), LatentImage::zeros(2, 2, 1));
        let batch =
            CorrespondenceBatch::new(vec![(pair("a", "zz", (1.0, 1.0), (1.0, 1.0)), 1.0)], 8)
                .unwrap();
        let err = corres_loss(&latents, &batch).unwrap_err();
        assert!(matches!(err, LrfError::MissingView { .. }));
    }

    #[test]
    fn corres_loss_offset_invariance() {
        // Adding the same constant to every latent map leaves the loss alone.
        let mut rng = StdRng::seed_from_u64(3);
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), random_image(6, 6, 3, 4, -1.0, 1.0));
        latents.insert("b".to_string(), random_image(6, 6, 3, 5, -1.0, 1.0));
        let pairs: Vec<_> = (0..7)
            .map(|_| {
                (
                    pair(
                        "a",
                        "b",
                        (rng.random_range(0.0..47.9), rng.random_range(0.0..47.9)),
                        (rng.random_range(0.0..47.9), rng.random_range(0.0..47.9)),
                    ),
                    1.0 / 7.0,
                )
            })
            .collect();
        let batch = CorrespondenceBatch::new(pairs, 8).unwrap();
        let (base, _) = corres_loss(&latents, &batch).unwrap();
        let mut shifted = latents.clone();
        for z in shifted.values_mut() {
            for v in z.data_mut() {
                *v += 3.7;
            }
        }
        let (offset, _) = corres_loss(&shifted, &batch).unwrap();
        assert_relative_eq!(base, offset, epsilon = 1e-12);
        assert!(base >= 0.0);
    }

    #[test]
    fn corres_loss_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut latents = BTreeMap::new();
        latents.insert("a".to_string(), random_image(8, 8, 4, 7, -1.0, 1.0));
        latents.insert("b".to_string(), random_image(8, 8, 4, 8, -1.0, 1.0));
        // Sub-pixel positions away from lattice points and borders keep the
        // L1 kinks and clamps out of the difference quotient.
        let pairs: Vec<_> = (0..5)
            .map(|i| {
                (
                    pair(
                        "a",
                        "b",
                        (rng.random_range(8.0..55.0) + 0.3, rng.random_range(8.0..55.0) + 0.3),
                        (rng.random_range(8.0..55.0) + 0.7, rng.random_range(8.0..55.0) + 0.7),
                    ),
                    0.1 + 0.05 * i as f64,
                )
            })
            .collect();
        let batch = CorrespondenceBatch::new(pairs, 8).unwrap();
        let (_, grads) = corres_loss(&latents, &batch).unwrap();

        let h = 1e-6;
        for key in ["a", "b"] {
            let n = latents[key].data().len();
            for idx in (0..n).step_by(7) {
                let mut lp = latents.clone();
                lp.get_mut(key).unwrap().data_mut()[idx] += h;
                let mut lm = latents.clone();
                lm.get_mut(key).unwrap().data_mut()[idx] -= h;
                let fd = (corres_loss(&lp, &batch).unwrap().0 - corres_loss(&lm, &batch).unwrap().0)
                    / (2.0 * h);
                let g = grads[key].data()[idx];
                let denom = fd.abs().max(g.abs()).max(1e-9);
                assert!(
                    (fd - g).abs() / denom < 1e-6 || (fd - g).abs() < 1e-9,
                    "{key}[{idx}]: analytic {g} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn kl_identical_posteriors_zero() {
        let q = PosteriorParams::new(
            random_image(4, 4, 2, 9, -1.0, 1.0),
            random_image(4, 4, 2, 10, -0.5, 0.5),
        )
        .unwrap();
        let v = kl_regularizer(&q, &q.clone()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn kl_single_entry_half_mean_shift() {
        // Unit variances, means differ by 1 in one channel of one pixel:
        // contribution 0.5 / (H * W).
        let (h, w, c) = (4, 5, 3);
        let mut mean_q = LatentImage::zeros(h, w, c);
        mean_q.set(2, 3, 1, 1.0);
        let q = PosteriorParams::new(mean_q, LatentImage::zeros(h, w, c)).unwrap();
        let p = PosteriorParams::new(LatentImage::zeros(h, w, c), LatentImage::zeros(h, w, c))
            .unwrap();
        let v = kl_regularizer(&q, &p).unwrap();
        assert_relative_eq!(v, 0.5 / (h * w) as f64, epsilon = 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let q = PosteriorParams::new(
            random_image(3, 3, 2, 11, -1.0, 1.0),
            random_image(3, 3, 2, 12, -0.8, 0.8),
        )
        .unwrap();
        let p = PosteriorParams::new(
            random_image(3, 3, 2, 13, -1.0, 1.0),
            random_image(3, 3, 2, 14, -0.8, 0.8),
        )
        .unwrap();
        let closed = kl_regularizer(&q, &p).unwrap();
        let mc = mc_kl_divergence(&q, &p, 1_000_000, 99);
        assert!(
            (closed - mc).abs() <= 0.01 * closed.abs().max(0.01),
            "closed {closed} vs mc {mc}"
        );
        assert!(closed >= 0.0);
    }

    #[test]
    fn vae_terms_zero_cases() {
        let img = random_image(4, 4, 3, 15, 0.0, 1.0);
        let q = PosteriorParams::new(LatentImage::zeros(4, 4, 3), LatentImage::zeros(4, 4, 3))
            .unwrap();
        let (recon, kl) = vae_terms(&img, &img.clone(), &q).unwrap();
        assert_eq!(recon, 0.0);
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn vae_kl_prior_unit_mean() {
        let (h, w, c) = (2, 2, 1);
        let mut mean = LatentImage::zeros(h, w, c);
        mean.set(0, 0, 0, 1.0);
        let q = PosteriorParams::new(mean, LatentImage::zeros(h, w, c)).unwrap();
        let target = LatentImage::zeros(h, w, c);
        let (_, kl) = vae_terms(&target, &target.clone(), &q).unwrap();
        assert_relative_eq!(kl, 0.5 / (h * w) as f64, epsilon = 1e-15);
    }

    #[test]
    fn vae_kl_prior_matches_monte_carlo() {
        let q = PosteriorParams::new(
            random_image(3, 3, 2, 16, -1.0, 1.0),
            random_image(3, 3, 2, 17, -0.8, 0.8),
        )
        .unwrap();
        let target = LatentImage::zeros(3, 3, 2);
        let (_, kl) = vae_terms(&target, &target.clone(), &q).unwrap();
        let mc = mc_kl_prior(&q, 1_000_000, 123);
        assert!((kl - mc).abs() <= 0.01 * kl.max(0.01), "closed {kl} vs mc {mc}");
    }

    #[test]
    fn stage1_objective_composition() {
        let terms = Stage1Terms {
            recon: 0.4,
            kl_prior: 100.0,
            corres: 0.25,
            reg: 2.0,
        };
        // lambda1 = lambda2 = 0 reduces to the VAE term.
        assert_relative_eq!(
            stage1_objective(&terms, 0.0, 0.0),
            0.4 + KL_WEIGHT * 100.0,
            epsilon = 1e-15
        );
        // Doubling lambda1 doubles the correspondence contribution exactly.
        let base = stage1_objective(&terms, 0.5, 1e-6);
        let double = stage1_objective(&terms, 1.0, 1e-6);
        assert_relative_eq!(double - base, 0.5 * 0.25, epsilon = 1e-15);

        let zero = Stage1Terms {
            recon: 0.0,
            kl_prior: 0.0,
            corres: 0.0,
            reg: 0.0,
        };
        assert_eq!(stage1_objective(&zero, 0.5, 1e-6), 0.0);
    }
}
