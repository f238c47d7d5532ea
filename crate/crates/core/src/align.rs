//! VAE-RF alignment at desk scale: fit a patch-linear decoder on
//! rendered-latent / ground-truth-image pairs drawn from both training and
//! novel views, with the two splits weighted separately.
//!
//! Each latent pixel maps independently to an 8x8x3 image patch, so the
//! objective, split weighting, and data pipeline are exercised with exactly
//! checkable gradients.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Deserialize;

use crate::error::{LrfError, Result};
use crate::latent::LatentImage;

/// Upsampling factor from latent to image resolution.
pub const PATCH: usize = 8;

/// Entries of one decoded patch: 8 x 8 x 3.
pub const PATCH_ENTRIES: usize = PATCH * PATCH * 3;

const DECODER_MAGIC: &[u8; 4] = b"LRFD";

/// Which split a paired sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Novel,
}

/// A rendered latent with its ground-truth image (values in [0, 1]); the
/// image is exactly 8x the latent in both dimensions.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub latent: LatentImage,
    pub image: LatentImage,
    pub split: SplitTag,
}

impl PairedSample {
    pub fn new(latent: LatentImage, image: LatentImage, split: SplitTag) -> Result<Self> {
        if image.height() != PATCH * latent.height()
            || image.width() != PATCH * latent.width()
            || image.channels() != 3
        {
            return Err(LrfError::ShapeMismatch {
                context: "paired sample".into(),
                expected: format!(
                    "{}x{}x3 image for {} latent",
                    PATCH * latent.height(),
                    PATCH * latent.width(),
                    latent.shape_str()
                ),
                actual: image.shape_str(),
            });
        }
        Ok(Self {
            latent,
            image,
            split,
        })
    }
}

/// Linear map from one C-vector latent pixel to an 8x8x3 patch plus bias.
/// `weight[entry * C + c]`, entry index `(py * 8 + px) * 3 + ch`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLinearDecoder {
    pub channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PatchLinearDecoder {
    pub fn zeros(channels: usize) -> Self {
        Self {
            channels,
            weight: vec![0.0; PATCH_ENTRIES * channels],
            bias: vec![0.0; PATCH_ENTRIES],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Decode a latent map; each latent pixel fills its own patch, values are
/// not clamped (clamping happens only on PNG export).
pub fn decode(d: &PatchLinearDecoder, z: &LatentImage) -> Result<LatentImage> {
    if z.channels() != d.channels {
        return Err(LrfError::ShapeMismatch {
            context: "decode".into(),
            expected: format!("{} channels", d.channels),
            actual: format!("{}", z.channels()),
        });
    }
    let c = d.channels;
    let mut out = LatentImage::zeros(z.height() * PATCH, z.width() * PATCH, 3);
    for ly in 0..z.height() {
        for lx in 0..z.width() {
            let zpx = z.pixel(ly, lx);
            for py in 0..PATCH {
                for px in 0..PATCH {
                    for ch in 0..3 {
                        let entry = (py * PATCH + px) * 3 + ch;
                        let mut v = d.bias[entry];
                        let row = &d.weight[entry * c..(entry + 1) * c];
                        for (w, zc) in row.iter().zip(zpx) {
                            v += w * zc;
                        }
                        out.set(ly * PATCH + py, lx * PATCH + px, ch, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`alignment_loss`] w.r.t. decoder parameters.
#[derive(Debug, Clone)]
pub struct DecoderGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `L = lambda_train * meanL1(train) + lambda_novel * meanL1(novel)` where
/// each split's term is the mean over its samples of the per-sample mean
/// absolute error; an empty split contributes zero.
pub fn alignment_loss(
    d: &PatchLinearDecoder,
    samples: &[PairedSample],
    lambda_train: f64,
    lambda_novel: f64,
) -> Result<(f64, DecoderGrads)> {
    let mut grads = DecoderGrads {
        weight: vec![0.0; d.weight.len()],
        bias: vec![0.0; d.bias.len()],
    };
    let n_train = samples.iter().filter(|s| s.split == SplitTag::Train).count();
    let n_novel = samples.len() - n_train;

    let mut loss = 0.0;
    for s in samples {
        let (lambda, n_split) = match s.split {
            SplitTag::Train => (lambda_train, n_train),
            SplitTag::Novel => (lambda_novel, n_novel),
        };
        if lambda == 0.0 {
            continue;
        }
        let decoded = decode(d, &s.latent)?;
        let entries = decoded.data().len() as f64;
        let scale = lambda / (n_split as f64 * entries);
        let mut sample_abs = 0.0;
        for ly in 0..s.latent.height() {
            for lx in 0..s.latent.width() {
                let zpx = s.latent.pixel(ly, lx);
                for py in 0..PATCH {
                    for px in 0..PATCH {
                        for ch in 0..3 {
                            let y = ly * PATCH + py;
                            let x = lx * PATCH + px;
                            let diff = decoded.get(y, x, ch) - s.image.get(y, x, ch);
                            sample_abs += diff.abs();
                            let sign = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            if sign != 0.0 {
                                let entry = (py * PATCH + px) * 3 + ch;
                                let g = scale * sign;
                                grads.bias[entry] += g;
                                let row =
                                    &mut grads.weight[entry * d.channels..(entry + 1) * d.channels];
                                for (w, zc) in row.iter_mut().zip(zpx) {
                                    *w += g * zc;
                                }
                            }
                        }
                    }
                }
            }
        }
        loss += lambda * sample_abs / (n_split as f64 * entries);
    }
    Ok((loss, grads))
}

/// Configuration for [`fit_decoder`]. The seed is accepted for interface
/// stability; the solver is full-batch and already deterministic.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda_train: f64,
    pub lambda_novel: f64,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_train: 0.5,
            lambda_novel: 0.5,
            lr: 0.01,
            iterations: 2000,
            seed: 0,
        }
    }
}

/// Adam minimization of [`alignment_loss`] from a zero-initialized decoder.
/// The learning rate decays log-linearly to lr/100 over the run.
pub fn fit_decoder(samples: &[PairedSample], config: &FitConfig) -> Result<PatchLinearDecoder> {
    if samples.is_empty() {
        return Err(LrfError::EmptySampleList);
    }
    let channels = samples[0].latent.channels();
    for s in samples {
        if s.latent.channels() != channels {
            return Err(LrfError::ShapeMismatch {
                context: "fit_decoder samples".into(),
                expected: format!("{channels} channels"),
                actual: format!("{}", s.latent.channels()),
            });
        }
    }
    let mut d = PatchLinearDecoder::zeros(channels);
    let n = d.weight.len() + d.bias.len();
    let mut state = crate::train::AdamState::new(n);
    let mut params = vec![0.0; n];
    for t in 1..=config.iterations {
        let (_, grads) = alignment_loss(&d, samples, config.lambda_train, config.lambda_novel)?;
        let mut g = grads.weight;
        g.extend_from_slice(&grads.bias);
        let frac = (t - 1) as f64 / config.iterations.max(1) as f64;
        let lr = config.lr * (0.01f64).powf(frac);
        crate::train::adam_step(&mut params, &g, &mut state, t as u64, lr);
        let split = d.weight.len();
        d.weight.copy_from_slice(&params[..split]);
        d.bias.copy_from_slice(&params[split..]);
    }
    if !d.is_finite() {
        return Err(LrfError::NumericalFailure("decoder parameters diverged".into()));
    }
    Ok(d)
}

/// Serialize: magic `LRFD`, u32 channel count, 192*C little-endian f32
/// weights (entry-major), then 192 f32 biases.
pub fn save_decoder(path: impl AsRef<Path>, d: &PatchLinearDecoder) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DECODER_MAGIC)?;
    w.write_u32::<LittleEndian>(d.channels as u32)?;
    for v in &d.weight {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    for v in &d.bias {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

pub fn load_decoder(path: impl AsRef<Path>) -> Result<PatchLinearDecoder> {
    let path = path.as_ref();
    let perr = |message: String| LrfError::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DECODER_MAGIC {
        return Err(perr(format!("bad magic {magic:?}, expected LRFD")));
    }
    let channels = r.read_u32::<LittleEndian>()? as usize;
    if channels == 0 || channels > 4096 {
        return Err(perr(format!("implausible channel count {channels}")));
    }
    let mut d = PatchLinearDecoder::zeros(channels);
    for v in d.weight.iter_mut() {
        *v = r.read_f32::<LittleEndian>()? as f64;
    }
    for v in d.bias.iter_mut() {
        *v = r.read_f32::<LittleEndian>()? as f64;
    }
    let mut one = [0u8; 1];
    if r.read(&mut one)? != 0 {
        return Err(perr("trailing data after decoder parameters".into()));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn random_latent(h: usize, w: usize, c: usize, seed: u64) -> LatentImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        LatentImage::from_data(h, w, c, data).unwrap()
    }

    #[test]
    fn decode_bias_only() {
        let mut d = PatchLinearDecoder::zeros(2);
        for b in d.bias.iter_mut() {
            *b = 0.5;
        }
        let z = random_latent(2, 3, 2, 1);
        let out = decode(&d, &z).unwrap();
        assert_eq!(out.height(), 16);
        assert_eq!(out.width(), 24);
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn decode_identity_map_is_nearest_upsample() {
        // Weight placing channel c into every patch entry of color c turns
        // decode into 8x nearest-neighbor upsampling.
        let mut d = PatchLinearDecoder::zeros(3);
        for py in 0..PATCH {
            for px in 0..PATCH {
                for ch in 0..3 {
                    let entry = (py * PATCH + px) * 3 + ch;
                    d.weight[entry * 3 + ch] = 1.0;
                }
            }
        }
        let z = random_latent(3, 2, 3, 2);
        let out = decode(&d, &z).unwrap();
        for y in 0..out.height() {
            for x in 0..out.width() {
                for ch in 0..3 {
                    assert_relative_eq!(
                        out.get(y, x, ch),
                        z.get(y / PATCH, x / PATCH, ch),
                        epsilon = 1e-15
                    );
                }
            }
        }
    }

    #[test]
    fn decode_is_affine() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut d = PatchLinearDecoder::zeros(2);
        for v in d.weight.iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        for v in d.bias.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        let z1 = random_latent(2, 2, 2, 4);
        let z2 = random_latent(2, 2, 2, 5);
        let (a, b) = (0.6, -0.9);
        let mut mixed = z1.clone();
        for (m, (u, v)) in mixed
            .data_mut()
            .iter_mut()
            .zip(z1.data().iter().zip(z2.data()))
        {
            *m = a * u + b * v;
        }
        let lhs = decode(&d, &mixed).unwrap();
        let d1 = decode(&d, &z1).unwrap();
        let d2 = decode(&d, &z2).unwrap();
        let bias_img = decode(&d, &LatentImage::zeros(2, 2, 2)).unwrap();
        for i in 0..lhs.data().len() {
            let expect =
                a * d1.data()[i] + b * d2.data()[i] - (a + b - 1.0) * bias_img.data()[i];
            assert_relative_eq!(lhs.data()[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn decode_channel_mismatch_errors() {
        let d = PatchLinearDecoder::zeros(4);
        let z = random_latent(2, 2, 3, 6);
        assert!(matches!(
            decode(&d, &z),
            Err(LrfError::ShapeMismatch { .. })
        ));
    }

    fn planted_pairs(
        d: &PatchLinearDecoder,
        n: usize,
        size: usize,
        noise: f64,
        seed: u64,
    ) -> Vec<PairedSample> {
        let mut rng = StdRng::seed_from_u64(seed);
        let gauss = Normal::new(0.0, noise).unwrap();
        (0..n)
            .map(|i| {
                let z = random_latent(size, size, d.channels, seed * 1000 + i as u64);
                let mut img = decode(d, &z).unwrap();
                if noise > 0.0 {
                    for v in img.data_mut() {
                        *v += gauss.sample(&mut rng);
                    }
                }
                let split = if i % 2 == 0 { SplitTag::Train } else { SplitTag::Novel };
                PairedSample::new(z, img, split).unwrap()
            })
            .collect()
    }

    #[test]
    fn alignment_loss_zero_when_exact() {
        let mut rng = StdRng::seed_from_u64(7);
        let mut d = PatchLinearDecoder::zeros(2);
        for v in d.weight.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        let samples = planted_pairs(&d, 3, 2, 0.0, 8);
        let (loss, grads) = alignment_loss(&d, &samples, 0.5, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weight.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn alignment_loss_split_weights() {
        // With both split L1 values equal to v, total = (lt + ln) * v; at
        // lt = ln = 0.5 that is exactly v.
        let d = PatchLinearDecoder::zeros(1);
        let z = LatentImage::zeros(1, 1, 1);
        let mut img = LatentImage::zeros(PATCH, PATCH, 3);
        for v in img.data_mut() {
            *v = 0.25;
        }
        let samples = vec![
            PairedSample::new(z.clone(), img.clone(), SplitTag::Train).unwrap(),
            PairedSample::new(z, img, SplitTag::Novel).unwrap(),
        ];
        let (loss, _) = alignment_loss(&d, &samples, 0.5, 0.5).unwrap();
        assert_relative_eq!(loss, 0.25, epsilon = 1e-15);

        // lambda homogeneity.
        let (loss2, _) = alignment_loss(&d, &samples, 1.0, 1.0).unwrap();
        assert_relative_eq!(loss2, 2.0 * loss, epsilon = 1e-15);
    }

    #[test]
    fn alignment_loss_zero_lambda_ignores_split() {
        let mut rng = StdRng::seed_from_u64(9);
        let mut d = PatchLinearDecoder::zeros(2);
        for v in d.weight.iter_mut() {
            *v = rng.random_range(-0.2..0.2);
        }
        let mut samples = planted_pairs(&d, 4, 2, 0.05, 10);
        let (base, _) = alignment_loss(&d, &samples, 0.0, 0.5).unwrap();
        // Perturb the train samples arbitrarily: bit-identical loss.
        for s in samples.iter_mut().filter(|s| s.split == SplitTag::Train) {
            for v in s.image.data_mut() {
                *v += 100.0;
            }
        }
        let (perturbed, _) = alignment_loss(&d, &samples, 0.0, 0.5).unwrap();
        assert_eq!(base.to_bits(), perturbed.to_bits());
    }

    #[test]
    fn alignment_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut d = PatchLinearDecoder::zeros(2);
        for v in d.weight.iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        for v in d.bias.iter_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
        // One 4x4 latent sample, C = 2.
        let gt = {
            let mut gt = PatchLinearDecoder::zeros(2);
            for v in gt.weight.iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
            gt
        };
        let samples = planted_pairs(&gt, 1, 4, 0.0, 12);
        let (_, grads) = alignment_loss(&d, &samples, 0.5, 0.5).unwrap();
        let h = 1e-6;
        for idx in (0..d.weight.len()).step_by(17) {
            let mut dp = d.clone();
            dp.weight[idx] += h;
            let mut dm = d.clone();
            dm.weight[idx] -= h;
            let fd = (alignment_loss(&dp, &samples, 0.5, 0.5).unwrap().0
                - alignment_loss(&dm, &samples, 0.5, 0.5).unwrap().0)
                / (2.0 * h);
            let g = grads.weight[idx];
            let denom = fd.abs().max(g.abs()).max(1e-9);
            assert!(
                (fd - g).abs() / denom < 1e-6 || (fd - g).abs() < 1e-9,
                "w[{idx}]: {g} vs fd {fd}"
            );
        }
        for idx in (0..d.bias.len()).step_by(13) {
            let mut dp = d.clone();
            dp.bias[idx] += h;
            let mut dm = d.clone();
            dm.bias[idx] -= h;
            let fd = (alignment_loss(&dp, &samples, 0.5, 0.5).unwrap().0
                - alignment_loss(&dm, &samples, 0.5, 0.5).unwrap().0)
                / (2.0 * h);
            let g = grads.bias[idx];
            let denom = fd.abs().max(g.abs()).max(1e-9);
            assert!(
                (fd - g).abs() / denom < 1e-6 || (fd - g).abs() < 1e-9,
                "b[{idx}]: {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn fit_recovers_planted_decoder() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut gt = PatchLinearDecoder::zeros(2);
        for v in gt.weight.iter_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        for v in gt.bias.iter_mut() {
            *v = rng.random_range(0.2..0.8);
        }
        let train = planted_pairs(&gt, 6, 3, 0.01, 14);
        let held_out = planted_pairs(&gt, 2, 3, 0.01, 15);
        let fitted = fit_decoder(
            &train,
            &FitConfig {
                iterations: 2000,
                ..FitConfig::default()
            },
        )
        .unwrap();

        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = fitted
            .weight
            .iter()
            .zip(&gt.weight)
            .map(|(a, b)| a - b)
            .collect();
        let rel = norm(&diff) / norm(&gt.weight);
        assert!(rel < 0.05, "weight recovery {rel} > 5%");

        let mut held_l1 = 0.0;
        for s in &held_out {
            let out = decode(&fitted, &s.latent).unwrap();
            held_l1 += out
                .data()
                .iter()
                .zip(s.image.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / out.data().len() as f64;
        }
        held_l1 /= held_out.len() as f64;
        assert!(held_l1 <= 0.02, "held-out L1 {held_l1} > 0.02");
    }

    #[test]
    fn fit_constant_sample_learns_bias() {
        // Zero latent: only the bias can explain the target.
        let z = LatentImage::zeros(2, 2, 3);
        let mut img = LatentImage::zeros(16, 16, 3);
        for v in img.data_mut() {
            *v = 0.7;
        }
        let samples = vec![PairedSample::new(z, img, SplitTag::Train).unwrap()];
        let d = fit_decoder(
            &samples,
            &FitConfig {
                iterations: 1500,
                ..FitConfig::default()
            },
        )
        .unwrap();
        for b in &d.bias {
            assert!((b - 0.7).abs() < 0.01, "bias {b} != 0.7");
        }
    }

    #[test]
    fn fit_zero_iterations_returns_zero_decoder() {
        let z = LatentImage::zeros(1, 1, 2);
        let img = LatentImage::zeros(PATCH, PATCH, 3);
        let samples = vec![PairedSample::new(z, img, SplitTag::Novel).unwrap()];
        let d = fit_decoder(
            &samples,
            &FitConfig {
                iterations: 0,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(d, PatchLinearDecoder::zeros(2));
    }

    #[test]
    fn fit_empty_errors() {
        assert!(matches!(
            fit_decoder(&[], &FitConfig::default()),
            Err(LrfError::EmptySampleList)
        ));
    }

    #[test]
    fn decoder_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decoder.bin");
        let mut rng = StdRng::seed_from_u64(16);
        let mut d = PatchLinearDecoder::zeros(4);
        for v in d.weight.iter_mut() {
            *v = rng.random_range(-1.0f32..1.0) as f64;
        }
        for v in d.bias.iter_mut() {
            *v = rng.random_range(-1.0f32..1.0) as f64;
        }
        save_decoder(&path, &d).unwrap();
        let back = load_decoder(&path).unwrap();
        assert_eq!(back, d);
    }
}
