//! Latent Gaussian primitives and scene storage.
//!
//! Parameters are kept pre-activation so the optimizer works in an
//! unconstrained space: log-scales, opacity logits, and quaternions that are
//! normalized on use.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LrfError, Result};
use crate::sh::SH_COEFFS;

/// One latent Gaussian. `sh` is channel-major: coefficient k of channel c
/// lives at `sh[c * 16 + k]`. The quaternion is stored (w, x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LatentGaussian {
    /// Activated per-axis scales, `exp(log_scale)`.
    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    /// Activated opacity in (0, 1).
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn channels(&self) -> usize {
        self.sh.len() / SH_COEFFS
    }
}

/// Quaternion (w, x, y, z) to rotation matrix. The quaternion is normalized
/// here; a (near-)zero quaternion is an error.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let norm = q.norm();
    if norm < 1e-12 {
        return Err(LrfError::InvalidRotation { norm });
    }
    let q = q / norm;
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// 3D covariance `Sigma = R S S^T R^T` with `S = diag(exp(log_scale))`.
pub fn covariance3d(log_scale: &Vector3<f64>, rotation: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let r = quat_to_rotation(rotation)?;
    let s2 = log_scale.map(|v| (2.0 * v).exp());
    Ok(r * Matrix3::from_diagonal(&s2) * r.transpose())
}

/// Per-channel affine normalization applied to the training latents,
/// retained so renders can be mapped back to the raw latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct NormRecord {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// An ordered collection of latent Gaussians plus the channel/SH metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<LatentGaussian>,
    pub channels: usize,
    pub sh_degree: usize,
    pub norm: Option<NormRecord>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Check every stored invariant: coefficient counts, finite values,
    /// nonzero quaternions, consistent normalization record.
    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > crate::sh::SH_MAX_DEGREE {
            return Err(LrfError::InvalidValue(format!(
                "sh_degree {} > {}",
                self.sh_degree,
                crate::sh::SH_MAX_DEGREE
            )));
        }
        if self.channels == 0 {
            return Err(LrfError::InvalidValue("scene channels must be positive".into()));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != self.channels * SH_COEFFS {
                return Err(LrfError::ShapeMismatch {
                    context: format!("gaussian {i} sh coefficients"),
                    expected: format!("{}", self.channels * SH_COEFFS),
                    actual: format!("{}", g.sh.len()),
                });
            }
            let finite = g.position.iter().all(|v| v.is_finite())
                && g.log_scale.iter().all(|v| v.is_finite())
                && g.rotation.iter().all(|v| v.is_finite())
                && g.opacity_logit.is_finite()
                && g.sh.iter().all(|v| v.is_finite());
            if !finite {
                return Err(LrfError::NumericalFailure(format!(
                    "gaussian {i} has non-finite parameters"
                )));
            }
            if g.rotation.norm() < 1e-12 {
                return Err(LrfError::InvalidRotation {
                    norm: g.rotation.norm(),
                });
            }
        }
        if let Some(n) = &self.norm {
            if n.mean.len() != self.channels || n.scale.len() != self.channels {
                return Err(LrfError::ShapeMismatch {
                    context: "normalization record".into(),
                    expected: format!("{} channels", self.channels),
                    actual: format!("{}/{}", n.mean.len(), n.scale.len()),
                });
            }
        }
        Ok(())
    }
}

/// Fallback isotropic scale when a point has no usable neighbors.
const LONE_POINT_SCALE: f64 = 0.01;

/// Initial opacity before training.
const INIT_OPACITY: f64 = 0.1;

/// Initialize one Gaussian per point: isotropic scale from the mean distance
/// to the 3 nearest neighbors, identity rotation, opacity 0.1, and a random
/// DC coefficient per channel (N(0, 0.5/Y00)); higher orders start at zero.
/// Deterministic for a fixed seed.
pub fn init_scene(points: &[Vector3<f64>], channels: usize, seed: u64) -> Result<Scene> {
    if points.is_empty() {
        return Err(LrfError::EmptyInitialization);
    }
    if channels == 0 {
        return Err(LrfError::InvalidValue("channels must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dc_sigma = 0.5 / crate::sh::SH_C0;
    let normal = Normal::new(0.0, dc_sigma).expect("positive sigma");

    let mut gaussians = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        // Mean distance to the 3 nearest neighbors; O(n^2) is fine at the
        // point counts this runs on.
        let mut d2: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| (p - q).norm_squared())
            .collect();
        d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = d2.len().min(3);
        let mean_dist = if k == 0 {
            0.0
        } else {
            d2[..k].iter().map(|v| v.sqrt()).sum::<f64>() / k as f64
        };
        let scale = if mean_dist > 0.0 { mean_dist } else { LONE_POINT_SCALE };

        let mut sh = vec![0.0; channels * SH_COEFFS];
        for c in 0..channels {
            sh[c * SH_COEFFS] = normal.sample(&mut rng);
        }
        gaussians.push(LatentGaussian {
            position: *p,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: logit(INIT_OPACITY),
            sh,
        });
    }
    let scene = Scene {
        gaussians,
        channels,
        sh_degree: crate::sh::SH_MAX_DEGREE,
        norm: None,
    };
    scene.validate()?;
    Ok(scene)
}
