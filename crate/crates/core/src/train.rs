//! Stage-II optimization: photometric latent loss, Adam updates,
//! densification/pruning, and latent normalization.
//!
//! Hyperparameter defaults follow public splatting practice; everything is
//! overridable through [`TrainConfig`] / `train.json`.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LrfError, Result};
use crate::geometry::Camera;
use crate::grad::{render_backward_traced, BackwardAux, ParamGrads};
use crate::latent::{check_same_shape, LatentImage};
use crate::render::render_with_trace;
use crate::scene::{init_scene, sigmoid, NormRecord, Scene};
use crate::sh::SH_COEFFS;
use crate::ssim::{ssim_with_grad, SsimPadding};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Dynamic range of max-abs-normalized latents, the peak entering the D-SSIM
/// term of the photometric loss.
pub const NORMALIZED_PEAK: f64 = 2.0;

/// Training hyperparameters. JSON field names match these identifiers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Position learning rate, decayed log-linearly from init to final.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh: f64,
    /// Higher-order (non-DC) SH coefficients train at `lr_sh / this`.
    pub lr_sh_rest_divisor: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Weight of the D-SSIM term in the photometric loss.
    pub lambda_dssim: f64,
    pub densify_interval: usize,
    pub densify_start: usize,
    /// Densification stops at this fraction of the run.
    pub densify_stop_fraction: f64,
    /// Mean screen-space gradient norm (half-image units) above which a
    /// gaussian is cloned or split.
    pub densify_grad_threshold: f64,
    /// Gaussians with activated opacity below this are pruned.
    pub prune_opacity: f64,
    /// Opacity reset cadence; like the reference pipeline it only fires
    /// inside the densification window.
    pub opacity_reset_interval: usize,
    /// The active SH degree grows by one every this many iterations.
    pub sh_degree_interval: usize,
    /// Random init points drawn inside the camera bounding sphere when the
    /// dataset supplies none.
    pub init_points: usize,
    /// Densification stops adding gaussians beyond this count.
    pub max_gaussians: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh: 2.5e-3,
            lr_sh_rest_divisor: 20.0,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lambda_dssim: 0.2,
            densify_interval: 100,
            densify_start: 500,
            densify_stop_fraction: 0.6,
            densify_grad_threshold: 2e-4,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            sh_degree_interval: 1000,
            init_points: 1000,
            max_gaussians: 200_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_sh", self.lr_sh),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(LrfError::InvalidValue(format!("{name} must be positive, got {v}")));
            }
        }
        if self.densify_interval == 0 || self.opacity_reset_interval == 0 || self.sh_degree_interval == 0 {
            return Err(LrfError::InvalidValue("intervals must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(LrfError::InvalidValue(format!(
                "lambda_dssim {} outside [0, 1]",
                self.lambda_dssim
            )));
        }
        Ok(())
    }

    fn densify_stop(&self) -> usize {
        (self.iterations as f64 * self.densify_stop_fraction) as usize
    }

    /// Log-linear position learning-rate schedule. Position rates are
    /// expressed per unit of scene extent and multiplied by the camera
    /// bounding-sphere radius, like the reference splatting pipelines.
    pub fn lr_position(&self, iteration: usize, scene_extent: f64) -> f64 {
        let scale = scene_extent.max(1e-9);
        if self.iterations <= 1 {
            return self.lr_position_init * scale;
        }
        let tau = (iteration as f64 / self.iterations as f64).clamp(0.0, 1.0);
        scale * (self.lr_position_init.ln() * (1.0 - tau) + self.lr_position_final.ln() * tau).exp()
    }
}

/// One posed view with its target latent map.
#[derive(Debug, Clone)]
pub struct DatasetView {
    pub camera: Camera,
    pub latent: LatentImage,
}

/// Train/test views plus the shared normalization statistics.
#[derive(Debug, Clone)]
pub struct LatentDataset {
    pub train: Vec<DatasetView>,
    pub test: Vec<DatasetView>,
    pub norm: Option<NormRecord>,
}

impl LatentDataset {
    pub fn new(train: Vec<DatasetView>, test: Vec<DatasetView>) -> Result<Self> {
        let ds = Self {
            train,
            test,
            norm: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.train.first().or(self.test.first()) else {
            return Err(LrfError::EmptyDataset);
        };
        let shape = (first.latent.height(), first.latent.width(), first.latent.channels());
        for v in self.views() {
            if (v.latent.height(), v.latent.width(), v.latent.channels()) != shape {
                return Err(LrfError::ShapeMismatch {
                    context: format!("latent of view '{}'", v.camera.id),
                    expected: format!("{}x{}x{}", shape.0, shape.1, shape.2),
                    actual: v.latent.shape_str(),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for v in self.views() {
            if !seen.insert(v.camera.id.clone()) {
                return Err(LrfError::InvalidValue(format!(
                    "view '{}' appears in more than one split",
                    v.camera.id
                )));
            }
        }
        Ok(())
    }

    pub fn views(&self) -> impl Iterator<Item = &DatasetView> {
        self.train.iter().chain(self.test.iter())
    }

    /// (height, width, channels) shared by every latent.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let v = self.train.first().or(self.test.first()).expect("validated nonempty");
        (v.latent.height(), v.latent.width(), v.latent.channels())
    }

    /// Radius of the bounding sphere of all camera centers around their
    /// centroid; the scene-extent scale densification heuristics use.
    pub fn camera_extent(&self) -> f64 {
        let centers: Vec<Vector3<f64>> = self.views().map(|v| v.camera.center()).collect();
        let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
        centers
            .iter()
            .map(|c| (c - centroid).norm())
            .fold(0.0, f64::max)
    }
}

const NORM_SCALE_FLOOR: f64 = 1e-6;

/// Per-channel affine normalization `z' = (z - mean_c) / scale_c` with the
/// max-abs-deviation scale computed over every input view. Returns the
/// normalized dataset with its [`NormRecord`] attached.
pub fn latent_normalize(dataset: &LatentDataset) -> Result<(LatentDataset, NormRecord)> {
    dataset.validate()?;
    let (_, _, channels) = dataset.latent_shape();
    let mut mean = vec![0.0; channels];
    let mut count = 0usize;
    for v in dataset.views() {
        for px in v.latent.data().chunks(channels) {
            for (c, x) in px.iter().enumerate() {
                mean[c] += x;
            }
        }
        count += v.latent.height() * v.latent.width();
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut scale = vec![0.0f64; channels];
    for v in dataset.views() {
        for px in v.latent.data().chunks(channels) {
            for (c, x) in px.iter().enumerate() {
                scale[c] = scale[c].max((x - mean[c]).abs());
            }
        }
    }
    for s in scale.iter_mut() {
        *s = f64::max(*s, NORM_SCALE_FLOOR);
    }

    let record = NormRecord { mean, scale };
    let apply = |v: &DatasetView| DatasetView {
        camera: v.camera.clone(),
        latent: {
            let inv: Vec<f64> = record.scale.iter().map(|s| 1.0 / s).collect();
            let neg: Vec<f64> = record
                .mean
                .iter()
                .zip(&record.scale)
                .map(|(m, s)| -m / s)
                .collect();
            v.latent.affine_per_channel(&inv, &neg)
        },
    };
    let normalized = LatentDataset {
        train: dataset.train.iter().map(apply).collect(),
        test: dataset.test.iter().map(apply).collect(),
        norm: Some(record.clone()),
    };
    Ok((normalized, record))
}

/// Map a rendered (normalized) latent back to the raw latent space.
pub fn denormalize_image(img: &LatentImage, record: &NormRecord) -> LatentImage {
    let mut out = img.affine_per_channel(&record.scale, &record.mean);
    out.alpha = img.alpha.clone();
    out
}

/// Apply the normalization `z' = (z - mean) / scale` to one image.
pub fn normalize_image(img: &LatentImage, record: &NormRecord) -> LatentImage {
    let inv: Vec<f64> = record.scale.iter().map(|s| 1.0 / s).collect();
    let neg: Vec<f64> = record.mean.iter().zip(&record.scale).map(|(m, s)| -m / s).collect();
    let mut out = img.affine_per_channel(&inv, &neg);
    out.alpha = img.alpha.clone();
    out
}

/// The photometric loss value, its components, and the gradient w.r.t. the
/// rendered image.
#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub grad: LatentImage,
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2` with SSIM on zero-padded
/// windows at the normalized peak.
pub fn photometric_loss(
    rendered: &LatentImage,
    target: &LatentImage,
    lambda_dssim: f64,
) -> Result<PhotometricLoss> {
    check_same_shape("photometric_loss", rendered, target)?;
    let n = rendered.data().len() as f64;
    let mut l1 = 0.0;
    let mut grad = LatentImage::zeros(rendered.height(), rendered.width(), rendered.channels());
    for (i, (a, b)) in rendered.data().iter().zip(target.data()).enumerate() {
        let diff = a - b;
        l1 += diff.abs();
        grad.data_mut()[i] = (1.0 - lambda_dssim) * diff.signum() / n;
    }
    if l1 == 0.0 {
        // signum(0) = 0 already, but make the zero case explicit.
        for v in grad.data_mut() {
            *v = 0.0;
        }
    }
    l1 /= n;

    let (ssim_val, dssim) = if lambda_dssim > 0.0 {
        let (value, ssim_grad) =
            ssim_with_grad(rendered, target, NORMALIZED_PEAK, SsimPadding::SameZero)?;
        for (g, sg) in grad.data_mut().iter_mut().zip(ssim_grad.data()) {
            *g += lambda_dssim * (-0.5) * sg;
        }
        (value, (1.0 - value) / 2.0)
    } else {
        (1.0, 0.0)
    };
    let _ = ssim_val;

    Ok(PhotometricLoss {
        total: (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim,
        l1,
        dssim,
        grad,
    })
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment buffers for one parameter group.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Keep rows of `width` scalars where `keep` is true.
    fn retain_rows(&mut self, keep: &[bool], width: usize) {
        let mut idx = 0;
        self.m.retain(|_| {
            let k = keep[idx / width];
            idx += 1;
            k
        });
        let mut idx = 0;
        self.v.retain(|_| {
            let k = keep[idx / width];
            idx += 1;
            k
        });
    }

    fn append_rows(&mut self, rows: usize, width: usize) {
        self.m.extend(std::iter::repeat_n(0.0, rows * width));
        self.v.extend(std::iter::repeat_n(0.0, rows * width));
    }
}

/// One Adam update for a single scalar; returns the step to subtract.
#[inline]
pub fn adam_update(m: &mut f64, v: &mut f64, grad: f64, c1: f64, c2: f64, lr: f64) -> f64 {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
}

/// Bias corrections (1 - beta^t) for iteration `t` (1-based).
#[inline]
pub fn adam_corrections(t: u64) -> (f64, f64) {
    (
        1.0 - ADAM_BETA1.powi(t as i32),
        1.0 - ADAM_BETA2.powi(t as i32),
    )
}

/// Standard Adam over a flat parameter slice.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, t: u64, lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    let (c1, c2) = adam_corrections(t);
    for i in 0..params.len() {
        params[i] -= adam_update(&mut state.m[i], &mut state.v[i], grads[i], c1, c2, lr);
    }
}

/// Per-group optimizer state for a scene.
#[derive(Debug, Clone)]
pub struct SceneOptimizer {
    pub position: AdamState,
    pub log_scale: AdamState,
    pub rotation: AdamState,
    pub opacity: AdamState,
    pub sh: AdamState,
    channels: usize,
}

impl SceneOptimizer {
    pub fn new(scene: &Scene) -> Self {
        let n = scene.len();
        Self {
            position: AdamState::new(n * 3),
            log_scale: AdamState::new(n * 3),
            rotation: AdamState::new(n * 4),
            opacity: AdamState::new(n),
            sh: AdamState::new(n * scene.channels * SH_COEFFS),
            channels: scene.channels,
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        self.position.retain_rows(keep, 3);
        self.log_scale.retain_rows(keep, 3);
        self.rotation.retain_rows(keep, 4);
        self.opacity.retain_rows(keep, 1);
        self.sh.retain_rows(keep, self.channels * SH_COEFFS);
    }

    fn append(&mut self, rows: usize) {
        self.position.append_rows(rows, 3);
        self.log_scale.append_rows(rows, 3);
        self.rotation.append_rows(rows, 4);
        self.opacity.append_rows(rows, 1);
        self.sh.append_rows(rows, self.channels * SH_COEFFS);
    }

    /// Apply one optimization step to every parameter group.
    pub fn step(
        &mut self,
        scene: &mut Scene,
        grads: &ParamGrads,
        t: u64,
        lr_position: f64,
        config: &TrainConfig,
    ) {
        let (c1, c2) = adam_corrections(t);
        let ch = self.channels * SH_COEFFS;
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            for a in 0..3 {
                g.position[a] -= adam_update(
                    &mut self.position.m[i * 3 + a],
                    &mut self.position.v[i * 3 + a],
                    grads.position[i][a],
                    c1,
                    c2,
                    lr_position,
                );
                g.log_scale[a] -= adam_update(
                    &mut self.log_scale.m[i * 3 + a],
                    &mut self.log_scale.v[i * 3 + a],
                    grads.log_scale[i][a],
                    c1,
                    c2,
                    config.lr_scale,
                );
            }
            for a in 0..4 {
                g.rotation[a] -= adam_update(
                    &mut self.rotation.m[i * 4 + a],
                    &mut self.rotation.v[i * 4 + a],
                    grads.rotation[i][a],
                    c1,
                    c2,
                    config.lr_rotation,
                );
            }
            g.opacity_logit -= adam_update(
                &mut self.opacity.m[i],
                &mut self.opacity.v[i],
                grads.opacity_logit[i],
                c1,
                c2,
                config.lr_opacity,
            );
            for k in 0..ch {
                let lr = if k % SH_COEFFS == 0 {
                    config.lr_sh
                } else {
                    config.lr_sh / config.lr_sh_rest_divisor
                };
                g.sh[k] -= adam_update(
                    &mut self.sh.m[i * ch + k],
                    &mut self.sh.v[i * ch + k],
                    grads.sh[i][k],
                    c1,
                    c2,
                    lr,
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Densification
// ---------------------------------------------------------------------------

/// Running screen-gradient statistics between densification rounds.
#[derive(Debug, Clone)]
pub struct DensifyAccum {
    pub grad_norm_sum: Vec<f64>,
    pub seen: Vec<u32>,
    pub position_grad_sum: Vec<Vector3<f64>>,
}

impl DensifyAccum {
    pub fn new(n: usize) -> Self {
        Self {
            grad_norm_sum: vec![0.0; n],
            seen: vec![0; n],
            position_grad_sum: vec![Vector3::zeros(); n],
        }
    }

    pub fn accumulate(&mut self, aux: &BackwardAux, grads: &ParamGrads) {
        for i in 0..self.seen.len() {
            if aux.visible[i] {
                self.grad_norm_sum[i] += aux.screen_grad_norm[i];
                self.seen[i] += 1;
                self.position_grad_sum[i] += grads.position[i];
            }
        }
    }
}

const SPLIT_SCALE_SHRINK: f64 = 1.6;
const CLONE_SIZE_FRACTION: f64 = 0.01;
const OPACITY_RESET_VALUE: f64 = 0.01;

/// Clone small / split large gaussians whose mean screen gradient exceeds
/// the threshold, then prune nearly transparent ones. Optimizer rows are
/// carried for survivors and zero-initialized for newcomers. Deterministic
/// under the caller's RNG.
pub fn densify_and_prune(
    scene: &mut Scene,
    opt: &mut SceneOptimizer,
    accum: &DensifyAccum,
    config: &TrainConfig,
    scene_extent: f64,
    rng: &mut ChaCha8Rng,
) -> (usize, usize, usize) {
    let n = scene.len();
    let mut keep = vec![true; n];
    let mut cloned = 0;
    let mut split = 0;

    if n < config.max_gaussians {
        for i in 0..n {
            if accum.seen[i] == 0 {
                continue;
            }
            let mean_grad = accum.grad_norm_sum[i] / accum.seen[i] as f64;
            if mean_grad <= config.densify_grad_threshold {
                continue;
            }
            let g = scene.gaussians[i].clone();
            let scales = g.scales();
            if scales.max() < CLONE_SIZE_FRACTION * scene_extent {
                // Clone: copy stepped one mean scale along the descent
                // direction of the accumulated position gradient.
                let mut child = g;
                let dir = accum.position_grad_sum[i];
                let norm = dir.norm();
                if norm > 0.0 {
                    child.position -= dir / norm * scales.mean();
                }
                scene.gaussians.push(child);
                cloned += 1;
            } else {
                // Split: two children sampled inside the parent, scales
                // shrunk; the parent goes away.
                let rot = crate::scene::quat_to_rotation(&g.rotation).expect("validated rotation");
                for _ in 0..2 {
                    let sample = Vector3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    let offset = rot * sample.component_mul(&scales);
                    let mut child = g.clone();
                    child.position += offset;
                    child.log_scale = g.log_scale.map(|v| v - SPLIT_SCALE_SHRINK.ln());
                    scene.gaussians.push(child);
                }
                keep[i] = false;
                split += 1;
            }
        }
    }

    let added = scene.len() - n;
    opt.append(added);
    keep.resize(scene.len(), true);

    // Prune by activated opacity (split parents are already marked).
    for (i, g) in scene.gaussians.iter().enumerate() {
        if g.opacity() < config.prune_opacity {
            keep[i] = false;
        }
    }
    let pruned = keep.iter().filter(|k| !**k).count();
    let mut it = keep.iter();
    scene.gaussians.retain(|_| *it.next().unwrap());
    opt.retain(&keep);
    (cloned, split, pruned)
}

/// Clamp every opacity to at most [`OPACITY_RESET_VALUE`] and clear the
/// opacity optimizer state.
pub fn reset_opacity(scene: &mut Scene, opt: &mut SceneOptimizer) {
    for g in &mut scene.gaussians {
        let a = g.opacity().min(OPACITY_RESET_VALUE);
        g.opacity_logit = crate::scene::logit(a);
    }
    for v in opt.opacity.m.iter_mut() {
        *v = 0.0;
    }
    for v in opt.opacity.v.iter_mut() {
        *v = 0.0;
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub l1: f64,
    pub dssim: f64,
    pub gaussians: usize,
}

pub fn write_metrics_csv(path: impl AsRef<std::path::Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("iteration,loss,l1,dssim,gaussians\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iteration, r.loss, r.l1, r.dssim, r.gaussians
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Result of [`train_lrf`].
#[derive(Debug)]
pub struct TrainResult {
    pub scene: Scene,
    pub metrics: Vec<MetricsRow>,
}

/// Random initialization points inside the camera bounding sphere.
fn random_init_points(dataset: &LatentDataset, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let centers: Vec<Vector3<f64>> = dataset.views().map(|v| v.camera.center()).collect();
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = dataset.camera_extent().max(1e-3);
    (0..count)
        .map(|_| loop {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if p.norm_squared() <= 1.0 {
                break centroid + p * radius;
            }
        })
        .collect()
}

/// Optimize a fresh scene against the dataset's training views. The dataset
/// must carry a normalization record (see [`latent_normalize`]); initial
/// positions come from `init_points`, or are sampled inside the camera
/// bounding sphere when `None`.
pub fn train_lrf(
    dataset: &LatentDataset,
    init_points: Option<&[Vector3<f64>]>,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    dataset.validate()?;
    if dataset.norm.is_none() {
        return Err(LrfError::InvalidValue(
            "dataset must be normalized before training (latent_normalize)".into(),
        ));
    }
    if dataset.train.is_empty() {
        return Err(LrfError::EmptyDataset);
    }
    let (height, width, channels) = dataset.latent_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let owned_points;
    let points: &[Vector3<f64>] = match init_points {
        Some(p) => p,
        None => {
            owned_points = random_init_points(dataset, config.init_points, &mut rng);
            &owned_points
        }
    };
    let mut scene = init_scene(points, channels, config.seed)?;
    scene.norm = dataset.norm.clone();
    let mut opt = SceneOptimizer::new(&scene);
    let mut accum = DensifyAccum::new(scene.len());
    let extent = dataset.camera_extent();

    // Round-robin over a seed-shuffled view order.
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    order.shuffle(&mut rng);

    let densify_stop = config.densify_stop();
    let mut metrics = Vec::with_capacity(config.iterations);

    for t in 1..=config.iterations {
        let degree = (t / config.sh_degree_interval).min(scene.sh_degree);
        let view = &dataset.train[order[(t - 1) % order.len()]];
        let (rendered, trace) = render_with_trace(&scene, &view.camera, (height, width), degree)?;
        let loss = photometric_loss(&rendered, &view.latent, config.lambda_dssim)?;
        let (grads, aux) = render_backward_traced(&scene, &trace, &loss.grad)?;
        opt.step(&mut scene, &grads, t as u64, config.lr_position(t, extent), config);
        accum.accumulate(&aux, &grads);

        let in_densify_window = t >= config.densify_start && t < densify_stop;
        if in_densify_window && t % config.densify_interval == 0 {
            if std::env::var("LRF_DENSIFY_DEBUG").is_ok() {
                let mut means: Vec<f64> = (0..scene.len())
                    .filter(|&i| accum.seen[i] > 0)
                    .map(|i| accum.grad_norm_sum[i] / accum.seen[i] as f64)
                    .collect();
                means.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if !means.is_empty() {
                    let pct = |q: f64| means[((means.len() - 1) as f64 * q) as usize];
                    eprintln!(
                        "densify@{t}: n={} p10={:.2e} p50={:.2e} p90={:.2e} p99={:.2e} thr={:.2e}",
                        means.len(), pct(0.1), pct(0.5), pct(0.9), pct(0.99),
                        config.densify_grad_threshold
                    );
                }
            }
            densify_and_prune(&mut scene, &mut opt, &accum, config, extent, &mut rng);
            accum = DensifyAccum::new(scene.len());
        }
        if t < densify_stop && t % config.opacity_reset_interval == 0 {
            reset_opacity(&mut scene, &mut opt);
        }

        metrics.push(MetricsRow {
            iteration: t,
            loss: loss.total,
            l1: loss.l1,
            dssim: loss.dssim,
            gaussians: scene.len(),
        });
        scene.validate()?;
    }

    Ok(TrainResult { scene, metrics })
}

// ---------------------------------------------------------------------------
// Dataset directory loading
// ---------------------------------------------------------------------------

/// Load `cameras.txt`, `latents/{id}.lrf`, `split.txt`, and the optional
/// `points.txt` from a data directory. Camera intrinsics are rescaled to
/// the latent resolution at ingestion.
pub fn load_dataset(dir: impl AsRef<std::path::Path>) -> Result<(LatentDataset, Option<Vec<Vector3<f64>>>)> {
    let dir = dir.as_ref();
    let cameras = crate::geometry::read_cameras_txt(dir.join("cameras.txt"))?;
    let by_id: std::collections::HashMap<&str, &Camera> =
        cameras.iter().map(|c| (c.id.as_str(), c)).collect();

    let split_path = dir.join("split.txt");
    let split_text = std::fs::read_to_string(&split_path)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (idx, raw) in split_text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(tag), None) = (it.next(), it.next(), it.next()) else {
            return Err(LrfError::Parse {
                path: split_path.display().to_string(),
                message: format!("line {}: expected 'view_id train|test'", idx + 1),
            });
        };
        let cam = by_id.get(id).ok_or_else(|| LrfError::Parse {
            path: split_path.display().to_string(),
            message: format!("line {}: view '{id}' not present in cameras.txt", idx + 1),
        })?;
        let latent = crate::latent::read_lrf(dir.join("latents").join(format!("{id}.lrf")))?;
        let camera = Camera::new(
            cam.id.clone(),
            cam.intrinsics.scaled_to(latent.width() as u32, latent.height() as u32),
            cam.pose.clone(),
        );
        let view = DatasetView { camera, latent };
        match tag {
            "train" => train.push(view),
            "test" | "novel" => test.push(view),
            other => {
                return Err(LrfError::Parse {
                    path: split_path.display().to_string(),
                    message: format!("line {}: unknown split tag '{other}'", idx + 1),
                })
            }
        }
    }
    let dataset = LatentDataset::new(train, test)?;

    let points_path = dir.join("points.txt");
    let points = if points_path.exists() {
        let text = std::fs::read_to_string(&points_path)?;
        let mut pts = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| LrfError::Parse {
                        path: points_path.display().to_string(),
                        message: format!("line {}: bad number '{t}'", idx + 1),
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(LrfError::Parse {
                    path: points_path.display().to_string(),
                    message: format!("line {}: expected 3 coordinates", idx + 1),
                });
            }
            pts.push(Vector3::new(nums[0], nums[1], nums[2]));
        }
        Some(pts)
    } else {
        None
    };
    Ok((dataset, points))
}

/// Convenience used by tests and the opacity-reset path.
pub fn activated_opacity(logit: f64) -> f64 {
    sigmoid(logit)
}
