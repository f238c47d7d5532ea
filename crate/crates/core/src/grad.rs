//! Analytic backward pass for [`crate::render::render`] with respect to
//! every Gaussian parameter, plus the finite-difference harness that checks
//! it.
//!
//! The backward replays the forward's saved per-pixel contributor lists, so
//! anything culled or past the early-termination cutoff gets an exactly zero
//! gradient, consistent with the forward. All math is f64; chains run through
//! sigmoid (opacity), exp (scale), quaternion normalization, the SH basis,
//! the local affine projection, and the transmittance product.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{LrfError, Result};
use crate::geometry::Camera;
use crate::latent::LatentImage;
use crate::render::{render_with_trace, RenderTrace, ALPHA_CLAMP, TILE_SIZE};
use crate::scene::{quat_to_rotation, Scene};
use crate::sh::{coeffs_for_degree, sh_basis_with_grad, SH_COEFFS};

/// Per-gaussian gradients for every pre-activation parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub position: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<Vector4<f64>>,
    pub opacity_logit: Vec<f64>,
    /// Channel-major C x 16 per gaussian, like [`crate::scene::LatentGaussian::sh`].
    pub sh: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros(scene: &Scene) -> Self {
        let n = scene.len();
        Self {
            position: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity_logit: vec![0.0; n],
            sh: vec![vec![0.0; scene.channels * SH_COEFFS]; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logit.iter().all(|x| x.is_finite())
            && self.sh.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Side information the training loop consumes: screen-space gradient norms
/// for densification and per-gaussian visibility.
#[derive(Debug, Clone)]
pub struct BackwardAux {
    /// `||dL/d(mean2d)||` per gaussian, pixel units.
    pub screen_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

struct BandAccum {
    dz: Vec<f64>,          // slots x channels
    dmean: Vec<Vector2<f64>>, // slots
    dinv_cov: Vec<Matrix2<f64>>, // slots, gradient w.r.t. the inverse 2D covariance
    dalpha0: Vec<f64>,     // slots
}

impl BandAccum {
    fn zeros(slots: usize, channels: usize) -> Self {
        Self {
            dz: vec![0.0; slots * channels],
            dmean: vec![Vector2::zeros(); slots],
            dinv_cov: vec![Matrix2::zeros(); slots],
            dalpha0: vec![0.0; slots],
        }
    }

    fn merge(&mut self, other: &BandAccum) {
        for (a, b) in self.dz.iter_mut().zip(&other.dz) {
            *a += b;
        }
        for (a, b) in self.dmean.iter_mut().zip(&other.dmean) {
            *a += b;
        }
        for (a, b) in self.dinv_cov.iter_mut().zip(&other.dinv_cov) {
            *a += b;
        }
        for (a, b) in self.dalpha0.iter_mut().zip(&other.dalpha0) {
            *a += b;
        }
    }
}

fn pixel_backward(
    trace: &RenderTrace,
    dl_dz: &LatentImage,
    y: usize,
    x: usize,
    acc: &mut BandAccum,
    t_stack: &mut Vec<f64>,
    suffix: &mut Vec<f64>,
) {
    let channels = trace.channels;
    let contributors = &trace.contributors[y * trace.width + x];
    if contributors.is_empty() {
        return;
    }
    let g = dl_dz.pixel(y, x);
    let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);

    // Forward transmittance prefix for each processed contributor.
    t_stack.clear();
    let mut t = 1.0;
    for &(_, alpha) in contributors {
        t_stack.push(t);
        t *= 1.0 - alpha;
    }

    // Reverse sweep with the suffix sum S = sum_{j>i} z_j alpha_j T_j.
    suffix.clear();
    suffix.resize(channels, 0.0);
    for i in (0..contributors.len()).rev() {
        let (slot, alpha) = contributors[i];
        let slot = slot as usize;
        let pg = &trace.projected[slot];
        let t_i = t_stack[i];
        let weight = alpha * t_i;

        // dL/dz_i and the two inner products needed for dL/dalpha_i.
        let mut g_dot_z = 0.0;
        let mut g_dot_suffix = 0.0;
        for c in 0..channels {
            acc.dz[slot * channels + c] += weight * g[c];
            g_dot_z += g[c] * pg.view_latent[c];
            g_dot_suffix += g[c] * suffix[c];
        }
        let dl_dalpha = t_i * g_dot_z - g_dot_suffix / (1.0 - alpha);
        for c in 0..channels {
            suffix[c] += weight * pg.view_latent[c];
        }

        // Hard clamp: no gradient through a saturated contributor.
        if alpha >= ALPHA_CLAMP {
            continue;
        }
        // alpha = alpha0 * G, G = exp(-0.5 d^T A d).
        let g_val = alpha / pg.opacity;
        acc.dalpha0[slot] += dl_dalpha * g_val;
        let dl_dpower = dl_dalpha * alpha; // dG/dP = G, dalpha/dG = alpha0
        let d = pixel - pg.mean2d;
        let ad = pg.inv_cov2d * d;
        // P = -0.5 d^T A d: dP/dd = -A d, d = pixel - mean2d.
        acc.dmean[slot] += dl_dpower * ad;
        // dP/dA = -0.5 d d^T.
        acc.dinv_cov[slot] += -0.5 * dl_dpower * d * d.transpose();
    }
}

/// Partial derivatives of the rotation matrix w.r.t. the unit quaternion
/// components (w, x, y, z).
fn rotation_jacobian(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Backward from a saved forward trace. Returns parameter gradients plus the
/// densification statistics.
pub fn render_backward_traced(
    scene: &Scene,
    trace: &RenderTrace,
    dl_dz: &LatentImage,
) -> Result<(ParamGrads, BackwardAux)> {
    if dl_dz.height() != trace.height
        || dl_dz.width() != trace.width
        || dl_dz.channels() != trace.channels
    {
        return Err(LrfError::ShapeMismatch {
            context: "render_backward gradient image".into(),
            expected: format!("{}x{}x{}", trace.height, trace.width, trace.channels),
            actual: dl_dz.shape_str(),
        });
    }
    let channels = trace.channels;
    let slots = trace.projected.len();

    // Tile-band parallel pixel sweep; per-band accumulators are merged in
    // band order so the reduction order never depends on the thread count.
    let bands: Vec<BandAccum> = (0..trace.height.div_ceil(TILE_SIZE))
        .into_par_iter()
        .map(|band| {
            let mut acc = BandAccum::zeros(slots, channels);
            let mut t_stack = Vec::new();
            let mut suffix = Vec::new();
            let y0 = band * TILE_SIZE;
            let y1 = (y0 + TILE_SIZE).min(trace.height);
            for y in y0..y1 {
                for x in 0..trace.width {
                    pixel_backward(trace, dl_dz, y, x, &mut acc, &mut t_stack, &mut suffix);
                }
            }
            acc
        })
        .collect();
    let mut acc = BandAccum::zeros(slots, channels);
    for band in &bands {
        acc.merge(band);
    }

    let mut grads = ParamGrads::zeros(scene);
    let mut aux = BackwardAux {
        screen_grad_norm: vec![0.0; scene.len()],
        visible: vec![false; scene.len()],
    };
    let cam = &trace.camera;
    let rot_w = cam.pose.rotation();
    let k = &cam.intrinsics;
    let active = coeffs_for_degree(trace.degree);

    for slot in 0..slots {
        let pg = &trace.projected[slot];
        let src = pg.source;
        let g3d = &scene.gaussians[src];
        aux.visible[src] = true;

        // --- SH coefficients and the view-direction chain back to position.
        let (basis, basis_grad) = sh_basis_with_grad(&pg.view_dir);
        let dz = &acc.dz[slot * channels..(slot + 1) * channels];
        let mut ddir = Vector3::zeros();
        {
            let sh_grad = &mut grads.sh[src];
            for c in 0..channels {
                if dz[c] == 0.0 {
                    continue;
                }
                for kk in 0..active {
                    sh_grad[c * SH_COEFFS + kk] += dz[c] * basis[kk];
                    let coeff = g3d.sh[c * SH_COEFFS + kk];
                    ddir += dz[c]
                        * coeff
                        * Vector3::new(basis_grad[kk][0], basis_grad[kk][1], basis_grad[kk][2]);
                }
            }
        }
        // dir = (mu - center)/|mu - center|.
        let dir_jac = (Matrix3::identity() - pg.view_dir * pg.view_dir.transpose()) / pg.view_dist;
        let mut dposition = dir_jac * ddir;

        // --- Opacity logit through the sigmoid.
        let a0 = pg.opacity;
        grads.opacity_logit[src] += acc.dalpha0[slot] * a0 * (1.0 - a0);

        // --- 2D covariance: A = Sigma'^-1, dSigma' = -A dA A; the additive
        // dilation passes gradients through unchanged.
        let dcov2d: Matrix2<f64> = -pg.inv_cov2d * acc.dinv_cov[slot] * pg.inv_cov2d;

        // Sigma' = T Sigma3 T^T with T = J R_w.
        let p = pg.cam_point;
        let iz = 1.0 / p.z;
        let j = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * p.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * p.y * iz * iz,
        );
        let t_mat = j * rot_w;
        let sigma3 = crate::scene::covariance3d(&g3d.log_scale, &g3d.rotation)?;
        let dt_mat = 2.0 * dcov2d * t_mat * sigma3;
        let dsigma3 = t_mat.transpose() * dcov2d * t_mat;
        let dj = dt_mat * rot_w.transpose();

        // J entries depend on the camera-space point.
        let mut dcam = Vector3::zeros();
        dcam.x += dj[(0, 2)] * (-k.fx * iz * iz);
        dcam.y += dj[(1, 2)] * (-k.fy * iz * iz);
        dcam.z += dj[(0, 0)] * (-k.fx * iz * iz)
            + dj[(1, 1)] * (-k.fy * iz * iz)
            + dj[(0, 2)] * (2.0 * k.fx * p.x * iz * iz * iz)
            + dj[(1, 2)] * (2.0 * k.fy * p.y * iz * iz * iz);

        // --- Projected mean: its Jacobian w.r.t. the camera-space point is
        // exactly J.
        let dmean = acc.dmean[slot];
        dcam += j.transpose() * dmean;
        dposition += rot_w.transpose() * dcam;
        grads.position[src] += dposition;
        aux.screen_grad_norm[src] += dmean.norm();

        // --- Sigma3 = M M^T with M = R S.
        let qn = g3d.rotation.norm();
        let q_hat = g3d.rotation / qn;
        let r = quat_to_rotation(&g3d.rotation)?;
        let s = g3d.log_scale.map(f64::exp);
        let m = r * Matrix3::from_diagonal(&s);
        let dm = 2.0 * dsigma3 * m;
        // Scales: dL/ds_k = (R^T dM)_kk, then chain through exp.
        let rt_dm = r.transpose() * dm;
        for axis in 0..3 {
            grads.log_scale[src][axis] += rt_dm[(axis, axis)] * s[axis];
        }
        // Rotation: dL/dR = dM S, then through the quaternion and its
        // normalization.
        let dr = dm * Matrix3::from_diagonal(&s);
        let jr = rotation_jacobian(&q_hat);
        let mut dq_hat = Vector4::zeros();
        for i in 0..4 {
            dq_hat[i] = (jr[i].component_mul(&dr)).sum();
        }
        let dq = (Matrix4::identity() - q_hat * q_hat.transpose()) / qn * dq_hat;
        grads.rotation[src] += dq;
    }

    debug_assert!(grads.is_finite());
    Ok((grads, aux))
}

/// Exact gradients of `sum(dL_dZ . render(scene))` for every pre-activation
/// parameter. Runs the forward internally to capture the compositing trace.
pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    dl_dz: &LatentImage,
) -> Result<ParamGrads> {
    let (_, trace) = render_with_trace(scene, cam, out_size, scene.sh_degree)?;
    Ok(render_backward_traced(scene, &trace, dl_dz)?.0)
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Scalar parameters per gaussian: 3 position + 3 log-scale + 4 rotation +
/// 1 opacity + C*16 SH.
pub fn params_per_gaussian(channels: usize) -> usize {
    11 + channels * SH_COEFFS
}

/// Human-readable name for a flat per-gaussian parameter index.
pub fn param_name(idx: usize) -> String {
    match idx {
        0..=2 => format!("position[{idx}]"),
        3..=5 => format!("log_scale[{}]", idx - 3),
        6..=9 => format!("rotation[{}]", idx - 6),
        10 => "opacity_logit".into(),
        _ => {
            let k = idx - 11;
            format!("sh[c{} k{}]", k / SH_COEFFS, k % SH_COEFFS)
        }
    }
}

fn get_param(scene: &Scene, gaussian: usize, idx: usize) -> f64 {
    let g = &scene.gaussians[gaussian];
    match idx {
        0..=2 => g.position[idx],
        3..=5 => g.log_scale[idx - 3],
        6..=9 => g.rotation[idx - 6],
        10 => g.opacity_logit,
        _ => g.sh[idx - 11],
    }
}

fn set_param(scene: &mut Scene, gaussian: usize, idx: usize, value: f64) {
    let g = &mut scene.gaussians[gaussian];
    match idx {
        0..=2 => g.position[idx] = value,
        3..=5 => g.log_scale[idx - 3] = value,
        6..=9 => g.rotation[idx - 6] = value,
        10 => g.opacity_logit = value,
        _ => g.sh[idx - 11] = value,
    }
}

fn grad_entry(grads: &ParamGrads, gaussian: usize, idx: usize) -> f64 {
    match idx {
        0..=2 => grads.position[gaussian][idx],
        3..=5 => grads.log_scale[gaussian][idx - 3],
        6..=9 => grads.rotation[gaussian][idx - 6],
        10 => grads.opacity_logit[gaussian],
        _ => grads.sh[gaussian][idx - 11],
    }
}

/// Central finite differences `(f(p + h) - f(p - h)) / 2h` over every scalar
/// parameter of the scene.
pub fn finite_diff_grad<F>(loss_fn: F, scene: &Scene, h: f64) -> ParamGrads
where
    F: Fn(&Scene) -> f64,
{
    let mut grads = ParamGrads::zeros(scene);
    let per = params_per_gaussian(scene.channels);
    let mut work = scene.clone();
    for gi in 0..scene.len() {
        for pi in 0..per {
            let base = get_param(scene, gi, pi);
            set_param(&mut work, gi, pi, base + h);
            let plus = loss_fn(&work);
            set_param(&mut work, gi, pi, base - h);
            let minus = loss_fn(&work);
            set_param(&mut work, gi, pi, base);
            let fd = (plus - minus) / (2.0 * h);
            match pi {
                0..=2 => grads.position[gi][pi] = fd,
                3..=5 => grads.log_scale[gi][pi - 3] = fd,
                6..=9 => grads.rotation[gi][pi - 6] = fd,
                10 => grads.opacity_logit[gi] = fd,
                _ => grads.sh[gi][pi - 11] = fd,
            }
        }
    }
    grads
}

/// One offending parameter in a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckWorst {
    pub gaussian: usize,
    pub param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub pass: bool,
    pub params_checked: usize,
    pub worst: GradCheckWorst,
}

/// Compare [`render_backward`] against central differences on the scalar
/// loss `sum(dl_dz . render(scene))`. A parameter passes when
/// `|a - f| <= max(abs_tol, rel_tol * max(|a|, |f|))`.
pub fn gradient_check(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    dl_dz: &LatentImage,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport> {
    let analytic = render_backward(scene, cam, out_size, dl_dz)?;
    let loss_fn = |s: &Scene| {
        let img = crate::render::render(s, cam, out_size).expect("render in finite differences");
        img.data()
            .iter()
            .zip(dl_dz.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let numeric = finite_diff_grad(loss_fn, scene, h);

    let per = params_per_gaussian(scene.channels);
    let mut worst = GradCheckWorst {
        gaussian: 0,
        param: "none".into(),
        analytic: 0.0,
        numeric: 0.0,
        rel_err: 0.0,
    };
    let mut pass = true;
    for gi in 0..scene.len() {
        for pi in 0..per {
            let a = grad_entry(&analytic, gi, pi);
            let f = grad_entry(&numeric, gi, pi);
            let abs_err = (a - f).abs();
            let scale = a.abs().max(f.abs());
            let rel = abs_err / scale.max(1e-300);
            if abs_err > abs_tol && rel > worst.rel_err {
                worst = GradCheckWorst {
                    gaussian: gi,
                    param: param_name(pi),
                    analytic: a,
                    numeric: f,
                    rel_err: rel,
                };
            }
            if abs_err > abs_tol.max(rel_tol * scale) {
                pass = false;
            }
        }
    }
    Ok(GradCheckReport {
        pass,
        params_checked: scene.len() * per,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use crate::render::render;
    use approx::assert_relative_eq;
    use crate::oracle::gradcheck_scene;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn camera(w: u32, h: u32) -> Camera {
        Camera::new(
            "cam",
            CameraIntrinsics::new(20.0, 20.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
            Pose::identity(),
        )
    }

    fn random_grad_image(h: usize, w: usize, c: usize, seed: u64) -> LatentImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        LatentImage::from_data(h, w, c, data).unwrap()
    }

    #[test]
    fn zero_gradient_image_gives_zero_grads() {
        let scene = gradcheck_scene(5, 4, 1);
        let cam = camera(16, 16);
        let dl = LatentImage::zeros(16, 16, 4);
        let grads = render_backward(&scene, &cam, (16, 16), &dl).unwrap();
        assert_eq!(grads, ParamGrads::zeros(&scene));
    }

    #[test]
    fn dc_coefficient_gradient_closed_form() {
        // Loss = sum of channel k of the rendered latent; the gradient of a
        // single gaussian's DC coefficient is Y00 * sum_pixels alpha(pixel)
        // (with one contributor, weights are just alpha).
        let mut scene = gradcheck_scene(1, 2, 2);
        scene.sh_degree = 0;
        let cam = camera(16, 16);
        let mut dl = LatentImage::zeros(16, 16, 2);
        for y in 0..16 {
            for x in 0..16 {
                dl.set(y, x, 0, 1.0);
            }
        }
        let grads = render_backward(&scene, &cam, (16, 16), &dl).unwrap();

        let (img, trace) = render_with_trace(&scene, &cam, (16, 16), 0).unwrap();
        let alpha_sum: f64 = trace
            .contributors
            .iter()
            .flat_map(|list| list.iter().map(|&(_, a)| a))
            .sum();
        assert!(alpha_sum > 0.0, "gaussian must be visible");
        assert_relative_eq!(
            grads.sh[0][0],
            crate::sh::SH_C0 * alpha_sum,
            epsilon = 1e-12,
            max_relative = 1e-12
        );
        // Channel 1 sees no gradient.
        assert_eq!(grads.sh[0][SH_COEFFS], 0.0);
        assert!(img.is_finite());
    }

    #[test]
    fn matches_finite_differences_random_scene() {
        let scene = gradcheck_scene(10, 4, 3);
        let cam = camera(16, 16);
        let dl = random_grad_image(16, 16, 4, 4);
        let report = gradient_check(&scene, &cam, (16, 16), &dl, 1e-4, 1e-4, 1e-7).unwrap();
        assert!(
            report.pass,
            "worst: gaussian {} {} analytic {} numeric {} rel {}",
            report.worst.gaussian,
            report.worst.param,
            report.worst.analytic,
            report.worst.numeric,
            report.worst.rel_err
        );
    }

    #[test]
    fn backward_is_linear_in_loss_gradient() {
        let scene = gradcheck_scene(6, 3, 5);
        let cam = camera(16, 16);
        let g1 = random_grad_image(16, 16, 3, 6);
        let g2 = random_grad_image(16, 16, 3, 7);
        let mut sum = g1.clone();
        for (a, b) in sum.data_mut().iter_mut().zip(g2.data()) {
            *a += b;
        }
        let b1 = render_backward(&scene, &cam, (16, 16), &g1).unwrap();
        let b2 = render_backward(&scene, &cam, (16, 16), &g2).unwrap();
        let bs = render_backward(&scene, &cam, (16, 16), &sum).unwrap();
        for i in 0..scene.len() {
            assert_relative_eq!(
                bs.position[i],
                b1.position[i] + b2.position[i],
                epsilon = 1e-10,
                max_relative = 1e-9
            );
            assert_relative_eq!(
                bs.opacity_logit[i],
                b1.opacity_logit[i] + b2.opacity_logit[i],
                epsilon = 1e-10,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn culled_gaussians_get_zero_gradients() {
        let mut scene = gradcheck_scene(4, 2, 8);
        // Push one gaussian behind the camera.
        scene.gaussians[2].position = Vector3::new(0.0, 0.0, -5.0);
        let cam = camera(16, 16);
        let dl = random_grad_image(16, 16, 2, 9);
        let grads = render_backward(&scene, &cam, (16, 16), &dl).unwrap();
        assert_eq!(grads.position[2], Vector3::zeros());
        assert_eq!(grads.opacity_logit[2], 0.0);
        assert!(grads.sh[2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inactive_sh_degrees_get_zero_gradients() {
        let scene = gradcheck_scene(3, 2, 10);
        let cam = camera(16, 16);
        let dl = random_grad_image(16, 16, 2, 11);
        let (_, trace) = render_with_trace(&scene, &cam, (16, 16), 1).unwrap();
        let (grads, _) = render_backward_traced(&scene, &trace, &dl).unwrap();
        for g in &grads.sh {
            for c in 0..2 {
                for k in coeffs_for_degree(1)..SH_COEFFS {
                    assert_eq!(g[c * SH_COEFFS + k], 0.0);
                }
            }
        }
    }

    #[test]
    fn finite_diff_quadratic_and_convergence() {
        // Quadratic pseudo-loss on scene parameters: gradient theta.
        let scene = gradcheck_scene(2, 2, 12);
        let loss = |s: &Scene| {
            let mut acc = 0.0;
            for g in &s.gaussians {
                acc += 0.5 * g.position.norm_squared();
                acc += 0.5 * g.opacity_logit * g.opacity_logit;
            }
            acc
        };
        let fd = finite_diff_grad(loss, &scene, 1e-5);
        for (g, fdg) in scene.gaussians.iter().zip(&fd.position) {
            assert_relative_eq!(*fdg, g.position, epsilon = 1e-8);
        }

        // Halving h shrinks the error about 4x on a smooth cubic loss.
        let cubic = |s: &Scene| s.gaussians[0].position[0].powi(3);
        let exact = 3.0 * scene.gaussians[0].position[0].powi(2);
        let e1 = (finite_diff_grad(cubic, &scene, 1e-2).position[0][0] - exact).abs();
        let e2 = (finite_diff_grad(cubic, &scene, 5e-3).position[0][0] - exact).abs();
        let ratio = e1 / e2;
        assert!(
            (2.5..6.0).contains(&ratio),
            "second-order convergence expected, ratio {ratio}"
        );
    }

    #[test]
    fn finite_diff_cross_checks_single_pixel_loss() {
        // Loss = one rendered pixel value; position gradient must match.
        let scene = gradcheck_scene(3, 2, 13);
        let cam = camera(16, 16);
        let mut dl = LatentImage::zeros(16, 16, 2);
        dl.set(8, 8, 0, 1.0);
        let analytic = render_backward(&scene, &cam, (16, 16), &dl).unwrap();
        let loss = |s: &Scene| render(s, &cam, (16, 16)).unwrap().get(8, 8, 0);
        let fd = finite_diff_grad(loss, &scene, 1e-4);
        for i in 0..scene.len() {
            for axis in 0..3 {
                let a = analytic.position[i][axis];
                let f = fd.position[i][axis];
                assert!(
                    (a - f).abs() <= 1e-7f64.max(1e-4 * a.abs().max(f.abs())),
                    "gaussian {i} axis {axis}: {a} vs {f}"
                );
            }
        }
    }
}
