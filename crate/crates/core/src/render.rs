//! Forward rendering: project latent Gaussians to screen space, depth-sort,
//! and alpha-composite C-channel latents per pixel.
//!
//! The compositing order is a single global depth sort (stable, ties broken
//! by source index), so output is bit-reproducible regardless of tiling or
//! thread count. Pixel (x, y) is sampled at (x + 0.5, y + 0.5).

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{LrfError, Result};
use crate::geometry::{Camera, NEAR_PLANE};
use crate::latent::LatentImage;
use crate::scene::{covariance3d, Scene};
use crate::sh::sh_eval;

/// Isotropic dilation added to both diagonal entries of the 2D covariance,
/// in pixel^2. Keeps the inverse well conditioned for sub-pixel splats.
pub const COV_DILATION: f64 = 0.3;

/// Per-contributor opacity ceiling.
pub const ALPHA_CLAMP: f64 = 0.99;

/// Compositing stops once accumulated transmittance drops below this.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;

/// Contributors are evaluated only within this many standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;

/// Square tile edge for the binned rasterization path.
pub const TILE_SIZE: usize = 16;

/// A Gaussian after projection into one view.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    /// Projected center, pixel coordinates.
    pub mean2d: Vector2<f64>,
    /// 2D covariance after dilation, pixel^2.
    pub cov2d: Matrix2<f64>,
    pub inv_cov2d: Matrix2<f64>,
    /// Camera-space depth.
    pub depth: f64,
    /// View-dependent latent from the SH evaluation, length C.
    pub view_latent: Vec<f64>,
    /// Activated base opacity.
    pub opacity: f64,
    /// Index into the source scene.
    pub source: usize,
    /// Half-extents of the 3-sigma bounding box, pixels.
    pub radius: Vector2<f64>,
    // Saved intermediates for the backward pass.
    pub cam_point: Vector3<f64>,
    pub view_dir: Vector3<f64>,
    pub view_dist: f64,
}

/// Projection outcome; culling is a normal result, not an error.
#[derive(Debug, Clone)]
pub enum Projection {
    Visible(Box<ProjectedGaussian>),
    Culled,
}

/// Camera rescaled so its sensor matches the raster target. Rendering the
/// same field of view at a different resolution is intrinsics scaling.
pub fn camera_at_resolution(cam: &Camera, width: usize, height: usize) -> Camera {
    if cam.intrinsics.width as usize == width && cam.intrinsics.height as usize == height {
        cam.clone()
    } else {
        Camera::new(
            cam.id.clone(),
            cam.intrinsics.scaled_to(width as u32, height as u32),
            cam.pose.clone(),
        )
    }
}

/// Project one Gaussian through the local affine approximation
/// `Sigma' = J W Sigma W^T J^T` and evaluate its view latent.
pub fn project(
    g: &crate::scene::LatentGaussian,
    cam: &Camera,
    channels: usize,
    degree: usize,
) -> Result<Projection> {
    let rot_w = cam.pose.rotation();
    let p = cam.pose.transform_point(&g.position);
    if p.z <= NEAR_PLANE {
        return Ok(Projection::Culled);
    }
    let k = &cam.intrinsics;
    let inv_z = 1.0 / p.z;
    let mean2d = Vector2::new(k.fx * p.x * inv_z + k.cx, k.fy * p.y * inv_z + k.cy);

    // Jacobian of the pinhole projection at the camera-space mean (2x3).
    let j = nalgebra::Matrix2x3::new(
        k.fx * inv_z,
        0.0,
        -k.fx * p.x * inv_z * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * p.y * inv_z * inv_z,
    );
    let sigma = covariance3d(&g.log_scale, &g.rotation)?;
    let t = j * rot_w;
    let mut cov2d = t * sigma * t.transpose();
    cov2d[(0, 0)] += COV_DILATION;
    cov2d[(1, 1)] += COV_DILATION;

    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !det.is_finite() || det <= 0.0 || !mean2d.iter().all(|v| v.is_finite()) {
        return Ok(Projection::Culled);
    }
    let inv_cov2d = Matrix2::new(
        cov2d[(1, 1)] / det,
        -cov2d[(0, 1)] / det,
        -cov2d[(1, 0)] / det,
        cov2d[(0, 0)] / det,
    );

    // The 3-sigma ellipse is contained in this axis-aligned box.
    let radius = Vector2::new(
        SIGMA_CUTOFF * cov2d[(0, 0)].sqrt(),
        SIGMA_CUTOFF * cov2d[(1, 1)].sqrt(),
    );
    let (w, h) = (k.width as f64, k.height as f64);
    if mean2d.x + radius.x < 0.0
        || mean2d.x - radius.x > w
        || mean2d.y + radius.y < 0.0
        || mean2d.y - radius.y > h
    {
        return Ok(Projection::Culled);
    }

    let to_gaussian = g.position - cam.center();
    let view_dist = to_gaussian.norm();
    let view_dir = if view_dist > 0.0 {
        to_gaussian / view_dist
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    };
    let view_latent = sh_eval(&g.sh, channels, &view_dir, degree)?;

    Ok(Projection::Visible(Box::new(ProjectedGaussian {
        mean2d,
        cov2d,
        inv_cov2d,
        depth: p.z,
        view_latent,
        opacity: g.opacity(),
        source: 0,
        radius,
        cam_point: p,
        view_dir,
        view_dist,
    })))
}

/// Evaluate a projected Gaussian's opacity at a pixel: zero outside the
/// 3-sigma ellipse, otherwise `alpha0 * exp(-0.5 d^T Sigma'^-1 d)` clamped
/// to [`ALPHA_CLAMP`].
pub fn splat_alpha(pg: &ProjectedGaussian, pixel: &Vector2<f64>) -> f64 {
    let d = pixel - pg.mean2d;
    let power = (d.transpose() * pg.inv_cov2d * d)[0];
    if power > SIGMA_CUTOFF * SIGMA_CUTOFF {
        return 0.0;
    }
    (pg.opacity * (-0.5 * power).exp()).min(ALPHA_CLAMP)
}

/// Front-to-back alpha compositing of depth-ordered contributors.
///
/// Returns the blended latent and the final transmittance. Compositing stops
/// before any contributor once transmittance drops below
/// [`EARLY_STOP_TRANSMITTANCE`]. Contributors must already be depth-sorted.
pub fn composite_pixel(channels: usize, contributors: &[(f64, &[f64])]) -> (Vec<f64>, f64) {
    let mut acc = vec![0.0; channels];
    let mut transmittance = 1.0;
    for (alpha, latent) in contributors {
        debug_assert!(
            (0.0..=ALPHA_CLAMP + 1e-12).contains(alpha),
            "alpha {alpha} outside [0, {ALPHA_CLAMP}]"
        );
        debug_assert_eq!(latent.len(), channels);
        if transmittance < EARLY_STOP_TRANSMITTANCE {
            break;
        }
        let weight = alpha * transmittance;
        for (a, z) in acc.iter_mut().zip(*latent) {
            *a += weight * z;
        }
        transmittance *= 1.0 - alpha;
    }
    (acc, transmittance)
}

/// Project every Gaussian, drop culled ones, and sort survivors by
/// (depth, source index). Shared by the tiled renderer and the brute-force
/// oracle so both composite in the identical order.
pub fn project_and_sort(scene: &Scene, cam: &Camera, degree: usize) -> Result<Vec<ProjectedGaussian>> {
    let mut projected = Vec::with_capacity(scene.len());
    for (i, g) in scene.gaussians.iter().enumerate() {
        if let Projection::Visible(mut pg) = project(g, cam, scene.channels, degree)? {
            pg.source = i;
            projected.push(*pg);
        }
    }
    projected.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.source.cmp(&b.source))
    });
    Ok(projected)
}

/// Everything the backward pass needs to replay a forward render: the sorted
/// projected Gaussians and, per pixel, the (slot, alpha) contributors that
/// were actually composited, in order.
#[derive(Debug)]
pub struct RenderTrace {
    pub projected: Vec<ProjectedGaussian>,
    pub contributors: Vec<Vec<(u32, f64)>>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub degree: usize,
    pub camera: Camera,
}

fn tile_lists(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
) -> (usize, usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, pg) in projected.iter().enumerate() {
        let x0 = ((pg.mean2d.x - pg.radius.x).floor().max(0.0) as usize).min(width.saturating_sub(1)) / TILE_SIZE;
        let x1 = ((pg.mean2d.x + pg.radius.x).ceil().min(width as f64 - 1.0).max(0.0) as usize) / TILE_SIZE;
        let y0 = ((pg.mean2d.y - pg.radius.y).floor().max(0.0) as usize).min(height.saturating_sub(1)) / TILE_SIZE;
        let y1 = ((pg.mean2d.y + pg.radius.y).ceil().min(height as f64 - 1.0).max(0.0) as usize) / TILE_SIZE;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    (tiles_x, tiles_y, lists)
}

fn render_impl(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    degree: usize,
    with_trace: bool,
) -> Result<(LatentImage, Option<RenderTrace>)> {
    let (height, width) = out_size;
    if height == 0 || width == 0 {
        return Err(LrfError::InvalidValue(format!(
            "render target {height}x{width} must be positive"
        )));
    }
    scene.validate()?;
    let cam = camera_at_resolution(cam, width, height);
    let channels = scene.channels;
    let projected = project_and_sort(scene, &cam, degree)?;
    debug_assert!(projected.windows(2).all(|w| w[0].depth <= w[1].depth));
    let (tiles_x, _tiles_y, lists) = tile_lists(&projected, width, height);

    let mut img = LatentImage::zeros(height, width, channels);
    let mut alpha_map = vec![0.0; height * width];
    let mut trace_rows: Vec<Vec<(u32, f64)>> = if with_trace {
        vec![Vec::new(); height * width]
    } else {
        Vec::new()
    };

    // Tiles parallelize over row bands; each band owns a disjoint slice of
    // the output, so the result is independent of the thread count.
    let band_px = TILE_SIZE * width;
    let data_bands = img.data_mut().par_chunks_mut(band_px * channels);
    let alpha_bands = alpha_map.par_chunks_mut(band_px);
    if with_trace {
        let trace_bands = trace_rows.par_chunks_mut(band_px);
        data_bands
            .zip(alpha_bands)
            .zip(trace_bands)
            .enumerate()
            .for_each(|(ty, ((data, alpha), trace))| {
                render_band(
                    &projected, &lists, tiles_x, ty, width, channels, data, alpha,
                    Some(trace),
                );
            });
    } else {
        data_bands
            .zip(alpha_bands)
            .enumerate()
            .for_each(|(ty, (data, alpha))| {
                render_band(
                    &projected, &lists, tiles_x, ty, width, channels, data, alpha, None,
                );
            });
    }

    img.alpha = Some(alpha_map);
    debug_assert!(img.is_finite());
    let trace = with_trace.then(|| RenderTrace {
        projected,
        contributors: trace_rows,
        height,
        width,
        channels,
        degree,
        camera: cam,
    });
    Ok((img, trace))
}

#[allow(clippy::too_many_arguments)]
fn render_band(
    projected: &[ProjectedGaussian],
    lists: &[Vec<u32>],
    tiles_x: usize,
    ty: usize,
    width: usize,
    channels: usize,
    data: &mut [f64],
    alpha_out: &mut [f64],
    mut trace: Option<&mut [Vec<(u32, f64)>]>,
) {
    let rows = alpha_out.len() / width;
    for row in 0..rows {
        let y = ty * TILE_SIZE + row;
        for x in 0..width {
            let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let list = &lists[ty * tiles_x + x / TILE_SIZE];
            let px_base = (row * width + x) * channels;
            let mut transmittance = 1.0;
            for &slot in list {
                if transmittance < EARLY_STOP_TRANSMITTANCE {
                    break;
                }
                let pg = &projected[slot as usize];
                let alpha = splat_alpha(pg, &pixel);
                if alpha <= 0.0 {
                    continue;
                }
                let weight = alpha * transmittance;
                for c in 0..channels {
                    data[px_base + c] += weight * pg.view_latent[c];
                }
                transmittance *= 1.0 - alpha;
                if let Some(t) = trace.as_deref_mut() {
                    t[row * width + x].push((slot, alpha));
                }
            }
            alpha_out[row * width + x] = 1.0 - transmittance;
        }
    }
}

/// Render a scene into an H' x W' C-channel latent image at the scene's SH
/// degree. An empty scene yields a zero image with full transmittance.
pub fn render(scene: &Scene, cam: &Camera, out_size: (usize, usize)) -> Result<LatentImage> {
    Ok(render_impl(scene, cam, out_size, scene.sh_degree, false)?.0)
}

/// Render at an explicit SH degree (the training loop grows the degree).
pub fn render_at_degree(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    degree: usize,
) -> Result<LatentImage> {
    Ok(render_impl(scene, cam, out_size, degree, false)?.0)
}

/// Render and keep the per-pixel compositing record for the backward pass.
pub fn render_with_trace(
    scene: &Scene,
    cam: &Camera,
    out_size: (usize, usize),
    degree: usize,
) -> Result<(LatentImage, RenderTrace)> {
    let (img, trace) = render_impl(scene, cam, out_size, degree, true)?;
    Ok((img, trace.expect("trace requested")))
}
