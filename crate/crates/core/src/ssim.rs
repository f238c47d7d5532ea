//! SSIM with an 11x11 Gaussian window (sigma 1.5), per channel, averaged.
//!
//! Two windowing modes: `Valid` evaluates only fully supported windows (the
//! metric convention here), `SameZero` evaluates every pixel with zero
//! padding (the convention the photometric training loss inherits, which
//! also keeps small test images usable). The implementation runs on
//! separable blurs; `oracle::ssim_reference` recomputes everything with
//! direct per-window loops.

use crate::error::{LrfError, Result};
use crate::latent::{check_same_shape, LatentImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsimPadding {
    /// Only windows fully inside the image; requires >= 11x11 input.
    Valid,
    /// Every pixel, windows zero-padded at the borders.
    SameZero,
}

fn kernel_1d() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur of one plane with zero padding. The kernel is
/// symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if xx >= 0 && xx < w as isize {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy >= 0 && yy < h as isize {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn extract_plane(img: &LatentImage, c: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut plane = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = img.get(y, x, c);
        }
    }
    plane
}

struct WindowSet {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

impl WindowSet {
    fn count(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

fn window_set(h: usize, w: usize, padding: SsimPadding) -> Result<WindowSet> {
    match padding {
        SsimPadding::Valid => {
            if h < SSIM_WINDOW || w < SSIM_WINDOW {
                return Err(LrfError::ImageTooSmall {
                    height: h,
                    width: w,
                    window: SSIM_WINDOW,
                });
            }
            let half = SSIM_WINDOW / 2;
            Ok(WindowSet {
                y0: half,
                y1: h - half,
                x0: half,
                x1: w - half,
            })
        }
        SsimPadding::SameZero => Ok(WindowSet {
            y0: 0,
            y1: h,
            x0: 0,
            x1: w,
        }),
    }
}

/// Mean SSIM over channels and window positions; `peak` is the dynamic range
/// entering the stabilizing constants.
pub fn ssim(a: &LatentImage, b: &LatentImage, peak: f64, padding: SsimPadding) -> Result<f64> {
    Ok(ssim_impl(a, b, peak, padding, false)?.0)
}

/// SSIM plus the analytic gradient of the mean w.r.t. `a`.
pub fn ssim_with_grad(
    a: &LatentImage,
    b: &LatentImage,
    peak: f64,
    padding: SsimPadding,
) -> Result<(f64, LatentImage)> {
    let (value, grad) = ssim_impl(a, b, peak, padding, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn ssim_impl(
    a: &LatentImage,
    b: &LatentImage,
    peak: f64,
    padding: SsimPadding,
    with_grad: bool,
) -> Result<(f64, Option<LatentImage>)> {
    check_same_shape("ssim", a, b)?;
    if !(peak > 0.0) {
        return Err(LrfError::InvalidValue(format!("peak {peak} must be positive")));
    }
    let (h, w, channels) = (a.height(), a.width(), a.channels());
    let windows = window_set(h, w, padding)?;
    let n_positions = windows.count() * channels;
    let k = kernel_1d();
    let c1 = (SSIM_K1 * peak) * (SSIM_K1 * peak);
    let c2 = (SSIM_K2 * peak) * (SSIM_K2 * peak);

    let mut total = 0.0;
    let mut grad = with_grad.then(|| LatentImage::zeros(h, w, channels));

    for c in 0..channels {
        let xa = extract_plane(a, c);
        let xb = extract_plane(b, c);
        let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = xa.iter().zip(&xb).map(|(u, v)| u * v).collect();

        let mu_a = blur(&xa, h, w, &k);
        let mu_b = blur(&xb, h, w, &k);
        let m_aa = blur(&aa, h, w, &k);
        let m_bb = blur(&bb, h, w, &k);
        let m_ab = blur(&ab, h, w, &k);

        // Per-window partials, kept as planes so the scatter back to pixels
        // is just more blurs (the kernel is self-adjoint).
        let mut f_mu = vec![0.0; h * w];
        let mut f_va = vec![0.0; h * w];
        let mut f_vab = vec![0.0; h * w];

        for y in windows.y0..windows.y1 {
            for x in windows.x0..windows.x1 {
                let i = y * w + x;
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let va = m_aa[i] - ma * ma;
                let vb = m_bb[i] - mb * mb;
                let vab = m_ab[i] - ma * mb;
                let t1 = 2.0 * ma * mb + c1;
                let t2 = 2.0 * vab + c2;
                let d1 = ma * ma + mb * mb + c1;
                let d2 = va + vb + c2;
                let val = (t1 * t2) / (d1 * d2);
                total += val;
                if with_grad {
                    // Partials of the window SSIM treating (mu_a, va, vab) as
                    // the independent statistics.
                    f_mu[i] = (2.0 * mb * t2) / (d1 * d2) - val * (2.0 * ma) / d1;
                    f_va[i] = -val / d2;
                    f_vab[i] = 2.0 * t1 / (d1 * d2);
                }
            }
        }

        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / n_positions as f64;
            let fm_mu_ma: Vec<f64> = f_va.iter().zip(&mu_a).map(|(f, m)| f * m).collect();
            let fv_mu_mb: Vec<f64> = f_vab.iter().zip(&mu_b).map(|(f, m)| f * m).collect();
            let b_mu = blur(&f_mu, h, w, &k);
            let b_va = blur(&f_va, h, w, &k);
            let b_va_ma = blur(&fm_mu_ma, h, w, &k);
            let b_vab = blur(&f_vab, h, w, &k);
            let b_vab_mb = blur(&fv_mu_mb, h, w, &k);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let v = b_mu[i]
                        + 2.0 * xa[i] * b_va[i]
                        - 2.0 * b_va_ma[i]
                        + xb[i] * b_vab[i]
                        - b_vab_mb[i];
                    g.set(y, x, c, v * scale);
                }
            }
        }
    }

    Ok((total / n_positions as f64, grad))
}
