//! PSNR / SSIM image-quality metrics and the per-view evaluation report.

use crate::error::{LrfError, Result};
use crate::latent::{check_same_shape, LatentImage};
use crate::ssim::SsimPadding;

/// Peak used for latent-space comparisons: the normalized range [-1, 1].
pub const LATENT_PEAK: f64 = 2.0;

/// `10 log10(peak^2 / MSE)` in dB; `None` marks identical inputs (MSE = 0).
pub fn psnr(a: &LatentImage, b: &LatentImage, peak: f64) -> Result<Option<f64>> {
    check_same_shape("psnr", a, b)?;
    if !(peak > 0.0) {
        return Err(LrfError::InvalidValue(format!("peak {peak} must be positive")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(None);
    }
    Ok(Some(10.0 * (peak * peak / mse).log10()))
}

/// Mean SSIM with valid-region (no padding) windowing.
pub fn ssim(a: &LatentImage, b: &LatentImage, peak: f64) -> Result<f64> {
    crate::ssim::ssim(a, b, peak, SsimPadding::Valid)
}

/// Metrics of one evaluated view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMetrics {
    pub id: String,
    /// `None` means the pair was bit-identical ("identical" in reports).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

/// Per-view metrics plus aggregates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
}

impl EvalReport {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Mean PSNR over views with a finite value; `None` when every pair was
    /// identical or the report is empty.
    pub fn mean_psnr(&self) -> Option<f64> {
        let finite: Vec<f64> = self.views.iter().filter_map(|v| v.psnr_db).collect();
        if finite.is_empty() {
            None
        } else {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        }
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        if self.views.is_empty() {
            None
        } else {
            Some(self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len() as f64)
        }
    }

    pub fn identical_count(&self) -> usize {
        self.views.iter().filter(|v| v.psnr_db.is_none()).count()
    }

    /// CSV with a `view,psnr,ssim` header; identical pairs print `identical`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr,ssim\n");
        for v in &self.views {
            let psnr = match v.psnr_db {
                Some(db) => format!("{db}"),
                None => "identical".to_string(),
            };
            out.push_str(&format!("{},{},{}\n", v.id, psnr, v.ssim));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let perr = |message: String| LrfError::Parse {
            path: "<csv>".into(),
            message,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some("view,psnr,ssim") => {}
            other => return Err(perr(format!("bad header {other:?}"))),
        }
        let mut views = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(perr(format!("row {}: expected 3 columns", i + 2)));
            }
            let psnr_db = if cols[1] == "identical" {
                None
            } else {
                Some(
                    cols[1]
                        .parse::<f64>()
                        .map_err(|_| perr(format!("row {}: bad psnr '{}'", i + 2, cols[1])))?,
                )
            };
            let ssim = cols[2]
                .parse::<f64>()
                .map_err(|_| perr(format!("row {}: bad ssim '{}'", i + 2, cols[2])))?;
            views.push(ViewMetrics {
                id: cols[0].to_string(),
                psnr_db,
                ssim,
            });
        }
        Ok(Self { views })
    }

    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for v in &self.views {
            match v.psnr_db {
                Some(db) => out.push_str(&format!(
                    "{:>12}  psnr {:>8.4} dB  ssim {:.6}\n",
                    v.id, db, v.ssim
                )),
                None => out.push_str(&format!(
                    "{:>12}  psnr identical  ssim {:.6}\n",
                    v.id, v.ssim
                )),
            }
        }
        out.push_str(&format!(
            "{} views; mean psnr {}; mean ssim {}\n",
            self.view_count(),
            match self.mean_psnr() {
                Some(db) => format!("{db:.4} dB"),
                None => "identical".into(),
            },
            match self.mean_ssim() {
                Some(s) => format!("{s:.6}"),
                None => "n/a".into(),
            }
        ));
        out
    }
}
