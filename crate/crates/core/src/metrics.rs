//! Full-reference quality metrics between a reference `Z` and an estimate.

use std::fmt;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{Grid, MultibandImage};

/// PSNR reported for an exact match.
pub const PSNR_CAP: f64 = 99.0;
/// UIQI window side.
pub const UIQI_WINDOW: usize = 8;
/// SSIM Gaussian window: 11 taps, standard deviation 1.5.
pub const SSIM_TAPS: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub ergas: f64,
    pub sam_degrees: f64,
    pub uiqi: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "rmse,ergas,sam,uiqi,psnr,ssim";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            self.rmse, self.ergas, self.sam_degrees, self.uiqi, self.psnr_db, self.ssim
        )
    }

    pub fn values(&self) -> [f64; 6] {
        [self.rmse, self.ergas, self.sam_degrees, self.uiqi, self.psnr_db, self.ssim]
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RMSE   {:>12.6}", self.rmse)?;
        writeln!(f, "ERGAS  {:>12.6}", self.ergas)?;
        writeln!(f, "SAM    {:>12.6}", self.sam_degrees)?;
        writeln!(f, "UIQI   {:>12.6}", self.uiqi)?;
        writeln!(f, "PSNR   {:>12.6}", self.psnr_db)?;
        write!(f, "SSIM   {:>12.6}", self.ssim)
    }
}

fn check_pair(a: &MultibandImage, b: &MultibandImage) -> Result<()> {
    a.check_like(b)
}

/// Root mean square error over every entry.
pub fn rmse(reference: &MultibandImage, estimate: &MultibandImage) -> Result<f64> {
    check_pair(reference, estimate)?;
    let n = reference.as_slice().len() as f64;
    let sq: f64 = reference
        .as_slice()
        .iter()
        .zip(estimate.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / n).sqrt())
}

fn band_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `100/d sqrt(mean_c (RMSE_c / mu_c)^2)`; bands whose reference mean is
/// zero are skipped.
pub fn ergas(reference: &MultibandImage, estimate: &MultibandImage, ratio: f64) -> Result<f64> {
    check_pair(reference, estimate)?;
    if !(ratio > 0.0) {
        return Err(invalid("resolution ratio", format!("must be positive, got {ratio}")));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    for c in 0..reference.bands() {
        let r = reference.band(c);
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        if mu == 0.0 {
            log::warn!("ERGAS skips band {c}: reference mean is zero");
            continue;
        }
        acc += band_mse(r, estimate.band(c)) / (mu * mu);
        used += 1;
    }
    if used == 0 {
        return Err(invalid("reference", "every band has zero mean, ERGAS undefined"));
    }
    Ok(100.0 / ratio * (acc / used as f64).sqrt())
}

/// Mean spectral angle in degrees over pixels where both spectra are
/// nonzero.
pub fn sam(reference: &MultibandImage, estimate: &MultibandImage) -> Result<f64> {
    check_pair(reference, estimate)?;
    let n = reference.grid().len();
    let bands = reference.bands();
    let (a, b) = (reference.data(), estimate.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let na = (0..bands).map(|c| a[(i, c)] * a[(i, c)]).sum::<f64>().sqrt();
        let nb = (0..bands).map(|c| b[(i, c)] * b[(i, c)]).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        // angle between unit vectors u, v is 2 atan(|u - v| / |u + v|)
        let (mut d, mut s) = (0.0, 0.0);
        for c in 0..bands {
            let u = a[(i, c)] / na;
            let v = b[(i, c)] / nb;
            d += (u - v) * (u - v);
            s += (u + v) * (u + v);
        }
        total += 2.0 * d.sqrt().atan2(s.sqrt());
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok((total / count as f64).to_degrees())
}

/// Summed-area table with a zero first row and column.
fn integral(band: &[f64], grid: Grid) -> Vec<f64> {
    let (p, q) = (grid.rows(), grid.cols());
    let mut t = vec![0.0; (p + 1) * (q + 1)];
    for r in 0..p {
        let mut row = 0.0;
        for c in 0..q {
            row += band[r * q + c];
            t[(r + 1) * (q + 1) + c + 1] = t[r * (q + 1) + c + 1] + row;
        }
    }
    t
}

fn window_sum(t: &[f64], q: usize, r: usize, c: usize, w: usize) -> f64 {
    let s = q + 1;
    t[(r + w) * s + c + w] - t[r * s + c + w] - t[(r + w) * s + c] + t[r * s + c]
}

/// Universal image quality index of one window from raw sums.
fn uiqi_window(n: f64, sx: f64, sy: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    let num = 4.0 * (n * sxy - sx * sy) * sx * sy;
    let den_var = n * (sxx + syy) - sx * sx - sy * sy;
    let den_mean = sx * sx + sy * sy;
    let den = den_var * den_mean;
    if den != 0.0 {
        num / den
    } else if den_var == 0.0 && den_mean != 0.0 {
        2.0 * sx * sy / den_mean
    } else if den_var != 0.0 && den_mean == 0.0 {
        2.0 * (n * sxy - sx * sy) / den_var
    } else {
        1.0
    }
}

/// Mean UIQI over every valid 8x8 window and band (the window shrinks to the
/// image for smaller grids).
pub fn uiqi(reference: &MultibandImage, estimate: &MultibandImage) -> Result<f64> {
    check_pair(reference, estimate)?;
    let grid = reference.grid();
    let (p, q) = (grid.rows(), grid.cols());
    let w = UIQI_WINDOW.min(p).min(q);
    let n = (w * w) as f64;
    let per_band: Vec<f64> = (0..reference.bands())
        .into_par_iter()
        .map(|c| {
            let x = reference.band(c);
            let y = estimate.band(c);
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
            let tables = [x, y, &xx[..], &yy[..], &xy[..]].map(|b| integral(b, grid));
            let mut total = 0.0;
            let mut count = 0usize;
            for r in 0..=p - w {
                for cc in 0..=q - w {
                    let s = tables.each_ref().map(|t| window_sum(t, q, r, cc, w));
                    total += uiqi_window(n, s[0], s[1], s[2], s[3], s[4]);
                    count += 1;
                }
            }
            total / count as f64
        })
        .collect();
    Ok(per_band.iter().sum::<f64>() / per_band.len() as f64)
}

fn band_peak(band: &[f64]) -> f64 {
    let peak = band.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        peak
    } else {
        1.0
    }
}

/// Per-band PSNR with the reference band maximum as peak, averaged over
/// bands; each band is capped at [`PSNR_CAP`].
pub fn psnr(reference: &MultibandImage, estimate: &MultibandImage) -> Result<f64> {
    check_pair(reference, estimate)?;
    let bands = reference.bands();
    let total: f64 = (0..bands)
        .map(|c| {
            let r = reference.band(c);
            let mse = band_mse(r, estimate.band(c));
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (band_peak(r).powi(2) / mse).log10()).min(PSNR_CAP)
            }
        })
        .sum();
    Ok(total / bands as f64)
}

/// Normalized Gaussian taps, truncated to at most `len` (kept odd).
pub fn gaussian_window(len: usize) -> Vec<f64> {
    let mut taps = SSIM_TAPS.min(len);
    if taps % 2 == 0 {
        taps -= 1;
    }
    let half = (taps / 2) as f64;
    let raw: Vec<f64> = (0..taps)
        .map(|k| (-((k as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation of a row-major band.
fn filter_valid(band: &[f64], p: usize, q: usize, wr: &[f64], wc: &[f64]) -> (Vec<f64>, usize, usize) {
    let (op, oq) = (p + 1 - wr.len(), q + 1 - wc.len());
    let mut rows = vec![0.0; p * oq];
    for r in 0..p {
        for c in 0..oq {
            rows[r * oq + c] = wc.iter().enumerate().map(|(k, w)| w * band[r * q + c + k]).sum();
        }
    }
    let mut out = vec![0.0; op * oq];
    for r in 0..op {
        for c in 0..oq {
            out[r * oq + c] = wr.iter().enumerate().map(|(k, w)| w * rows[(r + k) * oq + c]).sum();
        }
    }
    (out, op, oq)
}

/// Mean SSIM over bands. Gaussian-weighted local statistics on the valid
/// region, `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, `L` the reference band
/// maximum.
pub fn ssim(reference: &MultibandImage, estimate: &MultibandImage) -> Result<f64> {
    check_pair(reference, estimate)?;
    let grid = reference.grid();
    let (p, q) = (grid.rows(), grid.cols());
    let wr = gaussian_window(p);
    let wc = gaussian_window(q);
    let per_band: Vec<f64> = (0..reference.bands())
        .into_par_iter()
        .map(|c| {
            let x = reference.band(c);
            let y = estimate.band(c);
            let l = band_peak(x);
            let c1 = (SSIM_K1 * l).powi(2);
            let c2 = (SSIM_K2 * l).powi(2);
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
            let (mx, _, _) = filter_valid(x, p, q, &wr, &wc);
            let (my, _, _) = filter_valid(y, p, q, &wr, &wc);
            let (exx, _, _) = filter_valid(&xx, p, q, &wr, &wc);
            let (eyy, _, _) = filter_valid(&yy, p, q, &wr, &wc);
            let (exy, _, _) = filter_valid(&xy, p, q, &wr, &wc);
            let total: f64 = (0..mx.len())
                .map(|i| {
                    let (ux, uy) = (mx[i], my[i]);
                    let vx = exx[i] - ux * ux;
                    let vy = eyy[i] - uy * uy;
                    let cxy = exy[i] - ux * uy;
                    ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
                })
                .sum();
            total / mx.len() as f64
        })
        .collect();
    Ok(per_band.iter().sum::<f64>() / per_band.len() as f64)
}

/// All six metrics; `ratio` is the spatial resolution ratio used by ERGAS.
pub fn evaluate(reference: &MultibandImage, estimate: &MultibandImage, ratio: f64) -> Result<MetricReport> {
    Ok(MetricReport {
        rmse: rmse(reference, estimate)?,
        ergas: ergas(reference, estimate, ratio)?,
        sam_degrees: sam(reference, estimate)?,
        uiqi: uiqi(reference, estimate)?,
        psnr_db: psnr(reference, estimate)?,
        ssim: ssim(reference, estimate)?,
    })
}
