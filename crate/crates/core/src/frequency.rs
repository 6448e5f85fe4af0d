//! 2-D DFTs on the periodic grid and the Fourier-domain solve of the
//! X-update normal equations.
//!
//! Convention: the forward transform is unnormalized and the inverse divides
//! by `n_h`.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::grid::{Grid, MultibandImage, Offset};
use crate::linops::{accumulate_adjoint_band, apply_band, BlurFilter, DifferenceFilter};

/// Cached row and column transforms for one grid.
#[derive(Clone)]
pub struct Fft2 {
    grid: Grid,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("grid", &self.grid).finish()
    }
}

impl Fft2 {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            row_fwd: planner.plan_fft_forward(grid.cols()),
            row_inv: planner.plan_fft_inverse(grid.cols()),
            col_fwd: planner.plan_fft_forward(grid.rows()),
            col_inv: planner.plan_fft_inverse(grid.rows()),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (p, q) = (self.grid.rows(), self.grid.cols());
        assert_eq!(data.len(), p * q, "buffer does not match grid {}", self.grid);
        row.process(data);
        if p > 1 {
            let mut t = vec![Complex64::default(); p * q];
            transpose(data, &mut t, p, q);
            col.process(&mut t);
            transpose(&t, data, q, p);
        }
    }

    /// In-place forward transform, no scaling.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// In-place inverse transform, scaled by `1 / n_h`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, band: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = band.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Forward 2-D DFT of a real row-major band.
pub fn fft2(grid: Grid, band: &[f64]) -> Vec<Complex64> {
    Fft2::new(grid).forward_real(band)
}

/// Inverse 2-D DFT (divides by `n_h`).
pub fn ifft2(grid: Grid, spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    Fft2::new(grid).inverse(&mut buf);
    buf
}

/// Precomputed spectra for the X-update.
///
/// `denom(w) = 1 + |b(w)|^2 + sum_tau n_tau |d_{tau,0}(w)|^2`, where `n_tau`
/// is the number of patch offsets paired with `tau`. For a full filter bank
/// `n_tau = |P|` for every shift.
#[derive(Clone, Debug)]
pub struct FrequencyPlan {
    grid: Grid,
    fft: Fft2,
    b_hat: Vec<Complex64>,
    d0_power: Vec<f64>,
    denom: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl FrequencyPlan {
    pub fn new(grid: Grid, blur: &BlurFilter, filters: &[DifferenceFilter]) -> Self {
        let fft = Fft2::new(grid);
        let b_hat = fft.forward_real(&blur.kernel_on(grid));

        // one representative filter (tau, 0) per distinct shift
        let mut shifts: Vec<(Offset, usize)> = Vec::new();
        for f in filters {
            match shifts.iter_mut().find(|(t, _)| *t == f.tau) {
                Some((_, n)) => *n += 1,
                None => shifts.push((f.tau, 1)),
            }
        }
        let mut d0_power = vec![0.0; grid.len()];
        let mut weighted = vec![0.0; grid.len()];
        for &(tau, count) in &shifts {
            let spec = fft.forward_real(&DifferenceFilter::new(tau, Offset::ZERO).kernel_on(grid));
            for ((d, w), s) in d0_power.iter_mut().zip(weighted.iter_mut()).zip(&spec) {
                let pw = s.norm_sqr();
                *d += pw;
                *w += count as f64 * pw;
            }
        }
        let denom: Vec<f64> = b_hat
            .iter()
            .zip(&weighted)
            .map(|(b, w)| 1.0 + b.norm_sqr() + w)
            .collect();
        assert!(denom.iter().all(|&d| d >= 1.0), "X-update denominator below one");
        let inv_denom = denom.iter().map(|d| 1.0 / d).collect();
        Self {
            grid,
            fft,
            b_hat,
            d0_power,
            denom,
            inv_denom,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn b_hat(&self) -> &[Complex64] {
        &self.b_hat
    }

    /// `sum_tau |d_{tau,0}(w)|^2`.
    pub fn d0_power(&self) -> &[f64] {
        &self.d0_power
    }

    pub fn denom(&self) -> &[f64] {
        &self.denom
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Solve `(I + B^T B + sum D^T D) X = C` band by band.
    pub fn solve(&self, rhs: &MultibandImage) -> Result<MultibandImage> {
        self.grid.check(&rhs.grid())?;
        let n = self.grid.len();
        let mut out = MultibandImage::zeros(self.grid, rhs.bands());
        out.as_mut_slice()
            .par_chunks_mut(n)
            .zip(rhs.as_slice().par_chunks(n))
            .for_each(|(dst, src)| {
                let mut buf = self.fft.forward_real(src);
                for (v, s) in buf.iter_mut().zip(&self.inv_denom) {
                    *v *= *s;
                }
                self.fft.inverse(&mut buf);
                debug_assert!(
                    buf.iter().all(|v| !(v.im.abs() >= 1e-10 * (1.0 + v.re.abs()))),
                    "X-update produced a complex residue"
                );
                for (d, v) in dst.iter_mut().zip(&buf) {
                    *d = v.re;
                }
            });
        Ok(out)
    }

    /// Blur via the convolution theorem, `ifft2(b_hat * fft2(x))`.
    pub fn blur_via_fft(&self, img: &MultibandImage) -> Result<MultibandImage> {
        self.grid.check(&img.grid())?;
        let mut out = MultibandImage::zeros(self.grid, img.bands());
        for c in 0..img.bands() {
            let mut buf = self.fft.forward_real(img.band(c));
            for (v, b) in buf.iter_mut().zip(&self.b_hat) {
                *v *= *b;
            }
            self.fft.inverse(&mut buf);
            for (d, v) in out.band_mut(c).iter_mut().zip(&buf) {
                *d = v.re;
            }
        }
        Ok(out)
    }
}

/// Build the plan for a grid, blur, and filter list.
pub fn plan(grid: Grid, blur: &BlurFilter, filters: &[DifferenceFilter]) -> FrequencyPlan {
    FrequencyPlan::new(grid, blur, filters)
}

pub fn solve_x_system(plan: &FrequencyPlan, rhs: &MultibandImage) -> Result<MultibandImage> {
    plan.solve(rhs)
}

/// Spatial-domain application of `I + B^T B + sum D^T D`.
pub fn apply_normal_operator(
    blur: &BlurFilter,
    filters: &[DifferenceFilter],
    x: &MultibandImage,
) -> MultibandImage {
    let mut out = x.clone();
    let btb = blur.apply_adjoint(&blur.apply(x));
    *out.data_mut() += btb.data();
    let grid = x.grid();
    let mut tmp = vec![0.0; grid.len()];
    for c in 0..x.bands() {
        let src = x.band(c).to_vec();
        let dst = out.band_mut(c);
        for f in filters {
            apply_band(f, grid, &src, &mut tmp);
            accumulate_adjoint_band(f, grid, &tmp, 1.0, dst);
        }
    }
    out
}
