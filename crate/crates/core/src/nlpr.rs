//! Guided nonlocal patch regularizer: guide weights, penalty evaluation,
//! and the proximal maps used by the Q-update.

use rayon::prelude::*;

use crate::error::{invalid, shape, Result};
use crate::grid::{add_shifted, Grid, MultibandImage, Offset, PatchSpec};
use crate::linops::{apply_band, FilterBank};

/// Per-pixel, per-shift weights `w(i, tau)` on the search window.
#[derive(Clone, Debug, PartialEq)]
pub struct NlprWeights {
    grid: Grid,
    shifts: Vec<Offset>,
    // shift-major: values[s * n_h + i]
    values: Vec<f64>,
    h: Option<f64>,
}

impl NlprWeights {
    /// All weights equal to one (unguided regularizer).
    pub fn unit(grid: Grid, shifts: &[Offset]) -> Self {
        Self {
            grid,
            shifts: shifts.to_vec(),
            values: vec![1.0; grid.len() * shifts.len()],
            h: None,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn shifts(&self) -> &[Offset] {
        &self.shifts
    }

    /// Smoothing parameter, `None` for unit weights.
    pub fn h(&self) -> Option<f64> {
        self.h
    }

    /// Weights of shift `s` over all pixels.
    pub fn column(&self, s: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn get(&self, pixel: usize, s: usize) -> f64 {
        self.values[s * self.grid.len() + pixel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Zero every weight below `threshold`. The result no longer satisfies
    /// strict positivity; the corresponding differences become unpenalized.
    pub fn pruned(mut self, threshold: f64) -> Self {
        for v in &mut self.values {
            if *v < threshold {
                *v = 0.0;
            }
        }
        self
    }

    fn check_bank(&self, bank: &FilterBank) -> Result<()> {
        if self.shifts != bank.shifts() {
            return Err(shape("weight shifts", bank.shifts().len(), self.shifts.len()));
        }
        Ok(())
    }
}

/// How weights are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// From guide patches, `exp(-|P_{i,tau}(Y_h)|^2 / h^2)`.
    Guided,
    /// All ones.
    Unit,
}

/// Guide weights `exp(-|P_{i,tau}(guide)|_2^2 / h^2)`.
pub fn compute_weights(
    guide: &MultibandImage,
    shifts: &[Offset],
    patch: PatchSpec,
    h: f64,
) -> Result<NlprWeights> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", format!("must be positive and finite, got {h}")));
    }
    let grid = guide.grid();
    let n = grid.len();
    let offsets = patch.offsets();
    let inv_h2 = 1.0 / (h * h);
    let mut values = vec![0.0; n * shifts.len()];
    values
        .par_chunks_mut(n)
        .zip(shifts.par_iter())
        .for_each(|(col, &tau)| {
            // squared pixel differences summed over bands
            let mut diff = vec![0.0; n];
            let mut sq = vec![0.0; n];
            for c in 0..guide.bands() {
                let band = guide.band(c);
                diff.copy_from_slice(band);
                add_shifted(band, grid, tau, -1.0, &mut diff);
                for (s, d) in sq.iter_mut().zip(&diff) {
                    *s += d * d;
                }
            }
            // box sum over the patch: sum_k sq(i - k)
            let mut dist = vec![0.0; n];
            for &k in &offsets {
                add_shifted(&sq, grid, k, 1.0, &mut dist);
            }
            for (w, d) in col.iter_mut().zip(&dist) {
                *w = (-d * inv_h2).exp();
            }
        });
    Ok(NlprWeights {
        grid,
        shifts: shifts.to_vec(),
        values,
        h: Some(h),
    })
}

/// Scalar soft threshold `sign(x) max(|x| - mu, 0)`.
#[inline]
pub fn soft_threshold(x: f64, mu: f64) -> f64 {
    if x > mu {
        x - mu
    } else if x < -mu {
        x + mu
    } else {
        0.0
    }
}

/// Penalty applied to the difference responses `D_{tau,k} X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Penalty {
    /// `sum w |.|` over every entry (the patch regularizer).
    WeightedL1,
    /// `sum_{i,tau} w |(D_{tau,k} X(i,c))_{k,c}|_2`, group shrinkage.
    WeightedL2,
    /// `sum_{i,tau} w |(D_{tau,k} X(i,c))_{k,c}|_2^2`, linear shrinkage.
    SquaredWeightedL2,
}

impl Penalty {
    /// Value of the penalty on one shift block, `block[j]` being the
    /// response of the `j`-th patch offset.
    pub fn block_value(&self, block: &[MultibandImage], weights: &[f64]) -> f64 {
        let n = weights.len();
        match self {
            Penalty::WeightedL1 => block
                .iter()
                .map(|img| {
                    img.as_slice()
                        .chunks(n)
                        .map(|band| band.iter().zip(weights).map(|(v, w)| w * v.abs()).sum::<f64>())
                        .sum::<f64>()
                })
                .sum(),
            Penalty::WeightedL2 | Penalty::SquaredWeightedL2 => {
                let sq = group_sq_norms(block, n);
                sq.iter()
                    .zip(weights)
                    .map(|(s, w)| match self {
                        Penalty::WeightedL2 => w * s.sqrt(),
                        _ => w * s,
                    })
                    .sum()
            }
        }
    }

    /// In-place prox of `lambda * penalty` with quadratic weight `rho / 2`,
    /// i.e. threshold `lambda w / rho` for the l1 case.
    pub fn prox_block(&self, block: &mut [MultibandImage], weights: &[f64], lambda_over_rho: f64) {
        let n = weights.len();
        match self {
            Penalty::WeightedL1 => {
                for img in block.iter_mut() {
                    for band in img.as_mut_slice().chunks_mut(n) {
                        for (v, w) in band.iter_mut().zip(weights) {
                            *v = soft_threshold(*v, lambda_over_rho * w);
                        }
                    }
                }
            }
            Penalty::WeightedL2 => {
                let sq = group_sq_norms(block, n);
                let scale: Vec<f64> = sq
                    .iter()
                    .zip(weights)
                    .map(|(s, w)| {
                        let norm = s.sqrt();
                        if norm == 0.0 {
                            0.0
                        } else {
                            (1.0 - lambda_over_rho * w / norm).max(0.0)
                        }
                    })
                    .collect();
                scale_block(block, &scale);
            }
            Penalty::SquaredWeightedL2 => {
                let scale: Vec<f64> = weights
                    .iter()
                    .map(|w| 1.0 / (1.0 + 2.0 * lambda_over_rho * w))
                    .collect();
                scale_block(block, &scale);
            }
        }
    }
}

fn group_sq_norms(block: &[MultibandImage], n: usize) -> Vec<f64> {
    let mut sq = vec![0.0; n];
    for img in block {
        for band in img.as_slice().chunks(n) {
            for (s, v) in sq.iter_mut().zip(band) {
                *s += v * v;
            }
        }
    }
    sq
}

fn scale_block(block: &mut [MultibandImage], scale: &[f64]) {
    let n = scale.len();
    for img in block.iter_mut() {
        for band in img.as_mut_slice().chunks_mut(n) {
            for (v, s) in band.iter_mut().zip(scale) {
                *v *= s;
            }
        }
    }
}

/// Entrywise soft threshold of `D_{tau,k} X - Sigma_{tau,k}` with
/// per-pixel threshold `lambda2 w(i, tau) / rho`.
pub fn q_prox(
    q_tilde: &MultibandImage,
    weights: &NlprWeights,
    shift_index: usize,
    lambda2: f64,
    rho: f64,
) -> Result<MultibandImage> {
    if lambda2 < 0.0 || !(rho > 0.0) {
        return Err(invalid("lambda2/rho", format!("need lambda2 >= 0 and rho > 0, got {lambda2}, {rho}")));
    }
    weights.grid().check(&q_tilde.grid())?;
    let mut out = [q_tilde.clone()];
    Penalty::WeightedL1.prox_block(&mut out, weights.column(shift_index), lambda2 / rho);
    let [out] = out;
    Ok(out)
}

/// Penalty value `g(D X)` over the whole bank.
pub fn penalty_value(
    x: &MultibandImage,
    weights: &NlprWeights,
    bank: &FilterBank,
    penalty: Penalty,
) -> Result<f64> {
    weights.check_bank(bank)?;
    weights.grid().check(&x.grid())?;
    let per = bank.patch_size();
    let total = bank
        .shifts()
        .par_iter()
        .enumerate()
        .map(|(s, _)| {
            let block: Vec<MultibandImage> = bank.filters()[s * per..(s + 1) * per]
                .iter()
                .map(|f| {
                    let mut out = MultibandImage::zeros(x.grid(), x.bands());
                    for c in 0..x.bands() {
                        let src = x.band(c);
                        apply_band(f, x.grid(), src, out.band_mut(c));
                    }
                    out
                })
                .collect();
            penalty.block_value(&block, weights.column(s))
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total)
}

/// The patch regularizer `phi(X) = sum_{i,tau} w(i,tau) |P_{i,tau}(X)|_1`,
/// evaluated through the difference filters.
pub fn regularizer_value(x: &MultibandImage, weights: &NlprWeights, bank: &FilterBank) -> Result<f64> {
    penalty_value(x, weights, bank, Penalty::WeightedL1)
}
