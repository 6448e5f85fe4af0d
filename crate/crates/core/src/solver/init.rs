use nalgebra::DMatrix;

use crate::error::Result;
use crate::grid::{Grid, MultibandImage};

use super::FusionOperators;

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four taps `(offset, weight)` for output phase `j` of `factor`.
fn phase_taps(j: usize, factor: usize) -> [(isize, f64); 4] {
    let t = j as f64 / factor as f64;
    [
        (-1, keys(t + 1.0)),
        (0, keys(t)),
        (1, keys(1.0 - t)),
        (2, keys(2.0 - t)),
    ]
}

/// Periodic bicubic interpolation by an integer factor. Low pixel `(a, b)`
/// lands on `(factor a, factor b)`, matching regular decimation.
pub fn bicubic_upsample(low: &MultibandImage, factor: usize) -> MultibandImage {
    let lg = low.grid();
    let (lp, lq) = (lg.rows() as isize, lg.cols() as isize);
    let grid = Grid::new(lg.rows() * factor, lg.cols() * factor).expect("nonzero grid");
    let taps: Vec<_> = (0..factor).map(|j| phase_taps(j, factor)).collect();
    MultibandImage::from_fn(grid, low.bands(), |r, c, band| {
        let (br, bc) = ((r / factor) as isize, (c / factor) as isize);
        let mut acc = 0.0;
        for &(dr, wr) in &taps[r % factor] {
            let rr = (br + dr).rem_euclid(lp) as usize;
            for &(dc, wc) in &taps[c % factor] {
                let cc = (bc + dc).rem_euclid(lq) as usize;
                acc += wr * wc * low.get((rr, cc), band);
            }
        }
        acc
    })
}

/// Full-resolution estimate of `Z` from `Y_l` alone: bicubic upsampling for
/// regular decimation, `S^T Y_l` for any other mask.
pub fn initial_guess(y_low: &DMatrix<f64>, ops: &FusionOperators) -> Result<MultibandImage> {
    match (ops.mask.factor(), ops.mask.low_grid()) {
        (Some(d), Some(lg)) => {
            let low = MultibandImage::new(lg, y_low.clone())?;
            Ok(bicubic_upsample(&low, d))
        }
        _ => ops.mask.upsample_adjoint(y_low),
    }
}
