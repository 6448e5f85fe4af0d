//! Slow reference paths for small grids: explicit dense operators, a
//! dense-X ADMM, the patch-operator system solved by conjugate gradients,
//! and a long-run subgradient method on the objective.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{FusionError, Result};
use crate::grid::{extract_patch, patch_difference, Grid, MultibandImage, Offset, PatchSpec};
use crate::linops::{BlurFilter, DifferenceFilter};
use crate::nlpr::NlprWeights;

use super::{Admm, AdmmState, FusionOperators, FusionOutput, FusionProblem, SolverConfig};

/// Largest grid the dense paths accept.
pub const DENSE_LIMIT: usize = 400;

/// Largest grid for the subgradient oracle.
pub const SUBGRADIENT_LIMIT: usize = 256;

fn guard(grid: Grid, limit: usize) -> Result<()> {
    if grid.len() > limit {
        return Err(FusionError::SizeGuard {
            n_h: grid.len(),
            limit,
        });
    }
    Ok(())
}

/// `B` as an `n_h x n_h` matrix: `(B x)(i) = sum_taps w x(i - offset)`.
pub fn dense_blur_matrix(grid: Grid, blur: &BlurFilter) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let px = grid.coords(i);
        for &(off, w) in blur.taps() {
            m[(i, grid.displaced(px, off))] += w;
        }
    }
    m
}

/// `D_{tau,k}` as an `n_h x n_h` matrix of `+1` and `-1`.
pub fn dense_difference_matrix(grid: Grid, f: &DifferenceFilter) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let px = grid.coords(i);
        m[(i, grid.displaced(px, f.k))] += 1.0;
        m[(i, grid.displaced(px, f.tau + f.k))] -= 1.0;
    }
    m
}

/// `I + B^T B + sum D^T D`, refused above [`DENSE_LIMIT`] pixels.
pub fn dense_normal_matrix(grid: Grid, blur: &BlurFilter, filters: &[DifferenceFilter]) -> Result<DMatrix<f64>> {
    guard(grid, DENSE_LIMIT)?;
    let n = grid.len();
    let b = dense_blur_matrix(grid, blur);
    let mut a = DMatrix::identity(n, n) + b.transpose() * &b;
    for f in filters {
        let d = dense_difference_matrix(grid, f);
        a += d.transpose() * &d;
    }
    Ok(a)
}

/// Dense assembly and Cholesky solve of the X-update.
#[derive(Clone, Debug)]
pub struct DenseXSystem {
    grid: Grid,
    blur_t: DMatrix<f64>,
    filters: Vec<DifferenceFilter>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseXSystem {
    pub fn new(grid: Grid, blur: &BlurFilter, filters: &[DifferenceFilter]) -> Result<Self> {
        let a = dense_normal_matrix(grid, blur, filters)?;
        let chol = a
            .cholesky()
            .ok_or_else(|| FusionError::Format("dense X-update matrix is not positive definite".into()))?;
        Ok(Self {
            grid,
            blur_t: dense_blur_matrix(grid, blur).transpose(),
            filters: filters.to_vec(),
            chol,
        })
    }

    /// Right-hand side built from dense matrix products.
    pub fn rhs(&self, s: &AdmmState) -> DMatrix<f64> {
        let mut c = &self.blur_t * (s.p1.data() + s.dual1.data()) + s.p2.data() + s.dual2.data();
        for (f, (q, sig)) in self.filters.iter().zip(s.q.iter().zip(&s.sigma)) {
            let d = dense_difference_matrix(self.grid, f);
            c += d.transpose() * (q.data() + sig.data());
        }
        c
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn x_update(&self, s: &AdmmState) -> Result<MultibandImage> {
        MultibandImage::new(self.grid, self.solve(&self.rhs(s)))
    }
}

/// ADMM with the dense X-update, from the same initialization as
/// [`super::solve`].
pub fn dense_oracle_solve(
    y_low: &DMatrix<f64>,
    y_high: &MultibandImage,
    ops: &FusionOperators,
    weights: &NlprWeights,
    cfg: &SolverConfig,
) -> Result<FusionOutput> {
    guard(ops.grid(), DENSE_LIMIT)?;
    let problem = FusionProblem::new(y_low.clone(), y_high.clone(), ops.clone(), weights.clone(), cfg)?;
    let admm = Admm::new(problem, cfg)?.with_dense_x_update()?;
    let state = admm.initial_state()?;
    admm.run(state)
}

/// `sum_{i,tau} P_{i,tau}^T P_{i,tau} x`, applied patch by patch.
pub fn patch_gram_apply(x: &MultibandImage, shifts: &[Offset], patch: PatchSpec) -> MultibandImage {
    let grid = x.grid();
    let offsets = patch.offsets();
    let bands = x.bands();
    let mut out = MultibandImage::zeros(grid, bands);
    for i in 0..grid.len() {
        let px = grid.coords(i);
        for &tau in shifts {
            let v = patch_difference(x, px, tau, patch);
            // P^T scatters +v onto the patch at i and -v onto the patch at i - tau
            let data = out.data_mut();
            let mut idx = 0;
            for c in 0..bands {
                for &k in &offsets {
                    let a = grid.displaced(px, k);
                    let b = grid.displaced(px, tau + k);
                    data[(a, c)] += v[idx];
                    data[(b, c)] -= v[idx];
                    idx += 1;
                }
            }
        }
    }
    out
}

/// `sum_{i,tau} P_{i,tau}^T` of per-pixel patch vectors taken from the
/// difference blocks `y[j]`, `j` running over `(tau, k)` in bank order.
pub fn patch_adjoint_apply(
    y: &[MultibandImage],
    shifts: &[Offset],
    patch: PatchSpec,
    grid: Grid,
    bands: usize,
) -> MultibandImage {
    let offsets = patch.offsets();
    let mut out = MultibandImage::zeros(grid, bands);
    for i in 0..grid.len() {
        let px = grid.coords(i);
        for (s, &tau) in shifts.iter().enumerate() {
            let data = out.data_mut();
            for c in 0..bands {
                for (ki, &k) in offsets.iter().enumerate() {
                    let v = y[s * offsets.len() + ki].data()[(i, c)];
                    data[(grid.displaced(px, k), c)] += v;
                    data[(grid.displaced(px, tau + k), c)] -= v;
                }
            }
        }
    }
    out
}

/// Conjugate gradients on an SPD operator, a fixed number of iterations
/// unless the residual vanishes first. Returns the iterate and the count.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    iters: usize,
    tol: f64,
) -> (DVector<f64>, usize) {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let stop = tol * tol * b.norm_squared();
    for it in 0..iters {
        if rs <= stop {
            return (x, it);
        }
        let ap = apply(&p);
        let alpha = rs / p.dot(&ap);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let next = r.norm_squared();
        p = &r + &p * (next / rs);
        rs = next;
    }
    (x, iters)
}

/// X-update of the patch-operator splitting: `(I + B^T B + sum P^T P) X = C`
/// by conjugate gradients on the stacked bands.
pub fn patch_system_cg(
    blur: &BlurFilter,
    shifts: &[Offset],
    patch: PatchSpec,
    rhs: &MultibandImage,
    iters: usize,
    tol: f64,
) -> (MultibandImage, usize) {
    let grid = rhs.grid();
    let bands = rhs.bands();
    let apply = |v: &DVector<f64>| {
        let x = MultibandImage::from_band_major(grid, bands, v.as_slice().to_vec()).expect("shape");
        let mut out = patch_gram_apply(&x, shifts, patch);
        let btb = blur.apply_adjoint(&blur.apply(&x));
        *out.data_mut() += btb.data() + x.data();
        DVector::from_column_slice(out.as_slice())
    };
    let b = DVector::from_column_slice(rhs.as_slice());
    let (x, used) = conjugate_gradient(apply, &b, iters, tol);
    (
        MultibandImage::from_band_major(grid, bands, x.as_slice().to_vec()).expect("shape"),
        used,
    )
}

/// Patch vectors `P_{i,tau}` gathered directly, for cross-checks.
pub fn patch_vectors(x: &MultibandImage, pixel: (usize, usize), shifts: &[Offset], patch: PatchSpec) -> Vec<Vec<f64>> {
    shifts
        .iter()
        .map(|&tau| {
            let a = extract_patch(x, pixel, patch);
            let b = extract_patch(x, x.grid().coords(x.grid().displaced(pixel, tau)), patch);
            a.iter().zip(&b).map(|(u, v)| u - v).collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SubgradientResult {
    pub x: MultibandImage,
    pub objective: f64,
    pub iterations: usize,
}

/// Subgradient descent on the objective with step `a / sqrt(t)`,
/// `a = scale / L` where `L` bounds the smooth part's Lipschitz constant.
/// Keeps the best iterate seen.
pub fn subgradient_oracle(
    problem: &FusionProblem,
    x0: &MultibandImage,
    iters: usize,
    scale: f64,
) -> Result<SubgradientResult> {
    guard(problem.grid(), SUBGRADIENT_LIMIT)?;
    let a = scale / problem.smooth_lipschitz();
    let mut x = x0.clone();
    let mut best = x.clone();
    let mut best_obj = problem.objective(&x)?;
    for t in 1..=iters {
        let mut g = problem.smooth_gradient(&x)?;
        *g.data_mut() += problem.penalty_subgradient(&x)?.data();
        let step = a / (t as f64).sqrt();
        *x.data_mut() -= g.data() * step;
        let obj = problem.objective(&x)?;
        if obj < best_obj {
            best_obj = obj;
            best = x.clone();
        }
    }
    Ok(SubgradientResult {
        x: best,
        objective: best_obj,
        iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::apply_normal_operator;
    use crate::linops::{FilterBank, SearchWindow};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(grid: Grid, b: usize, rng: &mut ChaCha8Rng) -> MultibandImage {
        MultibandImage::from_fn(grid, b, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn two_by_two_single_band() {
        let grid = Grid::new(2, 2).unwrap();
        let blur = BlurFilter::from_taps(vec![(Offset::new(0, 0), 0.5), (Offset::new(0, 1), 0.5)], false).unwrap();
        let a = dense_normal_matrix(grid, &blur, &[]).unwrap();
        // B averages each pixel with its left neighbour; on a 2-wide torus
        // B^T B has 0.5 on the diagonal and 0.5 between row mates.
        let expect = DMatrix::from_row_slice(4, 4, &[
            1.5, 0.5, 0.0, 0.0,
            0.5, 1.5, 0.0, 0.0,
            0.0, 0.0, 1.5, 0.5,
            0.0, 0.0, 0.5, 1.5,
        ]);
        assert!((a - expect).amax() < 1e-15);
    }

    #[test]
    fn dense_operator_matches_spatial() {
        let grid = Grid::new(6, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = FilterBank::new(SearchWindow::square(1), PatchSpec::new(1));
        let blur = BlurFilter::gaussian(0.8, Some(1)).unwrap();
        let a = dense_normal_matrix(grid, &blur, bank.filters()).unwrap();
        let x = rand_img(grid, 2, &mut rng);
        let fast = apply_normal_operator(&blur, bank.filters(), &x);
        assert!((a * x.data() - fast.data()).amax() < 1e-12);
    }

    #[test]
    fn size_guard_refuses_large_grids() {
        let grid = Grid::new(21, 20).unwrap();
        assert!(matches!(
            dense_normal_matrix(grid, &BlurFilter::identity(), &[]),
            Err(FusionError::SizeGuard { n_h: 420, limit: 400 })
        ));
    }

    #[test]
    fn patch_gram_equals_filter_gram() {
        let grid = Grid::new(7, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = FilterBank::new(SearchWindow::square(1), PatchSpec::new(1));
        let x = rand_img(grid, 2, &mut rng);
        let via_patches = patch_gram_apply(&x, bank.shifts(), bank.patch());
        let via_filters = apply_normal_operator(&BlurFilter::identity(), bank.filters(), &x);
        // apply_normal_operator adds I + B^T B = 2 I for the identity blur
        let diff = via_filters.data() - x.data() * 2.0 - via_patches.data();
        assert!(diff.amax() < 1e-12);
    }

    #[test]
    fn patch_adjoint_matches_filter_adjoints() {
        let grid = Grid::new(7, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bank = FilterBank::new(SearchWindow::square(1), PatchSpec::new(1));
        let y: Vec<_> = (0..bank.len()).map(|_| rand_img(grid, 2, &mut rng)).collect();
        let via_patches = patch_adjoint_apply(&y, bank.shifts(), bank.patch(), grid, 2);
        let mut via_filters = MultibandImage::zeros(grid, 2);
        for (f, yj) in bank.filters().iter().zip(&y) {
            *via_filters.data_mut() += f.apply_adjoint(yj).data();
        }
        assert!((via_patches.data() - via_filters.data()).amax() < 1e-12);
    }

    #[test]
    fn cg_solves_patch_system() {
        let grid = Grid::new(8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = FilterBank::new(SearchWindow::square(1), PatchSpec::new(1));
        let blur = BlurFilter::starck_murtagh();
        let x0 = rand_img(grid, 2, &mut rng);
        let rhs = apply_normal_operator(&blur, bank.filters(), &x0);
        let (x, _) = patch_system_cg(&blur, bank.shifts(), bank.patch(), &rhs, 500, 1e-13);
        assert!((x.data() - x0.data()).amax() < 1e-8);
    }

    #[test]
    fn patch_vectors_agree_with_patch_difference() {
        let grid = Grid::new(6, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_img(grid, 2, &mut rng);
        let shifts = SearchWindow::square(1).shifts();
        let spec = PatchSpec::new(1);
        let pv = patch_vectors(&x, (2, 5), &shifts, spec);
        for (v, &tau) in pv.iter().zip(&shifts) {
            assert_eq!(v, &patch_difference(&x, (2, 5), tau, spec));
        }
    }

    #[test]
    fn cg_exact_on_small_spd() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (x, _) = conjugate_gradient(|v| &m * v, &b, 10, 1e-15);
        assert!((&m * x - b).amax() < 1e-12);
    }
}
