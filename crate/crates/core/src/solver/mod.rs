//! ADMM for the fusion problem.
//!
//! Splitting `P1 = B X`, `P2 = X`, `Q_{tau,k} = D_{tau,k} X` with scaled
//! duals `Lambda1`, `Lambda2`, `Sigma_{tau,k}`. The augmented Lagrangian is
//!
//! ```text
//! 1/2 |Y_l - S P1 E|^2 + lambda1/2 |Y_h - P2 E R|^2 + lambda2 g(Q)
//!   + rho/2 |P1 - B X + Lambda1|^2 + rho/2 |P2 - X + Lambda2|^2
//!   + rho/2 sum |Q - D X + Sigma|^2
//! ```
//!
//! and one iteration runs X -> P1 -> P2 -> Q -> duals.

pub mod bench;
mod config;
mod init;
pub mod oracle;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, shape, FusionError, Result};
use crate::frequency::FrequencyPlan;
use crate::grid::{Grid, MultibandImage};
use crate::linops::{
    accumulate_adjoint_band, apply_band, build_subspace, BlurFilter, DifferenceFilter, FilterBank,
    SamplingMask, SpectralResponse, SubspaceBasis,
};
use crate::nlpr::{compute_weights, NlprWeights, Penalty, WeightMode};

pub use config::{
    preset, state_bytes, AblationCase, InitMode, SolverConfig, Structure, WindowMode, PRESETS,
};
pub use init::{bicubic_upsample, initial_guess};

/// The known degradation operators `(B, S, R, E)`.
#[derive(Clone, Debug)]
pub struct FusionOperators {
    pub blur: BlurFilter,
    pub mask: SamplingMask,
    pub response: SpectralResponse,
    pub subspace: SubspaceBasis,
}

impl FusionOperators {
    pub fn new(
        blur: BlurFilter,
        mask: SamplingMask,
        response: SpectralResponse,
        subspace: SubspaceBasis,
    ) -> Result<Self> {
        if response.fine_bands() != subspace.ambient() {
            return Err(shape("spectral response rows", subspace.ambient(), response.fine_bands()));
        }
        Ok(Self {
            blur,
            mask,
            response,
            subspace,
        })
    }

    pub fn grid(&self) -> Grid {
        self.mask.grid()
    }

    /// `L_s`.
    pub fn dim(&self) -> usize {
        self.subspace.dim()
    }

    /// `S B Z`.
    pub fn observe_low(&self, z: &MultibandImage) -> Result<DMatrix<f64>> {
        self.mask.downsample(&self.blur.apply(z))
    }

    /// `Z R`.
    pub fn observe_high(&self, z: &MultibandImage) -> Result<MultibandImage> {
        if z.bands() != self.response.fine_bands() {
            return Err(shape("image bands", self.response.fine_bands(), z.bands()));
        }
        self.grid().check(&z.grid())?;
        MultibandImage::new(z.grid(), z.data() * self.response.matrix())
    }

    /// `E R`, size `L_s x L_h`.
    pub fn er(&self) -> DMatrix<f64> {
        self.subspace.matrix() * self.response.matrix()
    }
}

/// Observations, operators and weights defining the objective
/// `1/2 |Y_l - S B X E|^2 + lambda1/2 |Y_h - X E R|^2 + lambda2 g(D X)`.
#[derive(Clone, Debug)]
pub struct FusionProblem {
    ops: FusionOperators,
    y_low: DMatrix<f64>,
    y_high: MultibandImage,
    weights: NlprWeights,
    bank: FilterBank,
    lambda1: f64,
    lambda2: f64,
    penalty: Penalty,
    er: DMatrix<f64>,
}

impl FusionProblem {
    pub fn new(
        y_low: DMatrix<f64>,
        y_high: MultibandImage,
        ops: FusionOperators,
        weights: NlprWeights,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = ops.grid();
        let bank = cfg.filter_bank();
        bank.check_grid(grid)?;
        if y_low.nrows() != ops.mask.kept_len() || y_low.ncols() != ops.subspace.ambient() {
            return Err(shape(
                "low-resolution observation",
                format!("{}x{}", ops.mask.kept_len(), ops.subspace.ambient()),
                format!("{}x{}", y_low.nrows(), y_low.ncols()),
            ));
        }
        if !y_low.iter().all(|v| v.is_finite()) {
            return Err(invalid("Y_l", "contains non-finite values"));
        }
        grid.check(&y_high.grid())?;
        if y_high.bands() != ops.response.coarse_bands() {
            return Err(shape("high-resolution bands", ops.response.coarse_bands(), y_high.bands()));
        }
        grid.check(&weights.grid())?;
        if weights.shifts() != bank.shifts() {
            return Err(shape("weight shifts", bank.shifts().len(), weights.shifts().len()));
        }
        let er = ops.er();
        Ok(Self {
            ops,
            y_low,
            y_high,
            weights,
            bank,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            penalty: cfg.penalty,
            er,
        })
    }

    pub fn ops(&self) -> &FusionOperators {
        &self.ops
    }

    pub fn y_low(&self) -> &DMatrix<f64> {
        &self.y_low
    }

    pub fn y_high(&self) -> &MultibandImage {
        &self.y_high
    }

    pub fn weights(&self) -> &NlprWeights {
        &self.weights
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn grid(&self) -> Grid {
        self.ops.grid()
    }

    fn check_x(&self, x: &MultibandImage) -> Result<()> {
        self.grid().check(&x.grid())?;
        if x.bands() != self.ops.dim() {
            return Err(shape("X bands", self.ops.dim(), x.bands()));
        }
        Ok(())
    }

    /// `S B X E - Y_l`.
    fn low_residual(&self, x: &MultibandImage) -> Result<DMatrix<f64>> {
        let sbx = self.ops.mask.downsample(&self.ops.blur.apply(x))?;
        Ok(sbx * self.ops.subspace.matrix() - &self.y_low)
    }

    /// `X E R - Y_h`.
    fn high_residual(&self, x: &MultibandImage) -> DMatrix<f64> {
        x.data() * &self.er - self.y_high.data()
    }

    /// `(1/2 |Y_l - S B X E|^2, 1/2 |Y_h - X E R|^2)`.
    pub fn data_terms(&self, x: &MultibandImage) -> Result<(f64, f64)> {
        self.check_x(x)?;
        let low = self.low_residual(x)?.norm_squared() / 2.0;
        let high = self.high_residual(x).norm_squared() / 2.0;
        Ok((low, high))
    }

    /// `g(D X)` without the `lambda2` factor.
    pub fn penalty_value(&self, x: &MultibandImage) -> Result<f64> {
        crate::nlpr::penalty_value(x, &self.weights, &self.bank, self.penalty)
    }

    pub fn objective(&self, x: &MultibandImage) -> Result<f64> {
        let (low, high) = self.data_terms(x)?;
        let g = if self.lambda2 > 0.0 {
            self.penalty_value(x)?
        } else {
            0.0
        };
        Ok(low + self.lambda1 * high + self.lambda2 * g)
    }

    /// Gradient of the two quadratic data terms.
    pub fn smooth_gradient(&self, x: &MultibandImage) -> Result<MultibandImage> {
        self.check_x(x)?;
        let e = self.ops.subspace.matrix();
        let low = self.low_residual(x)? * e.transpose();
        let mut g = self.ops.blur.apply_adjoint(&self.ops.mask.upsample_adjoint(&low)?);
        let high = self.high_residual(x) * self.er.transpose();
        *g.data_mut() += high * self.lambda1;
        Ok(g)
    }

    /// A subgradient of `lambda2 g(D X)`: `lambda2 sum D^T (w sign(D X))`
    /// for the l1 penalty, the group or linear analogue otherwise.
    pub fn penalty_subgradient(&self, x: &MultibandImage) -> Result<MultibandImage> {
        self.check_x(x)?;
        let grid = self.grid();
        let n = grid.len();
        let bands = x.bands();
        let per = self.bank.patch_size();
        let mut out = MultibandImage::zeros(grid, bands);
        if self.lambda2 == 0.0 || self.bank.is_empty() {
            return Ok(out);
        }
        let parts: Vec<Vec<f64>> = self
            .bank
            .filters()
            .par_chunks(per)
            .enumerate()
            .map(|(s, fb)| {
                let w = self.weights.column(s);
                let dx: Vec<MultibandImage> = fb.iter().map(|f| filter_image(f, x)).collect();
                let scale: Vec<f64> = match self.penalty {
                    Penalty::WeightedL1 => vec![1.0; n],
                    Penalty::WeightedL2 => {
                        let mut sq = vec![0.0; n];
                        for img in &dx {
                            for band in img.as_slice().chunks(n) {
                                for (s, v) in sq.iter_mut().zip(band) {
                                    *s += v * v;
                                }
                            }
                        }
                        sq.iter()
                            .map(|s| if *s > 0.0 { 1.0 / s.sqrt() } else { 0.0 })
                            .collect()
                    }
                    Penalty::SquaredWeightedL2 => vec![2.0; n],
                };
                let mut acc = vec![0.0; n * bands];
                let mut tmp = vec![0.0; n];
                for (f, img) in fb.iter().zip(&dx) {
                    for c in 0..bands {
                        for (i, t) in tmp.iter_mut().enumerate() {
                            let v = img.band(c)[i];
                            let dir = match self.penalty {
                                Penalty::WeightedL1 => v.signum() * (v != 0.0) as u8 as f64,
                                _ => v,
                            };
                            *t = w[i] * scale[i] * dir;
                        }
                        accumulate_adjoint_band(f, grid, &tmp, 1.0, &mut acc[c * n..(c + 1) * n]);
                    }
                }
                acc
            })
            .collect();
        let dst = out.as_mut_slice();
        for part in parts {
            for (d, v) in dst.iter_mut().zip(part) {
                *d += self.lambda2 * v;
            }
        }
        Ok(out)
    }

    /// Upper bound on the Lipschitz constant of [`Self::smooth_gradient`].
    pub fn smooth_lipschitz(&self) -> f64 {
        let b: f64 = self.ops.blur.taps().iter().map(|(_, w)| w.abs()).sum();
        let spectral = |m: &DMatrix<f64>| {
            m.singular_values().iter().cloned().fold(0.0_f64, f64::max)
        };
        let e = spectral(self.ops.subspace.matrix());
        let er = spectral(&self.er);
        (b * e).powi(2) + self.lambda1 * er * er
    }
}

fn filter_image(f: &DifferenceFilter, x: &MultibandImage) -> MultibandImage {
    let mut out = MultibandImage::zeros(x.grid(), x.bands());
    for c in 0..x.bands() {
        apply_band(f, x.grid(), x.band(c), out.band_mut(c));
    }
    out
}

/// Cached quantities reused by every iteration.
#[derive(Clone, Debug)]
pub struct Precomputed {
    pub plan: FrequencyPlan,
    /// `(I + lambda1/rho E R R^T E^T)^{-1}`.
    pub f_matrix: DMatrix<f64>,
    /// `(E E^T + rho I)^{-1}`.
    pub eet_inv: DMatrix<f64>,
}

fn inverse_spd(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| invalid(what, "matrix is not positive definite"))
}

pub fn precompute(ops: &FusionOperators, cfg: &SolverConfig) -> Result<Precomputed> {
    cfg.validate()?;
    let bank = cfg.filter_bank();
    bank.check_grid(ops.grid())?;
    let plan = FrequencyPlan::new(ops.grid(), &ops.blur, bank.filters());
    let e = ops.subspace.matrix();
    let ls = e.nrows();
    let er = ops.er();
    let f_sys = DMatrix::identity(ls, ls) + (&er * er.transpose()) * (cfg.lambda1 / cfg.rho);
    let eet = e * e.transpose() + DMatrix::identity(ls, ls) * cfg.rho;
    Ok(Precomputed {
        plan,
        f_matrix: inverse_spd(f_sys, "F")?,
        eet_inv: inverse_spd(eet, "E E^T + rho I")?,
    })
}

/// Primal and dual variables.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub x: MultibandImage,
    pub p1: MultibandImage,
    pub p2: MultibandImage,
    /// One block per filter, in filter-bank order.
    pub q: Vec<MultibandImage>,
    pub dual1: MultibandImage,
    pub dual2: MultibandImage,
    pub sigma: Vec<MultibandImage>,
    pub iter: usize,
}

impl AdmmState {
    pub fn zeros(grid: Grid, bands: usize, filters: usize) -> Self {
        let z = MultibandImage::zeros(grid, bands);
        Self {
            x: z.clone(),
            p1: z.clone(),
            p2: z.clone(),
            q: vec![z.clone(); filters],
            dual1: z.clone(),
            dual2: z.clone(),
            sigma: vec![z; filters],
            iter: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.x, &self.p1, &self.p2, &self.dual1, &self.dual2]
            .iter()
            .all(|m| m.is_finite())
            && self.q.iter().chain(&self.sigma).all(|m| m.is_finite())
    }
}

/// One row of the iteration log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    /// `|B X - P1| / max(|B X|, |P1|)`.
    pub r1: f64,
    /// `|X - P2| / max(|X|, |P2|)`.
    pub r2: f64,
    /// Same ratio over all difference blocks jointly.
    pub r3: f64,
    /// Relative change of `(P1, P2, Q)` over the step.
    pub dual: f64,
    pub x_ms: f64,
    pub p1_ms: f64,
    pub p2_ms: f64,
    pub q_ms: f64,
    pub dual_ms: f64,
}

impl IterationRecord {
    pub fn max_residual(&self) -> f64 {
        self.r1.max(self.r2).max(self.r3)
    }

    pub fn converged(&self, tol_primal: f64, tol_dual: f64) -> bool {
        self.max_residual() < tol_primal && self.dual < tol_dual
    }

    pub fn total_ms(&self) -> f64 {
        self.x_ms + self.p1_ms + self.p2_ms + self.q_ms + self.dual_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationLog {
    records: Vec<IterationRecord>,
}

impl IterationLog {
    pub fn push(&mut self, rec: IterationRecord) {
        self.records.push(rec);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// `iter,objective,r1,r2,r3,ms`. Without timing the `ms` column is zero,
    /// which keeps the file reproducible.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("iter,objective,r1,r2,r3,ms\n");
        for r in &self.records {
            let ms = if with_timing { r.total_ms() } else { 0.0 };
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:.3}", r.iter, r.objective, r.r1, r.r2, r.r3, ms);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub x: MultibandImage,
    /// `X E`.
    pub z: MultibandImage,
    pub log: IterationLog,
    pub converged: bool,
    pub state: AdmmState,
}

struct DualStats {
    r1: f64,
    r2: f64,
    r3: f64,
    penalty: f64,
    q_finite: bool,
    sigma_finite: bool,
}

fn relative(num_sq: f64, a_sq: f64, b_sq: f64) -> f64 {
    let den = a_sq.max(b_sq).sqrt();
    if num_sq == 0.0 {
        0.0
    } else if den == 0.0 {
        num_sq.sqrt()
    } else {
        num_sq.sqrt() / den
    }
}

/// `[|new - old|^2, |old|^2, |new|^2]`.
fn change(old: &[f64], new: &[f64]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (a, b) in old.iter().zip(new) {
        acc[0] += (b - a) * (b - a);
        acc[1] += a * a;
        acc[2] += b * b;
    }
    acc
}

fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// `out += sum_j D_j^T (q_j + sigma_j)`.
///
/// The deterministic path accumulates filters in bank order within each
/// band; the other path reduces per-filter partial sums in whatever order
/// the thread pool produces.
pub(crate) fn accumulate_filter_adjoints(
    filters: &[DifferenceFilter],
    q: &[MultibandImage],
    sigma: &[MultibandImage],
    out: &mut MultibandImage,
    deterministic: bool,
) {
    if filters.is_empty() {
        return;
    }
    let grid = out.grid();
    let n = grid.len();
    let bands = out.bands();
    if deterministic {
        out.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(c, dst)| {
                let mut tmp = vec![0.0; n];
                for ((f, qj), sj) in filters.iter().zip(q).zip(sigma) {
                    for ((t, a), b) in tmp.iter_mut().zip(qj.band(c)).zip(sj.band(c)) {
                        *t = a + b;
                    }
                    accumulate_adjoint_band(f, grid, &tmp, 1.0, dst);
                }
            });
    } else {
        let sum = filters
            .par_iter()
            .zip(q.par_iter().zip(sigma.par_iter()))
            .fold(
                || (vec![0.0; n * bands], vec![0.0; n]),
                |(mut acc, mut tmp), (f, (qj, sj))| {
                    for c in 0..bands {
                        for ((t, a), b) in tmp.iter_mut().zip(qj.band(c)).zip(sj.band(c)) {
                            *t = a + b;
                        }
                        accumulate_adjoint_band(f, grid, &tmp, 1.0, &mut acc[c * n..(c + 1) * n]);
                    }
                    (acc, tmp)
                },
            )
            .map(|(acc, _)| acc)
            .reduce(
                || vec![0.0; n * bands],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        for (d, v) in out.as_mut_slice().iter_mut().zip(sum) {
            *d += v;
        }
    }
}

/// The ADMM iteration for one problem and configuration.
#[derive(Clone, Debug)]
pub struct Admm {
    problem: FusionProblem,
    cfg: SolverConfig,
    pre: Precomputed,
    /// `Y_l E^T`, rows in kept-pixel order.
    yl_et: DMatrix<f64>,
    /// `lambda1/rho Y_h R^T E^T`.
    yh_term: DMatrix<f64>,
    dense: Option<oracle::DenseXSystem>,
}

impl Admm {
    pub fn new(problem: FusionProblem, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let n = problem.grid().len();
        let ls = problem.ops.dim();
        let estimate = state_bytes(n, ls, problem.bank.len());
        if estimate > cfg.memory_budget_bytes {
            return Err(FusionError::MemoryBudget {
                estimate_bytes: estimate,
                budget_bytes: cfg.memory_budget_bytes,
            });
        }
        log::debug!("ADMM state estimate {estimate} bytes for {} filters", problem.bank.len());
        let pre = precompute(&problem.ops, cfg)?;
        let e = problem.ops.subspace.matrix();
        let yl_et = &problem.y_low * e.transpose();
        let yh_term = problem.y_high.data() * problem.er.transpose() * (cfg.lambda1 / cfg.rho);
        Ok(Self {
            problem,
            cfg: cfg.clone(),
            pre,
            yl_et,
            yh_term,
            dense: None,
        })
    }

    /// Same iteration with the X-update assembled and solved densely.
    pub fn with_dense_x_update(mut self) -> Result<Self> {
        self.dense = Some(oracle::DenseXSystem::new(
            self.problem.grid(),
            &self.problem.ops.blur,
            self.problem.bank.filters(),
        )?);
        Ok(self)
    }

    pub fn problem(&self) -> &FusionProblem {
        &self.problem
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn precomputed(&self) -> &Precomputed {
        &self.pre
    }

    pub fn zero_state(&self) -> AdmmState {
        AdmmState::zeros(self.problem.grid(), self.problem.ops.dim(), self.problem.bank.len())
    }

    /// `P1 = B X0`, `P2 = X0`, `Q = D X0`, zero duals.
    pub fn consistent_state(&self, x0: MultibandImage) -> Result<AdmmState> {
        self.problem.check_x(&x0)?;
        let filters = self.problem.bank.filters();
        Ok(AdmmState {
            p1: self.problem.ops.blur.apply(&x0),
            p2: x0.clone(),
            q: filters.par_iter().map(|f| filter_image(f, &x0)).collect(),
            dual1: MultibandImage::zeros(x0.grid(), x0.bands()),
            dual2: MultibandImage::zeros(x0.grid(), x0.bands()),
            sigma: vec![MultibandImage::zeros(x0.grid(), x0.bands()); filters.len()],
            x: x0,
            iter: 0,
        })
    }

    pub fn initial_state(&self) -> Result<AdmmState> {
        let grid = self.problem.grid();
        let ls = self.problem.ops.dim();
        match self.cfg.init {
            InitMode::Zero => Ok(self.zero_state()),
            InitMode::Upsampled => {
                let guess = initial_guess(&self.problem.y_low, &self.problem.ops)?;
                let x0 = self.problem.ops.subspace.project(&guess)?;
                self.consistent_state(x0)
            }
            InitMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                let x0 = MultibandImage::from_fn(grid, ls, |_, _, _| rng.random::<f64>());
                self.consistent_state(x0)
            }
        }
    }

    /// `C = B^T (P1 + Lambda1) + P2 + Lambda2 + sum D^T (Q + Sigma)`.
    pub fn rhs(&self, s: &AdmmState) -> MultibandImage {
        let mut a = s.p1.clone();
        *a.data_mut() += s.dual1.data();
        let mut c = self.problem.ops.blur.apply_adjoint(&a);
        *c.data_mut() += s.p2.data();
        *c.data_mut() += s.dual2.data();
        accumulate_filter_adjoints(self.problem.bank.filters(), &s.q, &s.sigma, &mut c, self.cfg.deterministic);
        c
    }

    pub fn x_update(&self, s: &AdmmState) -> Result<MultibandImage> {
        match &self.dense {
            Some(d) => d.x_update(s),
            None => self.pre.plan.solve(&self.rhs(s)),
        }
    }

    fn p1_from(&self, bx: &MultibandImage, dual1: &MultibandImage) -> MultibandImage {
        let rho = self.cfg.rho;
        let mut v = bx.clone();
        *v.data_mut() -= dual1.data();
        let kept = self.problem.ops.mask.kept();
        if kept.is_empty() {
            return v;
        }
        let ls = v.bands();
        let data = v.data();
        let a = DMatrix::from_fn(kept.len(), ls, |r, c| rho * data[(kept[r], c)] + self.yl_et[(r, c)]);
        let sol = a * &self.pre.eet_inv;
        let data = v.data_mut();
        for (r, &i) in kept.iter().enumerate() {
            for c in 0..ls {
                data[(i, c)] = sol[(r, c)];
            }
        }
        v
    }

    /// On the mask `(rho V + S^T Y_l E^T)(E E^T + rho I)^{-1}`, elsewhere `V`,
    /// with `V = B X - Lambda1`.
    pub fn p1_update(&self, s: &AdmmState) -> MultibandImage {
        self.p1_from(&self.problem.ops.blur.apply(&s.x), &s.dual1)
    }

    /// `(X - Lambda2 + lambda1/rho Y_h R^T E^T) F`.
    pub fn p2_update(&self, s: &AdmmState) -> MultibandImage {
        let v = s.x.data() - s.dual2.data() + &self.yh_term;
        MultibandImage::from_matrix_unchecked(s.x.grid(), v * &self.pre.f_matrix)
    }

    fn update_q(&self, s: &mut AdmmState) -> [f64; 3] {
        let per = self.problem.bank.patch_size();
        if self.problem.bank.is_empty() {
            return [0.0; 3];
        }
        let grid = s.x.grid();
        let x = &s.x;
        let weights = &self.problem.weights;
        let scale = self.cfg.lambda2 / self.cfg.rho;
        let penalty = self.problem.penalty;
        let parts: Vec<[f64; 3]> = s
            .q
            .par_chunks_mut(per)
            .zip(s.sigma.par_chunks(per))
            .zip(self.problem.bank.filters().par_chunks(per))
            .enumerate()
            .map(|(sh, ((qb, sb), fb))| {
                let old: Vec<MultibandImage> = qb.to_vec();
                for ((q, sig), f) in qb.iter_mut().zip(sb).zip(fb) {
                    for c in 0..x.bands() {
                        apply_band(f, grid, x.band(c), q.band_mut(c));
                    }
                    for (v, sv) in q.as_mut_slice().iter_mut().zip(sig.as_slice()) {
                        *v -= sv;
                    }
                }
                if scale > 0.0 {
                    penalty.prox_block(qb, weights.column(sh), scale);
                }
                old.iter()
                    .zip(qb.iter())
                    .fold([0.0; 3], |acc, (o, q)| add3(acc, change(o.as_slice(), q.as_slice())))
            })
            .collect();
        parts.into_iter().fold([0.0; 3], add3)
    }

    /// Prox of `D X - Sigma` per shift block.
    pub fn q_update(&self, s: &AdmmState) -> Vec<MultibandImage> {
        let mut tmp = s.clone();
        self.update_q(&mut tmp);
        tmp.q
    }

    fn update_duals(&self, s: &mut AdmmState, bx: &MultibandImage) -> DualStats {
        let (mut n1, mut a1, mut b1) = (0.0, 0.0, 0.0);
        for ((l, b), p) in s.dual1.as_mut_slice().iter_mut().zip(bx.as_slice()).zip(s.p1.as_slice()) {
            let r = b - p;
            *l -= r;
            n1 += r * r;
            a1 += b * b;
            b1 += p * p;
        }
        let (mut n2, mut a2, mut b2) = (0.0, 0.0, 0.0);
        for ((l, x), p) in s.dual2.as_mut_slice().iter_mut().zip(s.x.as_slice()).zip(s.p2.as_slice()) {
            let r = x - p;
            *l -= r;
            n2 += r * r;
            a2 += x * x;
            b2 += p * p;
        }
        let per = self.problem.bank.patch_size();
        let weights = &self.problem.weights;
        let penalty = self.problem.penalty;
        let x = &s.x;
        let blocks: Vec<[f64; 5]> = if self.problem.bank.is_empty() {
            Vec::new()
        } else {
            s.sigma
                .par_chunks_mut(per)
                .zip(s.q.par_chunks(per))
                .zip(self.problem.bank.filters().par_chunks(per))
                .enumerate()
                .map(|(sh, ((sb, qb), fb))| {
                    let mut dx_block = Vec::with_capacity(per);
                    let (mut rn, mut dn, mut qn, mut sn) = (0.0, 0.0, 0.0, 0.0);
                    for ((sig, q), f) in sb.iter_mut().zip(qb).zip(fb) {
                        let dx = filter_image(f, x);
                        for ((sv, d), qv) in sig.as_mut_slice().iter_mut().zip(dx.as_slice()).zip(q.as_slice()) {
                            let r = d - qv;
                            *sv -= r;
                            rn += r * r;
                            dn += d * d;
                            qn += qv * qv;
                            sn += *sv * *sv;
                        }
                        dx_block.push(dx);
                    }
                    [rn, dn, qn, sn, penalty.block_value(&dx_block, weights.column(sh))]
                })
                .collect()
        };
        let mut tot = [0.0; 5];
        for b in &blocks {
            for (t, v) in tot.iter_mut().zip(b) {
                *t += v;
            }
        }
        DualStats {
            r1: relative(n1, a1, b1),
            r2: relative(n2, a2, b2),
            r3: relative(tot[0], tot[1], tot[2]),
            penalty: tot[4],
            q_finite: tot[2].is_finite(),
            sigma_finite: tot[3].is_finite() && (n1 + n2).is_finite(),
        }
    }

    /// `Lambda1 -= B X - P1`, `Lambda2 -= X - P2`, `Sigma -= D X - Q`.
    pub fn dual_update(&self, s: &mut AdmmState) {
        let bx = self.problem.ops.blur.apply(&s.x);
        self.update_duals(s, &bx);
    }

    /// One full iteration.
    pub fn step(&self, s: &mut AdmmState) -> Result<IterationRecord> {
        let iter = s.iter + 1;
        let non_finite = |block| FusionError::NonFinite { iter, block };

        let t = Instant::now();
        s.x = self.x_update(s)?;
        if !s.x.is_finite() {
            return Err(non_finite("X"));
        }
        let x_ms = elapsed_ms(t);

        let t = Instant::now();
        let bx = self.problem.ops.blur.apply(&s.x);
        let p1 = self.p1_from(&bx, &s.dual1);
        let mut moved = change(s.p1.as_slice(), p1.as_slice());
        s.p1 = p1;
        if !s.p1.is_finite() {
            return Err(non_finite("P1"));
        }
        let p1_ms = elapsed_ms(t);

        let t = Instant::now();
        let p2 = self.p2_update(s);
        moved = add3(moved, change(s.p2.as_slice(), p2.as_slice()));
        s.p2 = p2;
        if !s.p2.is_finite() {
            return Err(non_finite("P2"));
        }
        let p2_ms = elapsed_ms(t);

        let t = Instant::now();
        moved = add3(moved, self.update_q(s));
        let q_ms = elapsed_ms(t);

        let t = Instant::now();
        let stats = self.update_duals(s, &bx);
        if !stats.q_finite {
            return Err(non_finite("Q"));
        }
        if !stats.sigma_finite {
            return Err(non_finite("duals"));
        }
        let dual_ms = elapsed_ms(t);
        s.iter = iter;

        let (low, high) = self.problem.data_terms(&s.x)?;
        let objective = low + self.cfg.lambda1 * high + self.cfg.lambda2 * stats.penalty;
        if !objective.is_finite() {
            return Err(non_finite("objective"));
        }
        Ok(IterationRecord {
            iter,
            objective,
            r1: stats.r1,
            r2: stats.r2,
            r3: stats.r3,
            dual: relative(moved[0], moved[1], moved[2]),
            x_ms,
            p1_ms,
            p2_ms,
            q_ms,
            dual_ms,
        })
    }

    /// Iterate until every relative primal residual and the relative change
    /// of the split variables drop below their tolerances, or `max_iters`
    /// steps have run.
    pub fn run(&self, mut state: AdmmState) -> Result<FusionOutput> {
        let mut log = IterationLog::default();
        let mut converged = false;
        for _ in 0..self.cfg.max_iters {
            let rec = self.step(&mut state)?;
            log.push(rec);
            if rec.converged(self.cfg.tol_primal, self.cfg.tol_dual) {
                converged = true;
                break;
            }
        }
        if let Some(last) = log.last() {
            log::info!(
                "stopped after {} iterations, objective {:.6e}, max residual {:.3e}",
                last.iter,
                last.objective,
                last.max_residual()
            );
        }
        let z = self.problem.ops.subspace.lift(&state.x)?;
        Ok(FusionOutput {
            x: state.x.clone(),
            z,
            log,
            converged,
            state,
        })
    }

    /// Current relative primal residuals `(r1, r2, r3)`.
    pub fn residuals(&self, s: &AdmmState) -> (f64, f64, f64) {
        let bx = self.problem.ops.blur.apply(&s.x);
        let mut probe = s.clone();
        let stats = self.update_duals(&mut probe, &bx);
        (stats.r1, stats.r2, stats.r3)
    }

    /// Value of the augmented Lagrangian at `s`.
    pub fn augmented_lagrangian(&self, s: &AdmmState) -> Result<f64> {
        let p = &self.problem;
        let rho = self.cfg.rho;
        let e = p.ops.subspace.matrix();
        let low = (p.ops.mask.downsample(&s.p1)? * e - &p.y_low).norm_squared() / 2.0;
        let high = (s.p2.data() * &p.er - p.y_high.data()).norm_squared() / 2.0;
        let per = p.bank.patch_size();
        let g: f64 = if p.bank.is_empty() {
            0.0
        } else {
            s.q.chunks(per)
                .enumerate()
                .map(|(sh, qb)| p.penalty.block_value(qb, p.weights.column(sh)))
                .sum()
        };
        let bx = p.ops.blur.apply(&s.x);
        let t1 = (s.p1.data() - bx.data() + s.dual1.data()).norm_squared();
        let t2 = (s.p2.data() - s.x.data() + s.dual2.data()).norm_squared();
        let t3: f64 = p
            .bank
            .filters()
            .iter()
            .zip(s.q.iter().zip(&s.sigma))
            .map(|(f, (q, sig))| {
                let dx = filter_image(f, &s.x);
                (q.data() - dx.data() + sig.data()).norm_squared()
            })
            .sum();
        Ok(low + p.lambda1 * high + p.lambda2 * g + rho / 2.0 * (t1 + t2 + t3))
    }
}

/// Weights for `cfg`: guided from `guide`, or all ones.
pub fn build_weights(guide: &MultibandImage, cfg: &SolverConfig) -> Result<NlprWeights> {
    let bank = cfg.filter_bank();
    let w = match cfg.weight_mode {
        WeightMode::Guided => compute_weights(guide, bank.shifts(), cfg.weight_patch(), cfg.h)?,
        WeightMode::Unit => NlprWeights::unit(guide.grid(), bank.shifts()),
    };
    Ok(if cfg.weight_floor > 0.0 {
        w.pruned(cfg.weight_floor)
    } else {
        w
    })
}

/// Run the solver from the initialization selected in `cfg`.
pub fn solve(
    y_low: &DMatrix<f64>,
    y_high: &MultibandImage,
    ops: &FusionOperators,
    weights: &NlprWeights,
    cfg: &SolverConfig,
) -> Result<FusionOutput> {
    let problem = FusionProblem::new(y_low.clone(), y_high.clone(), ops.clone(), weights.clone(), cfg)?;
    let admm = Admm::new(problem, cfg)?;
    let state = admm.initial_state()?;
    admm.run(state)
}

/// Subspace from `Y_l`, weights from `Y_h`, then [`solve`].
///
/// `subspace_dim` is capped at the number of observed bands.
pub fn fuse(
    y_low: &DMatrix<f64>,
    y_high: &MultibandImage,
    blur: BlurFilter,
    mask: SamplingMask,
    response: SpectralResponse,
    cfg: &SolverConfig,
) -> Result<FusionOutput> {
    let dim = cfg.subspace_dim.min(y_low.ncols()).min(y_low.nrows());
    if dim < cfg.subspace_dim {
        log::warn!("subspace dimension reduced from {} to {dim}", cfg.subspace_dim);
    }
    let subspace = build_subspace(y_low, dim)?;
    let ops = FusionOperators::new(blur, mask, response, subspace)?;
    let weights = build_weights(y_high, cfg)?;
    solve(y_low, y_high, &ops, &weights, cfg)
}
