//! Timing of the Fourier X-update against conjugate gradients on the
//! patch-operator system.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::frequency::FrequencyPlan;
use crate::grid::{Grid, MultibandImage, PatchSpec};
use crate::linops::{BlurFilter, FilterBank, SearchWindow};

use super::accumulate_filter_adjoints;
use super::oracle::{patch_adjoint_apply, patch_system_cg};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub p: usize,
    pub q: usize,
    pub n_h: usize,
    pub bands: usize,
    pub fast_ms: f64,
    pub dense_ms: f64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.dense_ms / self.fast_ms
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub search_radius: usize,
    pub patch_radius: usize,
    pub cg_iters: usize,
    /// Repetitions of the fast update; the minimum is reported.
    pub fast_reps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            search_radius: 1,
            patch_radius: 1,
            cg_iters: 50,
            fast_reps: 5,
            seed: 0,
        }
    }
}

/// Time one X-update on a random state both ways.
///
/// Fast: right-hand side through the difference filters, then the Fourier
/// solve with a precomputed plan. Slow: right-hand side through per-pixel
/// patch adjoints, then `cg_iters` conjugate-gradient steps on
/// `I + B^T B + sum P^T P`.
pub fn bench_x_update(p: usize, q: usize, bands: usize, opts: &BenchOptions) -> Result<BenchRow> {
    let grid = Grid::new(p, q)?;
    let bank = FilterBank::new(SearchWindow::square(opts.search_radius), PatchSpec::new(opts.patch_radius));
    bank.check_grid(grid)?;
    let blur = BlurFilter::starck_murtagh();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rand_img = || MultibandImage::from_fn(grid, bands, |_, _, _| rng.random_range(-1.0..1.0));
    let p1 = rand_img();
    let q_blocks: Vec<_> = (0..bank.len()).map(|_| rand_img()).collect();
    let sigma: Vec<_> = (0..bank.len()).map(|_| rand_img()).collect();
    let plan = FrequencyPlan::new(grid, &blur, bank.filters());

    let mut fast_ms = f64::INFINITY;
    let mut fast = None;
    for _ in 0..opts.fast_reps.max(1) {
        let t = Instant::now();
        let mut c = blur.apply_adjoint(&p1);
        accumulate_filter_adjoints(bank.filters(), &q_blocks, &sigma, &mut c, true);
        let x = plan.solve(&c)?;
        fast_ms = fast_ms.min(t.elapsed().as_secs_f64() * 1e3);
        fast = Some(x);
    }

    let t = Instant::now();
    let summed: Vec<MultibandImage> = q_blocks
        .iter()
        .zip(&sigma)
        .map(|(a, b)| MultibandImage::from_matrix_unchecked(grid, a.data() + b.data()))
        .collect();
    let mut c = patch_adjoint_apply(&summed, bank.shifts(), bank.patch(), grid, bands);
    *c.data_mut() += blur.apply_adjoint(&p1).data();
    let (slow, _) = patch_system_cg(&blur, bank.shifts(), bank.patch(), &c, opts.cg_iters, 0.0);
    let dense_ms = t.elapsed().as_secs_f64() * 1e3;

    if let Some(x) = fast {
        let rel = MultibandImage::from_matrix_unchecked(grid, x.data() - slow.data()).norm() / x.norm();
        log::debug!("{p}x{q}x{bands}: CG after {} iterations is {rel:.2e} from the Fourier solve", opts.cg_iters);
    }
    Ok(BenchRow {
        p,
        q,
        n_h: grid.len(),
        bands,
        fast_ms,
        dense_ms,
    })
}

pub const BENCH_HEADER: &str = "size,n_h,L_s,fast_ms,dense_ms,ratio";

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}x{},{},{},{:.4},{:.4},{:.2}",
            r.p,
            r.q,
            r.n_h,
            r.bands,
            r.fast_ms,
            r.dense_ms,
            r.ratio()
        );
    }
    out
}
