//! Degradation operators (blur, sampling, spectral response, subspace) and
//! the two-tap patch-difference filters.
//!
//! Blur and difference filters are applied in the spatial domain through
//! modular shifts. The Fourier domain is only used by [`crate::frequency`].

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, shape, FusionError, Result};
use crate::grid::{add_shifted, copy_shifted, Grid, MultibandImage, Offset, PatchSpec};

/// A shift-invariant blur on the periodic grid, stored as sparse taps.
///
/// `apply` computes `out(i) = sum_j b(j) x(i - j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurFilter {
    taps: Vec<(Offset, f64)>,
    normalized: bool,
}

impl BlurFilter {
    pub fn identity() -> Self {
        Self {
            taps: vec![(Offset::ZERO, 1.0)],
            normalized: true,
        }
    }

    /// The separable B3-spline kernel, outer product of `[1, 4, 6, 4, 1] / 16`.
    pub fn starck_murtagh() -> Self {
        const W: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
        let mut taps = Vec::with_capacity(25);
        for (a, wa) in W.iter().enumerate() {
            for (b, wb) in W.iter().enumerate() {
                taps.push((Offset::new(a as isize - 2, b as isize - 2), wa * wb / 256.0));
            }
        }
        Self {
            taps,
            normalized: true,
        }
    }

    /// Isotropic Gaussian truncated at `radius` (default `ceil(3 sigma)`),
    /// normalized to unit DC gain.
    pub fn gaussian(sigma: f64, radius: Option<usize>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        let r = radius.unwrap_or((3.0 * sigma).ceil() as usize) as isize;
        let mut taps = Vec::new();
        for a in -r..=r {
            for b in -r..=r {
                let d2 = (a * a + b * b) as f64;
                taps.push((Offset::new(a, b), (-d2 / (2.0 * sigma * sigma)).exp()));
            }
        }
        Self::from_taps(taps, true)
    }

    /// Arbitrary taps. With `normalize`, taps are rescaled to sum to one.
    pub fn from_taps(mut taps: Vec<(Offset, f64)>, normalize: bool) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("blur taps", "at least one tap is required"));
        }
        if taps.iter().any(|(_, w)| !w.is_finite()) {
            return Err(invalid("blur taps", "taps must be finite"));
        }
        if normalize {
            let sum: f64 = taps.iter().map(|(_, w)| w).sum();
            if sum == 0.0 {
                return Err(invalid("blur taps", "cannot normalize a zero-sum kernel"));
            }
            for (_, w) in &mut taps {
                *w /= sum;
            }
        }
        Ok(Self {
            taps,
            normalized: normalize,
        })
    }

    pub fn taps(&self) -> &[(Offset, f64)] {
        &self.taps
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// The adjoint filter: taps mirrored through the origin.
    pub fn flipped(&self) -> BlurFilter {
        Self {
            taps: self.taps.iter().map(|&(o, w)| (-o, w)).collect(),
            normalized: self.normalized,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.taps.iter().all(|(o, w)| if o.is_zero() { *w == 1.0 } else { *w == 0.0 })
    }

    /// Kernel sampled on `grid` (taps wrapped and summed), row-major.
    pub fn kernel_on(&self, grid: Grid) -> Vec<f64> {
        let mut k = vec![0.0; grid.len()];
        for &(o, w) in &self.taps {
            k[grid.wrap(o.row, o.col)] += w;
        }
        k
    }

    pub fn apply(&self, img: &MultibandImage) -> MultibandImage {
        convolve_taps(&self.taps, img, 1)
    }

    pub fn apply_adjoint(&self, img: &MultibandImage) -> MultibandImage {
        convolve_taps(&self.taps, img, -1)
    }
}

fn convolve_taps(taps: &[(Offset, f64)], img: &MultibandImage, dir: isize) -> MultibandImage {
    let grid = img.grid();
    let mut out = MultibandImage::zeros(grid, img.bands());
    for c in 0..img.bands() {
        let src = img.band(c);
        let dst = out.band_mut(c);
        for &(o, w) in taps {
            let o = Offset::new(dir * o.row, dir * o.col);
            add_shifted(src, grid, o, w, dst);
        }
    }
    out
}

pub fn apply_blur(blur: &BlurFilter, img: &MultibandImage) -> MultibandImage {
    blur.apply(img)
}

pub fn apply_blur_adjoint(blur: &BlurFilter, img: &MultibandImage) -> MultibandImage {
    blur.apply_adjoint(img)
}

/// Spatial sampling operator `S` given by a 0/1 mask on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    grid: Grid,
    mask: Vec<bool>,
    kept: Vec<usize>,
    factor: Option<usize>,
}

impl SamplingMask {
    /// Every pixel sampled.
    pub fn full(grid: Grid) -> Self {
        Self {
            grid,
            mask: vec![true; grid.len()],
            kept: (0..grid.len()).collect(),
            factor: Some(1),
        }
    }

    /// Regular decimation keeping pixels `(d*a, d*b)`.
    pub fn decimation(grid: Grid, factor: usize) -> Result<Self> {
        if factor == 0 || grid.rows() % factor != 0 || grid.cols() % factor != 0 {
            return Err(invalid(
                "factor",
                format!("decimation factor {factor} must divide grid {grid}"),
            ));
        }
        let mut mask = vec![false; grid.len()];
        let mut kept = Vec::with_capacity(grid.len() / (factor * factor));
        for r in (0..grid.rows()).step_by(factor) {
            for c in (0..grid.cols()).step_by(factor) {
                let i = grid.index(r, c);
                mask[i] = true;
                kept.push(i);
            }
        }
        Ok(Self {
            grid,
            mask,
            kept,
            factor: Some(factor),
        })
    }

    /// Arbitrary mask; kept pixels are listed in increasing index order.
    pub fn from_mask(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(shape("sampling mask", grid.len(), mask.len()));
        }
        let kept = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Ok(Self {
            grid,
            mask,
            kept,
            factor: None,
        })
    }

    /// Uniformly random mask keeping `round(fraction * n_h)` pixels.
    pub fn random<R: Rng + ?Sized>(grid: Grid, fraction: f64, rng: &mut R) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(invalid("mask_fraction", format!("must lie in (0, 1], got {fraction}")));
        }
        let count = (fraction * grid.len() as f64).round() as usize;
        if count == 0 {
            return Err(FusionError::EmptyMask);
        }
        let mut mask = vec![false; grid.len()];
        for i in sample(rng, grid.len(), count) {
            mask[i] = true;
        }
        Self::from_mask(grid, mask)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// `n_l`, the number of sampled pixels.
    pub fn kept_len(&self) -> usize {
        self.kept.len()
    }

    pub fn factor(&self) -> Option<usize> {
        self.factor
    }

    /// Low-resolution grid for regular decimation.
    pub fn low_grid(&self) -> Option<Grid> {
        self.factor
            .and_then(|d| Grid::new(self.grid.rows() / d, self.grid.cols() / d).ok())
    }

    /// `S x`: rows of the image at the kept pixels, in order.
    pub fn downsample(&self, img: &MultibandImage) -> Result<DMatrix<f64>> {
        self.grid.check(&img.grid())?;
        let data = img.data();
        Ok(DMatrix::from_fn(self.kept.len(), img.bands(), |r, c| {
            data[(self.kept[r], c)]
        }))
    }

    /// `S^T y`: zero image with the observation rows scattered to kept pixels.
    pub fn upsample_adjoint(&self, obs: &DMatrix<f64>) -> Result<MultibandImage> {
        if obs.nrows() != self.kept.len() {
            return Err(shape("observation rows", self.kept.len(), obs.nrows()));
        }
        let mut out = DMatrix::zeros(self.grid.len(), obs.ncols());
        for (r, &i) in self.kept.iter().enumerate() {
            for c in 0..obs.ncols() {
                out[(i, c)] = obs[(r, c)];
            }
        }
        MultibandImage::new(self.grid, out)
    }

    /// `S^T S x`: the image zeroed off the mask.
    pub fn project(&self, img: &MultibandImage) -> Result<MultibandImage> {
        self.grid.check(&img.grid())?;
        let mut out = img.clone();
        for c in 0..out.bands() {
            for (v, &m) in out.band_mut(c).iter_mut().zip(&self.mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }
}

pub fn downsample(mask: &SamplingMask, img: &MultibandImage) -> Result<DMatrix<f64>> {
    mask.downsample(img)
}

pub fn upsample_adjoint(mask: &SamplingMask, obs: &DMatrix<f64>) -> Result<MultibandImage> {
    mask.upsample_adjoint(obs)
}

/// Spectral response `R` (`L_l x L_h`) mapping the fine spectrum to the
/// coarse bands of the high-resolution observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResponse {
    matrix: DMatrix<f64>,
}

impl SpectralResponse {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(invalid("response", "matrix must be non-empty"));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("response", "entries must be finite and nonnegative"));
        }
        Ok(Self { matrix })
    }

    pub fn identity(bands: usize) -> Self {
        Self {
            matrix: DMatrix::identity(bands, bands),
        }
    }

    /// Broad Gaussian sensitivity curves: coarse band `j` is centered at
    /// fine band `(j + 0.5) L_l / L_h`. Columns sum to one.
    pub fn gaussian_bands(fine: usize, coarse: usize) -> Result<Self> {
        if fine == 0 || coarse == 0 || coarse > fine {
            return Err(invalid(
                "response",
                format!("need 0 < coarse bands ({coarse}) <= fine bands ({fine})"),
            ));
        }
        let spacing = fine as f64 / coarse as f64;
        let width = 0.6 * spacing.max(1.0);
        let mut m = DMatrix::from_fn(fine, coarse, |l, j| {
            let center = (j as f64 + 0.5) * spacing - 0.5;
            let d = (l as f64 - center) / width;
            (-0.5 * d * d).exp()
        });
        for mut col in m.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Fine band count `L_l`.
    pub fn fine_bands(&self) -> usize {
        self.matrix.nrows()
    }

    /// Coarse band count `L_h`.
    pub fn coarse_bands(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Row basis `E` (`L_s x L_l`) of the spectral subspace, `Z = X E`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    matrix: DMatrix<f64>,
    orthonormal_rows: bool,
    rank_deficient: bool,
    singular_values: Vec<f64>,
}

impl SubspaceBasis {
    pub fn identity(bands: usize) -> Self {
        Self {
            matrix: DMatrix::identity(bands, bands),
            orthonormal_rows: true,
            rank_deficient: false,
            singular_values: Vec::new(),
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.nrows() > matrix.ncols() {
            return Err(invalid(
                "subspace",
                format!("need 0 < L_s <= L_l, got {}x{}", matrix.nrows(), matrix.ncols()),
            ));
        }
        let gram = &matrix * matrix.transpose();
        let orthonormal_rows = (gram - DMatrix::identity(matrix.nrows(), matrix.nrows())).amax() < 1e-12;
        Ok(Self {
            matrix,
            orthonormal_rows,
            rank_deficient: false,
            singular_values: Vec::new(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `L_s`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L_l`.
    pub fn ambient(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn has_orthonormal_rows(&self) -> bool {
        self.orthonormal_rows
    }

    /// Set when the data had numerical rank below `L_s`.
    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// All singular values of the data, descending (empty unless built by SVD).
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Lift subspace coefficients to the full spectrum: `X E`.
    pub fn lift(&self, x: &MultibandImage) -> Result<MultibandImage> {
        if x.bands() != self.dim() {
            return Err(shape("subspace coefficients", self.dim(), x.bands()));
        }
        Ok(MultibandImage::from_matrix_unchecked(
            x.grid(),
            x.data() * &self.matrix,
        ))
    }

    /// Coefficients of an image in the subspace: `Z E^T`.
    pub fn project(&self, z: &MultibandImage) -> Result<MultibandImage> {
        if z.bands() != self.ambient() {
            return Err(shape("spectral bands", self.ambient(), z.bands()));
        }
        Ok(MultibandImage::from_matrix_unchecked(
            z.grid(),
            z.data() * self.matrix.transpose(),
        ))
    }
}

/// Top-`L_s` right singular vectors of `Y_l` as the rows of `E`.
pub fn build_subspace(observed: &DMatrix<f64>, dim: usize) -> Result<SubspaceBasis> {
    let (n, l) = observed.shape();
    if dim == 0 || dim > n.min(l) {
        return Err(invalid(
            "subspace_dim",
            format!("must lie in [1, {}], got {dim}", n.min(l)),
        ));
    }
    let svd = observed.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| FusionError::Format("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let mut e = DMatrix::zeros(dim, l);
    for (row, &src) in order.iter().take(dim).enumerate() {
        let mut v = v_t.row(src).clone_owned();
        // sign convention: largest-magnitude entry positive
        let pivot = (0..v.len())
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        e.set_row(row, &v);
    }
    let top = singular_values[0];
    let rank_deficient = top == 0.0 || singular_values[dim - 1] <= 1e-12 * top;
    if rank_deficient {
        log::warn!("observed data has numerical rank below the requested subspace dimension {dim}");
    }
    Ok(SubspaceBasis {
        matrix: e,
        orthonormal_rows: true,
        rank_deficient,
        singular_values,
    })
}

/// Two-tap filter `d_{tau,k}`: `+1` at `k`, `-1` at `tau + k`.
///
/// `apply` computes `out(i) = x(i - k) - x(i - tau - k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DifferenceFilter {
    pub tau: Offset,
    pub k: Offset,
}

impl DifferenceFilter {
    pub fn new(tau: Offset, k: Offset) -> Self {
        Self { tau, k }
    }

    /// Dense taps on `grid`, row-major. All-zero when `tau` vanishes mod the grid.
    pub fn kernel_on(&self, grid: Grid) -> Vec<f64> {
        let mut d = vec![0.0; grid.len()];
        d[grid.wrap(self.k.row, self.k.col)] += 1.0;
        let t = self.tau + self.k;
        d[grid.wrap(t.row, t.col)] -= 1.0;
        d
    }

    pub fn apply(&self, img: &MultibandImage) -> MultibandImage {
        let mut out = MultibandImage::zeros(img.grid(), img.bands());
        self.apply_into(img, &mut out);
        out
    }

    /// `out = D x`, overwriting `out`.
    pub fn apply_into(&self, img: &MultibandImage, out: &mut MultibandImage) {
        let grid = img.grid();
        for c in 0..img.bands() {
            let (src, dst) = (img.band(c), out.band_mut(c));
            apply_band(self, grid, src, dst);
        }
    }

    pub fn apply_adjoint(&self, img: &MultibandImage) -> MultibandImage {
        let mut out = MultibandImage::zeros(img.grid(), img.bands());
        for c in 0..img.bands() {
            accumulate_adjoint_band(self, img.grid(), img.band(c), 1.0, out.band_mut(c));
        }
        out
    }
}

pub(crate) fn apply_band(f: &DifferenceFilter, grid: Grid, src: &[f64], dst: &mut [f64]) {
    copy_shifted(src, grid, f.k, dst);
    add_shifted(src, grid, f.tau + f.k, -1.0, dst);
}

/// `dst += alpha * D^T src` on one band.
pub(crate) fn accumulate_adjoint_band(
    f: &DifferenceFilter,
    grid: Grid,
    src: &[f64],
    alpha: f64,
    dst: &mut [f64],
) {
    add_shifted(src, grid, -f.k, alpha, dst);
    add_shifted(src, grid, -(f.tau + f.k), -alpha, dst);
}

pub fn apply_difference(filter: &DifferenceFilter, img: &MultibandImage) -> MultibandImage {
    filter.apply(img)
}

pub fn apply_difference_adjoint(filter: &DifferenceFilter, img: &MultibandImage) -> MultibandImage {
    filter.apply_adjoint(img)
}

/// Shape of the search window `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowShape {
    /// All shifts in `[-S, S]^2`.
    Square,
    /// Only horizontal and vertical shifts up to `S`.
    Axis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchWindow {
    pub radius: usize,
    pub shape: WindowShape,
    /// Keep `tau = (0, 0)`; its differences are identically zero.
    pub include_origin: bool,
}

impl SearchWindow {
    pub fn square(radius: usize) -> Self {
        Self {
            radius,
            shape: WindowShape::Square,
            include_origin: false,
        }
    }

    pub fn axis(radius: usize) -> Self {
        Self {
            radius,
            shape: WindowShape::Axis,
            include_origin: false,
        }
    }

    /// Shifts in lexicographic `(row, col)` order.
    pub fn shifts(&self) -> Vec<Offset> {
        let s = self.radius as isize;
        (-s..=s)
            .flat_map(|r| (-s..=s).map(move |c| Offset::new(r, c)))
            .filter(|t| match self.shape {
                WindowShape::Square => true,
                WindowShape::Axis => t.row == 0 || t.col == 0,
            })
            .filter(|t| self.include_origin || !t.is_zero())
            .collect()
    }
}

/// One filter per `(tau, k)` with `tau` in `[-S, S]^2 \ {0}` and `k` in
/// `[-K, K]^2`, ordered by `tau` then `k`.
pub fn build_difference_filters(search_radius: usize, patch_radius: usize) -> Vec<DifferenceFilter> {
    FilterBank::new(SearchWindow::square(search_radius), PatchSpec::new(patch_radius))
        .filters()
        .to_vec()
}

/// The full set of difference filters for a search window and patch.
///
/// Filter `j` belongs to shift `j / |P|` and patch offset `j % |P|`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    window: SearchWindow,
    patch: PatchSpec,
    shifts: Vec<Offset>,
    filters: Vec<DifferenceFilter>,
}

impl FilterBank {
    pub fn new(window: SearchWindow, patch: PatchSpec) -> Self {
        let shifts = window.shifts();
        let offsets = patch.offsets();
        let filters = shifts
            .iter()
            .flat_map(|&t| offsets.iter().map(move |&k| DifferenceFilter::new(t, k)))
            .collect();
        Self {
            window,
            patch,
            shifts,
            filters,
        }
    }

    pub fn window(&self) -> SearchWindow {
        self.window
    }

    pub fn patch(&self) -> PatchSpec {
        self.patch
    }

    pub fn shifts(&self) -> &[Offset] {
        &self.shifts
    }

    pub fn filters(&self) -> &[DifferenceFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// `|P|`.
    pub fn patch_size(&self) -> usize {
        self.patch.size()
    }

    /// Index into [`Self::shifts`] of filter `j`.
    pub fn shift_index(&self, j: usize) -> usize {
        j / self.patch.size()
    }

    /// Ensures no two taps collide on `grid`: `p, q > 2 (S + K)`.
    pub fn check_grid(&self, grid: Grid) -> Result<()> {
        let reach = 2 * (self.window.radius + self.patch.radius);
        if !self.filters.is_empty() && (grid.rows() <= reach || grid.cols() <= reach) {
            return Err(invalid(
                "grid",
                format!("grid {grid} too small for search radius {} and patch radius {}", self.window.radius, self.patch.radius),
            ));
        }
        Ok(())
    }
}
