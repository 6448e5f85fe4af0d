//! Periodic image domain and the multiband image container.
//!
//! Pixels are linearized row-major: pixel `(r, c)` lives at row `r * q + c`
//! of the `n_h x L` data matrix. Every index computation wraps modulo the
//! grid on both axes.

use std::fmt;
use std::ops::Neg;

use nalgebra::DMatrix;

use crate::error::{invalid, shape, FusionError, Result};

/// A `p x q` periodic pixel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    p: usize,
    q: usize,
}

impl Grid {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(invalid("grid", format!("dimensions must be positive, got {p}x{q}")));
        }
        Ok(Self { p, q })
    }

    /// Row count.
    pub fn rows(&self) -> usize {
        self.p
    }

    /// Column count.
    pub fn cols(&self) -> usize {
        self.q
    }

    /// Pixel count `n_h = p * q`.
    pub fn len(&self) -> usize {
        self.p * self.q
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.p && col < self.q);
        row * self.q + col
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.q, index % self.q)
    }

    /// Linear index of `(row, col)` reduced modulo the grid.
    pub fn wrap(&self, row: isize, col: isize) -> usize {
        let r = row.rem_euclid(self.p as isize) as usize;
        let c = col.rem_euclid(self.q as isize) as usize;
        r * self.q + c
    }

    /// Linear index of `pixel - offset` with periodic wrap.
    pub fn displaced(&self, pixel: (usize, usize), offset: Offset) -> usize {
        self.wrap(
            pixel.0 as isize - offset.row,
            pixel.1 as isize - offset.col,
        )
    }

    pub(crate) fn check(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(FusionError::GridMismatch {
                expected: self.to_string(),
                found: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.p, self.q)
    }
}

/// An integer displacement on the grid, used both for search-window shifts
/// and for in-patch offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Offset {
    pub row: isize,
    pub col: isize,
}

impl Offset {
    pub const ZERO: Offset = Offset { row: 0, col: 0 };

    pub const fn new(row: isize, col: isize) -> Self {
        Self { row, col }
    }

    pub fn is_zero(&self) -> bool {
        self.row == 0 && self.col == 0
    }

    /// True when the offset is a multiple of the grid period on both axes.
    pub fn vanishes_on(&self, grid: &Grid) -> bool {
        self.row.rem_euclid(grid.p as isize) == 0 && self.col.rem_euclid(grid.q as isize) == 0
    }
}

impl std::ops::Add for Offset {
    type Output = Offset;
    fn add(self, rhs: Offset) -> Offset {
        Offset::new(self.row + rhs.row, self.col + rhs.col)
    }
}

impl Neg for Offset {
    type Output = Offset;
    fn neg(self) -> Offset {
        Offset::new(-self.row, -self.col)
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// A multiband image bound to a periodic grid.
///
/// Stored as an `n_h x L` column-major matrix so that each band is a
/// contiguous row-major `p x q` slice.
#[derive(Clone, Debug, PartialEq)]
pub struct MultibandImage {
    grid: Grid,
    data: DMatrix<f64>,
}

impl MultibandImage {
    pub fn new(grid: Grid, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(shape("image rows", grid.len(), data.nrows()));
        }
        if data.ncols() == 0 {
            return Err(invalid("bands", "an image needs at least one band"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data", "image entries must be finite"));
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid, bands: usize) -> Self {
        Self {
            grid,
            data: DMatrix::zeros(grid.len(), bands),
        }
    }

    /// Build from a function of `(row, col, band)`.
    pub fn from_fn(grid: Grid, bands: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let n = grid.len();
        let data = DMatrix::from_fn(n, bands, |i, c| {
            let (r, col) = grid.coords(i);
            f(r, col, c)
        });
        Self { grid, data }
    }

    /// Build from band-major samples (band 0 first, each band row-major).
    pub fn from_band_major(grid: Grid, bands: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.len() * bands {
            return Err(shape("band-major samples", grid.len() * bands, samples.len()));
        }
        Self::new(grid, DMatrix::from_vec(grid.len(), bands, samples))
    }

    /// Wrap a matrix without the finiteness scan. Rows must match the grid.
    pub(crate) fn from_matrix_unchecked(grid: Grid, data: DMatrix<f64>) -> Self {
        debug_assert_eq!(data.nrows(), grid.len());
        Self { grid, data }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn bands(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Band `c` as a row-major `p x q` slice.
    pub fn band(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data.as_slice()[c * n..(c + 1) * n]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.data.as_mut_slice()[c * n..(c + 1) * n]
    }

    /// All samples, band-major.
    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_mut_slice()
    }

    pub fn get(&self, pixel: (usize, usize), band: usize) -> f64 {
        self.data[(self.grid.index(pixel.0, pixel.1), band)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn dot(&self, other: &MultibandImage) -> f64 {
        self.data.dot(&other.data)
    }

    pub(crate) fn check_like(&self, other: &MultibandImage) -> Result<()> {
        self.grid.check(&other.grid)?;
        if self.bands() != other.bands() {
            return Err(shape("band count", self.bands(), other.bands()));
        }
        Ok(())
    }

    /// Circular shift: `out(i, c) = self(i - offset, c)`.
    pub fn shift(&self, offset: Offset) -> MultibandImage {
        let mut out = MultibandImage::zeros(self.grid, self.bands());
        for c in 0..self.bands() {
            copy_shifted(self.band(c), self.grid, offset, out.band_mut(c));
        }
        out
    }
}

/// `out(i) = src(i - offset)` on one band.
pub(crate) fn copy_shifted(src: &[f64], grid: Grid, offset: Offset, out: &mut [f64]) {
    let (p, q) = (grid.rows(), grid.cols());
    let s = offset.col.rem_euclid(q as isize) as usize;
    for r in 0..p {
        let sr = (r as isize - offset.row).rem_euclid(p as isize) as usize;
        let src_row = &src[sr * q..(sr + 1) * q];
        let dst_row = &mut out[r * q..(r + 1) * q];
        dst_row[s..].copy_from_slice(&src_row[..q - s]);
        dst_row[..s].copy_from_slice(&src_row[q - s..]);
    }
}

/// `out(i) += alpha * src(i - offset)` on one band.
pub(crate) fn add_shifted(src: &[f64], grid: Grid, offset: Offset, alpha: f64, out: &mut [f64]) {
    let (p, q) = (grid.rows(), grid.cols());
    let s = offset.col.rem_euclid(q as isize) as usize;
    for r in 0..p {
        let sr = (r as isize - offset.row).rem_euclid(p as isize) as usize;
        let src_row = &src[sr * q..(sr + 1) * q];
        let dst_row = &mut out[r * q..(r + 1) * q];
        for (d, v) in dst_row[s..].iter_mut().zip(&src_row[..q - s]) {
            *d += alpha * v;
        }
        for (d, v) in dst_row[..s].iter_mut().zip(&src_row[q - s..]) {
            *d += alpha * v;
        }
    }
}

/// Free-function form of [`MultibandImage::shift`].
pub fn shift(img: &MultibandImage, offset: Offset) -> MultibandImage {
    img.shift(offset)
}

/// Square patch of radius `K`, i.e. `(2K+1) x (2K+1)` pixels.
///
/// Patch vectors are ordered band-outermost, then offset row, then offset
/// column, with offsets running from `-K` to `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub radius: usize,
}

impl PatchSpec {
    pub fn new(radius: usize) -> Self {
        Self { radius }
    }

    /// Offsets `k` in `[-K, K]^2`, lexicographic in `(row, col)`.
    pub fn offsets(&self) -> Vec<Offset> {
        let k = self.radius as isize;
        (-k..=k)
            .flat_map(|r| (-k..=k).map(move |c| Offset::new(r, c)))
            .collect()
    }

    /// Number of pixels in a patch, `|P|`.
    pub fn size(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }

    pub fn vector_len(&self, bands: usize) -> usize {
        self.size() * bands
    }
}

/// Patch vector around `pixel`: entries `X_c(i - k)` in [`PatchSpec`] order.
pub fn extract_patch(img: &MultibandImage, pixel: (usize, usize), spec: PatchSpec) -> Vec<f64> {
    let grid = img.grid();
    let offsets = spec.offsets();
    let mut out = Vec::with_capacity(spec.vector_len(img.bands()));
    for c in 0..img.bands() {
        let band = img.band(c);
        out.extend(offsets.iter().map(|&k| band[grid.displaced(pixel, k)]));
    }
    out
}

/// Difference of the patches around `pixel` and `pixel - tau`.
pub fn patch_difference(
    img: &MultibandImage,
    pixel: (usize, usize),
    tau: Offset,
    spec: PatchSpec,
) -> Vec<f64> {
    let grid = img.grid();
    let other = grid.coords(grid.displaced(pixel, tau));
    extract_patch(img, pixel, spec)
        .into_iter()
        .zip(extract_patch(img, other, spec))
        .map(|(a, b)| a - b)
        .collect()
}
