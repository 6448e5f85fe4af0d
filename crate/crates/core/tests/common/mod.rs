//! Slow, direct-loop references shared by the integration tests. Nothing
//! here calls into the library's numerical kernels; inputs are read through
//! the plain `MultibandImage` accessors only.

#![allow(dead_code)]

use nalgebra::DMatrix;
use nlpr::{Grid, MultibandImage, Offset};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rand_img(grid: Grid, bands: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> MultibandImage {
    MultibandImage::from_fn(grid, bands, |_, _, _| rng.random_range(lo..hi))
}

pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn wrap(n: usize, v: isize) -> usize {
    v.rem_euclid(n as isize) as usize
}

/// Row-major pixel index of `(r + dr, c + dc)` on the torus.
pub fn at(grid: Grid, r: usize, c: usize, dr: isize, dc: isize) -> usize {
    wrap(grid.rows(), r as isize + dr) * grid.cols() + wrap(grid.cols(), c as isize + dc)
}

/// Circulant matrix of `x -> sum_t w_t x(i - o_t)`.
pub fn convolution_matrix(grid: Grid, taps: &[(Offset, f64)]) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            for &(o, w) in taps {
                m[(r * grid.cols() + c, at(grid, r, c, -o.row, -o.col))] += w;
            }
        }
    }
    m
}

/// Convolution with the two-tap kernel `+1` at `k`, `-1` at `tau + k`.
pub fn difference_matrix(grid: Grid, tau: Offset, k: Offset) -> DMatrix<f64> {
    convolution_matrix(grid, &[(k, 1.0), (tau + k, -1.0)])
}

/// `(2K+1)^2` patch offsets, row-major from `(-K, -K)`.
pub fn patch_offsets(k: isize) -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    for dr in -k..=k {
        for dc in -k..=k {
            out.push((dr, dc));
        }
    }
    out
}

/// Patch at `i` minus patch at `i - tau`: bands outer, then offsets `k` in
/// lexicographic order, entries `x(i - k) - x(i - tau - k)`.
pub fn patch_difference(x: &MultibandImage, i: (usize, usize), tau: Offset, k: isize) -> Vec<f64> {
    let g = x.grid();
    let mut out = Vec::new();
    for c in 0..x.bands() {
        for (dr, dc) in patch_offsets(k) {
            let a = at(g, i.0, i.1, -dr, -dc);
            let b = at(g, i.0, i.1, -dr - tau.row, -dc - tau.col);
            out.push(x.band(c)[a] - x.band(c)[b]);
        }
    }
    out
}

pub fn guide_weight(guide: &MultibandImage, i: (usize, usize), tau: Offset, k: isize, h: f64) -> f64 {
    let d: f64 = patch_difference(guide, i, tau, k).iter().map(|v| v * v).sum();
    (-d / (h * h)).exp()
}

/// `sum_i sum_tau w(i, tau) |P_{i,tau}(X)|_1` by brute force.
pub fn regularizer(x: &MultibandImage, shifts: &[Offset], k: isize, weight: impl Fn(usize, usize) -> f64) -> f64 {
    let g = x.grid();
    let mut total = 0.0;
    for i in 0..g.len() {
        let px = (i / g.cols(), i % g.cols());
        for (s, &tau) in shifts.iter().enumerate() {
            let l1: f64 = patch_difference(x, px, tau, k).iter().map(|v| v.abs()).sum();
            total += weight(i, s) * l1;
        }
    }
    total
}

/// Minimizer of a convex scalar function on `[lo, hi]` by golden-section
/// search.
pub fn argmin_scalar(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

pub mod metrics {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn band_mse(a: &[f64], b: &[f64]) -> f64 {
        mean(&a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect::<Vec<_>>())
    }

    pub fn rmse(a: &MultibandImage, b: &MultibandImage) -> f64 {
        let mut s = 0.0;
        for c in 0..a.bands() {
            s += band_mse(a.band(c), b.band(c));
        }
        (s / a.bands() as f64).sqrt()
    }

    pub fn ergas(a: &MultibandImage, b: &MultibandImage, ratio: f64) -> f64 {
        let mut s = 0.0;
        for c in 0..a.bands() {
            s += band_mse(a.band(c), b.band(c)) / mean(a.band(c)).powi(2);
        }
        100.0 / ratio * (s / a.bands() as f64).sqrt()
    }

    pub fn sam_degrees(a: &MultibandImage, b: &MultibandImage) -> f64 {
        let n = a.grid().len();
        let mut total = 0.0;
        for i in 0..n {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for c in 0..a.bands() {
                let (x, y) = (a.band(c)[i], b.band(c)[i]);
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            total += (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0).acos();
        }
        (total / n as f64).to_degrees()
    }

    /// Mean over bands of the mean over every 8x8 window fully inside the
    /// image.
    pub fn uiqi(a: &MultibandImage, b: &MultibandImage) -> f64 {
        let g = a.grid();
        let w = 8;
        assert!(g.rows() >= w && g.cols() >= w);
        let mut per_band = 0.0;
        for c in 0..a.bands() {
            let (x, y) = (a.band(c), b.band(c));
            let mut total = 0.0;
            let mut count = 0.0;
            for r0 in 0..=g.rows() - w {
                for c0 in 0..=g.cols() - w {
                    let idx: Vec<usize> = (0..w * w).map(|k| (r0 + k / w) * g.cols() + c0 + k % w).collect();
                    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                    let (mx, my) = (mean(&xs), mean(&ys));
                    let vx = mean(&xs.iter().map(|v| (v - mx).powi(2)).collect::<Vec<_>>());
                    let vy = mean(&ys.iter().map(|v| (v - my).powi(2)).collect::<Vec<_>>());
                    let cxy = mean(&xs.iter().zip(&ys).map(|(u, v)| (u - mx) * (v - my)).collect::<Vec<_>>());
                    total += 4.0 * cxy * mx * my / ((vx + vy) * (mx * mx + my * my));
                    count += 1.0;
                }
            }
            per_band += total / count;
        }
        per_band / a.bands() as f64
    }

    pub fn psnr(a: &MultibandImage, b: &MultibandImage) -> f64 {
        let mut total = 0.0;
        for c in 0..a.bands() {
            let peak = a.band(c).iter().cloned().fold(f64::MIN, f64::max);
            total += 10.0 * (peak * peak / band_mse(a.band(c), b.band(c))).log10();
        }
        total / a.bands() as f64
    }

    /// 11x11 Gaussian window (sigma 1.5) over every position fully inside
    /// the image.
    pub fn ssim(a: &MultibandImage, b: &MultibandImage) -> f64 {
        let g = a.grid();
        let taps = 11;
        assert!(g.rows() >= taps && g.cols() >= taps);
        let raw: Vec<f64> = (0..taps).map(|k| (-((k as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let s: f64 = raw.iter().sum();
        let gw: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mut per_band = 0.0;
        for c in 0..a.bands() {
            let (x, y) = (a.band(c), b.band(c));
            let l = x.iter().cloned().fold(f64::MIN, f64::max);
            let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
            let mut total = 0.0;
            let mut count = 0.0;
            for r0 in 0..=g.rows() - taps {
                for c0 in 0..=g.cols() - taps {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for u in 0..taps {
                        for v in 0..taps {
                            let wt = gw[u] * gw[v];
                            let i = (r0 + u) * g.cols() + c0 + v;
                            mx += wt * x[i];
                            my += wt * y[i];
                            xx += wt * x[i] * x[i];
                            yy += wt * y[i] * y[i];
                            xy += wt * x[i] * y[i];
                        }
                    }
                    let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1.0;
                }
            }
            per_band += total / count;
        }
        per_band / a.bands() as f64
    }

    pub fn all(a: &MultibandImage, b: &MultibandImage, ratio: f64) -> [f64; 6] {
        [rmse(a, b), ergas(a, b, ratio), sam_degrees(a, b), uiqi(a, b), psnr(a, b), ssim(a, b)]
    }
}
