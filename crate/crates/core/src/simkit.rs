//! Synthetic ground truth and simulated observations.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, FusionError, Result};
use crate::grid::{Grid, MultibandImage};
use crate::linops::{BlurFilter, SamplingMask, SpectralResponse, SubspaceBasis};
use crate::solver::FusionOperators;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhantomKind {
    /// Cells filled with stripes or checkerboards.
    Texture,
    /// Random overlapping rectangles of a few materials.
    Mondrian,
    /// Every band affine in the pixel coordinates.
    Ramp,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Texture => "texture",
            Self::Mondrian => "mondrian",
            Self::Ramp => "ramp",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "texture" => Ok(Self::Texture),
            "mondrian" => Ok(Self::Mondrian),
            "ramp" => Ok(Self::Ramp),
            _ => Err(FusionError::Config(format!("unknown phantom '{s}'"))),
        }
    }
}

/// Smooth random spectrum in `[0, 1]`: a few Gaussian bumps over the bands.
fn signature(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.15..0.5),
                rng.random_range(0.2..1.0),
            )
        })
        .collect();
    let base = rng.random_range(0.05..0.3);
    let raw: Vec<f64> = (0..bands)
        .map(|c| {
            let t = if bands > 1 { c as f64 / (bands - 1) as f64 } else { 0.5 };
            base + bumps
                .iter()
                .map(|(m, w, a)| a * (-((t - m) / w).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    let top = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|v| v / top).collect()
}

/// Mix nonnegative abundance maps (normalized to sum one per pixel) with
/// per-material signatures.
fn mix(grid: Grid, bands: usize, abundances: &[Vec<f64>], rng: &mut ChaCha8Rng) -> MultibandImage {
    let sigs: Vec<Vec<f64>> = abundances.iter().map(|_| signature(bands, rng)).collect();
    let n = grid.len();
    let mut data = DMatrix::zeros(n, bands);
    for i in 0..n {
        let total: f64 = abundances.iter().map(|a| a[i]).sum();
        for (a, s) in abundances.iter().zip(&sigs) {
            let w = a[i] / total;
            for c in 0..bands {
                data[(i, c)] += w * s[c];
            }
        }
    }
    MultibandImage::from_matrix_unchecked(grid, data)
}

/// Deterministic phantom with values in `[0, 1]` whose spectra span at most
/// `min(bands, 6)` dimensions (at most 3 for ramps).
pub fn make_phantom(kind: PhantomKind, p: usize, q: usize, bands: usize, seed: u64) -> Result<MultibandImage> {
    if p < 8 || q < 8 {
        return Err(invalid("grid", format!("phantoms need at least 8x8 pixels, got {p}x{q}")));
    }
    if bands == 0 {
        return Err(invalid("bands", "must be at least 1"));
    }
    let grid = Grid::new(p, q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let materials = bands.min(6);
    let n = grid.len();
    let img = match kind {
        PhantomKind::Ramp => {
            let coef: Vec<[f64; 3]> = (0..bands)
                .map(|_| {
                    let a = rng.random_range(0.0..0.4);
                    let b = rng.random_range(0.0..0.3);
                    let c = rng.random_range(0.0..0.3);
                    [a, b, c]
                })
                .collect();
            MultibandImage::from_fn(grid, bands, |r, c, band| {
                let [a, b, g] = coef[band];
                a + b * r as f64 / p as f64 + g * c as f64 / q as f64
            })
        }
        PhantomKind::Mondrian => {
            let mut label = vec![0usize; n];
            for _ in 0..(p * q / 24).max(6) {
                let (h, w) = (rng.random_range(2..=p / 3), rng.random_range(2..=q / 3));
                let (r0, c0) = (rng.random_range(0..p), rng.random_range(0..q));
                let m = rng.random_range(0..materials);
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        label[grid.index(r % p, c % q)] = m;
                    }
                }
            }
            let abundances: Vec<Vec<f64>> = (0..materials)
                .map(|m| label.iter().map(|&l| if l == m { 1.0 } else { 0.0 }).collect())
                .collect();
            mix(grid, bands, &abundances, &mut rng)
        }
        PhantomKind::Texture => {
            // periodic Voronoi cells, each flat or filled with stripes or a
            // checkerboard of two materials
            let cells = 3 + (n / 256).min(5);
            let sites: Vec<(f64, f64)> = (0..cells)
                .map(|_| (rng.random_range(0.0..p as f64), rng.random_range(0.0..q as f64)))
                .collect();
            let fills: Vec<(usize, usize, usize, usize)> = (0..cells)
                .map(|_| {
                    let a = rng.random_range(0..materials);
                    let b = if materials > 1 { (a + rng.random_range(1..materials)) % materials } else { a };
                    (rng.random_range(0..6usize), rng.random_range(2..=4usize), a, b)
                })
                .collect();
            let torus = |d: f64, len: usize| d.abs().min(len as f64 - d.abs());
            let label: Vec<usize> = (0..n)
                .map(|i| {
                    let (r, c) = grid.coords(i);
                    let cell = (0..cells)
                        .min_by(|&x, &y| {
                            let dist = |k: usize| {
                                let (sr, sc) = sites[k];
                                torus(r as f64 - sr, p).powi(2) + torus(c as f64 - sc, q).powi(2)
                            };
                            dist(x).total_cmp(&dist(y))
                        })
                        .unwrap_or(0);
                    let (kind, width, a, b) = fills[cell];
                    let phase = match kind {
                        0 => 0,
                        1 => r / width,
                        2 => c / width,
                        3 => (r + c) / width,
                        4 => (r + 4 * q - c) / width,
                        _ => r / width + c / width,
                    };
                    if phase % 2 == 0 {
                        a
                    } else {
                        b
                    }
                })
                .collect();
            let abundances: Vec<Vec<f64>> = (0..materials)
                .map(|m| label.iter().map(|&l| if l == m { 1.0 } else { 0.0 }).collect())
                .collect();
            mix(grid, bands, &abundances, &mut rng)
        }
    };
    Ok(img)
}

/// Simulated acquisition: blur, decimation and spectral response, each
/// observation with white Gaussian noise at a target SNR.
#[derive(Clone, Debug)]
pub struct DegradationSpec {
    pub blur: BlurFilter,
    pub factor: usize,
    pub response: SpectralResponse,
    /// dB; `None` disables noise.
    pub snr_low: Option<f64>,
    pub snr_high: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Degraded {
    /// `S B Z + N_l`, rows in decimated row-major order.
    pub y_low: DMatrix<f64>,
    /// `Z R + N_h`.
    pub y_high: MultibandImage,
    pub mask: SamplingMask,
}

impl Degraded {
    /// `Y_l` as an image on the low-resolution grid.
    pub fn low_image(&self) -> Result<MultibandImage> {
        let lg = self
            .mask
            .low_grid()
            .ok_or_else(|| invalid("mask", "observation is not on a regular low-resolution grid"))?;
        MultibandImage::new(lg, self.y_low.clone())
    }
}

/// `sigma^2 = |clean|^2 / (count 10^(snr/10))`.
pub fn noise_sigma(clean: &[f64], snr_db: f64) -> f64 {
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len().max(1) as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

fn add_noise(values: &mut [f64], snr_db: Option<f64>, rng: &mut ChaCha8Rng) -> Result<()> {
    let Some(snr) = snr_db else {
        return Ok(());
    };
    if !snr.is_finite() {
        return Err(invalid("snr", format!("must be finite, got {snr}")));
    }
    let sigma = noise_sigma(values, snr);
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid("snr", e.to_string()))?;
    for v in values.iter_mut() {
        *v += normal.sample(rng);
    }
    Ok(())
}

/// `Y_l = S B Z + N_l`, `Y_h = Z R + N_h`. The two noise draws come from
/// separate streams of the same seed.
pub fn degrade(z: &MultibandImage, spec: &DegradationSpec) -> Result<Degraded> {
    let mask = SamplingMask::decimation(z.grid(), spec.factor)?;
    let ops = FusionOperators::new(
        spec.blur.clone(),
        mask.clone(),
        spec.response.clone(),
        SubspaceBasis::identity(spec.response.fine_bands()),
    )?;
    let mut y_low = ops.observe_low(z)?;
    let mut y_high = ops.observe_high(z)?.into_data();
    let mut rng_low = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_low.set_stream(1);
    let mut rng_high = ChaCha8Rng::seed_from_u64(spec.seed);
    rng_high.set_stream(2);
    add_noise(y_low.as_mut_slice(), spec.snr_low, &mut rng_low)?;
    add_noise(y_high.as_mut_slice(), spec.snr_high, &mut rng_high)?;
    Ok(Degraded {
        y_low,
        y_high: MultibandImage::new(z.grid(), y_high)?,
        mask,
    })
}

/// Random-mask inpainting problem with `B = I`, `R = I`, `E = I`.
///
/// There is no second observation: `y_high` is zero and the solver must run
/// with `lambda1 = 0`. Weights come from `guide`, the band mean of `Z`.
#[derive(Clone, Debug)]
pub struct InpaintingInstance {
    pub y_low: DMatrix<f64>,
    pub y_high: MultibandImage,
    pub ops: FusionOperators,
    pub guide: MultibandImage,
}

pub fn make_inpainting_instance(z: &MultibandImage, keep_fraction: f64, seed: u64) -> Result<InpaintingInstance> {
    let grid = z.grid();
    let bands = z.bands();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = SamplingMask::random(grid, keep_fraction, &mut rng)?;
    let y_low = mask.downsample(z)?;
    let ops = FusionOperators::new(
        BlurFilter::identity(),
        mask,
        SpectralResponse::identity(bands),
        SubspaceBasis::identity(bands),
    )?;
    let guide = MultibandImage::from_fn(grid, 1, |r, c, _| {
        (0..bands).map(|b| z.get((r, c), b)).sum::<f64>() / bands as f64
    });
    Ok(InpaintingInstance {
        y_low,
        y_high: MultibandImage::zeros(grid, bands),
        ops,
        guide,
    })
}
