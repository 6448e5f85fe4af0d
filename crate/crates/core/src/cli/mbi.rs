//! `.mbi` multiband files and PGM previews.
//!
//! An `.mbi` file is a text header, one `key value` pair per line, closed by
//! a line `end`, followed by `rows * cols * bands` little-endian `f64`
//! values, band after band, each band in row-major order:
//!
//! ```text
//! MBI1
//! rows 32
//! cols 32
//! bands 4
//! scalar f64
//! endian little
//! order band-major row-major
//! min 0.0123
//! max 0.9876
//! end
//! ```
//!
//! `min` and `max` are optional and ignored on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{FusionError, Result};
use crate::grid::{Grid, MultibandImage};

pub const MAGIC: &str = "MBI1";

fn format_err(path: &Path, msg: impl std::fmt::Display) -> FusionError {
    FusionError::Format(format!("{}: {msg}", path.display()))
}

pub fn encode(img: &MultibandImage) -> Vec<u8> {
    let data = img.as_slice();
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let grid = img.grid();
    let mut out = format!(
        "{MAGIC}\nrows {}\ncols {}\nbands {}\nscalar f64\nendian little\norder band-major row-major\n",
        grid.rows(),
        grid.cols(),
        img.bands()
    )
    .into_bytes();
    if !data.is_empty() {
        out.extend_from_slice(format!("min {lo:?}\nmax {hi:?}\n").as_bytes());
    }
    out.extend_from_slice(b"end\n");
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<MultibandImage> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(path, "truncated header"))?;
        pos += len + 1;
        std::str::from_utf8(&rest[..len]).map_err(|_| format_err(path, "header is not UTF-8"))
    };
    if next_line()? != MAGIC {
        return Err(format_err(path, "missing MBI1 magic"));
    }
    let (mut rows, mut cols, mut bands) = (None, None, None);
    loop {
        let line = next_line()?.trim();
        if line == "end" {
            break;
        }
        let (key, value) = line.split_once(' ').ok_or_else(|| format_err(path, format!("bad header line '{line}'")))?;
        let value = value.trim();
        let dim = || value.parse::<usize>().map_err(|_| format_err(path, format!("bad {key} '{value}'")));
        match key {
            "rows" => rows = Some(dim()?),
            "cols" => cols = Some(dim()?),
            "bands" => bands = Some(dim()?),
            "scalar" if value != "f64" => return Err(format_err(path, format!("unsupported scalar '{value}'"))),
            "endian" if value != "little" => return Err(format_err(path, format!("unsupported endianness '{value}'"))),
            "order" if value != "band-major row-major" => {
                return Err(format_err(path, format!("unsupported order '{value}'")))
            }
            "scalar" | "endian" | "order" | "min" | "max" => {}
            _ => return Err(format_err(path, format!("unknown header key '{key}'"))),
        }
    }
    let missing = |k| format_err(path, format!("header lacks {k}"));
    let rows = rows.ok_or_else(|| missing("rows"))?;
    let cols = cols.ok_or_else(|| missing("cols"))?;
    let bands = bands.ok_or_else(|| missing("bands"))?;
    let grid = Grid::new(rows, cols)?;
    let count = grid.len() * bands;
    let body = &bytes[pos..];
    if body.len() != count * 8 {
        return Err(format_err(path, format!("expected {} data bytes, found {}", count * 8, body.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    MultibandImage::new(grid, DMatrix::from_vec(grid.len(), bands, values))
}

pub fn write_mbi(path: &Path, img: &MultibandImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(img))?;
    Ok(())
}

pub fn read_mbi(path: &Path) -> Result<MultibandImage> {
    let bytes = fs::read(path).map_err(|e| format_err(path, e))?;
    decode(&bytes, path)
}

/// Binary PGM of one band, scaled linearly from `[min, max]` to `[0, 255]`.
/// The range is recorded in a header comment.
pub fn pgm_bytes(band: &[f64], grid: Grid) -> Vec<u8> {
    let (lo, hi) = band
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n# min={lo:?} max={hi:?}\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    out.extend(band.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_previews(dir: &Path, stem: &str, img: &MultibandImage) -> Result<Vec<std::path::PathBuf>> {
    (0..img.bands())
        .map(|c| {
            let path = dir.join(format!("{stem}_band{c:03}.pgm"));
            fs::write(&path, pgm_bytes(img.band(c), img.grid()))?;
            Ok(path)
        })
        .collect()
}
