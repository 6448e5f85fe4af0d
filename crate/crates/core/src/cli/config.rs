//! Flat `key = value` run configuration.
//!
//! Values are resolved in order: built-in defaults, then the preset (if any
//! source names one), then the config file, then `--set` overrides. Unknown
//! keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{FusionError, Result};
use crate::linops::{BlurFilter, SpectralResponse};
use crate::nlpr::{Penalty, WeightMode};
use crate::simkit::{DegradationSpec, PhantomKind};
use crate::solver::{preset, InitMode, SolverConfig, Structure, WindowMode};

#[derive(Clone, Debug, PartialEq)]
pub enum BlurSpec {
    StarckMurtagh,
    Identity,
    Gaussian(f64),
}

impl BlurSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "starck_murtagh" => Ok(Self::StarckMurtagh),
            "identity" => Ok(Self::Identity),
            _ => {
                let sigma = s
                    .strip_prefix("gaussian:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| {
                        cfg_err(format!("blur '{s}': expected starck_murtagh, identity or gaussian:<sigma>"))
                    })?;
                Ok(Self::Gaussian(sigma))
            }
        }
    }

    pub fn filter(&self) -> Result<BlurFilter> {
        match self {
            Self::StarckMurtagh => Ok(BlurFilter::starck_murtagh()),
            Self::Identity => Ok(BlurFilter::identity()),
            Self::Gaussian(s) => BlurFilter::gaussian(*s, None),
        }
    }
}

impl std::fmt::Display for BlurSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::StarckMurtagh => write!(f, "starck_murtagh"),
            Self::Identity => write!(f, "identity"),
            Self::Gaussian(s) => write!(f, "gaussian:{s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub preset: Option<String>,
    pub phantom: PhantomKind,
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub coarse_bands: usize,
    pub factor: usize,
    pub blur: BlurSpec,
    /// dB; `None` for a noiseless observation.
    pub snr_low: Option<f64>,
    pub snr_high: Option<f64>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Worker threads; `0` lets the thread pool decide.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            preset: None,
            phantom: PhantomKind::Texture,
            rows: 32,
            cols: 32,
            bands: 32,
            coarse_bands: 4,
            factor: 4,
            blur: BlurSpec::StarckMurtagh,
            snr_low: Some(35.0),
            snr_high: Some(35.0),
            input: None,
            output: None,
            threads: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "rho",
    "h",
    "patch_radius",
    "search_radius",
    "subspace_dim",
    "max_iters",
    "tol_primal",
    "tol_dual",
    "weight_mode",
    "structure",
    "window",
    "penalty",
    "include_zero_shift",
    "weight_floor",
    "init",
    "deterministic",
    "memory_budget_bytes",
    "seed",
    "preset",
    "phantom",
    "rows",
    "cols",
    "bands",
    "coarse_bands",
    "factor",
    "blur",
    "snr_low",
    "snr_high",
    "input",
    "output",
    "threads",
];

fn cfg_err(msg: impl Into<String>) -> FusionError {
    FusionError::Config(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(format!("{key}: cannot parse '{v}'")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(cfg_err(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn snr(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "inf" {
        return Ok(None);
    }
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(cfg_err(format!("{key}: expected dB value or inf, got '{v}'")));
    }
    Ok(Some(x))
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
        cfg_err(format!("{key}: expected one of {}, got '{v}'", names.join(", ")))
    })
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected key = value", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override '{s}': expected key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Resolve a config from file pairs and overrides (applied in that
    /// order) on top of the defaults or the named preset.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        for (k, _) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(cfg_err(format!("unknown key '{k}'")));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some((_, name)) = pairs.iter().rev().find(|(k, _)| k == "preset") {
            cfg.solver = preset(name)?;
            cfg.preset = Some(name.to_ascii_lowercase());
        }
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.solver;
        match key {
            "lambda1" => s.lambda1 = num(key, v)?,
            "lambda2" => s.lambda2 = num(key, v)?,
            "rho" => s.rho = num(key, v)?,
            "h" => s.h = num(key, v)?,
            "patch_radius" => s.patch_radius = num(key, v)?,
            "search_radius" => s.search_radius = num(key, v)?,
            "subspace_dim" => s.subspace_dim = num(key, v)?,
            "max_iters" => s.max_iters = num(key, v)?,
            "tol_primal" => s.tol_primal = num(key, v)?,
            "tol_dual" => s.tol_dual = num(key, v)?,
            "weight_mode" => {
                s.weight_mode = choice(key, v, &[("guided", WeightMode::Guided), ("unit", WeightMode::Unit)])?
            }
            "structure" => s.structure = choice(key, v, &[("patch", Structure::Patch), ("pixel", Structure::Pixel)])?,
            "window" => {
                s.window = choice(key, v, &[("nonlocal", WindowMode::Nonlocal), ("local", WindowMode::Local)])?
            }
            "penalty" => {
                s.penalty = choice(
                    key,
                    v,
                    &[
                        ("l1", Penalty::WeightedL1),
                        ("l2", Penalty::WeightedL2),
                        ("l2sq", Penalty::SquaredWeightedL2),
                    ],
                )?
            }
            "include_zero_shift" => s.include_zero_shift = flag(key, v)?,
            "weight_floor" => s.weight_floor = num(key, v)?,
            "init" => {
                s.init = choice(
                    key,
                    v,
                    &[("zero", InitMode::Zero), ("upsampled", InitMode::Upsampled), ("random", InitMode::Random)],
                )?
            }
            "deterministic" => s.deterministic = flag(key, v)?,
            "memory_budget_bytes" => s.memory_budget_bytes = num(key, v)?,
            "seed" => s.seed = num(key, v)?,
            "preset" => {}
            "phantom" => self.phantom = v.parse()?,
            "rows" => self.rows = num(key, v)?,
            "cols" => self.cols = num(key, v)?,
            "bands" => self.bands = num(key, v)?,
            "coarse_bands" => self.coarse_bands = num(key, v)?,
            "factor" => self.factor = num(key, v)?,
            "blur" => self.blur = BlurSpec::parse(v)?,
            "snr_low" => self.snr_low = snr(key, v)?,
            "snr_high" => self.snr_high = snr(key, v)?,
            "input" => self.input = Some(PathBuf::from(v)),
            "output" => self.output = Some(PathBuf::from(v)),
            "threads" => self.threads = num(key, v)?,
            _ => return Err(cfg_err(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate().map_err(|e| cfg_err(e.to_string()))?;
        if self.factor == 0 || self.rows % self.factor != 0 || self.cols % self.factor != 0 {
            return Err(cfg_err(format!(
                "factor {} must divide rows {} and cols {}",
                self.factor, self.rows, self.cols
            )));
        }
        if self.coarse_bands == 0 || self.coarse_bands > self.bands {
            return Err(cfg_err(format!(
                "coarse_bands must lie in 1..={}, got {}",
                self.bands, self.coarse_bands
            )));
        }
        Ok(())
    }

    pub fn response(&self) -> Result<SpectralResponse> {
        SpectralResponse::gaussian_bands(self.bands, self.coarse_bands)
    }

    pub fn degradation(&self) -> Result<DegradationSpec> {
        Ok(DegradationSpec {
            blur: self.blur.filter()?,
            factor: self.factor,
            response: self.response()?,
            snr_low: self.snr_low,
            snr_high: self.snr_high,
            seed: self.solver.seed,
        })
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let s = &self.solver;
        let snr = |v: Option<f64>| v.map_or("inf".to_string(), |x| format!("{x:?}"));
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let values = [
            format!("{:?}", s.lambda1),
            format!("{:?}", s.lambda2),
            format!("{:?}", s.rho),
            format!("{:?}", s.h),
            s.patch_radius.to_string(),
            s.search_radius.to_string(),
            s.subspace_dim.to_string(),
            s.max_iters.to_string(),
            format!("{:?}", s.tol_primal),
            format!("{:?}", s.tol_dual),
            match s.weight_mode {
                WeightMode::Guided => "guided",
                WeightMode::Unit => "unit",
            }
            .into(),
            match s.structure {
                Structure::Patch => "patch",
                Structure::Pixel => "pixel",
            }
            .into(),
            match s.window {
                WindowMode::Nonlocal => "nonlocal",
                WindowMode::Local => "local",
            }
            .into(),
            match s.penalty {
                Penalty::WeightedL1 => "l1",
                Penalty::WeightedL2 => "l2",
                Penalty::SquaredWeightedL2 => "l2sq",
            }
            .into(),
            s.include_zero_shift.to_string(),
            format!("{:?}", s.weight_floor),
            match s.init {
                InitMode::Zero => "zero",
                InitMode::Upsampled => "upsampled",
                InitMode::Random => "random",
            }
            .into(),
            s.deterministic.to_string(),
            s.memory_budget_bytes.to_string(),
            s.seed.to_string(),
            self.preset.clone().unwrap_or_default(),
            self.phantom.to_string(),
            self.rows.to_string(),
            self.cols.to_string(),
            self.bands.to_string(),
            self.coarse_bands.to_string(),
            self.factor.to_string(),
            self.blur.to_string(),
            snr(self.snr_low),
            snr(self.snr_high),
            path(&self.input),
            path(&self.output),
            self.threads.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if !v.is_empty() {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &[(&str, &str)]) -> Vec<(String, String)> {
        s.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_resolve() {
        assert_eq!(RunConfig::resolve(&[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn precedence_preset_then_file_then_override() {
        let file = parse_pairs("preset = cave\nlambda1 = 0.5  # tweak\n\nrho=0.01\n").unwrap();
        let mut all = file;
        all.push(parse_override("rho=0.2").unwrap());
        let cfg = RunConfig::resolve(&all).unwrap();
        assert_eq!(cfg.solver.lambda1, 0.5);
        assert_eq!(cfg.solver.rho, 0.2);
        // untouched preset values survive
        assert_eq!((cfg.solver.lambda2, cfg.solver.h, cfg.solver.subspace_dim), (1e-4, 0.15, 8));
        assert_eq!(cfg.preset.as_deref(), Some("cave"));
    }

    #[test]
    fn presets_load() {
        let cfg = RunConfig::resolve(&pairs(&[("preset", "pleiades"), ("bands", "8")])).unwrap();
        let s = cfg.solver;
        assert_eq!((s.lambda1, s.lambda2, s.rho, s.h, s.subspace_dim), (0.85, 9e-3, 1e-3, 0.17, 4));
        assert!(RunConfig::resolve(&pairs(&[("preset", "landsat")])).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(matches!(
            RunConfig::resolve(&pairs(&[("lamda1", "0.5")])),
            Err(FusionError::Config(m)) if m.contains("lamda1")
        ));
        for (k, v) in [
            ("rho", "fast"),
            ("penalty", "huber"),
            ("deterministic", "maybe"),
            ("blur", "box"),
            ("factor", "3"),
            ("coarse_bands", "0"),
            ("rho", "-1"),
        ] {
            assert!(RunConfig::resolve(&pairs(&[(k, v)])).is_err(), "{k}={v}");
        }
        assert!(parse_pairs("lambda1 0.5").is_err());
        assert!(parse_override("lambda1").is_err());
    }

    #[test]
    fn text_round_trips() {
        let cfg = RunConfig::resolve(&pairs(&[
            ("preset", "chikusei"),
            ("snr_low", "inf"),
            ("blur", "gaussian:1.25"),
            ("penalty", "l2sq"),
            ("output", "/tmp/out"),
            ("deterministic", "true"),
        ]))
        .unwrap();
        let back = RunConfig::resolve(&parse_pairs(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.snr_low, None);
        assert_eq!(back.blur, BlurSpec::Gaussian(1.25));
    }
}
