use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, FusionError, Result};
use crate::grid::PatchSpec;
use crate::linops::{FilterBank, SearchWindow};
use crate::nlpr::{Penalty, WeightMode};

/// Whether differences compare whole patches or single pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// Patch radius `K` from the config.
    Patch,
    /// `K = 0`.
    Pixel,
}

/// Shape of the search window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    /// Every shift in `[-S, S]^2`.
    Nonlocal,
    /// Horizontal and vertical shifts only.
    Local,
}

/// Starting point of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Everything zero.
    Zero,
    /// Bicubic upsampling of `Y_l`, projected onto the subspace.
    Upsampled,
    /// Uniform noise in `[0, 1)` drawn from the config seed.
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub h: f64,
    pub patch_radius: usize,
    pub search_radius: usize,
    pub subspace_dim: usize,
    pub max_iters: usize,
    pub tol_primal: f64,
    /// Threshold on the relative change of `(P1, P2, Q)` per iteration.
    pub tol_dual: f64,
    pub weight_mode: WeightMode,
    pub structure: Structure,
    pub window: WindowMode,
    pub penalty: Penalty,
    pub include_zero_shift: bool,
    /// Zero guide weights below this value; `0` disables pruning.
    pub weight_floor: f64,
    pub init: InitMode,
    /// Fixed reduction order for the X-update right-hand side.
    pub deterministic: bool,
    pub memory_budget_bytes: u64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.8,
            lambda2: 2e-4,
            rho: 1e-3,
            h: 0.15,
            patch_radius: 1,
            search_radius: 1,
            subspace_dim: 20,
            max_iters: 500,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            weight_mode: WeightMode::Guided,
            structure: Structure::Patch,
            window: WindowMode::Nonlocal,
            penalty: Penalty::WeightedL1,
            include_zero_shift: false,
            weight_floor: 0.0,
            init: InitMode::Upsampled,
            deterministic: false,
            memory_budget_bytes: 4 << 30,
            seed: 0,
        }
    }
}

/// Names of the shipped parameter presets.
pub const PRESETS: [&str; 4] = ["cave", "pavia", "chikusei", "pleiades"];

/// `(lambda1, lambda2, rho, h, L_s)` tuned per dataset, with 3x3 search
/// window and 3x3 patches.
pub fn preset(name: &str) -> Result<SolverConfig> {
    let (lambda1, lambda2, rho, h, subspace_dim) = match name.to_ascii_lowercase().as_str() {
        "cave" => (0.7, 1e-4, 1e-3, 0.15, 8),
        "pavia" => (0.8, 2e-4, 1e-3, 0.15, 20),
        "chikusei" => (1.0, 1e-3, 0.095, 0.25, 20),
        "pleiades" => (0.85, 9e-3, 1e-3, 0.17, 4),
        _ => {
            return Err(FusionError::Config(format!(
                "unknown preset '{name}', expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(SolverConfig {
        lambda1,
        lambda2,
        rho,
        h,
        subspace_dim,
        ..SolverConfig::default()
    })
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lambda1", self.lambda1)?;
        nonneg("lambda2", self.lambda2)?;
        nonneg("weight_floor", self.weight_floor)?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", format!("must be positive, got {}", self.rho)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", format!("must be positive, got {}", self.h)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol_primal > 0.0) {
            return Err(invalid("tol_primal", format!("must be positive, got {}", self.tol_primal)));
        }
        if !(self.tol_dual > 0.0) {
            return Err(invalid("tol_dual", format!("must be positive, got {}", self.tol_dual)));
        }
        if self.subspace_dim == 0 {
            return Err(invalid("subspace_dim", "must be at least 1"));
        }
        Ok(())
    }

    pub fn search_window(&self) -> SearchWindow {
        let mut w = match self.window {
            WindowMode::Nonlocal => SearchWindow::square(self.search_radius),
            WindowMode::Local => SearchWindow::axis(self.search_radius),
        };
        w.include_origin = self.include_zero_shift;
        w
    }

    /// Patch used by the difference filters.
    pub fn difference_patch(&self) -> PatchSpec {
        match self.structure {
            Structure::Patch => PatchSpec::new(self.patch_radius),
            Structure::Pixel => PatchSpec::new(0),
        }
    }

    /// Patch used for guide weights; independent of [`Structure`].
    pub fn weight_patch(&self) -> PatchSpec {
        PatchSpec::new(self.patch_radius)
    }

    pub fn filter_bank(&self) -> FilterBank {
        FilterBank::new(self.search_window(), self.difference_patch())
    }

    /// Configuration of one ablation case, keeping every other field.
    pub fn with_case(mut self, case: AblationCase) -> Self {
        let (weights, structure, window) = case.modes();
        self.weight_mode = weights;
        self.structure = structure;
        self.window = window;
        self
    }
}

/// Bytes held by `P1, P2, Lambda1, Lambda2` and every `Q`, `Sigma` block.
pub fn state_bytes(n_h: usize, bands: usize, filters: usize) -> u64 {
    2 * (2 + filters as u64) * n_h as u64 * bands as u64 * 8
}

/// The five regularizer variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationCase {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl AblationCase {
    pub const ALL: [AblationCase; 5] = [Self::C1, Self::C2, Self::C3, Self::C4, Self::C5];

    pub fn modes(&self) -> (WeightMode, Structure, WindowMode) {
        use Structure::*;
        use WeightMode::*;
        use WindowMode::*;
        match self {
            Self::C1 => (Guided, Patch, Nonlocal),
            Self::C2 => (Unit, Patch, Nonlocal),
            Self::C3 => (Guided, Pixel, Nonlocal),
            Self::C4 => (Unit, Pixel, Nonlocal),
            Self::C5 => (Unit, Pixel, Local),
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Self::C1 => "guided nonlocal patch",
            Self::C2 => "unweighted nonlocal patch",
            Self::C3 => "guided nonlocal pixel",
            Self::C4 => "unweighted nonlocal pixel",
            Self::C5 => "unweighted local pixel",
        }
    }
}

impl fmt::Display for AblationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for AblationCase {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| FusionError::Config(format!("unknown ablation case '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_published_tuples() {
        let c = preset("cave").unwrap();
        assert_eq!((c.lambda1, c.lambda2, c.rho, c.h, c.subspace_dim), (0.7, 1e-4, 1e-3, 0.15, 8));
        let c = preset("pavia").unwrap();
        assert_eq!((c.lambda1, c.lambda2, c.rho, c.h, c.subspace_dim), (0.8, 2e-4, 1e-3, 0.15, 20));
        let c = preset("chikusei").unwrap();
        assert_eq!((c.lambda1, c.lambda2, c.rho, c.h, c.subspace_dim), (1.0, 1e-3, 0.095, 0.25, 20));
        let c = preset("pleiades").unwrap();
        assert_eq!((c.lambda1, c.lambda2, c.rho, c.h, c.subspace_dim), (0.85, 9e-3, 1e-3, 0.17, 4));
        for name in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!((c.search_radius, c.patch_radius), (1, 1));
            c.validate().unwrap();
        }
        assert!(preset("indian_pines").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = SolverConfig::default();
        assert!(SolverConfig { rho: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { lambda2: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { max_iters: 0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { tol_primal: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { tol_dual: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SolverConfig { h: f64::NAN, ..ok }.validate().is_err());
    }

    #[test]
    fn ablation_cases_set_banks() {
        let base = SolverConfig::default();
        let sizes: Vec<usize> = AblationCase::ALL
            .iter()
            .map(|&c| base.clone().with_case(c).filter_bank().len())
            .collect();
        assert_eq!(sizes, vec![72, 72, 8, 8, 4]);
        let c3 = base.clone().with_case(AblationCase::C3);
        assert_eq!(c3.weight_patch().radius, 1);
        assert_eq!(c3.difference_patch().radius, 0);
        assert_eq!("c5".parse::<AblationCase>().unwrap(), AblationCase::C5);
    }

    #[test]
    fn zero_shift_flag_restores_full_window() {
        let cfg = SolverConfig {
            include_zero_shift: true,
            ..SolverConfig::default()
        };
        assert_eq!(cfg.filter_bank().len(), 81);
    }

    #[test]
    fn state_size_formula() {
        assert_eq!(state_bytes(64 * 64, 8, 72), 2 * 74 * 4096 * 8 * 8);
    }
}
