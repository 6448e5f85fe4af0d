use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{FusionError, Result};
use crate::grid::MultibandImage;
use crate::linops::{SamplingMask, SpectralResponse};
use crate::metrics::{evaluate, MetricReport};
use crate::simkit::{degrade, make_phantom};
use crate::solver::bench::{bench_csv, bench_x_update, BenchOptions, BenchRow};
use crate::solver::{fuse, AblationCase, FusionOutput};

use super::config::{parse_pairs, BlurSpec, RunConfig};
use super::mbi::{read_mbi, write_mbi, write_previews};

pub const GT_FILE: &str = "gt.mbi";
pub const LOW_FILE: &str = "yl.mbi";
pub const HIGH_FILE: &str = "yh.mbi";
pub const SPEC_FILE: &str = "spec.cfg";
pub const ESTIMATE_FILE: &str = "zhat.mbi";
pub const LOG_FILE: &str = "log.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Acquisition parameters stored next to simulated observations.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSpec {
    pub blur: BlurSpec,
    pub factor: usize,
    pub response: SpectralResponse,
}

impl AcquisitionSpec {
    pub fn to_text(&self, cfg: &RunConfig) -> String {
        let m = self.response.matrix();
        let rows: Vec<String> = m
            .row_iter()
            .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
            .collect();
        let snr = |v: Option<f64>| v.map_or("inf".to_string(), |x| format!("{x:?}"));
        let mut out = String::new();
        let _ = writeln!(out, "phantom = {}", cfg.phantom);
        let _ = writeln!(out, "seed = {}", cfg.solver.seed);
        let _ = writeln!(out, "snr_low = {}", snr(cfg.snr_low));
        let _ = writeln!(out, "snr_high = {}", snr(cfg.snr_high));
        let _ = writeln!(out, "blur = {}", self.blur);
        let _ = writeln!(out, "factor = {}", self.factor);
        let _ = writeln!(out, "response = {}", rows.join(";"));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |m: String| FusionError::Format(format!("{SPEC_FILE}: {m}"));
        let (mut blur, mut factor, mut response) = (None, None, None);
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "blur" => blur = Some(BlurSpec::parse(&v)?),
                "factor" => factor = Some(v.parse::<usize>().map_err(|_| err(format!("bad factor '{v}'")))?),
                "response" => {
                    let rows = v
                        .split(';')
                        .map(|r| r.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err("bad response entry".into()))?;
                    let cols = rows.first().map_or(0, Vec::len);
                    if rows.iter().any(|r| r.len() != cols) {
                        return Err(err("ragged response matrix".into()));
                    }
                    let flat: Vec<f64> = rows.concat();
                    response = Some(SpectralResponse::new(DMatrix::from_row_slice(rows.len(), cols, &flat))?);
                }
                "phantom" | "seed" | "snr_low" | "snr_high" => {}
                _ => return Err(err(format!("unknown key '{k}'"))),
            }
        }
        Ok(Self {
            blur: blur.ok_or_else(|| err("missing blur".into()))?,
            factor: factor.ok_or_else(|| err("missing factor".into()))?,
            response: response.ok_or_else(|| err("missing response".into()))?,
        })
    }
}

/// Observations loaded from a directory written by [`cmd_simulate`].
#[derive(Clone, Debug)]
pub struct Instance {
    pub truth: Option<MultibandImage>,
    pub y_low: MultibandImage,
    pub y_high: MultibandImage,
    pub spec: AcquisitionSpec,
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .output
        .clone()
        .ok_or_else(|| FusionError::Config("no output directory (set output=DIR)".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Simulate an instance from the phantom and degradation keys of `cfg`.
pub fn simulate(cfg: &RunConfig) -> Result<Instance> {
    let truth = make_phantom(cfg.phantom, cfg.rows, cfg.cols, cfg.bands, cfg.solver.seed)?;
    let d = degrade(&truth, &cfg.degradation()?)?;
    Ok(Instance {
        y_low: d.low_image()?,
        y_high: d.y_high,
        truth: Some(truth),
        spec: AcquisitionSpec {
            blur: cfg.blur.clone(),
            factor: cfg.factor,
            response: cfg.response()?,
        },
    })
}

/// Writes `gt.mbi`, `yl.mbi`, `yh.mbi` and `spec.cfg` into the output
/// directory.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = output_dir(cfg)?;
    let inst = simulate(cfg)?;
    let files = [GT_FILE, LOW_FILE, HIGH_FILE, SPEC_FILE].map(|f| dir.join(f));
    write_mbi(&files[0], inst.truth.as_ref().expect("simulated truth"))?;
    write_mbi(&files[1], &inst.y_low)?;
    write_mbi(&files[2], &inst.y_high)?;
    fs::write(&files[3], inst.spec.to_text(cfg))?;
    Ok(files.to_vec())
}

pub fn load_instance(dir: &Path) -> Result<Instance> {
    let spec_path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&spec_path)
        .map_err(|e| FusionError::Format(format!("{}: {e}", spec_path.display())))?;
    let gt = dir.join(GT_FILE);
    Ok(Instance {
        truth: if gt.exists() { Some(read_mbi(&gt)?) } else { None },
        y_low: read_mbi(&dir.join(LOW_FILE))?,
        y_high: read_mbi(&dir.join(HIGH_FILE))?,
        spec: AcquisitionSpec::parse(&text)?,
    })
}

/// Run the solver on an instance with the solver keys of `cfg`.
pub fn fuse_instance(inst: &Instance, cfg: &RunConfig) -> Result<FusionOutput> {
    let grid = inst.y_high.grid();
    let mask = SamplingMask::decimation(grid, inst.spec.factor)?;
    let low_grid = mask.low_grid().expect("decimation has a low grid");
    if inst.y_low.grid() != low_grid {
        return Err(FusionError::GridMismatch {
            expected: low_grid.to_string(),
            found: inst.y_low.grid().to_string(),
        });
    }
    let r = &inst.spec.response;
    if inst.y_low.bands() != r.fine_bands() || inst.y_high.bands() != r.coarse_bands() {
        return Err(FusionError::ShapeMismatch {
            what: "observation bands",
            expected: format!("{} low, {} high", r.fine_bands(), r.coarse_bands()),
            found: format!("{} low, {} high", inst.y_low.bands(), inst.y_high.bands()),
        });
    }
    if let Some(t) = &inst.truth {
        if t.grid() != grid || t.bands() != r.fine_bands() {
            return Err(FusionError::ShapeMismatch {
                what: "ground truth",
                expected: format!("{grid} x {}", r.fine_bands()),
                found: format!("{} x {}", t.grid(), t.bands()),
            });
        }
    }
    fuse(
        inst.y_low.data(),
        &inst.y_high,
        inst.spec.blur.filter()?,
        mask,
        r.clone(),
        &cfg.solver,
    )
}

#[derive(Clone, Debug)]
pub struct FuseSummary {
    pub iterations: usize,
    pub converged: bool,
    pub metrics: Option<MetricReport>,
    pub files: Vec<PathBuf>,
}

/// Reads an instance from `input`, writes `zhat.mbi`, `log.csv`, per-band
/// previews, and `metrics.csv` when the directory holds a ground truth.
/// Timing columns of the log are zero in deterministic mode so reruns are
/// byte-identical.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<FuseSummary> {
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| FusionError::Config("no input directory (set input=DIR)".into()))?;
    let inst = load_instance(&input)?;
    let dir = output_dir(cfg)?;
    let out = fuse_instance(&inst, cfg)?;
    let mut files = vec![dir.join(ESTIMATE_FILE), dir.join(LOG_FILE)];
    write_mbi(&files[0], &out.z)?;
    fs::write(&files[1], out.log.to_csv(!cfg.solver.deterministic))?;
    files.extend(write_previews(&dir, "zhat", &out.z)?);
    let metrics = match &inst.truth {
        Some(t) => {
            let m = evaluate(t, &out.z, inst.spec.factor as f64)?;
            let path = dir.join(METRICS_FILE);
            fs::write(&path, format!("{}\n{}\n", MetricReport::CSV_HEADER, m.csv_row()))?;
            files.push(path);
            Some(m)
        }
        None => None,
    };
    Ok(FuseSummary {
        iterations: out.log.len(),
        converged: out.converged,
        metrics,
        files,
    })
}

pub fn cmd_metrics(reference: &Path, estimate: &Path, ratio: f64) -> Result<MetricReport> {
    evaluate(&read_mbi(reference)?, &read_mbi(estimate)?, ratio)
}

/// Benchmark sizes: the square ladder plus, optionally, the 200x200x20
/// point (reported, never gated).
pub fn cmd_bench(sizes: &[usize], bands: usize, large: bool, opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        rows.push(bench_x_update(n, n, bands, opts)?);
    }
    if large {
        rows.push(bench_x_update(200, 200, 20, opts)?);
    }
    Ok(rows)
}

pub fn bench_report(rows: &[BenchRow]) -> String {
    bench_csv(rows)
}

/// Solve one instance under each ablation case and score against the
/// ground truth. The instance comes from `input` if set, else it is
/// simulated from `cfg`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<(AblationCase, MetricReport)>> {
    let inst = match &cfg.input {
        Some(dir) => load_instance(dir)?,
        None => simulate(cfg)?,
    };
    let truth = inst
        .truth
        .clone()
        .ok_or_else(|| FusionError::Format("ablation needs a ground truth (gt.mbi)".into()))?;
    AblationCase::ALL
        .iter()
        .map(|&case| {
            let mut run = cfg.clone();
            run.solver = cfg.solver.clone().with_case(case);
            let out = fuse_instance(&inst, &run)?;
            log::info!("{case}: {} iterations, converged {}", out.log.len(), out.converged);
            Ok((case, evaluate(&truth, &out.z, inst.spec.factor as f64)?))
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "case,rmse,ergas,sam,uiqi,psnr,ssim";

pub fn ablation_csv(rows: &[(AblationCase, MetricReport)]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for (case, m) in rows {
        let _ = writeln!(out, "{case},{}", m.csv_row());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::parse_override;

    fn small(dir: &Path, extra: &[&str]) -> RunConfig {
        let mut pairs: Vec<_> = [
            "rows=16",
            "cols=16",
            "bands=6",
            "coarse_bands=2",
            "subspace_dim=3",
            "max_iters=20",
            "snr_low=inf",
            "snr_high=inf",
        ]
        .iter()
        .map(|s| parse_override(s).unwrap())
        .collect();
        pairs.push(("output".into(), dir.display().to_string()));
        pairs.extend(extra.iter().map(|s| parse_override(s).unwrap()));
        RunConfig::resolve(&pairs).unwrap()
    }

    #[test]
    fn simulate_writes_exact_noiseless_products() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), &[]);
        let files = cmd_simulate(&cfg).unwrap();
        assert_eq!(files.len(), 4);
        let inst = load_instance(tmp.path()).unwrap();
        let mem = simulate(&cfg).unwrap();
        assert_eq!(inst.y_low, mem.y_low);
        assert_eq!(inst.y_high, mem.y_high);
        assert_eq!(inst.truth, mem.truth);
        assert_eq!(inst.spec, mem.spec);
        assert_eq!(inst.y_low.grid().rows(), 4);
        // noiseless: Y_h = Z R exactly
        let zr = inst.truth.as_ref().unwrap().data() * inst.spec.response.matrix();
        assert_eq!(inst.y_high.data(), &zr);
    }

    #[test]
    fn fuse_writes_outputs_and_metrics() {
        let tmp = tempfile::tempdir().unwrap();
        let sim = small(&tmp.path().join("sim"), &[]);
        cmd_simulate(&sim).unwrap();
        let mut cfg = small(&tmp.path().join("out"), &[]);
        cfg.input = Some(tmp.path().join("sim"));
        let s = cmd_fuse(&cfg).unwrap();
        assert_eq!(s.iterations, 20);
        // better than guessing zero everywhere
        let gt = read_mbi(&tmp.path().join("sim").join(GT_FILE)).unwrap();
        let rms = (gt.norm().powi(2) / gt.as_slice().len() as f64).sqrt();
        assert!(s.metrics.unwrap().rmse < 0.5 * rms);
        // zhat, log, 6 previews, metrics
        assert_eq!(s.files.len(), 9);
        let log = fs::read_to_string(tmp.path().join("out").join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 21);
    }

    #[test]
    fn inconsistent_inputs_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let sim = small(tmp.path(), &[]);
        cmd_simulate(&sim).unwrap();
        let other = small(&tmp.path().join("b"), &["bands=5"]);
        cmd_simulate(&other).unwrap();
        fs::copy(tmp.path().join("b").join(HIGH_FILE), tmp.path().join(HIGH_FILE)).unwrap();
        fs::copy(tmp.path().join("b").join(LOW_FILE), tmp.path().join(LOW_FILE)).unwrap();
        let mut cfg = small(&tmp.path().join("out"), &[]);
        cfg.input = Some(tmp.path().to_path_buf());
        assert!(cmd_fuse(&cfg).is_err());
    }

    #[test]
    fn missing_input_fails() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small(tmp.path(), &[]);
        assert!(matches!(cmd_fuse(&cfg), Err(FusionError::Config(_))));
        cfg.input = Some(tmp.path().join("nope"));
        assert!(cmd_fuse(&cfg).is_err());
    }

    #[test]
    fn spec_text_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), &["blur=gaussian:0.8"]);
        let spec = simulate(&cfg).unwrap().spec;
        assert_eq!(AcquisitionSpec::parse(&spec.to_text(&cfg)).unwrap(), spec);
        assert!(AcquisitionSpec::parse("blur = identity\nfactor = 2\n").is_err());
    }

    #[test]
    fn bench_ladder_starts_at_eight() {
        let opts = BenchOptions {
            cg_iters: 3,
            fast_reps: 1,
            ..BenchOptions::default()
        };
        let rows = cmd_bench(&[8], 2, false, &opts).unwrap();
        let csv = bench_report(&rows);
        assert!(csv.lines().nth(1).unwrap().starts_with("8x8,64,2,"));
    }
}
