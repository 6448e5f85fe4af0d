//! Command-line workflow: simulate, fuse, metrics, bench, ablate.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures while running. Errors are printed as one `error: ...` line.

pub mod commands;
pub mod config;
pub mod mbi;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::FusionError;
use crate::solver::bench::BenchOptions;

use self::config::{parse_override, parse_pairs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "nlpr", version, about = "Guided nonlocal patch regularization for multiband image fusion")]
struct Cli {
    /// key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter preset: cave, pavia, chikusei or pleiades.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed reduction order; reruns give identical output bytes.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a phantom and its two observations.
    Simulate {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fuse the observations in a simulate directory.
    Fuse {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare two .mbi files.
    Metrics {
        reference: PathBuf,
        estimate: PathBuf,
        /// Spatial resolution ratio for ERGAS.
        #[arg(long, default_value_t = 4.0)]
        ratio: f64,
        /// Write the CSV row here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time the Fourier X-update against conjugate gradients.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        bands: usize,
        #[arg(long, default_value_t = 50)]
        cg_iters: usize,
        /// Also time 200x200 with 20 bands.
        #[arg(long)]
        large: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the five regularizer variants on one instance.
    Ablate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        let (Self::Usage(m) | Self::Runtime(m)) = self;
        m.replace('\n', " ")
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Config(_) => Self::Usage(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

fn resolve(cli: &Cli, input: &Option<PathBuf>, output: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut pairs = Vec::new();
    if let Some(name) = &cli.preset {
        pairs.push(("preset".to_string(), name.clone()));
    }
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        pairs.extend(parse_pairs(&text)?);
    }
    for s in &cli.sets {
        pairs.push(parse_override(s)?);
    }
    let path_pair = |k: &str, p: &Option<PathBuf>| p.as_ref().map(|p| (k.to_string(), p.display().to_string()));
    pairs.extend(path_pair("input", input));
    pairs.extend(path_pair("output", output));
    if let Some(t) = cli.threads {
        pairs.push(("threads".into(), t.to_string()));
    }
    if cli.deterministic {
        pairs.push(("deterministic".into(), "true".into()));
    }
    if let Some(s) = cli.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    Ok(RunConfig::resolve(&pairs)?)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn emit(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { output } => {
            let cfg = resolve(&cli, &None, output)?;
            let files = in_pool(cfg.threads, || commands::cmd_simulate(&cfg))??;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Fuse { input, output } => {
            let cfg = resolve(&cli, input, output)?;
            let s = in_pool(cfg.threads, || commands::cmd_fuse(&cfg))??;
            println!("iterations {} converged {}", s.iterations, s.converged);
            if let Some(m) = s.metrics {
                println!("{m}");
            }
        }
        Command::Metrics {
            reference,
            estimate,
            ratio,
            csv,
        } => {
            let cfg = resolve(&cli, &None, &None)?;
            let m = in_pool(cfg.threads, || commands::cmd_metrics(reference, estimate, *ratio))??;
            println!("{m}");
            emit(csv, &format!("{}\n{}\n", crate::metrics::MetricReport::CSV_HEADER, m.csv_row()))?;
        }
        Command::Bench {
            sizes,
            bands,
            cg_iters,
            large,
            output,
        } => {
            let cfg = resolve(&cli, &None, &None)?;
            let opts = BenchOptions {
                cg_iters: *cg_iters,
                seed: cfg.solver.seed,
                ..BenchOptions::default()
            };
            let rows = in_pool(cfg.threads, || commands::cmd_bench(sizes, *bands, *large, &opts))??;
            emit(output, &commands::bench_report(&rows))?;
        }
        Command::Ablate { input, output } => {
            // output here is the CSV file, not a directory
            let cfg = resolve(&cli, input, &None)?;
            let rows = in_pool(cfg.threads, || commands::cmd_ablate(&cfg))??;
            emit(output, &commands::ablation_csv(&rows))?;
        }
    }
    Ok(())
}

/// Parse `args` (including the program name), run, and return the exit
/// code. Errors go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            eprintln!("error: {}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
