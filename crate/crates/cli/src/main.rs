//! `besselq`: Monte Carlo error studies for the squared Bessel process
//! `dX = (1 - bX) dt + 2 sqrt(X) dW`. Results go to CSV files only; progress
//! and errors go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use besselq::experiments::{
    convergence_study, delta_study, estimate_error, estimate_supnorm_error, path_dump, supnorm_study,
    write_delta_csv, write_estimates_csv, write_file, write_fits_csv, write_path_csv, Method, StudyConfig,
    StudyReport,
};
use besselq::{ModelParams, QuadratureSpec, SchemeKind};
use clap::{Args, Parser, Subcommand};

const THREADS_ENV: &str = "BESSELQ_THREADS";

#[derive(Parser, Debug)]
#[command(name = "besselq", version, about = "Strong approximation studies for the squared Bessel process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// L_p error of equidistant methods over a list of grid sizes.
    Convergence(ConvergenceArgs),
    /// Drift-implicit Euler against the adaptive algorithm (b = 0).
    AdaptiveConvergence(AdaptiveArgs),
    /// Moments of the normalised discrete-minimum gap delta_n.
    DeltaStats(DeltaArgs),
    /// Sup-norm L_p error of the piecewise-constant drift-implicit Euler path.
    Supnorm(SupnormArgs),
    /// One exact path on an equidistant grid.
    PathDump(PathDumpArgs),
    /// A single L_p error estimate for one method and one grid size.
    Estimate(EstimateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Initial value x0 >= 0.
    #[arg(long, default_value_t = 0.5, value_parser = parse_x0)]
    x0: f64,
    /// Monte Carlo sample size.
    #[arg(long, default_value_t = 10_000, value_parser = parse_positive_usize)]
    samples: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    common: Common,
    /// Drift parameter b.
    #[arg(long, default_value_t = 0.0, value_parser = parse_finite)]
    b: f64,
    /// Error exponent p >= 1.
    #[arg(long, default_value_t = 2.0, value_parser = parse_p)]
    p: f64,
    /// Comma-separated grid sizes.
    #[arg(long, value_parser = parse_n_list)]
    n_list: Option<NList>,
    /// Comma-separated methods: scheme names or `optimal-l2`.
    #[arg(long, default_value = "drift-implicit-euler")]
    scheme: String,
    /// Reference grid size for b != 0.
    #[arg(long, value_parser = parse_positive_usize)]
    n_ref: Option<usize>,
    /// Rate-fit CSV; defaults to `<out stem>.fit.csv`.
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AdaptiveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2.0, value_parser = parse_p)]
    p: f64,
    /// Threshold constant lambda >= 1.
    #[arg(long, default_value_t = 4.0, value_parser = parse_lambda)]
    lambda: f64,
    #[arg(long, value_parser = parse_n_list)]
    n_list: Option<NList>,
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeltaArgs {
    #[arg(long, default_value_t = 10_000, value_parser = parse_positive_usize)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_n_list)]
    n_list: Option<NList>,
    /// Moment order p >= 1.
    #[arg(long, default_value_t = 2.0, value_parser = parse_p)]
    p: f64,
}

#[derive(Args, Debug)]
struct SupnormArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0, value_parser = parse_finite)]
    b: f64,
    #[arg(long, default_value_t = 2.0, value_parser = parse_p)]
    p: f64,
    #[arg(long, value_parser = parse_n_list)]
    n_list: Option<NList>,
    /// Reference grid size; defaults to 64 times the largest n.
    #[arg(long, value_parser = parse_positive_usize)]
    n_ref: Option<usize>,
    #[arg(long)]
    fit_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PathDumpArgs {
    #[arg(long, default_value_t = 0.5, value_parser = parse_x0)]
    x0: f64,
    /// Number of grid intervals (>= 2).
    #[arg(long, default_value_t = 1024, value_parser = parse_positive_usize)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.0, value_parser = parse_finite)]
    b: f64,
    #[arg(long, default_value_t = 2.0, value_parser = parse_p)]
    p: f64,
    #[arg(long, default_value_t = 4.0, value_parser = parse_lambda)]
    lambda: f64,
    /// Grid size (number of observations for the adaptive method).
    #[arg(long, value_parser = parse_positive_usize)]
    n: usize,
    /// Scheme name, `optimal-l2`, `adaptive` or `supnorm`.
    #[arg(long, default_value = "drift-implicit-euler")]
    scheme: String,
    /// Reference grid size for b != 0.
    #[arg(long, value_parser = parse_positive_usize)]
    n_ref: Option<usize>,
}

#[derive(Debug, Clone)]
struct NList(Vec<usize>);

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn parse_x0(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err("must be >= 0".into())
    }
}

fn parse_p(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v >= 1.0 {
        Ok(v)
    } else {
        Err("must be >= 1".into())
    }
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let v = parse_finite(s)?;
    if v >= 1.0 {
        Ok(v)
    } else {
        Err("must be >= 1".into())
    }
}

fn parse_positive_usize(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{e}")),
    }
}

fn parse_n_list(s: &str) -> Result<NList, String> {
    let values = s
        .split(',')
        .map(parse_positive_usize)
        .collect::<Result<Vec<_>, _>>()?;
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err("grid sizes must be strictly increasing".into());
    }
    Ok(NList(values))
}

fn n_list_or_default(list: Option<NList>) -> Vec<usize> {
    list.map(|l| l.0).unwrap_or_else(besselq::experiments::default_n_list)
}

fn fit_path(out: &Path, fit_out: Option<PathBuf>) -> PathBuf {
    fit_out.unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}.fit.csv"))
    })
}

fn write_report(report: &StudyReport, out: &Path, fit_out: Option<PathBuf>) -> besselq::Result<()> {
    write_file(out, |w| write_estimates_csv(w, &report.estimates))?;
    if !report.fits.is_empty() {
        let fit_out = fit_path(out, fit_out);
        write_file(&fit_out, |w| write_fits_csv(w, &report.fits))?;
        eprintln!("wrote {}", fit_out.display());
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn parse_methods(list: &str, lambda: f64) -> besselq::Result<Vec<Method>> {
    list.split(',').map(|name| Method::parse(name.trim(), lambda)).collect()
}

fn run(command: Command) -> besselq::Result<()> {
    match command {
        Command::Convergence(a) => {
            let cfg = StudyConfig {
                methods: parse_methods(&a.scheme, 4.0)?,
                n_list: n_list_or_default(a.n_list),
                p: a.p,
                x0: a.common.x0,
                b: a.b,
                samples: a.common.samples,
                seed: a.common.seed,
                n_ref: a.n_ref,
                quadrature: QuadratureSpec::default(),
            };
            let report = convergence_study(&cfg)?;
            write_report(&report, &a.common.out, a.fit_out)
        }
        Command::AdaptiveConvergence(a) => {
            let cfg = StudyConfig {
                methods: vec![
                    Method::Scheme(SchemeKind::DriftImplicitEuler),
                    Method::Adaptive { lambda: a.lambda },
                ],
                n_list: n_list_or_default(a.n_list),
                p: a.p,
                x0: a.common.x0,
                samples: a.common.samples,
                seed: a.common.seed,
                ..StudyConfig::figure3()
            };
            let report = convergence_study(&cfg)?;
            write_report(&report, &a.common.out, a.fit_out)
        }
        Command::DeltaStats(a) => {
            let stats = delta_study(&n_list_or_default(a.n_list), &[a.p], a.samples, a.seed)?;
            write_file(&a.out, |w| write_delta_csv(w, &stats))?;
            eprintln!("wrote {}", a.out.display());
            Ok(())
        }
        Command::Supnorm(a) => {
            let params = ModelParams::new(a.common.x0, a.b)?;
            let n_list = n_list_or_default(a.n_list);
            let n_ref = a.n_ref.unwrap_or(64 * n_list.last().copied().unwrap_or(1));
            let report = supnorm_study(&n_list, a.p, &params, a.common.samples, n_ref, a.common.seed)?;
            write_report(&report, &a.common.out, a.fit_out)
        }
        Command::PathDump(a) => {
            let rows = path_dump(a.n, a.x0, a.seed)?;
            write_file(&a.out, |w| write_path_csv(w, &rows))?;
            eprintln!("wrote {}", a.out.display());
            Ok(())
        }
        Command::Estimate(a) => {
            let params = ModelParams::new(a.common.x0, a.b)?;
            let (samples, seed) = (a.common.samples, a.common.seed);
            let estimate = if a.scheme == "supnorm" {
                let n_ref = a.n_ref.unwrap_or(64 * a.n);
                estimate_supnorm_error(a.n, a.p, &params, samples, n_ref, seed)?
            } else {
                let method = Method::parse(&a.scheme, a.lambda)?;
                estimate_error(method, a.n, a.p, &params, samples, seed)?
            };
            write_file(&a.common.out, |w| write_estimates_csv(w, std::slice::from_ref(&estimate)))?;
            eprintln!("wrote {}", a.common.out.display());
            Ok(())
        }
    }
}

/// Sizes the global thread pool from `BESSELQ_THREADS`, if set.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads = parse_positive_usize(&raw).map_err(|e| format!("invalid {THREADS_ENV}={raw:?}: {e}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("cannot configure {THREADS_ENV}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let start = Instant::now();
    match run(cli.command) {
        Ok(()) => {
            eprintln!("done in {:.1?}", start.elapsed());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
