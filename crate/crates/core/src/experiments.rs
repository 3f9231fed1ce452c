//! Monte Carlo error studies.
//!
//! Errors at `t = 1` for `b = 0` are measured against the exact coupling:
//! each sample draws the Brownian path on the finest grid of the study plus
//! exact bridge minima, which gives the true `X_1`. Coarser equidistant grids
//! are sub-grids of the finest one, so every grid and every estimator sees
//! the same Brownian path (common random numbers). The adaptive algorithm
//! samples its own knots sequentially and shares only the seed derivation.
//!
//! For `b ≠ 0` the reference is a fine grid of `n_ref` jointly Gaussian
//! increments `(ΔW, ΔM)`, on which the explicit solution is evaluated with
//! the discrete running infimum of `M`.
//!
//! Sample `i` always draws from stream `i` of a purpose-specific seed, and
//! samples are reduced in index order, so results do not depend on the
//! number of worker threads.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::adaptive::run_adaptive_checkpoints;
use crate::brownian::{IncrementCovariance, Partition, SampledPath};
use crate::error::{Error, Result};
use crate::exact::{hits_zero, optimal_l2_estimator, reflect, solution_b0, ExactCoupling, ModelParams, QuadratureSpec};
use crate::rng::{derive_seed, StreamRng};
use crate::schemes::{run_scheme, SchemeKind};

const PURPOSE_GRID: u64 = 1;
const PURPOSE_ADAPTIVE: u64 = 2;
const PURPOSE_REFERENCE: u64 = 3;
const PURPOSE_DELTA: u64 = 4;
const PURPOSE_PATH: u64 = 5;

/// Minimal ratio between the reference grid and the coarsest scheme grid.
pub const MIN_REFERENCE_RATIO: usize = 64;

/// An approximation of `X_1` whose error is being measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Scheme(SchemeKind),
    /// `E[X_1 | W_{1/n}, …, W_1]`.
    OptimalL2,
    Adaptive { lambda: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Scheme(k) => k.name(),
            Method::OptimalL2 => "optimal-l2",
            Method::Adaptive { .. } => "adaptive",
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Method::Adaptive { lambda } => Some(*lambda),
            _ => None,
        }
    }

    /// Parses a method name; `adaptive` takes the given `lambda`.
    pub fn parse(name: &str, lambda: f64) -> Result<Self> {
        match name {
            "optimal-l2" => Ok(Method::OptimalL2),
            "adaptive" => Ok(Method::Adaptive { lambda }),
            other => other.parse().map(Method::Scheme),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Monte Carlo estimate of `e_p = (E|X_1 - X̂_1|^p)^{1/p}` (or of the
/// sup-norm analogue).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimate {
    pub method: Method,
    pub n: usize,
    pub p: f64,
    pub x0: f64,
    pub b: f64,
    pub estimate: f64,
    /// Delta-method standard error of `estimate`.
    pub stderr: f64,
    /// The `p`-th moment `E|error|^p` and its standard error.
    pub moment: f64,
    pub moment_stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// `(moment, moment_stderr)` of `|e|^p` over the samples.
fn moment_stats(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for v in values {
        count += 1;
        let delta = v - mean;
        mean += delta / count as f64;
        m2 += delta * (v - mean);
    }
    let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
    (mean, (var / count as f64).sqrt(), count)
}

/// `(estimate, stderr, moment, moment_stderr)` of the `L_p` norm of the
/// error samples.
pub fn lp_norm(errors: &[f64], p: f64) -> Result<(f64, f64, f64, f64)> {
    check_p(p)?;
    if errors.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 error samples, got {}",
            errors.len()
        )));
    }
    let (moment, moment_stderr, _) = moment_stats(errors.iter().map(|e| e.abs().powf(p)));
    let estimate = moment.powf(1.0 / p);
    let stderr = if moment > 0.0 {
        moment.powf(1.0 / p - 1.0) * moment_stderr / p
    } else {
        0.0
    };
    Ok((estimate, stderr, moment, moment_stderr))
}

impl ErrorEstimate {
    pub fn from_errors(method: Method, n: usize, p: f64, params: &ModelParams, seed: u64, errors: &[f64]) -> Result<Self> {
        let (estimate, stderr, moment, moment_stderr) = lp_norm(errors, p)?;
        Ok(Self {
            method,
            n,
            p,
            x0: params.x0,
            b: params.b,
            estimate,
            stderr,
            moment,
            moment_stderr,
            samples: errors.len(),
            seed,
        })
    }
}

/// Least-squares fit of `ln e = intercept + slope · ln n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub points: Vec<(usize, f64)>,
}

pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Precondition("n values must be strictly increasing".into()));
    }
    if let Some(&(n, e)) = points.iter().find(|&&(n, e)| !(e > 0.0) || n == 0) {
        return Err(Error::Domain(format!(
            "rate fit needs positive n and estimates, got ({n}, {e})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(RateFit {
        slope,
        intercept,
        max_residual,
        points: points.to_vec(),
    })
}

/// `ln(e2 / e1) / ln(n2 / n1)`.
pub fn two_point_slope(a: (usize, f64), b: (usize, f64)) -> f64 {
    (b.1 / a.1).ln() / (b.0 as f64 / a.0 as f64).ln()
}

/// Configuration of an error study over several grid sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub n_list: Vec<usize>,
    pub p: f64,
    pub x0: f64,
    pub b: f64,
    pub samples: usize,
    pub seed: u64,
    /// Reference grid size for `b ≠ 0`; defaults to `64 · max(n_list)`.
    pub n_ref: Option<usize>,
    pub quadrature: QuadratureSpec,
}

impl StudyConfig {
    /// Drift-implicit Euler against the adaptive algorithm with `λ = 4`,
    /// `p = 2`, `x0 = 0.5`, `10^4` samples, `n = 4, 8, …, 4096`.
    pub fn figure3() -> Self {
        Self {
            methods: vec![
                Method::Scheme(SchemeKind::DriftImplicitEuler),
                Method::Adaptive { lambda: 4.0 },
            ],
            n_list: default_n_list(),
            p: 2.0,
            x0: 0.5,
            b: 0.0,
            samples: 10_000,
            seed: 0,
            n_ref: None,
            quadrature: QuadratureSpec::default(),
        }
    }
}

pub fn default_n_list() -> Vec<usize> {
    (2..=12).map(|k| 1usize << k).collect()
}

/// Estimates of a study plus one rate fit per method (when ≥ 3 grid sizes).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub estimates: Vec<ErrorEstimate>,
    pub fits: Vec<(Method, RateFit)>,
}

impl StudyReport {
    fn assemble(estimates: Vec<ErrorEstimate>, methods: &[Method]) -> Result<Self> {
        let mut fits = Vec::new();
        for method in methods {
            let points: Vec<(usize, f64)> = estimates
                .iter()
                .filter(|e| e.method == *method)
                .map(|e| (e.n, e.estimate))
                .collect();
            if points.len() >= 3 && points.iter().all(|&(_, e)| e > 0.0) {
                fits.push((*method, fit_rate(&points)?));
            }
        }
        Ok(Self { estimates, fits })
    }

    pub fn get(&self, method: Method, n: usize) -> Option<&ErrorEstimate> {
        self.estimates.iter().find(|e| e.method == method && e.n == n)
    }

    pub fn fit(&self, method: Method) -> Option<&RateFit> {
        self.fits.iter().find(|(m, _)| *m == method).map(|(_, f)| f)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("p must be a finite number >= 1, got {p}")));
    }
    Ok(())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::Precondition(format!("need at least 2 samples, got {samples}")));
    }
    Ok(())
}

fn normalize_n_list(n_list: &[usize]) -> Result<Vec<usize>> {
    if n_list.is_empty() {
        return Err(Error::Config("n list is empty".into()));
    }
    if n_list.contains(&0) {
        return Err(Error::Config("n values must be positive".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    Ok(ns)
}

fn check_method(method: &Method, b: f64) -> Result<()> {
    match method {
        Method::Scheme(k) if b != 0.0 && !k.supports_drift() => Err(Error::Config(format!(
            "{k} is only defined for b = 0"
        ))),
        Method::OptimalL2 | Method::Adaptive { .. } if b != 0.0 => Err(Error::Config(format!(
            "{method} is only available for b = 0"
        ))),
        Method::Adaptive { lambda } if !(*lambda >= 1.0) => Err(Error::Config(format!(
            "adaptive lambda must be >= 1, got {lambda}"
        ))),
        _ => Ok(()),
    }
}

fn reference_size(n_ref: Option<usize>, ns: &[usize]) -> Result<usize> {
    let n_max = *ns.last().expect("non-empty");
    let n_ref = n_ref.unwrap_or(MIN_REFERENCE_RATIO * n_max);
    if n_ref < MIN_REFERENCE_RATIO * n_max {
        return Err(Error::Precondition(format!(
            "reference grid n_ref = {n_ref} must be at least {MIN_REFERENCE_RATIO} * {n_max}"
        )));
    }
    if let Some(n) = ns.iter().find(|&&n| !n_ref.is_multiple_of(n)) {
        return Err(Error::Precondition(format!(
            "reference grid n_ref = {n_ref} is not a multiple of n = {n}"
        )));
    }
    Ok(n_ref)
}

/// Runs `f` for every sample index and returns the results in index order.
fn per_sample<T, F>(samples: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..samples as u64).into_par_iter().map(f).collect()
}

/// Transposes `rows[sample][slot]` into per-slot error vectors.
fn columns(rows: Vec<Vec<f64>>, slots: usize) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(rows.len()); slots];
    for row in rows {
        for (col, v) in cols.iter_mut().zip(row) {
            col.push(v);
        }
    }
    cols
}

fn grid_estimate(method: &Method, path: &SampledPath, params: &ModelParams, n: usize, quad: QuadratureSpec) -> Result<f64> {
    match method {
        Method::Scheme(k) => Ok(run_scheme(*k, path, params, n)?.final_value()),
        Method::OptimalL2 => optimal_l2_estimator(path, params.x0, quad),
        Method::Adaptive { .. } => unreachable!("adaptive runs on its own knots"),
    }
}

/// Errors of the grid methods for one sample at `b = 0`, laid out as
/// `[method][n]`.
fn exact_grid_errors(
    grid_methods: &[Method],
    ns: &[usize],
    params: &ModelParams,
    quad: QuadratureSpec,
    coupling: &ExactCoupling,
) -> Result<Vec<f64>> {
    let n_top = coupling.path.num_intervals();
    let mut out = Vec::with_capacity(grid_methods.len() * ns.len());
    for method in grid_methods {
        for &n in ns {
            let coarse = coupling.path.subsample(n_top / n)?;
            let est = grid_estimate(method, &coarse, params, n, quad)?;
            out.push((coupling.final_value - est).abs());
        }
    }
    Ok(out)
}

/// Estimates `e_p` for every method and grid size in `cfg`.
pub fn convergence_study(cfg: &StudyConfig) -> Result<StudyReport> {
    check_p(cfg.p)?;
    check_samples(cfg.samples)?;
    let params = ModelParams::new(cfg.x0, cfg.b)?;
    let ns = normalize_n_list(&cfg.n_list)?;
    if cfg.methods.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    for m in &cfg.methods {
        check_method(m, cfg.b)?;
    }
    let grid_methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| !matches!(m, Method::Adaptive { .. }))
        .collect();
    let mut errors: Vec<(Method, usize, Vec<f64>)> = Vec::new();

    if !grid_methods.is_empty() {
        let slots = grid_methods.len() * ns.len();
        let rows = if cfg.b == 0.0 {
            exact_grid_rows(&grid_methods, &ns, &params, cfg)?
        } else {
            let n_ref = reference_size(cfg.n_ref, &ns)?;
            let covs = reference_covariances(n_ref, params.b)?;
            let seed = derive_seed(cfg.seed, PURPOSE_REFERENCE);
            per_sample(cfg.samples, |i| {
                let mut rng = StreamRng::new(seed, i);
                let reference = FineReference::sample(&covs, &params, &mut rng)?;
                let x1 = reference.final_solution();
                let mut out = Vec::with_capacity(slots);
                for method in &grid_methods {
                    for &n in &ns {
                        let coarse = reference.coarse_path(n)?;
                        let est = grid_estimate(method, &coarse, &params, n, cfg.quadrature)?;
                        out.push((x1 - est).abs());
                    }
                }
                Ok(out)
            })?
        };
        let mut cols = columns(rows, slots).into_iter();
        for method in &grid_methods {
            for &n in &ns {
                errors.push((*method, n, cols.next().expect("slot")));
            }
        }
    }

    for method in &cfg.methods {
        if let Method::Adaptive { lambda } = method {
            let seed = derive_seed(cfg.seed, PURPOSE_ADAPTIVE);
            let rows = per_sample(cfg.samples, |i| {
                let mut rng = StreamRng::new(seed, i);
                let (estimates, state) = run_adaptive_checkpoints(&ns, *lambda, params.x0, &mut rng)?;
                let coupling = ExactCoupling::complete(state.knots(), params.x0, &mut rng)?;
                Ok(estimates.iter().map(|e| (coupling.final_value - e).abs()).collect())
            })?;
            for (n, col) in ns.iter().zip(columns(rows, ns.len())) {
                errors.push((*method, *n, col));
            }
        }
    }

    let mut estimates = Vec::with_capacity(errors.len());
    for method in &cfg.methods {
        for (m, n, errs) in errors.iter().filter(|(m, _, _)| m == method) {
            estimates.push(ErrorEstimate::from_errors(*m, *n, cfg.p, &params, cfg.seed, errs)?);
        }
    }
    StudyReport::assemble(estimates, &cfg.methods)
}

fn exact_grid_rows(grid_methods: &[Method], ns: &[usize], params: &ModelParams, cfg: &StudyConfig) -> Result<Vec<Vec<f64>>> {
    let n_max = *ns.last().expect("non-empty");
    let seed = derive_seed(cfg.seed, PURPOSE_GRID);
    if ns.iter().all(|&n| n_max.is_multiple_of(n)) {
        let top = Partition::equidistant(n_max)?;
        per_sample(cfg.samples, |i| {
            let mut rng = StreamRng::new(seed, i);
            let coupling = ExactCoupling::sample_b0(top.clone(), params.x0, &mut rng)?;
            exact_grid_errors(grid_methods, ns, params, cfg.quadrature, &coupling)
        })
    } else {
        // Grids are not nested: one independent coupling per grid size,
        // still shared by all methods.
        let grids = ns
            .iter()
            .map(|&n| Partition::equidistant(n))
            .collect::<Result<Vec<_>>>()?;
        let rows = per_sample(cfg.samples, |i| {
            let mut row = vec![0.0; grid_methods.len() * ns.len()];
            for (j, (&n, grid)) in ns.iter().zip(&grids).enumerate() {
                let mut rng = StreamRng::new(derive_seed(seed, n as u64), i);
                let coupling = ExactCoupling::sample_b0(grid.clone(), params.x0, &mut rng)?;
                let errs = exact_grid_errors(grid_methods, &[n], params, cfg.quadrature, &coupling)?;
                for (mi, e) in errs.into_iter().enumerate() {
                    row[mi * ns.len() + j] = e;
                }
            }
            Ok(row)
        })?;
        Ok(rows)
    }
}

/// Single-grid `e_p` estimate. For `b ≠ 0` the reference grid has
/// `64 · n` points.
pub fn estimate_error(method: Method, n: usize, p: f64, params: &ModelParams, samples: usize, seed: u64) -> Result<ErrorEstimate> {
    let cfg = StudyConfig {
        methods: vec![method],
        n_list: vec![n],
        p,
        x0: params.x0,
        b: params.b,
        samples,
        seed,
        n_ref: None,
        quadrature: QuadratureSpec::default(),
    };
    let report = convergence_study(&cfg)?;
    Ok(report.estimates.into_iter().next().expect("one estimate"))
}

fn reference_covariances(n_ref: usize, b: f64) -> Result<Vec<IncrementCovariance>> {
    (0..n_ref)
        .map(|j| IncrementCovariance::new(j as f64 / n_ref as f64, (j + 1) as f64 / n_ref as f64, b))
        .collect()
}

/// A fine-grid realization of `W`, `M = ∫ e^{bs/2} dW` and the explicit
/// solution evaluated with the discrete running infimum of `M`.
#[derive(Debug, Clone)]
pub struct FineReference {
    path: SampledPath,
    solution: Vec<f64>,
}

impl FineReference {
    /// Samples a reference on the grid `j / n_ref` with `n_ref = covs.len()`,
    /// where `covs[j]` is the increment law over `[j/n_ref, (j+1)/n_ref]`.
    pub fn sample(covs: &[IncrementCovariance], params: &ModelParams, rng: &mut StreamRng) -> Result<Self> {
        let n_ref = covs.len();
        let sqrt_x0 = params.sqrt_x0();
        let mut w_values = Vec::with_capacity(n_ref + 1);
        let mut solution = Vec::with_capacity(n_ref + 1);
        let (mut w, mut m, mut inf_m) = (0.0f64, 0.0f64, 0.0f64);
        w_values.push(0.0);
        solution.push(params.x0);
        for (j, cov) in covs.iter().enumerate() {
            let g1 = rng.normal();
            let g2 = if cov.residual_var > 0.0 { rng.normal() } else { 0.0 };
            let (dw, dm) = cov.increments_from_normals(g1, g2);
            w += dw;
            m += dm;
            inf_m = inf_m.min(m);
            w_values.push(w);
            let t = (j + 1) as f64 / n_ref as f64;
            let y = reflect(m, inf_m, sqrt_x0);
            let decay = if params.b == 0.0 { 1.0 } else { (-params.b * t).exp() };
            solution.push(decay * y * y);
        }
        let path = SampledPath::new(Partition::equidistant(n_ref)?, w_values)?;
        Ok(Self { path, solution })
    }

    pub fn n_ref(&self) -> usize {
        self.path.num_intervals()
    }

    pub fn path(&self) -> &SampledPath {
        &self.path
    }

    /// Reference solution at the grid points.
    pub fn solution(&self) -> &[f64] {
        &self.solution
    }

    pub fn final_solution(&self) -> f64 {
        self.solution[self.solution.len() - 1]
    }

    pub fn coarse_path(&self, n: usize) -> Result<SampledPath> {
        if n == 0 || !self.n_ref().is_multiple_of(n) {
            return Err(Error::Precondition(format!(
                "n = {n} does not divide the reference grid {}",
                self.n_ref()
            )));
        }
        self.path.subsample(self.n_ref() / n)
    }

    /// `max_j |X_{t_j} - X̄^n_{t_j}|` over the reference grid, with `X̄^n`
    /// the piecewise-constant reflected Euler scheme on `n` steps.
    pub fn supnorm_error(&self, n: usize, params: &ModelParams) -> Result<f64> {
        let coarse = self.coarse_path(n)?;
        let scheme = run_scheme(SchemeKind::ReflectedEulerB, &coarse, params, n)?;
        let stride = self.n_ref() / n;
        Ok(self
            .solution
            .iter()
            .enumerate()
            .map(|(j, x)| (x - scheme.grid_values[j / stride]).abs())
            .fold(0.0, f64::max))
    }

    /// `|X_1 - X̄^n_1|` on the same reference.
    pub fn final_error(&self, n: usize, params: &ModelParams) -> Result<f64> {
        let coarse = self.coarse_path(n)?;
        let scheme = run_scheme(SchemeKind::ReflectedEulerB, &coarse, params, n)?;
        Ok((self.final_solution() - scheme.final_value()).abs())
    }
}

/// Sup-norm errors of the reflected Euler scheme for several grid sizes,
/// sharing one reference path per sample.
pub fn supnorm_study(n_list: &[usize], p: f64, params: &ModelParams, samples: usize, n_ref: usize, seed: u64) -> Result<StudyReport> {
    check_p(p)?;
    check_samples(samples)?;
    let ns = normalize_n_list(n_list)?;
    let n_ref = reference_size(Some(n_ref), &ns)?;
    let covs = reference_covariances(n_ref, params.b)?;
    let stream_seed = derive_seed(seed, PURPOSE_REFERENCE);
    let rows = per_sample(samples, |i| {
        let mut rng = StreamRng::new(stream_seed, i);
        let reference = FineReference::sample(&covs, params, &mut rng)?;
        ns.iter().map(|&n| reference.supnorm_error(n, params)).collect()
    })?;
    let method = Method::Scheme(SchemeKind::ReflectedEulerB);
    let estimates = ns
        .iter()
        .zip(columns(rows, ns.len()))
        .map(|(&n, errs)| ErrorEstimate::from_errors(method, n, p, params, seed, &errs))
        .collect::<Result<Vec<_>>>()?;
    StudyReport::assemble(estimates, &[method])
}

pub fn estimate_supnorm_error(n: usize, p: f64, params: &ModelParams, samples: usize, n_ref: usize, seed: u64) -> Result<ErrorEstimate> {
    let report = supnorm_study(&[n], p, params, samples, n_ref, seed)?;
    Ok(report.estimates.into_iter().next().expect("one estimate"))
}

/// Moment `E δ_n^p` of the scaled gap between the equidistant discrete
/// minimum and the true infimum.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStats {
    pub n: usize,
    pub p: f64,
    pub moment_estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// `δ_n = √n (min_k W_{k/n} - inf W)`.
pub fn delta_statistic(n: usize, discrete_min: f64, infimum: f64) -> f64 {
    (n as f64).sqrt() * (discrete_min - infimum)
}

/// `δ_n` for each `n` dividing the coupling's grid size.
pub fn delta_samples(coupling: &ExactCoupling, ns: &[usize]) -> Result<Vec<f64>> {
    let top = coupling.path.num_intervals();
    ns.iter()
        .map(|&n| {
            if n == 0 || !top.is_multiple_of(n) {
                return Err(Error::Precondition(format!(
                    "n = {n} does not divide the grid size {top}"
                )));
            }
            let dmin = coupling
                .path
                .values()
                .iter()
                .step_by(top / n)
                .copied()
                .fold(f64::INFINITY, f64::min);
            Ok(delta_statistic(n, dmin, coupling.global_infimum))
        })
        .collect()
}

/// `E δ_n^p` for every `n` and `p`, from nested equidistant grids sharing
/// one exactly coupled path per sample. Results are ordered by `n`, then `p`.
pub fn delta_study(n_list: &[usize], p_list: &[f64], samples: usize, seed: u64) -> Result<Vec<DeltaStats>> {
    check_samples(samples)?;
    if p_list.is_empty() {
        return Err(Error::Config("no moment orders given".into()));
    }
    for &p in p_list {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Parameter(format!("moment order must be positive, got {p}")));
        }
    }
    let ns = normalize_n_list(n_list)?;
    let n_max = *ns.last().expect("non-empty");
    if let Some(n) = ns.iter().find(|&&n| n_max % n != 0) {
        return Err(Error::Config(format!(
            "n = {n} does not divide the largest grid size {n_max}"
        )));
    }
    let top = Partition::equidistant(n_max)?;
    let stream_seed = derive_seed(seed, PURPOSE_DELTA);
    let rows = per_sample(samples, |i| {
        let mut rng = StreamRng::new(stream_seed, i);
        let coupling = ExactCoupling::sample_b0(top.clone(), 0.0, &mut rng)?;
        delta_samples(&coupling, &ns)
    })?;
    let mut out = Vec::with_capacity(ns.len() * p_list.len());
    for (&n, col) in ns.iter().zip(columns(rows, ns.len())) {
        for &p in p_list {
            let (moment, stderr, count) = moment_stats(col.iter().map(|d| d.powf(p)));
            out.push(DeltaStats {
                n,
                p,
                moment_estimate: moment,
                stderr,
                samples: count,
                seed,
            });
        }
    }
    Ok(out)
}

pub fn delta_stats(n: usize, p: f64, samples: usize, seed: u64) -> Result<DeltaStats> {
    Ok(delta_study(&[n], &[p], samples, seed)?.remove(0))
}

/// One row of a path dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRow {
    pub t: f64,
    pub w: f64,
    pub x: f64,
    pub hits_zero: bool,
}

/// A Brownian path on the grid `k / n` and the solution for `b = 0`,
/// evaluated with the running discrete minimum.
pub fn path_dump(n: usize, x0: f64, seed: u64) -> Result<Vec<PathRow>> {
    if n < 2 {
        return Err(Error::Precondition(format!("path dump needs n >= 2, got {n}")));
    }
    ModelParams::new(x0, 0.0)?;
    let mut rng = StreamRng::new(derive_seed(seed, PURPOSE_PATH), 0);
    let path = SampledPath::sample(Partition::equidistant(n)?, &mut rng);
    let mut running = f64::INFINITY;
    path.times()
        .iter()
        .zip(path.values())
        .enumerate()
        .map(|(k, (&t, &w))| {
            running = running.min(w);
            // Exact initial value rather than (√x0)².
            let x = if k == 0 { x0 } else { solution_b0(w, running, x0)? };
            Ok(PathRow {
                t,
                w,
                x,
                hits_zero: hits_zero(w, running, x0),
            })
        })
        .collect()
}

/// Floats with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub const ESTIMATE_HEADER: &str = "scheme,n,p,x0,b,lambda,estimate,stderr,samples,seed";
pub const FIT_HEADER: &str = "scheme,slope,intercept,max_residual";
pub const DELTA_HEADER: &str = "n,p,moment_estimate,stderr,samples,seed";
pub const PATH_HEADER: &str = "t,w,x,hits_zero";

pub fn write_estimates_csv<W: Write>(out: &mut W, estimates: &[ErrorEstimate]) -> io::Result<()> {
    writeln!(out, "{ESTIMATE_HEADER}")?;
    for e in estimates {
        let lambda = e.method.lambda().map(fmt_float).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.method.name(),
            e.n,
            fmt_float(e.p),
            fmt_float(e.x0),
            fmt_float(e.b),
            lambda,
            fmt_float(e.estimate),
            fmt_float(e.stderr),
            e.samples,
            e.seed
        )?;
    }
    Ok(())
}

pub fn write_fits_csv<W: Write>(out: &mut W, fits: &[(Method, RateFit)]) -> io::Result<()> {
    writeln!(out, "{FIT_HEADER}")?;
    for (method, fit) in fits {
        writeln!(
            out,
            "{},{},{},{}",
            method.name(),
            fmt_float(fit.slope),
            fmt_float(fit.intercept),
            fmt_float(fit.max_residual)
        )?;
    }
    Ok(())
}

pub fn write_delta_csv<W: Write>(out: &mut W, stats: &[DeltaStats]) -> io::Result<()> {
    writeln!(out, "{DELTA_HEADER}")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.n,
            fmt_float(s.p),
            fmt_float(s.moment_estimate),
            fmt_float(s.stderr),
            s.samples,
            s.seed
        )?;
    }
    Ok(())
}

pub fn write_path_csv<W: Write>(out: &mut W, rows: &[PathRow]) -> io::Result<()> {
    writeln!(out, "{PATH_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", fmt_float(r.t), fmt_float(r.w), fmt_float(r.x), r.hits_zero)?;
    }
    Ok(())
}

/// Creates `path` and hands a buffered writer to `body`; I/O errors carry
/// the path.
pub fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lp_norm_examples() {
        let (e, _, _, _) = lp_norm(&[0.1, 0.3], 1.0).unwrap();
        assert_relative_eq!(e, 0.2, epsilon = 1e-15);
        let (e, _, m, _) = lp_norm(&[3.0, 4.0], 2.0).unwrap();
        assert_relative_eq!(e, 12.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(m, 12.5, epsilon = 1e-15);
        assert!(lp_norm(&[1.0], 2.0).is_err());
        assert!(lp_norm(&[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn delta_method_stderr() {
        // moment samples {9, 16}: mean 12.5, sd 4.95, se 3.5
        let (e, se, _, mse) = lp_norm(&[3.0, 4.0], 2.0).unwrap();
        assert_relative_eq!(mse, 3.5, epsilon = 1e-12);
        assert_relative_eq!(se, mse / (2.0 * e), epsilon = 1e-12);
    }

    #[test]
    fn fit_rate_examples() {
        let pts: Vec<(usize, f64)> = [4, 16, 64, 256]
            .iter()
            .map(|&n| (n, 0.63 * (n as f64).powf(-0.5)))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 0.63f64.ln(), epsilon = 1e-12);
        assert!(fit.max_residual < 1e-12);

        let fit = fit_rate(&[(1, 1.0), (4, 0.5), (16, 0.25)]).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn fig3_model_two_point_slope() {
        let model = |n: usize| 0.64 * (n as f64).powf(-0.54) * (-0.095 * (n as f64).sqrt()).exp();
        let s = two_point_slope((256, model(256)), (1024, model(1024)));
        assert_relative_eq!(s, -0.54 - 0.095 * 16.0 / 4f64.ln(), epsilon = 1e-12);
        assert!((s - -1.63).abs() < 0.01);
    }

    #[test]
    fn fit_rate_errors() {
        assert!(fit_rate(&[(1, 1.0), (2, 0.5)]).is_err());
        assert!(fit_rate(&[(1, 1.0), (2, 0.0), (4, 0.5)]).is_err());
        assert!(fit_rate(&[(4, 1.0), (2, 0.5), (8, 0.5)]).is_err());
    }

    #[test]
    fn delta_statistic_example() {
        assert_relative_eq!(delta_statistic(4, -1.0, -1.2), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn delta_is_zero_without_undershoot() {
        let path = SampledPath::sample(Partition::equidistant(8).unwrap(), &mut StreamRng::new(2, 2));
        let c = ExactCoupling::from_uniforms(path, &[1.0; 8], 0.0).unwrap();
        let d = delta_samples(&c, &[2, 4, 8]).unwrap();
        // coarse grids miss fine-grid minima, the finest grid does not
        assert_eq!(d[2], 0.0);
        assert!(d.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn study_config_validation() {
        let mut cfg = StudyConfig::figure3();
        cfg.n_list.clear();
        assert!(matches!(convergence_study(&cfg), Err(Error::Config(_))));

        let mut cfg = StudyConfig::figure3();
        cfg.p = 0.5;
        assert!(convergence_study(&cfg).is_err());

        let mut cfg = StudyConfig::figure3();
        cfg.b = 1.0;
        assert!(matches!(convergence_study(&cfg), Err(Error::Config(_))));

        let mut cfg = StudyConfig::figure3();
        cfg.samples = 1;
        assert!(convergence_study(&cfg).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!(Method::parse("adaptive", 4.0).unwrap(), Method::Adaptive { lambda: 4.0 });
        assert_eq!(Method::parse("optimal-l2", 4.0).unwrap(), Method::OptimalL2);
        assert_eq!(
            Method::parse("drift-implicit-euler", 4.0).unwrap(),
            Method::Scheme(SchemeKind::DriftImplicitEuler)
        );
        assert!(Method::parse("nope", 4.0).is_err());
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        let s = fmt_float(std::f64::consts::PI);
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn reference_size_rules() {
        assert!(reference_size(Some(64 * 16), &[4, 16]).is_ok());
        assert!(reference_size(Some(63 * 16), &[4, 16]).is_err());
        assert!(reference_size(Some(64 * 16 + 2), &[16]).is_err());
        assert_eq!(reference_size(None, &[8]).unwrap(), 512);
    }
}
