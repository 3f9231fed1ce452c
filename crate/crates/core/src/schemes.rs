//! Schemes on the equidistant grid `k / n`.
//!
//! At `b = 0` the discrete-minimum estimator, the squared projected Euler
//! scheme for the reflected Brownian motion and the drift-implicit Euler
//! scheme produce identical grid values. For general `b` the drift-implicit
//! scheme and the projected Euler scheme for the reflected OU equation
//! `dZ = -(b/2) Z dt + dW + dK` are available.

use std::fmt;
use std::str::FromStr;

use crate::brownian::SampledPath;
use crate::error::{Error, Result};
use crate::exact::{reflect, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    DiscreteMin,
    ProjectedEuler,
    DriftImplicitEuler,
    ReflectedEulerB,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::DiscreteMin,
        SchemeKind::ProjectedEuler,
        SchemeKind::DriftImplicitEuler,
        SchemeKind::ReflectedEulerB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::DiscreteMin => "discrete-min",
            SchemeKind::ProjectedEuler => "projected-euler",
            SchemeKind::DriftImplicitEuler => "drift-implicit-euler",
            SchemeKind::ReflectedEulerB => "reflected-euler-b",
        }
    }

    /// Whether the scheme is defined for drift parameters other than zero.
    pub fn supports_drift(self) -> bool {
        matches!(self, SchemeKind::DriftImplicitEuler | SchemeKind::ReflectedEulerB)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

/// Approximations of `X` at the grid points `k / n`.
///
/// Between grid points the approximation is piecewise constant, see
/// [`value_at`](Self::value_at).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutput {
    pub grid_values: Vec<f64>,
}

impl SchemeOutput {
    pub fn steps(&self) -> usize {
        self.grid_values.len() - 1
    }

    pub fn final_value(&self) -> f64 {
        self.grid_values[self.grid_values.len() - 1]
    }

    /// Piecewise-constant interpolation: the value at `t ∈ [k/n, (k+1)/n)`
    /// is the grid value at `k / n`.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.steps();
        let k = ((t * n as f64).floor() as usize).min(n);
        self.grid_values[k]
    }
}

fn grid_steps(path: &SampledPath) -> Result<usize> {
    path.partition().equidistant_steps().ok_or_else(|| {
        Error::Precondition("scheme requires the equidistant grid k/n".into())
    })
}

fn increments(path: &SampledPath) -> impl Iterator<Item = f64> + '_ {
    path.values().windows(2).map(|w| w[1] - w[0])
}

/// `X̂_{k/n} = (W_{k/n} + √x0 + (min_{l≤k} W_{l/n} + √x0)^-)²`.
pub fn discrete_min_estimator(path: &SampledPath, x0: f64) -> Result<SchemeOutput> {
    grid_steps(path)?;
    let params = ModelParams::new(x0, 0.0)?;
    let sqrt_x0 = params.sqrt_x0();
    let mut running = f64::INFINITY;
    let mut grid_values: Vec<f64> = path
        .values()
        .iter()
        .map(|&w| {
            running = running.min(w);
            let y = reflect(w, running, sqrt_x0);
            y * y
        })
        .collect();
    // Exact initial value rather than (√x0)².
    grid_values[0] = x0;
    Ok(SchemeOutput { grid_values })
}

/// `Ŷ_{k+1} = max(Ŷ_k + ΔW, 0)`.
#[inline]
pub fn projected_euler_step(y: f64, dw: f64) -> f64 {
    (y + dw).max(0.0)
}

/// Squared projected Euler scheme for the reflected Brownian motion started
/// at `√x0`.
pub fn projected_euler(path: &SampledPath, x0: f64) -> Result<SchemeOutput> {
    grid_steps(path)?;
    let mut y = ModelParams::new(x0, 0.0)?.sqrt_x0();
    let mut grid_values = Vec::with_capacity(path.values().len());
    grid_values.push(x0);
    for dw in increments(path) {
        y = projected_euler_step(y, dw);
        grid_values.push(y * y);
    }
    Ok(SchemeOutput { grid_values })
}

fn check_implicit_denominator(b: f64, n: usize) -> Result<f64> {
    let denom = 2.0 + b / n as f64;
    if !(denom > 0.0) {
        return Err(Error::Parameter(format!(
            "drift-implicit Euler needs 2 + b/n > 0, got b = {b}, n = {n}"
        )));
    }
    Ok(denom)
}

/// One step of the drift-implicit Euler scheme,
/// `((√x + ΔW + |√x + ΔW|) / (2 + b/n))²`, with `s + |s|` folded to
/// `2 max(s, 0)`.
pub fn drift_implicit_step(x: f64, dw: f64, b: f64, n: usize) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Precondition(format!("state must be >= 0, got {x}")));
    }
    if n == 0 {
        return Err(Error::Parameter("step count n must be positive".into()));
    }
    let denom = check_implicit_denominator(b, n)?;
    Ok(implicit_update(x, dw, denom))
}

#[inline]
fn implicit_update(x: f64, dw: f64, denom: f64) -> f64 {
    let z = 2.0 * (x.sqrt() + dw).max(0.0) / denom;
    z * z
}

pub fn drift_implicit_euler(path: &SampledPath, params: &ModelParams) -> Result<SchemeOutput> {
    let n = grid_steps(path)?;
    let denom = check_implicit_denominator(params.b, n)?;
    let mut x = params.x0;
    let mut grid_values = Vec::with_capacity(n + 1);
    grid_values.push(x);
    for dw in increments(path) {
        x = implicit_update(x, dw, denom);
        grid_values.push(x);
    }
    Ok(SchemeOutput { grid_values })
}

/// `Z̄_{k+1} = max(Z̄_k - (b/2) Z̄_k / n + ΔW, 0)`.
#[inline]
pub fn reflected_euler_step(z: f64, dw: f64, b: f64, n: usize) -> f64 {
    (z - 0.5 * b * z / n as f64 + dw).max(0.0)
}

/// Projected Euler scheme for the reflected OU equation, squared. Grid
/// values only; use [`SchemeOutput::value_at`] for the piecewise-constant
/// interpolation.
pub fn reflected_euler_b(path: &SampledPath, params: &ModelParams) -> Result<SchemeOutput> {
    let n = grid_steps(path)?;
    let mut z = params.sqrt_x0();
    let mut grid_values = Vec::with_capacity(n + 1);
    grid_values.push(params.x0);
    for dw in increments(path) {
        z = reflected_euler_step(z, dw, params.b, n);
        grid_values.push(z * z);
    }
    Ok(SchemeOutput { grid_values })
}

/// Runs `kind` on a path over the grid `k / n`.
pub fn run_scheme(
    kind: SchemeKind,
    path: &SampledPath,
    params: &ModelParams,
    n: usize,
) -> Result<SchemeOutput> {
    let steps = grid_steps(path)?;
    if steps != n {
        return Err(Error::Precondition(format!(
            "path has {steps} steps but n = {n}"
        )));
    }
    if params.b != 0.0 && !kind.supports_drift() {
        return Err(Error::Parameter(format!(
            "{kind} is only defined for b = 0, got b = {}",
            params.b
        )));
    }
    match kind {
        SchemeKind::DiscreteMin => discrete_min_estimator(path, params.x0),
        SchemeKind::ProjectedEuler => projected_euler(path, params.x0),
        SchemeKind::DriftImplicitEuler => drift_implicit_euler(path, params),
        SchemeKind::ReflectedEulerB => reflected_euler_b(path, params),
    }
}
