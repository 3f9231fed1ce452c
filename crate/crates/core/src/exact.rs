//! The explicit pathwise solution and exact joint samples of
//! (grid observations, true solution) used to measure errors without
//! reference-grid bias.
//!
//! For `b = 0` the solution is a Skorokhod reflection of `W + √x0`:
//!
//! ```text
//! X_t = ( W_t + √x0 + (inf_{s≤t} W_s + √x0)^- )²
//! ```
//!
//! For general `b` the same reflection applies to the time-changed martingale
//! `√x0 + M_t`, `M_t = ∫₀ᵗ e^{bs/2} dW_s`, followed by the factor `e^{-bt}`.

use crate::brownian::{Partition, SampledPath};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub x0: f64,
    pub b: f64,
}

impl ModelParams {
    pub fn new(x0: f64, b: f64) -> Result<Self> {
        if !(x0 >= 0.0) || !x0.is_finite() {
            return Err(Error::Parameter(format!(
                "initial value x0 must be finite and >= 0, got {x0}"
            )));
        }
        if !b.is_finite() {
            return Err(Error::Parameter(format!("drift b must be finite, got {b}")));
        }
        Ok(Self { x0, b })
    }

    pub fn sqrt_x0(&self) -> f64 {
        self.x0.sqrt()
    }
}

fn check_running_inf(w: f64, running_inf: f64) -> Result<()> {
    if running_inf > w {
        return Err(Error::Precondition(format!(
            "running infimum {running_inf} exceeds current value {w}"
        )));
    }
    Ok(())
}

fn check_x0(x0: f64) -> Result<()> {
    if !(x0 >= 0.0) {
        return Err(Error::Parameter(format!("x0 must be >= 0, got {x0}")));
    }
    Ok(())
}

#[inline]
fn negative_part(x: f64) -> f64 {
    (-x).max(0.0)
}

#[inline]
pub(crate) fn reflect(w: f64, running_inf: f64, sqrt_x0: f64) -> f64 {
    (w + sqrt_x0) + negative_part(running_inf + sqrt_x0)
}

/// `Y = (w + √x0) + (running_inf + √x0)^-`, the reflected square root of the
/// solution.
pub fn reflected_value(w: f64, running_inf: f64, x0: f64) -> Result<f64> {
    check_running_inf(w, running_inf)?;
    check_x0(x0)?;
    Ok(reflect(w, running_inf, x0.sqrt()))
}

/// `X_t = Y_t²` for `b = 0`.
pub fn solution_b0(w: f64, running_inf: f64, x0: f64) -> Result<f64> {
    reflected_value(w, running_inf, x0).map(|y| y * y)
}

/// Whether the solution sits at the boundary: the path is at its running
/// minimum and that minimum is at or below `-√x0`.
pub fn hits_zero(w: f64, running_inf: f64, x0: f64) -> bool {
    w <= -x0.sqrt() && w == running_inf
}

/// `X_t = e^{-bt} (√x0 + M_t + (√x0 + inf_{s≤t} M_s)^-)²`.
pub fn solution_general_b(m_t: f64, running_inf_m: f64, t: f64, params: &ModelParams) -> Result<f64> {
    check_running_inf(m_t, running_inf_m)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("t must lie in [0, 1], got {t}")));
    }
    let y = reflect(m_t, running_inf_m, params.sqrt_x0());
    Ok((-params.b * t).exp() * y * y)
}

/// A grid path together with exactly sampled bridge minima on each
/// subinterval, hence the exact global infimum and `X_1` (for `b = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactCoupling {
    pub path: SampledPath,
    pub segment_minima: Vec<f64>,
    pub global_infimum: f64,
    pub final_value: f64,
}

impl ExactCoupling {
    /// Builds the coupling from one uniform in `(0, 1]` per subinterval.
    pub fn from_uniforms(path: SampledPath, uniforms: &[f64], x0: f64) -> Result<Self> {
        check_x0(x0)?;
        if uniforms.len() != path.num_intervals() {
            return Err(Error::Precondition(format!(
                "{} uniforms for {} subintervals",
                uniforms.len(),
                path.num_intervals()
            )));
        }
        let segment_minima = path
            .segments()
            .zip(uniforms)
            .map(|(seg, &u)| seg.min_from_uniform(u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(path, segment_minima, x0))
    }

    /// Samples the bridge minima of an already observed path.
    pub fn complete(path: SampledPath, x0: f64, rng: &mut StreamRng) -> Result<Self> {
        check_x0(x0)?;
        let segment_minima = path.segments().map(|seg| seg.sample_min(rng)).collect();
        Ok(Self::assemble(path, segment_minima, x0))
    }

    /// Samples a path on `partition` and then its bridge minima.
    pub fn sample_b0(partition: Partition, x0: f64, rng: &mut StreamRng) -> Result<Self> {
        let path = SampledPath::sample(partition, rng);
        Self::complete(path, x0, rng)
    }

    fn assemble(path: SampledPath, segment_minima: Vec<f64>, x0: f64) -> Self {
        let global_infimum = segment_minima.iter().copied().fold(f64::INFINITY, f64::min);
        let y = reflect(path.final_value(), global_infimum, x0.sqrt());
        Self {
            path,
            segment_minima,
            global_infimum,
            final_value: y * y,
        }
    }
}

/// Segments whose undershoot probability is below `e^{-45}` at the
/// quadrature's upper limit do not move the conditional CDF in double
/// precision and are skipped.
const NEGLIGIBLE_LOG_PROB: f64 = -45.0;

/// Conditional CDF of the global infimum restricted to the bridges that can
/// matter below `z_top`.
struct InfimumLaw {
    // (x, y, 2/T)
    bridges: Vec<(f64, f64, f64)>,
}

impl InfimumLaw {
    fn new(path: &SampledPath, z_top: f64) -> Self {
        let bridges = path
            .segments()
            .filter_map(|s| {
                let k = 2.0 / s.duration;
                let log_p = -k * (s.left - z_top) * (s.right - z_top);
                (log_p >= NEGLIGIBLE_LOG_PROB).then_some((s.left, s.right, k))
            })
            .collect();
        Self { bridges }
    }

    /// `1 - ∏ (1 - p_k(z))`, accurate when every `p_k` is small.
    fn cdf(&self, z: f64) -> f64 {
        let log_survival: f64 = self
            .bridges
            .iter()
            .map(|&(x, y, k)| (-(-k * (x - z) * (y - z)).exp()).ln_1p())
            .sum();
        -log_survival.exp_m1()
    }
}

/// `P(inf_{[0,1]} W ≤ z | grid)` for `z` at or below the discrete minimum.
pub fn conditional_inf_cdf(path: &SampledPath, z: f64) -> Result<f64> {
    let m = path.discrete_min();
    let z = if z > m {
        if z - m <= 1e-12 * z.abs().max(1.0) {
            m
        } else {
            return Err(Error::Domain(format!(
                "level {z} above discrete minimum {m}"
            )));
        }
    } else {
        z
    };
    let mut log_survival = 0.0;
    for seg in path.segments() {
        log_survival += (-seg.undershoot_prob(z)?).ln_1p();
    }
    Ok(-f64::exp_m1(log_survival))
}

/// Settings for [`optimal_l2_estimator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Total Gauss–Legendre nodes; rounded up to whole 16-point panels.
    pub nodes: usize,
    /// Conditional mass of the infimum left below the integration range.
    pub tail_cut: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 64,
            tail_cut: 1e-10,
        }
    }
}

/// `E[X_1 | grid]` for `b = 0`.
///
/// With `I` the global infimum, `g(z) = (W_1 + √x0 + (z + √x0)^-)²` and `G`
/// the conditional CDF of `I`, integration by parts gives
///
/// ```text
/// E[g(I) | grid] = g(m) + ∫_{-∞}^{min(m, -√x0)} 2 (W_1 - z) G(z) dz
/// ```
///
/// where `g(m)` is the discrete-minimum estimate. The integral is truncated
/// where `G` falls to `tail_cut` (located by bisection) and evaluated by
/// composite Gauss–Legendre quadrature.
pub fn optimal_l2_estimator(path: &SampledPath, x0: f64, quad: QuadratureSpec) -> Result<f64> {
    check_x0(x0)?;
    if quad.nodes < quadrature::PANEL_ORDER {
        return Err(Error::Parameter(format!(
            "quadrature needs at least {} nodes, got {}",
            quadrature::PANEL_ORDER,
            quad.nodes
        )));
    }
    if !(quad.tail_cut > 0.0 && quad.tail_cut < 1.0) {
        return Err(Error::Parameter(format!(
            "tail cut must lie in (0, 1), got {}",
            quad.tail_cut
        )));
    }
    let sqrt_x0 = x0.sqrt();
    let w1 = path.final_value();
    let m = path.discrete_min();
    let plug_in = {
        let y = reflect(w1, m, sqrt_x0);
        y * y
    };

    let z_top = m.min(-sqrt_x0);
    let law = InfimumLaw::new(path, z_top);
    if law.bridges.is_empty() || law.cdf(z_top) <= quad.tail_cut {
        return Ok(plug_in);
    }

    let z_low = lower_limit(&law, z_top, quad.tail_cut)?;
    let panels = quad.nodes.div_ceil(quadrature::PANEL_ORDER);
    let correction =
        quadrature::composite(|z| 2.0 * (w1 - z) * law.cdf(z), z_low, z_top, panels);
    Ok(plug_in + correction.max(0.0))
}

/// Finds `z < z_top` with `G(z) ≈ tail_cut` by doubling then bisection.
fn lower_limit(law: &InfimumLaw, z_top: f64, tail_cut: f64) -> Result<f64> {
    let min_duration = law
        .bridges
        .iter()
        .map(|&(_, _, k)| 2.0 / k)
        .fold(f64::INFINITY, f64::min);
    let mut step = 0.25 * min_duration.sqrt();
    let mut hi = z_top;
    let mut lo = z_top - step;
    let mut doublings = 0;
    while law.cdf(lo) > tail_cut {
        doublings += 1;
        if doublings > 200 || !lo.is_finite() {
            return Err(Error::Quadrature {
                reason: "could not bracket the tail cut".into(),
                z: lo,
                tail_mass: law.cdf(lo),
                target: tail_cut,
            });
        }
        hi = lo;
        step *= 2.0;
        lo = z_top - step;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if law.cdf(mid) > tail_cut {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(lo)
}
