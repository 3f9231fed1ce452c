//! Brownian paths on finite partitions of `[0, 1]` and the exact sampling
//! primitives built on the Brownian bridge: conditional midpoints, the
//! closed-form law of the bridge infimum, and the Gaussian coupling between
//! `W` and the time-changed martingale `M_t = ∫₀ᵗ e^{bs/2} dW_s`.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Smallest admissible subinterval length.
pub const MIN_SEGMENT: f64 = 1e-15;

/// Below this `|b|` the time change and the coupling use their `b → 0` limits.
const SMALL_B: f64 = 1e-8;

/// Strictly increasing times `0 = t_0 < … < t_m = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidPartition(format!(
                "need at least 2 points, got {}",
                times.len()
            )));
        }
        if times[0] != 0.0 || times[times.len() - 1] != 1.0 {
            return Err(Error::InvalidPartition(format!(
                "must start at 0 and end at 1, got [{}, {}]",
                times[0],
                times[times.len() - 1]
            )));
        }
        for (k, w) in times.windows(2).enumerate() {
            let len = w[1] - w[0];
            if !(len >= MIN_SEGMENT) {
                return Err(Error::InvalidPartition(format!(
                    "subinterval {} has length {len:e} (times {} -> {})",
                    k + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// The grid `k / n`, `k = 0..=n`.
    pub fn equidistant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("n must be positive".into()));
        }
        let times = (0..=n).map(|k| k as f64 / n as f64).collect();
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Returns `n` when the partition is the grid `k / n` (to 1e-12).
    pub fn equidistant_steps(&self) -> Option<usize> {
        let n = self.num_intervals();
        self.times
            .iter()
            .enumerate()
            .all(|(k, &t)| (t - k as f64 / n as f64).abs() <= 1e-12)
            .then_some(n)
    }
}

/// A Brownian path observed on a partition, with `W_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    partition: Partition,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(partition: Partition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.times.len() {
            return Err(Error::Precondition(format!(
                "{} values for {} partition points",
                values.len(),
                partition.times.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::Precondition(format!(
                "path must start at 0, got {}",
                values[0]
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("non-finite path value {v}")));
        }
        Ok(Self { partition, values })
    }

    /// Builds the path whose `k`-th increment is `√T_k · normals[k]`.
    pub fn from_normals(partition: Partition, normals: &[f64]) -> Result<Self> {
        if normals.len() != partition.num_intervals() {
            return Err(Error::Precondition(format!(
                "{} normals for {} subintervals",
                normals.len(),
                partition.num_intervals()
            )));
        }
        let mut values = Vec::with_capacity(partition.times.len());
        let mut w = 0.0;
        values.push(w);
        for (len, g) in partition.lengths().zip(normals) {
            w += len.sqrt() * g;
            values.push(w);
        }
        Ok(Self { partition, values })
    }

    /// Samples independent centered Gaussian increments with variances `T_k`.
    pub fn sample(partition: Partition, rng: &mut StreamRng) -> Self {
        let mut values = Vec::with_capacity(partition.times.len());
        let mut w = 0.0;
        values.push(w);
        for len in partition.lengths() {
            w += len.sqrt() * rng.normal();
            values.push(w);
        }
        Self { partition, values }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn times(&self) -> &[f64] {
        &self.partition.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_intervals(&self) -> usize {
        self.partition.num_intervals()
    }

    pub fn final_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn discrete_min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// The bridges between consecutive observations.
    pub fn segments(&self) -> impl Iterator<Item = BridgeSegment> + '_ {
        self.values
            .windows(2)
            .zip(self.partition.lengths())
            .map(|(v, len)| BridgeSegment {
                left: v[0],
                right: v[1],
                duration: len,
            })
    }

    /// Keeps every `stride`-th observation. The stride must divide the
    /// number of subintervals.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let m = self.num_intervals();
        if stride == 0 || !m.is_multiple_of(stride) {
            return Err(Error::Precondition(format!(
                "stride {stride} does not divide {m} subintervals"
            )));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let times = self.partition.times.iter().step_by(stride).copied().collect();
        let values = self.values.iter().step_by(stride).copied().collect();
        Ok(Self {
            partition: Partition { times },
            values,
        })
    }
}

/// Brownian bridge from `left` to `right` over a duration `duration > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSegment {
    pub left: f64,
    pub right: f64,
    pub duration: f64,
}

impl BridgeSegment {
    pub fn new(left: f64, right: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Precondition(format!(
                "bridge duration must be positive, got {duration}"
            )));
        }
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::Precondition(format!(
                "bridge endpoints must be finite, got ({left}, {right})"
            )));
        }
        Ok(Self {
            left,
            right,
            duration,
        })
    }

    pub fn lower_end(&self) -> f64 {
        self.left.min(self.right)
    }

    /// Value at the midpoint for a given standard normal `g`: the conditional
    /// law there is `N((x + y) / 2, T / 4)`.
    pub fn midpoint_value(&self, g: f64) -> f64 {
        0.5 * (self.left + self.right) + (0.25 * self.duration).sqrt() * g
    }

    pub fn sample_midpoint(&self, rng: &mut StreamRng) -> f64 {
        self.midpoint_value(rng.normal())
    }

    /// `P(inf B < z) = exp(-2 (x - z)(y - z) / T)` for `z ≤ min(x, y)`.
    ///
    /// Levels above `min(x, y)` by at most `1e-12 · max(1, |z|)` are clamped
    /// to `min(x, y)`; anything further above is a domain error.
    pub fn undershoot_prob(&self, z: f64) -> Result<f64> {
        let lo = self.lower_end();
        let z = if z > lo {
            if z - lo <= 1e-12 * z.abs().max(1.0) {
                lo
            } else {
                return Err(Error::Domain(format!(
                    "undershoot level {z} above bridge minimum endpoint {lo}"
                )));
            }
        } else {
            z
        };
        Ok((-2.0 / self.duration * (self.left - z) * (self.right - z)).exp())
    }

    /// Inverts [`undershoot_prob`](Self::undershoot_prob): returns the level
    /// `m ≤ min(x, y)` whose undershoot probability is `u`. Feeding a uniform
    /// `u` yields an exact draw of the bridge infimum.
    pub fn min_from_uniform(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Precondition(format!(
                "uniform draw must lie in (0, 1], got {u}"
            )));
        }
        Ok(self.min_from_uniform_unchecked(u))
    }

    pub(crate) fn min_from_uniform_unchecked(&self, u: f64) -> f64 {
        // Root of (x - m)(y - m) = -T ln(u) / 2 below min(x, y), written
        // without the cancellation of ((x + y) - sqrt(d² - 2T ln u)) / 2.
        let d = (self.left - self.right).abs();
        let q = -self.duration * u.ln();
        let s = (d * d + 2.0 * q).sqrt();
        if q == 0.0 {
            return self.lower_end();
        }
        self.lower_end() - q / (s + d)
    }

    pub fn sample_min(&self, rng: &mut StreamRng) -> f64 {
        self.min_from_uniform_unchecked(rng.uniform())
    }
}

/// Quadratic variation of `M` up to `t`: `(e^{bt} - 1) / b`, and `t` at `b = 0`.
pub fn time_change_tau(t: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Precondition(format!("t must lie in [0, 1], got {t}")));
    }
    if b.abs() < SMALL_B {
        return Ok(t * (1.0 + 0.5 * b * t));
    }
    Ok((b * t).exp_m1() / b)
}

/// Joint law of `(W_{t2} - W_{t1}, M_{t2} - M_{t1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementCovariance {
    pub var_w: f64,
    pub var_m: f64,
    pub cov: f64,
    /// `var_m - cov² / var_w`, evaluated without cancellation.
    pub residual_var: f64,
}

impl IncrementCovariance {
    pub fn new(t1: f64, t2: f64, b: f64) -> Result<Self> {
        if !(t1 < t2) {
            return Err(Error::Precondition(format!(
                "need t1 < t2, got t1 = {t1}, t2 = {t2}"
            )));
        }
        if t1 < 0.0 || t2 > 1.0 {
            return Err(Error::Precondition(format!(
                "times must lie in [0, 1], got [{t1}, {t2}]"
            )));
        }
        let dt = t2 - t1;
        if b.abs() < SMALL_B {
            return Ok(Self {
                var_w: dt,
                var_m: dt,
                cov: dt,
                residual_var: 0.0,
            });
        }
        // Substituting s = t1 + dt·v turns both integrals into moments of
        // e^{βv} on [0, 1] with β = b·dt/2.
        let beta = 0.5 * b * dt;
        let scale = (b * t1).exp();
        let q = beta.exp_m1();
        let e1 = |x: f64| if x == 0.0 { 1.0 } else { x.exp_m1() / x };
        let var_m = scale * dt * e1(2.0 * beta);
        let cov = scale.sqrt() * dt * e1(beta);
        let residual_var = scale * dt * q / (2.0 * beta * beta) * cancellation_free_h(beta, q);
        Ok(Self {
            var_w: dt,
            var_m,
            cov,
            residual_var: residual_var.max(0.0),
        })
    }

    pub fn correlation(&self) -> f64 {
        self.cov / (self.var_w * self.var_m).sqrt()
    }

    pub fn determinant(&self) -> f64 {
        self.var_w * self.residual_var
    }

    /// Maps two independent standard normals onto the joint increment via
    /// the Cholesky factor.
    pub fn increments_from_normals(&self, g1: f64, g2: f64) -> (f64, f64) {
        let sw = self.var_w.sqrt();
        let dw = sw * g1;
        let dm = self.cov / sw * g1 + self.residual_var.sqrt() * g2;
        (dw, dm)
    }
}

/// `β(e^β + 1) - 2(e^β - 1) = Σ_{k≥3} (k - 2) β^k / k!`, with `q = e^β - 1`.
fn cancellation_free_h(beta: f64, q: f64) -> f64 {
    if beta.abs() > 0.5 {
        return beta * (q + 2.0) - 2.0 * q;
    }
    let mut term = beta * beta / 2.0; // β^k / k! at k = 2
    let mut sum = 0.0;
    for k in 3..40 {
        term *= beta / k as f64;
        let add = (k - 2) as f64 * term;
        sum += add;
        if add.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// One draw of `(ΔW, ΔM)` over `[t1, t2]`; at `b = 0`, `ΔM = ΔW`.
pub fn sample_coupled_increments(
    t1: f64,
    t2: f64,
    b: f64,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    let cov = IncrementCovariance::new(t1, t2, b)?;
    let g1 = rng.normal();
    if cov.residual_var == 0.0 {
        let (dw, dm) = cov.increments_from_normals(g1, 0.0);
        return Ok((dw, dm));
    }
    Ok(cov.increments_from_normals(g1, rng.normal()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0.0, 1.0]).is_ok());
        assert!(Partition::new(vec![0.0]).is_err());
        assert!(Partition::new(vec![0.1, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.9]).is_err());
        assert!(Partition::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 0.6, 0.5, 1.0]).is_err());
        assert!(Partition::new(vec![0.0, 1e-16, 1.0]).is_err());
        assert!(Partition::equidistant(0).is_err());
        assert_eq!(Partition::equidistant(8).unwrap().equidistant_steps(), Some(8));
        assert_eq!(
            Partition::new(vec![0.0, 0.25, 1.0]).unwrap().equidistant_steps(),
            None
        );
    }

    #[test]
    fn path_from_draws() {
        let p = Partition::new(vec![0.0, 1.0]).unwrap();
        let zero = SampledPath::from_normals(p.clone(), &[0.0]).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0]);
        let one = SampledPath::from_normals(p, &[1.0]).unwrap();
        assert_eq!(one.values(), &[0.0, 1.0]);
    }

    #[test]
    fn path_must_start_at_zero() {
        let p = Partition::equidistant(1).unwrap();
        assert!(SampledPath::new(p.clone(), vec![0.1, 0.0]).is_err());
        assert!(SampledPath::new(p, vec![0.0]).is_err());
    }

    #[test]
    fn subsample_keeps_coarse_points() {
        let p = Partition::equidistant(4).unwrap();
        let path = SampledPath::new(p, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let coarse = path.subsample(2).unwrap();
        assert_eq!(coarse.times(), &[0.0, 0.5, 1.0]);
        assert_eq!(coarse.values(), &[0.0, 2.0, 4.0]);
        assert!(path.subsample(3).is_err());
    }

    #[test]
    fn midpoint_examples() {
        let s = BridgeSegment::new(0.0, 2.0, 1.0).unwrap();
        assert_eq!(s.midpoint_value(0.0), 1.0);
        let s = BridgeSegment::new(0.0, 0.0, 4.0).unwrap();
        assert_eq!(s.midpoint_value(1.0), 1.0);
        let s = BridgeSegment::new(1.0, -1.0, 0.5).unwrap();
        assert_relative_eq!(s.midpoint_value(2.0), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert!(BridgeSegment::new(0.0, 0.0, 0.0).is_err());
        assert!(BridgeSegment::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn undershoot_examples() {
        let s = BridgeSegment::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(s.undershoot_prob(0.0).unwrap(), 1.0);
        assert_relative_eq!(s.undershoot_prob(-1.0).unwrap(), 0.135_335_283_236_612_7, epsilon = 1e-12);
        let s = BridgeSegment::new(1.0, 2.0, 2.0).unwrap();
        assert_relative_eq!(s.undershoot_prob(0.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn undershoot_clamps_roundoff_only() {
        let s = BridgeSegment::new(0.5, 1.0, 1.0).unwrap();
        assert_eq!(s.undershoot_prob(0.5 + 1e-13).unwrap(), 1.0);
        assert!(matches!(s.undershoot_prob(0.5 + 1e-9), Err(Error::Domain(_))));
    }

    #[test]
    fn min_inversion_examples() {
        let s = BridgeSegment::new(1.0, 3.0, 2.0).unwrap();
        assert_eq!(s.min_from_uniform(1.0).unwrap(), 1.0);
        let s = BridgeSegment::new(0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(s.min_from_uniform((-2.0f64).exp()).unwrap(), -1.0, epsilon = 1e-15);
        assert_relative_eq!(s.min_from_uniform((-0.5f64).exp()).unwrap(), -0.5, epsilon = 1e-15);
        assert!(s.min_from_uniform(0.0).is_err());
        assert!(s.min_from_uniform(1.5).is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(time_change_tau(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(time_change_tau(0.0, 5.0).unwrap(), 0.0);
        assert_relative_eq!(time_change_tau(1.0, 2.0).unwrap(), 3.194_528_049_465_325, epsilon = 1e-14);
        assert!(time_change_tau(1.5, 1.0).is_err());
        // the small-b branch agrees with the closed form near the switch
        let b = 0.9e-8;
        assert_relative_eq!(time_change_tau(0.7, b).unwrap(), (b * 0.7f64).exp_m1() / b, max_relative = 1e-14);
    }

    #[test]
    fn coupling_covariance_examples() {
        let c = IncrementCovariance::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!((c.var_w, c.var_m, c.cov, c.residual_var), (1.0, 1.0, 1.0, 0.0));
        let (dw, dm) = c.increments_from_normals(0.7, -1.3);
        assert_eq!(dw, dm);

        let c = IncrementCovariance::new(0.0, 1.0, 2.0).unwrap();
        assert_relative_eq!(c.var_w, 1.0);
        assert_relative_eq!(c.var_m, 3.194_528_049_465_325, epsilon = 1e-13);
        assert_relative_eq!(c.cov, std::f64::consts::E - 1.0, epsilon = 1e-13);
        assert_relative_eq!(c.correlation(), 0.961_37, epsilon = 1e-4);
        assert_relative_eq!(
            c.residual_var,
            c.var_m - c.cov * c.cov / c.var_w,
            epsilon = 1e-12
        );
        assert!(IncrementCovariance::new(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn coupling_determinant_nonnegative() {
        for b in -5..=5 {
            for &(t1, t2) in &[(0.0, 1.0), (0.3, 0.30001), (0.999, 1.0), (0.0, 1e-9)] {
                let c = IncrementCovariance::new(t1, t2, b as f64).unwrap();
                assert!(c.determinant() >= 0.0);
                assert!(c.residual_var >= 0.0);
            }
            if b != 0 {
                let b = b as f64;
                let c = IncrementCovariance::new(0.0, 1.0, b).unwrap();
                let direct = c.var_m - c.cov * c.cov / c.var_w;
                assert_relative_eq!(c.residual_var, direct, max_relative = 1e-10);

                // short steps: residual ≈ e^{b t1} dt · Var(e^{βU}) ≈ e^{b t1} dt β²/12
                let (t1, dt) = (0.3, 1e-5);
                let c = IncrementCovariance::new(t1, t1 + dt, b).unwrap();
                let beta = 0.5 * b * dt;
                let approx = (b * t1).exp() * dt * beta * beta / 12.0;
                assert_relative_eq!(c.residual_var, approx, max_relative = 2.0 * beta.abs());
            }
        }
    }

    #[test]
    fn coupled_increments_sample_b0() {
        let mut rng = StreamRng::new(9, 0);
        for _ in 0..100 {
            let (dw, dm) = sample_coupled_increments(0.2, 0.7, 0.0, &mut rng).unwrap();
            assert_eq!(dw, dm);
        }
        assert!(sample_coupled_increments(0.7, 0.2, 1.0, &mut rng).is_err());
    }
}
