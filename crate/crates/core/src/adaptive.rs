//! Adaptive approximation of the global infimum of `W` by sequential
//! midpoint bisection.
//!
//! The first observation is `W_1`. Each further observation bisects the
//! subinterval whose Brownian bridge is most likely to undershoot the current
//! discrete minimum `m` by more than `ε = √(λ h ln(1/h))`, `h` being the
//! smallest subinterval length. Since the undershoot probability is
//! `exp(-2 (y_l - m + ε)(y_r - m + ε) / T)`, the most likely interval is the
//! one maximizing `T / ((y_l - m + ε)(y_r - m + ε))`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::brownian::{BridgeSegment, Partition, SampledPath, MIN_SEGMENT};
use crate::error::{Error, Result};
use crate::exact::{reflect, ExactCoupling};
use crate::rng::StreamRng;

/// `ε = √(λ h ln(1/h))`.
pub fn threshold(h: f64, lambda: f64) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Precondition(format!("h must lie in (0, 1], got {h}")));
    }
    check_lambda(lambda)?;
    Ok((lambda * h * (1.0 / h).ln()).sqrt())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 1.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be >= 1, got {lambda}")));
    }
    Ok(())
}

/// Selection score of a subinterval; monotone in its undershoot probability.
#[inline]
pub fn interval_score(len: f64, left: f64, right: f64, m: f64, eps: f64) -> f64 {
    len / (((left - m) + eps) * ((right - m) + eps))
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    t_left: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap on score; equal scores prefer the leftmost interval.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.t_left.total_cmp(&self.t_left))
    }
}

/// Knots observed so far and the derived selection quantities.
///
/// Candidate intervals live in a max-heap. The scores depend on the knots
/// only through `ε - m`; whenever `m` or `ε` changes every score is
/// recomputed, otherwise only the two halves of a bisected interval are
/// scored.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    times: Vec<f64>,
    values: Vec<f64>,
    lambda: f64,
    m: f64,
    h: f64,
    epsilon: f64,
    candidates: BinaryHeap<Candidate>,
}

impl AdaptiveState {
    /// State after the first observation `W_1 = w1`.
    pub fn new(w1: f64, lambda: f64) -> Result<Self> {
        let path = SampledPath::new(Partition::equidistant(1)?, vec![0.0, w1])?;
        Self::from_knots(&path, lambda)
    }

    /// State for an arbitrary set of knots containing 0 and 1.
    pub fn from_knots(knots: &SampledPath, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let times = knots.times().to_vec();
        let values = knots.values().to_vec();
        let h = knots
            .partition()
            .lengths()
            .fold(f64::INFINITY, f64::min);
        let mut state = Self {
            m: knots.discrete_min(),
            epsilon: threshold(h, lambda)?,
            h,
            times,
            values,
            lambda,
            candidates: BinaryHeap::new(),
        };
        state.rescore_all();
        Ok(state)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Current discrete minimum `m`.
    pub fn min(&self) -> f64 {
        self.m
    }

    /// Smallest subinterval length `h`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The value at `t = 1`.
    pub fn w1(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Number of observations, not counting `W_0 = 0`.
    pub fn observations(&self) -> usize {
        self.times.len() - 1
    }

    pub fn knots(&self) -> SampledPath {
        let partition = Partition::new(self.times.clone()).expect("knots form a partition");
        SampledPath::new(partition, self.values.clone()).expect("knots start at zero")
    }

    /// `(W_1 + √x0 + (m + √x0)^-)²`.
    pub fn estimate(&self, x0: f64) -> f64 {
        let y = reflect(self.w1(), self.m, x0.sqrt());
        y * y
    }

    fn score_at(&self, i: usize) -> Candidate {
        Candidate {
            score: interval_score(
                self.times[i + 1] - self.times[i],
                self.values[i],
                self.values[i + 1],
                self.m,
                self.epsilon,
            ),
            t_left: self.times[i],
        }
    }

    fn rescore_all(&mut self) {
        if self.observations() == 1 {
            self.candidates.clear();
            return;
        }
        let all: Vec<Candidate> = (0..self.observations()).map(|i| self.score_at(i)).collect();
        self.candidates = BinaryHeap::from(all);
    }

    fn index_of(&self, t_left: f64) -> usize {
        self.times.partition_point(|&t| t < t_left)
    }

    /// 1-based index of the interval to bisect next; ties go to the
    /// leftmost interval.
    pub fn select_interval(&self) -> usize {
        match self.candidates.peek() {
            None => 1,
            Some(c) => self.index_of(c.t_left) + 1,
        }
    }

    /// Bisects the selected interval, sampling the midpoint from the bridge
    /// law, and updates `m`, `h` and `ε`.
    pub fn refine(&mut self, rng: &mut StreamRng) -> Result<()> {
        self.refine_with(|seg| seg.sample_midpoint(rng))
    }

    /// As [`refine`](Self::refine) with the midpoint value supplied by `f`.
    pub fn refine_with<F: FnOnce(&BridgeSegment) -> f64>(&mut self, f: F) -> Result<()> {
        let i = match self.candidates.pop() {
            None => 0,
            Some(c) => self.index_of(c.t_left),
        };
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let half = 0.5 * (t1 - t0);
        if half < MIN_SEGMENT {
            return Err(Error::Precondition(format!(
                "bisection of [{t0}, {t1}] would go below the minimal subinterval length"
            )));
        }
        let seg = BridgeSegment::new(self.values[i], self.values[i + 1], t1 - t0)?;
        let y = f(&seg);
        let t = t0 + half;
        self.times.insert(i + 1, t);
        self.values.insert(i + 1, y);

        let (old_m, old_eps) = (self.m, self.epsilon);
        self.m = self.m.min(y);
        self.h = self.h.min(half);
        self.epsilon = threshold(self.h, self.lambda)?;
        if self.m != old_m || self.epsilon != old_eps {
            self.rescore_all();
        } else {
            let left = self.score_at(i);
            let right = self.score_at(i + 1);
            self.candidates.push(left);
            self.candidates.push(right);
        }
        Ok(())
    }
}

fn check_budget(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("observation budget n must be >= 1".into()));
    }
    Ok(())
}

/// Runs the algorithm for `n` observations: `W_1`, then `n - 1` bisections.
pub fn run_adaptive(n: usize, lambda: f64, x0: f64, rng: &mut StreamRng) -> Result<(f64, AdaptiveState)> {
    let (estimates, state) = run_adaptive_checkpoints(&[n], lambda, x0, rng)?;
    Ok((estimates[0], state))
}

/// Runs up to the largest budget in `budgets` and records the estimate after
/// each listed number of observations. Since the knot sequence for a smaller
/// budget is a prefix of the one for a larger budget, one run serves all.
pub fn run_adaptive_checkpoints(
    budgets: &[usize],
    lambda: f64,
    x0: f64,
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, AdaptiveState)> {
    if budgets.is_empty() {
        return Err(Error::Config("no observation budgets given".into()));
    }
    for &n in budgets {
        check_budget(n)?;
    }
    if !(x0 >= 0.0) {
        return Err(Error::Parameter(format!("x0 must be >= 0, got {x0}")));
    }
    let n_max = *budgets.iter().max().expect("non-empty");
    let mut estimates = vec![f64::NAN; budgets.len()];
    let mut state = AdaptiveState::new(rng.normal(), lambda)?;
    let record = |state: &AdaptiveState, estimates: &mut Vec<f64>| {
        for (slot, &n) in estimates.iter_mut().zip(budgets) {
            if n == state.observations() {
                *slot = state.estimate(x0);
            }
        }
    };
    record(&state, &mut estimates);
    while state.observations() < n_max {
        state.refine(rng)?;
        record(&state, &mut estimates);
    }
    Ok((estimates, state))
}

/// One joint draw of the adaptive estimate and the exact `X_1`: after the
/// run, the bridge minima on the final knots are sampled exactly.
pub fn adaptive_error_sample(n: usize, lambda: f64, x0: f64, rng: &mut StreamRng) -> Result<(f64, f64)> {
    let (estimate, state) = run_adaptive(n, lambda, x0, rng)?;
    let coupling = ExactCoupling::complete(state.knots(), x0, rng)?;
    Ok((estimate, coupling.final_value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn knots(times: &[f64], values: &[f64]) -> SampledPath {
        SampledPath::new(Partition::new(times.to_vec()).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold(1.0, 7.0).unwrap(), 0.0);
        assert_relative_eq!(threshold(0.5, 4.0).unwrap(), (2.0 * 2f64.ln()).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(threshold(0.5, 4.0).unwrap(), 1.17741, epsilon = 1e-5);
        assert_relative_eq!(threshold(0.25, 1.0).unwrap(), 0.58871, epsilon = 1e-5);
        assert!(threshold(0.0, 4.0).is_err());
        assert!(threshold(1.5, 4.0).is_err());
        assert!(threshold(0.5, 0.5).is_err());
    }

    #[test]
    fn selection_examples() {
        let s = AdaptiveState::new(0.3, 4.0).unwrap();
        assert_eq!(s.select_interval(), 1);

        let s = AdaptiveState::from_knots(&knots(&[0.0, 0.5, 1.0], &[0.0, -1.0, 0.0]), 4.0).unwrap();
        let eps = s.epsilon();
        let a = interval_score(0.5, 0.0, -1.0, -1.0, eps);
        let b = interval_score(0.5, -1.0, 0.0, -1.0, eps);
        assert_eq!(a, b);
        assert_relative_eq!(a, 0.19503, epsilon = 1e-5);
        assert_eq!(s.select_interval(), 1);

        let s = AdaptiveState::from_knots(&knots(&[0.0, 0.5, 1.0], &[0.0, -1.0, -0.5]), 4.0).unwrap();
        let b = interval_score(0.5, -1.0, -0.5, -1.0, s.epsilon());
        assert_relative_eq!(b, 0.25316, epsilon = 1e-5);
        assert_eq!(s.select_interval(), 2);
    }

    #[test]
    fn refine_examples() {
        let mut s = AdaptiveState::new(0.3, 4.0).unwrap();
        s.refine_with(|_| 0.1).unwrap();
        assert_eq!(s.times(), &[0.0, 0.5, 1.0]);
        assert_eq!(s.h(), 0.5);

        let mut s = AdaptiveState::from_knots(&knots(&[0.0, 0.5, 1.0], &[0.0, -1.0, -0.5]), 4.0).unwrap();
        let mut rng = StreamRng::new(1, 0);
        s.refine(&mut rng).unwrap();
        assert_eq!(s.times(), &[0.0, 0.5, 0.75, 1.0]);
        assert_eq!(s.h(), 0.25);
        assert_eq!(s.observations(), 3);
    }

    #[test]
    fn refine_updates_minimum() {
        let mut s = AdaptiveState::new(-0.2, 2.0).unwrap();
        s.refine_with(|seg| {
            assert_eq!((seg.left, seg.right, seg.duration), (0.0, -0.2, 1.0));
            -0.9
        })
        .unwrap();
        assert_eq!(s.min(), -0.9);
        assert_relative_eq!(s.epsilon(), threshold(0.5, 2.0).unwrap());
    }

    #[test]
    fn single_observation_estimate() {
        for w1 in [-1.3, -0.2, 0.0, 0.8] {
            let s = AdaptiveState::new(w1, 4.0).unwrap();
            let x0: f64 = 0.5;
            assert_relative_eq!(s.estimate(x0), (w1 + x0.sqrt()).max(0.0).powi(2), epsilon = 1e-15);
        }
    }

    #[test]
    fn budget_and_lambda_validation() {
        let mut rng = StreamRng::new(0, 0);
        assert!(run_adaptive(0, 4.0, 0.5, &mut rng).is_err());
        assert!(run_adaptive(4, 0.9, 0.5, &mut rng).is_err());
        assert!(run_adaptive(4, 4.0, -0.5, &mut rng).is_err());
    }

    #[test]
    fn second_knot_is_midpoint() {
        for seed in 0..20 {
            let mut rng = StreamRng::new(seed, 3);
            let (_, s) = run_adaptive(2, 4.0, 0.5, &mut rng).unwrap();
            assert_eq!(s.times(), &[0.0, 0.5, 1.0]);
        }
    }
}
