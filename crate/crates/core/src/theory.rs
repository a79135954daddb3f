//! Length collapse in the stop-only reduction.
//!
//! A policy that stops with probability `p = σ(θ)` at every step, facing
//! fixed conditional step means `μ_t`, has expected return
//! `J(p) = Σ_t μ_t (1−p)^{t−1}`. Gradient flow on `θ` drives `p` to zero;
//! after the first time `S0` with `p ≤ 1/2` the stop probability satisfies
//! `p(s) ≤ 4 / (μ_min (s − S0))`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stop-only policy with fixed conditional step means.
#[derive(Debug, Clone, PartialEq)]
pub struct StopOnlyModel {
    pub theta: f64,
    pub mu: Vec<f64>,
}

impl StopOnlyModel {
    pub fn new(theta: f64, mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::Parameter("need at least one step mean".into()));
        }
        Ok(StopOnlyModel { theta, mu })
    }

    pub fn l_max(&self) -> usize {
        self.mu.len()
    }

    pub fn stop_prob(&self) -> f64 {
        sigmoid(self.theta)
    }

    pub fn mu_min(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("stop probability must lie in (0,1), got {p}")))
    }
}

/// `J(p) = Σ_{t=1}^{L_max} μ_t (1−p)^{t−1}`.
pub fn expected_return(p: f64, mu: &[f64]) -> Result<f64> {
    check_p(p)?;
    let q = 1.0 - p;
    let mut weight = 1.0;
    let mut total = 0.0;
    for m in mu {
        total += m * weight;
        weight *= q;
    }
    Ok(total)
}

/// `dJ/dp = −Σ_{t=2}^{L_max} (t−1) μ_t (1−p)^{t−2}`.
pub fn d_return_dp(p: f64, mu: &[f64]) -> Result<f64> {
    check_p(p)?;
    Ok(d_return_dp_unchecked(p, mu))
}

fn d_return_dp_unchecked(p: f64, mu: &[f64]) -> f64 {
    let q = 1.0 - p;
    let mut weight = 1.0;
    let mut total = 0.0;
    for (k, m) in mu.iter().enumerate().skip(1) {
        total += k as f64 * m * weight;
        weight *= q;
    }
    -total
}

/// `E[τ] = Σ_{t=1}^{L_max} (1−p)^{t−1}`.
pub fn expected_length(p: f64, l_max: usize) -> Result<f64> {
    expected_return(p, &vec![1.0; l_max])
}

/// `dθ/ds = dJ/dp · p(1−p)`.
fn flow_field(theta: f64, mu: &[f64]) -> f64 {
    let p = sigmoid(theta);
    d_return_dp_unchecked(p, mu) * p * (1.0 - p)
}

#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub step: f64,
    /// First recorded time with `p ≤ 1/2`.
    pub s0: Option<f64>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_p(&self) -> f64 {
        self.p.last().copied().unwrap_or(f64::NAN)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.p.windows(2).all(|w| w[1] < w[0])
    }

    /// CSV rows `s,theta,p,bound` where bound is empty before `S0`.
    pub fn write_csv<W: Write>(&self, mut out: W, mu_min: f64) -> Result<()> {
        writeln!(out, "s,theta,p,bound")?;
        for k in 0..self.len() {
            let bound = match self.s0 {
                Some(s0) if self.times[k] > s0 => (4.0 / (mu_min * (self.times[k] - s0))).to_string(),
                _ => String::new(),
            };
            writeln!(out, "{},{},{},{}", self.times[k], self.theta[k], self.p[k], bound)?;
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta on the scalar flow, recording every step.
pub fn integrate_flow(theta0: f64, mu: &[f64], step: f64, horizon: f64) -> Result<FlowTrace> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {step}")));
    }
    if !(horizon >= 0.0) {
        return Err(Error::Parameter(format!("horizon must be non-negative, got {horizon}")));
    }
    let n_steps = (horizon / step).round() as usize;
    let mut trace = FlowTrace {
        times: Vec::with_capacity(n_steps + 1),
        theta: Vec::with_capacity(n_steps + 1),
        p: Vec::with_capacity(n_steps + 1),
        step,
        s0: None,
    };
    let mut theta = theta0;
    for k in 0..=n_steps {
        let s = k as f64 * step;
        if !theta.is_finite() {
            return Err(Error::Integration {
                time: s,
                detail: format!("theta became {theta}"),
            });
        }
        let p = sigmoid(theta);
        if trace.s0.is_none() && p <= 0.5 {
            trace.s0 = Some(s);
        }
        trace.times.push(s);
        trace.theta.push(theta);
        trace.p.push(p);
        if k == n_steps {
            break;
        }
        let k1 = flow_field(theta, mu);
        let k2 = flow_field(theta + 0.5 * step * k1, mu);
        let k3 = flow_field(theta + 0.5 * step * k2, mu);
        let k4 = flow_field(theta + step * k3, mu);
        theta += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Holds,
    Violated,
    /// `p` never dropped to 1/2 within the horizon.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub status: BoundStatus,
    /// Largest `p(s) − bound(s)` over checked points (negative when it holds).
    pub max_violation: f64,
    /// Earliest checked time where the bound fails.
    pub first_violation: Option<f64>,
    pub checked_points: usize,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.status == BoundStatus::Holds
    }
}

/// Checks `p(s) ≤ 4 / (μ_min (s − S0))` at every point with `s > S0 + h`.
pub fn verify_bound(trace: &FlowTrace, mu_min: f64) -> Result<BoundReport> {
    if !(mu_min > 0.0) {
        return Err(Error::Parameter(format!("mu_min must be positive, got {mu_min}")));
    }
    let Some(s0) = trace.s0 else {
        return Ok(BoundReport {
            status: BoundStatus::Inconclusive,
            max_violation: f64::NAN,
            first_violation: None,
            checked_points: 0,
        });
    };
    let mut max_violation = f64::NEG_INFINITY;
    let mut first_violation = None;
    let mut checked = 0;
    for (&s, &p) in trace.times.iter().zip(&trace.p) {
        if s <= s0 + trace.step {
            continue;
        }
        checked += 1;
        let slack = p - 4.0 / (mu_min * (s - s0));
        if slack > 0.0 && first_violation.is_none() {
            first_violation = Some(s);
        }
        max_violation = max_violation.max(slack);
    }
    let status = if checked == 0 {
        BoundStatus::Inconclusive
    } else if first_violation.is_some() {
        BoundStatus::Violated
    } else {
        BoundStatus::Holds
    };
    Ok(BoundReport {
        status,
        max_violation,
        first_violation,
        checked_points: checked,
    })
}

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 200.0;

/// One point of the verification grid: constant step means `μ_t = mu_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub mu_min: f64,
    pub l_max: usize,
    pub theta0: f64,
}

impl GridPoint {
    pub fn mu(&self) -> Vec<f64> {
        vec![self.mu_min; self.l_max]
    }
}

pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for mu_min in [0.5, 1.0, 2.0] {
        for l_max in [3, 10] {
            for theta0 in [-1.0, 0.0, 2.0] {
                grid.push(GridPoint { mu_min, l_max, theta0 });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Serialize)]
pub struct GridOutcome {
    pub point: GridPoint,
    pub bound: BoundReport,
    pub strictly_decreasing: bool,
    pub final_p: f64,
}

impl GridOutcome {
    pub fn passed(&self) -> bool {
        self.bound.holds() && self.strictly_decreasing
    }
}

/// Integrates and checks every grid point, returning traces alongside.
pub fn verify_grid(grid: &[GridPoint], step: f64, horizon: f64) -> Result<Vec<(GridOutcome, FlowTrace)>> {
    grid.iter()
        .map(|&point| {
            let trace = integrate_flow(point.theta0, &point.mu(), step, horizon)?;
            let bound = verify_bound(&trace, point.mu_min)?;
            Ok((
                GridOutcome {
                    point,
                    bound,
                    strictly_decreasing: trace.strictly_decreasing(),
                    final_p: trace.final_p(),
                },
                trace,
            ))
        })
        .collect()
}

/// Monte Carlo stopping times of the stop-only policy.
pub fn sample_lengths(p: f64, l_max: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut len = 1;
            while len < l_max && rng.random::<f64>() >= p {
                len += 1;
            }
            len
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StopOnlyRun {
    pub mean_length: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Discrete stochastic counterpart of the flow: each update samples `batch`
/// stopping times, draws Gaussian step rewards with means `mu` and unit
/// noise, subtracts `offset` per step, and ascends the standard estimator.
pub fn train_stop_only(
    theta0: f64,
    mu: &[f64],
    offset: f64,
    lr: f64,
    batch: usize,
    updates: usize,
    seed: u64,
) -> StopOnlyRun {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l_max = mu.len();
    let mut theta = theta0;
    let mut run = StopOnlyRun {
        mean_length: Vec::with_capacity(updates),
        theta: Vec::with_capacity(updates),
    };
    for _ in 0..updates {
        let p = sigmoid(theta);
        let mut grad = 0.0;
        let mut total_len = 0usize;
        for _ in 0..batch {
            // Decision t stops with prob p; d log π / dθ is (1−p) for stop
            // and −p for continue. The length-L_max path makes no stop choice.
            let mut len = 0;
            let mut score = 0.0;
            let mut ret = 0.0;
            loop {
                len += 1;
                let noise: f64 = StandardNormal.sample(&mut rng);
                ret += mu[len - 1] + noise - offset;
                if len == l_max {
                    break;
                }
                if rng.random::<f64>() < p {
                    score += 1.0 - p;
                    break;
                }
                score -= p;
            }
            total_len += len;
            grad += score * ret;
        }
        theta += lr * grad / batch as f64;
        run.theta.push(theta);
        run.mean_length.push(total_len as f64 / batch as f64);
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_return_cases() {
        assert!((expected_return(0.5, &[1.0, 1.0, 1.0]).unwrap() - 1.75).abs() < 1e-15);
        assert!((expected_return(1.0 - 1e-12, &[2.0, 5.0, 7.0]).unwrap() - 2.0).abs() < 1e-9);
        for p in [0.1, 0.5, 0.9] {
            assert_eq!(expected_return(p, &[3.5]).unwrap(), 3.5);
        }
        assert!(matches!(expected_return(0.0, &[1.0]), Err(Error::Domain(_))));
        assert!(matches!(expected_return(1.0, &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn derivative_cases() {
        assert!((d_return_dp(0.5, &[1.0, 1.0, 1.0]).unwrap() + 2.0).abs() < 1e-15);
        assert_eq!(d_return_dp(0.3, &[4.0]).unwrap(), 0.0);
        assert!(d_return_dp(1.5, &[1.0]).is_err());
        let mu = [0.7, 1.3, 0.9, 2.0, 1.1];
        for p in [0.05, 0.3, 0.5, 0.77, 0.95] {
            let h = 1e-6;
            let fd = (expected_return(p + h, &mu).unwrap() - expected_return(p - h, &mu).unwrap()) / (2.0 * h);
            let exact = d_return_dp(p, &mu).unwrap();
            assert!(((fd - exact) / exact).abs() < 1e-8, "p={p}: {fd} vs {exact}");
        }
    }

    #[test]
    fn derivative_bounded_by_mu_min() {
        for &mu_min in &[0.5, 1.0, 2.0] {
            for &l_max in &[3usize, 10] {
                let mu = vec![mu_min; l_max];
                for k in 1..1000 {
                    let p = k as f64 / 1000.0;
                    assert!(d_return_dp(p, &mu).unwrap() <= -mu_min);
                }
            }
        }
    }

    #[test]
    fn zero_means_leave_theta_constant() {
        let trace = integrate_flow(0.3, &[0.0; 4], 1e-2, 5.0).unwrap();
        assert!(trace.theta.iter().all(|t| *t == 0.3));
    }

    #[test]
    fn unit_means_decrease_p() {
        let trace = integrate_flow(0.0, &[1.0; 10], 1e-3, 50.0).unwrap();
        assert!(trace.strictly_decreasing());
        assert_eq!(trace.s0, Some(0.0));
    }

    #[test]
    fn step_refinement_is_stable() {
        let coarse = integrate_flow(0.0, &[1.0; 10], 1e-3, 200.0).unwrap();
        let fine = integrate_flow(0.0, &[1.0; 10], 5e-4, 200.0).unwrap();
        assert!((coarse.final_p() - fine.final_p()).abs() < 1e-8);
    }

    #[test]
    fn bound_holds_on_default_trace() {
        let trace = integrate_flow(0.0, &[1.0; 10], 1e-3, 200.0).unwrap();
        let report = verify_bound(&trace, 1.0).unwrap();
        assert!(report.holds(), "{report:?}");
        assert!(report.max_violation < 0.0);
    }

    #[test]
    fn constant_trace_eventually_violates() {
        let step = 0.1;
        let trace = FlowTrace {
            times: (0..1000).map(|k| k as f64 * step).collect(),
            theta: vec![0.0; 1000],
            p: vec![0.4; 1000],
            step,
            s0: Some(0.0),
        };
        let report = verify_bound(&trace, 1.0).unwrap();
        assert_eq!(report.status, BoundStatus::Violated);
        // 4 / s < 0.4 once s > 10.
        let first = report.first_violation.unwrap();
        assert!(first > 10.0 && first <= 10.0 + step + 1e-9);
    }

    #[test]
    fn unreached_half_is_inconclusive() {
        let trace = integrate_flow(8.0, &[0.5; 3], 1e-2, 1.0).unwrap();
        assert_eq!(verify_bound(&trace, 0.5).unwrap().status, BoundStatus::Inconclusive);
    }

    #[test]
    fn expected_length_matches_sampling() {
        assert!((expected_length(0.5, 3).unwrap() - 1.75).abs() < 1e-15);
        assert!((expected_length(1e-9, 6).unwrap() - 6.0).abs() < 1e-6);
        let lens = sample_lengths(0.5, 3, 100_000, 4);
        let n = lens.len() as f64;
        let mean = lens.iter().sum::<usize>() as f64 / n;
        let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 1.75).abs() < 3.0 * (var / n).sqrt());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let trace = integrate_flow(0.0, &[1.0; 3], 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, 1.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("s,theta,p,bound\n"));
    }

    #[test]
    fn non_positive_step_is_rejected() {
        assert!(integrate_flow(0.0, &[1.0], 0.0, 1.0).is_err());
        assert!(verify_bound(&FlowTrace::default(), 0.0).is_err());
    }
}
