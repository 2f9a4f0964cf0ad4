//! Convergence-bound evaluation and joint (p, η) optimization.
//!
//! The central object is the non-convex rate bound for generalized
//! asynchronous SGD over n clients sampled with probabilities p under
//! concurrency C:
//!
//! G(p, η) = A/(η(T+1)) + ηLB·Σᵢ 1/(n²pᵢ) + η²L²BC·Σᵢ mᵢ/(n²pᵢ²)
//!
//! where B = 2G² + σ² and mᵢ is the stationary mean delay (in server
//! steps) of node i. Under the strong growth condition with coefficient
//! ρ², B becomes 2(1+ρ²)G² + σ² in the second and third terms and the
//! step-size caps shrink accordingly; ρ² = 0 recovers the plain bound.
//!
//! The module also evaluates the step-size cap η_max, the optimal η
//! (unique positive root of a cubic), grid searches over cluster-tied
//! sampling vectors, reference bounds for buffered and uniform
//! asynchronous SGD, the physical-time variant (horizon λ(p)·U), and the
//! Erlang-CDF ratio Γ governing fast-queue limits in saturated networks.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Multiplier turning a stationary m_p into a stand-in for the transient
/// maximum max_k m_{p,k}: transients overshoot the stationary delay only
/// mildly, so a modest allowance suffices.
pub const DEFAULT_TRANSIENT_SAFETY: f64 = 1.25;

/// Number of grid points in the default cluster-probability sweep.
pub const DEFAULT_GRID_POINTS: usize = 50;

/// Problem constants entering the convergence bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundParams {
    /// Smoothness constant L of every client objective.
    pub l: f64,
    /// Gradient-dissimilarity bound G² (max over clients of ‖∇f_i − ∇f‖²).
    pub g2: f64,
    /// Per-client stochastic-gradient noise variance σ².
    pub sigma2: f64,
    /// Strong-growth coefficient ρ²; 0 means plain bounded variance.
    pub rho2: f64,
    /// Initial-gap estimate A = E[f(μ_0) − f_*].
    pub a: f64,
    /// Server-step horizon T (fractional values arise from physical-time
    /// conversion T = λ(p)·U).
    pub t: f64,
    /// Concurrency: tasks in flight at all times.
    pub c: u32,
}

impl BoundParams {
    /// Validates positivity and range constraints.
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) || !self.l.is_finite() {
            return Err(Error::invalid("smoothness constant L must be positive"));
        }
        for (name, v) in [
            ("G2", self.g2),
            ("sigma2", self.sigma2),
            ("rho2", self.rho2),
            ("A", self.a),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        if !(self.t >= 1.0) || !self.t.is_finite() {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        if self.c == 0 {
            return Err(Error::invalid("concurrency C must be at least 1"));
        }
        Ok(())
    }

    /// B = 2G² + σ², the variance-plus-dissimilarity constant.
    pub fn b(&self) -> f64 {
        2.0 * self.g2 + self.sigma2
    }

    /// B under strong growth: 2(1+ρ²)G² + σ². Equals [`Self::b`] at ρ²=0.
    pub fn b_growth(&self) -> f64 {
        2.0 * (1.0 + self.rho2) * self.g2 + self.sigma2
    }

    /// Copy with a different horizon.
    pub fn with_horizon(mut self, t: f64) -> Self {
        self.t = t;
        self
    }
}

/// Where a delay profile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelaySource {
    /// Closed-form saturated-regime expression.
    ExactAsymptotic,
    /// Monte-Carlo estimate from the event simulator.
    Simulated,
}

/// Per-node stationary mean delays m_i in server steps.
#[derive(Debug, Clone, Serialize)]
pub struct DelayProfile {
    /// Mean delay of node i between dispatch and completion.
    pub m: Vec<f64>,
    /// Provenance of the estimates.
    pub source: DelaySource,
}

impl DelayProfile {
    /// New profile after validating non-negativity.
    pub fn new(m: Vec<f64>, source: DelaySource) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::invalid("delay profile must cover at least one node"));
        }
        if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("delays m_i must be non-negative and finite"));
        }
        Ok(DelayProfile { m, source })
    }

    /// m_p = Σᵢ mᵢ/(n²pᵢ²), the delay weight of a sampling vector.
    pub fn weight_m(&self, p: &[f64]) -> Result<f64> {
        validate_sampling(p)?;
        if p.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "sampling vector has {} entries but profile covers {} nodes",
                p.len(),
                self.m.len()
            )));
        }
        let n2 = (p.len() as f64).powi(2);
        Ok(self
            .m
            .iter()
            .zip(p)
            .map(|(&m, &pi)| m / (n2 * pi * pi))
            .sum())
    }
}

/// A sampling vector with its tuned step size and bound value.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingPlan {
    /// Per-node sampling probabilities.
    pub p: Vec<f64>,
    /// Step size, already clamped to η_max(p).
    pub eta: f64,
    /// G(p, η) at that step size.
    pub bound_value: f64,
}

fn validate_sampling(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("sampling vector must be nonempty"));
    }
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(
            "sampling probabilities must all be strictly positive",
        ));
    }
    Ok(())
}

/// Σᵢ 1/(n²pᵢ), the importance-weight mass of the second bound term.
fn inverse_prob_sum(p: &[f64]) -> f64 {
    let n2 = (p.len() as f64).powi(2);
    p.iter().map(|&pi| 1.0 / (n2 * pi)).sum()
}

/// Largest admissible step size for sampling vector p:
///
/// η_max = (1/4L)·min( ((1+ρ²)·C·max_k m_{p,k})^{−1/2},
///                     2/((1+ρ²)·Σᵢ 1/(n²pᵢ)) ).
///
/// `max_weightm` stands in for max_k m_{p,k}; callers derive it from a
/// stationary profile times a transient allowance. A zero value drops the
/// delay cap (zero-delay degenerate networks).
pub fn eta_max(p: &[f64], params: &BoundParams, max_weightm: f64) -> Result<f64> {
    params.validate()?;
    validate_sampling(p)?;
    if !(max_weightm >= 0.0) || !max_weightm.is_finite() {
        return Err(Error::invalid("max_weightm must be non-negative"));
    }
    let growth = 1.0 + params.rho2;
    let delay_cap = if max_weightm > 0.0 {
        1.0 / (growth * params.c as f64 * max_weightm).sqrt()
    } else {
        f64::INFINITY
    };
    let weight_cap = 2.0 / (growth * inverse_prob_sum(p));
    Ok(delay_cap.min(weight_cap) / (4.0 * params.l))
}

/// Evaluates G(p, η) with a stationary delay profile substituted for the
/// per-step averages.
pub fn convergence_bound(
    params: &BoundParams,
    p: &[f64],
    eta: f64,
    profile: &DelayProfile,
) -> Result<f64> {
    params.validate()?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid("step size must be positive"));
    }
    let weight_m = profile.weight_m(p)?;
    let b = params.b_growth();
    let first = params.a / (eta * (params.t + 1.0));
    let second = eta * params.l * b * inverse_prob_sum(p);
    let third = eta * eta * params.l * params.l * b * params.c as f64 * weight_m;
    Ok(first + second + third)
}

/// Unique positive root of 2c₃η³ + c₂η² = target (target > 0), found by
/// exponential bracketing plus bisection on the strictly increasing
/// derivative h(η) = c₂ + 2c₃η − target/η².
fn positive_cubic_root(target: f64, c2: f64, c3: f64) -> f64 {
    debug_assert!(target > 0.0);
    if c3 == 0.0 {
        if c2 == 0.0 {
            return f64::INFINITY;
        }
        return (target / c2).sqrt();
    }
    let h = |eta: f64| c2 + 2.0 * c3 * eta - target / (eta * eta);
    let mut hi = 1.0;
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while h(lo) >= 0.0 {
        hi = lo;
        lo /= 2.0;
    }
    // Bracket spans a factor of 2; 80 halvings reach full f64 precision.
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Step size minimizing G(p, ·), clamped to η_max(p) computed with the
/// default transient allowance on m_p.
pub fn optimal_step_size(params: &BoundParams, p: &[f64], profile: &DelayProfile) -> Result<f64> {
    optimal_step_size_with_safety(params, p, profile, DEFAULT_TRANSIENT_SAFETY)
}

/// As [`optimal_step_size`] with an explicit transient allowance factor
/// applied to the stationary m_p when computing the clamp.
pub fn optimal_step_size_with_safety(
    params: &BoundParams,
    p: &[f64],
    profile: &DelayProfile,
    transient_safety: f64,
) -> Result<f64> {
    params.validate()?;
    if !(transient_safety >= 1.0) {
        return Err(Error::invalid("transient allowance must be at least 1"));
    }
    let weight_m = profile.weight_m(p)?;
    let cap = eta_max(p, params, weight_m * transient_safety)?;
    let b = params.b_growth();
    let c2 = params.l * b * inverse_prob_sum(p);
    let c3 = params.l * params.l * b * params.c as f64 * weight_m;
    let target = params.a / (params.t + 1.0);
    if target == 0.0 {
        // G is nondecreasing in η; any feasible value is optimal only in
        // the degenerate all-zero case.
        if c2 == 0.0 && c3 == 0.0 {
            return Ok(cap);
        }
        return Err(Error::invalid(
            "initial gap A must be positive to balance the step size",
        ));
    }
    Ok(positive_cubic_root(target, c2, c3).min(cap))
}

/// Two clusters of nodes tied to a single probability knob: the first
/// `n_fast` nodes share probability p, the rest share
/// q = (1 − n_fast·p)/(n − n_fast) so the vector sums to one.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoGroupSpec {
    /// Total node count.
    pub n: usize,
    /// Size of the group whose probability is swept.
    pub n_fast: usize,
}

impl TwoGroupSpec {
    /// New spec; both groups must be nonempty.
    pub fn new(n: usize, n_fast: usize) -> Result<Self> {
        if n_fast == 0 || n_fast >= n {
            return Err(Error::invalid(
                "group sizes must satisfy 0 < n_fast < n",
            ));
        }
        Ok(TwoGroupSpec { n, n_fast })
    }

    /// Uniform probability 1/n.
    pub fn uniform_probability(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Supremum of feasible fast probabilities (q > 0 requires p < 1/n_fast).
    pub fn feasibility_limit(&self) -> f64 {
        1.0 / self.n_fast as f64
    }

    /// Full probability vector for a fast-group probability, or an error
    /// when the complementary slow probability is not strictly positive.
    pub fn probabilities(&self, p_fast: f64) -> Result<Vec<f64>> {
        if !(p_fast > 0.0) || !p_fast.is_finite() {
            return Err(Error::invalid("fast probability must be positive"));
        }
        let n_slow = self.n - self.n_fast;
        let q = (1.0 - self.n_fast as f64 * p_fast) / n_slow as f64;
        if !(q > 0.0) {
            return Err(Error::invalid(format!(
                "fast probability {p_fast} leaves no mass for the slow group"
            )));
        }
        let mut p = vec![p_fast; self.n_fast];
        p.extend(std::iter::repeat(q).take(n_slow));
        Ok(p)
    }

    /// Default sweep: log-spaced points from 1/(20n) up to (but excluding)
    /// the feasibility limit, with the uniform point always usable via
    /// [`optimize_sampling`]'s incumbent.
    pub fn default_grid(&self) -> Vec<f64> {
        let lo = self.uniform_probability() / 20.0;
        let hi = self.feasibility_limit() * (1.0 - 1e-6);
        log_spaced_grid(lo, hi, DEFAULT_GRID_POINTS)
    }
}

/// `count` log-spaced values covering [lo, hi].
pub fn log_spaced_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (la, lb) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (la + (lb - la) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// One evaluated grid point of a sampling sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridPoint {
    /// Fast-group probability at this point.
    pub p_fast: f64,
    /// Tuned (clamped-optimal) step size.
    pub eta: f64,
    /// Bound value G(p, η).
    pub bound: f64,
}

/// Result of a sampling-probability sweep.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationOutcome {
    /// Minimizing plan (ties resolved toward uniform).
    pub best: SamplingPlan,
    /// Fast-group probability of the minimizing plan.
    pub best_p_fast: f64,
    /// Uniform-sampling reference plan.
    pub uniform: SamplingPlan,
    /// Relative bound reduction (uniform − best)/uniform, in [0, 1).
    pub improvement: f64,
    /// Grid points skipped as infeasible (no slow-group mass).
    pub skipped: usize,
    /// All evaluated points in grid order.
    pub points: Vec<GridPoint>,
}

fn evaluate_plan<F>(
    params: &BoundParams,
    spec: &TwoGroupSpec,
    p_fast: f64,
    delay_oracle: &F,
) -> Result<Option<SamplingPlan>>
where
    F: Fn(&[f64]) -> Result<DelayProfile> + Sync,
{
    let p = match spec.probabilities(p_fast) {
        Ok(p) => p,
        Err(_) => return Ok(None),
    };
    let profile = delay_oracle(&p)?;
    let eta = optimal_step_size(params, &p, &profile)?;
    let bound = convergence_bound(params, &p, eta, &profile)?;
    Ok(Some(SamplingPlan {
        p,
        eta,
        bound_value: bound,
    }))
}

/// Sweeps the fast-group probability over a grid, tuning η per point, and
/// returns the minimizer together with the uniform reference.
///
/// The uniform point is always evaluated and serves as the incumbent:
/// a grid point replaces it only on strict improvement, so exact ties
/// resolve toward uniform. Grid points whose slow-group probability would
/// be non-positive are skipped and counted. Monte-Carlo oracles may be
/// evaluated concurrently; results merge in grid order.
pub fn optimize_sampling<F>(
    params: &BoundParams,
    spec: &TwoGroupSpec,
    delay_oracle: F,
    grid: Option<&[f64]>,
) -> Result<OptimizationOutcome>
where
    F: Fn(&[f64]) -> Result<DelayProfile> + Sync,
{
    let default_grid;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = spec.default_grid();
            &default_grid
        }
    };
    let uniform = evaluate_plan(params, spec, spec.uniform_probability(), &delay_oracle)?
        .expect("uniform sampling is always feasible");

    let evaluated: Vec<(f64, Result<Option<SamplingPlan>>)> = grid
        .par_iter()
        .map(|&p_fast| (p_fast, evaluate_plan(params, spec, p_fast, &delay_oracle)))
        .collect();

    let mut best = uniform.clone();
    let mut best_p_fast = spec.uniform_probability();
    let mut skipped = 0usize;
    let mut points = Vec::with_capacity(grid.len());
    for (p_fast, outcome) in evaluated {
        match outcome? {
            None => skipped += 1,
            Some(plan) => {
                points.push(GridPoint {
                    p_fast,
                    eta: plan.eta,
                    bound: plan.bound_value,
                });
                if plan.bound_value < best.bound_value {
                    best = plan;
                    best_p_fast = p_fast;
                }
            }
        }
    }
    let improvement = (uniform.bound_value - best.bound_value) / uniform.bound_value;
    Ok(OptimizationOutcome {
        best,
        best_p_fast,
        uniform,
        improvement,
        skipped,
        points,
    })
}

/// Physical-time variant: the horizon becomes T = λ(p)·U server steps,
/// re-evaluated per grid point from the network throughput λ(p), so
/// sampling plans trade shorter queues against slower wall-clock progress.
pub fn physical_time_bound<F, G>(
    params: &BoundParams,
    spec: &TwoGroupSpec,
    time_budget: f64,
    throughput: G,
    delay_oracle: F,
    grid: Option<&[f64]>,
) -> Result<OptimizationOutcome>
where
    F: Fn(&[f64]) -> Result<DelayProfile> + Sync,
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(time_budget > 0.0) || !time_budget.is_finite() {
        return Err(Error::invalid("time budget U must be positive"));
    }
    let horizon_for = |p: &[f64]| -> Result<f64> {
        let lambda = throughput(p)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("throughput estimate must be positive"));
        }
        Ok((lambda * time_budget).max(1.0))
    };
    let eval = |p_fast: f64| -> Result<Option<SamplingPlan>> {
        let p = match spec.probabilities(p_fast) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let scoped = params.with_horizon(horizon_for(&p)?);
        let profile = delay_oracle(&p)?;
        let eta = optimal_step_size(&scoped, &p, &profile)?;
        let bound = convergence_bound(&scoped, &p, eta, &profile)?;
        Ok(Some(SamplingPlan {
            p,
            eta,
            bound_value: bound,
        }))
    };

    let default_grid;
    let grid = match grid {
        Some(g) => g,
        None => {
            default_grid = spec.default_grid();
            &default_grid
        }
    };
    let uniform = eval(spec.uniform_probability())?.expect("uniform sampling is always feasible");
    let evaluated: Vec<(f64, Result<Option<SamplingPlan>>)> = grid
        .par_iter()
        .map(|&p_fast| (p_fast, eval(p_fast)))
        .collect();

    let mut best = uniform.clone();
    let mut best_p_fast = spec.uniform_probability();
    let mut skipped = 0usize;
    let mut points = Vec::with_capacity(grid.len());
    for (p_fast, outcome) in evaluated {
        match outcome? {
            None => skipped += 1,
            Some(plan) => {
                points.push(GridPoint {
                    p_fast,
                    eta: plan.eta,
                    bound: plan.bound_value,
                });
                if plan.bound_value < best.bound_value {
                    best = plan;
                    best_p_fast = p_fast;
                }
            }
        }
    }
    let improvement = (uniform.bound_value - best.bound_value) / uniform.bound_value;
    Ok(OptimizationOutcome {
        best,
        best_p_fast,
        uniform,
        improvement,
        skipped,
        points,
    })
}

/// Delay aggregates feeding the reference bounds: the maximum delay, the
/// mean number of active nodes per step, and per-node delay sums.
#[derive(Debug, Clone, Serialize)]
pub struct TauAggregates {
    /// Maximum observed (or modeled) delay τ_max in server steps.
    pub tau_max: f64,
    /// Average number of nodes holding in-flight work per step.
    pub tau_c: f64,
    /// Per-node totals Σ delays of node i over the horizon.
    pub tau_sum: Vec<f64>,
    /// Whether τ_max is a true worst case. Under exponential service the
    /// maximum delay is unbounded, which empties any τ_max-based bound.
    pub max_delay_bounded: bool,
}

/// A reference bound, or the reason it is undefined.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BaselineBound {
    /// Finite bound at the method's own tuned step size.
    Value {
        /// Tuned step size.
        eta: f64,
        /// Bound value.
        bound: f64,
    },
    /// Bound is vacuous for the supplied service model.
    Undefined {
        /// Why no finite value exists.
        reason: String,
    },
}

impl BaselineBound {
    /// Finite value if defined.
    pub fn value(&self) -> Option<f64> {
        match self {
            BaselineBound::Value { bound, .. } => Some(*bound),
            BaselineBound::Undefined { .. } => None,
        }
    }
}

/// Reference bounds for the two standard asynchronous baselines.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineBounds {
    /// Buffered asynchronous SGD: A/(η(T+1)) + ηLB + η²τ²_max·L²Bn,
    /// η ≤ 1/(L·τ_max^{3/2}).
    pub fedbuff: BaselineBound,
    /// Uniform asynchronous SGD: A/(η(T+1)) + ηLB + η²τ_c·L²B·Στ_sum/(T+1),
    /// η ≤ 1/(L·√(τ_c·τ_max)).
    pub asyncsgd: BaselineBound,
}

fn tuned_reference_bound(a_over_t1: f64, c2: f64, c3: f64, cap: f64) -> BaselineBound {
    let eta = if a_over_t1 > 0.0 {
        positive_cubic_root(a_over_t1, c2, c3).min(cap)
    } else {
        cap
    };
    let bound = a_over_t1 / eta + c2 * eta + c3 * eta * eta;
    BaselineBound::Value { eta, bound }
}

/// Evaluates both reference bounds at their own tuned step sizes.
pub fn baseline_bounds(params: &BoundParams, agg: &TauAggregates) -> Result<BaselineBounds> {
    params.validate()?;
    if agg.tau_max < 0.0 || agg.tau_c < 0.0 || agg.tau_sum.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("delay aggregates must be non-negative"));
    }
    let b = params.b();
    let l = params.l;
    let n = agg.tau_sum.len() as f64;
    let a_over_t1 = params.a / (params.t + 1.0);

    let fedbuff = if !agg.max_delay_bounded {
        BaselineBound::Undefined {
            reason: "maximum delay is unbounded under exponential service, \
                     so the τ_max-based bound is vacuous"
                .to_string(),
        }
    } else {
        let c2 = l * b;
        let c3 = agg.tau_max.powi(2) * l * l * b * n;
        let cap = if agg.tau_max > 0.0 {
            1.0 / (l * agg.tau_max.powf(1.5))
        } else {
            f64::INFINITY
        };
        tuned_reference_bound(a_over_t1, c2, c3, cap)
    };

    let asyncsgd = {
        let c2 = l * b;
        let sum: f64 = agg.tau_sum.iter().sum();
        let c3 = agg.tau_c * l * l * b * sum / (params.t + 1.0);
        let cap = if agg.max_delay_bounded && agg.tau_c * agg.tau_max > 0.0 {
            1.0 / (l * (agg.tau_c * agg.tau_max).sqrt())
        } else {
            f64::INFINITY
        };
        tuned_reference_bound(a_over_t1, c2, c3, cap)
    };

    Ok(BaselineBounds { fedbuff, asyncsgd })
}

/// Γ(c) = P(n_f+2, c)/P(n_f+1, c): ratio of Erlang CDFs with unit rate,
/// strictly inside (0, 1) for finite c and increasing to 1.
///
/// For c small enough that both CDFs underflow, the ratio of leading
/// series terms c/(n_f+2) is returned instead of 0/0.
pub fn gamma_ratio(nf: u32, c: f64) -> Result<f64> {
    if nf < 1 {
        return Err(Error::invalid("gamma ratio requires n_f at least 1"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("gamma ratio requires c > 0"));
    }
    let denominator = gamma_lr(nf as f64 + 1.0, c);
    if denominator <= f64::MIN_POSITIVE {
        return Ok(c / (nf as f64 + 2.0));
    }
    Ok(gamma_lr(nf as f64 + 2.0, c) / denominator)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile(n: usize, m: f64) -> DelayProfile {
        DelayProfile::new(vec![m; n], DelaySource::ExactAsymptotic).unwrap()
    }

    #[test]
    fn eta_max_single_node_example() {
        let params = BoundParams {
            l: 1.0,
            g2: 1.0,
            sigma2: 0.0,
            rho2: 0.0,
            a: 1.0,
            t: 10.0,
            c: 1,
        };
        let cap = eta_max(&[1.0], &params, 1.0).unwrap();
        assert!((cap - 0.25).abs() < 1e-15);
    }

    #[test]
    fn doubling_l_halves_eta_max() {
        let base = BoundParams {
            l: 1.0,
            g2: 3.0,
            sigma2: 0.5,
            rho2: 0.0,
            a: 1.0,
            t: 100.0,
            c: 4,
        };
        let doubled = BoundParams { l: 2.0, ..base };
        let p = [0.2, 0.3, 0.5];
        let a = eta_max(&p, &base, 2.0).unwrap();
        let b = eta_max(&p, &doubled, 2.0).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_solver_hits_stationary_point() {
        let params = BoundParams {
            l: 1.0,
            g2: 2.0,
            sigma2: 1.0,
            rho2: 0.0,
            a: 5.0,
            t: 1000.0,
            c: 3,
        };
        let p = vec![0.25; 4];
        let profile = flat_profile(4, 2.0);
        let weight_m = profile.weight_m(&p).unwrap();
        let b = params.b_growth();
        let c2 = params.l * b * inverse_prob_sum(&p);
        let c3 = params.l * params.l * b * 3.0 * weight_m;
        let target = params.a / (params.t + 1.0);
        let root = positive_cubic_root(target, c2, c3);
        let derivative = c2 + 2.0 * c3 * root - target / (root * root);
        let g = target / root + c2 * root + c3 * root * root;
        assert!(derivative.abs() <= 1e-10 * g / root);
    }

    #[test]
    fn gamma_ratio_hand_value() {
        let g = gamma_ratio(1, 1.0).unwrap();
        assert!((g - 0.080301397 / 0.264241118).abs() < 1e-6);
    }

    #[test]
    fn strong_growth_reduces_at_zero_rho() {
        let mut params = BoundParams {
            l: 2.0,
            g2: 1.5,
            sigma2: 0.3,
            rho2: 0.0,
            a: 10.0,
            t: 500.0,
            c: 5,
        };
        let p = vec![0.1, 0.4, 0.5];
        let profile = flat_profile(3, 1.0);
        let plain = convergence_bound(&params, &p, 0.01, &profile).unwrap();
        params.rho2 = 0.0;
        let again = convergence_bound(&params, &p, 0.01, &profile).unwrap();
        assert_eq!(plain, again);
        assert_eq!(params.b(), params.b_growth());
    }
}
