//! Exact analytics for the closed Jackson network behind the scheduler.
//!
//! The network has `n` nodes with exponential service rates μ_i, a fixed
//! population of `C` circulating tasks, and complete-graph routing: when a
//! task completes at any node, the next node is sampled from a probability
//! vector `p`. Writing θ_i = p_i/μ_i, the stationary distribution over
//! queue-length vectors x with Σx_i = C is the product form
//!
//! ```text
//! π_C(x) = H_C⁻¹ · Π_i θ_i^{x_i},    H_C = Σ_{x: Σx_i=C} Π_i θ_i^{x_i}.
//! ```
//!
//! This module computes the transition rates, the normalization constants
//! H_0..H_C by convolution, the full distribution table when the state space
//! is small enough to enumerate, queue-length moments, the throughput, and
//! the distribution seen by an arriving task (population C−1).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default cap on the number of states an explicit enumeration may visit.
pub const DEFAULT_ENUM_BUDGET: u64 = 10_000_000;

/// Environment variable overriding [`DEFAULT_ENUM_BUDGET`].
pub const ENUM_BUDGET_ENV: &str = "FEDQUEUE_ENUM_BUDGET";

/// θ ratio above which normalization constants are computed in log space.
const LOG_SPACE_THETA_RATIO: f64 = 1e6;

/// Population above which normalization constants are computed in log space.
const LOG_SPACE_POPULATION: u32 = 200;

/// Enumeration budget currently in effect (environment override or default).
pub fn enum_budget() -> u64 {
    std::env::var(ENUM_BUDGET_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_ENUM_BUDGET)
}

/// Static description of the closed network: service rates, sampling
/// probabilities, and the circulating task count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConfig {
    mu: Vec<f64>,
    p: Vec<f64>,
    concurrency: u32,
}

impl NetworkConfig {
    /// Builds a validated configuration.
    ///
    /// Requires `mu` and `p` of equal nonzero length, every μ_i > 0 and
    /// finite, every p_i > 0, Σp_i = 1 within 1e-12, and concurrency ≥ 1.
    pub fn new(mu: Vec<f64>, p: Vec<f64>, concurrency: u32) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::invalid("network needs at least one node"));
        }
        if mu.len() != p.len() {
            return Err(Error::invalid(format!(
                "mu has {} entries but p has {}",
                mu.len(),
                p.len()
            )));
        }
        if concurrency == 0 {
            return Err(Error::invalid("concurrency must be at least 1"));
        }
        for (i, &m) in mu.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::invalid(format!("mu[{i}] = {m} must be positive")));
            }
        }
        for (i, &q) in p.iter().enumerate() {
            if !(q > 0.0) || !q.is_finite() {
                return Err(Error::invalid(format!("p[{i}] = {q} must be positive")));
            }
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "sampling probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(NetworkConfig { mu, p, concurrency })
    }

    /// Configuration with uniform sampling probabilities p_i = 1/n.
    pub fn uniform(mu: Vec<f64>, concurrency: u32) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::invalid("network needs at least one node"));
        }
        let p = vec![1.0 / n as f64; n];
        Self::new(mu, p, concurrency)
    }

    /// Configuration built from clusters of identical nodes.
    ///
    /// `clusters` lists `(count, rate, probability per node)`; probabilities
    /// must sum to 1 over all nodes.
    pub fn clustered(clusters: &[(usize, f64, f64)], concurrency: u32) -> Result<Self> {
        let mut mu = Vec::new();
        let mut p = Vec::new();
        for &(count, rate, prob) in clusters {
            mu.extend(std::iter::repeat(rate).take(count));
            p.extend(std::iter::repeat(prob).take(count));
        }
        Self::new(mu, p, concurrency)
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    /// Service rates μ_i.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Sampling probabilities p_i.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Circulating task count C.
    pub fn concurrency(&self) -> u32 {
        self.concurrency
    }

    /// Per-node load parameters θ_i = p_i/μ_i of the product form.
    pub fn theta(&self) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.p)
            .map(|(&m, &q)| q / m)
            .collect()
    }

    /// Same network with a different circulating task count.
    pub fn with_concurrency(&self, concurrency: u32) -> Result<Self> {
        Self::new(self.mu.clone(), self.p.clone(), concurrency)
    }

    /// Same network with different sampling probabilities.
    pub fn with_p(&self, p: Vec<f64>) -> Result<Self> {
        Self::new(self.mu.clone(), p, self.concurrency)
    }
}

/// Probability table over queue-length vectors with a fixed population.
///
/// Keys are full state vectors in lexicographic order; masses are
/// non-negative and sum to 1 within 1e-10.
#[derive(Debug, Clone)]
pub struct DistributionTable {
    entries: BTreeMap<Vec<u32>, f64>,
    population: u32,
}

impl DistributionTable {
    /// Builds a table from unnormalized weights, checking the population
    /// constraint on every state.
    pub fn from_weights(entries: BTreeMap<Vec<u32>, f64>, population: u32) -> Result<Self> {
        let mut total = 0.0;
        for (state, &w) in &entries {
            if !(w >= 0.0) {
                return Err(Error::invalid(format!("negative weight {w} for {state:?}")));
            }
            let pop: u32 = state.iter().sum();
            if pop != population {
                return Err(Error::invalid(format!(
                    "state {state:?} has population {pop}, expected {population}"
                )));
            }
            total += w;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::invalid(format!("weights sum to {total}")));
        }
        let entries = entries
            .into_iter()
            .map(|(s, w)| (s, w / total))
            .collect();
        Ok(DistributionTable { entries, population })
    }

    /// Population every state in the support sums to.
    pub fn population(&self) -> u32 {
        self.population
    }

    /// Probability mass of a state (0 if absent from the support).
    pub fn mass(&self, state: &[u32]) -> f64 {
        self.entries.get(state).copied().unwrap_or(0.0)
    }

    /// Iterates over `(state, mass)` in lexicographic state order.
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u32>, f64)> {
        self.entries.iter().map(|(s, &m)| (s, m))
    }

    /// Number of states in the support.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when the support is empty.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total-variation distance ½·Σ|p(x) − q(x)| over the union of supports.
    pub fn total_variation(&self, other: &DistributionTable) -> f64 {
        let mut tv = 0.0;
        for (state, mass) in &self.entries {
            tv += (mass - other.mass(state)).abs();
        }
        for (state, mass) in &other.entries {
            if !self.entries.contains_key(state) {
                tv += mass.abs();
            }
        }
        tv / 2.0
    }

    /// Per-node marginal means Σ_x x_i·π(x).
    pub fn mean_vector(&self, n: usize) -> Vec<f64> {
        let mut means = vec![0.0; n];
        for (state, mass) in &self.entries {
            for (i, &x) in state.iter().enumerate() {
                means[i] += x as f64 * mass;
            }
        }
        means
    }
}

/// Normalization constants H_0..H_k of the product form, stored as
/// logarithms so saturated regimes (θ spreads of hundreds of orders of
/// magnitude) stay representable.
#[derive(Debug, Clone)]
pub struct NormConstants {
    /// ln H̃_k for the θ vector rescaled by its maximum.
    ln_h_rescaled: Vec<f64>,
    /// ln θ_max, the rescaling applied to every θ_i.
    ln_theta_max: f64,
}

impl NormConstants {
    /// Computes H_0..H_population by the convolution recursion
    /// g(k, m) = g(k, m−1) + θ_m·g(k−1, m), one node at a time, in O(C·n).
    ///
    /// θ is rescaled by θ_max first; the recursion runs in log space when
    /// the θ spread exceeds 1e6 or the population exceeds 200.
    pub fn compute(cfg: &NetworkConfig, population: u32) -> Self {
        let theta = cfg.theta();
        let theta_max = theta.iter().cloned().fold(f64::MIN, f64::max);
        let theta_min = theta.iter().cloned().fold(f64::MAX, f64::min);
        let rescaled: Vec<f64> = theta.iter().map(|t| t / theta_max).collect();
        let c = population as usize;

        let log_space =
            theta_max / theta_min > LOG_SPACE_THETA_RATIO || population > LOG_SPACE_POPULATION;
        let ln_h_rescaled = if log_space {
            let ln_t: Vec<f64> = rescaled.iter().map(|t| t.ln()).collect();
            let mut g = vec![f64::NEG_INFINITY; c + 1];
            g[0] = 0.0;
            for &lt in &ln_t {
                for k in 1..=c {
                    g[k] = log_add_exp(g[k], lt + g[k - 1]);
                }
            }
            g
        } else {
            let mut g = vec![0.0; c + 1];
            g[0] = 1.0;
            for &t in &rescaled {
                for k in 1..=c {
                    g[k] += t * g[k - 1];
                }
            }
            g.into_iter().map(|v| v.ln()).collect()
        };

        NormConstants {
            ln_h_rescaled,
            ln_theta_max: theta_max.ln(),
        }
    }

    /// Largest population these constants cover.
    pub fn max_population(&self) -> u32 {
        (self.ln_h_rescaled.len() - 1) as u32
    }

    /// ln H_k for the original (unrescaled) θ vector.
    pub fn ln_h(&self, k: u32) -> f64 {
        self.ln_h_rescaled[k as usize] + k as f64 * self.ln_theta_max
    }

    /// H_k itself; may overflow to infinity in extreme regimes, in which
    /// case ratios via [`Self::h_ratio`] remain usable.
    pub fn h(&self, k: u32) -> f64 {
        self.ln_h(k).exp()
    }

    /// Ratio H_a/H_b evaluated in log space.
    pub fn h_ratio(&self, a: u32, b: u32) -> f64 {
        (self.ln_h(a) - self.ln_h(b)).exp()
    }

    /// Stationary tail probability P(X_i ≥ k) = θ_i^k·H_{C−k}/H_C for the
    /// population C these constants were computed for.
    ///
    /// `ln_theta_i` is the log of the node's unrescaled θ_i.
    pub fn tail(&self, ln_theta_i: f64, c: u32, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if k > c {
            return 0.0;
        }
        // Work with rescaled θ so both factors stay near unit scale.
        let ln_t = ln_theta_i - self.ln_theta_max;
        (k as f64 * ln_t + self.ln_h_rescaled[(c - k) as usize]
            - self.ln_h_rescaled[c as usize])
            .exp()
    }
}

/// ln(eˣ + eʸ) with the usual max-factoring for stability.
fn log_add_exp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    hi + (lo - hi).exp().ln_1p()
}

/// Number of states with n nodes and the given population,
/// binom(population + n − 1, n − 1); `None` on u128 overflow.
pub fn state_count(n: usize, population: u32) -> Option<u128> {
    // binom(pop + n − 1, n − 1) computed incrementally.
    let k = (n - 1) as u128;
    let top = population as u128 + k;
    let mut result: u128 = 1;
    for i in 1..=k {
        result = result.checked_mul(top - k + i)?;
        result /= i;
    }
    Some(result)
}

/// Transition rate q(x, x + e_i − e_j) = p_i·μ_j·1(x_j > 0): node j
/// completes a task that is dispatched to node i. Indices are 0-based.
pub fn generator_rate(x: &[u32], i: usize, j: usize, cfg: &NetworkConfig) -> Result<f64> {
    if i >= cfg.n() || j >= cfg.n() {
        return Err(Error::invalid(format!(
            "node index out of range: i={i}, j={j}, n={}",
            cfg.n()
        )));
    }
    if i == j {
        return Err(Error::invalid("generator rate requires i != j"));
    }
    if x.len() != cfg.n() {
        return Err(Error::invalid(format!(
            "state has {} entries, expected {}",
            x.len(),
            cfg.n()
        )));
    }
    if x[j] > 0 {
        Ok(cfg.p()[i] * cfg.mu()[j])
    } else {
        Ok(0.0)
    }
}

/// All states with the given node count and population, in lexicographic
/// order. Fails with a capacity error when the space exceeds the budget.
pub fn enumerate_states(n: usize, population: u32, budget: u64) -> Result<Vec<Vec<u32>>> {
    let count = state_count(n, population).unwrap_or(u128::MAX);
    if count > budget as u128 {
        return Err(Error::CapacityExceeded {
            states: count,
            budget,
        });
    }
    let mut states = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; n];
    fill_states(&mut states, &mut current, 0, population);
    Ok(states)
}

fn fill_states(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, idx: usize, remaining: u32) {
    if idx == current.len() - 1 {
        current[idx] = remaining;
        out.push(current.clone());
        return;
    }
    for v in 0..=remaining {
        current[idx] = v;
        fill_states(out, current, idx + 1, remaining - v);
    }
    current[idx] = 0;
}

/// Normalization constant H_population = Σ_{x: Σx=population} Π θ_i^{x_i}.
pub fn normalization_constant(cfg: &NetworkConfig, population: u32) -> f64 {
    NormConstants::compute(cfg, population).h(population)
}

/// Exact product-form stationary distribution over states with the given
/// population: π(x) ∝ Π θ_i^{x_i}.
///
/// Fails with a capacity error when the state space exceeds the enumeration
/// budget; Monte-Carlo estimation via the simulator is the fallback.
pub fn stationary_distribution(cfg: &NetworkConfig, population: u32) -> Result<DistributionTable> {
    stationary_distribution_with_budget(cfg, population, enum_budget())
}

/// As [`stationary_distribution`] with an explicit enumeration budget.
pub fn stationary_distribution_with_budget(
    cfg: &NetworkConfig,
    population: u32,
    budget: u64,
) -> Result<DistributionTable> {
    let states = enumerate_states(cfg.n(), population, budget)?;
    let theta = cfg.theta();
    let theta_max = theta.iter().cloned().fold(f64::MIN, f64::max);
    // Rescaled θ keeps the per-state products in (0, 1]; normalization
    // removes the common θ_max^population factor.
    let ln_t: Vec<f64> = theta.iter().map(|t| (t / theta_max).ln()).collect();
    let mut entries = BTreeMap::new();
    for state in states {
        let ln_w: f64 = state
            .iter()
            .zip(&ln_t)
            .map(|(&x, &lt)| x as f64 * lt)
            .sum();
        entries.insert(state, ln_w.exp());
    }
    DistributionTable::from_weights(entries, population)
}

/// Distribution of the network as seen by an arriving (freshly dispatched)
/// task: the stationary law with one task removed, π_{C−1}.
pub fn arrival_distribution(cfg: &NetworkConfig) -> Result<DistributionTable> {
    stationary_distribution(cfg, cfg.concurrency() - 1)
}

/// Stationary mean queue lengths E[X_i] at the given population, via the
/// tail identity E[X_i] = Σ_{k≥1} θ_i^k·H_{C−k}/H_C in O(C·n).
///
/// Σ_i E[X_i] equals the population up to floating-point roundoff.
pub fn expected_queue_lengths(cfg: &NetworkConfig, population: u32) -> Vec<f64> {
    let norm = NormConstants::compute(cfg, population);
    let theta = cfg.theta();
    theta
        .iter()
        .map(|&t| {
            let ln_t = t.ln();
            (1..=population)
                .map(|k| norm.tail(ln_t, population, k))
                .sum()
        })
        .collect()
}

/// Stationary busy probabilities P(X_i > 0) = θ_i·H_{C−1}/H_C.
pub fn busy_probabilities(cfg: &NetworkConfig, population: u32) -> Vec<f64> {
    let norm = NormConstants::compute(cfg, population);
    cfg.theta()
        .iter()
        .map(|&t| norm.tail(t.ln(), population, 1))
        .collect()
}

/// Stationary throughput of the network in completions per unit time:
/// Σ_i μ_i·P(X_i > 0) = H_{C−1}/H_C.
pub fn throughput(cfg: &NetworkConfig) -> f64 {
    let c = cfg.concurrency();
    let norm = NormConstants::compute(cfg, c);
    norm.h_ratio(c - 1, c)
}

/// Maximum relative global-balance residual of the product form over the
/// enumerated state space:
/// |Σ_y π(x)q(x,y) − Σ_y π(y)q(y,x)| / Σ_y π(x)q(x,y).
pub fn global_balance_residual(cfg: &NetworkConfig, population: u32) -> Result<f64> {
    let table = stationary_distribution(cfg, population)?;
    let n = cfg.n();
    let p = cfg.p();
    let mu = cfg.mu();
    let mut worst: f64 = 0.0;
    for (state, mass) in table.iter() {
        let mut outflow = 0.0;
        let mut inflow = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i == j {
                    continue;
                }
                // Outgoing: x → x + e_i − e_j requires a task at j.
                if state[j] > 0 {
                    outflow += mass * p[i] * mu[j];
                }
                // Incoming: y = x − e_i + e_j with q(y, x) = p_i·μ_j; the
                // source always has y_j = x_j + 1 > 0, but needs x_i ≥ 1.
                if state[i] > 0 {
                    let mut y = state.clone();
                    y[i] -= 1;
                    y[j] += 1;
                    inflow += table.mass(&y) * p[i] * mu[j];
                }
            }
        }
        if outflow > 0.0 {
            worst = worst.max((outflow - inflow).abs() / outflow);
        }
    }
    Ok(worst)
}
