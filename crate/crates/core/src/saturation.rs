//! Closed-form delay bounds for saturated clustered networks.
//!
//! When the task population C is large, node loads approach one and the
//! stationary delays admit closed-form limits parameterized only by the
//! cluster sizes, the service rates, and C. Writing r = μ_f/μ_s for the
//! speed ratio and λ = Σᵢ μᵢ for the aggregate rate, the fast-cluster
//! queue converges to a proper limit with mean Γ/(r−1), where Γ is the
//! Erlang-CDF ratio of [`crate::bound::gamma_ratio`], while slow queues
//! absorb the remaining population. Delays in server steps follow by
//! multiplying queue lengths with the per-step completion rate λ/μᵢ.
//!
//! Three algebraic variants of the two-cluster forms circulate: a full
//! expression keeping Γ and the (C+1) population shift, a mid-form
//! dropping the +1 corrections, and a display simplification rounding the
//! rate prefactors to n. All three are reported; they agree to within a
//! few percent in the saturated regime.

use serde::Serialize;

use crate::bound::{gamma_ratio, DelayProfile, DelaySource};
use crate::error::{Error, Result};

/// Closed-form two-cluster delay bounds (server steps).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoClusterBounds {
    /// Fast-cluster bound (λ/μ_f)(Γ/(r−1) + 1).
    pub fast: f64,
    /// Slow-cluster bound (λ/μ_s)((C+1 − n_f·Γ/(r−1))/(n−n_f) + 1).
    pub slow: f64,
    /// Mid-form fast bound (λ/μ_f)/(r−1), no +1 corrections.
    pub fast_mid: f64,
    /// Mid-form slow bound (λ/μ_s)(C/(n−n_f) − (n_f/(n−n_f))/(r−1)).
    pub slow_mid: f64,
    /// Display form n/(r−1) (even-split rounding).
    pub fast_simplified: f64,
    /// Display form (2C/n − 1/(r−1))·n (even-split rounding).
    pub slow_simplified: f64,
    /// Aggregate service rate λ = n_f·μ_f + (n−n_f)·μ_s.
    pub lambda: f64,
    /// Erlang-CDF ratio Γ evaluated at (C+1)(r−1).
    pub gamma: f64,
}

fn check_split(n: usize, n_fast: usize) -> Result<()> {
    if n_fast == 0 || n_fast >= n {
        return Err(Error::invalid("cluster sizes must satisfy 0 < n_f < n"));
    }
    Ok(())
}

/// Saturated two-cluster delay bounds under uniform sampling.
///
/// Requires μ_f > μ_s (the fast cluster must be the lightly loaded one)
/// and a population of at least one task.
pub fn two_cluster_delay_bounds(
    n: usize,
    n_fast: usize,
    mu_f: f64,
    mu_s: f64,
    concurrency: u32,
) -> Result<TwoClusterBounds> {
    check_split(n, n_fast)?;
    if !(mu_s > 0.0) || !(mu_f > mu_s) {
        return Err(Error::invalid(
            "two-cluster regime requires mu_f > mu_s > 0",
        ));
    }
    if concurrency == 0 {
        return Err(Error::invalid("population must be at least 1"));
    }
    let n_f = n_fast as f64;
    let n_s = (n - n_fast) as f64;
    let c = concurrency as f64;
    let r1 = mu_f / mu_s - 1.0;
    let lambda = n_f * mu_f + n_s * mu_s;
    let gamma = gamma_ratio(n_fast as u32, (c + 1.0) * r1)?;
    let fast_queue = gamma / r1;
    Ok(TwoClusterBounds {
        fast: lambda / mu_f * (fast_queue + 1.0),
        slow: lambda / mu_s * ((c + 1.0 - n_f * fast_queue) / n_s + 1.0),
        fast_mid: lambda / mu_f / r1,
        slow_mid: lambda / mu_s * (c / n_s - n_f / n_s / r1),
        fast_simplified: n as f64 / r1,
        slow_simplified: (2.0 * c / n as f64 - 1.0 / r1) * n as f64,
        lambda,
        gamma,
    })
}

/// Closed-form three-cluster delay bounds (server steps). Fast queues are
/// degenerate at zero in this regime, so the fast delay is just the
/// dispatch-to-service gap λ/μ_f; medium queues follow the proper limit
/// with speed ratio r = μ_m/μ_s; slow queues absorb the rest.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThreeClusterBounds {
    /// Fast-cluster bound λ/μ_f.
    pub fast: f64,
    /// Medium-cluster bound (λ/μ_m)·Γ/(r−1).
    pub medium: f64,
    /// Slow-cluster bound (λ/μ_s)·(C − (n_m−n_f)·Γ/(r−1))/(n−n_m).
    pub slow: f64,
    /// Effective aggregate rate; the fast term is weighted by the
    /// probability that a fast node is busy.
    pub lambda: f64,
    /// Erlang-CDF ratio Γ evaluated at C(r−1) with shape n_m−n_f.
    pub gamma: f64,
}

/// Saturated three-cluster delay bounds under uniform sampling.
///
/// `prob_fast_busy` is P(X_f > 0) for a fast node, estimated from
/// simulation or set to 1 as a conservative cap; fast queues hold almost
/// no tasks in this regime, so it discounts the fast contribution to λ.
pub fn three_cluster_delay_bounds(
    n: usize,
    n_fast: usize,
    n_medium: usize,
    mu_f: f64,
    mu_m: f64,
    mu_s: f64,
    concurrency: u32,
    prob_fast_busy: f64,
) -> Result<ThreeClusterBounds> {
    if n_fast == 0 || n_fast >= n_medium || n_medium >= n {
        return Err(Error::invalid(
            "cluster boundaries must satisfy 0 < n_f < n_m < n",
        ));
    }
    if !(mu_s > 0.0) || !(mu_m > mu_s) || !(mu_f > mu_m) {
        return Err(Error::invalid(
            "three-cluster regime requires mu_f > mu_m > mu_s > 0",
        ));
    }
    if !(0.0..=1.0).contains(&prob_fast_busy) {
        return Err(Error::invalid("prob_fast_busy must lie in [0, 1]"));
    }
    if concurrency == 0 {
        return Err(Error::invalid("population must be at least 1"));
    }
    let c = concurrency as f64;
    let n_f = n_fast as f64;
    let n_m = (n_medium - n_fast) as f64;
    let n_s = (n - n_medium) as f64;
    let r1 = mu_m / mu_s - 1.0;
    let lambda = n_f * prob_fast_busy * mu_f + n_m * mu_m + n_s * mu_s;
    let gamma = gamma_ratio((n_medium - n_fast) as u32, c * r1)?;
    let medium_queue = gamma / r1;
    Ok(ThreeClusterBounds {
        fast: lambda / mu_f,
        medium: lambda / mu_m * medium_queue,
        slow: lambda / mu_s * (c - n_m * medium_queue) / n_s,
        lambda,
        gamma,
    })
}

/// Supremum of fast-cluster sampling probabilities for which the fast
/// cluster stays the lightly loaded one (θ_f < θ_s): p < μ_f/λ.
pub fn two_cluster_sampling_limit(n: usize, n_fast: usize, mu_f: f64, mu_s: f64) -> Result<f64> {
    check_split(n, n_fast)?;
    if !(mu_s > 0.0) || !(mu_f > mu_s) {
        return Err(Error::invalid(
            "two-cluster regime requires mu_f > mu_s > 0",
        ));
    }
    let lambda = n_fast as f64 * mu_f + (n - n_fast) as f64 * mu_s;
    Ok(mu_f / lambda)
}

/// Closed-form saturated delay profile for the two-cluster network as a
/// function of the fast-cluster sampling probability.
///
/// With per-node probabilities p (fast) and p_s = (1 − n_f·p)/(n − n_f)
/// (slow), the load ratio becomes r_p = μ_f·p_s/(μ_s·p) and the
/// mid-form bounds apply with r_p in place of μ_f/μ_s:
///
/// m_f(p) = (λ/μ_f)/(r_p − 1),
/// m_s(p) = (λ/μ_s)(C/(n−n_f) − (n_f/(n−n_f))/(r_p − 1)).
///
/// Errors when p is outside (0, μ_f/λ), where the regime inverts.
pub fn two_cluster_delay_profile(
    n: usize,
    n_fast: usize,
    mu_f: f64,
    mu_s: f64,
    concurrency: u32,
    p_fast: f64,
) -> Result<DelayProfile> {
    let limit = two_cluster_sampling_limit(n, n_fast, mu_f, mu_s)?;
    if concurrency == 0 {
        return Err(Error::invalid("population must be at least 1"));
    }
    if !(p_fast > 0.0) || p_fast >= limit {
        return Err(Error::invalid(format!(
            "fast sampling probability must lie in (0, {limit}); got {p_fast}"
        )));
    }
    let n_f = n_fast as f64;
    let n_s = (n - n_fast) as f64;
    let c = concurrency as f64;
    let p_s = (1.0 - n_f * p_fast) / n_s;
    let r1 = mu_f * p_s / (mu_s * p_fast) - 1.0;
    let lambda = n_f * mu_f + n_s * mu_s;
    let m_f = lambda / mu_f / r1;
    let m_s = lambda / mu_s * (c / n_s - n_f / n_s / r1);
    let mut m = vec![m_f; n_fast];
    m.extend(std::iter::repeat(m_s.max(0.0)).take(n - n_fast));
    DelayProfile::new(m, DelaySource::ExactAsymptotic)
}
