//! Frozen references for the bound engine: Γ ratios checked against an
//! independent implementation of the regularized incomplete gamma, cap
//! and bound arithmetic done by hand, closed-form saturated delays, and
//! the reference baseline bounds at hand-solved tuned step sizes.

use fedqueue::bound::{
    self, BaselineBound, BoundParams, DelayProfile, DelaySource, TauAggregates, TwoGroupSpec,
};
use fedqueue::saturation;

fn params(l: f64, g2: f64, sigma2: f64, a: f64, t: f64, c: u32) -> BoundParams {
    BoundParams {
        l,
        g2,
        sigma2,
        rho2: 0.0,
        a,
        t,
        c,
    }
}

fn flat(n: usize, m: f64) -> DelayProfile {
    DelayProfile::new(vec![m; n], DelaySource::ExactAsymptotic).unwrap()
}

#[test]
fn gamma_ratio_matches_independent_values() {
    // Reference values from an independent regularized-incomplete-gamma
    // implementation (scipy.special.gammainc), frozen to 12+ digits.
    let cases = [
        (1u32, 1.0, 0.303894404411334),
        (1, 0.5, 0.159501533226933),
        (2, 3.0, 0.611584682709564),
        (4, 0.5, 0.082298959867717),
        (2, 10.0, 0.992412331783737),
        (7, 4.25, 0.441549162457368),
        (1, 1e-3, 0.000333305553703858),
    ];
    for (nf, c, expected) in cases {
        let got = bound::gamma_ratio(nf, c).unwrap();
        assert!(
            (got - expected).abs() < 1e-10,
            "nf={nf} c={c}: {got} vs {expected}"
        );
    }
}

#[test]
fn gamma_ratio_saturates_and_falls_back() {
    // Large argument: both CDFs reach 1 in double precision.
    assert!(bound::gamma_ratio(3, 200.0).unwrap() >= 1.0 - 1e-6);
    assert!(bound::gamma_ratio(5, 200.2).unwrap() >= 1.0 - 1e-6);
    // Tiny argument: the CDF underflows and the leading-order series
    // ratio c/(n_f + 2) takes over.
    let tiny = bound::gamma_ratio(1, 1e-160).unwrap();
    assert!((tiny - 1e-160 / 3.0).abs() < 1e-170);
    // Invalid inputs are rejected.
    assert!(bound::gamma_ratio(0, 1.0).is_err());
    assert!(bound::gamma_ratio(1, 0.0).is_err());
    assert!(bound::gamma_ratio(1, -2.0).is_err());
}

#[test]
fn step_size_cap_by_hand() {
    // n=2 uniform, L=1, C=1, m_p = 1: the delay cap is C^{-1/2} m_p^{-1/2}
    // = 1, the weight cap is 2/Σ 1/(n²p_i) = 2, so η_max = min(1,2)/4.
    let p = [0.5, 0.5];
    let pr = params(1.0, 1.0, 0.0, 1.0, 10.0, 1);
    let eta = bound::eta_max(&p, &pr, 1.0).unwrap();
    assert!((eta - 0.25).abs() < 1e-12);

    // Quadrupling L quarters the cap; m_p → ∞ drives it to zero.
    let pr4 = params(4.0, 1.0, 0.0, 1.0, 10.0, 1);
    assert!((bound::eta_max(&p, &pr4, 1.0).unwrap() - 0.0625).abs() < 1e-12);
    assert!(bound::eta_max(&p, &pr, 1e12).unwrap() < 1e-5);
    // With m_p = 0 only the weight cap binds: 2/1 / 4 = 0.5.
    assert!((bound::eta_max(&p, &pr, 0.0).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn bound_value_by_hand() {
    // n=1, p=(1): Σ1/(n²p_i) = 1 and m_p = m. With L=1, B=2·0+1=1,
    // C=2, A=3, T=2, η=0.1, m=5:
    //   t1 = 3/(0.1·3) = 10, t2 = 0.1, t3 = 0.01·2·5 = 0.1.
    let pr = params(1.0, 0.0, 1.0, 3.0, 2.0, 2);
    let profile = flat(1, 5.0);
    let g = bound::convergence_bound(&pr, &[1.0], 0.1, &profile).unwrap();
    assert!((g - 10.2).abs() < 1e-12);

    // Two symmetric nodes double the weights: Σ1/(n²p_i) = 1 still but
    // m_p = Σ m/(n²p²) = 2·5/(4·0.25) = 10.
    let g2 = bound::convergence_bound(&pr, &[0.5, 0.5], 0.1, &flat(2, 5.0)).unwrap();
    assert!((g2 - (10.0 + 0.1 + 0.01 * 2.0 * 10.0)).abs() < 1e-12);
}

#[test]
fn tuned_step_size_solves_the_first_order_condition() {
    // Unconstrained minimum of A/(η(T+1)) + c2η + c3η² satisfies
    // 2c3η³ + c2η² = A/(T+1); when the cubic term vanishes the closed
    // form is √(target/c2).
    let pr = params(1.0, 0.5, 0.0, 0.18, 1.0, 1);
    // m = 0 ⇒ c3 = 0, target = A/(T+1) = 0.09, c2 = L·B·1 = 1 ⇒
    // η* = 0.3, below the η_max = 0.5 cap.
    let eta = bound::optimal_step_size(&pr, &[1.0], &flat(1, 0.0)).unwrap();
    assert!((eta - 0.3).abs() < 1e-12);

    // With delays the root moves: check the stationarity residual.
    let pr2 = params(1.0, 0.5, 0.0, 4e-4, 1.0, 1);
    let profile = flat(1, 1.0);
    let eta2 = bound::optimal_step_size(&pr2, &[1.0], &profile).unwrap();
    let b = pr2.b();
    let c2 = pr2.l * b; // Σ1/(n²p_i) = 1
    let c3 = pr2.l * pr2.l * b * pr2.c as f64 * 1.0; // m_p = 1
    let target = pr2.a / (pr2.t + 1.0);
    let residual = 2.0 * c3 * eta2.powi(3) + c2 * eta2.powi(2) - target;
    assert!(
        residual.abs() < 1e-10,
        "eta {eta2} residual {residual}"
    );

    // A large initialization term pushes the root past the cap, so the
    // cap binds: η_max uses the 1.25 transient allowance on m_p.
    let pr3 = params(1.0, 0.5, 0.0, 2e6, 1.0, 1);
    let eta3 = bound::optimal_step_size(&pr3, &[1.0], &profile).unwrap();
    let capped = bound::eta_max(&[1.0], &pr3, 1.25).unwrap();
    assert!((eta3 - capped).abs() < 1e-15);
}

#[test]
fn two_cluster_closed_forms_by_hand() {
    // n=10, n_f=5, μ_f=1.2, μ_s=1, C=1000: r−1 = 0.2, λ = 11, Γ ≈ 1:
    //   fast = (11/1.2)(5+1) = 55, slow = 11(976/5 + 1) = 2158.2,
    //   mid forms 45.8333/2145, display forms 50/1950.
    let b = saturation::two_cluster_delay_bounds(10, 5, 1.2, 1.0, 1000).unwrap();
    assert!((b.lambda - 11.0).abs() < 1e-12);
    assert!(b.gamma > 1.0 - 1e-9);
    assert!((b.fast - 55.0).abs() < 1e-6);
    assert!((b.slow - 2158.2).abs() < 1e-6);
    assert!((b.fast_mid - 45.833333333333336).abs() < 1e-9);
    assert!((b.slow_mid - 2145.0).abs() < 1e-9);
    assert!((b.fast_simplified - 50.0).abs() < 1e-12);
    assert!((b.slow_simplified - 1950.0).abs() < 1e-12);

    // Equal rates are rejected: the regime needs a strictly fast cluster.
    assert!(saturation::two_cluster_delay_bounds(10, 5, 1.0, 1.0, 1000).is_err());
}

#[test]
fn three_cluster_closed_forms_by_hand() {
    // n=9 split 3/3/3, μ=(10, 1.2, 1), C=1000, P(fast busy)=0.1:
    //   λ = 3 + 3.6 + 3 = 9.6, r−1 = 0.2, Γ ≈ 1,
    //   fast = 0.96, medium = (9.6/1.2)·5 = 40, slow = 9.6·985/3 = 3152.
    let b =
        saturation::three_cluster_delay_bounds(9, 3, 6, 10.0, 1.2, 1.0, 1000, 0.1).unwrap();
    assert!((b.lambda - 9.6).abs() < 1e-12);
    assert!(b.gamma > 1.0 - 1e-9);
    assert!((b.fast - 0.96).abs() < 1e-9);
    assert!((b.medium - 40.0).abs() < 1e-6);
    assert!((b.slow - 3152.0).abs() < 1e-3);

    // A fully busy fast cluster raises λ and every bound with it.
    let busy =
        saturation::three_cluster_delay_bounds(9, 3, 6, 10.0, 1.2, 1.0, 1000, 1.0).unwrap();
    assert!(busy.lambda > b.lambda);
    assert!(busy.fast > b.fast && busy.medium > b.medium && busy.slow > b.slow);
}

#[test]
fn sampling_limit_keeps_the_fast_cluster_light() {
    // θ_f < θ_s requires p < μ_f/λ; at the limit the clusters tie.
    let lim = saturation::two_cluster_sampling_limit(10, 5, 1.2, 1.0).unwrap();
    assert!((lim - 1.2 / 11.0).abs() < 1e-12);
}

#[test]
fn baseline_bounds_by_hand() {
    // l=1, B = 2·1+1 = 3, A=6, T=2 ⇒ target 2. τ_max=4, τ_c=2,
    // τ_sum=(10,20).
    //   buffered: c2=3, c3=τ²_max·3·n=96, cap=4^{-3/2}=0.125; the cubic
    //   root 0.2133… exceeds the cap, so η=0.125 and the bound is
    //   16 + 0.375 + 1.5 = 17.875.
    //   uniform-async: c3=τ_c·3·30/3=60, cap=1/√8≈0.3536; root
    //   0.24736910311222313 is feasible, bound 12.49867979009156.
    let pr = params(1.0, 1.0, 1.0, 6.0, 2.0, 1);
    let agg = TauAggregates {
        tau_max: 4.0,
        tau_c: 2.0,
        tau_sum: vec![10.0, 20.0],
        max_delay_bounded: true,
    };
    let b = bound::baseline_bounds(&pr, &agg).unwrap();
    match &b.fedbuff {
        BaselineBound::Value { eta, bound } => {
            assert!((eta - 0.125).abs() < 1e-12);
            assert!((bound - 17.875).abs() < 1e-9);
        }
        other => panic!("expected a finite buffered bound, got {other:?}"),
    }
    match &b.asyncsgd {
        BaselineBound::Value { eta, bound } => {
            assert!((eta - 0.24736910311222313).abs() < 1e-9);
            assert!((bound - 12.49867979009156).abs() < 1e-6);
        }
        other => panic!("expected a finite uniform-async bound, got {other:?}"),
    }

    // Unbounded worst-case delay keeps the τ_max-based reference
    // undefined while the τ_c-based one stays finite.
    let unbounded = TauAggregates {
        max_delay_bounded: false,
        ..agg
    };
    let u = bound::baseline_bounds(&pr, &unbounded).unwrap();
    assert!(u.fedbuff.value().is_none());
    assert!(u.asyncsgd.value().is_some());
}

#[test]
fn growth_variance_inflates_the_cap_and_bound() {
    // ρ² > 0 scales B to 2(1+ρ²)G² + σ² inside the delay terms and
    // shrinks the admissible step size.
    let base = params(1.0, 1.0, 0.5, 1.0, 10.0, 2);
    let mut grown = base.clone();
    grown.rho2 = 1.0;
    assert!((base.b() - 2.5).abs() < 1e-15);
    assert!((base.b_growth() - 2.5).abs() < 1e-15);
    assert!((grown.b_growth() - 4.5).abs() < 1e-15);
    let p = [0.5, 0.5];
    let eta_base = bound::eta_max(&p, &base, 3.0).unwrap();
    let eta_grown = bound::eta_max(&p, &grown, 3.0).unwrap();
    assert!(eta_grown < eta_base);
    let g_base = bound::convergence_bound(&base, &p, 0.01, &flat(2, 3.0)).unwrap();
    let g_grown = bound::convergence_bound(&grown, &p, 0.01, &flat(2, 3.0)).unwrap();
    assert!(g_grown > g_base);
}

#[test]
fn two_group_spec_parameterization() {
    let spec = TwoGroupSpec::new(100, 90).unwrap();
    assert!((spec.uniform_probability() - 0.01).abs() < 1e-15);
    assert!((spec.feasibility_limit() - 1.0 / 90.0).abs() < 1e-15);
    let p = spec.probabilities(0.0073).unwrap();
    assert_eq!(p.len(), 100);
    assert!((p[0] - 0.0073).abs() < 1e-15);
    assert!((p[99] - (1.0 - 90.0 * 0.0073) / 10.0).abs() < 1e-12);
    let total: f64 = p.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    // Starving the slow group is rejected.
    assert!(spec.probabilities(1.0 / 90.0).is_err());
    assert!(spec.probabilities(0.012).is_err());
}

#[test]
fn log_grid_shape() {
    let g = bound::log_spaced_grid(1e-3, 1e-1, 5);
    assert_eq!(g.len(), 5);
    assert!((g[0] - 1e-3).abs() < 1e-15);
    assert!((g[4] - 1e-1).abs() < 1e-12);
    // Log-spacing means constant ratio between neighbors.
    for w in g.windows(2) {
        assert!((w[1] / w[0] - 10f64.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn optimizer_prefers_uniform_when_the_profile_is_flat() {
    // With a p-independent profile and the horizon-dominated regime both
    // remaining terms are minimized at uniform sampling, so the sweep
    // keeps the uniform incumbent and reports zero improvement.
    let spec = TwoGroupSpec::new(10, 5).unwrap();
    let pr = params(1.0, 1.0, 0.0, 1e-6, 1e6, 2);
    let outcome = bound::optimize_sampling(&pr, &spec, |p| flat(p.len(), 2.0).weight_m(p).map(
        |_| flat(p.len(), 2.0),
    ), None)
    .unwrap();
    assert!((outcome.best_p_fast - 0.1).abs() < 1e-12);
    assert_eq!(outcome.improvement, 0.0);
    assert!(outcome.skipped == 0);
    assert!(!outcome.points.is_empty());
}
