//! Hand-checkable references for the training runtimes: an independent
//! replay of the queue/dispatch semantics, closed-form recursions for
//! degenerate networks, drift targets of unweighted sampling, synchronous
//! round order statistics, and finite-difference gradient checks.

use std::collections::VecDeque;

use fedqueue::fl::{
    self, Fault, HeterogeneousQuadratic, Objective, SyntheticLogistic, TrainOptions,
};
use fedqueue::network::NetworkConfig;
use fedqueue::sim::{self, ServiceLaw, SimTrace};

fn noiseless(eta: f64) -> TrainOptions {
    TrainOptions {
        eta,
        sigma: 0.0,
        record_every: 1,
        ..TrainOptions::default()
    }
}

enum Rule {
    Weighted,
    Buffered(usize),
}

/// Minimal from-scratch replay of the documented semantics: per-node FIFO
/// queues of scaled gradient snapshots, initial tasks at w₀, completion
/// applies the stored gradient, dispatch snapshots the post-update model.
fn reference_replay(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    eta: f64,
    rule: Rule,
) -> Vec<f64> {
    let n = trace.config.n();
    let p = trace.config.p().to_vec();
    let dim = obj.dim();
    let weighted = matches!(rule, Rule::Weighted);
    let scale = |node: usize| -> f64 {
        if weighted {
            1.0 / (n as f64 * p[node])
        } else {
            1.0
        }
    };
    let mut w = w0.to_vec();
    let mut queues: Vec<VecDeque<Vec<f64>>> = (0..n).map(|_| VecDeque::new()).collect();
    let mut grad = vec![0.0; dim];
    for node in 0..n {
        for _ in 0..trace.initial_queue[node] {
            obj.client_grad(node, &w, &mut grad);
            let s = scale(node);
            queues[node].push_back(grad.iter().map(|&g| g * s).collect());
        }
    }
    let mut buffer = vec![0.0; dim];
    let mut fill = 0usize;
    for k in 0..trace.len() {
        let completer = trace.j[k] as usize;
        let applied = queues[completer].pop_front().expect("nonempty queue");
        match rule {
            Rule::Weighted => {
                for (wi, &g) in w.iter_mut().zip(&applied) {
                    *wi -= eta * g;
                }
            }
            Rule::Buffered(size) => {
                for (b, &g) in buffer.iter_mut().zip(&applied) {
                    *b += g;
                }
                fill += 1;
                if fill == size {
                    for (wi, b) in w.iter_mut().zip(buffer.iter_mut()) {
                        *wi -= eta * *b / size as f64;
                        *b = 0.0;
                    }
                    fill = 0;
                }
            }
        }
        let target = trace.k_next[k] as usize;
        obj.client_grad(target, &w, &mut grad);
        let s = scale(target);
        queues[target].push_back(grad.iter().map(|&g| g * s).collect());
    }
    w
}

#[test]
fn replay_matches_an_independent_reference() {
    // Non-uniform three-node network, both update rules, no noise: the
    // library replay and the from-scratch reference must agree to float
    // round-off on the final iterate.
    let cfg = NetworkConfig::new(vec![2.0, 1.0, 0.5], vec![0.5, 0.3, 0.2], 4).unwrap();
    let trace = sim::simulate(&cfg, 400, 17, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(3, 5, 2.0, 23).unwrap();
    let w0 = vec![0.4; 5];
    let opts = noiseless(0.07);

    let lib = fl::run_generalized_async_sgd(&obj, &trace, &w0, &opts, 1).unwrap();
    let refw = reference_replay(&obj, &trace, &w0, opts.eta, Rule::Weighted);
    for (a, b) in lib.final_w.iter().zip(&refw) {
        assert!((a - b).abs() <= 1e-13, "weighted {a} vs {b}");
    }

    let lib_buf = fl::run_fedbuff(&obj, &trace, &w0, 3, &opts, 1).unwrap();
    let ref_buf = reference_replay(&obj, &trace, &w0, opts.eta, Rule::Buffered(3));
    for (a, b) in lib_buf.final_w.iter().zip(&ref_buf) {
        assert!((a - b).abs() <= 1e-13, "buffered {a} vs {b}");
    }

    // Recording bookkeeping: step 0 and the horizon are always present
    // and the recorded clock matches the trace clock at the horizon.
    assert_eq!(lib.steps.first(), Some(&0));
    assert_eq!(lib.steps.last(), Some(&trace.len()));
    let last_t = *lib.time.last().unwrap();
    assert!((last_t - trace.t[trace.len() - 1]).abs() == 0.0);
}

#[test]
fn two_slot_single_node_follows_the_delay_one_recursion() {
    // n = 1, C = 2 forces a constant inclusive delay of two: completion k
    // applies the gradient snapshotted after completion k − 2, giving
    // w_{k+1} = w_k − η·(w_{k−1} − b) with w_{−1} = w_0 (both initial
    // tasks carry ∇f(w_0)).
    let cfg = NetworkConfig::uniform(vec![1.5], 2).unwrap();
    let trace = sim::simulate(&cfg, 40, 11, ServiceLaw::Exponential).unwrap();
    let b = [3.0, -2.0];
    let obj = HeterogeneousQuadratic::new(vec![b.to_vec()]).unwrap();
    let eta = 0.25;
    let run = fl::run_generalized_async_sgd(&obj, &trace, &[0.0, 0.0], &noiseless(eta), 5).unwrap();

    let mut prev = [0.0, 0.0];
    let mut cur = [0.0, 0.0];
    // grad_norm_sq[k] records ‖w_k − b‖² (single client: centroid = b).
    for (k, &gns) in run.grad_norm_sq.iter().enumerate() {
        let expect: f64 = cur.iter().zip(&b).map(|(&w, &t)| (w - t).powi(2)).sum();
        assert!((gns - expect).abs() < 1e-10, "step {k}: {gns} vs {expect}");
        let next = [
            cur[0] - eta * (prev[0] - b[0]),
            cur[1] - eta * (prev[1] - b[1]),
        ];
        prev = cur;
        cur = next;
    }
}

#[test]
fn unit_buffer_on_a_uniform_trace_matches_plain_async_sgd() {
    // Buffer size one applies each gradient as it lands and a uniform
    // trace makes every importance weight equal one, so the two runtimes
    // walk the same path bit for bit, noise included.
    let cfg = NetworkConfig::uniform(vec![3.0, 1.0, 1.0, 0.5], 6).unwrap();
    let trace = sim::simulate(&cfg, 500, 29, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(4, 6, 1.5, 31).unwrap();
    let w0 = vec![0.0; 6];
    let opts = TrainOptions {
        eta: 0.05,
        sigma: 0.3,
        record_every: 7,
        ..TrainOptions::default()
    };
    let plain = fl::run_async_sgd(&obj, &trace, &w0, &opts, 13).unwrap();
    let buffered = fl::run_fedbuff(&obj, &trace, &w0, 1, &opts, 13).unwrap();
    assert_eq!(plain.final_w, buffered.final_w);
    assert_eq!(plain.grad_norm_sq, buffered.grad_norm_sq);
    assert_eq!(plain.f_value, buffered.f_value);
}

#[test]
fn plain_async_sgd_requires_uniform_sampling() {
    let cfg = NetworkConfig::new(vec![1.0, 1.0], vec![0.8, 0.2], 2).unwrap();
    let trace = sim::simulate(&cfg, 50, 3, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(2, 3, 1.0, 4).unwrap();
    let err = fl::run_async_sgd(&obj, &trace, &[0.0; 3], &noiseless(0.1), 1);
    assert!(err.is_err());
    // The generalized runtime accepts the same trace.
    assert!(fl::run_generalized_async_sgd(&obj, &trace, &[0.0; 3], &noiseless(0.1), 1).is_ok());
}

#[test]
fn unweighted_sampling_drifts_to_the_probability_weighted_target() {
    // Completion shares in the closed network equal the sampling vector,
    // so unweighted SGD is stationary at Σ pᵢ·bᵢ while the importance
    // weighted runtime stays at the true minimizer. Targets ±10 with
    // p = (0.8, 0.2) put those two points at 6 and 0.
    let p = vec![0.8, 0.2];
    let cfg = NetworkConfig::new(vec![1.0, 1.0], p.clone(), 4).unwrap();
    let trace = sim::simulate(&cfg, 40_000, 19, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::new(vec![vec![10.0], vec![-10.0]]).unwrap();
    assert_eq!(obj.weighted_target(&p), vec![6.0]);
    assert_eq!(obj.minimizer(), &[0.0]);

    let opts = noiseless(0.02);
    let unweighted = fl::run_fedbuff(&obj, &trace, &[0.0], 1, &opts, 2).unwrap();
    let weighted = fl::run_generalized_async_sgd(&obj, &trace, &[0.0], &opts, 2).unwrap();

    // ‖∇f(w)‖² = (w − 0)², so the tail average of the recorded gradient
    // norms localizes the iterate: near 36 for the biased runtime, near
    // its sampling-noise floor for the unbiased one.
    let tail = |run: &fl::TrainRun| -> f64 {
        let half = run.grad_norm_sq.len() / 2;
        let slice = &run.grad_norm_sq[half..];
        slice.iter().sum::<f64>() / slice.len() as f64
    };
    let biased = tail(&unweighted);
    let unbiased = tail(&weighted);
    assert!(
        (20.0..=55.0).contains(&biased),
        "biased tail mean {biased} should sit near 6² = 36"
    );
    assert!(unbiased < 8.0, "unbiased tail mean {unbiased}");
    assert!(biased > 3.0 * unbiased);
}

#[test]
fn fedavg_full_participation_single_step_is_batch_gradient_descent() {
    // s = n and K = 1 average w − η·∇fᵢ(w) over every client, which is
    // exactly w − η·∇f(w); for quadratics the distance to the centroid
    // shrinks by (1 − η) each round.
    let obj = HeterogeneousQuadratic::random(3, 4, 2.0, 41).unwrap();
    let w0 = vec![1.0, -2.0, 0.5, 3.0];
    let eta = 0.3;
    let run =
        fl::run_fedavg(&obj, &[2.0, 1.0, 0.5], &w0, 25, 3, 1, &noiseless(eta), 7).unwrap();
    let c = obj.minimizer();
    for (r, gns) in run.grad_norm_sq.iter().enumerate() {
        let shrink = (1.0 - eta).powi(r as i32 + 1);
        let expect: f64 = w0
            .iter()
            .zip(c)
            .map(|(&w, &ci)| (shrink * (w - ci)).powi(2))
            .sum();
        assert!((gns - expect).abs() < 1e-10, "round {r}: {gns} vs {expect}");
    }
    // Round times strictly increase: every round takes positive time.
    for pair in run.round_time.windows(2) {
        assert!(pair[1] > pair[0]);
    }
}

#[test]
fn fedavg_round_durations_match_the_exponential_maximum() {
    // Full participation, one local step, equal rates μ: each round lasts
    // max of n independent Exp(μ) draws with mean H_n/μ. For n = 3,
    // μ = 2 that is (1 + 1/2 + 1/3)/2 = 11/12.
    let obj = HeterogeneousQuadratic::new(vec![vec![0.0]; 3]).unwrap();
    let rounds = 4000;
    let run = fl::run_fedavg(
        &obj,
        &[2.0, 2.0, 2.0],
        &[0.0],
        rounds,
        3,
        1,
        &noiseless(0.1),
        12,
    )
    .unwrap();
    let total = *run.round_time.last().unwrap();
    let mean = total / rounds as f64;
    let expect = (1.0 + 0.5 + 1.0 / 3.0) / 2.0;
    // SE of the mean is ≈ 0.009, so ±0.05 is a 5σ envelope.
    assert!(
        (mean - expect).abs() < 0.05,
        "mean round duration {mean} vs {expect}"
    );
}

#[test]
fn gradients_match_central_finite_differences() {
    // Full gradients of both objective families against a central
    // difference of value(); the quadratic's closed-form full gradient is
    // also checked against the averaged per-client route.
    let quad = HeterogeneousQuadratic::random(4, 5, 2.0, 9).unwrap();
    let logistic = SyntheticLogistic::generate(3, 40, 4, 0.05, 15).unwrap();
    let objs: [&dyn Objective; 2] = [&quad, &logistic];
    for obj in objs {
        let dim = obj.dim();
        let w: Vec<f64> = (0..dim).map(|i| 0.3 * (i as f64 + 1.0) - 0.8).collect();
        let mut grad = vec![0.0; dim];
        obj.full_grad(&w, &mut grad);
        let h = 1e-5;
        for i in 0..dim {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[i] += h;
            minus[i] -= h;
            let numeric = (obj.value(&plus) - obj.value(&minus)) / (2.0 * h);
            assert!(
                (grad[i] - numeric).abs() < 1e-6,
                "coordinate {i}: {} vs {numeric}",
                grad[i]
            );
        }
    }

    // Two routes to ∇f for the quadratic: the centroid closed form and
    // the average of client gradients.
    let w = vec![0.7, -0.1, 0.4, 1.2, -2.0];
    let mut closed = vec![0.0; 5];
    quad.full_grad(&w, &mut closed);
    let mut averaged = vec![0.0; 5];
    let mut buf = vec![0.0; 5];
    for i in 0..quad.n_clients() {
        quad.client_grad(i, &w, &mut buf);
        for (a, &g) in averaged.iter_mut().zip(&buf) {
            *a += g / quad.n_clients() as f64;
        }
    }
    for (a, b) in closed.iter().zip(&averaged) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn importance_weighted_draws_are_unbiased() {
    let obj = HeterogeneousQuadratic::random(5, 4, 2.0, 3).unwrap();
    let w = vec![0.3, -1.0, 2.0, 0.5];
    let p = vec![0.4, 0.3, 0.1, 0.1, 0.1];
    let report = fl::check_unbiased_sampling(&obj, &w, &p, 0.5, 60_000, 9).unwrap();
    assert!(report.ok, "max_z {}", report.max_z);
    assert_eq!(report.draws, 60_000);

    // Input validation.
    assert!(fl::check_unbiased_sampling(&obj, &w, &[0.5, 0.5], 0.0, 100, 1).is_err());
    assert!(fl::check_unbiased_sampling(&obj, &w, &p, 0.0, 1, 1).is_err());
}

#[test]
fn virtual_ledger_holds_at_concurrency_minus_one() {
    // Non-uniform sampling, noisy gradients, C = 5: the identity
    // w = μ + η·Σ ledger holds to round-off and the ledger cardinality
    // pins at C − 1 after the first completion.
    let cfg = NetworkConfig::new(vec![2.0, 1.0, 1.0], vec![0.5, 0.25, 0.25], 5).unwrap();
    let trace = sim::simulate(&cfg, 400, 37, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(3, 4, 1.0, 6).unwrap();
    let opts = TrainOptions {
        eta: 0.05,
        sigma: 0.4,
        ..TrainOptions::default()
    };
    let (residual, sizes) =
        fl::check_virtual_identity(&obj, &trace, &vec![0.2; 4], &opts, 8).unwrap();
    assert!(residual <= 1e-12, "residual {residual}");
    assert_eq!(sizes, (4, 4));

    // Dropping one ledger entry must break the identity and shrink the
    // observed cardinality range.
    let faulty = TrainOptions {
        fault: Some(Fault::DropLedgerEntry { step: 50 }),
        track_virtual: true,
        ..opts.clone()
    };
    let (bad_residual, bad_sizes) =
        fl::check_virtual_identity(&obj, &trace, &vec![0.2; 4], &faulty, 8).unwrap();
    assert!(bad_residual > 1e-6, "fault went unnoticed: {bad_residual}");
    assert_eq!(bad_sizes.0, 3);
}

#[test]
fn replays_are_deterministic_and_noise_is_isolated_to_the_seed() {
    let cfg = NetworkConfig::uniform(vec![2.0, 1.0], 3).unwrap();
    let trace = sim::simulate(&cfg, 200, 5, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(2, 4, 1.0, 2).unwrap();
    let w0 = vec![0.0; 4];
    let noisy = TrainOptions {
        eta: 0.1,
        sigma: 0.5,
        ..TrainOptions::default()
    };
    let a = fl::run_async_sgd(&obj, &trace, &w0, &noisy, 100).unwrap();
    let b = fl::run_async_sgd(&obj, &trace, &w0, &noisy, 100).unwrap();
    assert_eq!(a.final_w, b.final_w);
    assert_eq!(a.grad_norm_sq, b.grad_norm_sq);

    let c = fl::run_async_sgd(&obj, &trace, &w0, &noisy, 101).unwrap();
    assert_ne!(a.final_w, c.final_w, "noise seed must matter when σ > 0");

    // With σ = 0 the noise stream is never touched.
    let quiet = noiseless(0.1);
    let d = fl::run_async_sgd(&obj, &trace, &w0, &quiet, 100).unwrap();
    let e = fl::run_async_sgd(&obj, &trace, &w0, &quiet, 999).unwrap();
    assert_eq!(d.final_w, e.final_w);

    // Synchronous runs are seed-deterministic too.
    let f1 = fl::run_fedavg(&obj, &[2.0, 1.0], &w0, 10, 2, 3, &noisy, 55).unwrap();
    let f2 = fl::run_fedavg(&obj, &[2.0, 1.0], &w0, 10, 2, 3, &noisy, 55).unwrap();
    assert_eq!(f1.final_w, f2.final_w);
    assert_eq!(f1.round_time, f2.round_time);
}

#[test]
fn input_validation_rejects_malformed_requests() {
    let cfg = NetworkConfig::uniform(vec![1.0, 1.0], 2).unwrap();
    let trace = sim::simulate(&cfg, 20, 1, ServiceLaw::Exponential).unwrap();
    let obj = HeterogeneousQuadratic::random(2, 3, 1.0, 1).unwrap();
    let w0 = vec![0.0; 3];
    let opts = noiseless(0.1);

    // Client-count mismatch between objective and trace.
    let wrong_n = HeterogeneousQuadratic::random(3, 3, 1.0, 1).unwrap();
    assert!(fl::run_generalized_async_sgd(&wrong_n, &trace, &w0, &opts, 1).is_err());
    // Dimension mismatch, bad step size, zero cadence, zero buffer.
    assert!(fl::run_generalized_async_sgd(&obj, &trace, &[0.0; 2], &opts, 1).is_err());
    let bad_eta = TrainOptions {
        eta: 0.0,
        ..opts.clone()
    };
    assert!(fl::run_generalized_async_sgd(&obj, &trace, &w0, &bad_eta, 1).is_err());
    let bad_cadence = TrainOptions {
        record_every: 0,
        ..opts.clone()
    };
    assert!(fl::run_generalized_async_sgd(&obj, &trace, &w0, &bad_cadence, 1).is_err());
    assert!(fl::run_fedbuff(&obj, &trace, &w0, 0, &opts, 1).is_err());

    // Synchronous runs: participant and schedule bounds.
    assert!(fl::run_fedavg(&obj, &[1.0, 1.0], &w0, 5, 0, 1, &opts, 1).is_err());
    assert!(fl::run_fedavg(&obj, &[1.0, 1.0], &w0, 5, 3, 1, &opts, 1).is_err());
    assert!(fl::run_fedavg(&obj, &[1.0, 1.0], &w0, 0, 2, 1, &opts, 1).is_err());
    assert!(fl::run_fedavg(&obj, &[1.0, 1.0], &w0, 5, 2, 0, &opts, 1).is_err());
    assert!(fl::run_fedavg(&obj, &[1.0], &w0, 5, 1, 1, &opts, 1).is_err());
}
