//! Asynchronous training runtimes driven by simulated completion traces.
//!
//! A network trace fixes which node completes at each server step and
//! where the freed slot is re-dispatched. The runtimes replay such a
//! trace against a concrete objective: every in-flight task carries the
//! gradient it computed from the model snapshot it was dispatched with,
//! and the server applies that (stale) gradient on completion.
//!
//! Generalized asynchronous SGD importance-weights each applied gradient
//! by 1/(n·p_J), making the update conditionally unbiased for ∇f under
//! arbitrary sampling vectors p. Alongside the real iterates w_k the
//! runtime can maintain the virtual sequence
//!
//! μ_{k+1} = μ_k − (η/(n·p_{K_k}))·g̃_{K_k}(w_k),
//!
//! which applies every dispatched gradient immediately. The gap between
//! the two sequences is exactly η times the sum of the in-flight scaled
//! gradients excluding the most recent dispatch (the concurrency ledger);
//! the replay checks this identity and the constancy of the ledger's
//! cardinality at C − 1 on every step.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{self, SimTrace};

/// A finite-sum objective f(w) = (1/n)·Σᵢ fᵢ(w) over n clients.
pub trait Objective: Sync {
    /// Parameter dimension d.
    fn dim(&self) -> usize;
    /// Number of clients n.
    fn n_clients(&self) -> usize;
    /// Global objective value f(w).
    fn value(&self, w: &[f64]) -> f64;
    /// Client gradient ∇fᵢ(w), written into `out`.
    fn client_grad(&self, client: usize, w: &[f64], out: &mut [f64]);
    /// Full gradient ∇f(w), written into `out`.
    fn full_grad(&self, w: &[f64], out: &mut [f64]) {
        let mut buf = vec![0.0; self.dim()];
        out.fill(0.0);
        for i in 0..self.n_clients() {
            self.client_grad(i, w, &mut buf);
            for (o, &b) in out.iter_mut().zip(&buf) {
                *o += b / self.n_clients() as f64;
            }
        }
    }
}

/// Translated quadratics fᵢ(w) = ½‖w − bᵢ‖²: 1-smooth, minimized at the
/// centroid of the targets, with gradient dissimilarity
/// G² = maxᵢ ‖bᵢ − b̄‖².
#[derive(Debug, Clone)]
pub struct HeterogeneousQuadratic {
    targets: Vec<Vec<f64>>,
    centroid: Vec<f64>,
}

impl HeterogeneousQuadratic {
    /// Builds the objective from per-client targets (all the same length).
    pub fn new(targets: Vec<Vec<f64>>) -> Result<Self> {
        let dim = targets.first().map(|b| b.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::invalid("need at least one nonempty target"));
        }
        if targets.iter().any(|b| b.len() != dim) {
            return Err(Error::invalid("targets must share one dimension"));
        }
        let n = targets.len() as f64;
        let mut centroid = vec![0.0; dim];
        for b in &targets {
            for (c, &v) in centroid.iter_mut().zip(b) {
                *c += v / n;
            }
        }
        Ok(HeterogeneousQuadratic { targets, centroid })
    }

    /// Random instance with targets drawn coordinate-wise from
    /// N(0, spread²).
    pub fn random(n: usize, dim: usize, spread: f64, seed: u64) -> Result<Self> {
        if n == 0 || dim == 0 || !(spread >= 0.0) {
            return Err(Error::invalid("need n ≥ 1, dim ≥ 1, spread ≥ 0"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let targets = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self::new(targets)
    }

    /// Minimizer b̄ of the average objective.
    pub fn minimizer(&self) -> &[f64] {
        &self.centroid
    }

    /// Gradient-dissimilarity bound G² = maxᵢ ‖bᵢ − b̄‖², independent
    /// of w for this family.
    pub fn g2(&self) -> f64 {
        self.targets
            .iter()
            .map(|b| {
                b.iter()
                    .zip(&self.centroid)
                    .map(|(&v, &c)| (v - c).powi(2))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Expectation of the sampled target under probabilities p: the
    /// stationary point of unweighted p-sampled SGD.
    pub fn weighted_target(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.centroid.len()];
        for (b, &pi) in self.targets.iter().zip(p) {
            for (o, &v) in out.iter_mut().zip(b) {
                *o += pi * v;
            }
        }
        out
    }
}

impl Objective for HeterogeneousQuadratic {
    fn dim(&self) -> usize {
        self.centroid.len()
    }

    fn n_clients(&self) -> usize {
        self.targets.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.targets.len() as f64;
        self.targets
            .iter()
            .map(|b| {
                0.5 * w
                    .iter()
                    .zip(b)
                    .map(|(&wi, &bi)| (wi - bi).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    fn client_grad(&self, client: usize, w: &[f64], out: &mut [f64]) {
        for ((o, &wi), &bi) in out.iter_mut().zip(w).zip(&self.targets[client]) {
            *o = wi - bi;
        }
    }

    fn full_grad(&self, w: &[f64], out: &mut [f64]) {
        for ((o, &wi), &ci) in out.iter_mut().zip(w).zip(&self.centroid) {
            *o = wi - ci;
        }
    }
}

/// Binary logistic regression on a synthetic two-Gaussian mixture with
/// label-skewed client shards and ridge regularization.
#[derive(Debug, Clone)]
pub struct SyntheticLogistic {
    /// Per-client feature matrices, row-major `samples × dim`.
    features: Vec<Vec<f64>>,
    /// Per-client labels in {−1, +1}.
    labels: Vec<Vec<f64>>,
    dim: usize,
    reg: f64,
}

impl SyntheticLogistic {
    /// Generates n client shards of `samples` points each in `dim`
    /// dimensions. Class centers sit at ±1.5/√d per coordinate; client i
    /// draws positives with probability skewed linearly from 0.1 to 0.9
    /// across clients.
    pub fn generate(n: usize, samples: usize, dim: usize, reg: f64, seed: u64) -> Result<Self> {
        if n == 0 || samples == 0 || dim == 0 || !(reg >= 0.0) {
            return Err(Error::invalid("need n, samples, dim ≥ 1 and reg ≥ 0"));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let shift = 1.5 / (dim as f64).sqrt();
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for client in 0..n {
            let pos_frac = if n == 1 {
                0.5
            } else {
                0.1 + 0.8 * client as f64 / (n - 1) as f64
            };
            let mut x = Vec::with_capacity(samples * dim);
            let mut y = Vec::with_capacity(samples);
            for _ in 0..samples {
                let label = if rng.gen::<f64>() < pos_frac { 1.0 } else { -1.0 };
                for _ in 0..dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    x.push(label * shift + noise);
                }
                y.push(label);
            }
            features.push(x);
            labels.push(y);
        }
        Ok(SyntheticLogistic {
            features,
            labels,
            dim,
            reg,
        })
    }

    /// Smoothness estimate ¼·maxᵢ mean‖x‖² + reg for step-size choices.
    pub fn smoothness_estimate(&self) -> f64 {
        let worst = self
            .features
            .iter()
            .map(|x| {
                let rows = x.len() / self.dim;
                x.iter().map(|v| v * v).sum::<f64>() / rows as f64
            })
            .fold(0.0, f64::max);
        0.25 * worst + self.reg
    }
}

impl Objective for SyntheticLogistic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_clients(&self) -> usize {
        self.features.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut total = 0.0;
        for (x, y) in self.features.iter().zip(&self.labels) {
            let rows = y.len();
            let mut loss = 0.0;
            for (r, &label) in y.iter().enumerate() {
                let margin: f64 = x[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(w)
                    .map(|(&xi, &wi)| xi * wi)
                    .sum();
                loss += (-label * margin).exp().ln_1p();
            }
            total += loss / rows as f64;
        }
        let ridge = 0.5 * self.reg * w.iter().map(|v| v * v).sum::<f64>();
        total / self.features.len() as f64 + ridge
    }

    fn client_grad(&self, client: usize, w: &[f64], out: &mut [f64]) {
        let x = &self.features[client];
        let y = &self.labels[client];
        let rows = y.len();
        out.fill(0.0);
        for (r, &label) in y.iter().enumerate() {
            let row = &x[r * self.dim..(r + 1) * self.dim];
            let margin: f64 = row.iter().zip(w).map(|(&xi, &wi)| xi * wi).sum();
            let coef = -label / (1.0 + (label * margin).exp()) / rows as f64;
            for (o, &xi) in out.iter_mut().zip(row) {
                *o += coef * xi;
            }
        }
        for (o, &wi) in out.iter_mut().zip(w) {
            *o += self.reg * wi;
        }
    }
}

/// Deliberate bookkeeping corruption for negative tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fault {
    /// Skip the first ledger insertion at or after the given step, leaving
    /// the ledger one gradient short until the affected task completes.
    DropLedgerEntry {
        /// Earliest server step at which the entry may be dropped.
        step: usize,
    },
}

/// Knobs for a training replay.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Step size η.
    pub eta: f64,
    /// Gradient-noise scale σ: per-coordinate N(0, σ²/d) is added to each
    /// computed client gradient, so E‖noise‖² = σ².
    pub sigma: f64,
    /// Record metrics every this many steps (1 = every step).
    pub record_every: usize,
    /// Maintain the virtual iterate and check the ledger identity.
    pub track_virtual: bool,
    /// Optional bookkeeping corruption.
    pub fault: Option<Fault>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            eta: 0.1,
            sigma: 0.0,
            record_every: 1,
            track_virtual: false,
            fault: None,
        }
    }
}

/// Metrics and invariant diagnostics of one training replay.
#[derive(Debug, Clone, Serialize)]
pub struct TrainRun {
    /// Sampling vector the trace was generated with.
    pub p: Vec<f64>,
    /// Step size used.
    pub eta: f64,
    /// Recorded step indices (always includes 0 and the horizon).
    pub steps: Vec<usize>,
    /// Physical completion time at each recorded step (0 at step 0).
    pub time: Vec<f64>,
    /// ‖∇f(w_k)‖² at recorded steps.
    pub grad_norm_sq: Vec<f64>,
    /// f(w_k) at recorded steps.
    pub f_value: Vec<f64>,
    /// Minimum recorded squared gradient norm.
    pub min_grad_norm_sq: f64,
    /// Relative virtual-iterate identity residuals at recorded steps
    /// (empty unless tracking was enabled).
    pub virtual_residual: Vec<f64>,
    /// Largest relative identity residual observed at any step.
    pub max_virtual_residual: f64,
    /// Smallest and largest ledger cardinality observed after step 0.
    pub ledger_size_range: (usize, usize),
    /// Final iterate w_T.
    pub final_w: Vec<f64>,
}

struct InFlight {
    /// Unique task key (initial tasks 0..C, then C + dispatch step).
    key: u64,
    /// Trace dispatch id (−1 for initial tasks).
    trace_step: i64,
    /// Gradient already scaled by the importance weight.
    scaled_grad: Vec<f64>,
}

fn noisy_client_grad(
    obj: &dyn Objective,
    client: usize,
    w: &[f64],
    sigma: f64,
    rng: &mut ChaCha12Rng,
    out: &mut [f64],
) {
    obj.client_grad(client, w, out);
    if sigma > 0.0 {
        let per_coord = sigma / (out.len() as f64).sqrt();
        for o in out.iter_mut() {
            *o += per_coord * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Replays a completion trace as generalized asynchronous SGD with
/// importance weights 1/(n·p_J), starting from `w0`.
///
/// Scaling choice per update: `scale(j) = 1/(n·p_j)`; passing a uniform
/// trace reproduces plain asynchronous SGD exactly (every weight is 1).
pub fn run_generalized_async_sgd(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    opts: &TrainOptions,
    noise_seed: u64,
) -> Result<TrainRun> {
    run_replay(obj, trace, w0, opts, noise_seed, UpdateRule::ImportanceWeighted)
}

/// Plain asynchronous SGD: requires a uniform-sampling trace, then
/// delegates to the generalized runtime (whose weights all equal one).
pub fn run_async_sgd(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    opts: &TrainOptions,
    noise_seed: u64,
) -> Result<TrainRun> {
    let n = trace.config.n() as f64;
    let uniform = trace
        .config
        .p()
        .iter()
        .all(|&pi| (pi - 1.0 / n).abs() <= 1e-12);
    if !uniform {
        return Err(Error::invalid(
            "plain asynchronous SGD requires uniform sampling; use the generalized runtime",
        ));
    }
    run_replay(obj, trace, w0, opts, noise_seed, UpdateRule::ImportanceWeighted)
}

/// Buffered asynchronous SGD: completed gradients accumulate unweighted
/// in a buffer of size `buffer`; the model moves by η times the buffer
/// mean once the buffer fills. With `buffer = 1` and a uniform trace this
/// coincides bitwise with plain asynchronous SGD.
pub fn run_fedbuff(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    buffer: usize,
    opts: &TrainOptions,
    noise_seed: u64,
) -> Result<TrainRun> {
    if buffer == 0 {
        return Err(Error::invalid("buffer size must be at least 1"));
    }
    run_replay(obj, trace, w0, opts, noise_seed, UpdateRule::Buffered { size: buffer })
}

enum UpdateRule {
    ImportanceWeighted,
    Buffered { size: usize },
}

fn run_replay(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    opts: &TrainOptions,
    noise_seed: u64,
    rule: UpdateRule,
) -> Result<TrainRun> {
    let n = trace.config.n();
    let dim = obj.dim();
    if obj.n_clients() != n {
        return Err(Error::invalid(format!(
            "objective has {} clients but the trace network has {n} nodes",
            obj.n_clients()
        )));
    }
    if w0.len() != dim {
        return Err(Error::invalid("initial point dimension mismatch"));
    }
    if !(opts.eta > 0.0) || !opts.eta.is_finite() {
        return Err(Error::invalid("step size must be positive"));
    }
    if opts.record_every == 0 {
        return Err(Error::invalid("record_every must be at least 1"));
    }
    let importance = matches!(rule, UpdateRule::ImportanceWeighted);
    let track = opts.track_virtual && importance;
    let p = trace.config.p().to_vec();
    let scale = |node: usize| -> f64 {
        if importance {
            1.0 / (n as f64 * p[node])
        } else {
            1.0
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(sim::derive_seed(noise_seed, 0x6772_6164));
    let mut w = w0.to_vec();
    let mut queues: Vec<std::collections::VecDeque<InFlight>> =
        (0..n).map(|_| std::collections::VecDeque::new()).collect();

    // Initial tasks: one gradient per queued slot, all at snapshot w_0.
    let mut next_key = 0u64;
    let mut initial_scaled_sum = vec![0.0; dim];
    let mut grad_buf = vec![0.0; dim];
    for node in 0..n {
        for _ in 0..trace.initial_queue[node] {
            noisy_client_grad(obj, node, &w, opts.sigma, &mut rng, &mut grad_buf);
            let s = scale(node);
            let scaled: Vec<f64> = grad_buf.iter().map(|&g| g * s).collect();
            for (acc, &v) in initial_scaled_sum.iter_mut().zip(&scaled) {
                *acc += v;
            }
            queues[node].push_back(InFlight {
                key: next_key,
                trace_step: sim::INITIAL_DISPATCH,
                scaled_grad: scaled,
            });
            next_key += 1;
        }
    }
    let concurrency = next_key as usize;

    // Ledger: scaled gradients in flight excluding the pending (newest)
    // dispatch. Before step 0 there is no pending slot, so it holds all
    // initial tasks; the first completion brings it to C − 1 for good.
    let mut ledger: HashMap<u64, Vec<f64>> = HashMap::new();
    if track {
        for q in &queues {
            for task in q {
                ledger.insert(task.key, task.scaled_grad.clone());
            }
        }
    }
    let mut mu = if track { Some(w.clone()) } else { None };
    let mut pending: Option<InFlight> = None;
    let mut fault_armed = opts.fault.is_some();
    let mut buffer_sum = vec![0.0; dim];
    let mut buffer_fill = 0usize;

    let horizon = trace.len();
    let mut steps = Vec::new();
    let mut time = Vec::new();
    let mut grad_norm_sq = Vec::new();
    let mut f_value = Vec::new();
    let mut virtual_residual = Vec::new();
    let mut max_virtual_residual = 0.0f64;
    let mut ledger_min = usize::MAX;
    let mut ledger_max = 0usize;
    let mut min_grad = f64::INFINITY;

    let record = |k: usize,
                      t: f64,
                      w: &[f64],
                      steps: &mut Vec<usize>,
                      time: &mut Vec<f64>,
                      gns: &mut Vec<f64>,
                      fv: &mut Vec<f64>,
                      min_grad: &mut f64,
                      buf: &mut Vec<f64>| {
        obj.full_grad(w, buf);
        let g = norm_sq(buf);
        *min_grad = (*min_grad).min(g);
        steps.push(k);
        time.push(t);
        gns.push(g);
        fv.push(obj.value(w));
    };

    record(
        0,
        0.0,
        &w,
        &mut steps,
        &mut time,
        &mut grad_norm_sq,
        &mut f_value,
        &mut min_grad,
        &mut grad_buf,
    );
    if track {
        virtual_residual.push(0.0);
    }

    for k in 0..horizon {
        let node = trace.j[k] as usize;
        let completed = queues[node]
            .pop_front()
            .ok_or_else(|| Error::invalid("trace completion at an empty queue"))?;
        debug_assert_eq!(
            completed.trace_step, trace.i[k],
            "replayed FIFO order diverged from the trace"
        );

        // Model update.
        match rule {
            UpdateRule::ImportanceWeighted => {
                for (wi, &g) in w.iter_mut().zip(&completed.scaled_grad) {
                    *wi -= opts.eta * g;
                }
            }
            UpdateRule::Buffered { size } => {
                for (b, &g) in buffer_sum.iter_mut().zip(&completed.scaled_grad) {
                    *b += g;
                }
                buffer_fill += 1;
                if buffer_fill == size {
                    for (wi, b) in w.iter_mut().zip(buffer_sum.iter_mut()) {
                        *wi -= opts.eta * *b / size as f64;
                        *b = 0.0;
                    }
                    buffer_fill = 0;
                }
            }
        }

        // Virtual iterate: apply the previous dispatch (all initial
        // gradients at the first step), then rotate the ledger. A pending
        // task that completes immediately never joins the ledger.
        if let Some(mu) = mu.as_mut() {
            if k == 0 {
                for (m, &g) in mu.iter_mut().zip(&initial_scaled_sum) {
                    *m -= opts.eta * g;
                }
                ledger.remove(&completed.key);
            } else {
                let prev = pending.as_ref().expect("pending dispatch exists after step 0");
                for (m, &g) in mu.iter_mut().zip(&prev.scaled_grad) {
                    *m -= opts.eta * g;
                }
                if prev.key != completed.key {
                    // Removal can miss only when a fault dropped the entry.
                    let removed = ledger.remove(&completed.key);
                    debug_assert!(removed.is_some() || opts.fault.is_some());
                    let drop_now = fault_armed
                        && matches!(opts.fault, Some(Fault::DropLedgerEntry { step }) if k >= step);
                    if drop_now {
                        fault_armed = false;
                    } else {
                        ledger.insert(prev.key, prev.scaled_grad.clone());
                    }
                }
            }
            ledger_min = ledger_min.min(ledger.len());
            ledger_max = ledger_max.max(ledger.len());
        }

        // Dispatch: the new task computes its gradient at the fresh model.
        let target = trace.k_next[k] as usize;
        noisy_client_grad(obj, target, &w, opts.sigma, &mut rng, &mut grad_buf);
        let s = scale(target);
        let scaled: Vec<f64> = grad_buf.iter().map(|&g| g * s).collect();
        let key = concurrency as u64 + k as u64;
        queues[target].push_back(InFlight {
            key,
            trace_step: k as i64,
            scaled_grad: scaled.clone(),
        });
        pending = Some(InFlight {
            key,
            trace_step: k as i64,
            scaled_grad: scaled,
        });

        let recorded = (k + 1) % opts.record_every == 0 || k + 1 == horizon;
        if let Some(mu) = mu.as_ref() {
            // Identity: w_k = μ_k + η·Σ ledger (checked every step).
            let mut residual = 0.0f64;
            let mut ledger_sum = vec![0.0; dim];
            for g in ledger.values() {
                for (acc, &v) in ledger_sum.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            for i in 0..dim {
                let r = mu[i] - w[i] + opts.eta * ledger_sum[i];
                residual += r * r;
            }
            let rel = residual.sqrt() / (1.0 + norm_sq(&w).sqrt());
            max_virtual_residual = max_virtual_residual.max(rel);
            if recorded {
                virtual_residual.push(rel);
            }
        }
        if recorded {
            record(
                k + 1,
                trace.t[k],
                &w,
                &mut steps,
                &mut time,
                &mut grad_norm_sq,
                &mut f_value,
                &mut min_grad,
                &mut grad_buf,
            );
        }
    }

    if ledger_min == usize::MAX {
        ledger_min = 0;
    }
    Ok(TrainRun {
        p,
        eta: opts.eta,
        steps,
        time,
        grad_norm_sq,
        f_value,
        min_grad_norm_sq: min_grad,
        virtual_residual,
        max_virtual_residual,
        ledger_size_range: (ledger_min, ledger_max),
        final_w: w,
    })
}

/// Runs a replay with identity tracking and summarizes the invariants:
/// the largest relative residual of w = μ + η·Σledger and the observed
/// ledger cardinality range (constant at C − 1 when the bookkeeping is
/// sound).
pub fn check_virtual_identity(
    obj: &dyn Objective,
    trace: &SimTrace,
    w0: &[f64],
    opts: &TrainOptions,
    noise_seed: u64,
) -> Result<(f64, (usize, usize))> {
    let mut opts = opts.clone();
    opts.track_virtual = true;
    let run = run_generalized_async_sgd(obj, trace, w0, &opts, noise_seed)?;
    Ok((run.max_virtual_residual, run.ledger_size_range))
}

/// Outcome of the importance-weighting unbiasedness check.
#[derive(Debug, Clone, Serialize)]
pub struct UnbiasednessReport {
    /// Largest per-coordinate standardized deviation |mean − ∇f|/SE.
    pub max_z: f64,
    /// Number of Monte-Carlo draws.
    pub draws: u64,
    /// Whether every coordinate sits inside the 3σ envelope.
    pub ok: bool,
}

/// Monte-Carlo check that E[g̃_K/(n·p_K)] = ∇f(w) when K ~ p: draws N
/// clients, averages the importance-weighted stochastic gradients, and
/// standardizes the deviation from the exact full gradient per
/// coordinate with the sample standard error.
pub fn check_unbiased_sampling(
    obj: &dyn Objective,
    w: &[f64],
    p: &[f64],
    sigma: f64,
    draws: u64,
    seed: u64,
) -> Result<UnbiasednessReport> {
    let n = obj.n_clients();
    if p.len() != n {
        return Err(Error::invalid("sampling vector length mismatch"));
    }
    if draws < 2 {
        return Err(Error::invalid("need at least two draws"));
    }
    let dim = obj.dim();
    let mut cumulative: Vec<f64> = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &pi in p {
        acc += pi;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    for count in 1..=draws {
        let u: f64 = rng.gen();
        let client = cumulative.partition_point(|&c| c < u).min(n - 1);
        noisy_client_grad(obj, client, w, sigma, &mut rng, &mut grad);
        let weight = 1.0 / (n as f64 * p[client]);
        for i in 0..dim {
            let x = grad[i] * weight;
            let delta = x - mean[i];
            mean[i] += delta / count as f64;
            m2[i] += delta * (x - mean[i]);
        }
    }
    let mut exact = vec![0.0; dim];
    obj.full_grad(w, &mut exact);
    let mut max_z = 0.0f64;
    for i in 0..dim {
        let variance = m2[i] / (draws - 1) as f64;
        let se = (variance / draws as f64).sqrt();
        let diff = (mean[i] - exact[i]).abs();
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_z = max_z.max(z);
    }
    Ok(UnbiasednessReport {
        max_z,
        draws,
        ok: max_z <= 3.0,
    })
}

/// Metrics of a synchronous round-based run.
#[derive(Debug, Clone, Serialize)]
pub struct FedAvgRun {
    /// Wall-clock time at the end of each round (max over participants of
    /// their summed service draws).
    pub round_time: Vec<f64>,
    /// ‖∇f(w)‖² after each round.
    pub grad_norm_sq: Vec<f64>,
    /// f(w) after each round.
    pub f_value: Vec<f64>,
    /// Final iterate.
    pub final_w: Vec<f64>,
}

/// Synchronous federated averaging: each round samples `participants`
/// clients without replacement, runs `local_steps` local SGD steps from
/// the global model, and averages the resulting iterates. Round duration
/// is the slowest participant's total service time, with per-step times
/// drawn Exp(μᵢ) from the network's rates.
pub fn run_fedavg(
    obj: &dyn Objective,
    mu_rates: &[f64],
    w0: &[f64],
    rounds: usize,
    participants: usize,
    local_steps: usize,
    opts: &TrainOptions,
    seed: u64,
) -> Result<FedAvgRun> {
    let n = obj.n_clients();
    if mu_rates.len() != n {
        return Err(Error::invalid("rate vector length mismatch"));
    }
    if participants == 0 || participants > n {
        return Err(Error::invalid("participants must lie in [1, n]"));
    }
    if local_steps == 0 || rounds == 0 {
        return Err(Error::invalid("need at least one round and local step"));
    }
    if w0.len() != obj.dim() {
        return Err(Error::invalid("initial point dimension mismatch"));
    }
    let mut select_rng = ChaCha12Rng::seed_from_u64(sim::derive_seed(seed, 1));
    let mut service_rng = ChaCha12Rng::seed_from_u64(sim::derive_seed(seed, 2));
    let mut noise_rng = ChaCha12Rng::seed_from_u64(sim::derive_seed(seed, 3));

    let dim = obj.dim();
    let mut w = w0.to_vec();
    let mut round_time = Vec::with_capacity(rounds);
    let mut grad_norm_sq = Vec::with_capacity(rounds);
    let mut f_value = Vec::with_capacity(rounds);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; dim];
    let mut clock = 0.0;

    for _ in 0..rounds {
        // Partial Fisher-Yates draw of `participants` distinct clients.
        for slot in 0..participants {
            let j = slot + select_rng.gen_range(0..n - slot);
            pool.swap(slot, j);
        }
        let mut aggregate = vec![0.0; dim];
        let mut slowest = 0.0f64;
        for &client in &pool[..participants] {
            let exp = Exp::new(mu_rates[client])
                .map_err(|_| Error::invalid("service rates must be positive"))?;
            let mut local = w.clone();
            let mut elapsed = 0.0;
            for _ in 0..local_steps {
                noisy_client_grad(obj, client, &local, opts.sigma, &mut noise_rng, &mut grad);
                for (li, &g) in local.iter_mut().zip(&grad) {
                    *li -= opts.eta * g;
                }
                elapsed += exp.sample(&mut service_rng);
            }
            slowest = slowest.max(elapsed);
            for (a, &li) in aggregate.iter_mut().zip(&local) {
                *a += li / participants as f64;
            }
        }
        w = aggregate;
        clock += slowest;
        round_time.push(clock);
        obj.full_grad(&w, &mut grad);
        grad_norm_sq.push(norm_sq(&grad));
        f_value.push(obj.value(&w));
    }
    Ok(FedAvgRun {
        round_time,
        grad_norm_sq,
        f_value,
        final_w: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::sim::{simulate, ServiceLaw};

    #[test]
    fn single_node_replay_is_gradient_descent() {
        // n = 1, C = 1: each dispatch carries the current model, so the
        // replay is exact gradient descent on f(w) = ½‖w − b‖².
        let cfg = NetworkConfig::uniform(vec![1.0], 1).unwrap();
        let trace = simulate(&cfg, 50, 7, ServiceLaw::Exponential).unwrap();
        let obj = HeterogeneousQuadratic::new(vec![vec![2.0, -1.0]]).unwrap();
        let opts = TrainOptions {
            eta: 0.3,
            ..TrainOptions::default()
        };
        let run = run_generalized_async_sgd(&obj, &trace, &[0.0, 0.0], &opts, 9).unwrap();
        let shrink = 0.7f64.powi(50);
        assert!((run.final_w[0] - 2.0 * (1.0 - shrink)).abs() < 1e-12);
        assert!((run.final_w[1] + 1.0 * (1.0 - shrink)).abs() < 1e-12);
    }

    #[test]
    fn virtual_identity_holds_on_small_run() {
        let cfg = NetworkConfig::uniform(vec![1.0, 2.0, 0.5], 4).unwrap();
        let trace = simulate(&cfg, 300, 21, ServiceLaw::Exponential).unwrap();
        let obj = HeterogeneousQuadratic::random(3, 6, 2.0, 5).unwrap();
        let opts = TrainOptions {
            eta: 0.05,
            sigma: 0.5,
            ..TrainOptions::default()
        };
        let (residual, sizes) =
            check_virtual_identity(&obj, &trace, &vec![0.0; 6], &opts, 11).unwrap();
        assert!(residual <= 1e-12, "residual {residual}");
        assert_eq!(sizes, (3, 3));
    }

    #[test]
    fn dropped_ledger_entry_breaks_identity() {
        let cfg = NetworkConfig::uniform(vec![1.0, 1.0], 3).unwrap();
        let trace = simulate(&cfg, 200, 2, ServiceLaw::Exponential).unwrap();
        let obj = HeterogeneousQuadratic::random(2, 4, 1.0, 8).unwrap();
        let opts = TrainOptions {
            eta: 0.1,
            track_virtual: true,
            fault: Some(Fault::DropLedgerEntry { step: 40 }),
            ..TrainOptions::default()
        };
        let run = run_generalized_async_sgd(&obj, &trace, &[0.0; 4], &opts, 3).unwrap();
        assert!(run.max_virtual_residual > 1e-6);
        assert!(run.ledger_size_range.0 < 2);
    }
}
