//! Event-driven simulation of the closed network in continuous time.
//!
//! One simulation run produces the server-step sequence: at each step k a
//! node J_k completes the head of its FIFO queue, the scheduler samples a
//! node K_{k+1} from p, and one task is dispatched there, so the total task
//! count stays at C. The trace records, per step, the completing node, the
//! sampled node, the dispatch step of the completed task, and the physical
//! completion time; queue-length vectors are reconstructed on demand from
//! the initial state and the per-step increments.
//!
//! A run is a pure, deterministic function of (config, seed, horizon,
//! options): replications are safe to execute in parallel with independent
//! seeds.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, NetworkConfig};

/// Service-time law applied at every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceLaw {
    /// Exponential with the node's rate μ_i (memoryless).
    Exponential,
    /// Fixed duration 1/μ_i.
    Deterministic,
}

impl Default for ServiceLaw {
    fn default() -> Self {
        ServiceLaw::Exponential
    }
}

/// How the C initial tasks are placed before step 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialPlacement {
    /// C independent draws from p; a node may receive several tasks.
    Sampled,
    /// C draws from p without replacement (requires C ≤ n).
    Distinct,
    /// Initial queue vector drawn from the stationary law π_C; requires the
    /// state space to fit the enumeration budget.
    Stationary,
}

impl Default for InitialPlacement {
    fn default() -> Self {
        InitialPlacement::Sampled
    }
}

/// Knobs for a single run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SimOptions {
    /// Service-time law.
    pub law: ServiceLaw,
    /// Initial task placement rule.
    pub placement: InitialPlacement,
}

/// Step marker for tasks that were part of the initial set rather than
/// dispatched at some server step.
pub const INITIAL_DISPATCH: i64 = -1;

/// Ordered record of one simulation run.
///
/// Column k holds: completion time `t[k]` (strictly increasing), completing
/// node `j[k]`, sampled node `k_next[k]`, and `i[k]`, the server step at
/// which the completed task was dispatched (−1 for the initial set).
/// Queue-length vectors satisfy Σ_i x_i = C at every step and are
/// reconstructed from `initial_queue` plus the per-step moves.
#[derive(Debug, Clone)]
pub struct SimTrace {
    /// Network the run was drawn from.
    pub config: NetworkConfig,
    /// RNG seed the run is a pure function of.
    pub seed: u64,
    /// Number of recorded server steps.
    pub horizon: usize,
    /// Options the run was drawn with.
    pub options: SimOptions,
    /// Queue-length vector before step 0.
    pub initial_queue: Vec<u32>,
    /// Physical completion times t_k.
    pub t: Vec<f64>,
    /// Completing node J_k.
    pub j: Vec<u32>,
    /// Sampled node K_{k+1}.
    pub k_next: Vec<u32>,
    /// Dispatch step of the completed task; −1 marks the initial set.
    pub i: Vec<i64>,
}

impl SimTrace {
    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    /// True when no steps were recorded.
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Calls `f(k, x_k)` with the queue vector after every step,
    /// reconstructed incrementally.
    pub fn for_each_state(&self, mut f: impl FnMut(usize, &[u32])) {
        let mut x = self.initial_queue.clone();
        for k in 0..self.len() {
            x[self.j[k] as usize] -= 1;
            x[self.k_next[k] as usize] += 1;
            f(k, &x);
        }
    }

    /// Writes the step records as CSV `k,t,j,k_next,i_k`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "k,t,j,k_next,i_k")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                k, self.t[k], self.j[k], self.k_next[k], self.i[k]
            )?;
        }
        Ok(())
    }

    /// Writes the queue-snapshot sidecar as CSV `k,x_0,..,x_{n-1}`, with
    /// row k = −1 holding the initial vector.
    pub fn write_queue_sidecar(&self, mut out: impl Write) -> Result<()> {
        let n = self.config.n();
        write!(out, "k")?;
        for i in 0..n {
            write!(out, ",x_{i}")?;
        }
        writeln!(out)?;
        let mut write_row = |k: i64, x: &[u32]| -> std::io::Result<()> {
            write!(out, "{k}")?;
            for &v in x {
                write!(out, ",{v}")?;
            }
            writeln!(out)
        };
        write_row(-1, &self.initial_queue)?;
        let mut err = None;
        self.for_each_state(|k, x| {
            if err.is_none() {
                if let Err(e) = write_row(k as i64, x) {
                    err = Some(e);
                }
            }
        });
        match err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }
}

/// Event-queue key ordered by (time, node, sequence number). The sequence
/// number makes floating-point time ties deterministic; the node index
/// breaks deterministic-service ties the same way on every run.
#[derive(Debug, Clone, Copy)]
struct EventKey {
    time: f64,
    node: u32,
    seq: u64,
}

impl PartialEq for EventKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EventKey {}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EventKey {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reverse so the BinaryHeap pops the earliest event first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Derives an independent child seed from a master seed, SplitMix64-style.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples a node index from the cumulative distribution of p.
fn sample_node(cum_p: &[f64], rng: &mut ChaCha12Rng) -> u32 {
    let u: f64 = rng.gen();
    cum_p.partition_point(|&c| c <= u) as u32
}

fn service_duration(law: ServiceLaw, mu: f64, rng: &mut ChaCha12Rng) -> f64 {
    match law {
        ServiceLaw::Exponential => {
            let u: f64 = rng.gen();
            // 1 − u is in (0, 1], so the logarithm is finite.
            -(1.0 - u).ln() / mu
        }
        ServiceLaw::Deterministic => 1.0 / mu,
    }
}

/// Runs the simulator with exponential-or-deterministic service and the
/// default sampled initial placement.
pub fn simulate(cfg: &NetworkConfig, horizon: usize, seed: u64, law: ServiceLaw) -> Result<SimTrace> {
    simulate_with(
        cfg,
        horizon,
        seed,
        SimOptions {
            law,
            placement: InitialPlacement::Sampled,
        },
    )
}

/// Runs the simulator with explicit options.
pub fn simulate_with(
    cfg: &NetworkConfig,
    horizon: usize,
    seed: u64,
    options: SimOptions,
) -> Result<SimTrace> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let n = cfg.n();
    let c = cfg.concurrency();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cum_p = cumulative(cfg.p());

    // FIFO queues hold dispatch-step identifiers; −1 marks initial tasks.
    let mut queues: Vec<VecDeque<i64>> = vec![VecDeque::new(); n];
    let initial_queue = place_initial(cfg, &cum_p, options.placement, &mut rng)?;
    for (node, &count) in initial_queue.iter().enumerate() {
        for _ in 0..count {
            queues[node].push_back(INITIAL_DISPATCH);
        }
    }

    let mut heap: BinaryHeap<EventKey> = BinaryHeap::new();
    let mut seq: u64 = 0;
    let schedule = |heap: &mut BinaryHeap<EventKey>,
                        seq: &mut u64,
                        rng: &mut ChaCha12Rng,
                        node: usize,
                        now: f64| {
        let dur = service_duration(options.law, cfg.mu()[node], rng);
        heap.push(EventKey {
            time: now + dur,
            node: node as u32,
            seq: *seq,
        });
        *seq += 1;
    };

    // Only the head-of-line task of each busy node has a scheduled event.
    for node in 0..n {
        if !queues[node].is_empty() {
            schedule(&mut heap, &mut seq, &mut rng, node, 0.0);
        }
    }

    let mut x = initial_queue.clone();
    let mut t = Vec::with_capacity(horizon);
    let mut j = Vec::with_capacity(horizon);
    let mut k_next = Vec::with_capacity(horizon);
    let mut i_vec = Vec::with_capacity(horizon);

    for k in 0..horizon {
        let ev = heap
            .pop()
            .expect("closed network with C >= 1 always has a pending completion");
        let node = ev.node as usize;
        let dispatched_at = queues[node]
            .pop_front()
            .expect("scheduled completion implies a nonempty queue");
        x[node] -= 1;

        let target = sample_node(&cum_p, &mut rng) as usize;
        queues[target].push_back(k as i64);
        x[target] += 1;

        // The completing node starts its next head-of-line task first, then
        // the target node if the dispatch revived an idle queue.
        if !queues[node].is_empty() {
            schedule(&mut heap, &mut seq, &mut rng, node, ev.time);
        }
        if target != node && x[target] == 1 {
            schedule(&mut heap, &mut seq, &mut rng, target, ev.time);
        }

        t.push(ev.time);
        j.push(node as u32);
        k_next.push(target as u32);
        i_vec.push(dispatched_at);
    }

    debug_assert_eq!(x.iter().sum::<u32>(), c);
    Ok(SimTrace {
        config: cfg.clone(),
        seed,
        horizon,
        options,
        initial_queue,
        t,
        j,
        k_next,
        i: i_vec,
    })
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &q in p {
        acc += q;
        cum.push(acc);
    }
    // Guard against roundoff excluding u values just below 1.
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    cum
}

fn place_initial(
    cfg: &NetworkConfig,
    cum_p: &[f64],
    placement: InitialPlacement,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<u32>> {
    let n = cfg.n();
    let c = cfg.concurrency();
    let mut x = vec![0u32; n];
    match placement {
        InitialPlacement::Sampled => {
            for _ in 0..c {
                x[sample_node(cum_p, rng) as usize] += 1;
            }
        }
        InitialPlacement::Distinct => {
            if c as usize > n {
                return Err(Error::invalid(format!(
                    "distinct placement needs C <= n, got C={c}, n={n}"
                )));
            }
            // Rejection sampling from p among nodes not yet chosen; the
            // support always contains every node, so this terminates.
            let mut placed = 0;
            while placed < c {
                let node = sample_node(cum_p, rng) as usize;
                if x[node] == 0 {
                    x[node] = 1;
                    placed += 1;
                }
            }
        }
        InitialPlacement::Stationary => {
            let table = network::stationary_distribution(cfg, c)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = None;
            for (state, mass) in table.iter() {
                acc += mass;
                if u < acc {
                    chosen = Some(state.clone());
                    break;
                }
            }
            // Roundoff can leave u above the accumulated total; take the
            // lexicographically last state in that case.
            x = chosen
                .or_else(|| table.iter().last().map(|(s, _)| s.clone()))
                .expect("stationary table is never empty");
        }
    }
    Ok(x)
}
