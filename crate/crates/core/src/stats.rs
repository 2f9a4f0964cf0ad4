//! Delay and queue statistics extracted from simulation traces.
//!
//! The central quantity is the per-task delay: the number of server steps
//! between a task's dispatch and its completion. A task dispatched at step
//! k and completed at step r has r − k − 1 steps strictly between the two
//! events; whether the completing step itself is also counted is a
//! convention choice exposed as [`DelayConvention`] (the strict reading
//! makes the single-task network have delay exactly 0).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bound::{DelayProfile, DelaySource};
use crate::error::{Error, Result};
use crate::network::{self, DistributionTable, NetworkConfig};
use crate::sim::{self, SimOptions, SimTrace};

/// How a task's delay is counted from its dispatch step k to its
/// completion step r.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayConvention {
    /// r − k − 1: steps strictly between dispatch and completion. With a
    /// single circulating task every delay is 0.
    Strict,
    /// r − k: the completing step is counted as well.
    Inclusive,
}

impl Default for DelayConvention {
    fn default() -> Self {
        DelayConvention::Strict
    }
}

/// Estimator options for [`delay_stats`] and the empirical distributions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Fraction of leading server steps discarded before measuring.
    /// Stationary estimates default to 0.1; transient-inclusive protocols
    /// (averaging over every step from a fixed start) use 0.
    pub burn_in_frac: f64,
    /// Delay counting convention.
    pub convention: DelayConvention,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            burn_in_frac: 0.1,
            convention: DelayConvention::Strict,
        }
    }
}

impl StatsOptions {
    /// Options measuring from step 0 with the given convention.
    pub fn transient_inclusive(convention: DelayConvention) -> Self {
        StatsOptions {
            burn_in_frac: 0.0,
            convention,
        }
    }
}

/// Delay and queue statistics for one trace.
///
/// Per-node means cover tasks dispatched at a server step inside the
/// measurement window and completed by the horizon; tasks from the initial
/// set have no dispatch step and are tallied separately, as are tasks still
/// in flight at the horizon (censored).
#[derive(Debug, Clone, Serialize)]
pub struct DelayStats {
    /// Per-node mean delay m_i in server steps.
    pub mean_delay: Vec<f64>,
    /// Per-node number of completed tasks behind the means.
    pub completed: Vec<u64>,
    /// Per-node integer-binned delay histograms.
    pub histograms: Vec<BTreeMap<u64, u64>>,
    /// Per-node holding-time-weighted mean queue lengths.
    pub mean_queue: Vec<f64>,
    /// Per-node holding-time fraction with at least one task present.
    pub busy_frac: Vec<f64>,
    /// Maximum observed delay.
    pub tau_max: u64,
    /// Average over server steps of the number of nodes holding at least
    /// one in-flight task.
    pub tau_c: f64,
    /// Per-node sums of delays.
    pub tau_sum: Vec<u64>,
    /// Completions per unit physical time over the measurement window.
    pub throughput: f64,
    /// Tasks dispatched in the window but still in flight at the horizon.
    pub censored: u64,
    /// Completions of initial-set tasks inside the window.
    pub initial_completions: u64,
}

impl DelayStats {
    /// Mean delay averaged over a contiguous node cluster.
    pub fn cluster_mean_delay(&self, nodes: std::ops::Range<usize>) -> f64 {
        let mut total = 0.0;
        let mut count = 0u64;
        for i in nodes {
            total += self.mean_delay[i] * self.completed[i] as f64;
            count += self.completed[i];
        }
        if count == 0 {
            f64::NAN
        } else {
            total / count as f64
        }
    }

    /// Mean queue length averaged over a contiguous node cluster.
    pub fn cluster_mean_queue(&self, nodes: std::ops::Range<usize>) -> f64 {
        let len = nodes.len();
        if len == 0 {
            return f64::NAN;
        }
        nodes.map(|i| self.mean_queue[i]).sum::<f64>() / len as f64
    }

    /// Writes per-node histograms as CSV `node,delay_steps,count`.
    pub fn write_histograms_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "node,delay_steps,count")?;
        for (node, hist) in self.histograms.iter().enumerate() {
            for (&delay, &count) in hist {
                writeln!(out, "{node},{delay},{count}")?;
            }
        }
        Ok(())
    }

    /// Merges replicate statistics by completion-weighted averaging of the
    /// means and summation of the counts. All replicates must agree on the
    /// node count.
    pub fn merge(runs: &[DelayStats]) -> Option<DelayStats> {
        let first = runs.first()?;
        let n = first.mean_delay.len();
        let mut merged = DelayStats {
            mean_delay: vec![0.0; n],
            completed: vec![0; n],
            histograms: vec![BTreeMap::new(); n],
            mean_queue: vec![0.0; n],
            busy_frac: vec![0.0; n],
            tau_max: 0,
            tau_c: 0.0,
            tau_sum: vec![0; n],
            throughput: 0.0,
            censored: 0,
            initial_completions: 0,
        };
        for run in runs {
            for i in 0..n {
                if run.completed[i] > 0 {
                    merged.mean_delay[i] += run.mean_delay[i] * run.completed[i] as f64;
                }
                merged.completed[i] += run.completed[i];
                merged.tau_sum[i] += run.tau_sum[i];
                for (&d, &c) in &run.histograms[i] {
                    *merged.histograms[i].entry(d).or_insert(0) += c;
                }
                merged.mean_queue[i] += run.mean_queue[i] / runs.len() as f64;
                merged.busy_frac[i] += run.busy_frac[i] / runs.len() as f64;
            }
            merged.tau_max = merged.tau_max.max(run.tau_max);
            merged.tau_c += run.tau_c / runs.len() as f64;
            merged.throughput += run.throughput / runs.len() as f64;
            merged.censored += run.censored;
            merged.initial_completions += run.initial_completions;
        }
        for i in 0..n {
            if merged.completed[i] > 0 {
                merged.mean_delay[i] /= merged.completed[i] as f64;
            }
        }
        Some(merged)
    }
}

fn burn_in_steps(trace_len: usize, frac: f64) -> usize {
    ((trace_len as f64) * frac).floor() as usize
}

/// Computes delay and queue statistics from a trace.
pub fn delay_stats(trace: &SimTrace, opts: StatsOptions) -> DelayStats {
    let n = trace.config.n();
    let steps = trace.len();
    let burn = burn_in_steps(steps, opts.burn_in_frac);
    let extra = match opts.convention {
        DelayConvention::Strict => -1i64,
        DelayConvention::Inclusive => 0,
    };

    let mut sum_delay = vec![0f64; n];
    let mut completed = vec![0u64; n];
    let mut histograms = vec![BTreeMap::new(); n];
    let mut tau_sum = vec![0u64; n];
    let mut tau_max = 0u64;
    let mut censored_completions = 0u64;
    let mut initial_completions = 0u64;

    for r in burn..steps {
        let dispatched = trace.i[r];
        if dispatched == sim::INITIAL_DISPATCH {
            initial_completions += 1;
            continue;
        }
        if (dispatched as usize) < burn {
            // Dispatched before the window opened; not part of the means.
            censored_completions += 1;
            continue;
        }
        let node = trace.j[r] as usize;
        let delay = (r as i64 - dispatched + extra).max(0) as u64;
        sum_delay[node] += delay as f64;
        completed[node] += 1;
        *histograms[node].entry(delay).or_insert(0) += 1;
        tau_sum[node] += delay;
        tau_max = tau_max.max(delay);
    }
    let _ = censored_completions;

    // Tasks dispatched inside the window: one per step from burn..steps-1;
    // censored = dispatched minus completed-with-dispatch-in-window.
    let dispatched_in_window = (steps - burn) as u64;
    let completed_in_window: u64 = completed.iter().sum();
    let censored = dispatched_in_window.saturating_sub(completed_in_window);

    // Holding-time-weighted queue means and the per-step busy-node count.
    let mut queue_time = vec![0f64; n];
    let mut busy_time = vec![0f64; n];
    let mut busy_steps = 0u64;
    let mut counted_steps = 0u64;
    let mut window_start_time = 0.0;
    {
        let mut x = trace.initial_queue.clone();
        let mut prev_t = 0.0;
        for k in 0..steps {
            // x currently holds the state over [prev_t, t_k).
            if k >= burn {
                if k == burn {
                    window_start_time = prev_t;
                }
                let dt = trace.t[k] - prev_t;
                for i in 0..n {
                    queue_time[i] += x[i] as f64 * dt;
                    if x[i] > 0 {
                        busy_time[i] += dt;
                    }
                }
            }
            x[trace.j[k] as usize] -= 1;
            x[trace.k_next[k] as usize] += 1;
            if k >= burn {
                busy_steps += x.iter().filter(|&&v| v > 0).count() as u64;
                counted_steps += 1;
            }
            prev_t = trace.t[k];
        }
    }
    let window_duration = trace.t[steps - 1] - window_start_time;
    let mean_queue = if window_duration > 0.0 {
        queue_time.iter().map(|&q| q / window_duration).collect()
    } else {
        vec![f64::NAN; n]
    };
    let busy_frac = if window_duration > 0.0 {
        busy_time.iter().map(|&b| b / window_duration).collect()
    } else {
        vec![f64::NAN; n]
    };
    let throughput = if window_duration > 0.0 {
        (steps - burn) as f64 / window_duration
    } else {
        f64::NAN
    };
    let tau_c = if counted_steps > 0 {
        busy_steps as f64 / counted_steps as f64
    } else {
        f64::NAN
    };

    DelayStats {
        mean_delay: sum_delay
            .iter()
            .zip(&completed)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
            .collect(),
        completed,
        histograms,
        mean_queue,
        busy_frac,
        tau_max,
        tau_c,
        tau_sum,
        throughput,
        censored,
        initial_completions,
    }
}

/// Estimates a per-node stationary delay profile by Monte-Carlo: `reps`
/// independent traces are merged, and when `cluster_sizes` partitions the
/// nodes into exchangeable groups the per-node means are pooled
/// (completion-weighted) within each group, which controls the noise of
/// rarely sampled nodes. Errors if any group records no completions.
pub fn monte_carlo_delay_profile(
    cfg: &NetworkConfig,
    horizon: usize,
    reps: usize,
    seed: u64,
    options: SimOptions,
    stats_options: StatsOptions,
    cluster_sizes: Option<&[usize]>,
) -> Result<DelayProfile> {
    if reps == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let runs: Vec<DelayStats> = (0..reps)
        .map(|rep| {
            let trace = sim::simulate_with(cfg, horizon, sim::derive_seed(seed, rep as u64), options)?;
            Ok(delay_stats(&trace, stats_options))
        })
        .collect::<Result<_>>()?;
    let merged = DelayStats::merge(&runs).expect("at least one replication");
    let n = cfg.n();
    let groups: Vec<usize> = match cluster_sizes {
        Some(sizes) => {
            if sizes.iter().sum::<usize>() != n {
                return Err(Error::invalid("cluster sizes must partition the nodes"));
            }
            sizes.to_vec()
        }
        None => vec![1; n],
    };
    let mut m = Vec::with_capacity(n);
    let mut start = 0usize;
    for &size in &groups {
        let pooled = merged.cluster_mean_delay(start..start + size);
        if !pooled.is_finite() {
            return Err(Error::invalid(format!(
                "no completed tasks for nodes {start}..{}; raise the horizon or replications",
                start + size
            )));
        }
        m.extend(std::iter::repeat(pooled).take(size));
        start += size;
    }
    DelayProfile::new(m, DelaySource::Simulated)
}

/// Transient mean-delay curve: for each dispatch step k, the Monte-Carlo
/// average (over replications) of the delay of the task dispatched at k,
/// conditioned on it being dispatched to `node`.
#[derive(Debug, Clone, Serialize)]
pub struct TransientCurve {
    /// Node the curve conditions on.
    pub node: usize,
    /// Mean delay at each dispatch step; NaN where no replication
    /// dispatched to the node or none of those tasks completed in time.
    pub mean: Vec<f64>,
    /// Number of replications contributing at each step.
    pub count: Vec<u64>,
}

impl TransientCurve {
    /// Writes the curve as CSV `k,mean_delay,count`, omitting no rows;
    /// missing steps carry an empty mean field.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "k,mean_delay,count")?;
        for k in 0..self.mean.len() {
            if self.count[k] == 0 {
                writeln!(out, "{k},,0")?;
            } else {
                writeln!(out, "{},{},{}", k, self.mean[k], self.count[k])?;
            }
        }
        Ok(())
    }

    /// Ordinary least-squares fit of mean vs k over `range`, returning
    /// (slope, slope standard error). Steps without data are skipped.
    pub fn slope_with_se(&self, range: std::ops::Range<usize>) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> = range
            .filter(|&k| k < self.mean.len() && self.count[k] > 0)
            .map(|k| (k as f64, self.mean[k]))
            .collect();
        let m = pts.len();
        if m < 3 {
            return None;
        }
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = pts
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let se = (ss_res / (m as f64 - 2.0) / sxx).sqrt();
        Some((slope, se))
    }
}

/// Estimates the transient delay curve for one node by averaging
/// replications with derived seeds. Uses the strict convention.
///
/// Each replication runs `sim_horizon ≥ horizon` server steps while the
/// curve covers dispatch steps below `horizon`; the slack lets tasks
/// dispatched near the end of the curve window complete, since censoring
/// them would bias late means downward.
pub fn transient_delay_curve(
    cfg: &NetworkConfig,
    horizon: usize,
    sim_horizon: usize,
    node: usize,
    replications: usize,
    seed: u64,
    options: SimOptions,
) -> Result<TransientCurve> {
    if replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if sim_horizon < horizon {
        return Err(Error::invalid(
            "simulation horizon must cover the curve window",
        ));
    }
    if node >= cfg.n() {
        return Err(Error::invalid(format!(
            "node {node} out of range for n={}",
            cfg.n()
        )));
    }
    let mut sum = vec![0f64; horizon];
    let mut count = vec![0u64; horizon];
    for rep in 0..replications {
        let trace =
            sim::simulate_with(cfg, sim_horizon, sim::derive_seed(seed, rep as u64), options)?;
        // delay_of[k] = delay of the task dispatched at step k.
        let mut delay_of: Vec<Option<u64>> = vec![None; horizon];
        for r in 0..sim_horizon {
            let d = trace.i[r];
            if d >= 0 && (d as usize) < horizon {
                delay_of[d as usize] = Some((r as i64 - d - 1) as u64);
            }
        }
        for k in 0..horizon {
            if trace.k_next[k] as usize == node {
                if let Some(delay) = delay_of[k] {
                    sum[k] += delay as f64;
                    count[k] += 1;
                }
            }
        }
    }
    let mean = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(TransientCurve { node, mean, count })
}

/// Empirical holding-time-weighted distribution over the states the
/// network occupies, for comparison against the exact product form.
pub fn empirical_state_distribution(
    trace: &SimTrace,
    opts: StatsOptions,
) -> Result<DistributionTable> {
    let c = trace.config.concurrency();
    check_tabulation_budget(trace.config.n(), c)?;
    let burn = burn_in_steps(trace.len(), opts.burn_in_frac);
    let mut weights: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut x = trace.initial_queue.clone();
    let mut prev_t = 0.0;
    for k in 0..trace.len() {
        if k >= burn {
            let dt = trace.t[k] - prev_t;
            *weights.entry(x.clone()).or_insert(0.0) += dt;
        }
        x[trace.j[k] as usize] -= 1;
        x[trace.k_next[k] as usize] += 1;
        prev_t = trace.t[k];
    }
    DistributionTable::from_weights(weights, c)
}

/// Empirical distribution of the network state seen by arriving tasks: at
/// each dispatch instant, the queue vector excluding the task being
/// dispatched (population C−1). Converges to the arrival distribution.
pub fn empirical_arrival_distribution(
    trace: &SimTrace,
    opts: StatsOptions,
) -> Result<DistributionTable> {
    let c = trace.config.concurrency();
    check_tabulation_budget(trace.config.n(), c - 1)?;
    let burn = burn_in_steps(trace.len(), opts.burn_in_frac);
    let mut weights: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut x = trace.initial_queue.clone();
    for k in 0..trace.len() {
        x[trace.j[k] as usize] -= 1;
        // x now excludes both the completed task and the new dispatch:
        // exactly what the arriving task observes.
        if k >= burn {
            *weights.entry(x.clone()).or_insert(0.0) += 1.0;
        }
        x[trace.k_next[k] as usize] += 1;
    }
    DistributionTable::from_weights(weights, c - 1)
}

fn check_tabulation_budget(n: usize, population: u32) -> Result<()> {
    let budget = network::enum_budget();
    let count = network::state_count(n, population).unwrap_or(u128::MAX);
    if count > budget as u128 {
        return Err(Error::CapacityExceeded {
            states: count,
            budget,
        });
    }
    Ok(())
}
