//! Experiment configuration: one TOML document per run.
//!
//! Every command of the CLI reads the sections it needs from a single
//! file; unrecognized keys are rejected so typos surface as errors rather
//! than silently ignored settings. All randomness flows from the explicit
//! `seed`/`seeds` values here, never from the wall clock.

use serde::Deserialize;
use std::path::Path;

use crate::bound::BoundParams;
use crate::error::{Error, Result};
use crate::fl::{HeterogeneousQuadratic, Objective, SyntheticLogistic};
use crate::network::NetworkConfig;
use crate::sim::{InitialPlacement, ServiceLaw, SimOptions};
use crate::stats::{DelayConvention, StatsOptions};

/// Root of an experiment file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form label recorded in the manifest.
    pub kind: Option<String>,
    /// Master seed (default 0); replicate seeds derive from it unless
    /// `seeds` lists them explicitly.
    #[serde(default)]
    pub seed: u64,
    /// Explicit replicate seeds.
    pub seeds: Option<Vec<u64>>,
    /// Queueing network description.
    pub network: Option<NetworkSection>,
    /// Simulation horizon and estimator options.
    pub sim: Option<SimSection>,
    /// Convergence-bound constants.
    pub bound: Option<BoundSection>,
    /// Training objective.
    pub objective: Option<ObjectiveSection>,
    /// Training loop options.
    pub train: Option<TrainSection>,
    /// Sampling-grid options for the optimizers.
    pub grid: Option<GridSection>,
    /// Transient-curve options.
    pub transient: Option<TransientSection>,
}

impl ExperimentConfig {
    /// Parses a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses a file, returning the raw bytes as well so the
    /// manifest can record their digest.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Config("config file is not valid UTF-8".into()))?;
        Ok((Self::parse(text)?, bytes))
    }

    /// Replicate seeds: the explicit list, or the single master seed.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    /// The network section, or a config error naming it.
    pub fn require_network(&self) -> Result<&NetworkSection> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::Config("missing [network] section".into()))
    }

    /// The sim section, or a config error naming it.
    pub fn require_sim(&self) -> Result<&SimSection> {
        self.sim
            .as_ref()
            .ok_or_else(|| Error::Config("missing [sim] section".into()))
    }

    /// The bound section, or a config error naming it.
    pub fn require_bound(&self) -> Result<&BoundSection> {
        self.bound
            .as_ref()
            .ok_or_else(|| Error::Config("missing [bound] section".into()))
    }

    /// The objective section, or a config error naming it.
    pub fn require_objective(&self) -> Result<&ObjectiveSection> {
        self.objective
            .as_ref()
            .ok_or_else(|| Error::Config("missing [objective] section".into()))
    }

    /// The train section, or a config error naming it.
    pub fn require_train(&self) -> Result<&TrainSection> {
        self.train
            .as_ref()
            .ok_or_else(|| Error::Config("missing [train] section".into()))
    }

    /// The grid section, or a config error naming it.
    pub fn require_grid(&self) -> Result<&GridSection> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::Config("missing [grid] section".into()))
    }

    /// The transient section, or a config error naming it.
    pub fn require_transient(&self) -> Result<&TransientSection> {
        self.transient
            .as_ref()
            .ok_or_else(|| Error::Config("missing [transient] section".into()))
    }
}

/// Network description: either explicit per-node vectors or a list of
/// homogeneous clusters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Per-node service rates (mutually exclusive with `clusters`).
    pub mu: Option<Vec<f64>>,
    /// Per-node sampling probabilities; uniform when omitted.
    pub p: Option<Vec<f64>>,
    /// Tasks kept in flight.
    pub concurrency: u32,
    /// Homogeneous node groups, first cluster first.
    #[serde(default)]
    pub clusters: Vec<ClusterSection>,
}

/// One homogeneous node group.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    /// Number of nodes in the group.
    pub count: usize,
    /// Service rate shared by the group.
    pub rate: f64,
    /// Per-node sampling probability; uniform across all nodes if every
    /// cluster omits it.
    pub prob: Option<f64>,
}

impl NetworkSection {
    /// Builds and validates the network.
    pub fn build(&self) -> Result<NetworkConfig> {
        match (&self.mu, self.clusters.is_empty()) {
            (Some(mu), true) => match &self.p {
                Some(p) => NetworkConfig::new(mu.clone(), p.clone(), self.concurrency),
                None => NetworkConfig::uniform(mu.clone(), self.concurrency),
            },
            (None, false) => {
                let n: usize = self.clusters.iter().map(|c| c.count).sum();
                if n == 0 {
                    return Err(Error::Config("clusters must contain at least one node".into()));
                }
                let with_prob = self.clusters.iter().filter(|c| c.prob.is_some()).count();
                if with_prob != 0 && with_prob != self.clusters.len() {
                    return Err(Error::Config(
                        "either every cluster sets prob or none does".into(),
                    ));
                }
                let specs: Vec<(usize, f64, f64)> = self
                    .clusters
                    .iter()
                    .map(|c| (c.count, c.rate, c.prob.unwrap_or(1.0 / n as f64)))
                    .collect();
                NetworkConfig::clustered(&specs, self.concurrency)
            }
            _ => Err(Error::Config(
                "specify exactly one of network.mu or network.clusters".into(),
            )),
        }
    }

    /// Size of the first cluster when the shorthand is used.
    pub fn first_cluster_size(&self) -> Option<usize> {
        self.clusters.first().map(|c| c.count)
    }
}

/// Simulation and estimator options.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Number of server steps to simulate.
    pub horizon: usize,
    /// Service-time law.
    #[serde(default)]
    pub law: ServiceLaw,
    /// Initial task placement.
    #[serde(default)]
    pub placement: InitialPlacement,
    /// Burn-in fraction for stationary estimates (default 0.1; use 0 for
    /// transient-inclusive protocols).
    pub burn_in_frac: Option<f64>,
    /// Delay counting convention (default strict).
    pub convention: Option<DelayConvention>,
    /// Also write the full per-step trace CSV.
    #[serde(default)]
    pub write_trace: bool,
    /// Also write the per-step queue-length sidecar CSV.
    #[serde(default)]
    pub write_queues: bool,
}

impl SimSection {
    /// Simulator options.
    pub fn options(&self) -> SimOptions {
        SimOptions {
            law: self.law,
            placement: self.placement,
        }
    }

    /// Estimator options.
    pub fn stats_options(&self) -> Result<StatsOptions> {
        let defaults = StatsOptions::default();
        let burn_in_frac = self.burn_in_frac.unwrap_or(defaults.burn_in_frac);
        if !(0.0..1.0).contains(&burn_in_frac) {
            return Err(Error::Config("sim.burn_in_frac must lie in [0, 1)".into()));
        }
        Ok(StatsOptions {
            burn_in_frac,
            convention: self.convention.unwrap_or(defaults.convention),
        })
    }
}

/// Convergence-bound constants; concurrency comes from the network.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    /// Smoothness constant L.
    pub l: f64,
    /// Gradient-dissimilarity bound G².
    pub g2: f64,
    /// Gradient-noise variance σ².
    #[serde(default)]
    pub sigma2: f64,
    /// Strong-growth coefficient ρ².
    #[serde(default)]
    pub rho2: f64,
    /// Initial gap A.
    pub a: f64,
    /// Server-step horizon T.
    pub t: f64,
}

impl BoundSection {
    /// Assembles validated parameters.
    pub fn params(&self, concurrency: u32) -> Result<BoundParams> {
        let params = BoundParams {
            l: self.l,
            g2: self.g2,
            sigma2: self.sigma2,
            rho2: self.rho2,
            a: self.a,
            t: self.t,
            c: concurrency,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Training objective description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// `quadratic` or `logistic`.
    pub kind: String,
    /// Parameter dimension.
    pub dim: usize,
    /// Target spread for the quadratic family (default 1).
    pub spread: Option<f64>,
    /// Samples per client shard for the logistic family (default 64).
    pub samples: Option<usize>,
    /// Ridge coefficient for the logistic family (default 0.01).
    pub reg: Option<f64>,
}

impl ObjectiveSection {
    /// Instantiates the objective for `n` clients using `seed` for any
    /// synthetic data generation.
    pub fn build(&self, n: usize, seed: u64) -> Result<Box<dyn Objective>> {
        match self.kind.as_str() {
            "quadratic" => Ok(Box::new(HeterogeneousQuadratic::random(
                n,
                self.dim,
                self.spread.unwrap_or(1.0),
                seed,
            )?)),
            "logistic" => Ok(Box::new(SyntheticLogistic::generate(
                n,
                self.samples.unwrap_or(64),
                self.dim,
                self.reg.unwrap_or(0.01),
                seed,
            )?)),
            other => Err(Error::Config(format!(
                "objective.kind must be quadratic or logistic, got {other:?}"
            ))),
        }
    }
}

/// Training loop options.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Step size η.
    pub eta: f64,
    /// Gradient-noise scale σ.
    #[serde(default)]
    pub sigma: f64,
    /// Metric recording stride (default 1).
    pub record_every: Option<usize>,
    /// Maintain virtual-iterate diagnostics.
    #[serde(default)]
    pub track_virtual: bool,
    /// Buffer size for the buffered baseline (default 1).
    pub buffer: Option<usize>,
    /// Rounds for the synchronous baseline.
    pub rounds: Option<usize>,
    /// Participants per round for the synchronous baseline.
    pub participants: Option<usize>,
    /// Local steps per participant for the synchronous baseline.
    pub local_steps: Option<usize>,
}

impl TrainSection {
    /// Replay options.
    pub fn options(&self) -> crate::fl::TrainOptions {
        crate::fl::TrainOptions {
            eta: self.eta,
            sigma: self.sigma,
            record_every: self.record_every.unwrap_or(1),
            track_virtual: self.track_virtual,
            fault: None,
        }
    }
}

/// Sampling-grid options for the (p, η) optimizers.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Size of the fast group whose probability is swept.
    pub n_fast: usize,
    /// Number of grid points (default 50).
    pub points: Option<usize>,
    /// Grid lower end (default uniform/20).
    pub p_min: Option<f64>,
    /// Grid upper end (default just below the feasibility limit).
    pub p_max: Option<f64>,
    /// Fast-group rates to sweep (optimize/physical-time commands).
    pub mu_f_values: Option<Vec<f64>>,
    /// Slow-group rate (default 1).
    pub mu_s: Option<f64>,
    /// Physical time budget U.
    pub time_budget: Option<f64>,
    /// Monte-Carlo delay-oracle horizon in server steps.
    pub oracle_horizon: Option<usize>,
    /// Monte-Carlo delay-oracle replications per grid point.
    pub oracle_reps: Option<usize>,
    /// Points for step-size sweeps (`bound` command, default 50).
    pub eta_points: Option<usize>,
}

/// Transient delay-curve options.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientSection {
    /// Node whose conditional delay curve is estimated.
    pub node: usize,
    /// Monte-Carlo replications.
    pub reps: usize,
    /// Dispatch steps to cover.
    pub horizon: usize,
    /// First step of the flatness fit window (default horizon/3).
    pub fit_from: Option<usize>,
}
