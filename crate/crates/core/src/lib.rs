//! Simulator and analysis toolkit for asynchronous federated learning on
//! closed queueing networks.
//!
//! A central server keeps a fixed number C of gradient tasks in flight
//! across n heterogeneous clients: whenever a client completes a task the
//! server applies the (stale) gradient, samples a client from a vector p,
//! and dispatches a fresh task there. The queueing side of this system is
//! a closed Jackson network, and everything the crate computes flows from
//! that observation:
//!
//! - [`network`]: exact product-form stationary analysis (normalization
//!   constants by convolution, queue lengths, throughput, arrival law).
//! - [`sim`]: a deterministic discrete-event simulator producing
//!   completion traces.
//! - [`stats`]: delay and queue statistics extracted from traces,
//!   including transient delay curves and empirical distributions.
//! - [`bound`]: the convergence bound G(p, η), step-size caps and tuning,
//!   sampling-vector optimization, baselines, and the Erlang-CDF ratio Γ.
//! - [`saturation`]: closed-form delay bounds in the large-population
//!   regime for two- and three-cluster networks.
//! - [`fl`]: training runtimes that replay traces against concrete
//!   objectives, with virtual-iterate invariant checks.
//! - [`config`] / [`report`]: experiment configuration and data-only
//!   artifact output for the command-line driver.

pub mod bound;
pub mod config;
pub mod error;
pub mod fl;
pub mod network;
pub mod report;
pub mod saturation;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
