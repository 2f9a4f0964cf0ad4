//! C ABI for the queueing-network toolkit: opaque handles over the
//! network and trace types, status-code error reporting, and flat
//! argument lists for the analytics entry points.
//!
//! Every function is panic-safe (unwinds are caught and reported as
//! [`FqStatus::Panic`]), validates pointers before use, and leaves a
//! human-readable failure description retrievable per thread via
//! [`fq_last_error`]. Handles own their data: whatever `fq_*_new` or
//! `fq_simulate` returns must be released with the matching `fq_*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use fedqueue::bound::{self, BoundParams, DelayProfile, DelaySource};
use fedqueue::network::{self, NetworkConfig};
use fedqueue::saturation;
use fedqueue::sim::{self, ServiceLaw, SimOptions, SimTrace};
use fedqueue::stats::{self, DelayConvention, StatsOptions};

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqStatus {
    /// Success.
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Arguments failed validation; see `fq_last_error`.
    InvalidArgument = 2,
    /// A panic was caught at the boundary; see `fq_last_error`.
    Panic = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Description of the most recent failure on this thread, as a pointer
/// valid until the next failing call on the same thread. Never null;
/// empty when no failure has occurred.
#[no_mangle]
pub extern "C" fn fq_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Runs a fallible body, translating panics and library errors into
/// status codes and recording their messages.
fn guard(body: impl FnOnce() -> Result<(), FqStatus> + std::panic::UnwindSafe) -> FqStatus {
    match catch_unwind(body) {
        Ok(Ok(())) => FqStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&message);
            FqStatus::Panic
        }
    }
}

fn fail(message: impl std::fmt::Display) -> FqStatus {
    set_error(&message.to_string());
    FqStatus::InvalidArgument
}

fn null() -> FqStatus {
    set_error("null pointer argument");
    FqStatus::NullPointer
}

/// Closed network handle.
pub struct FqNetwork(NetworkConfig);

/// Completion trace handle.
pub struct FqTrace(SimTrace);

/// Service-time law selector for `fq_simulate`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqServiceLaw {
    /// Exponential service at each node's rate.
    Exponential = 0,
    /// Deterministic service of length 1/rate.
    Deterministic = 1,
}

/// Delay-counting convention selector for `fq_delay_stats`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FqConvention {
    /// Steps strictly between dispatch and completion.
    Strict = 0,
    /// Strict count plus the completing step itself.
    Inclusive = 1,
}

/// Closed-form saturated-regime references for a two-cluster network.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FqTwoClusterBounds {
    /// Fast-cluster stationary mean delay.
    pub fast: f64,
    /// Slow-cluster stationary mean delay.
    pub slow: f64,
    /// Fast-cluster midpoint estimate.
    pub fast_mid: f64,
    /// Slow-cluster midpoint estimate.
    pub slow_mid: f64,
    /// Fast-cluster simplified (leading-order) estimate.
    pub fast_simplified: f64,
    /// Slow-cluster simplified (leading-order) estimate.
    pub slow_simplified: f64,
    /// Saturated total completion rate.
    pub lambda: f64,
    /// Erlang CDF ratio entering the fast-cluster forms.
    pub gamma: f64,
}

/// Builds a closed network from `n` service rates and an optional
/// sampling vector (null means uniform). On success writes an owned
/// handle to `out`.
///
/// # Safety
/// `mu` must point to `n` doubles, `p` to `n` doubles or be null, and
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_network_new(
    mu: *const f64,
    p: *const f64,
    n: usize,
    concurrency: u32,
    out: *mut *mut FqNetwork,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if mu.is_null() || out.is_null() {
            return Err(null());
        }
        if n == 0 {
            return Err(fail("need at least one node"));
        }
        let mu = unsafe { slice::from_raw_parts(mu, n) }.to_vec();
        let config = if p.is_null() {
            NetworkConfig::uniform(mu, concurrency)
        } else {
            let p = unsafe { slice::from_raw_parts(p, n) }.to_vec();
            NetworkConfig::new(mu, p, concurrency)
        };
        match config {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(FqNetwork(cfg))) };
                Ok(())
            }
            Err(e) => Err(fail(e)),
        }
    }))
}

/// Releases a network handle. Null is a no-op.
///
/// # Safety
/// `net` must be a handle from `fq_network_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_network_free(net: *mut FqNetwork) {
    if !net.is_null() {
        drop(unsafe { Box::from_raw(net) });
    }
}

/// Number of nodes in the network; zero when the handle is null.
///
/// # Safety
/// `net` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fq_network_n(net: *const FqNetwork) -> usize {
    if net.is_null() {
        0
    } else {
        unsafe { &*net }.0.n()
    }
}

/// Stationary expected queue lengths at the network's population,
/// written into `out` (length `n`).
///
/// # Safety
/// `net` must be a live handle; `out` must hold `fq_network_n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fq_network_queue_lengths(
    net: *const FqNetwork,
    out: *mut f64,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if net.is_null() || out.is_null() {
            return Err(null());
        }
        let cfg = &unsafe { &*net }.0;
        let mean = network::expected_queue_lengths(cfg, cfg.concurrency());
        unsafe { slice::from_raw_parts_mut(out, mean.len()) }.copy_from_slice(&mean);
        Ok(())
    }))
}

/// Stationary per-node busy probabilities, written into `out`
/// (length `n`).
///
/// # Safety
/// `net` must be a live handle; `out` must hold `fq_network_n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fq_network_busy_probabilities(
    net: *const FqNetwork,
    out: *mut f64,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if net.is_null() || out.is_null() {
            return Err(null());
        }
        let cfg = &unsafe { &*net }.0;
        let busy = network::busy_probabilities(cfg, cfg.concurrency());
        unsafe { slice::from_raw_parts_mut(out, busy.len()) }.copy_from_slice(&busy);
        Ok(())
    }))
}

/// Stationary total completion rate.
///
/// # Safety
/// `net` must be a live handle; `out` must be a valid destination.
#[no_mangle]
pub unsafe extern "C" fn fq_network_throughput(net: *const FqNetwork, out: *mut f64) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if net.is_null() || out.is_null() {
            return Err(null());
        }
        unsafe { *out = network::throughput(&(*net).0) };
        Ok(())
    }))
}

/// Simulates `horizon` completions and writes an owned trace handle to
/// `out`.
///
/// # Safety
/// `net` must be a live handle and `out` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_simulate(
    net: *const FqNetwork,
    horizon: u64,
    seed: u64,
    law: FqServiceLaw,
    out: *mut *mut FqTrace,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if net.is_null() || out.is_null() {
            return Err(null());
        }
        let law = match law {
            FqServiceLaw::Exponential => ServiceLaw::Exponential,
            FqServiceLaw::Deterministic => ServiceLaw::Deterministic,
        };
        let options = SimOptions {
            law,
            ..SimOptions::default()
        };
        match sim::simulate_with(&unsafe { &*net }.0, horizon as usize, seed, options) {
            Ok(trace) => {
                unsafe { *out = Box::into_raw(Box::new(FqTrace(trace))) };
                Ok(())
            }
            Err(e) => Err(fail(e)),
        }
    }))
}

/// Releases a trace handle. Null is a no-op.
///
/// # Safety
/// `trace` must be a handle from `fq_simulate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_free(trace: *mut FqTrace) {
    if !trace.is_null() {
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Number of completions recorded in the trace; zero on null.
///
/// # Safety
/// `trace` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fq_trace_len(trace: *const FqTrace) -> u64 {
    if trace.is_null() {
        0
    } else {
        unsafe { &*trace }.0.len() as u64
    }
}

/// Delay and queue statistics of a trace: per-node mean delays and
/// holding-time-weighted mean queue lengths (arrays of length `n`), plus
/// the completion rate over the measurement window. Any output pointer
/// may be null to skip that figure.
///
/// # Safety
/// `trace` must be a live handle; non-null outputs must hold `n` doubles
/// (`mean_delay`, `mean_queue`) or one double (`throughput`).
#[no_mangle]
pub unsafe extern "C" fn fq_delay_stats(
    trace: *const FqTrace,
    burn_in_frac: f64,
    convention: FqConvention,
    mean_delay: *mut f64,
    mean_queue: *mut f64,
    throughput: *mut f64,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if trace.is_null() {
            return Err(null());
        }
        if !(0.0..1.0).contains(&burn_in_frac) {
            return Err(fail("burn_in_frac must lie in [0, 1)"));
        }
        let opts = StatsOptions {
            burn_in_frac,
            convention: match convention {
                FqConvention::Strict => DelayConvention::Strict,
                FqConvention::Inclusive => DelayConvention::Inclusive,
            },
        };
        let run = stats::delay_stats(&unsafe { &*trace }.0, opts);
        let n = run.mean_delay.len();
        if !mean_delay.is_null() {
            unsafe { slice::from_raw_parts_mut(mean_delay, n) }.copy_from_slice(&run.mean_delay);
        }
        if !mean_queue.is_null() {
            unsafe { slice::from_raw_parts_mut(mean_queue, n) }.copy_from_slice(&run.mean_queue);
        }
        if !throughput.is_null() {
            unsafe { *throughput = run.throughput };
        }
        Ok(())
    }))
}

/// Erlang CDF ratio Γ governing fast-cluster limiting queue lengths.
///
/// # Safety
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_gamma_ratio(n_fast: u32, c: f64, out: *mut f64) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(null());
        }
        match bound::gamma_ratio(n_fast, c) {
            Ok(g) => {
                unsafe { *out = g };
                Ok(())
            }
            Err(e) => Err(fail(e)),
        }
    }))
}

/// Closed-form saturated delay references for a two-cluster network with
/// `n_fast` nodes at rate `mu_f` and `n − n_fast` at rate `mu_s`.
///
/// # Safety
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn fq_two_cluster_bounds(
    n: usize,
    n_fast: usize,
    mu_f: f64,
    mu_s: f64,
    concurrency: u32,
    out: *mut FqTwoClusterBounds,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if out.is_null() {
            return Err(null());
        }
        match saturation::two_cluster_delay_bounds(n, n_fast, mu_f, mu_s, concurrency) {
            Ok(b) => {
                unsafe {
                    *out = FqTwoClusterBounds {
                        fast: b.fast,
                        slow: b.slow,
                        fast_mid: b.fast_mid,
                        slow_mid: b.slow_mid,
                        fast_simplified: b.fast_simplified,
                        slow_simplified: b.slow_simplified,
                        lambda: b.lambda,
                        gamma: b.gamma,
                    }
                };
                Ok(())
            }
            Err(e) => Err(fail(e)),
        }
    }))
}

/// Step size minimizing the convergence bound, clamped to its stability
/// cap, for sampling vector `p` and stationary delay profile `m` (both
/// length `n`).
///
/// # Safety
/// `p` and `m` must point to `n` doubles; `out` must be a valid
/// destination pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fq_optimal_step_size(
    l: f64,
    g2: f64,
    sigma2: f64,
    rho2: f64,
    a: f64,
    t: f64,
    concurrency: u32,
    p: *const f64,
    m: *const f64,
    n: usize,
    out: *mut f64,
) -> FqStatus {
    guard(AssertUnwindSafe(|| {
        if p.is_null() || m.is_null() || out.is_null() {
            return Err(null());
        }
        if n == 0 {
            return Err(fail("need at least one node"));
        }
        let params = BoundParams {
            l,
            g2,
            sigma2,
            rho2,
            a,
            t,
            c: concurrency,
        };
        let p = unsafe { slice::from_raw_parts(p, n) };
        let m = unsafe { slice::from_raw_parts(m, n) }.to_vec();
        let profile = match DelayProfile::new(m, DelaySource::Simulated) {
            Ok(profile) => profile,
            Err(e) => return Err(fail(e)),
        };
        match bound::optimal_step_size(&params, p, &profile) {
            Ok(eta) => {
                unsafe { *out = eta };
                Ok(())
            }
            Err(e) => Err(fail(e)),
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn network_round_trip_and_stats() {
        let mu = [2.0, 1.0];
        let mut net: *mut FqNetwork = ptr::null_mut();
        let status = unsafe { fq_network_new(mu.as_ptr(), ptr::null(), 2, 3, &mut net) };
        assert_eq!(status, FqStatus::Ok);
        assert_eq!(unsafe { fq_network_n(net) }, 2);

        let mut queues = [0.0; 2];
        assert_eq!(
            unsafe { fq_network_queue_lengths(net, queues.as_mut_ptr()) },
            FqStatus::Ok
        );
        assert!((queues[0] + queues[1] - 3.0).abs() < 1e-9);

        let mut lambda = 0.0;
        assert_eq!(
            unsafe { fq_network_throughput(net, &mut lambda) },
            FqStatus::Ok
        );
        assert!(lambda > 0.0);

        let mut trace: *mut FqTrace = ptr::null_mut();
        let status =
            unsafe { fq_simulate(net, 5000, 7, FqServiceLaw::Exponential, &mut trace) };
        assert_eq!(status, FqStatus::Ok);
        assert_eq!(unsafe { fq_trace_len(trace) }, 5000);

        let mut delays = [0.0; 2];
        let mut through = 0.0;
        let status = unsafe {
            fq_delay_stats(
                trace,
                0.1,
                FqConvention::Inclusive,
                delays.as_mut_ptr(),
                ptr::null_mut(),
                &mut through,
            )
        };
        assert_eq!(status, FqStatus::Ok);
        assert!(delays.iter().all(|&d| d >= 1.0));
        // Simulated completion rate sits near the product-form value.
        assert!((through - lambda).abs() / lambda < 0.1);

        unsafe {
            fq_trace_free(trace);
            fq_network_free(net);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        let mut net: *mut FqNetwork = ptr::null_mut();
        // Probabilities that do not sum to one.
        let mu = [1.0, 1.0];
        let p = [0.9, 0.9];
        let status = unsafe { fq_network_new(mu.as_ptr(), p.as_ptr(), 2, 1, &mut net) };
        assert_eq!(status, FqStatus::InvalidArgument);
        let msg = unsafe { std::ffi::CStr::from_ptr(fq_last_error()) };
        assert!(!msg.to_bytes().is_empty());

        assert_eq!(
            unsafe { fq_network_new(ptr::null(), ptr::null(), 2, 1, &mut net) },
            FqStatus::NullPointer
        );
        let mut out = 0.0;
        assert_eq!(
            unsafe { fq_gamma_ratio(0, 1.0, &mut out) },
            FqStatus::InvalidArgument
        );
        assert_eq!(
            unsafe { fq_gamma_ratio(3, -1.0, &mut out) },
            FqStatus::InvalidArgument
        );
        // Null handles are rejected, not dereferenced.
        assert_eq!(
            unsafe { fq_network_throughput(ptr::null(), &mut out) },
            FqStatus::NullPointer
        );
        assert_eq!(unsafe { fq_trace_len(ptr::null()) }, 0);
    }

    #[test]
    fn analytics_match_the_library() {
        let mut gamma = 0.0;
        assert_eq!(unsafe { fq_gamma_ratio(1, 1.0, &mut gamma) }, FqStatus::Ok);
        assert!((gamma - bound::gamma_ratio(1, 1.0).unwrap()).abs() < 1e-15);

        let mut bounds = FqTwoClusterBounds {
            fast: 0.0,
            slow: 0.0,
            fast_mid: 0.0,
            slow_mid: 0.0,
            fast_simplified: 0.0,
            slow_simplified: 0.0,
            lambda: 0.0,
            gamma: 0.0,
        };
        let status = unsafe { fq_two_cluster_bounds(10, 5, 1.2, 1.0, 1000, &mut bounds) };
        assert_eq!(status, FqStatus::Ok);
        let reference = saturation::two_cluster_delay_bounds(10, 5, 1.2, 1.0, 1000).unwrap();
        assert_eq!(bounds.fast, reference.fast);
        assert_eq!(bounds.slow, reference.slow);
        assert_eq!(bounds.lambda, reference.lambda);

        let p = [0.5, 0.5];
        let m = [1.0, 1.0];
        let mut eta = 0.0;
        let status = unsafe {
            fq_optimal_step_size(
                1.0,
                0.5,
                0.0,
                0.0,
                0.18,
                1.0,
                1,
                p.as_ptr(),
                m.as_ptr(),
                2,
                &mut eta,
            )
        };
        assert_eq!(status, FqStatus::Ok);
        assert!(eta > 0.0);
    }
}
