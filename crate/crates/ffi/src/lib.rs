//! C ABI surface over csnn-core: opaque handles, integer status codes, and
//! a thread-local last-error message.
//!
//! Every entry point catches panics, never unwinds across the boundary, and
//! returns `CsnnStatus`. Pointer arguments must be valid for the duration of
//! the call; handles are owned by the caller and released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use csnn_core::plasticity::{
    combined_delta, CombinedRuleParams, PowerLawParams, PstdpParams,
};
use csnn_core::sim::{lif_step, LifParams, LifState, SimClock};
use csnn_core::snapshot::NetworkSnapshot;
use csnn_core::topology::{count_trainable_params, NetworkSpec};
use csnn_core::training::Network;
use csnn_core::CsnnError;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsnnStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Snapshot = 5,
    NullArg = 6,
    InvalidUtf8 = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &CsnnError) -> CsnnStatus {
    match err.exit_code() {
        2 => CsnnStatus::Config,
        3 => CsnnStatus::Data,
        4 => CsnnStatus::Numeric,
        5 => CsnnStatus::Snapshot,
        _ => CsnnStatus::Io,
    }
}

fn fail(err: CsnnError) -> CsnnStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run `body` with panic isolation; a panic becomes `CsnnStatus::Panic`.
fn guarded(body: impl FnOnce() -> CsnnStatus) -> CsnnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in csnn".to_string());
            set_error(&msg);
            CsnnStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn take_str<'a>(ptr: *const c_char) -> Result<&'a str, CsnnStatus> {
    if ptr.is_null() {
        set_error("string argument is null");
        return Err(CsnnStatus::NullArg);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CsnnStatus::InvalidUtf8
    })
}

/// # Safety
/// `ptr` must point to `len` readable elements (or be non-null with len 0).
unsafe fn take_slice<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], CsnnStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        set_error("array argument is null");
        return Err(CsnnStatus::NullArg);
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

macro_rules! non_null {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            set_error(concat!($what, " is null"));
            return CsnnStatus::NullArg;
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn csnn_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Combined learning rule constants. Field meanings match the simulator's
/// native parameters one for one.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsnnRuleParams {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
    pub lambda: f64,
    pub tau_ms: f64,
    pub theta_offset: f64,
    pub w_max: f64,
    pub weight_exp: f64,
    pub printed_exponent: bool,
    pub w_min: f64,
}

impl CsnnRuleParams {
    fn to_native(self) -> CombinedRuleParams {
        CombinedRuleParams {
            pstdp: PstdpParams {
                mu_plus: self.mu_plus,
                mu_minus: self.mu_minus,
                tau_plus_ms: self.tau_plus_ms,
                tau_minus_ms: self.tau_minus_ms,
            },
            powerlaw: PowerLawParams {
                lambda: self.lambda,
                tau_ms: self.tau_ms,
                theta_offset: self.theta_offset,
                w_max: self.w_max,
                weight_exp: self.weight_exp,
                printed_exponent: self.printed_exponent,
            },
            w_min: self.w_min,
        }
    }

    fn from_native(p: &CombinedRuleParams) -> Self {
        CsnnRuleParams {
            mu_plus: p.pstdp.mu_plus,
            mu_minus: p.pstdp.mu_minus,
            tau_plus_ms: p.pstdp.tau_plus_ms,
            tau_minus_ms: p.pstdp.tau_minus_ms,
            lambda: p.powerlaw.lambda,
            tau_ms: p.powerlaw.tau_ms,
            theta_offset: p.powerlaw.theta_offset,
            w_max: p.powerlaw.w_max,
            weight_exp: p.powerlaw.weight_exp,
            printed_exponent: p.powerlaw.printed_exponent,
            w_min: p.w_min,
        }
    }
}

/// Fill `out` with the simulator's default rule constants.
#[no_mangle]
pub unsafe extern "C" fn csnn_rule_params_default(out: *mut CsnnRuleParams) -> CsnnStatus {
    guarded(|| {
        non_null!(out, "out");
        *out = CsnnRuleParams::from_native(&CombinedRuleParams::default());
        CsnnStatus::Ok
    })
}

/// Weight change of the combined rule for one spike pairing. `w` must lie
/// in `[0, w_max]`; times are in milliseconds.
#[no_mangle]
pub unsafe extern "C" fn csnn_combined_delta(
    t_pre_ms: f64,
    t_post_ms: f64,
    w: f64,
    params: *const CsnnRuleParams,
    out: *mut f64,
) -> CsnnStatus {
    guarded(|| {
        non_null!(params, "params");
        non_null!(out, "out");
        let rule = (*params).to_native();
        if let Err(e) = rule.validate() {
            return fail(e);
        }
        if !(0.0..=rule.powerlaw.w_max).contains(&w) {
            return fail(CsnnError::config(format!(
                "weight {w} outside [0, {}]",
                rule.powerlaw.w_max
            )));
        }
        if !(t_pre_ms.is_finite() && t_post_ms.is_finite()) {
            return fail(CsnnError::config("spike times must be finite"));
        }
        *out = combined_delta(t_pre_ms, t_post_ms, w, &rule);
        CsnnStatus::Ok
    })
}

/// LIF neuron constants; `dt_ms` lives on the simulator handle instead.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsnnLifParams {
    pub tau_mem_ms: f64,
    pub mu_leak: f64,
    pub v_thresh: f64,
    pub v_reset: f64,
    pub refractory_ms: f64,
}

/// Fill `out` with the simulator's default neuron constants.
#[no_mangle]
pub unsafe extern "C" fn csnn_lif_params_default(out: *mut CsnnLifParams) -> CsnnStatus {
    guarded(|| {
        non_null!(out, "out");
        let p = LifParams::default();
        *out = CsnnLifParams {
            tau_mem_ms: p.tau_mem_ms,
            mu_leak: p.mu_leak,
            v_thresh: p.v_thresh,
            v_reset: p.v_reset,
            refractory_ms: p.refractory_ms,
        };
        CsnnStatus::Ok
    })
}

/// Single LIF neuron stepped on a fixed grid. Opaque.
pub struct CsnnLifSim {
    params: LifParams,
    state: LifState,
    clock: SimClock,
}

/// Create a single-neuron simulator. Fails on invalid constants.
#[no_mangle]
pub unsafe extern "C" fn csnn_lif_sim_new(
    params: *const CsnnLifParams,
    dt_ms: f64,
    out: *mut *mut CsnnLifSim,
) -> CsnnStatus {
    guarded(|| {
        non_null!(params, "params");
        non_null!(out, "out");
        let p = *params;
        let native = LifParams {
            tau_mem_ms: p.tau_mem_ms,
            mu_leak: p.mu_leak,
            v_thresh: p.v_thresh,
            v_reset: p.v_reset,
            refractory_ms: p.refractory_ms,
        };
        if let Err(e) = native.validate(dt_ms) {
            return fail(e);
        }
        let clock = match SimClock::new(dt_ms, dt_ms) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let sim = Box::new(CsnnLifSim {
            params: native,
            state: LifState::rest(&native),
            clock,
        });
        *out = Box::into_raw(sim);
        CsnnStatus::Ok
    })
}

/// Advance the neuron one step with the given synaptic drive. Writes whether
/// it fired and the post-step membrane potential.
#[no_mangle]
pub unsafe extern "C" fn csnn_lif_sim_step(
    sim: *mut CsnnLifSim,
    drive: f64,
    out_fired: *mut bool,
    out_v_mem: *mut f64,
) -> CsnnStatus {
    guarded(|| {
        non_null!(sim, "sim");
        non_null!(out_fired, "out_fired");
        non_null!(out_v_mem, "out_v_mem");
        let sim = &mut *sim;
        match lif_step(&mut sim.state, &sim.params, drive, &sim.clock) {
            Ok(fired) => {
                sim.clock.advance();
                *out_fired = fired;
                *out_v_mem = sim.state.v_mem;
                CsnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a neuron simulator. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn csnn_lif_sim_free(sim: *mut CsnnLifSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// A built network (weights plus neuron state). Opaque.
pub struct CsnnNetwork {
    net: Network,
}

unsafe fn build_spec(
    arch: *const c_char,
    input_h: u32,
    input_w: u32,
    kernels: *const u32,
    kernels_len: usize,
    kernel_sizes: *const u32,
    kernel_sizes_len: usize,
    pool_window_ms: f64,
    classes: u32,
) -> Result<NetworkSpec, CsnnStatus> {
    let arch = take_str(arch)?;
    let kernels: Vec<usize> =
        take_slice(kernels, kernels_len)?.iter().map(|&k| k as usize).collect();
    let sizes: Vec<usize> =
        take_slice(kernel_sizes, kernel_sizes_len)?.iter().map(|&k| k as usize).collect();
    NetworkSpec::preset(
        arch,
        input_h as usize,
        input_w as usize,
        &kernels,
        &sizes,
        pool_window_ms,
        classes as usize,
    )
    .map_err(|e| fail(e))
}

/// Build a network with seeded random weights and default neuron and rule
/// constants. `arch` is one of the preset names ("1C-1S-FC", "2C-1S-FC",
/// "2C-1S-2C-FC"); `kernels` and `kernel_sizes` give per-conv-layer counts
/// (one entry is broadcast to all conv layers).
#[no_mangle]
pub unsafe extern "C" fn csnn_network_build(
    arch: *const c_char,
    input_h: u32,
    input_w: u32,
    kernels: *const u32,
    kernels_len: usize,
    kernel_sizes: *const u32,
    kernel_sizes_len: usize,
    pool_window_ms: f64,
    classes: u32,
    seed: u64,
    out: *mut *mut CsnnNetwork,
) -> CsnnStatus {
    guarded(|| {
        non_null!(out, "out");
        let spec = match build_spec(
            arch,
            input_h,
            input_w,
            kernels,
            kernels_len,
            kernel_sizes,
            kernel_sizes_len,
            pool_window_ms,
            classes,
        ) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let rule = CombinedRuleParams::default();
        match Network::build(spec, seed, &rule, LifParams::default(), LifParams::default()) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CsnnNetwork { net }));
                CsnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of trainable weights in the network.
#[no_mangle]
pub unsafe extern "C" fn csnn_network_param_count(
    net: *const CsnnNetwork,
    out: *mut u64,
) -> CsnnStatus {
    guarded(|| {
        non_null!(net, "net");
        non_null!(out, "out");
        match count_trainable_params(&(*net).net.spec) {
            Ok(n) => {
                *out = n as u64;
                CsnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Seed the network was built with (or restored from).
#[no_mangle]
pub unsafe extern "C" fn csnn_network_seed(
    net: *const CsnnNetwork,
    out: *mut u64,
) -> CsnnStatus {
    guarded(|| {
        non_null!(net, "net");
        non_null!(out, "out");
        *out = (*net).net.seed;
        CsnnStatus::Ok
    })
}

/// Write the network's weights and adaptive thresholds to a snapshot file.
#[no_mangle]
pub unsafe extern "C" fn csnn_network_save(
    net: *const CsnnNetwork,
    path: *const c_char,
) -> CsnnStatus {
    guarded(|| {
        non_null!(net, "net");
        let path = match take_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let snap = match (*net).net.snapshot() {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match snap.save(Path::new(path)) {
            Ok(()) => CsnnStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Load a snapshot from disk into a new network. The topology arguments
/// must describe the same network the snapshot was taken from; a mismatch
/// returns `CSNN_STATUS_SNAPSHOT`.
#[no_mangle]
pub unsafe extern "C" fn csnn_network_load(
    path: *const c_char,
    arch: *const c_char,
    input_h: u32,
    input_w: u32,
    kernels: *const u32,
    kernels_len: usize,
    kernel_sizes: *const u32,
    kernel_sizes_len: usize,
    pool_window_ms: f64,
    classes: u32,
    out: *mut *mut CsnnNetwork,
) -> CsnnStatus {
    guarded(|| {
        non_null!(out, "out");
        let path = match take_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let spec = match build_spec(
            arch,
            input_h,
            input_w,
            kernels,
            kernels_len,
            kernel_sizes,
            kernel_sizes_len,
            pool_window_ms,
            classes,
        ) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let snap = match NetworkSnapshot::load(Path::new(path)) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match Network::from_snapshot(&snap, spec, LifParams::default(), LifParams::default()) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(CsnnNetwork { net }));
                CsnnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a network handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn csnn_network_free(net: *mut CsnnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}
