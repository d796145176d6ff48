//! Clock-driven leaky integrate-and-fire dynamics and spike containers.
//!
//! Discretization is explicit Euler on the leak equation: one step maps the
//! membrane potential v to v * (1 - dt * mu_leak / tau_mem) + weighted_input.
//! All event times live on the integer step grid; milliseconds are derived
//! as step * dt only at the edges (reports, rule evaluation).

use crate::error::{CsnnError, Result};

/// Discrete simulation clock for one pattern presentation.
#[derive(Debug, Clone)]
pub struct SimClock {
    dt_ms: f64,
    step: u32,
    steps_total: u32,
}

impl SimClock {
    /// `duration_ms` must be a positive integer multiple of `dt_ms`.
    pub fn new(dt_ms: f64, duration_ms: f64) -> Result<Self> {
        if !(dt_ms > 0.0) || !dt_ms.is_finite() {
            return Err(CsnnError::config(format!("dt must be positive, got {dt_ms}")));
        }
        if !(duration_ms > 0.0) || !duration_ms.is_finite() {
            return Err(CsnnError::config(format!(
                "pattern duration must be positive, got {duration_ms}"
            )));
        }
        let steps = (duration_ms / dt_ms).round();
        if (steps * dt_ms - duration_ms).abs() > 1e-9 * duration_ms.max(1.0) {
            return Err(CsnnError::config(format!(
                "duration {duration_ms} ms is not a multiple of dt {dt_ms} ms"
            )));
        }
        Ok(SimClock { dt_ms, step: 0, steps_total: steps as u32 })
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn steps_total(&self) -> u32 {
        self.steps_total
    }

    pub fn t_now_ms(&self) -> f64 {
        f64::from(self.step) * self.dt_ms
    }

    pub fn duration_ms(&self) -> f64 {
        f64::from(self.steps_total) * self.dt_ms
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Rewind to step 0 for the next presentation.
    pub fn reset(&mut self) {
        self.step = 0;
    }
}

/// One spike: flat neuron index within its layer plus the emission step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeEvent {
    pub neuron: u32,
    pub step: u32,
}

impl SpikeEvent {
    pub fn time_ms(&self, dt_ms: f64) -> f64 {
        f64::from(self.step) * dt_ms
    }
}

/// Emission steps of one source neuron, strictly increasing. The discrete
/// grid enforces at most one spike per step by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpikeTrain {
    steps: Vec<u32>,
}

impl SpikeTrain {
    pub fn new() -> Self {
        SpikeTrain { steps: Vec::new() }
    }

    pub fn from_steps(steps: Vec<u32>) -> Result<Self> {
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CsnnError::config("spike train steps must be strictly increasing"));
        }
        Ok(SpikeTrain { steps })
    }

    /// Append an emission; callers feed steps in simulation order.
    pub fn push(&mut self, step: u32) {
        debug_assert!(self.steps.last().is_none_or(|&l| l < step));
        self.steps.push(step);
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// Neuron constants. `mu_leak` scales the leak term; v_thresh is the base
/// firing threshold before any adaptive offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    pub tau_mem_ms: f64,
    pub mu_leak: f64,
    pub v_thresh: f64,
    pub v_reset: f64,
    pub refractory_ms: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau_mem_ms: 20.0,
            mu_leak: 1.0,
            v_thresh: 1.0,
            v_reset: 0.0,
            refractory_ms: 2.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self, dt_ms: f64) -> Result<()> {
        if !(self.tau_mem_ms > 0.0) {
            return Err(CsnnError::config("tau_mem must be positive"));
        }
        if !(self.mu_leak > 0.0) {
            return Err(CsnnError::config("mu_leak must be positive"));
        }
        if self.v_thresh <= self.v_reset {
            return Err(CsnnError::config("v_thresh must exceed v_reset"));
        }
        if self.refractory_ms < 0.0 {
            return Err(CsnnError::config("refractory must be nonnegative"));
        }
        if dt_ms * self.mu_leak / self.tau_mem_ms >= 1.0 {
            return Err(CsnnError::config(
                "dt * mu_leak / tau_mem must be below 1 for a stable Euler step",
            ));
        }
        Ok(())
    }

    pub fn decay_factor(&self, dt_ms: f64) -> f64 {
        1.0 - dt_ms * self.mu_leak / self.tau_mem_ms
    }

    pub fn refractory_steps(&self, dt_ms: f64) -> u32 {
        (self.refractory_ms / dt_ms).round() as u32
    }
}

/// Per-neuron dynamic state. `theta_adapt` is the homeostatic threshold
/// offset used by the final layer; it survives between-pattern resets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifState {
    pub v_mem: f64,
    pub theta_adapt: f64,
    pub last_spike_step: Option<u32>,
    pub refractory_until: u32,
}

impl LifState {
    pub fn rest(params: &LifParams) -> Self {
        LifState {
            v_mem: params.v_reset,
            theta_adapt: 0.0,
            last_spike_step: None,
            refractory_until: 0,
        }
    }
}

/// Result of integrating one step without committing a firing decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integration {
    /// Inside the refractory window: the membrane is held at v_reset.
    Refractory,
    /// Candidate potential after leak and input; not yet stored.
    Active(f64),
}

pub(crate) fn numeric_fault(what: &str, value: f64, clock: &SimClock) -> CsnnError {
    CsnnError::numeric(format!("{what} became non-finite ({value}) at t = {} ms", clock.t_now_ms()))
}

/// Leak-and-integrate for the current step. During the refractory window the
/// membrane does not integrate input and is pinned at v_reset.
pub fn integrate(
    state: &mut LifState,
    params: &LifParams,
    weighted_input: f64,
    clock: &SimClock,
) -> Result<Integration> {
    if !weighted_input.is_finite() {
        return Err(numeric_fault("synaptic drive", weighted_input, clock));
    }
    if clock.step() < state.refractory_until {
        state.v_mem = params.v_reset;
        return Ok(Integration::Refractory);
    }
    let v = state.v_mem * params.decay_factor(clock.dt_ms()) + weighted_input;
    if !v.is_finite() {
        return Err(numeric_fault("membrane potential", v, clock));
    }
    Ok(Integration::Active(v))
}

/// Record a fire at the current step: reset, stamp, open the refractory window.
pub fn commit_fire(state: &mut LifState, params: &LifParams, clock: &SimClock) {
    state.v_mem = params.v_reset;
    state.last_spike_step = Some(clock.step());
    state.refractory_until = clock.step() + 1 + params.refractory_steps(clock.dt_ms());
}

/// Full step: integrate, compare against v_thresh + theta_adapt, fire/reset.
pub fn lif_step(
    state: &mut LifState,
    params: &LifParams,
    weighted_input: f64,
    clock: &SimClock,
) -> Result<bool> {
    match integrate(state, params, weighted_input, clock)? {
        Integration::Refractory => Ok(false),
        Integration::Active(v) => {
            if v >= params.v_thresh + state.theta_adapt {
                commit_fire(state, params, clock);
                Ok(true)
            } else {
                state.v_mem = v;
                Ok(false)
            }
        }
    }
}

/// Between-pattern reset: membrane and spike bookkeeping cleared, adaptive
/// thresholds preserved.
pub fn reset_layer_states(states: &mut [LifState], params: &LifParams) {
    for s in states {
        s.v_mem = params.v_reset;
        s.last_spike_step = None;
        s.refractory_until = 0;
    }
}
