//! Learning rules: pair-based STDP, power-law weight-dependent STDP, their
//! sum, weight clamping, spike pairing, and final-layer threshold homeostasis.
//!
//! Times are milliseconds here; callers convert grid steps via step * dt.

use crate::error::{CsnnError, Result};
use crate::sim::{LifState, SpikeTrain};

/// Pair-based window constants: potentiation when the post spike follows the
/// pre spike, depression for the reverse order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PstdpParams {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
}

impl Default for PstdpParams {
    fn default() -> Self {
        PstdpParams { mu_plus: 0.04, mu_minus: 0.03, tau_plus_ms: 20.0, tau_minus_ms: 20.0 }
    }
}

/// Power-law rule constants. `weight_exp` is the saturation exponent on
/// (w_max - w). `printed_exponent` switches to the signed-exponent variant
/// of the window for comparison runs; it diverges with causal lag and is
/// never the default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawParams {
    pub lambda: f64,
    pub tau_ms: f64,
    pub theta_offset: f64,
    pub w_max: f64,
    pub weight_exp: f64,
    pub printed_exponent: bool,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        PowerLawParams {
            lambda: 0.01,
            tau_ms: 20.0,
            theta_offset: 0.2,
            w_max: 1.0,
            weight_exp: 0.9,
            printed_exponent: false,
        }
    }
}

/// The combined rule plus the clamp box shared by every trainable weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CombinedRuleParams {
    pub pstdp: PstdpParams,
    pub powerlaw: PowerLawParams,
    pub w_min: f64,
}

impl CombinedRuleParams {
    pub fn validate(&self) -> Result<()> {
        let p = &self.pstdp;
        // Zero learning rates are allowed: they disable one pathway.
        if !(p.mu_plus >= 0.0 && p.mu_minus >= 0.0 && p.tau_plus_ms > 0.0 && p.tau_minus_ms > 0.0)
        {
            return Err(CsnnError::config(
                "pair-based STDP rates must be nonnegative and taus strictly positive",
            ));
        }
        let q = &self.powerlaw;
        if !(q.lambda >= 0.0 && q.tau_ms > 0.0) {
            return Err(CsnnError::config(
                "power-law lambda must be nonnegative and tau strictly positive",
            ));
        }
        if !(0.0..1.0).contains(&q.theta_offset) {
            return Err(CsnnError::config("theta_offset must lie in [0, 1)"));
        }
        if !(q.w_max > 0.0) {
            return Err(CsnnError::config("w_max must be positive"));
        }
        if q.weight_exp < 0.0 {
            return Err(CsnnError::config("weight_exp must be nonnegative"));
        }
        if self.w_min >= q.w_max {
            return Err(CsnnError::config("w_min must be below w_max"));
        }
        Ok(())
    }
}

/// Final-layer homeostasis: threshold bump per fire, exponential decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdAdaptParams {
    pub theta_increment: f64,
    pub theta_tau_ms: f64,
}

impl Default for ThresholdAdaptParams {
    fn default() -> Self {
        ThresholdAdaptParams { theta_increment: 0.05, theta_tau_ms: 1000.0 }
    }
}

impl ThresholdAdaptParams {
    pub fn validate(&self, dt_ms: f64) -> Result<()> {
        if !(self.theta_increment > 0.0 && self.theta_tau_ms > 0.0) {
            return Err(CsnnError::config("threshold adaptation constants must be positive"));
        }
        if dt_ms >= self.theta_tau_ms {
            return Err(CsnnError::config("theta_tau must exceed dt for a stable decay step"));
        }
        Ok(())
    }
}

/// Pair-based delta for spike times in ms. Exact coincidence is defined as
/// zero so evaluation order never matters.
pub fn pstdp_delta(t_pre_ms: f64, t_post_ms: f64, p: &PstdpParams) -> f64 {
    let dt = t_post_ms - t_pre_ms;
    if dt > 0.0 {
        p.mu_plus * (-dt / p.tau_plus_ms).exp()
    } else if dt < 0.0 {
        -p.mu_minus * (dt / p.tau_minus_ms).exp()
    } else {
        0.0
    }
}

/// Time window of the power-law rule for a given t_post - t_pre, without the
/// rate and weight factors. Split out so batched appliers can tabulate it
/// over the step grid.
pub fn powerlaw_window(dt_ms: f64, p: &PowerLawParams) -> f64 {
    if p.printed_exponent {
        (dt_ms / p.tau_ms).exp() - p.theta_offset
    } else {
        (-dt_ms.abs() / p.tau_ms).exp() - p.theta_offset
    }
}

/// Weight saturation factor of the power-law rule. Requires w in [0, w_max].
pub fn powerlaw_weight_factor(w: f64, p: &PowerLawParams) -> f64 {
    assert!(
        (0.0..=p.w_max).contains(&w),
        "power-law rule got weight {w} outside [0, {}]",
        p.w_max
    );
    (p.w_max - w).powf(p.weight_exp)
}

/// Power-law delta. The window decays with |dt| and crosses zero where the
/// exponential meets theta_offset; (w_max - w)^weight_exp saturates the step
/// as w approaches w_max. Requires w in [0, w_max].
pub fn powerlaw_delta(t_pre_ms: f64, t_post_ms: f64, w: f64, p: &PowerLawParams) -> f64 {
    p.lambda * powerlaw_window(t_post_ms - t_pre_ms, p) * powerlaw_weight_factor(w, p)
}

/// Sum of the two rules, term by term.
pub fn combined_delta(t_pre_ms: f64, t_post_ms: f64, w: f64, p: &CombinedRuleParams) -> f64 {
    pstdp_delta(t_pre_ms, t_post_ms, &p.pstdp) + powerlaw_delta(t_pre_ms, t_post_ms, w, &p.powerlaw)
}

/// Apply a delta and clamp to [w_min, w_max].
pub fn apply_update(w: f64, delta: f64, p: &CombinedRuleParams) -> f64 {
    (w + delta).clamp(p.w_min, p.powerlaw.w_max)
}

/// Nearest pre spike (by grid distance) to a post fire at `post_step`.
/// Equidistant candidates resolve to the earlier, causal spike.
pub fn nearest_spike_pairing(pre_train: &SpikeTrain, post_step: u32) -> Option<u32> {
    let steps = pre_train.steps();
    if steps.is_empty() {
        return None;
    }
    let idx = steps.partition_point(|&s| s < post_step);
    let earlier = idx.checked_sub(1).map(|i| steps[i]);
    let later = steps.get(idx).copied();
    match (earlier, later) {
        (None, Some(l)) => Some(l),
        (Some(e), None) => Some(e),
        (Some(e), Some(l)) => {
            if post_step - e <= l - post_step {
                Some(e)
            } else {
                Some(l)
            }
        }
        (None, None) => unreachable!("non-empty train"),
    }
}

/// Called exactly when a final-layer neuron fires.
pub fn threshold_on_fire(state: &mut LifState, p: &ThresholdAdaptParams) {
    state.theta_adapt += p.theta_increment;
}

/// One Euler step of exponential threshold decay, floored at zero.
pub fn threshold_decay(state: &mut LifState, dt_ms: f64, p: &ThresholdAdaptParams) {
    state.theta_adapt = (state.theta_adapt * (1.0 - dt_ms / p.theta_tau_ms)).max(0.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use crate::sim::{lif_step, LifParams, LifState, SimClock};
    use rand::Rng;

    fn approx(a: f64, b: f64, rel: f64) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!((a - b).abs() <= rel * scale, "{a} vs {b}");
    }

    #[test]
    fn pstdp_example_points() {
        let p = PstdpParams { mu_plus: 0.1, mu_minus: 0.05, tau_plus_ms: 20.0, tau_minus_ms: 20.0 };
        approx(pstdp_delta(0.0, 20.0, &p), 0.036787944117144235, 1e-14);
        approx(pstdp_delta(20.0, 0.0, &p), -0.018393972058572117, 1e-14);
        assert_eq!(pstdp_delta(5.0, 5.0, &p), 0.0);
        // The window vanishes far out on the causal branch.
        let far = pstdp_delta(0.0, 30.0 * p.tau_plus_ms + 1.0, &PstdpParams::default());
        assert!(far.abs() < 1e-12);
    }

    #[test]
    fn powerlaw_example_points() {
        let p = PowerLawParams { weight_exp: 1.0, ..Default::default() };
        approx(powerlaw_delta(0.0, 10.0, 0.5, &p), 0.002032653298563167, 1e-14);
        // Saturation: zero step at the weight ceiling, any timing.
        let q = PowerLawParams::default();
        assert_eq!(powerlaw_delta(0.0, 3.0, q.w_max, &q), 0.0);
        assert_eq!(powerlaw_delta(7.0, 0.0, q.w_max, &q), 0.0);
        // Offset zero-crossing at |dt| = tau * ln(1/theta_offset).
        let z = powerlaw_delta(0.0, 32.18875824868201, 0.5, &q);
        assert!(z.abs() < 1e-15, "{z}");
    }

    #[test]
    fn powerlaw_weight_exponent_zero_degenerates() {
        let p = PowerLawParams { weight_exp: 0.0, ..Default::default() };
        for &dt in &[1.0, 5.0, 40.0] {
            let d = powerlaw_delta(0.0, dt, 0.37, &p);
            let explicit = p.lambda * ((-dt / p.tau_ms).exp() - p.theta_offset);
            assert_eq!(d.to_bits(), explicit.to_bits());
        }
    }

    #[test]
    fn printed_exponent_variant_grows_with_causal_lag() {
        let p = PowerLawParams { printed_exponent: true, ..Default::default() };
        let near = powerlaw_delta(0.0, 1.0, 0.0, &p);
        let far = powerlaw_delta(0.0, 60.0, 0.0, &p);
        assert!(far > near, "printed form must grow with lag, got {near} -> {far}");
        // At small |dt| the two variants agree on the anti-causal side only
        // through |dt|; the causal side already differs.
        let q = PowerLawParams::default();
        approx(
            powerlaw_delta(2.0, 0.0, 0.3, &p),
            powerlaw_delta(2.0, 0.0, 0.3, &q),
            1e-15,
        );
    }

    #[test]
    fn combined_is_exact_sum() {
        let p = CombinedRuleParams::default();
        let mut grid = Vec::new();
        for i in 1..=10 {
            grid.push(2.5 * i as f64);
            grid.push(-2.5 * i as f64);
        }
        for &dt in &grid {
            for wi in 0..10 {
                let w = 0.1 * wi as f64;
                let sum = pstdp_delta(0.0, dt, &p.pstdp) + powerlaw_delta(0.0, dt, w, &p.powerlaw);
                assert_eq!(combined_delta(0.0, dt, w, &p).to_bits(), sum.to_bits());
            }
        }
        // Zeroing one rule's rates leaves exactly the other rule.
        let mut only_pair = p;
        only_pair.powerlaw.lambda = 0.0;
        let mut only_power = p;
        only_power.pstdp.mu_plus = 0.0;
        only_power.pstdp.mu_minus = 0.0;
        assert_eq!(
            combined_delta(0.0, 7.0, 0.4, &only_pair).to_bits(),
            pstdp_delta(0.0, 7.0, &p.pstdp).to_bits(),
        );
        assert_eq!(
            combined_delta(0.0, 7.0, 0.4, &only_power).to_bits(),
            powerlaw_delta(0.0, 7.0, 0.4, &p.powerlaw).to_bits(),
        );
        // And the two example rows above sum.
        let lhs = combined_delta(0.0, 7.0, 0.4, &p);
        let rhs = combined_delta(0.0, 7.0, 0.4, &only_pair) + combined_delta(0.0, 7.0, 0.4, &only_power);
        approx(lhs, rhs, 1e-15);
    }

    #[test]
    fn sign_antisymmetry_and_monotone_decay() {
        let p = PstdpParams::default();
        let mut rng = derive_rng(11, 99, 0);
        for _ in 0..10_000 {
            let a = rng.gen_range(0.0..200.0);
            let b = rng.gen_range(0.0..200.0);
            if a == b {
                continue;
            }
            let d1 = pstdp_delta(a, b, &p);
            let d2 = pstdp_delta(b, a, &p);
            assert!(d1 * d2 < 0.0, "expected opposite signs for {a} {b}");
            // Strictly smaller magnitude further out on the same branch.
            let dt = b - a;
            let further = pstdp_delta(a, a + dt * 1.5, &p);
            assert!(further.abs() < d1.abs());
        }
    }

    #[test]
    fn updates_stay_in_the_box() {
        let p = CombinedRuleParams::default();
        let mut rng = derive_rng(12, 99, 0);
        let mut w = 0.5;
        for _ in 0..10_000 {
            let pre = rng.gen_range(0.0..50.0);
            let post = rng.gen_range(0.0..50.0);
            w = apply_update(w, combined_delta(pre, post, w, &p), &p);
            assert!((p.w_min..=p.powerlaw.w_max).contains(&w));
        }
        assert_eq!(apply_update(0.99, 0.05, &p), 1.0);
        assert_eq!(apply_update(0.01, -0.05, &p), 0.0);
        approx(apply_update(0.5, 0.02, &p), 0.52, 1e-15);
    }

    #[test]
    fn nearest_pairing_rules() {
        let train = SpikeTrain::from_steps(vec![10, 30]).unwrap();
        assert_eq!(nearest_spike_pairing(&train, 25), Some(30));
        let train = SpikeTrain::from_steps(vec![10, 40]).unwrap();
        assert_eq!(nearest_spike_pairing(&train, 25), Some(10));
        assert_eq!(nearest_spike_pairing(&SpikeTrain::new(), 25), None);
        let train = SpikeTrain::from_steps(vec![25]).unwrap();
        assert_eq!(nearest_spike_pairing(&train, 25), Some(25));
        let train = SpikeTrain::from_steps(vec![2, 3, 50]).unwrap();
        assert_eq!(nearest_spike_pairing(&train, 0), Some(2));
        assert_eq!(nearest_spike_pairing(&train, 100), Some(50));
    }

    #[test]
    fn threshold_bump_and_decay_steps() {
        let p = ThresholdAdaptParams { theta_increment: 0.05, theta_tau_ms: 100.0 };
        let lif = LifParams::default();
        let mut s = LifState::rest(&lif);
        threshold_on_fire(&mut s, &p);
        assert_eq!(s.theta_adapt, 0.05);
        threshold_on_fire(&mut s, &p);
        approx(s.theta_adapt, 0.10, 1e-15);

        s.theta_adapt = 1.0;
        threshold_decay(&mut s, 1.0, &p);
        assert_eq!(s.theta_adapt, 0.99);
        s.theta_adapt = 0.0;
        threshold_decay(&mut s, 1.0, &p);
        assert_eq!(s.theta_adapt, 0.0);
    }

    #[test]
    fn threshold_decay_tracks_closed_form() {
        let p = ThresholdAdaptParams { theta_increment: 0.05, theta_tau_ms: 100.0 };
        let lif = LifParams::default();
        let mut s = LifState { theta_adapt: 1.0, ..LifState::rest(&lif) };
        let dt = 1.0;
        let mut worst = 0.0f64;
        for n in 1..=100 {
            threshold_decay(&mut s, dt, &p);
            let exact = (-(n as f64) * dt / p.theta_tau_ms).exp();
            worst = worst.max((s.theta_adapt - exact).abs());
        }
        assert!(worst < 0.01, "Euler decay error {worst}");
    }

    #[test]
    fn homeostasis_reaches_rate_balance() {
        // Strong constant drive with a 2 ms refractory fires every 5th step
        // at dt 0.5 ms, a rate of 0.4 spikes/ms. Equilibrium theta should sit
        // within 10% of increment * rate * tau after 20 tau of simulated time.
        let adapt = ThresholdAdaptParams { theta_increment: 0.05, theta_tau_ms: 100.0 };
        let lif = LifParams { v_thresh: 1.0, refractory_ms: 2.0, ..Default::default() };
        let mut clock = SimClock::new(0.5, 2000.0).unwrap();
        let mut s = LifState::rest(&lif);
        for _ in 0..clock.steps_total() {
            threshold_decay(&mut s, clock.dt_ms(), &adapt);
            if lif_step(&mut s, &lif, 10.0, &clock).unwrap() {
                threshold_on_fire(&mut s, &adapt);
            }
            clock.advance();
        }
        let target = adapt.theta_increment * 0.4 * adapt.theta_tau_ms;
        assert!(
            (s.theta_adapt - target).abs() <= 0.1 * target,
            "theta {} vs rate-balance {target}",
            s.theta_adapt
        );
    }

    #[test]
    fn validation_rejects_bad_constants() {
        let mut p = CombinedRuleParams::default();
        assert!(p.validate().is_ok());
        p.powerlaw.theta_offset = 1.0;
        assert!(p.validate().is_err());
        let mut p = CombinedRuleParams::default();
        p.w_min = 2.0;
        assert!(p.validate().is_err());
        let t = ThresholdAdaptParams { theta_increment: 0.0, theta_tau_ms: 10.0 };
        assert!(t.validate(0.5).is_err());
        let t = ThresholdAdaptParams { theta_increment: 0.1, theta_tau_ms: 0.4 };
        assert!(t.validate(0.5).is_err());
    }
}
