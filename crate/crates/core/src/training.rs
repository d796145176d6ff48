//! Training pipeline: greedy layer-wise unsupervised feature learning,
//! supervised classifier training with threshold homeostasis, and
//! classification/evaluation.
//!
//! A presentation runs forward on the weights held at its start; fire events
//! are recorded and the plasticity updates are applied in a replay that
//! walks the presentation's timesteps in order, so nearest-spike pairing can
//! see the whole presentation while shared-kernel means still apply once per
//! timestep.

use crate::config::{DataKind, RunConfig};
use crate::data::{
    apply_log_filter, load_image_dir, load_mnist_idx, split, take_per_class, Dataset, SplitSpec,
};
use crate::encoding::{poisson_encode, EncoderSpec, GrayImage};
use crate::error::{CsnnError, Result};
use crate::forward::{
    commit_conv_fires, conv_forward_step, fc_forward_step, wta_select, PoolLayer,
};
use crate::plasticity::{
    apply_update, nearest_spike_pairing, powerlaw_weight_factor, powerlaw_window, pstdp_delta,
    threshold_decay, threshold_on_fire, CombinedRuleParams, ThresholdAdaptParams,
};
use crate::rng::{derive_rng, stream};
use crate::sim::{reset_layer_states, LifParams, LifState, SimClock, SpikeTrain};
use crate::snapshot::NetworkSnapshot;
use crate::topology::{
    build_network, count_trainable_params, LayerDims, LayerSpec, LayerWeights, NetworkSpec,
    UpdateCounter, WeightStore,
};
use rand::seq::SliceRandom;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Training-phase knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub unsup_epochs: usize,
    pub sup_epochs: usize,
    pub inter_pattern_reset: bool,
    pub seed: u64,
    pub wta_on: bool,
    pub inhibit_radius: u32,
}

/// Everything a run needs besides the network and data.
#[derive(Debug, Clone)]
pub struct Session {
    pub clock: SimClock,
    pub encoder: EncoderSpec,
    pub rule: CombinedRuleParams,
    pub adapt: ThresholdAdaptParams,
    pub tp: TrainParams,
}

impl Session {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Session {
            clock: cfg.sim_clock()?,
            encoder: cfg.encoder_spec(),
            rule: cfg.rule_params(),
            adapt: cfg.adapt_params(),
            tp: TrainParams {
                unsup_epochs: cfg.unsup_epochs(),
                sup_epochs: cfg.sup_epochs(),
                inter_pattern_reset: cfg.inter_pattern_reset,
                seed: cfg.seed,
                wta_on: cfg.wta_on,
                inhibit_radius: cfg.inhibit_radius,
            },
        })
    }
}

/// A live network: structure, weights, and per-neuron dynamic state.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub dims: Vec<LayerDims>,
    pub store: WeightStore,
    pub states: Vec<Vec<LifState>>,
    pub lif_conv: LifParams,
    pub lif_fc: LifParams,
    pub seed: u64,
}

impl Network {
    pub fn build(
        spec: NetworkSpec,
        seed: u64,
        rule: &CombinedRuleParams,
        lif_conv: LifParams,
        lif_fc: LifParams,
    ) -> Result<Self> {
        let dims = spec.dims_chain()?;
        let (store, states) = build_network(&spec, seed, rule, &lif_conv)?;
        Ok(Network { spec, dims, store, states, lif_conv, lif_fc, seed })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::build(
            cfg.network_spec()?,
            cfg.seed,
            &cfg.rule_params(),
            cfg.lif_conv(),
            cfg.lif_fc(),
        )
    }

    pub fn fc_index(&self) -> usize {
        self.spec.layers.len() - 1
    }

    fn lif_for(&self, layer: usize) -> &LifParams {
        if layer == self.fc_index() {
            &self.lif_fc
        } else {
            &self.lif_conv
        }
    }

    pub fn fc_weights(&self) -> &crate::topology::FcWeights {
        match &self.store.layers[self.fc_index()] {
            LayerWeights::Fc(f) => f,
            _ => unreachable!("last layer is always the classifier"),
        }
    }

    pub fn fc_theta(&self) -> Vec<f64> {
        self.states[self.fc_index()].iter().map(|s| s.theta_adapt).collect()
    }

    /// Reset membrane state everywhere; adaptive thresholds persist.
    pub fn reset_dynamic_state(&mut self) {
        for li in 0..self.states.len() {
            let lif = *self.lif_for(li);
            reset_layer_states(&mut self.states[li], &lif);
        }
    }

    pub fn snapshot(&self) -> Result<NetworkSnapshot> {
        NetworkSnapshot::capture(&self.spec, &self.store, &self.fc_theta(), self.seed)
    }

    pub fn from_snapshot(
        snap: &NetworkSnapshot,
        spec: NetworkSpec,
        lif_conv: LifParams,
        lif_fc: LifParams,
    ) -> Result<Self> {
        let dims = spec.dims_chain()?;
        let (store, theta) = snap.restore(&spec)?;
        let mut states: Vec<Vec<LifState>> =
            dims.iter().map(|d| vec![LifState::rest(&lif_conv); d.len()]).collect();
        let fc = states.len() - 1;
        for (s, t) in states[fc].iter_mut().zip(&theta) {
            *s = LifState::rest(&lif_fc);
            s.theta_adapt = *t;
        }
        Ok(Network { spec, dims, store, states, lif_conv, lif_fc, seed: snap.seed })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (li, layer) in self.store.layers.iter().enumerate() {
            let ws: &[f64] = match layer {
                LayerWeights::Conv(c) => &c.weights,
                LayerWeights::Pool => &[],
                LayerWeights::Fc(f) => &f.weights,
            };
            if let Some(w) = ws.iter().find(|w| !w.is_finite()) {
                return Err(CsnnError::numeric(format!(
                    "layer {li} weight became non-finite ({w})"
                )));
            }
        }
        if let Some(t) = self.fc_theta().iter().find(|t| !t.is_finite()) {
            return Err(CsnnError::numeric(format!("classifier threshold became non-finite ({t})")));
        }
        Ok(())
    }
}

/// Reusable per-run scratch: pool layer state machines and drive buffers.
pub struct Engine {
    pools: Vec<Option<PoolLayer>>,
    drive: Vec<f64>,
}

/// What a presentation should record and do.
pub struct PresentOptions<'a> {
    /// Per-layer plasticity mask; plastic layers get their fires recorded.
    pub plastic: &'a [bool],
    /// Record this layer's emission trains even if no one consumes them for
    /// plasticity (used to capture the classifier's input).
    pub capture: Option<usize>,
    /// Live threshold homeostasis on the classifier (supervised phase only).
    pub fc_adapt: Option<&'a ThresholdAdaptParams>,
    pub wta_on: bool,
    pub inhibit_radius: u32,
    /// Reset membrane state before the pattern (pools always restart).
    pub reset: bool,
}

/// Everything recorded from one presentation.
pub struct Presentation {
    /// Per layer, per step: fired flats (filled only for plastic layers).
    pub fires_by_step: Vec<Vec<Vec<u32>>>,
    /// Per layer: per-neuron emission trains (filled only where needed).
    pub emit_trains: Vec<Vec<SpikeTrain>>,
    pub fc_counts: Vec<u32>,
    pub fc_vmem: Vec<f64>,
}

/// Deliveries per step from emission trains: a spike emitted at step n
/// arrives at step n + 1; emissions at the final step fall off the end.
fn delivery_schedule(trains: &[SpikeTrain], steps: u32) -> Vec<Vec<u32>> {
    let mut sched = vec![Vec::new(); steps as usize];
    for (i, train) in trains.iter().enumerate() {
        for &s in train.steps() {
            if s + 1 < steps {
                sched[s as usize + 1].push(i as u32);
            }
        }
    }
    sched
}

impl Engine {
    pub fn new(net: &Network, dt_ms: f64) -> Self {
        let pools = net
            .spec
            .layers
            .iter()
            .enumerate()
            .map(|(li, layer)| match *layer {
                LayerSpec::Pool { count_window_ms } => {
                    let in_dims =
                        if li == 0 { net.spec.input_dims() } else { net.dims[li - 1] };
                    Some(PoolLayer::new(in_dims, net.dims[li], count_window_ms, dt_ms))
                }
                _ => None,
            })
            .collect();
        Engine { pools, drive: Vec::new() }
    }

    /// Run one full pattern presentation through every layer.
    pub fn present(
        &mut self,
        net: &mut Network,
        clock_tpl: &SimClock,
        input_trains: &[SpikeTrain],
        opts: &PresentOptions,
    ) -> Result<Presentation> {
        let num_layers = net.spec.layers.len();
        debug_assert_eq!(opts.plastic.len(), num_layers);
        let steps = clock_tpl.steps_total();
        if opts.reset {
            net.reset_dynamic_state();
        }
        for pool in self.pools.iter_mut().flatten() {
            pool.reset();
        }
        // Layer li's trains are recorded when layer li + 1 is plastic (they
        // are its presynaptic trains) or when explicitly captured.
        let record_trains: Vec<bool> = (0..num_layers)
            .map(|li| {
                opts.capture == Some(li) || opts.plastic.get(li + 1).copied().unwrap_or(false)
            })
            .collect();
        let mut pres = Presentation {
            fires_by_step: (0..num_layers)
                .map(|li| if opts.plastic[li] { vec![Vec::new(); steps as usize] } else { Vec::new() })
                .collect(),
            emit_trains: (0..num_layers)
                .map(|li| {
                    if record_trains[li] {
                        vec![SpikeTrain::new(); net.dims[li].len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
            fc_counts: vec![0; net.dims[num_layers - 1].len()],
            fc_vmem: Vec::new(),
        };
        let input_sched = delivery_schedule(input_trains, steps);
        let mut emit_prev: Vec<Vec<u32>> = vec![Vec::new(); num_layers];
        let mut clock = clock_tpl.clone();
        clock.reset();
        for n in 0..steps {
            let mut emit_now: Vec<Vec<u32>> = Vec::with_capacity(num_layers);
            for li in 0..num_layers {
                let delivered: &[u32] =
                    if li == 0 { &input_sched[n as usize] } else { &emit_prev[li - 1] };
                let in_dims = if li == 0 { net.spec.input_dims() } else { net.dims[li - 1] };
                let out_dims = net.dims[li];
                let emitted: Vec<u32> = match &net.store.layers[li] {
                    LayerWeights::Conv(kern) => {
                        let lif = net.lif_conv;
                        let cands = conv_forward_step(
                            delivered,
                            kern,
                            in_dims,
                            out_dims,
                            &mut net.states[li],
                            &lif,
                            &clock,
                            &mut self.drive,
                        )?;
                        let accept = if opts.wta_on {
                            wta_select(&cands, out_dims, opts.inhibit_radius)
                        } else {
                            vec![true; cands.len()]
                        };
                        commit_conv_fires(&cands, &accept, &mut net.states[li], &lif, &clock)
                    }
                    LayerWeights::Pool => {
                        let mut out = Vec::new();
                        let pool = self.pools[li].as_mut().expect("pool layer has pool state");
                        pool.step(delivered, &clock, &mut out);
                        out
                    }
                    LayerWeights::Fc(fc) => {
                        let lif = net.lif_fc;
                        fc_step_with_adapt(
                            fc,
                            &mut net.states[li],
                            &lif,
                            &clock,
                            delivered,
                            &mut self.drive,
                            opts.fc_adapt,
                        )?
                    }
                };
                if li == num_layers - 1 {
                    for &f in &emitted {
                        pres.fc_counts[f as usize] += 1;
                    }
                }
                if opts.plastic[li] {
                    pres.fires_by_step[li][n as usize] = emitted.clone();
                }
                if record_trains[li] {
                    for &f in &emitted {
                        pres.emit_trains[li][f as usize].push(n);
                    }
                }
                emit_now.push(emitted);
            }
            emit_prev = emit_now;
            clock.advance();
        }
        pres.fc_vmem = net.states[num_layers - 1].iter().map(|s| s.v_mem).collect();
        Ok(pres)
    }
}

/// One classifier step, optionally with live homeostasis: fired neurons bump
/// their threshold, then every class neuron's threshold decays.
fn fc_step_with_adapt(
    fc: &crate::topology::FcWeights,
    states: &mut [LifState],
    lif: &LifParams,
    clock: &SimClock,
    delivered: &[u32],
    drive: &mut Vec<f64>,
    adapt: Option<&ThresholdAdaptParams>,
) -> Result<Vec<u32>> {
    let fired = fc_forward_step(delivered, fc, states, lif, clock, drive)?;
    if let Some(a) = adapt {
        for &f in &fired {
            threshold_on_fire(&mut states[f as usize], a);
        }
        for s in states.iter_mut() {
            threshold_decay(s, clock.dt_ms(), a);
        }
    }
    Ok(fired)
}

/// Classifier-only presentation over precomputed input trains. Must stay
/// step-for-step identical to the classifier arm of `Engine::present`.
struct FcTrace {
    fires_by_step: Vec<Vec<u32>>,
    counts: Vec<u32>,
    vmem: Vec<f64>,
}

fn present_fc_only(
    fc: &crate::topology::FcWeights,
    states: &mut [LifState],
    lif: &LifParams,
    clock_tpl: &SimClock,
    input_trains: &[SpikeTrain],
    adapt: Option<&ThresholdAdaptParams>,
    record_fires: bool,
) -> Result<FcTrace> {
    let steps = clock_tpl.steps_total();
    let sched = delivery_schedule(input_trains, steps);
    let mut clock = clock_tpl.clone();
    clock.reset();
    let mut drive = Vec::new();
    let mut trace = FcTrace {
        fires_by_step: if record_fires { vec![Vec::new(); steps as usize] } else { Vec::new() },
        counts: vec![0; states.len()],
        vmem: Vec::new(),
    };
    for n in 0..steps {
        let fired =
            fc_step_with_adapt(fc, states, lif, &clock, &sched[n as usize], &mut drive, adapt)?;
        for &f in &fired {
            trace.counts[f as usize] += 1;
        }
        if record_fires {
            trace.fires_by_step[n as usize] = fired;
        }
        clock.advance();
    }
    trace.vmem = states.iter().map(|s| s.v_mem).collect();
    Ok(trace)
}

/// Consecutive conv layers train concurrently; pooling (or the classifier)
/// ends a phase. Returns the plastic layer indices per phase, in order.
pub fn unsup_phases(spec: &NetworkSpec) -> Vec<Vec<usize>> {
    let mut phases = Vec::new();
    let mut run = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { .. } => run.push(i),
            _ => {
                if !run.is_empty() {
                    phases.push(std::mem::take(&mut run));
                }
            }
        }
    }
    if !run.is_empty() {
        phases.push(run);
    }
    phases
}

fn presentation_order(len: usize, seed: u64, phase: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = derive_rng(seed, stream::SHUFFLE, (phase << 32) | epoch);
    order.shuffle(&mut rng);
    order
}

/// Combined-rule terms tabulated over the step grid. Pairings land on whole
/// steps, so the two exponential windows take only 2 * steps - 1 distinct
/// values per presentation; the weight-dependent saturation factor is the
/// only part that must be evaluated per synapse.
struct WindowTables {
    pair: Vec<f64>,
    plw: Vec<f64>,
    depr: Vec<f64>,
    off: usize,
}

impl WindowTables {
    fn new(steps: usize, dt_ms: f64, rule: &CombinedRuleParams) -> Self {
        let off = steps.saturating_sub(1);
        let span = 2 * steps.max(1) - 1;
        let mut pair = vec![0.0; span];
        let mut plw = vec![0.0; span];
        let mut depr = vec![0.0; span];
        for (i, slot) in pair.iter_mut().enumerate() {
            let d_ms = (i as f64 - off as f64) * dt_ms;
            *slot = pstdp_delta(0.0, d_ms, &rule.pstdp);
            plw[i] = powerlaw_window(d_ms, &rule.powerlaw);
            depr[i] = (-d_ms.abs() / rule.pstdp.tau_minus_ms).exp();
        }
        WindowTables { pair, plw, depr, off }
    }

    /// Pair-rule delta for post step minus pre step `d`.
    fn pair_at(&self, d: i64) -> f64 {
        self.pair[(d + self.off as i64) as usize]
    }

    /// Power-law window (rate and weight factors excluded) at step diff `d`.
    fn plw_at(&self, d: i64) -> f64 {
        self.plw[(d + self.off as i64) as usize]
    }

    /// Unsigned recency weight at step diff `d` on the depression time
    /// constant: 1 for coincident spikes, falling off both ways.
    fn depr_at(&self, d: i64) -> f64 {
        self.depr[(d + self.off as i64) as usize]
    }
}

/// Replay one conv layer's recorded fires and apply the combined rule:
/// walk timesteps in order; within a timestep average the per-position
/// deltas of each feature map and apply the mean to the shared kernel.
///
/// A tap's weight is fixed while one timestep's positions are summed, so the
/// combined rule factors: sum the tabulated pair deltas and power-law
/// windows across positions, then scale the latter by the rate and the tap's
/// saturation factor once.
fn replay_conv_updates(
    kern: &mut crate::topology::ConvKernels,
    in_dims: LayerDims,
    out_dims: LayerDims,
    fires_by_step: &[Vec<u32>],
    pre_trains: &[SpikeTrain],
    dt_ms: f64,
    rule: &CombinedRuleParams,
    counter: &mut UpdateCounter,
    layer_idx: usize,
) {
    let (ih, iw) = (in_dims.height, in_dims.width);
    let (oh, ow) = (out_dims.height, out_dims.width);
    let spatial = oh * ow;
    let k = kern.kernel_size;
    let taps = kern.tap_count();
    let tables = WindowTables::new(fires_by_step.len(), dt_ms, rule);
    let mut pair_sums = vec![0.0; taps];
    let mut plw_sums = vec![0.0; taps];
    for (n, fired) in fires_by_step.iter().enumerate() {
        if fired.is_empty() {
            continue;
        }
        // Fires arrive sorted by flat index, so maps form contiguous runs.
        let mut i = 0;
        while i < fired.len() {
            let m = fired[i] as usize / spatial;
            pair_sums.fill(0.0);
            plw_sums.fill(0.0);
            let mut positions = 0u32;
            let mut j = i;
            while j < fired.len() && fired[j] as usize / spatial == m {
                let rem = fired[j] as usize % spatial;
                let (oy, ox) = (rem / ow, rem % ow);
                let mut tap = 0;
                for c in 0..kern.in_channels {
                    for ky in 0..k {
                        let row = ((c * ih) + oy + ky) * iw + ox;
                        for kx in 0..k {
                            if let Some(ps) =
                                nearest_spike_pairing(&pre_trains[row + kx], n as u32)
                            {
                                let d = n as i64 - i64::from(ps);
                                pair_sums[tap] += tables.pair_at(d);
                                plw_sums[tap] += tables.plw_at(d);
                            }
                            tap += 1;
                        }
                    }
                }
                counter.count_synapse_updates(layer_idx, taps as u64);
                positions += 1;
                j += 1;
            }
            let base = m * taps;
            for tap in 0..taps {
                let w = kern.weights[base + tap];
                let sum = pair_sums[tap]
                    + rule.powerlaw.lambda
                        * powerlaw_weight_factor(w, &rule.powerlaw)
                        * plw_sums[tap];
                let mean = sum / f64::from(positions);
                kern.weights[base + tap] = apply_update(w, mean, rule);
            }
            i = j;
        }
    }
}

/// Supervised margin update for the classifier, applied only when the label
/// neuron failed to win the presentation's spike-count race outright.
///
/// On a miss, the label column follows the combined rule paired against the
/// label neuron's own fires; a virtual fire on the final step stands in when
/// it stayed silent, so a fully depressed class can always recover. Every
/// wrong neuron that tied or beat the label count is depressed by mu_minus
/// under an unsigned recency window around its fires. Per-fire deltas are
/// averaged, bounding one presentation's effect on a synapse to one rule
/// step, and ties update all tied columns so relabeling classes permutes
/// columns exactly. `rate` scales every delta; the caller anneals it over
/// epochs so repeated near-ties stop churning the weights once the count
/// margins have formed.
fn replay_fc_supervised(
    fc: &mut crate::topology::FcWeights,
    fires_by_step: &[Vec<u32>],
    pre_trains: &[SpikeTrain],
    label: usize,
    dt_ms: f64,
    rule: &CombinedRuleParams,
    rate: f64,
    counter: &mut UpdateCounter,
    layer_idx: usize,
) {
    let steps = fires_by_step.len();
    if steps == 0 {
        return;
    }
    let mut counts = vec![0u32; fc.outputs];
    for fired in fires_by_step {
        for &i in fired {
            counts[i as usize] += 1;
        }
    }
    let Some(max_other) = counts
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (i != label).then_some(c))
        .max()
    else {
        return;
    };
    if counts[label] > max_other {
        return;
    }
    let tables = WindowTables::new(steps, dt_ms, rule);
    let posts_of = |neuron: usize| -> Vec<u32> {
        fires_by_step
            .iter()
            .enumerate()
            .filter(|(_, fired)| fired.iter().any(|&f| f as usize == neuron))
            .map(|(n, _)| n as u32)
            .collect()
    };

    let label_posts = if counts[label] == 0 {
        vec![steps.saturating_sub(1) as u32]
    } else {
        posts_of(label)
    };
    counter.count_synapse_updates(layer_idx, fc.inputs as u64);
    let posts_n = label_posts.len() as f64;
    for (j, pre) in pre_trains.iter().enumerate() {
        let mut pair_sum = 0.0;
        let mut plw_sum = 0.0;
        for &n in &label_posts {
            if let Some(ps) = nearest_spike_pairing(pre, n) {
                let d = i64::from(n) - i64::from(ps);
                pair_sum += tables.pair_at(d);
                plw_sum += tables.plw_at(d);
            }
        }
        if pair_sum != 0.0 || plw_sum != 0.0 {
            let idx = fc.idx(j, label);
            let w = fc.weights[idx];
            let mean = (pair_sum
                + rule.powerlaw.lambda * powerlaw_weight_factor(w, &rule.powerlaw) * plw_sum)
                / posts_n;
            fc.weights[idx] = apply_update(w, rate * mean, rule);
        }
    }

    if max_other == 0 {
        return;
    }
    for i in 0..fc.outputs {
        if i == label || counts[i] != max_other {
            continue;
        }
        let posts = posts_of(i);
        counter.count_synapse_updates(layer_idx, fc.inputs as u64);
        let posts_n = posts.len() as f64;
        for (j, pre) in pre_trains.iter().enumerate() {
            let mut sum = 0.0;
            for &n in &posts {
                if let Some(ps) = nearest_spike_pairing(pre, n) {
                    let d = i64::from(n) - i64::from(ps);
                    sum += tables.depr_at(d);
                }
            }
            if sum != 0.0 {
                let idx = fc.idx(j, i);
                let delta = -rule.pstdp.mu_minus * sum / posts_n;
                fc.weights[idx] = apply_update(fc.weights[idx], rate * delta, rule);
            }
        }
    }
}

fn apply_conv_plasticity(
    net: &mut Network,
    pres: &Presentation,
    input_trains: &[SpikeTrain],
    plastic_layers: &[usize],
    dt_ms: f64,
    rule: &CombinedRuleParams,
    counter: &mut UpdateCounter,
) {
    for &li in plastic_layers {
        let in_dims = if li == 0 { net.spec.input_dims() } else { net.dims[li - 1] };
        let out_dims = net.dims[li];
        let pre: &[SpikeTrain] =
            if li == 0 { input_trains } else { &pres.emit_trains[li - 1] };
        match &mut net.store.layers[li] {
            LayerWeights::Conv(kern) => replay_conv_updates(
                kern,
                in_dims,
                out_dims,
                &pres.fires_by_step[li],
                pre,
                dt_ms,
                rule,
                counter,
                li,
            ),
            _ => unreachable!("unsupervised phases only contain conv layers"),
        }
    }
}

/// Greedy layer-wise unsupervised feature training. Consecutive conv layers
/// learn concurrently during the same presentations; a post-pool conv pair
/// trains in a later phase with everything before it frozen.
pub fn train_unsupervised(
    net: &mut Network,
    data: &Dataset,
    ses: &Session,
    counter: &mut UpdateCounter,
) -> Result<()> {
    data.validate()?;
    let phases = unsup_phases(&net.spec);
    let num_layers = net.spec.layers.len();
    let dt = ses.clock.dt_ms();
    let mut engine = Engine::new(net, dt);
    for (pi, phase) in phases.iter().enumerate() {
        let mut plastic = vec![false; num_layers];
        for &li in phase {
            plastic[li] = true;
        }
        for epoch in 0..ses.tp.unsup_epochs {
            let order = presentation_order(data.len(), ses.tp.seed, pi as u64, epoch as u64);
            for &si in &order {
                let input = poisson_encode(&data.images[si], &ses.encoder, dt, data.ids[si])?;
                let pres = engine.present(
                    net,
                    &ses.clock,
                    &input,
                    &PresentOptions {
                        plastic: &plastic,
                        capture: None,
                        fc_adapt: None,
                        wta_on: ses.tp.wta_on,
                        inhibit_radius: ses.tp.inhibit_radius,
                        reset: ses.tp.inter_pattern_reset,
                    },
                )?;
                apply_conv_plasticity(net, &pres, &input, phase, dt, &ses.rule, counter);
            }
            net.check_finite()?;
        }
    }
    Ok(())
}

/// Classifier input trains for one sample: the emissions of the layer
/// feeding the classifier (the raw encoding for a classifier-only network).
fn fc_input_trains(
    net: &mut Network,
    engine: &mut Engine,
    image: &GrayImage,
    id: u64,
    ses: &Session,
) -> Result<Vec<SpikeTrain>> {
    let input = poisson_encode(image, &ses.encoder, ses.clock.dt_ms(), id)?;
    let fc_li = net.fc_index();
    if fc_li == 0 {
        return Ok(input);
    }
    let plastic = vec![false; net.spec.layers.len()];
    let mut pres = engine.present(
        net,
        &ses.clock,
        &input,
        &PresentOptions {
            plastic: &plastic,
            capture: Some(fc_li - 1),
            fc_adapt: None,
            wta_on: ses.tp.wta_on,
            inhibit_radius: ses.tp.inhibit_radius,
            reset: true,
        },
    )?;
    Ok(std::mem::take(&mut pres.emit_trains[fc_li - 1]))
}

/// Supervised learning-rate schedule: full-size corrections in the first
/// epoch, then harmonic decay so late epochs refine margins instead of
/// churning saturated weights.
fn sup_rate(epoch: usize) -> f64 {
    if let Ok(v) = std::env::var("CSNN_SUP_RATE_TEMP") {
        // TEMPORARY tuning hook for the scratch benchmark; delete with it.
        if let Some(c) = v.strip_prefix("const:") {
            return c.parse().unwrap();
        }
    }
    1.0 / (1.0 + epoch as f64)
}

fn decide(counts: &[u32], vmem: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..counts.len() {
        if counts[i] > counts[best] || (counts[i] == counts[best] && vmem[i] > vmem[best]) {
            best = i;
        }
    }
    best
}

/// One measurement point after a supervised epoch: accuracy on the eval
/// set, total synapse writes so far, and wall time elapsed since `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub accuracy: f64,
    pub cumulative_writes: u64,
    pub elapsed_s: f64,
}

/// Supervised training of the final layer, earlier layers frozen. Returns
/// one stats point per epoch measured on `eval_set` (empty if none given);
/// `t0` anchors the wall-clock column.
///
/// With inter-pattern reset on (the default), the classifier's input trains
/// per sample do not depend on presentation order, so they are computed once
/// and reused across epochs; the run is bitwise identical to recomputing.
pub fn train_supervised_final(
    net: &mut Network,
    train: &Dataset,
    eval_set: Option<&Dataset>,
    ses: &Session,
    counter: &mut UpdateCounter,
    t0: Instant,
) -> Result<Vec<EpochStats>> {
    train.validate()?;
    if train.is_empty() {
        return Err(CsnnError::data("supervised training set is empty"));
    }
    let classes = net.dims[net.fc_index()].len();
    if let Some(bad) = train.labels.iter().find(|&&l| usize::from(l) >= classes) {
        return Err(CsnnError::data(format!(
            "label {bad} outside the classifier's {classes} outputs"
        )));
    }
    if !ses.tp.inter_pattern_reset {
        return train_supervised_uncached(net, train, eval_set, ses, counter, t0);
    }
    let dt = ses.clock.dt_ms();
    let fc_li = net.fc_index();
    let mut engine = Engine::new(net, dt);
    let mut train_cache = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        train_cache.push(fc_input_trains(net, &mut engine, &train.images[i], train.ids[i], ses)?);
    }
    let mut eval_cache = Vec::new();
    if let Some(ds) = eval_set {
        ds.validate()?;
        for i in 0..ds.len() {
            eval_cache.push(fc_input_trains(net, &mut engine, &ds.images[i], ds.ids[i], ses)?);
        }
    }
    let phase_base = unsup_phases(&net.spec).len() as u64;
    let mut per_epoch = Vec::new();
    for epoch in 0..ses.tp.sup_epochs {
        let order = presentation_order(train.len(), ses.tp.seed, phase_base, epoch as u64);
        for &si in &order {
            let lif_fc = net.lif_fc;
            reset_layer_states(&mut net.states[fc_li], &lif_fc);
            let trace = {
                let fc = match &net.store.layers[fc_li] {
                    LayerWeights::Fc(f) => f,
                    _ => unreachable!(),
                };
                present_fc_only(
                    fc,
                    &mut net.states[fc_li],
                    &lif_fc,
                    &ses.clock,
                    &train_cache[si],
                    Some(&ses.adapt),
                    true,
                )?
            };
            let fc = match &mut net.store.layers[fc_li] {
                LayerWeights::Fc(f) => f,
                _ => unreachable!(),
            };
            replay_fc_supervised(
                fc,
                &trace.fires_by_step,
                &train_cache[si],
                usize::from(train.labels[si]),
                dt,
                &ses.rule,
                sup_rate(epoch),
                counter,
                fc_li,
            );
        }
        net.check_finite()?;
        if let Some(ds) = eval_set {
            per_epoch.push(EpochStats {
                accuracy: accuracy_from_cache(net, &eval_cache, &ds.labels, ses)?,
                cumulative_writes: counter.writes,
                elapsed_s: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(per_epoch)
}

/// Slow path for carried-over membrane state: every supervised presentation
/// runs the full network in epoch order, so no caching is possible.
fn train_supervised_uncached(
    net: &mut Network,
    train: &Dataset,
    eval_set: Option<&Dataset>,
    ses: &Session,
    counter: &mut UpdateCounter,
    t0: Instant,
) -> Result<Vec<EpochStats>> {
    let dt = ses.clock.dt_ms();
    let fc_li = net.fc_index();
    let num_layers = net.spec.layers.len();
    let mut engine = Engine::new(net, dt);
    let mut plastic = vec![false; num_layers];
    plastic[fc_li] = true;
    let phase_base = unsup_phases(&net.spec).len() as u64;
    let mut per_epoch = Vec::new();
    for epoch in 0..ses.tp.sup_epochs {
        let order = presentation_order(train.len(), ses.tp.seed, phase_base, epoch as u64);
        for &si in &order {
            let input = poisson_encode(&train.images[si], &ses.encoder, dt, train.ids[si])?;
            let capture = if fc_li == 0 { None } else { Some(fc_li - 1) };
            let pres = engine.present(
                net,
                &ses.clock,
                &input,
                &PresentOptions {
                    plastic: &plastic,
                    capture,
                    fc_adapt: Some(&ses.adapt),
                    wta_on: ses.tp.wta_on,
                    inhibit_radius: ses.tp.inhibit_radius,
                    reset: false,
                },
            )?;
            let pre: &[SpikeTrain] =
                if fc_li == 0 { &input } else { &pres.emit_trains[fc_li - 1] };
            let fc = match &mut net.store.layers[fc_li] {
                LayerWeights::Fc(f) => f,
                _ => unreachable!(),
            };
            replay_fc_supervised(
                fc,
                &pres.fires_by_step[fc_li],
                pre,
                usize::from(train.labels[si]),
                dt,
                &ses.rule,
                sup_rate(epoch),
                counter,
                fc_li,
            );
        }
        net.check_finite()?;
        if let Some(ds) = eval_set {
            let mut correct = 0usize;
            for i in 0..ds.len() {
                if classify_with(net, &mut engine, &ds.images[i], ds.ids[i], ses)?
                    == usize::from(ds.labels[i])
                {
                    correct += 1;
                }
            }
            per_epoch.push(EpochStats {
                accuracy: correct as f64 / ds.len() as f64,
                cumulative_writes: counter.writes,
                elapsed_s: t0.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(per_epoch)
}

fn accuracy_from_cache(
    net: &mut Network,
    cache: &[Vec<SpikeTrain>],
    labels: &[u8],
    ses: &Session,
) -> Result<f64> {
    let fc_li = net.fc_index();
    let lif_fc = net.lif_fc;
    let mut correct = 0usize;
    for (trains, &label) in cache.iter().zip(labels) {
        reset_layer_states(&mut net.states[fc_li], &lif_fc);
        let fc = match &net.store.layers[fc_li] {
            LayerWeights::Fc(f) => f,
            _ => unreachable!(),
        };
        let trace =
            present_fc_only(fc, &mut net.states[fc_li], &lif_fc, &ses.clock, trains, None, false)?;
        if decide(&trace.counts, &trace.vmem) == usize::from(label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / cache.len() as f64)
}

fn classify_with(
    net: &mut Network,
    engine: &mut Engine,
    image: &GrayImage,
    id: u64,
    ses: &Session,
) -> Result<usize> {
    let input = poisson_encode(image, &ses.encoder, ses.clock.dt_ms(), id)?;
    let plastic = vec![false; net.spec.layers.len()];
    let pres = engine.present(
        net,
        &ses.clock,
        &input,
        &PresentOptions {
            plastic: &plastic,
            capture: None,
            fc_adapt: None,
            wta_on: ses.tp.wta_on,
            inhibit_radius: ses.tp.inhibit_radius,
            reset: true,
        },
    )?;
    Ok(decide(&pres.fc_counts, &pres.fc_vmem))
}

/// Plasticity-off classification: present the pattern, count classifier
/// spikes, break count ties by higher final membrane then lower index.
pub fn classify(net: &mut Network, image: &GrayImage, id: u64, ses: &Session) -> Result<usize> {
    let mut engine = Engine::new(net, ses.clock.dt_ms());
    classify_with(net, &mut engine, image, id, ses)
}

/// Evaluation summary. `accuracy` equals the class-count-weighted mean of
/// `per_class_accuracy` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub trainable_params: usize,
    pub update_counts: UpdateCounter,
    pub per_epoch_accuracy: Vec<f64>,
}

/// Classify every test sample (plasticity off, weights untouched) and
/// assemble the report around the supplied training statistics.
pub fn evaluate(
    net: &mut Network,
    data: &Dataset,
    ses: &Session,
    update_counts: UpdateCounter,
    per_epoch_accuracy: Vec<f64>,
) -> Result<RunReport> {
    data.validate()?;
    if data.is_empty() {
        return Err(CsnnError::data("evaluation set is empty"));
    }
    let classes = net.dims[net.fc_index()].len();
    let mut engine = Engine::new(net, ses.clock.dt_ms());
    let mut per_class_correct = vec![0usize; classes];
    let mut per_class_total = vec![0usize; classes];
    let mut correct = 0usize;
    for i in 0..data.len() {
        let label = usize::from(data.labels[i]);
        per_class_total[label] += 1;
        if classify_with(net, &mut engine, &data.images[i], data.ids[i], ses)? == label {
            per_class_correct[label] += 1;
            correct += 1;
        }
    }
    let per_class_accuracy = per_class_correct
        .iter()
        .zip(&per_class_total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok(RunReport {
        accuracy: correct as f64 / data.len() as f64,
        per_class_accuracy,
        trainable_params: count_trainable_params(&net.spec)?,
        update_counts,
        per_epoch_accuracy,
    })
}

/// Everything produced by one full training run.
pub struct TrainOutcome {
    pub network: Network,
    pub counter: UpdateCounter,
    pub per_epoch: Vec<EpochStats>,
    pub report: RunReport,
}

/// Full pipeline: build, unsupervised feature training, supervised
/// classifier training with per-epoch accuracy, final evaluation.
pub fn run_training(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    let t0 = Instant::now();
    let ses = Session::from_config(cfg)?;
    check_input_dims(cfg, train)?;
    check_input_dims(cfg, test)?;
    let mut net = Network::from_config(cfg)?;
    let mut counter = UpdateCounter::new(net.spec.layers.len());
    train_unsupervised(&mut net, train, &ses, &mut counter)?;
    let per_epoch =
        train_supervised_final(&mut net, train, Some(test), &ses, &mut counter, t0)?;
    let accuracies: Vec<f64> = per_epoch.iter().map(|e| e.accuracy).collect();
    let report = evaluate(&mut net, test, &ses, counter.clone(), accuracies)?;
    Ok(TrainOutcome { network: net, counter, per_epoch, report })
}

/// One full train+eval per kernel count, all other settings shared.
pub fn sweep_kernels(
    cfg: &RunConfig,
    kernel_counts: &[usize],
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<(usize, TrainOutcome)>> {
    if kernel_counts.is_empty() {
        return Err(CsnnError::config("kernel sweep needs at least one kernel count"));
    }
    let mut rows = Vec::with_capacity(kernel_counts.len());
    for &k_count in kernel_counts {
        let mut sub = cfg.clone();
        sub.kernels = vec![k_count];
        rows.push((k_count, run_training(&sub, train, test)?));
    }
    Ok(rows)
}

fn check_input_dims(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if let Some(img) = ds.images.first() {
        if img.width() != cfg.input_w || img.height() != cfg.input_h {
            return Err(CsnnError::config(format!(
                "architecture expects {}x{} inputs but the dataset holds {}x{}",
                cfg.input_w,
                cfg.input_h,
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

/// Load, subset and preprocess the train/test datasets named by the config.
/// Returns any skipped (undecodable) files for the caller to report.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset, Vec<PathBuf>)> {
    match cfg.data_kind {
        DataKind::Mnist => {
            let mut train = load_mnist_idx(
                Path::new(&cfg.train_images),
                Path::new(&cfg.train_labels),
            )?;
            let mut test =
                load_mnist_idx(Path::new(&cfg.test_images), Path::new(&cfg.test_labels))?;
            if cfg.train_per_class > 0 {
                train = take_per_class(&train, cfg.train_per_class, cfg.split_seed)?;
            }
            if cfg.test_per_class > 0 {
                test = take_per_class(&test, cfg.test_per_class, cfg.split_seed)?;
            }
            if cfg.log_filter_on {
                let spec = cfg.log_spec();
                apply_log_filter(&mut train, &spec)?;
                apply_log_filter(&mut test, &spec)?;
            }
            check_class_range(cfg, &train)?;
            check_class_range(cfg, &test)?;
            Ok((train, test, Vec::new()))
        }
        DataKind::ImageDir => {
            if cfg.split_train_per_class == 0 {
                return Err(CsnnError::config(
                    "image directory data needs data.split_train_per_class",
                ));
            }
            if cfg.data_classes.len() != cfg.classes {
                return Err(CsnnError::config(format!(
                    "data.classes lists {} names but arch.classes is {}",
                    cfg.data_classes.len(),
                    cfg.classes
                )));
            }
            let (pool, skipped) = load_image_dir(
                Path::new(&cfg.data_root),
                &cfg.data_classes,
                &cfg.log_spec(),
                cfg.resize_w,
                cfg.resize_h,
            )?;
            let (mut train, mut test) = split(
                &pool,
                SplitSpec { train_per_class: cfg.split_train_per_class, seed: cfg.split_seed },
            )?;
            if cfg.train_per_class > 0 {
                train = take_per_class(&train, cfg.train_per_class, cfg.split_seed)?;
            }
            if cfg.test_per_class > 0 {
                test = take_per_class(&test, cfg.test_per_class, cfg.split_seed)?;
            }
            Ok((train, test, skipped))
        }
    }
}

fn check_class_range(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if let Some(&bad) = ds.labels.iter().find(|&&l| usize::from(l) >= cfg.classes) {
        return Err(CsnnError::data(format!(
            "dataset label {bad} does not fit arch.classes = {}",
            cfg.classes
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::FcWeights;

    /// Tiny deterministic patterns: a bright blob per class, distinct corners.
    fn blob_dataset(classes: usize, per_class: usize, side: usize) -> Dataset {
        let corners = [(1usize, 1usize), (side - 4, side - 4), (1, side - 4), (side - 4, 1)];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..per_class {
                let mut data = vec![0.0; side * side];
                let (cy, cx) = corners[c % corners.len()];
                for dy in 0..3 {
                    for dx in 0..3 {
                        data[(cy + dy) * side + cx + dx] = 1.0;
                    }
                }
                images.push(GrayImage::new(side, side, data).unwrap());
                labels.push(c as u8);
            }
        }
        Dataset {
            ids: (0..images.len() as u64).collect(),
            images,
            labels,
            class_names: (0..classes).map(|c| c.to_string()).collect(),
            source_checksums: vec![],
        }
    }

    fn toy_config(classes: usize, side: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.arch = "1C-1S-FC".into();
        cfg.input_h = side;
        cfg.input_w = side;
        cfg.kernels = vec![2];
        cfg.kernel_sizes = vec![3];
        cfg.classes = classes;
        cfg.epochs = 2;
        cfg.unsup_epochs = Some(1);
        cfg.sup_epochs = Some(4);
        cfg.v_thresh = 0.6;
        cfg.v_thresh_fc = Some(0.4);
        cfg.theta_increment = 0.02;
        cfg
    }

    fn session(cfg: &RunConfig) -> Session {
        Session::from_config(cfg).unwrap()
    }

    #[test]
    #[ignore]
    fn replay_probe() {
        use std::time::Instant;
        let mut cfg = crate::config::RunConfig::default();
        cfg.arch = "1C-1S-FC".into();
        cfg.input_h = 28;
        cfg.input_w = 28;
        cfg.kernels = vec![16];
        cfg.kernel_sizes = vec![5];
        cfg.classes = 10;
        cfg.v_thresh = 10.0;
        cfg.data_kind = crate::config::DataKind::Mnist;
        let root = "testdata/mnist";
        cfg.train_images = format!("{root}/train-images-idx3-ubyte.gz");
        cfg.train_labels = format!("{root}/train-labels-idx1-ubyte.gz");
        cfg.test_images = format!("{root}/t10k-images-idx3-ubyte.gz");
        cfg.test_labels = format!("{root}/t10k-labels-idx1-ubyte.gz");
        cfg.train_per_class = 5;
        cfg.test_per_class = 1;
        let (train, _t, _) = load_datasets(&cfg).unwrap();
        let ses = Session::from_config(&cfg).unwrap();
        let mut net = Network::from_config(&cfg).unwrap();
        let dt = ses.clock.dt_ms();
        let mut engine = Engine::new(&net, dt);
        let input = poisson_encode(&train.images[0], &ses.encoder, dt, train.ids[0]).unwrap();
        let mut plastic = vec![false; net.spec.layers.len()];
        plastic[0] = true;
        let opts = PresentOptions {
            plastic: &plastic,
            capture: None,
            fc_adapt: None,
            wta_on: true,
            inhibit_radius: cfg.inhibit_radius,
            reset: true,
        };
        let pres = engine.present(&mut net, &ses.clock, &input, &opts).unwrap();
        let fires: usize = pres.fires_by_step[0].iter().map(Vec::len).sum();
        let mut counter = UpdateCounter::new(net.spec.layers.len());
        let t0 = Instant::now();
        let reps = 200;
        for _ in 0..reps {
            apply_conv_plasticity(&mut net, &pres, &input, &[0], dt, &ses.rule, &mut counter);
        }
        println!(
            "replay: {:.2} ms/presentation ({} conv fires)",
            1e3 * t0.elapsed().as_secs_f64() / f64::from(reps),
            fires
        );
    }

    #[test]
    fn phases_follow_the_conv_runs() {
        let one = NetworkSpec::preset("1C-1S-FC", 12, 12, &[2], &[3], 10.0, 2).unwrap();
        assert_eq!(unsup_phases(&one), vec![vec![0]]);
        let two = NetworkSpec::preset("2C-1S-FC", 12, 12, &[2, 2], &[3, 3], 10.0, 2).unwrap();
        assert_eq!(unsup_phases(&two), vec![vec![0, 1]]);
        let four =
            NetworkSpec::preset("2C-1S-2C-FC", 20, 20, &[2, 2, 2, 2], &[3, 3, 3, 3], 10.0, 2)
                .unwrap();
        assert_eq!(unsup_phases(&four), vec![vec![0, 1], vec![3, 4]]);
    }

    #[test]
    fn zero_learning_rates_leave_weights_bitwise_unchanged() {
        let mut cfg = toy_config(2, 10);
        cfg.mu_plus = 0.0;
        cfg.mu_minus = 0.0;
        cfg.powerlaw_lambda = 0.0;
        let ds = blob_dataset(2, 3, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let before = net.store.clone();
        let mut counter = UpdateCounter::new(net.spec.layers.len());
        train_unsupervised(&mut net, &ds, &ses, &mut counter).unwrap();
        train_supervised_final(&mut net, &ds, None, &ses, &mut counter, Instant::now()).unwrap();
        assert_eq!(net.store, before);
        // Thresholds still adapt: homeostasis is not a learning rate.
        assert!(net.fc_theta().iter().any(|&t| t > 0.0));
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = toy_config(2, 10);
        let ds = blob_dataset(2, 3, 10);
        let run = |seed: u64| -> (WeightStore, Vec<f64>) {
            let mut c = cfg.clone();
            c.seed = seed;
            let ses = session(&c);
            let mut net = Network::from_config(&c).unwrap();
            let mut counter = UpdateCounter::new(net.spec.layers.len());
            train_unsupervised(&mut net, &ds, &ses, &mut counter).unwrap();
            train_supervised_final(&mut net, &ds, None, &ses, &mut counter, Instant::now()).unwrap();
            (net.store.clone(), net.fc_theta())
        };
        let (a_store, a_theta) = run(3);
        let (b_store, b_theta) = run(3);
        let (c_store, _) = run(4);
        assert_eq!(a_store, b_store);
        assert_eq!(a_theta, b_theta);
        assert_ne!(a_store, c_store);
    }

    #[test]
    fn repeated_pattern_potentiates_kernels_toward_saturation() {
        let mut cfg = toy_config(1, 10);
        cfg.unsup_epochs = Some(5);
        let ds = blob_dataset(1, 1, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let mut counter = UpdateCounter::new(net.spec.layers.len());
        let sum_conv = |net: &Network| -> f64 {
            match &net.store.layers[0] {
                LayerWeights::Conv(c) => c.weights.iter().sum(),
                _ => unreachable!(),
            }
        };
        let mut sums = vec![sum_conv(&net)];
        let mut one_epoch = ses.clone();
        one_epoch.tp.unsup_epochs = 1;
        for _ in 0..5 {
            train_unsupervised(&mut net, &ds, &one_epoch, &mut counter).unwrap();
            sums.push(sum_conv(&net));
        }
        for w in sums.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "kernel mass decreased: {sums:?}");
        }
        assert!(
            sums.last().unwrap() > &(sums[0] + 1e-3),
            "no net potentiation: {sums:?}"
        );
        assert!(net.store.all_in_box(0.0, cfg.w_max));
    }

    #[test]
    fn wta_keeps_updates_unique_per_position() {
        let cfg = toy_config(2, 10);
        let ds = blob_dataset(2, 2, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let mut engine = Engine::new(&net, ses.clock.dt_ms());
        let plastic = vec![true, false, false];
        let input = poisson_encode(&ds.images[0], &ses.encoder, ses.clock.dt_ms(), 0).unwrap();
        let pres = engine
            .present(
                &mut net,
                &ses.clock,
                &input,
                &PresentOptions {
                    plastic: &plastic,
                    capture: None,
                    fc_adapt: None,
                    wta_on: true,
                    inhibit_radius: 0,
                    reset: true,
                },
            )
            .unwrap();
        let spatial = net.dims[0].height * net.dims[0].width;
        for fired in &pres.fires_by_step[0] {
            let mut positions: Vec<usize> =
                fired.iter().map(|&f| f as usize % spatial).collect();
            let before = positions.len();
            positions.dedup();
            assert_eq!(positions.len(), before, "two maps fired at one position");
        }
    }

    #[test]
    fn supervised_label_column_grows_past_the_others() {
        let mut cfg = toy_config(2, 10);
        cfg.sup_epochs = Some(6);
        // Single-class data: every pattern labeled 0.
        let ds = blob_dataset(1, 4, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let mut counter = UpdateCounter::new(net.spec.layers.len());
        train_supervised_final(&mut net, &ds, None, &ses, &mut counter, Instant::now()).unwrap();
        let fc = net.fc_weights();
        let mean = |col: usize| -> f64 {
            (0..fc.inputs).map(|j| fc.weights[fc.idx(j, col)]).sum::<f64>() / fc.inputs as f64
        };
        assert!(
            mean(0) > mean(1),
            "label column mean {} should exceed other column mean {}",
            mean(0),
            mean(1)
        );
        // Earlier layers stayed bitwise frozen.
        let rebuilt = Network::from_config(&cfg).unwrap();
        assert_eq!(net.store.layers[0], rebuilt.store.layers[0]);
    }

    #[test]
    fn permuted_labels_permute_learned_columns() {
        // Symmetric classifier start: constant weights, so any relabeling
        // maps runs onto each other exactly.
        let mut cfg = toy_config(3, 10);
        cfg.kernels = vec![1];
        cfg.sup_epochs = Some(3);
        let ds = blob_dataset(3, 3, 10);
        let perm = [2u8, 0, 1];
        let run = |labels: &[u8], cfg: &RunConfig| -> (FcWeights, Vec<f64>) {
            let mut data = ds.clone();
            data.labels = labels.to_vec();
            let ses = session(cfg);
            let mut net = Network::from_config(cfg).unwrap();
            let fc_li = net.fc_index();
            if let LayerWeights::Fc(f) = &mut net.store.layers[fc_li] {
                f.weights.fill(0.3);
            }
            let mut counter = UpdateCounter::new(net.spec.layers.len());
            train_supervised_final(&mut net, &data, None, &ses, &mut counter, Instant::now()).unwrap();
            (net.fc_weights().clone(), net.fc_theta())
        };
        let base_labels = ds.labels.clone();
        let permuted: Vec<u8> = base_labels.iter().map(|&l| perm[usize::from(l)]).collect();
        let (fc_a, theta_a) = run(&base_labels, &cfg);
        let (fc_b, theta_b) = run(&permuted, &cfg);
        for j in 0..fc_a.inputs {
            for c in 0..3usize {
                let pc = usize::from(perm[c]);
                assert_eq!(
                    fc_a.weights[fc_a.idx(j, c)].to_bits(),
                    fc_b.weights[fc_b.idx(j, pc)].to_bits(),
                    "column {c} -> {pc} mismatch at input {j}"
                );
            }
        }
        for c in 0..3usize {
            assert_eq!(theta_a[c].to_bits(), theta_b[usize::from(perm[c])].to_bits());
        }
    }

    #[test]
    fn classify_is_pure_and_breaks_ties_deterministically() {
        let cfg = toy_config(2, 10);
        let ds = blob_dataset(2, 1, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let store_before = net.store.clone();
        let theta_before = net.fc_theta();
        let a = classify(&mut net, &ds.images[0], ds.ids[0], &ses).unwrap();
        let b = classify(&mut net, &ds.images[0], ds.ids[0], &ses).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.store, store_before);
        assert_eq!(net.fc_theta(), theta_before);
        // Fully symmetric net and silent input: everything ties, index 0 wins.
        let mut sym = Network::from_config(&cfg).unwrap();
        let fc_li = sym.fc_index();
        if let LayerWeights::Fc(f) = &mut sym.store.layers[fc_li] {
            f.weights.fill(0.2);
        }
        let dark = GrayImage::new(10, 10, vec![0.0; 100]).unwrap();
        assert_eq!(classify(&mut sym, &dark, 0, &ses).unwrap(), 0);
    }

    #[test]
    fn overfit_on_blobs_reaches_full_training_accuracy() {
        let mut cfg = toy_config(2, 10);
        cfg.unsup_epochs = Some(1);
        cfg.sup_epochs = Some(6);
        let ds = blob_dataset(2, 4, 10);
        let outcome = run_training(&cfg, &ds, &ds).unwrap();
        assert_eq!(outcome.report.accuracy, 1.0, "per-class: {:?}", outcome.report.per_class_accuracy);
        assert_eq!(outcome.per_epoch.len(), 6);
        assert!(outcome.counter.writes > 0);
        // Writes accumulate monotonically across epochs.
        for w in outcome.per_epoch.windows(2) {
            assert!(w[1].cumulative_writes >= w[0].cumulative_writes);
        }
        assert_eq!(outcome.per_epoch.last().unwrap().cumulative_writes, outcome.counter.writes);
    }

    #[test]
    fn untrained_accuracy_sits_at_chance_level() {
        let cfg = toy_config(2, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        // Balanced two-class set whose labels are independent of the images.
        // Every sample shares one encoder id, so the (identical) images get
        // identical spike trains and the prediction is one constant class.
        let mut ds = blob_dataset(1, 60, 10);
        for (i, l) in ds.labels.iter_mut().enumerate() {
            *l = (i % 2) as u8;
        }
        ds.ids = vec![7; ds.len()];
        ds.class_names = vec!["a".into(), "b".into()];
        let report =
            evaluate(&mut net, &ds, &ses, UpdateCounter::new(3), Vec::new()).unwrap();
        // All images identical: prediction is constant, accuracy exactly 1/2.
        assert!((report.accuracy - 0.5).abs() < 1e-12);
        let weighted: f64 = report
            .per_class_accuracy
            .iter()
            .zip(ds.per_class_counts())
            .map(|(a, n)| a * n as f64)
            .sum::<f64>()
            / ds.len() as f64;
        assert!((report.accuracy - weighted).abs() < 1e-12);
    }

    #[test]
    fn cached_and_uncached_supervised_paths_agree() {
        // The cached fast path must be bitwise identical to running the
        // full network per supervised presentation.
        let cfg = toy_config(2, 10);
        let ds = blob_dataset(2, 3, 10);
        let eval = blob_dataset(2, 2, 10);
        let ses = session(&cfg);

        let mut fast = Network::from_config(&cfg).unwrap();
        let mut c1 = UpdateCounter::new(fast.spec.layers.len());
        let acc_fast =
            train_supervised_final(&mut fast, &ds, Some(&eval), &ses, &mut c1, Instant::now()).unwrap();

        // Uncached reference: same semantics, forced through full presents.
        // inter_pattern_reset=false changes dynamics, so emulate the cached
        // path by classifying with the full engine instead.
        let mut slow = Network::from_config(&cfg).unwrap();
        let mut c2 = UpdateCounter::new(slow.spec.layers.len());
        let mut engine = Engine::new(&slow, ses.clock.dt_ms());
        let fc_li = slow.fc_index();
        let phase_base = unsup_phases(&slow.spec).len() as u64;
        let mut acc_slow = Vec::new();
        for epoch in 0..ses.tp.sup_epochs {
            let order = presentation_order(ds.len(), ses.tp.seed, phase_base, epoch as u64);
            for &si in &order {
                let input =
                    poisson_encode(&ds.images[si], &ses.encoder, ses.clock.dt_ms(), ds.ids[si])
                        .unwrap();
                let mut plastic = vec![false; slow.spec.layers.len()];
                plastic[fc_li] = true;
                let pres = engine
                    .present(
                        &mut slow,
                        &ses.clock,
                        &input,
                        &PresentOptions {
                            plastic: &plastic,
                            capture: Some(fc_li - 1),
                            fc_adapt: Some(&ses.adapt),
                            wta_on: ses.tp.wta_on,
                            inhibit_radius: ses.tp.inhibit_radius,
                            reset: true,
                        },
                    )
                    .unwrap();
                let pre = pres.emit_trains[fc_li - 1].clone();
                let fc = match &mut slow.store.layers[fc_li] {
                    LayerWeights::Fc(f) => f,
                    _ => unreachable!(),
                };
                replay_fc_supervised(
                    fc,
                    &pres.fires_by_step[fc_li],
                    &pre,
                    usize::from(ds.labels[si]),
                    ses.clock.dt_ms(),
                    &ses.rule,
                    sup_rate(epoch),
                    &mut c2,
                    fc_li,
                );
            }
            let mut correct = 0;
            for i in 0..eval.len() {
                if classify_with(&mut slow, &mut engine, &eval.images[i], eval.ids[i], &ses)
                    .unwrap()
                    == usize::from(eval.labels[i])
                {
                    correct += 1;
                }
            }
            acc_slow.push(correct as f64 / eval.len() as f64);
        }
        assert_eq!(fast.fc_weights(), slow.fc_weights());
        assert_eq!(fast.fc_theta(), slow.fc_theta());
        let acc_fast: Vec<f64> = acc_fast.iter().map(|e| e.accuracy).collect();
        assert_eq!(acc_fast, acc_slow);
        assert_eq!(c1, c2);
    }

    #[test]
    fn scripted_fc_run_counts_exact_synapse_writes() {
        // Classifier-only network, two classes, nine afferents. Equal rows
        // make both outputs fire in lockstep: the count race ties, so the
        // label column takes one potentiation pass and the rival column one
        // depression pass; a clear win applies no updates at all.
        let spec = NetworkSpec {
            arch_name: "custom".into(),
            input_h: 3,
            input_w: 3,
            layers: vec![LayerSpec::FullyConnected { num_outputs: 2 }],
        };
        let mut cfg = RunConfig::default();
        cfg.classes = 2;
        let rule = cfg.rule_params();
        let mut net = Network::build(spec, 0, &rule, cfg.lif_conv(), cfg.lif_fc()).unwrap();
        if let LayerWeights::Fc(f) = &mut net.store.layers[0] {
            f.weights.fill(1.0);
        }
        let ses = session(&cfg);
        // Input neuron 0 emits every 10 steps: emissions at 0, 10, ..., 90
        // all deliver one step later, so 10 deliveries -> 10 fires apiece.
        let steps = ses.clock.steps_total();
        let train: Vec<SpikeTrain> = (0..9)
            .map(|i| {
                if i == 0 {
                    SpikeTrain::from_steps((0..steps).step_by(10).collect()).unwrap()
                } else {
                    SpikeTrain::new()
                }
            })
            .collect();
        let mut counter = UpdateCounter::new(1);
        let fc_li = 0;
        let lif_fc = net.lif_fc;
        reset_layer_states(&mut net.states[fc_li], &lif_fc);
        let trace = {
            let fc = match &net.store.layers[fc_li] {
                LayerWeights::Fc(f) => f,
                _ => unreachable!(),
            };
            present_fc_only(fc, &mut net.states[fc_li], &lif_fc, &ses.clock, &train, None, true)
                .unwrap()
        };
        assert_eq!(trace.counts, vec![10, 10]);
        let fc = match &mut net.store.layers[fc_li] {
            LayerWeights::Fc(f) => f,
            _ => unreachable!(),
        };
        let w_before = fc.weights.clone();
        replay_fc_supervised(
            fc,
            &trace.fires_by_step,
            &train,
            0,
            ses.clock.dt_ms(),
            &ses.rule,
            1.0,
            &mut counter,
            fc_li,
        );
        // One row pass per column: 2 events of 9 synapses each.
        assert_eq!(counter.writes, 2 * 9);
        assert_eq!(counter.reads, counter.writes);
        assert_eq!(counter.per_layer[0].fires, 2);
        // Label column held at w_max by saturation; rival's active afferent
        // depressed by the full recency weight (coincidence at one step).
        let fc = match &net.store.layers[fc_li] {
            LayerWeights::Fc(f) => f,
            _ => unreachable!(),
        };
        assert_eq!(fc.weights[fc.idx(0, 0)], w_before[fc.idx(0, 0)]);
        assert!(fc.weights[fc.idx(0, 1)] < w_before[fc.idx(0, 1)]);
        let expected = apply_update(
            1.0,
            -ses.rule.pstdp.mu_minus * (-0.5 / ses.rule.pstdp.tau_minus_ms).exp(),
            &ses.rule,
        );
        assert!((fc.weights[fc.idx(0, 1)] - expected).abs() < 1e-15);
        // Silent afferents keep their weights bitwise.
        for j in 1..9 {
            assert_eq!(fc.weights[fc.idx(j, 0)], w_before[fc.idx(j, 0)]);
            assert_eq!(fc.weights[fc.idx(j, 1)], w_before[fc.idx(j, 1)]);
        }

        // Rerun with the rival silenced: the label wins outright, no writes.
        let mut counter2 = UpdateCounter::new(1);
        let mut fires = vec![Vec::new(); steps as usize];
        fires[1] = vec![0u32];
        let fc = match &mut net.store.layers[fc_li] {
            LayerWeights::Fc(f) => f,
            _ => unreachable!(),
        };
        let w_now = fc.weights.clone();
        replay_fc_supervised(
            fc,
            &fires,
            &train,
            0,
            ses.clock.dt_ms(),
            &ses.rule,
            1.0,
            &mut counter2,
            fc_li,
        );
        assert_eq!(counter2.writes, 0);
        assert_eq!(fc.weights, w_now);
    }

    #[test]
    fn silenced_label_column_recovers_through_virtual_fire() {
        // All-zero weights keep every output quiet forever under the fire
        // gate alone; the virtual end-of-presentation fire must still pull
        // the label column up so the class can start spiking again.
        let mut fc = FcWeights { inputs: 4, outputs: 2, weights: vec![0.0; 8] };
        let cfg = RunConfig::default();
        let rule = cfg.rule_params();
        let steps = 100usize;
        let silent = vec![Vec::new(); steps];
        let pre: Vec<SpikeTrain> = (0..4)
            .map(|i| {
                if i == 0 {
                    SpikeTrain::from_steps(vec![40, 60, 90]).unwrap()
                } else {
                    SpikeTrain::new()
                }
            })
            .collect();
        let mut counter = UpdateCounter::new(1);
        for _ in 0..5 {
            replay_fc_supervised(&mut fc, &silent, &pre, 1, 0.5, &rule, &mut counter, 0);
        }
        assert!(
            fc.weights[fc.idx(0, 1)] > 0.1,
            "active afferent weight should grow, got {}",
            fc.weights[fc.idx(0, 1)]
        );
        // Inactive afferents and the rival column stay at zero.
        for j in 1..4 {
            assert_eq!(fc.weights[fc.idx(j, 1)], 0.0);
        }
        for j in 0..4 {
            assert_eq!(fc.weights[fc.idx(j, 0)], 0.0);
        }
        // Five potentiation passes, no depression passes (nothing fired).
        assert_eq!(counter.writes, 5 * 4);
    }

    #[test]
    fn evaluate_rejects_empty_sets_and_bad_labels() {
        let cfg = toy_config(2, 10);
        let ses = session(&cfg);
        let mut net = Network::from_config(&cfg).unwrap();
        let empty = Dataset {
            images: vec![],
            labels: vec![],
            class_names: vec!["a".into(), "b".into()],
            source_checksums: vec![],
            ids: vec![],
        };
        assert!(evaluate(&mut net, &empty, &ses, UpdateCounter::new(3), vec![]).is_err());
        let mut bad = blob_dataset(2, 1, 10);
        bad.labels[0] = 9;
        let mut counter = UpdateCounter::new(3);
        assert!(train_supervised_final(&mut net, &bad, None, &ses, &mut counter, Instant::now()).is_err());
    }

    #[test]
    fn snapshot_round_trip_preserves_behavior() {
        let mut cfg = toy_config(2, 10);
        cfg.sup_epochs = Some(3);
        let ds = blob_dataset(2, 3, 10);
        let outcome = run_training(&cfg, &ds, &ds).unwrap();
        let snap = outcome.network.snapshot().unwrap();
        let bytes = snap.to_bytes().unwrap();
        let loaded = NetworkSnapshot::read_from(&mut bytes.as_slice()).unwrap();
        let mut restored = Network::from_snapshot(
            &loaded,
            cfg.network_spec().unwrap(),
            cfg.lif_conv(),
            cfg.lif_fc(),
        )
        .unwrap();
        let mut original = outcome.network;
        let ses = session(&cfg);
        for i in 0..ds.len() {
            let a = classify(&mut original, &ds.images[i], ds.ids[i], &ses).unwrap();
            let b = classify(&mut restored, &ds.images[i], ds.ids[i], &ses).unwrap();
            assert_eq!(a, b, "sample {i}");
        }
    }
}
