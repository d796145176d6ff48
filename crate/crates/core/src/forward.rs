//! Spiking forward propagation for the three layer kinds.
//!
//! Delivery convention: a spike emitted at step n is delivered at step n + 1.
//! Every function here receives the spikes *delivered* this step, so the
//! runner owns the one-step shift between layers.

use crate::error::Result;
use crate::sim::{commit_fire, lif_step, numeric_fault, LifParams, LifState, SimClock};
use crate::topology::{ConvKernels, FcWeights, LayerDims};

/// A neuron whose integrated potential crossed threshold this step. The
/// firing decision is left to the caller so lateral competition can veto it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireCandidate {
    pub flat: u32,
    pub overshoot: f64,
}

/// Integrate one conv layer step. Candidate states are left untouched and
/// must be resolved through `commit_conv_fires`; all other neurons have
/// their membrane updated in place.
///
/// The per-neuron update is the fused form of `integrate`: refractory pin,
/// one leak-and-add, finiteness guard, threshold compare. Fusing it here
/// keeps the full-layer sweep a tight loop; the reference semantics are
/// pinned by a property test against the `integrate`-based loop.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward_step(
    delivered: &[u32],
    kern: &ConvKernels,
    in_dims: LayerDims,
    out_dims: LayerDims,
    states: &mut [LifState],
    lif: &LifParams,
    clock: &SimClock,
    drive: &mut Vec<f64>,
) -> Result<Vec<FireCandidate>> {
    debug_assert_eq!(states.len(), out_dims.len());
    let (ih, iw) = (in_dims.height, in_dims.width);
    let (oh, ow) = (out_dims.height, out_dims.width);
    let k = kern.kernel_size;
    drive.clear();
    drive.resize(out_dims.len(), 0.0);
    for &flat in delivered {
        let flat = flat as usize;
        debug_assert!(flat < in_dims.len());
        let c = flat / (ih * iw);
        let rem = flat % (ih * iw);
        let (y, x) = (rem / iw, rem % iw);
        // Receptive fields are valid-only: output (oy, ox) sees input
        // (oy + ky, ox + kx), so this input position drives oy = y - ky.
        let ky_lo = y.saturating_sub(oh - 1);
        let ky_hi = (k - 1).min(y);
        let kx_lo = x.saturating_sub(ow - 1);
        let kx_hi = (k - 1).min(x);
        if ky_lo > ky_hi || kx_lo > kx_hi {
            continue;
        }
        for m in 0..kern.kernels {
            let map_base = m * oh * ow;
            for ky in ky_lo..=ky_hi {
                let oy = y - ky;
                let row = map_base + oy * ow;
                let wrow = kern.idx(m, c, ky, 0);
                for kx in kx_lo..=kx_hi {
                    drive[row + (x - kx)] += kern.weights[wrow + kx];
                }
            }
        }
    }
    let mut candidates = Vec::new();
    let decay = lif.decay_factor(clock.dt_ms());
    let step = clock.step();
    for (i, (state, &d)) in states.iter_mut().zip(drive.iter()).enumerate() {
        if step < state.refractory_until {
            state.v_mem = lif.v_reset;
            continue;
        }
        if !d.is_finite() {
            return Err(numeric_fault("synaptic drive", d, clock));
        }
        let v = state.v_mem * decay + d;
        if !v.is_finite() {
            return Err(numeric_fault("membrane potential", v, clock));
        }
        let thresh = lif.v_thresh + state.theta_adapt;
        if v >= thresh {
            candidates.push(FireCandidate { flat: i as u32, overshoot: v - thresh });
        } else {
            state.v_mem = v;
        }
    }
    Ok(candidates)
}

/// Winner-take-all across feature maps: greedily accept the strongest
/// overshoot (ties to the lowest flat index) and suppress every other
/// candidate within the Chebyshev `radius` of its spatial position, in any
/// map. Returns the accept mask, parallel to `candidates`.
///
/// Selection walks candidates in priority order off a max-heap and keeps a
/// plane of spatially claimed positions: a candidate on a claimed position is
/// suppressed, anything else wins and claims its neighborhood. Once every
/// position is claimed no further candidate can win, so the walk stops early;
/// with saturated layers this touches a few dozen entries instead of
/// comparing every winner against every candidate.
pub fn wta_select(candidates: &[FireCandidate], out_dims: LayerDims, radius: u32) -> Vec<bool> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    struct Entry {
        overshoot: f64,
        flat: u32,
        idx: u32,
    }
    impl PartialEq for Entry {
        fn eq(&self, other: &Self) -> bool {
            self.cmp(other) == Ordering::Equal
        }
    }
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            // Max-heap priority: higher overshoot, then lower flat index.
            // Overshoots are finite and never negative zero, so total_cmp
            // agrees with the arithmetic order.
            self.overshoot
                .total_cmp(&other.overshoot)
                .then_with(|| other.flat.cmp(&self.flat))
        }
    }

    let n = candidates.len();
    let mut winner = vec![false; n];
    if n == 0 {
        return winner;
    }
    let (h, w) = (out_dims.height, out_dims.width);
    let spatial = h * w;
    let mut heap: BinaryHeap<Entry> = candidates
        .iter()
        .enumerate()
        .map(|(idx, c)| Entry { overshoot: c.overshoot, flat: c.flat, idx: idx as u32 })
        .collect();
    let mut claimed = vec![false; spatial];
    let mut open = spatial;
    let r = radius as usize;
    while let Some(top) = heap.pop() {
        let rem = top.flat as usize % spatial;
        if claimed[rem] {
            continue;
        }
        winner[top.idx as usize] = true;
        let (y, x) = (rem / w, rem % w);
        for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
            let row = yy * w;
            for cell in &mut claimed[row + x.saturating_sub(r)..=row + (x + r).min(w - 1)] {
                if !*cell {
                    *cell = true;
                    open -= 1;
                }
            }
        }
        if open == 0 {
            break;
        }
    }
    winner
}

/// Resolve conv candidates: accepted ones fire (reset, refractory, stamp)
/// and are returned as emissions; suppressed ones are reset without firing.
pub fn commit_conv_fires(
    candidates: &[FireCandidate],
    accept: &[bool],
    states: &mut [LifState],
    lif: &LifParams,
    clock: &SimClock,
) -> Vec<u32> {
    debug_assert_eq!(candidates.len(), accept.len());
    let mut emitted = Vec::new();
    for (cand, &take) in candidates.iter().zip(accept) {
        let state = &mut states[cand.flat as usize];
        if take {
            commit_fire(state, lif, clock);
            emitted.push(cand.flat);
        } else {
            state.v_mem = lif.v_reset;
        }
    }
    emitted
}

/// Spike-count max pooling over 2x2 windows with stride 2, per feature map.
///
/// Time splits into tumbling count windows. Within a window each pooling
/// unit counts its four input positions' delivered spikes; at the window
/// boundary the position with the highest count (ties: most recent spike,
/// then lowest flat index) is selected, and its recorded spikes are replayed
/// one-for-one at the same offsets during the next window. The first window
/// therefore forwards nothing, and a unit's output count per window never
/// exceeds the best input count of the previous window.
#[derive(Debug, Clone)]
pub struct PoolLayer {
    in_dims: LayerDims,
    out_dims: LayerDims,
    window_steps: u32,
    counts: Vec<u32>,
    last_spike: Vec<u32>,
    rec: Vec<Vec<u16>>,
    emit_at: Vec<Vec<u32>>,
}

const NO_SPIKE: u32 = u32::MAX;

impl PoolLayer {
    pub fn new(in_dims: LayerDims, out_dims: LayerDims, count_window_ms: f64, dt_ms: f64) -> Self {
        let window_steps = (count_window_ms / dt_ms).round().max(1.0) as u32;
        let n_in = in_dims.len();
        PoolLayer {
            in_dims,
            out_dims,
            window_steps,
            counts: vec![0; n_in],
            last_spike: vec![NO_SPIKE; n_in],
            rec: vec![Vec::new(); n_in],
            emit_at: vec![Vec::new(); window_steps as usize],
        }
    }

    pub fn window_steps(&self) -> u32 {
        self.window_steps
    }

    /// Clear all window state between presentations.
    pub fn reset(&mut self) {
        self.counts.fill(0);
        self.last_spike.fill(NO_SPIKE);
        self.rec.iter_mut().for_each(Vec::clear);
        self.emit_at.iter_mut().for_each(Vec::clear);
    }

    fn rotate(&mut self) {
        self.emit_at.iter_mut().for_each(Vec::clear);
        let (oh, ow) = (self.out_dims.height, self.out_dims.width);
        let (ih, iw) = (self.in_dims.height, self.in_dims.width);
        for c in 0..self.out_dims.channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let out_flat = ((c * oh) + oy) * ow + ox;
                    let mut best: Option<usize> = None;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let f = ((c * ih) + 2 * oy + dy) * iw + 2 * ox + dx;
                            if self.counts[f] == 0 {
                                continue;
                            }
                            best = match best {
                                None => Some(f),
                                Some(b) => {
                                    let better = self.counts[f] > self.counts[b]
                                        || (self.counts[f] == self.counts[b]
                                            && self.more_recent_or_lower(f, b));
                                    Some(if better { f } else { b })
                                }
                            };
                        }
                    }
                    if let Some(winner) = best {
                        for &off in &self.rec[winner] {
                            self.emit_at[off as usize].push(out_flat as u32);
                        }
                    }
                }
            }
        }
        self.counts.fill(0);
        self.last_spike.fill(NO_SPIKE);
        self.rec.iter_mut().for_each(Vec::clear);
    }

    /// Tie rule between equal counts: most recent spike wins, then the lower
    /// flat index. `f` is the challenger, `b` the incumbent (lower index).
    fn more_recent_or_lower(&self, f: usize, b: usize) -> bool {
        // Both have nonzero counts, so both last_spike values are real.
        self.last_spike[f] > self.last_spike[b]
    }

    /// Advance one step: rotate at window boundaries, count deliveries, and
    /// append this step's replayed emissions to `out`.
    pub fn step(&mut self, delivered: &[u32], clock: &SimClock, out: &mut Vec<u32>) {
        let offset = clock.step() % self.window_steps;
        if offset == 0 {
            self.rotate();
        }
        for &f in delivered {
            let f = f as usize;
            self.counts[f] += 1;
            self.last_spike[f] = clock.step();
            self.rec[f].push(offset as u16);
        }
        out.extend_from_slice(&self.emit_at[offset as usize]);
    }
}

/// Dense classifier layer step: sum delivered rows, integrate every output
/// neuron, return the fired indices.
pub fn fc_forward_step(
    delivered: &[u32],
    fc: &FcWeights,
    states: &mut [LifState],
    lif: &LifParams,
    clock: &SimClock,
    drive: &mut Vec<f64>,
) -> Result<Vec<u32>> {
    debug_assert_eq!(states.len(), fc.outputs);
    drive.clear();
    drive.resize(fc.outputs, 0.0);
    for &j in delivered {
        let row = &fc.weights[j as usize * fc.outputs..(j as usize + 1) * fc.outputs];
        for (d, w) in drive.iter_mut().zip(row) {
            *d += w;
        }
    }
    let mut fired = Vec::new();
    for (i, state) in states.iter_mut().enumerate() {
        if lif_step(state, lif, drive[i], clock)? {
            fired.push(i as u32);
        }
    }
    Ok(fired)
}
