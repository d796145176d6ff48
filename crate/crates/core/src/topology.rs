//! Network structure: layer specifications, dimension chaining, weight
//! storage with sharing, trainable-parameter counting, and the exact
//! synaptic-update counter used as the energy proxy.

use crate::error::{CsnnError, Result};
use crate::plasticity::CombinedRuleParams;
use crate::rng::{derive_rng, stream};
use crate::sim::{LifParams, LifState};
use rand::Rng;

pub const ARCH_NAMES: [&str; 3] = ["1C-1S-FC", "2C-1S-FC", "2C-1S-2C-FC"];

/// One layer. Conv stride is fixed at 1 with valid padding; pooling is 2x2
/// with stride 2 over spike counts in tumbling windows of `count_window_ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv { kernels: usize, kernel_size: usize },
    Pool { count_window_ms: f64 },
    FullyConnected { num_outputs: usize },
}

/// Channel-height-width extent of a layer's output map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LayerDims {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Whole-network description: input extent plus the ordered layer list,
/// ending in exactly one fully connected classifier layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub arch_name: String,
    pub input_h: usize,
    pub input_w: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Build one of the named presets. `conv_kernels` and `kernel_sizes`
    /// supply one entry per conv layer (a single entry is broadcast).
    pub fn preset(
        arch_name: &str,
        input_h: usize,
        input_w: usize,
        conv_kernels: &[usize],
        kernel_sizes: &[usize],
        pool_window_ms: f64,
        classes: usize,
    ) -> Result<Self> {
        let conv_count = match arch_name {
            "1C-1S-FC" => 1,
            "2C-1S-FC" => 2,
            "2C-1S-2C-FC" => 4,
            other => {
                return Err(CsnnError::config(format!(
                    "unknown architecture '{other}', expected one of {ARCH_NAMES:?} or custom layers"
                )))
            }
        };
        let pick = |list: &[usize], i: usize, what: &str| -> Result<usize> {
            match list {
                [] => Err(CsnnError::config(format!("no {what} given"))),
                [one] => Ok(*one),
                many => many.get(i).copied().ok_or_else(|| {
                    CsnnError::config(format!(
                        "{what} lists {} entries but the architecture has {conv_count} conv layers",
                        many.len()
                    ))
                }),
            }
        };
        if conv_kernels.len() > 1 && conv_kernels.len() != conv_count {
            return Err(CsnnError::config(format!(
                "arch {arch_name} needs {conv_count} kernel counts, got {}",
                conv_kernels.len()
            )));
        }
        if kernel_sizes.len() > 1 && kernel_sizes.len() != conv_count {
            return Err(CsnnError::config(format!(
                "arch {arch_name} needs {conv_count} kernel sizes, got {}",
                kernel_sizes.len()
            )));
        }
        let mut layers = Vec::new();
        let mut conv_idx = 0;
        let mut push_conv = |layers: &mut Vec<LayerSpec>| -> Result<()> {
            layers.push(LayerSpec::Conv {
                kernels: pick(conv_kernels, conv_idx, "conv kernel count")?,
                kernel_size: pick(kernel_sizes, conv_idx, "conv kernel size")?,
            });
            conv_idx += 1;
            Ok(())
        };
        match arch_name {
            "1C-1S-FC" => {
                push_conv(&mut layers)?;
                layers.push(LayerSpec::Pool { count_window_ms: pool_window_ms });
            }
            "2C-1S-FC" => {
                push_conv(&mut layers)?;
                push_conv(&mut layers)?;
                layers.push(LayerSpec::Pool { count_window_ms: pool_window_ms });
            }
            "2C-1S-2C-FC" => {
                push_conv(&mut layers)?;
                push_conv(&mut layers)?;
                layers.push(LayerSpec::Pool { count_window_ms: pool_window_ms });
                push_conv(&mut layers)?;
                push_conv(&mut layers)?;
            }
            _ => unreachable!(),
        }
        layers.push(LayerSpec::FullyConnected { num_outputs: classes });
        let spec = NetworkSpec {
            arch_name: arch_name.to_string(),
            input_h,
            input_w,
            layers,
        };
        spec.dims_chain()?;
        Ok(spec)
    }

    pub fn input_dims(&self) -> LayerDims {
        LayerDims { channels: 1, height: self.input_h, width: self.input_w }
    }

    /// Output dims of every layer, validating the whole chain: conv shrinks
    /// by k - 1 per axis, pooling floor-halves (odd trailing rows/columns
    /// are truncated), the final layer must be the single FC classifier.
    pub fn dims_chain(&self) -> Result<Vec<LayerDims>> {
        if self.input_h == 0 || self.input_w == 0 {
            return Err(CsnnError::config("input dimensions must be positive"));
        }
        if self.layers.is_empty() {
            return Err(CsnnError::config("network needs at least one layer"));
        }
        let mut dims = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_dims();
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            match *layer {
                LayerSpec::Conv { kernels, kernel_size } => {
                    if kernels == 0 {
                        return Err(CsnnError::config("conv layer needs at least one kernel"));
                    }
                    if kernel_size % 2 == 0 || kernel_size == 0 {
                        return Err(CsnnError::config(format!(
                            "conv kernel size must be odd, got {kernel_size}"
                        )));
                    }
                    if kernel_size > cur.height || kernel_size > cur.width {
                        return Err(CsnnError::config(format!(
                            "conv kernel {kernel_size} does not fit input {}x{}",
                            cur.height, cur.width
                        )));
                    }
                    cur = LayerDims {
                        channels: kernels,
                        height: cur.height - kernel_size + 1,
                        width: cur.width - kernel_size + 1,
                    };
                }
                LayerSpec::Pool { count_window_ms } => {
                    if !(count_window_ms > 0.0) {
                        return Err(CsnnError::config("pool count window must be positive"));
                    }
                    if cur.height < 2 || cur.width < 2 {
                        return Err(CsnnError::config(format!(
                            "pool input {}x{} too small for a 2x2 window",
                            cur.height, cur.width
                        )));
                    }
                    cur = LayerDims {
                        channels: cur.channels,
                        height: cur.height / 2,
                        width: cur.width / 2,
                    };
                }
                LayerSpec::FullyConnected { num_outputs } => {
                    if !last {
                        return Err(CsnnError::config("fully connected layer must be last"));
                    }
                    if num_outputs == 0 {
                        return Err(CsnnError::config("classifier needs at least one output"));
                    }
                    cur = LayerDims { channels: num_outputs, height: 1, width: 1 };
                }
            }
            dims.push(cur);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::FullyConnected { .. })) {
            return Err(CsnnError::config("network must end in a fully connected layer"));
        }
        Ok(dims)
    }

    /// Input dims seen by layer `i` (output of layer `i - 1`).
    pub fn layer_input_dims(&self, i: usize) -> Result<LayerDims> {
        if i == 0 {
            Ok(self.input_dims())
        } else {
            Ok(self.dims_chain()?[i - 1])
        }
    }
}

/// Shared conv kernels: weight layout is [kernel][in_channel][ky][kx].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernels {
    pub kernels: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub weights: Vec<f64>,
}

impl ConvKernels {
    pub fn tap_count(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    #[inline]
    pub fn idx(&self, kernel: usize, in_ch: usize, ky: usize, kx: usize) -> usize {
        ((kernel * self.in_channels + in_ch) * self.kernel_size + ky) * self.kernel_size + kx
    }
}

/// Dense classifier weights, input-major: weights[j * outputs + i].
#[derive(Debug, Clone, PartialEq)]
pub struct FcWeights {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
}

impl FcWeights {
    #[inline]
    pub fn idx(&self, input: usize, output: usize) -> usize {
        input * self.outputs + output
    }
}

/// Per-layer weights. Pool layers have fixed one-to-one unit connections and
/// carry no trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Conv(ConvKernels),
    Pool,
    Fc(FcWeights),
}

/// All trainable weights of a network, indexed parallel to the spec layers.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    pub layers: Vec<LayerWeights>,
}

impl WeightStore {
    /// Total mutable entries, by enumeration (the oracle for the closed form).
    pub fn enumerate_entries(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerWeights::Conv(c) => c.weights.len(),
                LayerWeights::Pool => 0,
                LayerWeights::Fc(f) => f.weights.len(),
            })
            .sum()
    }

    pub fn all_in_box(&self, w_min: f64, w_max: f64) -> bool {
        self.layers.iter().all(|l| {
            let ws: &[f64] = match l {
                LayerWeights::Conv(c) => &c.weights,
                LayerWeights::Pool => &[],
                LayerWeights::Fc(f) => &f.weights,
            };
            ws.iter().all(|w| (w_min..=w_max).contains(w))
        })
    }
}

/// Closed-form trainable parameter count: conv layers contribute
/// K * k^2 * in_channels, the classifier contributes inputs * outputs,
/// pooling contributes nothing.
pub fn count_trainable_params(spec: &NetworkSpec) -> Result<usize> {
    spec.dims_chain()?;
    let mut total = 0usize;
    let mut cur = spec.input_dims();
    for layer in &spec.layers {
        match *layer {
            LayerSpec::Conv { kernels, kernel_size } => {
                total += kernels * kernel_size * kernel_size * cur.channels;
                cur = LayerDims {
                    channels: kernels,
                    height: cur.height - kernel_size + 1,
                    width: cur.width - kernel_size + 1,
                };
            }
            LayerSpec::Pool { .. } => {
                cur = LayerDims { channels: cur.channels, height: cur.height / 2, width: cur.width / 2 };
            }
            LayerSpec::FullyConnected { num_outputs } => {
                total += cur.len() * num_outputs;
            }
        }
    }
    Ok(total)
}

/// Freshly built network: weights drawn uniformly from [w_min, w_max] and
/// neuron states at rest, fully determined by the seed.
pub fn build_network(
    spec: &NetworkSpec,
    seed: u64,
    rule: &CombinedRuleParams,
    lif: &LifParams,
) -> Result<(WeightStore, Vec<Vec<LifState>>)> {
    let dims = spec.dims_chain()?;
    let (w_min, w_max) = (rule.w_min, rule.powerlaw.w_max);
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut states = Vec::with_capacity(spec.layers.len());
    let mut cur = spec.input_dims();
    for (i, layer) in spec.layers.iter().enumerate() {
        let mut rng = derive_rng(seed, stream::WEIGHTS, i as u64);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| w_min + rng.gen::<f64>() * (w_max - w_min)).collect()
        };
        match *layer {
            LayerSpec::Conv { kernels, kernel_size } => {
                let n = kernels * kernel_size * kernel_size * cur.channels;
                layers.push(LayerWeights::Conv(ConvKernels {
                    kernels,
                    kernel_size,
                    in_channels: cur.channels,
                    weights: draw(n),
                }));
            }
            LayerSpec::Pool { .. } => layers.push(LayerWeights::Pool),
            LayerSpec::FullyConnected { num_outputs } => {
                layers.push(LayerWeights::Fc(FcWeights {
                    inputs: cur.len(),
                    outputs: num_outputs,
                    weights: draw(cur.len() * num_outputs),
                }));
            }
        }
        states.push(vec![LifState::rest(lif); dims[i].len()]);
        cur = dims[i];
    }
    Ok((WeightStore { layers }, states))
}

/// Exact read/write tallies per layer; one postsynaptic fire in a plastic
/// layer counts one read and one write per afferent synapse.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateCounter {
    pub reads: u64,
    pub writes: u64,
    pub per_layer: Vec<LayerCounts>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounts {
    pub reads: u64,
    pub writes: u64,
    pub fires: u64,
}

impl UpdateCounter {
    pub fn new(num_layers: usize) -> Self {
        UpdateCounter {
            reads: 0,
            writes: 0,
            per_layer: vec![LayerCounts::default(); num_layers],
        }
    }

    /// Record one postsynaptic fire touching `afferents` synapses.
    pub fn count_synapse_updates(&mut self, layer: usize, afferents: u64) {
        self.reads += afferents;
        self.writes += afferents;
        let slot = &mut self.per_layer[layer];
        slot.reads += afferents;
        slot.writes += afferents;
        slot.fires += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mnist_spec(k_count: usize, k_size: usize) -> NetworkSpec {
        NetworkSpec::preset("1C-1S-FC", 28, 28, &[k_count], &[k_size], 10.0, 10).unwrap()
    }

    #[test]
    fn dims_chain_for_the_reference_arch() {
        let spec = mnist_spec(16, 5);
        let dims = spec.dims_chain().unwrap();
        assert_eq!(dims[0], LayerDims { channels: 16, height: 24, width: 24 });
        assert_eq!(dims[1], LayerDims { channels: 16, height: 12, width: 12 });
        assert_eq!(dims[2], LayerDims { channels: 10, height: 1, width: 1 });
    }

    #[test]
    fn dims_chain_rejects_bad_shapes() {
        assert!(NetworkSpec::preset("1C-1S-FC", 4, 4, &[4], &[5], 10.0, 10).is_err());
        assert!(NetworkSpec::preset("1C-1S-FC", 28, 28, &[4], &[4], 10.0, 10).is_err());
        assert!(NetworkSpec::preset("nope", 28, 28, &[4], &[5], 10.0, 10).is_err());
        let no_fc = NetworkSpec {
            arch_name: "custom".into(),
            input_h: 28,
            input_w: 28,
            layers: vec![LayerSpec::Conv { kernels: 4, kernel_size: 5 }],
        };
        assert!(no_fc.dims_chain().is_err());
        let empty = NetworkSpec { arch_name: "custom".into(), input_h: 8, input_w: 8, layers: vec![] };
        assert!(empty.dims_chain().is_err());
    }

    #[test]
    fn odd_pool_inputs_truncate() {
        // 28 -> conv k=3 -> 26 -> pool -> 13 -> conv k=3 -> 11 -> pool -> 5.
        let spec = NetworkSpec {
            arch_name: "custom".into(),
            input_h: 28,
            input_w: 28,
            layers: vec![
                LayerSpec::Conv { kernels: 4, kernel_size: 3 },
                LayerSpec::Pool { count_window_ms: 10.0 },
                LayerSpec::Conv { kernels: 6, kernel_size: 3 },
                LayerSpec::Pool { count_window_ms: 10.0 },
                LayerSpec::FullyConnected { num_outputs: 3 },
            ],
        };
        let dims = spec.dims_chain().unwrap();
        assert_eq!(dims[1].height, 13);
        assert_eq!(dims[3].height, 5);
        assert_eq!(dims[4].channels, 3);
    }

    #[test]
    fn param_count_reference_values() {
        assert_eq!(count_trainable_params(&mnist_spec(16, 5)).unwrap(), 23_440);
        assert_eq!(count_trainable_params(&mnist_spec(1, 1)).unwrap(), 1961);
    }

    #[test]
    fn param_count_matches_enumeration() {
        let rule = CombinedRuleParams::default();
        let lif = LifParams::default();
        for (arch, kernels, sizes) in [
            ("1C-1S-FC", vec![16], vec![5]),
            ("2C-1S-FC", vec![8, 12], vec![5, 3]),
            ("2C-1S-2C-FC", vec![6, 6, 8, 8], vec![5, 3, 3, 3]),
        ] {
            let spec = NetworkSpec::preset(arch, 40, 40, &kernels, &sizes, 10.0, 2).unwrap();
            let (store, _) = build_network(&spec, 5, &rule, &lif).unwrap();
            assert_eq!(
                count_trainable_params(&spec).unwrap(),
                store.enumerate_entries(),
                "{arch}"
            );
        }
    }

    #[test]
    fn build_is_seed_deterministic_and_boxed() {
        let spec = mnist_spec(4, 5);
        let rule = CombinedRuleParams::default();
        let lif = LifParams::default();
        let (a, states) = build_network(&spec, 77, &rule, &lif).unwrap();
        let (b, _) = build_network(&spec, 77, &rule, &lif).unwrap();
        let (c, _) = build_network(&spec, 78, &rule, &lif).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_in_box(rule.w_min, rule.powerlaw.w_max));
        assert_eq!(states[0].len(), 24 * 24 * 4);
        assert!(states[0].iter().all(|s| s.v_mem == lif.v_reset));
    }

    #[test]
    fn update_counter_tallies_exactly() {
        let mut ctr = UpdateCounter::new(2);
        for _ in 0..13 {
            ctr.count_synapse_updates(1, 2304);
        }
        assert_eq!(ctr.writes, 13 * 2304);
        assert_eq!(ctr.reads, ctr.writes);
        assert_eq!(ctr.per_layer[1].fires, 13);
        assert_eq!(ctr.per_layer[0].writes, 0);
        assert!(ctr.writes <= ctr.reads);
    }
}
