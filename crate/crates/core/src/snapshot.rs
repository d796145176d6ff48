//! Weight snapshot container, format version 1.
//!
//! Layout, all integers and floats little-endian:
//!   magic "CSNN" | version u32 | arch name (u32 length + UTF-8) |
//!   seed u64 | layer count u32 | layer records.
//! Each record starts with a kind byte (1 conv, 2 pool, 3 fc) and its
//! dimensions, then the weight entries as 64-bit floats in storage order.
//! The classifier record also carries the per-class adaptive threshold so a
//! loaded network classifies exactly as the trained one did.

use crate::error::{CsnnError, Result};
use crate::topology::{ConvKernels, FcWeights, LayerWeights, NetworkSpec, WeightStore};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CSNN";
pub const FORMAT_VERSION: u32 = 1;

const KIND_CONV: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_FC: u8 = 3;

// Caps protect the loader from allocating absurd buffers for corrupt counts.
const MAX_NAME_LEN: u32 = 1 << 10;
const MAX_ENTRIES: u64 = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotLayer {
    Conv {
        in_channels: u32,
        in_h: u32,
        in_w: u32,
        kernels: u32,
        kernel_size: u32,
        weights: Vec<f64>,
    },
    Pool {
        in_channels: u32,
        in_h: u32,
        in_w: u32,
        window_ms: f64,
    },
    Fc {
        inputs: u32,
        outputs: u32,
        weights: Vec<f64>,
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    pub arch_name: String,
    pub seed: u64,
    pub layers: Vec<SnapshotLayer>,
}

fn bad(msg: impl Into<String>) -> CsnnError {
    CsnnError::snapshot(msg)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            bad(format!("truncated while reading {what}"))
        } else {
            CsnnError::Io(e)
        }
    })
}

fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

fn read_f64_vec(r: &mut impl Read, n: u64, what: &str) -> Result<Vec<f64>> {
    if n > MAX_ENTRIES {
        return Err(bad(format!("{what}: implausible entry count {n}")));
    }
    let mut out = Vec::with_capacity(n as usize);
    let mut chunk = vec![0u8; 8 * (n as usize).clamp(1, 1024)];
    let mut remaining = n as usize;
    while remaining > 0 {
        let take = (chunk.len() / 8).min(remaining);
        let buf = &mut chunk[..take * 8];
        read_exact(r, buf, what)?;
        for b in buf.chunks_exact(8) {
            out.push(f64::from_le_bytes(b.try_into().unwrap()));
        }
        remaining -= take;
    }
    Ok(out)
}

fn write_f64_slice(w: &mut impl Write, vals: &[f64]) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

impl NetworkSnapshot {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let name = self.arch_name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            match layer {
                SnapshotLayer::Conv { in_channels, in_h, in_w, kernels, kernel_size, weights } => {
                    w.write_all(&[KIND_CONV])?;
                    for v in [in_channels, in_h, in_w, kernels, kernel_size] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    write_f64_slice(w, weights)?;
                }
                SnapshotLayer::Pool { in_channels, in_h, in_w, window_ms } => {
                    w.write_all(&[KIND_POOL])?;
                    for v in [in_channels, in_h, in_w] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    w.write_all(&window_ms.to_le_bytes())?;
                }
                SnapshotLayer::Fc { inputs, outputs, weights, theta } => {
                    w.write_all(&[KIND_FC])?;
                    w.write_all(&inputs.to_le_bytes())?;
                    w.write_all(&outputs.to_le_bytes())?;
                    write_f64_slice(w, weights)?;
                    write_f64_slice(w, theta)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(bad("not a weight snapshot (bad magic)"));
        }
        let version = read_u32(r, "format version")?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported snapshot version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let name_len = read_u32(r, "arch name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(bad(format!("implausible arch name length {name_len}")));
        }
        let mut name_buf = vec![0u8; name_len as usize];
        read_exact(r, &mut name_buf, "arch name")?;
        let arch_name =
            String::from_utf8(name_buf).map_err(|_| bad("arch name is not valid UTF-8"))?;
        let seed = read_u64(r, "seed")?;
        let layer_count = read_u32(r, "layer count")?;
        if layer_count > 64 {
            return Err(bad(format!("implausible layer count {layer_count}")));
        }
        let mut layers = Vec::with_capacity(layer_count as usize);
        for li in 0..layer_count {
            let kind = read_u8(r, "layer kind")?;
            let layer = match kind {
                KIND_CONV => {
                    let in_channels = read_u32(r, "conv in_channels")?;
                    let in_h = read_u32(r, "conv in_h")?;
                    let in_w = read_u32(r, "conv in_w")?;
                    let kernels = read_u32(r, "conv kernels")?;
                    let kernel_size = read_u32(r, "conv kernel_size")?;
                    let n = u64::from(kernels)
                        * u64::from(in_channels)
                        * u64::from(kernel_size)
                        * u64::from(kernel_size);
                    let weights = read_f64_vec(r, n, "conv weights")?;
                    SnapshotLayer::Conv { in_channels, in_h, in_w, kernels, kernel_size, weights }
                }
                KIND_POOL => {
                    let in_channels = read_u32(r, "pool in_channels")?;
                    let in_h = read_u32(r, "pool in_h")?;
                    let in_w = read_u32(r, "pool in_w")?;
                    let window_ms = read_f64(r, "pool window")?;
                    SnapshotLayer::Pool { in_channels, in_h, in_w, window_ms }
                }
                KIND_FC => {
                    let inputs = read_u32(r, "fc inputs")?;
                    let outputs = read_u32(r, "fc outputs")?;
                    let weights =
                        read_f64_vec(r, u64::from(inputs) * u64::from(outputs), "fc weights")?;
                    let theta = read_f64_vec(r, u64::from(outputs), "fc thresholds")?;
                    SnapshotLayer::Fc { inputs, outputs, weights, theta }
                }
                other => return Err(bad(format!("layer {li}: unknown kind byte {other}"))),
            };
            layers.push(layer);
        }
        let mut trailing = [0u8; 1];
        match r.read(&mut trailing) {
            Ok(0) => {}
            Ok(_) => return Err(bad("trailing bytes after last layer record")),
            Err(e) => return Err(CsnnError::Io(e)),
        }
        Ok(NetworkSnapshot { arch_name, seed, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Snapshot a live network. `fc_theta` holds the classifier's per-class
    /// adaptive threshold, parallel to its outputs.
    pub fn capture(
        spec: &NetworkSpec,
        store: &WeightStore,
        fc_theta: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let dims = spec.dims_chain()?;
        if store.layers.len() != spec.layers.len() {
            return Err(bad("weight store does not match the network spec"));
        }
        let mut layers = Vec::with_capacity(store.layers.len());
        for (i, lw) in store.layers.iter().enumerate() {
            let input = if i == 0 { spec.input_dims() } else { dims[i - 1] };
            match lw {
                LayerWeights::Conv(c) => layers.push(SnapshotLayer::Conv {
                    in_channels: c.in_channels as u32,
                    in_h: input.height as u32,
                    in_w: input.width as u32,
                    kernels: c.kernels as u32,
                    kernel_size: c.kernel_size as u32,
                    weights: c.weights.clone(),
                }),
                LayerWeights::Pool => {
                    let window_ms = match spec.layers[i] {
                        crate::topology::LayerSpec::Pool { count_window_ms } => count_window_ms,
                        _ => return Err(bad("weight store does not match the network spec")),
                    };
                    layers.push(SnapshotLayer::Pool {
                        in_channels: input.channels as u32,
                        in_h: input.height as u32,
                        in_w: input.width as u32,
                        window_ms,
                    });
                }
                LayerWeights::Fc(f) => {
                    if fc_theta.len() != f.outputs {
                        return Err(bad("classifier threshold count does not match outputs"));
                    }
                    layers.push(SnapshotLayer::Fc {
                        inputs: f.inputs as u32,
                        outputs: f.outputs as u32,
                        weights: f.weights.clone(),
                        theta: fc_theta.to_vec(),
                    });
                }
            }
        }
        Ok(NetworkSnapshot { arch_name: spec.arch_name.clone(), seed, layers })
    }

    /// Rebuild weights for `spec`, verifying the snapshot describes exactly
    /// that architecture. Returns the store and the classifier thresholds.
    pub fn restore(&self, spec: &NetworkSpec) -> Result<(WeightStore, Vec<f64>)> {
        if self.arch_name != spec.arch_name {
            return Err(bad(format!(
                "snapshot holds architecture '{}' but the configuration asks for '{}'",
                self.arch_name, spec.arch_name
            )));
        }
        let dims = spec.dims_chain()?;
        if self.layers.len() != spec.layers.len() {
            return Err(bad(format!(
                "snapshot has {} layers, configuration expects {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        let mut store_layers = Vec::with_capacity(self.layers.len());
        let mut theta = Vec::new();
        for (i, (snap, spec_layer)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let input = if i == 0 { spec.input_dims() } else { dims[i - 1] };
            let mismatch =
                |what: &str| bad(format!("layer {i}: snapshot {what} does not match configuration"));
            match (snap, *spec_layer) {
                (
                    SnapshotLayer::Conv { in_channels, in_h, in_w, kernels, kernel_size, weights },
                    crate::topology::LayerSpec::Conv { kernels: sk, kernel_size: ss },
                ) => {
                    if *in_channels as usize != input.channels
                        || *in_h as usize != input.height
                        || *in_w as usize != input.width
                    {
                        return Err(mismatch("conv input dims"));
                    }
                    if *kernels as usize != sk || *kernel_size as usize != ss {
                        return Err(mismatch("conv shape"));
                    }
                    store_layers.push(LayerWeights::Conv(ConvKernels {
                        kernels: sk,
                        kernel_size: ss,
                        in_channels: input.channels,
                        weights: weights.clone(),
                    }));
                }
                (
                    SnapshotLayer::Pool { in_channels, in_h, in_w, window_ms },
                    crate::topology::LayerSpec::Pool { count_window_ms },
                ) => {
                    if *in_channels as usize != input.channels
                        || *in_h as usize != input.height
                        || *in_w as usize != input.width
                    {
                        return Err(mismatch("pool input dims"));
                    }
                    if *window_ms != count_window_ms {
                        return Err(mismatch("pool count window"));
                    }
                    store_layers.push(LayerWeights::Pool);
                }
                (
                    SnapshotLayer::Fc { inputs, outputs, weights, theta: t },
                    crate::topology::LayerSpec::FullyConnected { num_outputs },
                ) => {
                    if *inputs as usize != input.len() || *outputs as usize != num_outputs {
                        return Err(mismatch("classifier shape"));
                    }
                    store_layers.push(LayerWeights::Fc(FcWeights {
                        inputs: input.len(),
                        outputs: num_outputs,
                        weights: weights.clone(),
                    }));
                    theta = t.clone();
                }
                _ => return Err(mismatch("layer kind")),
            }
        }
        Ok((WeightStore { layers: store_layers }, theta))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}
