//! Binary weights file.
//!
//! Layout (little-endian): `b"TFN1"`, `u32` layer count, then per layer
//! `u32 in_dim`, `u32 out_dim`, `u8 activation` (0 tanh, 1 identity),
//! then every weight matrix row-major as `f64`, then every bias vector.

use std::fs;
use std::path::Path;

use servoscope_core::nn::{Activation, Layer, LayerSpec, Network};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"TFN1";
const HEADER_BYTES_PER_LAYER: usize = 9;

pub fn encode(net: &Network) -> Vec<u8> {
    let layers = net.layers();
    let mut out = Vec::with_capacity(8 + layers.len() * HEADER_BYTES_PER_LAYER + net.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        out.extend_from_slice(&(layer.spec.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.spec.out_dim as u32).to_le_bytes());
        out.push(layer.spec.activation.code());
    }
    for layer in layers {
        for w in &layer.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    for layer in layers {
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Decodes a weights blob; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Network> {
    let bad = |msg: &str| HarnessError::format(origin, msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic bytes"));
    }
    let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    if count == 0 {
        return Err(bad("zero layers"));
    }
    if count.saturating_mul(HEADER_BYTES_PER_LAYER) > bytes.len() {
        return Err(bad("layer count exceeds file size"));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let in_dim = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let out_dim = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let code = r.take(1).ok_or_else(|| bad("truncated header"))?[0];
        let activation = Activation::from_code(code).ok_or_else(|| bad("unknown activation code"))?;
        specs.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
        });
    }
    let weight_total: usize = specs.iter().map(|s| s.in_dim.saturating_mul(s.out_dim)).fold(0, usize::saturating_add);
    let bias_total: usize = specs.iter().map(|s| s.out_dim).sum();
    let expected = weight_total.saturating_add(bias_total).saturating_mul(8);
    if bytes.len() - r.pos != expected {
        return Err(bad(&format!(
            "payload is {} bytes but the header describes {expected}",
            bytes.len() - r.pos
        )));
    }
    let weights: Vec<Vec<f64>> = specs
        .iter()
        .map(|s| r.f64s(s.in_dim * s.out_dim).ok_or_else(|| bad("truncated payload")))
        .collect::<Result<_>>()?;
    let layers = specs
        .iter()
        .zip(weights)
        .map(|(spec, weights)| {
            let bias = r.f64s(spec.out_dim).ok_or_else(|| bad("truncated payload"))?;
            Ok(Layer {
                spec: *spec,
                weights,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_layers(layers).map_err(|e| bad(&e.to_string()))
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes, path)
}
