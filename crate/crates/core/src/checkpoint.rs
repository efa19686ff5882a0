//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SDD1"
//! u32 channels, u32 height, u32 width
//! u32 layer count
//! per layer: u8 kind (0 pool, 1 flatten, 2 dense), then
//!   pool:  u32 kernel
//!   dense: u32 in, u32 out, f64 threshold, f64 voltage_decay,
//!          f64 current_decay, f64 tau_grad, f64 scale_grad,
//!          u8 mode (0 single, 1 cuba), f64 dropout_p
//! per dense layer: out*in f32 weights, row-major
//! u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{InputGeometry, LayerSpec, NetworkModel};
use crate::neuron::{LifParams, NeuronMode};
use crate::tensor::Matrix;
use crate::Real;

const MAGIC: &[u8; 4] = b"SDD1";

pub fn encode<F: Real>(model: &NetworkModel<F>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let g = model.input_geometry();
    for d in [g.channels, g.height, g.width, model.layers().len()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for layer in model.layers() {
        match layer {
            LayerSpec::Pool { kernel } => {
                buf.push(0);
                buf.extend_from_slice(&(*kernel as u32).to_le_bytes());
            }
            LayerSpec::Flatten => buf.push(1),
            LayerSpec::Dense {
                in_units,
                out_units,
                neuron,
                dropout_p,
            } => {
                buf.push(2);
                buf.extend_from_slice(&(*in_units as u32).to_le_bytes());
                buf.extend_from_slice(&(*out_units as u32).to_le_bytes());
                for v in [
                    neuron.threshold,
                    neuron.voltage_decay,
                    neuron.current_decay,
                    neuron.tau_grad,
                    neuron.scale_grad,
                ] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.push(match neuron.mode {
                    NeuronMode::Single => 0,
                    NeuronMode::Cuba => 1,
                });
                buf.extend_from_slice(&dropout_p.to_le_bytes());
            }
        }
    }
    for w in model.weights() {
        for v in w.as_slice() {
            buf.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(self.path, "unexpected end of checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<NetworkModel<f32>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(Error::corrupt(path, "bad magic, expected SDD1"));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(Error::corrupt(path, "CRC mismatch"));
    }
    let mut r = Reader {
        bytes: payload,
        pos: 4,
        path,
    };
    let input = InputGeometry::new(r.u32()?, r.u32()?, r.u32()?);
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            0 => LayerSpec::Pool { kernel: r.u32()? },
            1 => LayerSpec::Flatten,
            2 => {
                let in_units = r.u32()?;
                let out_units = r.u32()?;
                let (threshold, voltage_decay, current_decay, tau_grad, scale_grad) =
                    (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let mode = match r.u8()? {
                    0 => NeuronMode::Single,
                    1 => NeuronMode::Cuba,
                    m => return Err(Error::corrupt(path, format!("unknown neuron mode {m}"))),
                };
                LayerSpec::Dense {
                    in_units,
                    out_units,
                    neuron: LifParams {
                        threshold,
                        voltage_decay,
                        current_decay,
                        tau_grad,
                        scale_grad,
                        mode,
                    },
                    dropout_p: r.f64()?,
                }
            }
            k => return Err(Error::corrupt(path, format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let mut weights = Vec::new();
    for layer in &layers {
        if let LayerSpec::Dense {
            in_units,
            out_units,
            ..
        } = *layer
        {
            let data = (0..in_units * out_units)
                .map(|_| r.f32())
                .collect::<Result<Vec<_>>>()?;
            weights.push(Matrix::from_vec(out_units, in_units, data)?);
        }
    }
    if r.pos != payload.len() {
        return Err(Error::corrupt(path, "trailing bytes before CRC"));
    }
    NetworkModel::new(input, layers, weights)
        .map_err(|e| Error::corrupt(path, format!("inconsistent model: {e}")))
}

pub fn save<F: Real>(model: &NetworkModel<F>, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetworkModel<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
