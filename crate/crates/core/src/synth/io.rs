//! `SLOTGEN1` binary format and its structured-text mirror.
//!
//! Binary layout, all little-endian: the 8-byte magic, `u32` slot count,
//! slot dimension, slot output dimension and hidden width, the `f64` leaky
//! slope, then the row-major `f64` weights and biases of both layers in order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::GeneratorSpec;
use super::SynthError;
use crate::mlp::{Mlp, MlpShape};

pub const GENERATOR_MAGIC: &[u8; 8] = b"SLOTGEN1";

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), SynthError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SynthError::Truncated,
        _ => SynthError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SynthError> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, SynthError> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerExport {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorExport {
    format: String,
    slots: usize,
    slot_dim: usize,
    slot_out: usize,
    hidden: usize,
    leaky_slope: f64,
    layers: Vec<LayerExport>,
}

impl GeneratorSpec {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), SynthError> {
        w.write_all(GENERATOR_MAGIC)?;
        for v in [self.slots(), self.slot_dim(), self.slot_out(), self.hidden()] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&self.leaky_slope().to_le_bytes())?;
        for p in self.slot_network().params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, SynthError> {
        let mut magic = [0u8; 8];
        read_exact_or_truncated(&mut r, &mut magic)?;
        if &magic != GENERATOR_MAGIC {
            return Err(SynthError::BadMagic);
        }
        let slots = read_u32(&mut r)? as usize;
        let slot_dim = read_u32(&mut r)? as usize;
        let slot_out = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let slope = read_f64(&mut r)?;
        if slots == 0 || slot_dim == 0 || slot_out == 0 || hidden == 0 {
            return Err(SynthError::Malformed("zero dimension in header".into()));
        }
        let shape = MlpShape::new(vec![slot_dim, hidden, slot_out]);
        let params = (0..shape.param_count()).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        GeneratorSpec::from_mlp(slots, Mlp::new(shape, params, slope))
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::read_binary(std::io::Cursor::new(std::fs::read(path)?))
    }

    /// Human-readable mirror of the binary format.
    pub fn to_text(&self) -> String {
        let mlp = self.slot_network();
        let layers = (0..2)
            .map(|l| {
                let w = mlp.weight(l);
                LayerExport {
                    weights: w.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    bias: mlp.bias(l).iter().copied().collect(),
                }
            })
            .collect();
        let export = GeneratorExport {
            format: String::from_utf8_lossy(GENERATOR_MAGIC).into_owned(),
            slots: self.slots(),
            slot_dim: self.slot_dim(),
            slot_out: self.slot_out(),
            hidden: self.hidden(),
            leaky_slope: self.leaky_slope(),
            layers,
        };
        toml::to_string(&export).expect("generator export serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let export: GeneratorExport = toml::from_str(text).map_err(|e| SynthError::Malformed(e.to_string()))?;
        if export.format.as_bytes() != GENERATOR_MAGIC {
            return Err(SynthError::BadMagic);
        }
        let shape = MlpShape::new(vec![export.slot_dim, export.hidden, export.slot_out]);
        let mut params = Vec::with_capacity(shape.param_count());
        if export.layers.len() != 2 {
            return Err(SynthError::Malformed(format!("expected 2 layers, found {}", export.layers.len())));
        }
        for (l, layer) in export.layers.iter().enumerate() {
            let (fan_in, fan_out) = shape.layer_dims(l);
            if layer.weights.len() != fan_out || layer.weights.iter().any(|r| r.len() != fan_in) || layer.bias.len() != fan_out {
                return Err(SynthError::Malformed(format!("layer {l} does not match the header dimensions")));
            }
            params.extend(layer.weights.iter().flatten());
            params.extend(&layer.bias);
        }
        GeneratorSpec::from_mlp(export.slots, Mlp::new(shape, params, export.leaky_slope))
    }
}
