//! Binary checkpoint (`TYLO`) and quantized export (`TYLQ`) formats.
//!
//! Both are little-endian. A checkpoint embeds the canonical config text,
//! training metadata, float32 weights and biases per weighted layer in
//! declaration order, and optionally the frozen quantization scales:
//!
//! ```text
//! "TYLO" u32 version
//! u32 config_len, config_len bytes of UTF-8 config text
//! u32 epoch, u8 phase, u64 seed
//! per weighted layer: f32 weights[], f32 biases[]      (sizes from config)
//! u8 has_scales; if 1: u32 n, f32 weight_scales[n], u32 m, f32 activation_scales[m]
//! ```
//!
//! The quantized blob is what a device would flash:
//!
//! ```text
//! "TYLQ" u32 version
//! [u8; 32] SHA-256 of the config text
//! u32 config_len, config text
//! f32 input_scale
//! u32 layer_count
//! per layer: u32 n, i8 weights[n], u32 m, i32 biases[m],
//!            f32 input_scale, f32 weight_scale, f32 output_scale,
//!            i32 requant_multiplier, u8 requant_shift
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::{parse_model_config, LayerSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::network::{LayerWeights, Network, QuantScales, QuantizedModel};
use crate::quant::{QuantParams, QuantizedLayer, QuantizedKind, Requantizer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TYLO";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const QUANTIZED_MAGIC: &[u8; 4] = b"TYLQ";
pub const QUANTIZED_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Float,
    Qat,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Float => "float",
            Phase::Qat => "qat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainMeta {
    /// Epochs completed across both phases.
    pub epoch: u32,
    pub phase: Phase,
    pub seed: u64,
}

#[derive(Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub scales: Option<QuantScales>,
    pub meta: TrainMeta,
}

// Weights would drown any error message that carries a checkpoint.
impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("model", &self.network.config().name())
            .field("meta", &self.meta)
            .field("has_scales", &self.scales.is_some())
            .finish_non_exhaustive()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_bytes(&mut out, self.network.config().to_text().as_bytes());
        put_u32(&mut out, self.meta.epoch);
        out.push(match self.meta.phase {
            Phase::Float => 0,
            Phase::Qat => 1,
        });
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        for w in self.network.weights() {
            put_f32s(&mut out, w.weight());
            put_f32s(&mut out, w.bias());
        }
        match &self.scales {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                for list in [&s.weights, &s.activations] {
                    put_u32(&mut out, list.len() as u32);
                    for q in list.iter() {
                        out.extend_from_slice(&q.scale().to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config = r.config()?;
        let epoch = r.u32()?;
        let phase = match r.u8()? {
            0 => Phase::Float,
            1 => Phase::Qat,
            other => return Err(Error::Format(format!("unknown phase tag {other}"))),
        };
        let seed = r.u64()?;
        let weights = config
            .weighted_layers()
            .map(|spec| {
                let mut w = LayerWeights::zeros_for(spec).expect("weighted");
                let (nw, nb) = spec.param_shape();
                let (wv, bv) = w.parts_mut();
                *wv = r.f32s(nw)?;
                *bv = r.f32s(nb)?;
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        let scales = match r.u8()? {
            0 => None,
            1 => {
                let mut lists = Vec::with_capacity(2);
                for _ in 0..2 {
                    let n = r.u32()? as usize;
                    let list = r
                        .f32s(n)?
                        .into_iter()
                        .map(QuantParams::new)
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::Format(e.to_string()))?;
                    lists.push(list);
                }
                let activations = lists.pop().expect("two lists");
                let weights = lists.pop().expect("two lists");
                Some(QuantScales { weights, activations })
            }
            other => return Err(Error::Format(format!("unknown scales tag {other}"))),
        };
        r.finish()?;
        let network = Network::new(config, weights)?;
        if let Some(s) = &scales {
            if s.weights.len() != network.weights().len() || s.activations.len() != network.activation_points() {
                return Err(Error::Format("scale counts do not match the config".into()));
            }
        }
        Ok(Self {
            network,
            scales,
            meta: TrainMeta { epoch, phase, seed },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn config_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Serializes an integer model. Fails when the network cannot be quantized
/// with the given scales (e.g. a bias overflowing i32).
pub fn export_quantized(network: &Network, scales: &QuantScales) -> Result<Vec<u8>> {
    Ok(quantized_to_bytes(&QuantizedModel::from_network(network, scales)?))
}

pub fn quantized_to_bytes(model: &QuantizedModel) -> Vec<u8> {
    let text = model.config().to_text();
    let mut out = Vec::new();
    out.extend_from_slice(QUANTIZED_MAGIC);
    put_u32(&mut out, QUANTIZED_VERSION);
    out.extend_from_slice(&config_digest(&text));
    put_bytes(&mut out, text.as_bytes());
    out.extend_from_slice(&model.input_params().scale().to_le_bytes());
    put_u32(&mut out, model.layers().len() as u32);
    for l in model.layers() {
        put_u32(&mut out, l.weights.len() as u32);
        out.extend(l.weights.iter().map(|&w| w as u8));
        put_u32(&mut out, l.bias.len() as u32);
        for b in &l.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for q in [l.input, l.weight, l.output] {
            out.extend_from_slice(&q.scale().to_le_bytes());
        }
        out.extend_from_slice(&l.requant.multiplier.to_le_bytes());
        out.push(l.requant.shift);
    }
    out
}

pub fn load_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader::new(bytes);
    r.magic(QUANTIZED_MAGIC)?;
    let version = r.u32()?;
    if version != QUANTIZED_VERSION {
        return Err(Error::Format(format!(
            "quantized blob version {version}, expected {QUANTIZED_VERSION}"
        )));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let text = r.string()?;
    if config_digest(&text) != digest {
        return Err(Error::Format("config digest mismatch".into()));
    }
    let config = parse_model_config(&text)?;
    let scale = |r: &mut Reader| -> Result<QuantParams> {
        QuantParams::new(r.f32()?).map_err(|e| Error::Format(e.to_string()))
    };
    let input = scale(&mut r)?;
    let count = r.u32()? as usize;
    let specs: Vec<LayerSpec> = config.weighted_layers().copied().collect();
    if count != specs.len() {
        return Err(Error::Format(format!("{count} layers, config has {}", specs.len())));
    }
    let relu_flags = crate::network::plan(&config)
        .into_iter()
        .filter_map(|s| match s {
            crate::network::Stage::Conv { relu, .. } | crate::network::Stage::Fc { relu, .. } => Some(relu),
            _ => None,
        })
        .collect::<Vec<_>>();
    let mut layers = Vec::with_capacity(count);
    for (spec, relu) in specs.iter().zip(relu_flags) {
        let kind = match *spec {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => QuantizedKind::Conv {
                in_channels,
                out_channels,
            },
            LayerSpec::Fc {
                in_features,
                out_features,
            } => QuantizedKind::Fc {
                in_features,
                out_features,
            },
            _ => unreachable!("weighted layers only"),
        };
        let n = r.u32()? as usize;
        let weights = r.take(n)?.iter().map(|&b| b as i8).collect();
        let m = r.u32()? as usize;
        let bias = (0..m).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let (qi, qw, qo) = (scale(&mut r)?, scale(&mut r)?, scale(&mut r)?);
        let multiplier = r.i32()?;
        let shift = r.u8()?;
        if !(1..=62).contains(&shift) || multiplier <= 0 {
            return Err(Error::Format(format!("invalid requantizer {multiplier} >> {shift}")));
        }
        let requant = Requantizer { multiplier, shift };
        layers.push(
            QuantizedLayer::from_parts(kind, weights, bias, qi, qw, qo, requant, relu)
                .map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    r.finish()?;
    QuantizedModel::new(config, input, layers).map_err(|e| Error::Format(e.to_string()))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated: need {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("config text is not UTF-8".into()))
    }

    fn config(&mut self) -> Result<ModelConfig> {
        parse_model_config(&self.string()?)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
