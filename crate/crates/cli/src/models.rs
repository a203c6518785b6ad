//! Model configs by name or path, and detectors loaded from checkpoints or
//! int8 blobs.

use std::path::Path;

use anyhow::Context;
use clap::ValueEnum;
use serde::Serialize;

use microyolo_core::checkpoint::{load_quantized, Checkpoint};
use microyolo_core::config::{parse_model_config, HeadSpec, ModelConfig};
use microyolo_core::eval::{Detector, FakeQuantDetector};
use microyolo_core::network::{Network, QuantizedModel};

use crate::invalid;

const BUILT_IN: [(&str, fn() -> ModelConfig); 2] = [
    ("ref-88", ModelConfig::reference_single_class),
    ("ref-88-voc3", ModelConfig::reference_multi_class),
];

/// A config file path, or a built-in name with or without `.cfg`.
pub fn resolve_model(spec: &str) -> anyhow::Result<ModelConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        return parse_model_config(&text).with_context(|| format!("in {spec}"));
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or(spec);
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    BUILT_IN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, f)| f())
        .ok_or_else(|| {
            let names: Vec<&str> = BUILT_IN.iter().map(|(n, _)| *n).collect();
            invalid(format!("no config file `{spec}` and no built-in model of that name ({})", names.join(", ")))
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorPrecision {
    /// float32 weights and activations
    Float,
    /// float arithmetic on int8-representable values
    FakeQuant,
    /// integer-only int8 inference
    Int8,
}

pub enum LoadedDetector {
    Float(Network),
    FakeQuant(FakeQuantDetector),
    Int8(QuantizedModel),
}

impl LoadedDetector {
    pub fn as_detector(&self) -> &dyn Detector {
        match self {
            LoadedDetector::Float(n) => n,
            LoadedDetector::FakeQuant(f) => f,
            LoadedDetector::Int8(q) => q,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedDetector::Float(n) => n.config(),
            LoadedDetector::FakeQuant(f) => f.network.config(),
            LoadedDetector::Int8(q) => q.config(),
        }
    }

    pub fn head(&self) -> HeadSpec {
        self.config().head()
    }
}

/// Int8 blobs are recognized by their magic; anything else must be a
/// checkpoint.
pub fn load_detector(path: &Path, precision: DetectorPrecision) -> anyhow::Result<LoadedDetector> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"TYLQ") {
        if precision != DetectorPrecision::Int8 {
            return Err(invalid(format!("{} is an int8 blob; use --precision int8", path.display())));
        }
        return Ok(LoadedDetector::Int8(load_quantized(&bytes)?));
    }
    let ck = Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))?;
    let scales = || {
        ck.scales
            .clone()
            .ok_or_else(|| invalid(format!("{} has no quantization scales; run `quantize` first", path.display())))
    };
    Ok(match precision {
        DetectorPrecision::Float => LoadedDetector::Float(ck.network.clone()),
        DetectorPrecision::FakeQuant => LoadedDetector::FakeQuant(FakeQuantDetector {
            network: ck.network.clone(),
            scales: scales()?,
        }),
        DetectorPrecision::Int8 => LoadedDetector::Int8(QuantizedModel::from_network(&ck.network, &scales()?)?),
    })
}
