//! Annotation ingestion, dataset restriction and splitting, image
//! preprocessing, and a synthetic shapes dataset.

mod annotation;
mod image;
mod split;
mod synth;
mod voc;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use self::annotation::{load_jsonl, write_jsonl};
pub use self::image::{preprocess, preprocess_to, resize_bilinear, INPUT_SIZE};
pub use self::split::{filter_max_objects, split_90_10, DatasetSplit, MaxObjects};
pub use self::synth::{synth_generate, SynthConfig, SHAPE_NAMES};
pub use self::voc::{load_voc_dir, parse_voc_xml, VocAnnotation};

use crate::error::{Error, Result};
use crate::head::GroundTruth;
use crate::tensor::Tensor;

/// An annotated image that has not been decoded yet.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDesc {
    pub image: PathBuf,
    pub boxes: Vec<GroundTruth>,
    pub source_id: String,
}

/// A decoded, preprocessed sample ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub boxes: Vec<GroundTruth>,
    pub source_id: String,
}

impl Sample {
    /// Mirror left-right; box centres follow.
    pub fn hflip(&self) -> Sample {
        let (c, h, w) = self.image.chw().expect("CHW image");
        let src = self.image.data();
        let mut data = vec![0.0f32; src.len()];
        for ch in 0..c {
            for y in 0..h {
                let row = (ch * h + y) * w;
                for x in 0..w {
                    data[row + x] = src[row + w - 1 - x];
                }
            }
        }
        Sample {
            image: Tensor::new(vec![c, h, w], data).expect("same shape"),
            boxes: self
                .boxes
                .iter()
                .map(|g| {
                    let mut g = *g;
                    g.bbox.cx = 1.0 - g.bbox.cx;
                    g
                })
                .collect(),
            source_id: self.source_id.clone(),
        }
    }
}

/// Decodes and preprocesses every descriptor. Decoding runs in parallel; the
/// result keeps the input order.
pub fn load_samples(descs: &[SampleDesc], height: usize, width: usize) -> Result<Vec<Sample>> {
    descs
        .par_iter()
        .map(|d| {
            let img = ::image::open(&d.image)?;
            Ok(Sample {
                image: preprocess_to(&img, height, width)?,
                boxes: d.boxes.clone(),
                source_id: d.source_id.clone(),
            })
        })
        .collect()
}

/// Explicit class-name to id mapping, one `name id` pair per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    ids: BTreeMap<String, usize>,
}

impl ClassTable {
    pub fn new(pairs: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let ids: BTreeMap<String, usize> = pairs.into_iter().collect();
        let mut seen: Vec<usize> = ids.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(Error::Dataset(format!("class ids must be exactly 0..{}", ids.len())));
        }
        Ok(Self { ids })
    }

    /// The three classes used for the multi-class detector.
    pub fn person_chair_car() -> Self {
        Self::new([("person".into(), 0), ("chair".into(), 1), ("car".into(), 2)]).expect("valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(name), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Dataset(format!("class table line {}: expected `name id`", i + 1)));
            };
            let id = id
                .parse()
                .map_err(|_| Error::Dataset(format!("class table line {}: bad id `{id}`", i + 1)))?;
            pairs.push((name.to_string(), id));
        }
        Self::new(pairs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Names ordered by id.
    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<(&str, usize)> = self.ids.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        v.sort_by_key(|&(_, id)| id);
        v.into_iter().map(|(k, _)| k).collect()
    }

    pub fn to_text(&self) -> String {
        self.names()
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n} {i}\n"))
            .collect()
    }
}
