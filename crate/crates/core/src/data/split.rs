use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-image object limit; `Unlimited` keeps everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MaxObjects {
    AtMost(usize),
    Unlimited,
}

impl MaxObjects {
    pub fn admits(&self, count: usize) -> bool {
        match *self {
            MaxObjects::AtMost(n) => count <= n,
            MaxObjects::Unlimited => true,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MaxObjects::AtMost(n) => format!("max {n} obj."),
            MaxObjects::Unlimited => "no restriction".into(),
        }
    }
}

impl std::str::FromStr for MaxObjects {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "none" | "unlimited" | "∞" => Ok(MaxObjects::Unlimited),
            n => match n.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(MaxObjects::AtMost(v)),
                _ => Err(Error::InvalidArgument(format!("object limit `{s}` must be ≥ 1 or `inf`"))),
            },
        }
    }
}

impl std::fmt::Display for MaxObjects {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxObjects::AtMost(n) => write!(f, "{n}"),
            MaxObjects::Unlimited => write!(f, "inf"),
        }
    }
}

/// Keeps samples with at most `limit` objects, in order. `object_count`
/// abstracts over descriptor and decoded sample types.
pub fn filter_max_objects<T: Clone>(samples: &[T], limit: MaxObjects, object_count: impl Fn(&T) -> usize) -> Vec<T> {
    samples.iter().filter(|s| limit.admits(object_count(s))).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    /// Held-out samples from a separate pool; never drawn from the split input.
    pub test: Vec<T>,
    pub seed: u64,
}

/// Seeded shuffle, then the first ⌈0.9·n⌉ samples (at most n − 1, so
/// validation is never empty) go to training.
pub fn split_90_10<T: Clone>(samples: &[T], seed: u64) -> Result<DatasetSplit<T>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 samples to split, have {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 9).div_ceil(10).min(n - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..]),
        test: Vec::new(),
        seed,
    })
}
