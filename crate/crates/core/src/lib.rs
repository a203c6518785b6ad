pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod head;
pub mod network;
pub mod ops;
pub mod profile;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Types shared by the CLI and benches.
pub mod prelude {
    pub use crate::checkpoint::Checkpoint;
    pub use crate::config::{HeadSpec, LayerSpec, ModelConfig};
    pub use crate::data::{MaxObjects, Sample, SampleDesc};
    pub use crate::eval::{ApMethod, Detector, EvalResult, EvalSettings};
    pub use crate::head::{BBox, Detection, GroundTruth, LossWeights, NegativeSize};
    pub use crate::network::{Network, Precision, QuantScales, QuantizedModel};
    pub use crate::quant::QuantParams;
    pub use crate::tensor::Tensor;
    pub use crate::train::TrainConfig;
    pub use crate::{Error, Result};
}
