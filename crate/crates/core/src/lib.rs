//! O(n)-equivariant hypersphere neurons built on regular-simplex geometry,
//! cascaded equivariant layers, invariant read-outs and a small training
//! engine with reverse-mode gradients.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod invariant;
pub mod linalg;
pub mod network;
pub mod neuron;
pub mod params;
pub mod rng;
pub mod rotation;
pub mod scalar;
pub mod simplex;
pub mod train;
pub mod verify;

pub use config::RunConfig;
pub use data::{Dataset, Sample, Split};
pub use error::{Error, Result};
pub use linalg::Mat;
pub use network::{InvariantOp, LayerSpec, Model, ModelSpec, NormMode};
pub use neuron::{GradientMode, HypersphereNeuron, OutputRepresentation};
pub use params::{Checkpoint, ParamSet};
pub use scalar::Real;
pub use simplex::SimplexBasis;
pub use train::{Precision, TrainConfig};
