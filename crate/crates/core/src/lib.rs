//! SNR-adaptive deep joint source-channel coding for wireless image transmission.
//!
//! A convolutional encoder maps an image straight to complex channel symbols and a
//! mirrored decoder reconstructs it from the noisy received block. Attention modules
//! between layers rescale feature channels as a function of the channel SNR, so one
//! trained model covers a range of channel conditions.

pub mod attention;
pub mod channel;
pub mod codec;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod rng;
pub mod tensor;
pub mod training;

pub use attention::{af_forward, AfParams, ContextVector, ScalingFactors};
pub use channel::{Channel, ChannelConfig, ChannelMode, SymbolVector};
pub use codec::{ArchSpec, BandwidthRatio, LayerSpec, Model, ModelParams};
pub use data::{Dataset, ImageTensor};
pub use error::{Error, Result};
pub use evaluation::{EvalConfig, SweepResult};
pub use tensor::{FeatureMap, Param, Scalar};
pub use training::{SnrDistribution, TrainConfig, TrainLog};
