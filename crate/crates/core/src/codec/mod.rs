//! Encoder/decoder stacks built from FL and AF modules.

mod arch;
mod conv;
pub mod gdn;
mod model;

pub use arch::{
    bandwidth_ratio, channels_for_ratio, parse_ratio, Activation, ArchSpec, BandwidthRatio,
    Direction, LayerSpec, PRESETS,
};
pub use gdn::{gdn_backward, gdn_forward, igdn_backward, igdn_forward, GdnGrads};
pub use model::{
    count_parameters, decode, encode, fl_forward, Encoded, FlParams, Model, ModelParams, Side,
    StackParams, StepLoss,
};
