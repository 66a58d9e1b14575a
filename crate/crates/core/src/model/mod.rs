//! The multi-scale anchor-corrected classifier and its compact encoder variant.

pub mod branches;
pub mod checkpoint;
pub mod compact;
pub mod config;
pub mod fusion;
pub mod tcnet;

pub use compact::{CompactConfig, CompactOutput, CompactTcNet};
pub use config::{default_sensor_groups, preset, ModelConfig, Preset, PRESET_NAMES};
pub use tcnet::{n_blocks, unfold_blocks, ForwardOutput, ScaleOutput, TcNet};
