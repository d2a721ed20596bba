//! The band-split model: scheme, parameters, training graph, inference,
//! streaming, checkpoints and MACs accounting.

pub mod checkpoint;
pub mod graph;
pub mod infer;
pub mod macs;
pub mod params;
pub mod scheme;
pub mod stream;

pub use checkpoint::{model_from_checkpoint, Checkpoint};
pub use graph::{apply_bn_updates, build_forward, forward_to_spectrogram, GraphForward, GraphMode};
pub use infer::{band_level_step, enhance, enhance_spectrogram, enroll_gate, SeqState};
pub use macs::{count_macs, MacsReport};
pub use params::{Model, ModelConfig, NormKind};
pub use scheme::BandSplitScheme;
pub use stream::{stream_enhance, Streamer};
