//! The full segmentation network: configuration, parameter tree, forward
//! pass, parameter accounting and the ablation variants.

mod calibrate;
mod config;
mod net;

pub use calibrate::{calibrate, closed_form_count, CalibrationResult, Candidate, PAPER_PARAM_COUNT};
pub use config::{ablation_variants, ModelConfig, Variant};
pub use net::{build_model, param_count, BreakdownRow, SegNet, SEQ_LEN};
