//! Inverse tone mapping toolkit: color pipeline, tone operators, monotone
//! spline tone fields, structure features, adapter blocks and metrics.

pub mod adapters;
pub mod colorimetry;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rqs;
pub mod tensor;
pub mod tonemap;

pub use colorimetry::{ColorSpaceTag, Direction, Primaries, TaggedImage, Transfer};
pub use error::{Error, Result};
pub use metrics::{metric_report, psnr_pu21, MetricReport};
pub use pipeline::PipelineConfig;
pub use rqs::{FitConfig, FitResult, RqsParams};
pub use tensor::Tensor;
pub use tonemap::{Crf, DegradationSpec, ToneKind, ToneOperator};
