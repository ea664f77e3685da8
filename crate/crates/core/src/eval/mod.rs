//! Image quality metrics, tiled full-frame inference and per-sequence reports.

mod metrics;
mod report;
mod tiling;

pub use metrics::{mssim, mssim_scales, psnr, MSSSIM_WEIGHTS, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{average, eval_clip, eval_sequence, method_label, EvalOptions, FrameMetrics, MethodAverage, MetricReport, INPUT_LABEL};
pub use tiling::{plan_axis, tiled_apply, tiled_inference, Span, TileConfig};
