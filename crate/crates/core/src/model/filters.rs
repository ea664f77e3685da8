use crate::frame::{Frame, FrameStack, STACK_LEN};
use crate::tensor::Real;
use crate::Result;

use super::{forward, ModelParams};

/// First-layer kernels and feature maps for visualization.
#[derive(Debug, Clone)]
pub struct FilterDump {
    /// One RGB image per F0 kernel: the five per-frame 5x5 kernels side by
    /// side, min-max normalized to `[0, 1]`.
    pub filters: Vec<Frame>,
    /// One single-channel map per F0 output channel (after batch norm), raw values.
    pub feature_maps: Vec<Frame>,
}

/// Linearly map values onto `0..=255`; a constant input maps to zeros.
pub fn min_max_to_u8(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Render F0 kernel `k` as a `(5 * kw) x kh` RGB image.
pub fn render_filter<T: Real>(params: &ModelParams<T>, k: usize) -> Frame {
    let w = &params.layers[0].weight;
    let (cin, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let kernel = &w.outer(k);
    let lo = kernel.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
    let hi = kernel.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let frames = cin / 3;
    Frame::from_fn(3, frames * kw, kh, |c, x, y| {
        let v = kernel[((x / kw * 3 + c) * kh + y) * kw + x % kw].as_f64();
        if hi > lo {
            ((v - lo) / (hi - lo)) as f32
        } else {
            0.0
        }
    })
}

/// Kernels of the first layer plus its response to `stack` in inference mode.
pub fn dump_filters<T: Real>(params: &ModelParams<T>, stack: &FrameStack) -> Result<FilterDump> {
    let filters = (0..params.layers[0].def.spec.out_channels)
        .map(|k| render_filter(params, k))
        .collect();
    debug_assert_eq!(params.layers[0].def.spec.in_channels, 3 * STACK_LEN);
    let mut feature_maps = Vec::new();
    let first = params.layers[0].def.name;
    let mut grab = |l: super::LayerOutput<'_, T>| {
        if l.name == first {
            let (_, c, h, w) = l.pre_activation.dims4("dump_filters").expect("rank 4");
            let sample = l.pre_activation.outer(0);
            feature_maps = (0..c)
                .map(|ch| {
                    let plane = sample[ch * h * w..(ch + 1) * h * w].iter().map(|v| v.as_f64() as f32).collect();
                    Frame::from_vec(1, w, h, plane).expect("non-empty plane")
                })
                .collect();
        }
    };
    forward(params, &stack.to_tensor(), false, Some(&mut grab))?;
    Ok(FilterDump { filters, feature_maps })
}
