use crate::model::{infer, ModelParams, SPATIAL_MULTIPLE};
use crate::{Frame, FrameStack, Result};

/// Tile core size and the overlap added on each interior side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    pub width: usize,
    pub height: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            width: 960,
            height: 540,
            overlap: 32,
        }
    }
}

/// A tile's extent `[start, end)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Split an axis of `len` pixels into `ceil(len / tile)` even cores, each
/// grown by `overlap` into its neighbors.
pub fn plan_axis(len: usize, tile: usize, overlap: usize) -> Vec<Span> {
    let n = len.div_ceil(tile.max(1)).max(1);
    let cores: Vec<(usize, usize)> = (0..n).map(|i| (i * len / n, (i + 1) * len / n)).collect();
    let min_core = cores.iter().map(|(a, b)| b - a).min().unwrap_or(0);
    let ov = overlap.min(min_core / 2);
    cores
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| Span {
            start: if i == 0 { a } else { a - ov },
            end: if i + 1 == n { b } else { b + ov },
        })
        .collect()
}

/// Feather weight of `spans[i]` at coordinate `x`: a linear ramp across each
/// band shared with a neighbor, complementary to the neighbor's ramp.
fn axis_weight(spans: &[Span], i: usize, x: usize) -> f64 {
    let s = spans[i];
    let mut w = 1.0;
    if i > 0 && x < spans[i - 1].end {
        let band = (spans[i - 1].end - s.start) as f64;
        w *= (x - s.start) as f64 / band + 0.5 / band;
    }
    if i + 1 < spans.len() && x >= spans[i + 1].start {
        let next = spans[i + 1].start;
        let band = (s.end - next) as f64;
        w *= 1.0 - ((x - next) as f64 + 0.5) / band;
    }
    w
}

fn round_up(v: usize) -> usize {
    v.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE
}

/// The window actually fed to the processor for a blend span: it starts on a
/// multiple of 8 so the strided layers sample the same grid as a full-frame
/// pass, and is extended to a multiple-of-8 length with real pixels where
/// the frame has them. Returns the window and its real (unpadded) length.
fn window(span: Span, len: usize) -> (Span, usize) {
    let start = span.start / SPATIAL_MULTIPLE * SPATIAL_MULTIPLE;
    let end = start + round_up(span.end - start);
    (Span { start, end }, end.min(len) - start)
}

/// Run `process` over overlapping tiles of the stack and blend the results.
/// Tiles are aligned to the 8-pixel grid and reflect-padded at the frame
/// border to a multiple of 8; the extra margin is cropped from the result. Blend weights are normalized, so a
/// frame that fits in one tile gets exactly the processor's output.
pub fn tiled_apply(stack: &FrameStack, cfg: &TileConfig, process: impl Fn(&FrameStack) -> Result<Frame>) -> Result<Frame> {
    let (w, h) = (stack.width(), stack.height());
    let xs = plan_axis(w, cfg.width, cfg.overlap);
    let ys = plan_axis(h, cfg.height, cfg.overlap);
    let mut acc: Vec<f64> = vec![];
    let mut weight = vec![0.0f64; w * h];
    let mut channels = 0;
    for (j, sy) in ys.iter().enumerate() {
        for (i, sx) in xs.iter().enumerate() {
            let ((wx0, real_w), (wy0, real_h)) = (window(*sx, w), window(*sy, h));
            let tile = stack.map_frames(|f| f.crop(wx0.start, wy0.start, real_w, real_h).pad_reflect(wx0.len(), wy0.len()))?;
            let out = process(&tile)?;
            let (ox, oy) = (sx.start - wx0.start, sy.start - wy0.start);
            if acc.is_empty() {
                channels = out.channels();
                acc = vec![0.0; channels * w * h];
            }
            let wy: Vec<f64> = (sy.start..sy.end).map(|y| axis_weight(&ys, j, y)).collect();
            let wx: Vec<f64> = (sx.start..sx.end).map(|x| axis_weight(&xs, i, x)).collect();
            for (ty, &fy) in wy.iter().enumerate() {
                for (tx, &fx) in wx.iter().enumerate() {
                    let p = (sy.start + ty) * w + sx.start + tx;
                    let k = fy * fx;
                    weight[p] += k;
                    for c in 0..channels {
                        acc[c * w * h + p] += k * out.get(c, ox + tx, oy + ty) as f64;
                    }
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, &v)| (v / weight[i % (w * h)]) as f32)
        .collect();
    Frame::from_vec(channels, w, h, data)
}

/// Full-resolution restoration of a stack's central frame with tiles of
/// `cfg` size processed by the network in inference mode.
pub fn tiled_inference(params: &ModelParams<f32>, stack: &FrameStack, cfg: &TileConfig) -> Result<Frame> {
    tiled_apply(stack, cfg, |tile| Frame::from_tensor(&infer(params, &tile.to_tensor())?, 0))
}
