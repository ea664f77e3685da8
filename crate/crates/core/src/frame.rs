//! Planar float images and the five-frame input stack.

use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Planar image (`channels x height x width`), values nominally in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Frame {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{}x{})", self.channels, self.height, self.width)
    }
}

impl Frame {
    pub fn new(channels: usize, width: usize, height: usize) -> Self {
        Frame {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn filled(channels: usize, width: usize, height: usize, value: f32) -> Self {
        Frame {
            channels,
            width,
            height,
            data: vec![value; channels * width * height],
        }
    }

    pub fn from_vec(channels: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * width * height || data.is_empty() {
            return Err(Error::Invalid(format!(
                "frame data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Frame { channels, width, height, data })
    }

    /// Build from a function of `(channel, x, y)`.
    pub fn from_fn(channels: usize, width: usize, height: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut frame = Frame::new(channels, width, height);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    frame.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        frame
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Rec.601 luma of an RGB frame; single-channel frames are returned as is.
    pub fn luma(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        Frame {
            channels: 1,
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    /// Sub-rectangle copy; the region must lie inside the frame.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Frame {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop outside frame");
        let mut out = Frame::new(self.channels, w, h);
        for c in 0..self.channels {
            for y in 0..h {
                let src = (c * self.height + y0 + y) * self.width + x0;
                let dst = (c * h + y) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    /// Reflect-pad on the right and bottom edges to the given extents.
    pub fn pad_reflect(&self, width: usize, height: usize) -> Frame {
        let reflect = |i: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n - 1);
            let m = i % period;
            if m < n {
                m
            } else {
                period - m
            }
        };
        Frame::from_fn(self.channels, width, height, |c, x, y| {
            self.get(c, reflect(x, self.width), reflect(y, self.height))
        })
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("frame extents are non-zero")
    }

    /// Interpret one sample of a `[N, C, H, W]` tensor as a frame.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Frame> {
        let (_, c, h, w) = t.dims4("frame")?;
        Frame::from_vec(c, w, h, t.outer(index).iter().map(|v| v.as_f64() as f32).collect())
    }
}

/// Index of the frame being restored within a stack.
pub const CENTER_INDEX: usize = 2;
pub const STACK_LEN: usize = 5;

/// Five consecutive RGB frames; the network restores the central one.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    frames: Vec<Frame>,
}

impl FrameStack {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() != STACK_LEN {
            return Err(Error::Invalid(format!("a stack holds {STACK_LEN} frames, got {}", frames.len())));
        }
        let first = &frames[0];
        if first.channels() != 3 || frames.iter().any(|f| !f.same_dims(first)) {
            return Err(Error::Invalid("stack frames must be RGB with identical extents".into()));
        }
        Ok(FrameStack { frames })
    }

    /// The same frame five times (the single-frame ablation).
    pub fn replicate(frame: Frame) -> Result<Self> {
        FrameStack::new(vec![frame; STACK_LEN])
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn center(&self) -> &Frame {
        &self.frames[CENTER_INDEX]
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame) -> Result<FrameStack> {
        FrameStack::new(self.frames.iter().map(f).collect())
    }

    /// Early fusion: concatenate the frames in temporal order into 15 channels.
    pub fn to_channels(&self) -> Vec<f32> {
        self.frames.iter().flat_map(|f| f.data().iter().copied()).collect()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        stacks_to_tensor(std::slice::from_ref(self))
    }
}

/// Batch several equally sized stacks into a `[N, 15, H, W]` tensor.
pub fn stacks_to_tensor<T: Real>(stacks: &[FrameStack]) -> Tensor<T> {
    let (h, w) = (stacks[0].height(), stacks[0].width());
    let data = stacks
        .iter()
        .flat_map(|s| s.to_channels())
        .map(|v| T::from_f64(v as f64))
        .collect();
    Tensor::from_vec(&[stacks.len(), 3 * STACK_LEN, h, w], data).expect("stack extents are consistent")
}

/// Batch equally sized frames into a `[N, C, H, W]` tensor.
pub fn frames_to_tensor<T: Real>(frames: &[Frame]) -> Tensor<T> {
    let f0 = &frames[0];
    let data = frames
        .iter()
        .flat_map(|f| f.data().iter().map(|&v| T::from_f64(v as f64)))
        .collect();
    Tensor::from_vec(&[frames.len(), f0.channels(), f0.height(), f0.width()], data).expect("frame extents are consistent")
}
