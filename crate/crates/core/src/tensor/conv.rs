use rayon::prelude::*;

use super::gemm::{gemm, MatMut, MatRef};
use super::{Real, Result, Tensor, TensorError};

/// Geometry of a (possibly transposed) 2-D convolution.
///
/// Regular convolution weights are `[out, in, kh, kw]`; transposed
/// convolution weights are `[in, out, kh, kw]`, the layout of Torch's
/// `SpatialFullConvolution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn up(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding)
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        let (kh, kw) = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels, kh, kw]
        } else {
            [self.out_channels, self.in_channels, kh, kw]
        }
    }

    /// Number of input connections of one output unit, used for initialization.
    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel;
        if self.transposed {
            // Each output pixel of a stride-s up-convolution sees kh*kw/s^2 taps per input channel.
            (self.in_channels * kh * kw / (self.stride * self.stride)).max(1)
        } else {
            self.in_channels * kh * kw
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let invalid = |reason: String| TensorError::InvalidSpec {
            op: if self.transposed { "conv2d_transpose" } else { "conv2d" },
            reason,
        };
        if self.stride == 0 || kh == 0 || kw == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(invalid(format!("degenerate spec {self:?}")));
        }
        let p = self.padding;
        if self.transposed {
            let oh = ((h - 1) * self.stride + kh).checked_sub(2 * p);
            let ow = ((w - 1) * self.stride + kw).checked_sub(2 * p);
            match (oh, ow) {
                (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
                _ => Err(invalid(format!("input {h}x{w} produces an empty output"))),
            }
        } else {
            if h + 2 * p < kh || w + 2 * p < kw {
                return Err(invalid(format!("input {h}x{w} smaller than kernel {kh}x{kw} after padding {p}")));
            }
            Ok(((h + 2 * p - kh) / self.stride + 1, (w + 2 * p - kw) / self.stride + 1))
        }
    }

    fn check(&self, op: &'static str, input: &[usize], weights: &[usize], bias: Option<&[usize]>) -> Result<(usize, usize, usize, usize)> {
        if self.weight_shape() != weights {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.weight_shape().to_vec(),
                found: weights.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b != [self.out_channels] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    expected: vec![self.out_channels],
                    found: b.to_vec(),
                });
            }
        }
        match *input {
            [n, c, h, w] if c == self.in_channels => Ok((n, c, h, w)),
            _ => Err(TensorError::ShapeMismatch {
                op,
                expected: vec![input.first().copied().unwrap_or(1), self.in_channels, 0, 0],
                found: input.to_vec(),
            }),
        }
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Sliding-window correspondence between a "source" grid of `channels` planes
/// and a "destination" grid: source pixel `d * stride + k - pad` feeds column
/// `d` of row `(c, ky, kx)`. For a regular convolution the source is the input
/// and the destination the output; a transposed convolution swaps them.
#[derive(Clone, Copy)]
struct Windows {
    channels: usize,
    src_h: usize,
    src_w: usize,
    dst_w: usize,
    dst_len: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Windows {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Valid destination columns `[lo, hi)` for kernel offset `k` along an axis of `src` extent.
    fn valid(&self, k: usize, src: usize, dst: usize) -> (usize, usize) {
        let lo = if self.pad > k { (self.pad - k).div_ceil(self.stride) } else { 0 };
        let hi = if src + self.pad > k { ((src - 1 + self.pad - k) / self.stride + 1).min(dst) } else { 0 };
        (lo, hi.max(lo))
    }

    /// Visit each (row, destination span) pair of positions `[p0, p0 + len)`.
    /// The callback receives the row index, the offset into the chunk, the
    /// source plane offset (or `None` when the source row is padding), and
    /// the valid destination column range together with the span.
    fn for_each_span(&self, p0: usize, len: usize, mut f: impl FnMut(usize, usize, Option<usize>, usize, (usize, usize), (usize, usize))) {
        let dst_h = self.dst_len / self.dst_w;
        let (kh, kw, s, pad) = (self.kh, self.kw, self.stride, self.pad);
        for c in 0..self.channels {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let (xlo, xhi) = self.valid(kx, self.src_w, self.dst_w);
                    let mut p = p0;
                    while p < p0 + len {
                        let dy = p / self.dst_w;
                        debug_assert!(dy < dst_h);
                        let dx0 = p % self.dst_w;
                        let dx1 = self.dst_w.min(dx0 + (p0 + len - p));
                        let sy = (dy * s + ky) as isize - pad as isize;
                        let src_row = (sy >= 0 && (sy as usize) < self.src_h)
                            .then(|| (c * self.src_h + sy as usize) * self.src_w);
                        f(row, p - p0, src_row, kx, (xlo, xhi), (dx0, dx1));
                        p += dx1 - dx0;
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, src: &[T], p0: usize, len: usize, cols: &mut [T]) {
        let (s, pad) = (self.stride, self.pad);
        self.for_each_span(p0, len, |row, off, src_row, kx, (xlo, xhi), (dx0, dx1)| {
            let out = &mut cols[row * len + off..row * len + off + (dx1 - dx0)];
            let Some(base) = src_row else {
                out.fill(T::zero());
                return;
            };
            let (lo, hi) = (xlo.clamp(dx0, dx1), xhi.clamp(dx0, dx1));
            out[..lo - dx0].fill(T::zero());
            out[hi - dx0..].fill(T::zero());
            if hi > lo {
                let sx0 = lo * s + kx - pad;
                if s == 1 {
                    out[lo - dx0..hi - dx0].copy_from_slice(&src[base + sx0..base + sx0 + (hi - lo)]);
                } else {
                    for (i, o) in out[lo - dx0..hi - dx0].iter_mut().enumerate() {
                        *o = src[base + sx0 + i * s];
                    }
                }
            }
        });
    }

    fn col2im_add<T: Real>(&self, cols: &[T], p0: usize, len: usize, dst: &mut [T]) {
        let (s, pad) = (self.stride, self.pad);
        self.for_each_span(p0, len, |row, off, src_row, kx, (xlo, xhi), (dx0, dx1)| {
            let Some(base) = src_row else { return };
            let (lo, hi) = (xlo.clamp(dx0, dx1), xhi.clamp(dx0, dx1));
            let vals = &cols[row * len + off + (lo - dx0)..row * len + off + (hi - dx0)];
            let sx0 = base + lo * s + kx - pad;
            for (i, &v) in vals.iter().enumerate() {
                dst[sx0 + i * s] += v;
            }
        });
    }
}

/// Positions per im2col chunk, bounding the scratch buffer to ~4M elements.
fn chunk_len(rows: usize, positions: usize) -> usize {
    const BUDGET: usize = 1 << 22;
    (BUDGET / rows.max(1)).max(256).min(positions).max(1)
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (o, &b) in out.chunks_mut(plane).zip(bias) {
        o.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(grad_out: &[T], channels: usize, plane: usize, acc: &mut [T]) {
    for (c, g) in grad_out.chunks(plane).take(channels).enumerate() {
        acc[c] += g.iter().copied().sum();
    }
}

pub fn conv2d_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(TensorError::InvalidSpec {
            op: "conv2d",
            reason: "transposed spec passed to conv2d_forward".into(),
        });
    }
    let (n, c, h, w) = spec.check("conv2d", input.shape(), weights.shape(), Some(bias.shape()))?;
    let (ho, wo) = spec.output_extent(h, w)?;
    let cout = spec.out_channels;
    let win = Windows {
        channels: c,
        src_h: h,
        src_w: w,
        dst_w: wo,
        dst_len: ho * wo,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
    };
    let rows = win.rows();
    let plane = ho * wo;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let in_stride = c * h * w;
    out.data_mut()
        .par_chunks_mut(cout * plane)
        .enumerate()
        .for_each(|(i, o)| {
            let x = &input.data()[i * in_stride..(i + 1) * in_stride];
            let chunk = chunk_len(rows, plane);
            let mut cols = vec![T::zero(); rows * chunk];
            for p0 in (0..plane).step_by(chunk) {
                let len = chunk.min(plane - p0);
                let cols = &mut cols[..rows * len];
                win.im2col(x, p0, len, cols);
                gemm(
                    MatRef::row_major(weights.data(), cout, rows),
                    MatRef::row_major(cols, rows, len),
                    T::zero(),
                    MatMut { data: &mut o[p0..], rows: cout, cols: len, rs: plane, cs: 1 },
                );
            }
            add_bias(o, bias.data(), plane);
        });
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = spec.check("conv2d_backward", cached_input.shape(), weights.shape(), None)?;
    let (ho, wo) = spec.output_extent(h, w)?;
    let cout = spec.out_channels;
    grad_out.expect_shape("conv2d_backward", &[n, cout, ho, wo])?;
    let win = Windows {
        channels: c,
        src_h: h,
        src_w: w,
        dst_w: wo,
        dst_len: ho * wo,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
    };
    let rows = win.rows();
    let plane = ho * wo;
    let in_stride = c * h * w;

    let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &cached_input.data()[i * in_stride..(i + 1) * in_stride];
            let g = grad_out.outer(i);
            let chunk = chunk_len(rows, plane);
            let mut cols = vec![T::zero(); rows * chunk];
            let mut gcols = if need_input_grad { vec![T::zero(); rows * chunk] } else { Vec::new() };
            let mut gx = if need_input_grad { vec![T::zero(); in_stride] } else { Vec::new() };
            let mut gw = vec![T::zero(); cout * rows];
            let mut gb = vec![T::zero(); cout];
            for p0 in (0..plane).step_by(chunk) {
                let len = chunk.min(plane - p0);
                let gsub = MatRef { data: &g[p0..], rows: cout, cols: len, rs: plane, cs: 1 };
                let cols = &mut cols[..rows * len];
                win.im2col(x, p0, len, cols);
                gemm(
                    gsub,
                    MatRef { data: cols, rows: len, cols: rows, rs: 1, cs: len },
                    T::one(),
                    MatMut::row_major(&mut gw, cout, rows),
                );
                if need_input_grad {
                    let gcols = &mut gcols[..rows * len];
                    gemm(
                        MatRef::transposed(weights.data(), rows, cout),
                        gsub,
                        T::zero(),
                        MatMut::row_major(gcols, rows, len),
                    );
                    win.col2im_add(gcols, p0, len, &mut gx);
                }
            }
            bias_grad(g, cout, plane, &mut gb);
            (gx, gw, gb)
        })
        .collect();

    reduce_partials(partials, need_input_grad, &[n, c, h, w], &spec.weight_shape(), cout)
}

pub fn conv2d_transpose_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(TensorError::InvalidSpec {
            op: "conv2d_transpose",
            reason: "non-transposed spec passed to conv2d_transpose_forward".into(),
        });
    }
    let (n, c, h, w) = spec.check("conv2d_transpose", input.shape(), weights.shape(), Some(bias.shape()))?;
    let (ho, wo) = spec.output_extent(h, w)?;
    let cout = spec.out_channels;
    let win = Windows {
        channels: cout,
        src_h: ho,
        src_w: wo,
        dst_w: w,
        dst_len: h * w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
    };
    let rows = win.rows();
    let in_plane = h * w;
    let in_stride = c * in_plane;
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    out.data_mut()
        .par_chunks_mut(cout * ho * wo)
        .enumerate()
        .for_each(|(i, o)| {
            let x = &input.data()[i * in_stride..(i + 1) * in_stride];
            let chunk = chunk_len(rows, in_plane);
            let mut cols = vec![T::zero(); rows * chunk];
            for p0 in (0..in_plane).step_by(chunk) {
                let len = chunk.min(in_plane - p0);
                let cols = &mut cols[..rows * len];
                gemm(
                    MatRef::transposed(weights.data(), rows, c),
                    MatRef { data: &x[p0..], rows: c, cols: len, rs: in_plane, cs: 1 },
                    T::zero(),
                    MatMut::row_major(cols, rows, len),
                );
                win.col2im_add(cols, p0, len, o);
            }
            add_bias(o, bias.data(), ho * wo);
        });
    Ok(out)
}

pub fn conv2d_transpose_backward<T: Real>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = spec.check("conv2d_transpose_backward", cached_input.shape(), weights.shape(), None)?;
    let (ho, wo) = spec.output_extent(h, w)?;
    let cout = spec.out_channels;
    grad_out.expect_shape("conv2d_transpose_backward", &[n, cout, ho, wo])?;
    let win = Windows {
        channels: cout,
        src_h: ho,
        src_w: wo,
        dst_w: w,
        dst_len: h * w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        stride: spec.stride,
        pad: spec.padding,
    };
    let rows = win.rows();
    let in_plane = h * w;
    let in_stride = c * in_plane;

    let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &cached_input.data()[i * in_stride..(i + 1) * in_stride];
            let g = grad_out.outer(i);
            let chunk = chunk_len(rows, in_plane);
            let mut gcols = vec![T::zero(); rows * chunk];
            let mut gx = if need_input_grad { vec![T::zero(); in_stride] } else { Vec::new() };
            let mut gw = vec![T::zero(); c * rows];
            let mut gb = vec![T::zero(); cout];
            for p0 in (0..in_plane).step_by(chunk) {
                let len = chunk.min(in_plane - p0);
                let gcols = &mut gcols[..rows * len];
                win.im2col(g, p0, len, gcols);
                let gref = MatRef::row_major(&*gcols, rows, len);
                if need_input_grad {
                    gemm(
                        MatRef::row_major(weights.data(), c, rows),
                        gref,
                        T::zero(),
                        MatMut { data: &mut gx[p0..], rows: c, cols: len, rs: in_plane, cs: 1 },
                    );
                }
                gemm(
                    MatRef { data: &x[p0..], rows: c, cols: len, rs: in_plane, cs: 1 },
                    MatRef { data: &*gcols, rows: len, cols: rows, rs: 1, cs: len },
                    T::one(),
                    MatMut::row_major(&mut gw, c, rows),
                );
            }
            bias_grad(g, cout, ho * wo, &mut gb);
            (gx, gw, gb)
        })
        .collect();

    reduce_partials(partials, need_input_grad, &[n, c, h, w], &spec.weight_shape(), cout)
}

/// Sum per-sample parameter gradients in sample order so the result does not
/// depend on the thread count.
fn reduce_partials<T: Real>(
    partials: Vec<(Vec<T>, Vec<T>, Vec<T>)>,
    need_input_grad: bool,
    input_shape: &[usize],
    weight_shape: &[usize],
    cout: usize,
) -> Result<ConvGrads<T>> {
    let mut weights = Tensor::zeros(weight_shape);
    let mut bias = Tensor::zeros(&[cout]);
    let mut input = need_input_grad.then(|| Vec::with_capacity(input_shape.iter().product()));
    for (gx, gw, gb) in partials {
        weights.data_mut().iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        bias.data_mut().iter_mut().zip(&gb).for_each(|(a, &b)| *a += b);
        if let Some(buf) = input.as_mut() {
            buf.extend_from_slice(&gx);
        }
    }
    Ok(ConvGrads {
        input: input.map(|d| Tensor::from_vec(input_shape, d)).transpose()?,
        weights,
        bias,
    })
}
