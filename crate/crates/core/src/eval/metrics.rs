use crate::{Error, Frame, Result};

/// Gaussian window edge and width used at every scale.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Standard five-scale weights, finest first.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_same(a: &Frame, b: &Frame, op: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "{op}: frames differ in shape ({}x{}x{} vs {}x{}x{})",
            a.channels(),
            a.width(),
            a.height(),
            b.channels(),
            b.width(),
            b.height()
        )))
    }
}

/// Peak signal-to-noise ratio in dB over all channels and pixels. Identical
/// frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    check_same(a, b, "psnr")?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Luminance plane in double precision.
struct Gray {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Gray {
    fn of(f: &Frame) -> Gray {
        let l = f.luma();
        Gray {
            w: l.width(),
            h: l.height(),
            v: l.data().iter().map(|&x| x as f64).collect(),
        }
    }

    fn mul(&self, o: &Gray) -> Gray {
        Gray {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }

    /// Valid-mode separable filtering: output shrinks by `k.len() - 1`.
    fn filter_valid(&self, k: &[f64]) -> Gray {
        let n = k.len();
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[(y + j) * ow + x]).sum();
            }
        }
        Gray { w: ow, h: oh, v }
    }

    /// 2x2 box average, dropping an odd last row or column.
    fn downsample(&self) -> Gray {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                v[y * w + x] = 0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]);
            }
        }
        Gray { w, h, v }
    }
}

fn window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean luminance term and mean contrast-structure term at one scale.
fn ssim_terms(x: &Gray, y: &Gray, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mx = x.filter_valid(k);
    let my = y.filter_valid(k);
    let sxx = x.mul(x).filter_valid(k);
    let syy = y.mul(y).filter_valid(k);
    let sxy = x.mul(y).filter_valid(k);
    let n = mx.v.len() as f64;
    let (mut l_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - ux * ux;
        let vy = syy.v[i] - uy * uy;
        let cov = sxy.v[i] - ux * uy;
        l_sum += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += (2.0 * cov + c2) / (vx + vy + c2);
    }
    (l_sum / n, cs_sum / n)
}

/// Number of scales usable for a frame whose smaller side is `min_side`:
/// the coarsest scale must still hold one full window.
pub fn mssim_scales(min_side: usize) -> usize {
    let mut scales = 0;
    let mut side = min_side;
    while scales < MSSSIM_WEIGHTS.len() && side >= SSIM_WINDOW {
        scales += 1;
        side /= 2;
    }
    scales
}

/// Multiscale SSIM on Rec.601 luma with an 11x11 Gaussian window (sigma
/// 1.5). Contrast-structure terms of every scale and the luminance term of
/// the coarsest scale are combined with the standard weights. Frames too
/// small for five scales use fewer, with the weights renormalized to sum to
/// one. Negative terms are clamped to zero before exponentiation.
pub fn mssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b, "mssim")?;
    let scales = mssim_scales(a.width().min(a.height()));
    if scales == 0 {
        return Err(Error::Invalid(format!(
            "mssim: {}x{} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.width(),
            a.height()
        )));
    }
    let weights = &MSSSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let k = window();
    let (mut x, mut y) = (Gray::of(a), Gray::of(b));
    let mut value = 1.0;
    for (s, w) in weights.iter().enumerate() {
        let w = w / total;
        let (l, cs) = ssim_terms(&x, &y, &k);
        value *= cs.max(0.0).powf(w);
        if s + 1 == scales {
            value *= l.max(0.0).powf(w);
        } else {
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(value)
}
