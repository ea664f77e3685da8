//! Small single-channel image helpers shared by alignment, blur synthesis
//! and the metrics.

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(w: usize, h: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), w * h, "plane size");
        Plane { w, h, data }
    }

    pub fn zeros(w: usize, h: usize) -> Self {
        Plane::new(w, h, vec![0.0; w * h])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample with edge replication. Exact at integer coordinates.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        sample_bilinear(&self.data, self.w, self.h, x, y)
    }

    pub fn blur(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let k = gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize);
        Plane::new(self.w, self.h, blur_separable(&self.data, self.w, self.h, &k))
    }

    /// Centered differences, one-sided at the borders.
    pub fn gradient(&self) -> (Plane, Plane) {
        let (w, h) = (self.w, self.h);
        let mut gx = Plane::zeros(w, h);
        let mut gy = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let i = y * w + x;
                if xr > xl {
                    gx.data[i] = (self.at(xr, y) - self.at(xl, y)) / (xr - xl) as f32;
                }
                if yd > yu {
                    gy.data[i] = (self.at(x, yd) - self.at(x, yu)) / (yd - yu) as f32;
                }
            }
        }
        (gx, gy)
    }

    /// Resample onto a `w x h` grid where output pixel `i` reads input
    /// position `i * scale`.
    pub fn resample(&self, w: usize, h: usize, scale_x: f32, scale_y: f32) -> Plane {
        let mut out = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.sample(x as f32 * scale_x, y as f32 * scale_y);
            }
        }
        out
    }
}

#[inline]
pub fn sample_bilinear(data: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let row = |yy: usize| {
        let a = data[yy * w + x0];
        let b = data[yy * w + x1];
        if fx == 0.0 {
            a
        } else {
            a + fx * (b - a)
        }
    };
    let top = row(y0);
    if fy == 0.0 {
        top
    } else {
        let bottom = row(y1);
        top + fy * (bottom - top)
    }
}

/// Normalized 1-D Gaussian of half-width `radius`.
pub fn gaussian_kernel(sigma: f32, radius: usize) -> Vec<f32> {
    let r = radius as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * (sigma as f64).powi(2))).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter().map(|v| (v / s) as f32).collect()
}

/// Separable convolution with an odd kernel, clamping at the borders.
pub fn blur_separable(data: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let xx = (x as i64 + j as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * data[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let yy = (y as i64 + j as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}
