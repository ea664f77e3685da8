use crate::imgproc::Plane;
use crate::{Error, Frame, Result};

/// Dense displacement: the neighbor pixel at `(x + u, y + v)` corresponds to
/// the reference pixel at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    /// False where the displaced position leaves the neighbor frame.
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        let mut f = FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
            valid: vec![true; width * height],
        };
        f.update_valid();
        f
    }

    pub fn from_components(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Invalid("flow component size does not match extents".into()));
        }
        let mut f = FlowField {
            width,
            height,
            u,
            v,
            valid: vec![true; width * height],
        };
        f.update_valid();
        Ok(f)
    }

    fn update_valid(&mut self) {
        let (w, h) = (self.width as f32, self.height as f32);
        for i in 0..self.u.len() {
            let x = (i % self.width) as f32 + self.u[i];
            let y = (i / self.width) as f32 + self.v[i];
            self.valid[i] =
                self.u[i].is_finite() && self.v[i].is_finite() && x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0;
        }
    }

    /// Scale both components (e.g. to a fraction of the motion).
    pub fn scaled(&self, s: f32) -> FlowField {
        let mut f = self.clone();
        f.u.iter_mut().for_each(|v| *v *= s);
        f.v.iter_mut().for_each(|v| *v *= s);
        f.update_valid();
        f
    }
}

/// Solver settings for the coarse-to-fine TV-L1 scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub tau: f32,
    /// Data term weight.
    pub lambda: f32,
    /// Coupling between the two sub-problems.
    pub theta: f32,
    pub levels: usize,
    pub zoom: f32,
    pub warps: usize,
    /// Stopping threshold on the mean squared update.
    pub epsilon: f32,
    pub iterations: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            tau: 0.25,
            lambda: 0.15,
            theta: 0.3,
            levels: 5,
            zoom: 0.5,
            warps: 5,
            epsilon: 0.01,
            iterations: 300,
        }
    }
}

const PRESMOOTH_SIGMA: f32 = 0.8;
const MIN_LEVEL_EXTENT: usize = 16;

fn divergence(p1: &[f32], p2: &[f32], w: usize, h: usize, out: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let d1 = if x == 0 {
                p1[i]
            } else if x == w - 1 {
                -p1[i - 1]
            } else {
                p1[i] - p1[i - 1]
            };
            let d2 = if y == 0 {
                p2[i]
            } else if y == h - 1 {
                -p2[i - w]
            } else {
                p2[i] - p2[i - w]
            };
            out[i] = d1 + d2;
        }
    }
}

fn forward_gradient(f: &[f32], w: usize, h: usize, gx: &mut [f32], gy: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if x + 1 < w { f[i + 1] - f[i] } else { 0.0 };
            gy[i] = if y + 1 < h { f[i + w] - f[i] } else { 0.0 };
        }
    }
}

/// TV-L1 at a single pyramid level, refining `(u1, u2)` in place.
fn solve_level(i0: &Plane, i1: &Plane, u1: &mut [f32], u2: &mut [f32], p: &FlowParams) {
    let (w, h) = (i0.w, i0.h);
    let n = w * h;
    let (i1x, i1y) = i1.gradient();
    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];
    let mut div1 = vec![0.0; n];
    let mut div2 = vec![0.0; n];
    let mut g1x = vec![0.0; n];
    let mut g1y = vec![0.0; n];
    let mut g2x = vec![0.0; n];
    let mut g2y = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];
    let lt = p.lambda * p.theta;
    let taut = p.tau / p.theta;
    for _ in 0..p.warps {
        let mut i1w = vec![0.0; n];
        let mut i1wx = vec![0.0; n];
        let mut i1wy = vec![0.0; n];
        let mut grad = vec![0.0; n];
        let mut rho_c = vec![0.0; n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f32 + u1[i], y as f32 + u2[i]);
                i1w[i] = i1.sample(sx, sy);
                i1wx[i] = i1x.sample(sx, sy);
                i1wy[i] = i1y.sample(sx, sy);
                grad[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u1[i] - i1wy[i] * u2[i] - i0.data[i];
            }
        }
        for _ in 0..p.iterations {
            // pointwise thresholding of the data term
            for i in 0..n {
                let rho = rho_c[i] + i1wx[i] * u1[i] + i1wy[i] * u2[i];
                let (d1, d2) = if rho < -lt * grad[i] {
                    (lt * i1wx[i], lt * i1wy[i])
                } else if rho > lt * grad[i] {
                    (-lt * i1wx[i], -lt * i1wy[i])
                } else if grad[i] < 1e-10 {
                    (0.0, 0.0)
                } else {
                    let f = -rho / grad[i];
                    (f * i1wx[i], f * i1wy[i])
                };
                v1[i] = u1[i] + d1;
                v2[i] = u2[i] + d2;
            }
            divergence(&p11, &p12, w, h, &mut div1);
            divergence(&p21, &p22, w, h, &mut div2);
            let mut change = 0.0f64;
            for i in 0..n {
                let (o1, o2) = (u1[i], u2[i]);
                u1[i] = v1[i] + p.theta * div1[i];
                u2[i] = v2[i] + p.theta * div2[i];
                change += ((u1[i] - o1) as f64).powi(2) + ((u2[i] - o2) as f64).powi(2);
            }
            // dual update of the total-variation term
            forward_gradient(u1, w, h, &mut g1x, &mut g1y);
            forward_gradient(u2, w, h, &mut g2x, &mut g2y);
            for i in 0..n {
                let ng1 = 1.0 + taut * (g1x[i] * g1x[i] + g1y[i] * g1y[i]).sqrt();
                let ng2 = 1.0 + taut * (g2x[i] * g2x[i] + g2y[i] * g2y[i]).sqrt();
                p11[i] = (p11[i] + taut * g1x[i]) / ng1;
                p12[i] = (p12[i] + taut * g1y[i]) / ng1;
                p21[i] = (p21[i] + taut * g2x[i]) / ng2;
                p22[i] = (p22[i] + taut * g2y[i]) / ng2;
            }
            if change / (n as f64) < (p.epsilon as f64).powi(2) {
                break;
            }
        }
    }
}

/// Scale intensities to `[0, 255]` by the joint range of both images.
fn normalize_pair(a: &Plane, b: &Plane) -> (Plane, Plane) {
    let (lo, hi) = a
        .data
        .iter()
        .chain(&b.data)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let f = |p: &Plane| {
        Plane::new(
            p.w,
            p.h,
            p.data.iter().map(|&v| if range > 0.0 { 255.0 * (v - lo) / range } else { 0.0 }).collect(),
        )
    };
    (f(a), f(b))
}

fn zoom_out(p: &Plane, z: f32) -> Plane {
    let w = ((p.w as f32 * z).ceil() as usize).max(1);
    let h = ((p.h as f32 * z).ceil() as usize).max(1);
    let sigma = 0.6 * (1.0 / (z * z) - 1.0).sqrt();
    p.blur(sigma).resample(w, h, 1.0 / z, 1.0 / z)
}

/// Dense optical flow from `reference` to `neighbor` on luma, coarse to fine.
pub fn compute_flow(reference: &Frame, neighbor: &Frame, params: &FlowParams) -> Result<FlowField> {
    if !reference.same_dims(neighbor) {
        return Err(Error::Invalid("flow frames differ in size".into()));
    }
    let to_plane = |f: &Frame| {
        let l = f.luma();
        Plane::new(l.width(), l.height(), l.into_data())
    };
    let (a, b) = normalize_pair(&to_plane(reference), &to_plane(neighbor));
    let mut pyr = vec![(a.blur(PRESMOOTH_SIGMA), b.blur(PRESMOOTH_SIGMA))];
    while pyr.len() < params.levels.max(1) {
        let (a, b) = pyr.last().unwrap();
        let next = (zoom_out(a, params.zoom), zoom_out(b, params.zoom));
        if next.0.w < MIN_LEVEL_EXTENT || next.0.h < MIN_LEVEL_EXTENT {
            break;
        }
        pyr.push(next);
    }
    let (cw, ch) = (pyr.last().unwrap().0.w, pyr.last().unwrap().0.h);
    let mut u1 = Plane::zeros(cw, ch);
    let mut u2 = Plane::zeros(cw, ch);
    for level in (0..pyr.len()).rev() {
        let (i0, i1) = &pyr[level];
        if u1.w != i0.w || u1.h != i0.h {
            let (sx, sy) = (u1.w as f32 / i0.w as f32, u1.h as f32 / i0.h as f32);
            u1 = u1.resample(i0.w, i0.h, sx, sy);
            u2 = u2.resample(i0.w, i0.h, sx, sy);
            u1.data.iter_mut().for_each(|v| *v /= sx);
            u2.data.iter_mut().for_each(|v| *v /= sy);
        }
        solve_level(i0, i1, &mut u1.data, &mut u2.data, params);
    }
    FlowField::from_components(reference.width(), reference.height(), u1.data, u2.data)
}
