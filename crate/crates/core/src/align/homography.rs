use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Correspondence;
use crate::{Error, Result};

/// Projective transform taking reference coordinates to neighbor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography {
            h: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    /// Scale so `h[2][2] = 1` (left unscaled when that entry is ~0).
    pub fn new(h: [[f64; 3]; 3]) -> Result<Self> {
        let mut out = Homography { h };
        let s = h[2][2];
        if s.abs() > 1e-12 {
            out.h.iter_mut().flatten().for_each(|v| *v /= s);
        }
        if !out.h.iter().flatten().all(|v| v.is_finite()) || out.det().abs() <= 1e-12 {
            return Err(Error::NoModel("singular homography".into()));
        }
        Ok(out)
    }

    pub fn det(&self) -> f64 {
        to_matrix(self).determinant()
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let h = &self.h;
        let w = h[2][0] * x + h[2][1] * y + h[2][2];
        ((h[0][0] * x + h[0][1] * y + h[0][2]) / w, (h[1][0] * x + h[1][1] * y + h[1][2]) / w)
    }

    /// Normalized inverse.
    pub fn inverse(&self) -> Result<Self> {
        let m = to_matrix(self);
        let inv = m.try_inverse().ok_or_else(|| Error::NoModel("singular homography".into()))?;
        Homography::new(from_matrix(&inv))
    }

    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Homography::new(from_matrix(&(to_matrix(self) * to_matrix(other))))
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.h
            .iter()
            .flatten()
            .zip(other.h.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn to_matrix(h: &Homography) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| h.h[r][c])
}

fn from_matrix(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn normalizer(pts: &[(f64, f64)]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (cx, cy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let mean_d = pts.iter().map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_d > 1e-12 { std::f64::consts::SQRT_2 / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform fitting `p ~ H q` to all pairs.
pub fn fit_dlt(pairs: &[&Correspondence]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::NoModel(format!("{} correspondences, need 4", pairs.len())));
    }
    let ps: Vec<_> = pairs.iter().map(|c| c.p).collect();
    let qs: Vec<_> = pairs.iter().map(|c| c.q).collect();
    let (tp, tq) = (normalizer(&ps), normalizer(&qs));
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in ps.iter().zip(&qs).enumerate() {
        let pn = tp * Vector3::new(p.0, p.1, 1.0);
        let qn = tq * Vector3::new(q.0, q.1, 1.0);
        let (x, y) = (qn[0], qn[1]);
        let (u, v) = (pn[0], pn[1]);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::NoModel("SVD failed".into()))?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nine singular values");
    let hn = Matrix3::from_fn(|r, c| vt[(k, 3 * r + c)]);
    let tp_inv = tp.try_inverse().expect("similarity is invertible");
    Homography::new(from_matrix(&(tp_inv * hn * tq)))
}

/// Squared transfer error `|p - H q|^2`.
fn residual2(h: &Homography, c: &Correspondence) -> f64 {
    let (x, y) = h.apply(c.q.0, c.q.1);
    let r = (x - c.p.0).powi(2) + (y - c.p.1).powi(2);
    if r.is_finite() {
        r
    } else {
        f64::INFINITY
    }
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    cross.abs() < 1e-6
}

fn degenerate(sample: &[&Correspondence; 4]) -> bool {
    let sets: [[(f64, f64); 4]; 2] = [sample.map(|c| c.p), sample.map(|c| c.q)];
    sets.iter().any(|pts| {
        (0..4).any(|skip| {
            let tri: Vec<_> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
            collinear(tri[0], tri[1], tri[2])
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlesacParams {
    pub iterations: usize,
    /// Inlier noise scale in pixels.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for MlesacParams {
    fn default() -> Self {
        MlesacParams {
            iterations: 2000,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// Chi-square 95% quantile for two degrees of freedom: residuals beyond
/// this many sigma^2 pay a constant penalty.
const OUTLIER_COST: f64 = 5.99;

/// Robust homography from correspondences: score random minimal-sample
/// hypotheses with a truncated quadratic cost, keep the cheapest, then refit
/// on its inliers. Returns the model and the inlier mask.
pub fn estimate_homography_mlesac(matches: &[Correspondence], params: &MlesacParams) -> Result<(Homography, Vec<bool>)> {
    let n = matches.len();
    if n < 4 {
        return Err(Error::NoModel(format!("{n} correspondences, need 4")));
    }
    let s2 = params.sigma * params.sigma;
    let cost = |h: &Homography| -> f64 { matches.iter().map(|c| (residual2(h, c) / s2).min(OUTLIER_COST)).sum() };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, Homography)> = None;
    for _ in 0..params.iterations {
        let idx = rand::seq::index::sample(&mut rng, n, 4);
        let sample = [&matches[idx.index(0)], &matches[idx.index(1)], &matches[idx.index(2)], &matches[idx.index(3)]];
        if degenerate(&sample) {
            continue;
        }
        let Ok(h) = fit_dlt(&sample) else { continue };
        let c = cost(&h);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, h));
        }
        if c == 0.0 {
            break;
        }
    }
    let (_, mut h) = best.ok_or_else(|| Error::NoModel("every minimal sample was degenerate".into()))?;
    let inliers_of = |h: &Homography| -> Vec<bool> { matches.iter().map(|c| residual2(h, c) < OUTLIER_COST * s2).collect() };
    let mut mask = inliers_of(&h);
    for _ in 0..5 {
        let inl: Vec<&Correspondence> = matches.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c).collect();
        let Ok(refit) = fit_dlt(&inl) else { break };
        let next = inliers_of(&refit);
        if next.iter().filter(|&&m| m).count() < mask.iter().filter(|&&m| m).count() {
            break;
        }
        h = refit;
        if next == mask {
            break;
        }
        mask = next;
    }
    Ok((h, mask))
}
