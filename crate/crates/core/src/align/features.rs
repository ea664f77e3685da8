use super::Correspondence;
use crate::imgproc::Plane;
use crate::Frame;

const HARRIS_K: f32 = 0.04;
const MAX_CORNERS: usize = 500;
/// Descriptor patches are `(2 * PATCH_RADIUS + 1)^2` pixels.
const PATCH_RADIUS: usize = 5;
const NMS_RADIUS: usize = 2;
const RATIO: f32 = 0.8;
const MIN_NCC: f32 = 0.5;

struct Feature {
    x: usize,
    y: usize,
    desc: Vec<f32>,
}

/// Harris corners: local maxima of `det(M) - k tr(M)^2` over a Gaussian
/// weighted structure tensor, strongest first.
fn corners(img: &Plane) -> Vec<(usize, usize)> {
    let (w, h) = (img.w, img.h);
    let margin = PATCH_RADIUS + 1;
    if w <= 2 * margin || h <= 2 * margin {
        return vec![];
    }
    let (gx, gy) = img.gradient();
    let prod = |a: &Plane, b: &Plane| Plane::new(w, h, a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect());
    let sxx = prod(&gx, &gx).blur(1.5);
    let syy = prod(&gy, &gy).blur(1.5);
    let sxy = prod(&gx, &gy).blur(1.5);
    let r: Vec<f32> = (0..w * h)
        .map(|i| {
            let (a, b, c) = (sxx.data[i], syy.data[i], sxy.data[i]);
            a * b - c * c - HARRIS_K * (a + b) * (a + b)
        })
        .collect();
    let peak = r.iter().cloned().fold(0.0f32, f32::max);
    if peak <= 1e-10 {
        return vec![];
    }
    let thresh = 0.01 * peak;
    let mut found = vec![];
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = r[y * w + x];
            if v <= thresh {
                continue;
            }
            let mut is_max = true;
            'nms: for yy in y - NMS_RADIUS..=y + NMS_RADIUS {
                for xx in x - NMS_RADIUS..=x + NMS_RADIUS {
                    let o = r[yy * w + xx];
                    // ties go to the earlier pixel in scan order
                    if o > v || (o == v && (yy, xx) < (y, x)) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                found.push((v, x, y));
            }
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    found.truncate(MAX_CORNERS);
    found.into_iter().map(|(_, x, y)| (x, y)).collect()
}

/// Zero-mean, unit-norm patch; `None` on flat patches.
fn descriptor(img: &Plane, x: usize, y: usize) -> Option<Vec<f32>> {
    let r = PATCH_RADIUS;
    let mut d: Vec<f32> = (y - r..=y + r)
        .flat_map(|yy| (x - r..=x + r).map(move |xx| (xx, yy)))
        .map(|(xx, yy)| img.at(xx, yy))
        .collect();
    let mean = d.iter().sum::<f32>() / d.len() as f32;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

fn features(img: &Plane) -> Vec<Feature> {
    corners(img)
        .into_iter()
        .filter_map(|(x, y)| descriptor(img, x, y).map(|desc| Feature { x, y, desc }))
        .collect()
}

fn ncc(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best and second-best correlation of `f` against `others`.
fn best_two(f: &Feature, others: &[Feature]) -> Option<(usize, f32, f32)> {
    let mut best: Option<(usize, f32)> = None;
    let mut second = -1.0f32;
    for (j, o) in others.iter().enumerate() {
        let s = ncc(&f.desc, &o.desc);
        match best {
            Some((_, b)) if s <= b => second = second.max(s),
            _ => {
                if let Some((_, b)) = best {
                    second = second.max(b);
                }
                best = Some((j, s));
            }
        }
    }
    best.map(|(j, s)| (j, s, second))
}

/// Corner matches between a reference frame and a neighbor: Harris corners
/// described by normalized 11x11 luma patches, kept when they are mutual
/// best matches that pass a distance ratio test.
pub fn detect_and_match(reference: &Frame, neighbor: &Frame) -> Vec<Correspondence> {
    let to_plane = |f: &Frame| {
        let l = f.luma();
        Plane::new(l.width(), l.height(), l.into_data())
    };
    let fr = features(&to_plane(reference));
    let fnb = features(&to_plane(neighbor));
    if fr.is_empty() || fnb.is_empty() {
        return vec![];
    }
    // distance between unit vectors from their correlation
    let dist = |s: f32| (2.0 - 2.0 * s).max(0.0).sqrt();
    let mut out = vec![];
    for (i, f) in fr.iter().enumerate() {
        let Some((j, s, second)) = best_two(f, &fnb) else { continue };
        if s < MIN_NCC {
            continue;
        }
        if second > -1.0 && dist(s) > RATIO * dist(second) {
            continue;
        }
        match best_two(&fnb[j], &fr) {
            Some((back, _, _)) if back == i => {}
            _ => continue,
        }
        out.push(Correspondence {
            p: (fnb[j].x as f64, fnb[j].y as f64),
            q: (f.x as f64, f.y as f64),
            score: s as f64,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random blocks blurred slightly: plenty of corners.
    fn textured(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f32> = (0..(w / 6 + 2) * (h / 6 + 2)).map(|_| rng.random()).collect();
        let cw = w / 6 + 2;
        let base = Frame::from_fn(1, w, h, |_, x, y| cells[(y / 6) * cw + x / 6]);
        let p = Plane::new(w, h, base.into_data()).blur(0.7);
        Frame::from_fn(3, w, h, |c, x, y| p.at(x, y) * (0.8 + 0.1 * c as f32))
    }

    #[test]
    fn identical_frames_match_in_place() {
        let f = textured(96, 80, 1);
        let m = detect_and_match(&f, &f);
        assert!(m.len() > 20);
        assert!(m.iter().all(|c| c.p == c.q));
    }

    #[test]
    fn shifted_frame_gives_median_displacement() {
        let f = textured(120, 90, 2);
        let g = Frame::from_fn(3, 120, 90, |c, x, y| f.get(c, x.saturating_sub(5), y));
        let m = detect_and_match(&f, &g);
        assert!(m.len() > 10);
        let mut dx: Vec<f64> = m.iter().map(|c| c.p.0 - c.q.0).collect();
        let mut dy: Vec<f64> = m.iter().map(|c| c.p.1 - c.q.1).collect();
        dx.sort_by(f64::total_cmp);
        dy.sort_by(f64::total_cmp);
        assert!((dx[dx.len() / 2] - 5.0).abs() <= 0.5);
        assert!(dy[dy.len() / 2].abs() <= 0.5);
    }

    #[test]
    fn constant_frame_has_no_matches() {
        let f = Frame::filled(3, 64, 64, 0.4);
        assert!(detect_and_match(&f, &f).is_empty());
    }
}
