//! Synthetic motion blur from high-framerate footage: keep every eighth frame
//! as ground truth and average a centered window of source frames plus
//! flow-interpolated in-betweens to form its blurry counterpart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::align::{compute_flow, FlowField, FlowParams};
use crate::imgproc::sample_bilinear;
use crate::io::{save_image, write_atomic};
use crate::{Error, Frame, Result};

/// Source frames skipped between consecutive ground-truth frames (240 to 30 fps).
pub const SOURCE_STRIDE: usize = 8;
/// Source frames on each side of the center that enter the average.
pub const WINDOW_RADIUS: usize = 3;
pub const WINDOW_LEN: usize = 2 * WINDOW_RADIUS + 1;
/// Interpolated images inserted between each adjacent pair of source frames.
pub const SUBFRAMES: usize = 10;
/// Images averaged per blurry frame: 7 originals and 6 x 10 in-betweens.
pub const IMAGES_PER_BLUR: usize = WINDOW_LEN + (WINDOW_LEN - 1) * SUBFRAMES;

/// Sharp frames captured at a rate `SOURCE_STRIDE` times the target rate.
#[derive(Debug, Clone)]
pub struct HighFpsSequence {
    frames: Vec<Frame>,
    source_fps: f64,
    target_fps: f64,
}

impl HighFpsSequence {
    pub fn new(frames: Vec<Frame>, source_fps: f64, target_fps: f64) -> Result<Self> {
        if !(source_fps > 0.0 && target_fps > 0.0) {
            return Err(Error::Invalid("frame rates must be positive".into()));
        }
        let ratio = source_fps / target_fps;
        if (ratio - SOURCE_STRIDE as f64).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "source/target frame rate ratio is {ratio}, expected {SOURCE_STRIDE}"
            )));
        }
        if frames.len() < WINDOW_LEN {
            return Err(Error::SequenceTooShort {
                required: WINDOW_LEN,
                got: frames.len(),
            });
        }
        if frames.iter().any(|f| f.channels() != 3 || !f.same_dims(&frames[0])) {
            return Err(Error::Invalid("sequence frames must be RGB of one size".into()));
        }
        Ok(HighFpsSequence {
            frames,
            source_fps,
            target_fps,
        })
    }

    /// 240 fps source, 30 fps target.
    pub fn at_240fps(frames: Vec<Frame>) -> Result<Self> {
        HighFpsSequence::new(frames, 240.0, 30.0)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.source_fps, self.target_fps)
    }
}

/// Source indices of the ground-truth frames: `3, 11, 19, ...` while a full
/// window fits, i.e. pair `k` needs `7 + 8k` source frames.
pub fn subsample_sharp(seq: &HighFpsSequence) -> Vec<usize> {
    (0..)
        .map(|i| WINDOW_RADIUS + SOURCE_STRIDE * i)
        .take_while(|&c| c + WINDOW_RADIUS < seq.len())
        .collect()
}

/// `n` evenly spaced in-betweens from `a` to `b`. Frame `j` (1-based) at time
/// `t = j / (n + 1)` blends `a` sampled at `x - t F` with `b` sampled at
/// `x + (1 - t) F`, weighted by `1 - t` and `t`, where `F` is the flow from `a`
/// to `b` (`b(x + F) ~ a(x)`).
pub fn interpolate_subframes(a: &Frame, b: &Frame, flow_ab: &FlowField, n: usize) -> Result<Vec<Frame>> {
    if !a.same_dims(b) || (flow_ab.width, flow_ab.height) != a.dims() {
        return Err(Error::Invalid("interpolation frames and flow differ in size".into()));
    }
    let (w, h) = a.dims();
    Ok((1..=n)
        .map(|j| {
            let t = j as f32 / (n + 1) as f32;
            let mut out = Frame::new(a.channels(), w, h);
            for c in 0..a.channels() {
                let (pa, pb) = (a.plane(c), b.plane(c));
                for (i, d) in out.plane_mut(c).iter_mut().enumerate() {
                    let (x, y) = ((i % w) as f32, (i / w) as f32);
                    let (u, v) = (flow_ab.u[i], flow_ab.v[i]);
                    let wa = sample_bilinear(pa, w, h, x - t * u, y - t * v);
                    let wb = sample_bilinear(pb, w, h, x + (1.0 - t) * u, y + (1.0 - t) * v);
                    *d = wa + t * (wb - wa);
                }
            }
            out
        })
        .collect())
}

/// The 67 equally weighted images behind one blurry frame, in time order.
pub fn blur_constituents(window: &[Frame], flows: &[FlowField]) -> Result<Vec<Frame>> {
    if window.len() != WINDOW_LEN {
        return Err(Error::Invalid(format!("blur window holds {WINDOW_LEN} frames, got {}", window.len())));
    }
    if flows.len() != WINDOW_LEN - 1 {
        return Err(Error::Invalid(format!("need {} flows, got {}", WINDOW_LEN - 1, flows.len())));
    }
    let mut images = Vec::with_capacity(IMAGES_PER_BLUR);
    for k in 0..WINDOW_LEN - 1 {
        images.push(window[k].clone());
        images.extend(interpolate_subframes(&window[k], &window[k + 1], &flows[k], SUBFRAMES)?);
    }
    images.push(window[WINDOW_LEN - 1].clone());
    Ok(images)
}

/// Uniform average (accumulated in double precision) of the stored, gamma
/// encoded values.
pub fn average_frames(images: &[Frame]) -> Frame {
    let first = &images[0];
    let mut acc = vec![0.0f64; first.data().len()];
    for img in images {
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v as f64;
        }
    }
    let n = images.len() as f64;
    Frame::from_vec(first.channels(), first.width(), first.height(), acc.iter().map(|&s| (s / n) as f32).collect())
        .expect("same extents as the inputs")
}

/// Blurry frame for a 7-frame window and the 6 flows between neighbors.
pub fn synthesize_blurry(window: &[Frame], flows: &[FlowField]) -> Result<Frame> {
    Ok(average_frames(&blur_constituents(window, flows)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub blurry: Frame,
    pub sharp: Frame,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub video_id: String,
    pub pair_index: usize,
    pub source_center_index: usize,
    pub skipped: bool,
}

pub const MANIFEST_HEADER: &str = "video_id,pair_index,source_center_index,skipped_flag";

pub fn render_manifest(rows: &[ManifestRow]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.video_id, r.pair_index, r.source_center_index, r.skipped as u8);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::Invalid("manifest header missing".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Invalid(format!("malformed manifest row `{l}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(ManifestRow {
                video_id: f[0].to_string(),
                pair_index: f[1].parse().map_err(|_| bad())?,
                source_center_index: f[2].parse().map_err(|_| bad())?,
                skipped: match f[3] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

pub fn pair_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

/// Blurry/sharp pair for the ground-truth frame at source index `center`,
/// or `None` when a flow is unusable.
pub fn synthesize_pair(seq: &HighFpsSequence, center: usize, flow: &FlowParams) -> Result<Option<SamplePair>> {
    let window = &seq.frames()[center - WINDOW_RADIUS..=center + WINDOW_RADIUS];
    let mut flows = Vec::with_capacity(WINDOW_LEN - 1);
    for k in 0..WINDOW_LEN - 1 {
        let f = if window[k] == window[k + 1] {
            FlowField::zeros(window[k].width(), window[k].height())
        } else {
            compute_flow(&window[k], &window[k + 1], flow)?
        };
        if !f.u.iter().chain(&f.v).all(|v| v.is_finite()) {
            return Ok(None);
        }
        flows.push(f);
    }
    Ok(Some(SamplePair {
        blurry: synthesize_blurry(window, &flows)?,
        sharp: seq.frames()[center].clone(),
    }))
}

/// Synthesize every pair of a sequence and write
/// `<root>/<video_id>/{blurry,sharp}/NNNNN.png` plus
/// `<root>/<video_id>/manifest.csv`. Pairs whose flow fails are skipped and
/// flagged in the manifest.
pub fn generate_pairs(
    seq: &HighFpsSequence,
    video_id: &str,
    root: &Path,
    flow: &FlowParams,
) -> Result<Vec<ManifestRow>> {
    let dir: PathBuf = root.join(video_id);
    let centers = subsample_sharp(seq);
    let rows = centers
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let pair = synthesize_pair(seq, c, flow)?;
            if let Some(p) = &pair {
                save_image(&p.blurry, dir.join("blurry").join(pair_file_name(i)))?;
                save_image(&p.sharp, dir.join("sharp").join(pair_file_name(i)))?;
            } else {
                log::warn!("{video_id}: pair {i} skipped, flow failed");
            }
            Ok(ManifestRow {
                video_id: video_id.to_string(),
                pair_index: i,
                source_center_index: c,
                skipped: pair.is_none(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&dir.join("manifest.csv"), render_manifest(&rows).as_bytes())?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_of(n: usize) -> HighFpsSequence {
        HighFpsSequence::at_240fps(vec![Frame::new(3, 8, 8); n]).unwrap()
    }

    #[test]
    fn pair_counts_follow_window_rule() {
        assert_eq!(subsample_sharp(&seq_of(7)), vec![3]);
        assert_eq!(subsample_sharp(&seq_of(14)), vec![3]);
        assert_eq!(subsample_sharp(&seq_of(15)), vec![3, 11]);
        let c = subsample_sharp(&seq_of(240));
        assert_eq!(c.len(), 30);
        assert_eq!(*c.last().unwrap(), 235);
        assert!(matches!(
            HighFpsSequence::at_240fps(vec![Frame::new(3, 8, 8); 6]),
            Err(Error::SequenceTooShort { required: 7, got: 6 })
        ));
        assert!(HighFpsSequence::new(vec![Frame::new(3, 8, 8); 7], 240.0, 60.0).is_err());
        assert_eq!(IMAGES_PER_BLUR, 67);
    }

    #[test]
    fn zero_flow_equal_frames_interpolate_to_copies() {
        let a = Frame::from_fn(3, 9, 7, |c, x, y| (c * 31 + x * 7 + y * 3) as f32 / 100.0);
        let frames = interpolate_subframes(&a, &a, &FlowField::zeros(9, 7), 10).unwrap();
        assert_eq!(frames.len(), 10);
        assert!(frames.iter().all(|f| *f == a));
    }

    #[test]
    fn impulse_moves_along_flow() {
        let (w, h, d) = (40, 5, 11.0f32);
        let a = Frame::from_fn(3, w, h, |_, x, y| if (x, y) == (5, 2) { 1.0 } else { 0.0 });
        let b = Frame::from_fn(3, w, h, |_, x, y| if (x, y) == (16, 2) { 1.0 } else { 0.0 });
        let frames = interpolate_subframes(&a, &b, &FlowField::uniform(w, h, d, 0.0), 10).unwrap();
        for (j, f) in frames.iter().enumerate() {
            let peak = (0..w).max_by(|&p, &q| f.get(0, p, 2).total_cmp(&f.get(0, q, 2))).unwrap();
            assert_eq!(peak, 5 + j + 1);
            assert_eq!(f.get(0, peak, 2), 1.0);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let rows = vec![
            ManifestRow {
                video_id: "v1".into(),
                pair_index: 0,
                source_center_index: 3,
                skipped: false,
            },
            ManifestRow {
                video_id: "v1".into(),
                pair_index: 1,
                source_center_index: 11,
                skipped: true,
            },
        ];
        let text = render_manifest(&rows);
        assert!(text.starts_with("video_id,pair_index,source_center_index,skipped_flag\n"));
        assert_eq!(parse_manifest(&text).unwrap(), rows);
    }

    #[test]
    fn wrong_flow_count_rejected() {
        let w = vec![Frame::new(3, 4, 4); 7];
        assert!(synthesize_blurry(&w, &vec![FlowField::zeros(4, 4); 5]).is_err());
        assert!(synthesize_blurry(&w[..6], &vec![FlowField::zeros(4, 4); 6]).is_err());
    }
}
