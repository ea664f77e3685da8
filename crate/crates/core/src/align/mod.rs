//! Registering the neighbors of a stack onto its central frame: no
//! alignment, one global homography per frame, or dense optical flow.

mod features;
mod flow;
mod homography;

use std::str::FromStr;

use rayon::prelude::*;

use crate::frame::CENTER_INDEX;
use crate::{Error, Frame, FrameStack, Result};

pub use features::detect_and_match;
pub use flow::{compute_flow, FlowField, FlowParams};
pub use homography::{estimate_homography_mlesac, fit_dlt, Homography, MlesacParams};

/// A matched point pair: `p` in the neighbor, `q` in the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: (f64, f64),
    pub q: (f64, f64),
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AlignMode {
    #[default]
    None,
    Homography,
    Flow,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::None => "none",
            AlignMode::Homography => "homog",
            AlignMode::Flow => "flow",
        }
    }
}

impl FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AlignMode::None),
            "homog" | "homography" => Ok(AlignMode::Homography),
            "flow" => Ok(AlignMode::Flow),
            other => Err(Error::Config(format!("unknown alignment mode `{other}` (none, homog, flow)"))),
        }
    }
}

impl std::fmt::Display for AlignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignParams {
    pub mlesac: MlesacParams,
    pub flow: FlowParams,
}

/// Backward warp: output pixel `x` reads the input at `H x`.
pub fn warp_homography(frame: &Frame, h: &Homography) -> Frame {
    let mut coords = Vec::with_capacity(frame.width() * frame.height());
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let (sx, sy) = h.apply(x as f64, y as f64);
            coords.push((sx as f32, sy as f32));
        }
    }
    warp_coords(frame, &coords)
}

/// Backward warp: output pixel `x` reads the input at `x + flow(x)`.
pub fn warp_flow(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    if (flow.width, flow.height) != frame.dims() {
        return Err(Error::Invalid(format!(
            "flow is {}x{}, frame is {}x{}",
            flow.width,
            flow.height,
            frame.width(),
            frame.height()
        )));
    }
    let w = frame.width();
    let coords: Vec<(f32, f32)> = (0..w * frame.height())
        .map(|i| ((i % w) as f32 + flow.u[i], (i / w) as f32 + flow.v[i]))
        .collect();
    Ok(warp_coords(frame, &coords))
}

fn warp_coords(frame: &Frame, coords: &[(f32, f32)]) -> Frame {
    let (w, h) = frame.dims();
    let mut out = Frame::new(frame.channels(), w, h);
    for c in 0..frame.channels() {
        let src = frame.plane(c);
        for (d, &(x, y)) in out.plane_mut(c).iter_mut().zip(coords) {
            *d = crate::imgproc::sample_bilinear(src, w, h, x, y);
        }
    }
    out
}

fn align_one(reference: &Frame, neighbor: &Frame, mode: AlignMode, params: &AlignParams, slot: usize) -> Frame {
    match mode {
        AlignMode::None => neighbor.clone(),
        AlignMode::Homography => {
            let matches = detect_and_match(reference, neighbor);
            match estimate_homography_mlesac(&matches, &params.mlesac) {
                Ok((h, _)) => warp_homography(neighbor, &h),
                Err(e) => {
                    log::warn!("frame {slot}: homography failed ({e}); left unaligned");
                    neighbor.clone()
                }
            }
        }
        AlignMode::Flow => match compute_flow(reference, neighbor, &params.flow).and_then(|f| warp_flow(neighbor, &f)) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("frame {slot}: flow failed ({e}); left unaligned");
                neighbor.clone()
            }
        },
    }
}

/// Warp every non-central frame onto the central one. The central frame is
/// passed through untouched.
pub fn align_stack(stack: &FrameStack, mode: AlignMode, params: &AlignParams) -> FrameStack {
    if mode == AlignMode::None {
        return stack.clone();
    }
    let reference = stack.center();
    let frames: Vec<Frame> = stack
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            if i == CENTER_INDEX {
                f.clone()
            } else {
                align_one(reference, f, mode, params, i)
            }
        })
        .collect();
    FrameStack::new(frames).expect("alignment preserves frame extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::Plane;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells: Vec<f32> = (0..(w / 6 + 2) * (h / 6 + 2)).map(|_| rng.random()).collect();
        let cw = w / 6 + 2;
        let p = Plane::new(w, h, (0..w * h).map(|i| cells[(i / w / 6) * cw + (i % w) / 6]).collect()).blur(0.8);
        Frame::from_fn(3, w, h, |c, x, y| p.at(x, y) * (0.7 + 0.15 * c as f32))
    }

    #[test]
    fn identity_warps_are_exact() {
        let f = smooth(40, 30, 1);
        assert_eq!(warp_homography(&f, &Homography::identity()), f);
        assert_eq!(warp_flow(&f, &FlowField::zeros(40, 30)).unwrap(), f);
    }

    #[test]
    fn integer_translation_is_a_pixel_shift() {
        let f = smooth(40, 30, 2);
        let g = warp_homography(&f, &Homography::translation(3.0, -2.0));
        for y in 2..30 {
            for x in 0..37 {
                assert_eq!(g.get(1, x, y), f.get(1, x + 3, y - 2));
            }
        }
    }

    #[test]
    fn warp_round_trip_keeps_quality() {
        let f = Frame::from_fn(3, 96, 80, |c, x, y| {
            0.5 + 0.4 * ((x as f32 * 0.07 + c as f32).sin() * (y as f32 * 0.05).cos())
        });
        let h = Homography::new([[1.01, 0.02, 1.3], [-0.015, 0.99, 0.7], [2e-5, 1e-5, 1.0]]).unwrap();
        let back = warp_homography(&warp_homography(&f, &h), &h.inverse().unwrap());
        let m = 10;
        let (mut se, mut n) = (0.0f64, 0.0);
        for c in 0..3 {
            for y in m..80 - m {
                for x in m..96 - m {
                    se += ((back.get(c, x, y) - f.get(c, x, y)) as f64).powi(2);
                    n += 1.0;
                }
            }
        }
        let psnr = 10.0 * (1.0 / (se / n)).log10();
        assert!(psnr > 35.0, "{psnr}");
    }

    #[test]
    fn homography_alignment_registers_shifted_copies() {
        let base = smooth(140, 110, 3);
        let shifts = [(-4i64, 2i64), (-2, 1), (0, 0), (3, -1), (5, 3)];
        let frames: Vec<Frame> = shifts
            .iter()
            .map(|&(dx, dy)| {
                Frame::from_fn(3, 140, 110, |c, x, y| {
                    let sx = (x as i64 - dx).clamp(0, 139) as usize;
                    let sy = (y as i64 - dy).clamp(0, 109) as usize;
                    base.get(c, sx, sy)
                })
            })
            .collect();
        let stack = FrameStack::new(frames).unwrap();
        let aligned = align_stack(&stack, AlignMode::Homography, &AlignParams::default());
        assert_eq!(aligned.center(), stack.center());
        // estimated transforms translate by the true shift within half a pixel
        for (i, &(dx, dy)) in shifts.iter().enumerate() {
            if i == CENTER_INDEX {
                continue;
            }
            let m = detect_and_match(stack.center(), stack.frame(i));
            let (h, _) = estimate_homography_mlesac(&m, &MlesacParams::default()).unwrap();
            let (x, y) = h.apply(70.0, 55.0);
            assert!((x - 70.0 - dx as f64).abs() < 0.5 && (y - 55.0 - dy as f64).abs() < 0.5);
            let f = aligned.frame(i);
            for yy in 10..100 {
                for xx in 10..130 {
                    assert!((f.get(0, xx, yy) - stack.center().get(0, xx, yy)).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn none_mode_is_identity_and_center_untouched_everywhere() {
        let frames: Vec<Frame> = (0..5).map(|i| smooth(48, 40, 10 + i)).collect();
        let stack = FrameStack::new(frames).unwrap();
        assert_eq!(align_stack(&stack, AlignMode::None, &AlignParams::default()), stack);
        for mode in [AlignMode::Homography, AlignMode::Flow] {
            let a = align_stack(&stack, mode, &AlignParams::default());
            assert_eq!(a.center().data(), stack.center().data());
        }
    }

    #[test]
    fn mode_names_parse() {
        for m in [AlignMode::None, AlignMode::Homography, AlignMode::Flow] {
            assert_eq!(m.name().parse::<AlignMode>().unwrap(), m);
        }
        assert!("affine".parse::<AlignMode>().is_err());
    }
}
