use rand::Rng;

use crate::{Frame, FrameStack, Result};

/// The geometric augmentation family: optional horizontal flip, four
/// rotations, four downscales, and a number of random crops per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub flips: Vec<bool>,
    /// Quarter turns counter-clockwise.
    pub rotations: Vec<u8>,
    /// Integer downscale divisors (1 = full size, 4 = quarter size).
    pub scales: Vec<usize>,
    pub crops_per_image: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            flips: vec![false, true],
            rotations: vec![0, 1, 2, 3],
            scales: vec![1, 2, 3, 4],
            crops_per_image: 10,
        }
    }
}

impl AugmentSpec {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out = vec![];
        for &flip in &self.flips {
            for &rotation in &self.rotations {
                for &scale in &self.scales {
                    out.push(Variant { flip, rotation, scale });
                }
            }
        }
        out
    }

    /// Patch pairs produced per source frame.
    pub fn multiplicity(&self) -> usize {
        self.variants().len() * self.crops_per_image
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub flip: bool,
    pub rotation: u8,
    pub scale: usize,
}

impl Variant {
    pub const IDENTITY: Variant = Variant {
        flip: false,
        rotation: 0,
        scale: 1,
    };
}

/// One training example: a blurry stack and the sharp central frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub stack: FrameStack,
    pub sharp: Frame,
}

/// Where a patch comes from in the source frame: the region of edge
/// `patch * scale` at `(x, y)`, then the variant's transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub variant: Variant,
    pub x: usize,
    pub y: usize,
}

fn box_downscale(f: &Frame, s: usize) -> Frame {
    if s == 1 {
        return f.clone();
    }
    let (w, h) = (f.width() / s, f.height() / s);
    let norm = 1.0 / (s * s) as f32;
    Frame::from_fn(f.channels(), w, h, |c, x, y| {
        let mut acc = 0.0;
        for dy in 0..s {
            for dx in 0..s {
                acc += f.get(c, x * s + dx, y * s + dy);
            }
        }
        acc * norm
    })
}

fn flip_horizontal(f: &Frame) -> Frame {
    let w = f.width();
    Frame::from_fn(f.channels(), w, f.height(), |c, x, y| f.get(c, w - 1 - x, y))
}

/// Rotate a frame by quarter turns counter-clockwise.
pub fn rotate(f: &Frame, quarter_turns: u8) -> Frame {
    let (w, h) = f.dims();
    match quarter_turns % 4 {
        0 => f.clone(),
        1 => Frame::from_fn(f.channels(), h, w, |c, x, y| f.get(c, w - 1 - y, x)),
        2 => Frame::from_fn(f.channels(), w, h, |c, x, y| f.get(c, w - 1 - x, h - 1 - y)),
        _ => Frame::from_fn(f.channels(), h, w, |c, x, y| f.get(c, y, h - 1 - x)),
    }
}

/// Crop, downscale, flip, rotate.
pub fn transform_frame(f: &Frame, crop: &Crop, patch: usize) -> Frame {
    let s = crop.variant.scale;
    let region = f.crop(crop.x, crop.y, patch * s, patch * s);
    let mut out = box_downscale(&region, s);
    if crop.variant.flip {
        out = flip_horizontal(&out);
    }
    rotate(&out, crop.variant.rotation)
}

/// Apply one crop identically to all six images of a sample.
pub fn apply_crop(sample: &TrainSample, crop: &Crop, patch: usize) -> Result<TrainSample> {
    Ok(TrainSample {
        stack: sample.stack.map_frames(|f| transform_frame(f, crop, patch))?,
        sharp: transform_frame(&sample.sharp, crop, patch),
    })
}

/// Whether a variant's source region fits a `width x height` frame.
pub fn fits(variant: &Variant, patch: usize, width: usize, height: usize) -> bool {
    patch * variant.scale <= width && patch * variant.scale <= height
}

/// Draw a random variant and crop position valid for the frame size, or
/// `None` if no scale fits. Variants whose scaled region does not fit are
/// skipped.
pub fn random_crop<R: Rng>(spec: &AugmentSpec, patch: usize, width: usize, height: usize, rng: &mut R) -> Option<Crop> {
    let all = spec.variants();
    let variants: Vec<Variant> = all.iter().copied().filter(|v| fits(v, patch, width, height)).collect();
    if variants.len() < all.len() {
        log::debug!("{width}x{height} frame: scales beyond the frame skipped for {patch}px patches");
    }
    if variants.is_empty() {
        return None;
    }
    let variant = variants[rng.random_range(0..variants.len())];
    let side = patch * variant.scale;
    Some(Crop {
        variant,
        x: rng.random_range(0..=width - side),
        y: rng.random_range(0..=height - side),
    })
}

/// Augment a sample with a random variant and crop.
pub fn augment<R: Rng>(sample: &TrainSample, spec: &AugmentSpec, patch: usize, rng: &mut R) -> Option<TrainSample> {
    let (w, h) = sample.sharp.dims();
    let crop = random_crop(spec, patch, w, h, rng)?;
    apply_crop(sample, &crop, patch).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn(3, w, h, |c, x, y| (c * 10000 + y * 100 + x) as f32)
    }

    #[test]
    fn multiplicity_is_320() {
        let spec = AugmentSpec::default();
        assert_eq!(spec.multiplicity(), 2 * 4 * 4 * 10);
        assert_eq!(6_708 * spec.multiplicity(), 2_146_560);
    }

    #[test]
    fn identity_crop_is_subregion() {
        let f = ramp(20, 16);
        let crop = Crop {
            variant: Variant::IDENTITY,
            x: 3,
            y: 5,
        };
        assert_eq!(transform_frame(&f, &crop, 8), f.crop(3, 5, 8, 8));
    }

    #[test]
    fn rotation_group() {
        let f = ramp(6, 4);
        assert_eq!(rotate(&rotate(&f, 1), 1), rotate(&f, 2));
        assert_eq!(rotate(&rotate(&f, 3), 1), f);
        assert_eq!(rotate(&f, 1).dims(), (4, 6));
    }

    #[test]
    fn downscale_averages_blocks() {
        let f = Frame::from_fn(1, 4, 2, |_, x, _| x as f32);
        assert_eq!(box_downscale(&f, 2).data(), &[0.5, 2.5]);
    }

    #[test]
    fn random_crops_respect_bounds_and_skip_oversized_scales() {
        let spec = AugmentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let c = random_crop(&spec, 16, 40, 50, &mut rng).unwrap();
            assert!(c.variant.scale <= 2);
            let side = 16 * c.variant.scale;
            assert!(c.x + side <= 40 && c.y + side <= 50);
        }
        assert!(random_crop(&spec, 16, 15, 50, &mut rng).is_none());
    }
}
