use std::path::{Path, PathBuf};

use crate::frame::{CENTER_INDEX, STACK_LEN};
use crate::io::load_image;
use crate::{Error, Frame, FrameStack, Result};

/// Frames of one video: blurry inputs and, when available, sharp ground truth.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub id: String,
    pub blurry: Vec<Frame>,
    pub sharp: Option<Vec<Frame>>,
}

/// The five-frame window around `center`; indices past either end repeat
/// the edge frame. In single-frame mode the center fills every slot.
pub fn make_stack(frames: &[Frame], center: usize, single_frame_mode: bool) -> Result<FrameStack> {
    if frames.is_empty() || center >= frames.len() {
        return Err(Error::Invalid(format!("frame {center} outside a {}-frame video", frames.len())));
    }
    if single_frame_mode {
        return FrameStack::replicate(frames[center].clone());
    }
    let last = frames.len() as i64 - 1;
    let window = (0..STACK_LEN)
        .map(|k| {
            let i = (center as i64 + k as i64 - CENTER_INDEX as i64).clamp(0, last);
            frames[i as usize].clone()
        })
        .collect();
    FrameStack::new(window)
}

/// Sorted `*.png` files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!("{}: no PNG frames", dir.display())));
    }
    files.iter().map(load_image).collect()
}

/// Load a video directory. With `blurry/` (and optionally `sharp/`) subfolders
/// those are used; otherwise the directory's own PNGs are the blurry frames.
pub fn load_video(dir: &Path) -> Result<VideoClip> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let blurry_dir = dir.join("blurry");
    let (blurry, sharp) = if blurry_dir.is_dir() {
        let blurry = load_frames(&blurry_dir)?;
        let sharp_dir = dir.join("sharp");
        let sharp = if sharp_dir.is_dir() { Some(load_frames(&sharp_dir)?) } else { None };
        (blurry, sharp)
    } else {
        (load_frames(dir)?, None)
    };
    if let Some(s) = &sharp {
        if s.len() != blurry.len() || s.iter().zip(&blurry).any(|(a, b)| !a.same_dims(b)) {
            return Err(Error::Invalid(format!("{}: blurry and sharp frames do not pair up", dir.display())));
        }
    }
    if blurry.iter().any(|f| !f.same_dims(&blurry[0])) {
        return Err(Error::Invalid(format!("{}: frames differ in size", dir.display())));
    }
    Ok(VideoClip { id, blurry, sharp })
}

/// Every video directory (one holding `blurry/`) under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<VideoClip>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("blurry").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!("{}: no video directories with blurry/ frames", root.display())));
    }
    dirs.iter().map(|d| load_video(d)).collect()
}

/// Split whole videos into training and validation sets: the last
/// `val_videos` (by name) are held out, keeping at least one for training.
pub fn split_by_video(mut videos: Vec<VideoClip>, val_videos: usize) -> (Vec<VideoClip>, Vec<VideoClip>) {
    let n_val = val_videos.min(videos.len().saturating_sub(1));
    let val = videos.split_off(videos.len() - n_val);
    (videos, val)
}
