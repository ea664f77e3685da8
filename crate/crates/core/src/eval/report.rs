use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::metrics::{mssim, psnr, MSSSIM_WEIGHTS, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use super::tiling::{tiled_inference, TileConfig};
use crate::align::{align_stack, AlignMode, AlignParams};
use crate::io::{save_image, write_atomic};
use crate::model::ModelParams;
use crate::train::{load_video, make_stack, VideoClip};
use crate::{Frame, Result};

/// Label of the baseline row comparing the blurry input to ground truth.
pub const INPUT_LABEL: &str = "Input";

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub frame_id: String,
    pub psnr_db: f64,
    pub mssim: f64,
}

/// Per-method averages. Infinite PSNR values are left out of the PSNR mean
/// and counted in `infinite_psnr`.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodAverage {
    pub method: String,
    pub psnr_db: f64,
    pub mssim: f64,
    pub frames: usize,
    pub infinite_psnr: usize,
}

pub fn average(method: &str, rows: &[FrameMetrics]) -> MethodAverage {
    let finite: Vec<f64> = rows.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    MethodAverage {
        method: method.to_string(),
        psnr_db: mean(&finite),
        mssim: mean(&rows.iter().map(|r| r.mssim).collect::<Vec<_>>()),
        frames: rows.len(),
        infinite_psnr: rows.len() - finite.len(),
    }
}

/// Metrics of one evaluated sequence (or several, concatenated). Both lists
/// are empty when no ground truth was available.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method_label: String,
    pub per_frame: Vec<FrameMetrics>,
    /// The same metrics for the unprocessed central input frames.
    pub input: Vec<FrameMetrics>,
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl MetricReport {
    pub fn has_metrics(&self) -> bool {
        !self.per_frame.is_empty()
    }

    pub fn per_video(&self) -> MethodAverage {
        average(&self.method_label, &self.per_frame)
    }

    pub fn input_average(&self) -> MethodAverage {
        average(INPUT_LABEL, &self.input)
    }

    /// Concatenate reports of several videos evaluated with the same method.
    pub fn merge(reports: &[MetricReport]) -> MetricReport {
        MetricReport {
            method_label: reports.first().map(|r| r.method_label.clone()).unwrap_or_default(),
            per_frame: reports.iter().flat_map(|r| r.per_frame.clone()).collect(),
            input: reports.iter().flat_map(|r| r.input.clone()).collect(),
        }
    }

    /// `frame_id,method,psnr_db,mssim` rows, input baseline first.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame_id,method,psnr_db,mssim\n");
        for (label, rows) in [(INPUT_LABEL, &self.input), (self.method_label.as_str(), &self.per_frame)] {
            for r in rows {
                let _ = writeln!(s, "{},{},{},{:.6}", r.frame_id, label, fmt_db(r.psnr_db), r.mssim);
            }
        }
        s
    }

    /// Metric constants followed by one `method, psnr_db / mssim` line per row.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "# PSNR peak 1.0; MS-SSIM on Rec.601 luma, {SSIM_WINDOW}x{SSIM_WINDOW} Gaussian window sigma {SSIM_SIGMA}, \
             K1 {SSIM_K1}, K2 {SSIM_K2}, weights {MSSSIM_WEIGHTS:?}\n"
        );
        if !self.has_metrics() {
            s.push_str("metrics: absent (no ground truth)\n");
            return s;
        }
        for a in [self.input_average(), self.per_video()] {
            let _ = write!(s, "{}, {:.2} / {:.3}", a.method, a.psnr_db, a.mssim);
            if a.infinite_psnr > 0 {
                let _ = write!(s, "  ({} of {} frames with infinite PSNR excluded from the PSNR mean)", a.infinite_psnr, a.frames);
            }
            s.push('\n');
        }
        s
    }

    /// Write `metrics.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("metrics.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("summary.txt"), self.summary().as_bytes())
    }
}

/// Method name for a configuration, e.g. `DBN+flow` or `DBN+single`.
pub fn method_label(mode: AlignMode, single_frame_mode: bool) -> String {
    if single_frame_mode {
        return "DBN+single".into();
    }
    match mode {
        AlignMode::None => "DBN+noalign".into(),
        AlignMode::Homography => "DBN+homog".into(),
        AlignMode::Flow => "DBN+flow".into(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub align_mode: AlignMode,
    pub align: AlignParams,
    pub tile: TileConfig,
    pub single_frame_mode: bool,
    /// Restored frames are written to `<out_dir>/<frame_id>.png`.
    pub out_dir: Option<PathBuf>,
}

fn frame_metrics(id: &str, a: &Frame, b: &Frame) -> Result<FrameMetrics> {
    Ok(FrameMetrics {
        frame_id: id.to_string(),
        psnr_db: psnr(a, b, 1.0)?,
        mssim: mssim(a, b)?,
    })
}

/// Restore every frame of a clip and score it against ground truth when the
/// clip has any. Frames are processed in parallel.
pub fn eval_clip(params: &ModelParams<f32>, clip: &VideoClip, opts: &EvalOptions) -> Result<(MetricReport, Vec<Frame>)> {
    let results: Vec<(Frame, Option<(FrameMetrics, FrameMetrics)>)> = (0..clip.blurry.len())
        .into_par_iter()
        .map(|i| {
            let id = format!("{:05}", i);
            let stack = align_stack(&make_stack(&clip.blurry, i, opts.single_frame_mode)?, opts.align_mode, &opts.align);
            let out = tiled_inference(params, &stack, &opts.tile)?;
            if let Some(dir) = &opts.out_dir {
                save_image(&out, dir.join(format!("{id}.png")))?;
            }
            let metrics = match &clip.sharp {
                Some(gt) => Some((frame_metrics(&id, &out, &gt[i])?, frame_metrics(&id, &clip.blurry[i], &gt[i])?)),
                None => None,
            };
            Ok((out, metrics))
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport {
        method_label: method_label(opts.align_mode, opts.single_frame_mode),
        per_frame: vec![],
        input: vec![],
    };
    let mut frames = Vec::with_capacity(results.len());
    for (f, m) in results {
        frames.push(f);
        if let Some((out, input)) = m {
            report.per_frame.push(out);
            report.input.push(input);
        }
    }
    if clip.sharp.is_none() {
        log::warn!("video {}: no ground truth, metrics omitted", clip.id);
    }
    Ok((report, frames))
}

/// Evaluate one video directory (see [`load_video`] for the layout).
pub fn eval_sequence(params: &ModelParams<f32>, video_dir: &Path, opts: &EvalOptions) -> Result<MetricReport> {
    let clip = load_video(video_dir)?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    }
    Ok(eval_clip(params, &clip, opts)?.0)
}
