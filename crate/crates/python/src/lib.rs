//! Python module `dbn`. Frames cross the boundary as flat channel-major
//! lists of floats in `[0, 1]` together with their width and height.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict};

use dbn_core::align::{align_stack, AlignMode, AlignParams};
use dbn_core::eval::{eval_sequence, tiled_inference, EvalOptions, TileConfig};
use dbn_core::io::{load_checkpoint, save_checkpoint, ConfigMap};
use dbn_core::model::{build_model, infer, ModelParams};
use dbn_core::train::{load_dataset, prepare_frames, split_by_video, TrainConfig, Trainer};
use dbn_core::{Error, Frame, FrameStack};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn frame(data: Vec<f32>, width: usize, height: usize) -> PyResult<Frame> {
    if width == 0 || height == 0 || !data.len().is_multiple_of(width * height) {
        return Err(PyValueError::new_err(format!(
            "{} values do not form whole {width}x{height} planes",
            data.len()
        )));
    }
    Frame::from_vec(data.len() / (width * height), width, height, data).map_err(py_err)
}

fn stack(frames: Vec<Vec<f32>>, width: usize, height: usize) -> PyResult<FrameStack> {
    let frames = frames.into_iter().map(|f| frame(f, width, height)).collect::<PyResult<Vec<_>>>()?;
    FrameStack::new(frames).map_err(py_err)
}

fn align_mode(name: &str) -> PyResult<AlignMode> {
    name.parse().map_err(py_err)
}

/// Python values become config strings; booleans are written lowercase.
fn config_map(settings: Option<&Bound<'_, PyDict>>) -> PyResult<ConfigMap> {
    let mut map = ConfigMap::new();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            let value = if v.is_instance_of::<PyBool>() {
                v.extract::<bool>()?.to_string()
            } else {
                v.str()?.to_string()
            };
            map.insert(k.extract()?, value);
        }
    }
    Ok(map)
}

fn train_config(settings: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply(&config_map(settings)?).map_err(py_err)?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Network weights, batch-norm statistics and the training iteration.
#[pyclass(module = "dbn")]
struct Model {
    params: ModelParams<f32>,
}

#[pymethods]
impl Model {
    /// A freshly initialized network.
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Model {
            params: build_model(seed),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            params: load_checkpoint(&path).map_err(py_err)?.params,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, None, &[], &path).map_err(py_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.params.iteration
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn layer_names(&self) -> Vec<String> {
        self.params.layers.iter().map(|l| l.def.name.to_string()).collect()
    }

    /// One forward pass over five RGB frames whose sides are multiples of 8.
    fn infer(&self, py: Python<'_>, frames: Vec<Vec<f32>>, width: usize, height: usize) -> PyResult<Vec<f32>> {
        let s = stack(frames, width, height)?;
        py.detach(|| {
            let out = infer(&self.params, &s.to_tensor()).map_err(py_err)?;
            Ok(out.into_data())
        })
    }

    /// Full-resolution restoration of the central frame: optional alignment,
    /// then tiled inference at any frame size.
    #[pyo3(signature = (frames, width, height, align = "none", tile = (960, 540, 32)))]
    fn restore(
        &self,
        py: Python<'_>,
        frames: Vec<Vec<f32>>,
        width: usize,
        height: usize,
        align: &str,
        tile: (usize, usize, usize),
    ) -> PyResult<Vec<f32>> {
        let s = stack(frames, width, height)?;
        let mode = align_mode(align)?;
        let cfg = TileConfig {
            width: tile.0,
            height: tile.1,
            overlap: tile.2,
        };
        py.detach(|| {
            let aligned = align_stack(&s, mode, &AlignParams::default());
            Ok(tiled_inference(&self.params, &aligned, &cfg).map_err(py_err)?.into_data())
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(iteration={}, parameters={})", self.params.iteration, self.params.trainable_count())
    }
}

/// Load a PNG as `(width, height, data)` with channel-major float data.
#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<(usize, usize, Vec<f32>)> {
    let f = dbn_core::io::load_image(&path).map_err(py_err)?;
    let (w, h) = f.dims();
    Ok((w, h, f.into_data()))
}

#[pyfunction]
fn save_image(path: PathBuf, data: Vec<f32>, width: usize, height: usize) -> PyResult<()> {
    dbn_core::io::save_image(&frame(data, width, height)?, &path).map_err(py_err)
}

/// Peak signal-to-noise ratio in dB; infinite for identical frames.
#[pyfunction]
#[pyo3(signature = (a, b, width, height, peak = 1.0))]
fn psnr(a: Vec<f32>, b: Vec<f32>, width: usize, height: usize, peak: f64) -> PyResult<f64> {
    dbn_core::eval::psnr(&frame(a, width, height)?, &frame(b, width, height)?, peak).map_err(py_err)
}

/// Multiscale structural similarity of two RGB frames.
#[pyfunction]
fn mssim(a: Vec<f32>, b: Vec<f32>, width: usize, height: usize) -> PyResult<f64> {
    dbn_core::eval::mssim(&frame(a, width, height)?, &frame(b, width, height)?).map_err(py_err)
}

/// Align the four neighbors of a five-frame stack to its central frame.
#[pyfunction]
#[pyo3(signature = (frames, width, height, mode = "flow"))]
fn align(py: Python<'_>, frames: Vec<Vec<f32>>, width: usize, height: usize, mode: &str) -> PyResult<Vec<Vec<f32>>> {
    let s = stack(frames, width, height)?;
    let mode = align_mode(mode)?;
    py.detach(|| {
        let out = align_stack(&s, mode, &AlignParams::default());
        Ok(out.into_frames().into_iter().map(Frame::into_data).collect())
    })
}

/// Learning rate at an iteration under the given training settings.
#[pyfunction]
#[pyo3(signature = (iteration, settings = None))]
fn lr_at(iteration: u64, settings: Option<&Bound<'_, PyDict>>) -> PyResult<f64> {
    Ok(dbn_core::train::lr_at(iteration, &train_config(settings)?))
}

/// Train on a dataset root and write checkpoints, `log.csv` and `model.dbnc`
/// to `output`. Returns the trained model.
#[pyfunction]
#[pyo3(signature = (data, output, settings = None, resume = None))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    output: PathBuf,
    settings: Option<&Bound<'_, PyDict>>,
    resume: Option<PathBuf>,
) -> PyResult<Model> {
    let cfg = train_config(settings)?;
    py.detach(|| {
        let run = || -> dbn_core::Result<ModelParams<f32>> {
            let (train_videos, val_videos) = split_by_video(load_dataset(&data)?, cfg.val_videos);
            let align = AlignParams::default();
            let frames = prepare_frames(&train_videos, &cfg, &align)?;
            let val = prepare_frames(&val_videos, &cfg, &align)?;
            let mut trainer = Trainer::new(cfg.clone(), frames, &val)?;
            if let Some(path) = &resume {
                trainer.restore(load_checkpoint(path)?)?;
            }
            trainer.run(Some(&output))?;
            Ok(trainer.params)
        };
        run().map(|params| Model { params }).map_err(py_err)
    })
}

/// Restore and score one video directory. Returns per-method averages and
/// per-frame rows, or only `method` when the video has no ground truth.
#[pyfunction]
#[pyo3(signature = (model, video, output = None, align = "none", single_frame = false))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &Model,
    video: PathBuf,
    output: Option<PathBuf>,
    align: &str,
    single_frame: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = EvalOptions {
        align_mode: align_mode(align)?,
        single_frame_mode: single_frame,
        out_dir: output,
        ..EvalOptions::default()
    };
    let report = py.detach(|| eval_sequence(&model.params, &video, &opts)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("method", &report.method_label)?;
    if report.has_metrics() {
        let avg = report.per_video();
        let input = report.input_average();
        d.set_item("psnr", avg.psnr_db)?;
        d.set_item("mssim", avg.mssim)?;
        d.set_item("input_psnr", input.psnr_db)?;
        d.set_item("input_mssim", input.mssim)?;
        let rows: Vec<(String, f64, f64)> =
            report.per_frame.iter().map(|r| (r.frame_id.clone(), r.psnr_db, r.mssim)).collect();
        d.set_item("per_frame", rows)?;
    }
    Ok(d)
}

/// Default training settings as strings, keyed like the config file.
#[pyfunction]
fn default_settings() -> HashMap<String, String> {
    TrainConfig::default().to_map().into_iter().collect()
}

#[pymodule]
fn dbn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(mssim, m)?)?;
    m.add_function(wrap_pyfunction!(align, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_settings, m)?)?;
    Ok(())
}
