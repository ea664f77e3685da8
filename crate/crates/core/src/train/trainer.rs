use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{apply_crop, random_crop, AugmentSpec, Crop, TrainSample, Variant};
use super::config::{lr_at, TrainConfig};
use super::data::{make_stack, VideoClip};
use crate::align::{align_stack, AlignParams};
use crate::frame::{frames_to_tensor, stacks_to_tensor};
use crate::io::{decode_words, encode_words, save_checkpoint, write_atomic, NamedTensor, TrainingState};
use crate::model::{backward, build_model, forward, ModelOptimizer, ModelParams};
use crate::tensor::{mse_loss, Tensor};
use crate::{Error, Result};

/// Network input and target tensors for a batch of samples.
pub fn batch_tensors(samples: &[TrainSample]) -> (Tensor<f32>, Tensor<f32>) {
    let stacks: Vec<_> = samples.iter().map(|s| s.stack.clone()).collect();
    let sharp: Vec<_> = samples.iter().map(|s| s.sharp.clone()).collect();
    (stacks_to_tensor(&stacks), frames_to_tensor(&sharp))
}

/// One optimization step at `lr_at(params.iteration)`: training-mode
/// forward, MSE against the sharp frames, backward, ADAM update. Returns the
/// loss before the update. On a non-finite loss or gradient nothing changes.
pub fn train_step(
    params: &mut ModelParams<f32>,
    optimizer: &mut ModelOptimizer<f32>,
    inputs: &Tensor<f32>,
    targets: &Tensor<f32>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let iteration = params.iteration;
    let out = forward(params, inputs, true, None)?;
    let (loss, grad) = mse_loss(&out.output, targets)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration });
    }
    let grads = backward(params, &out.cache, &grad, false)?;
    drop(out.cache);
    optimizer.step(params, &grads, lr_at(iteration, cfg))?;
    params.commit_running_stats(out.running_stats);
    params.iteration += 1;
    Ok(loss)
}

/// Mean squared error over samples without updating anything, in batches.
pub fn evaluate_loss(params: &ModelParams<f32>, samples: &[TrainSample], batch: usize, training: bool) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch.max(1)) {
        let (x, y) = batch_tensors(chunk);
        let out = forward(params, &x, training, None)?.output;
        total += mse_loss(&out, &y)?.0 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iter,train_loss,val_loss,lr";

pub fn render_log(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.iter, r.train_loss, r.val_loss, r.lr);
    }
    s
}

fn rng_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let seed = rng.get_seed();
    let mut w: Vec<u64> = seed.chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let pos = rng.get_word_pos();
    w.extend([rng.get_stream(), pos as u64, (pos >> 64) as u64]);
    w
}

fn rng_from_words(w: &[u64]) -> Result<ChaCha8Rng> {
    if w.len() != 7 {
        return Err(Error::Invalid("generator state has the wrong length".into()));
    }
    let mut seed = [0u8; 32];
    for (chunk, v) in seed.chunks_mut(8).zip(&w[..4]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(w[4]);
    rng.set_word_pos(w[5] as u128 | (w[6] as u128) << 64);
    Ok(rng)
}

const POOL_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const VAL_STREAM: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Full-frame samples (aligned stacks with sharp targets) of every frame of
/// the given videos that has ground truth.
pub fn prepare_frames(videos: &[VideoClip], cfg: &TrainConfig, align: &AlignParams) -> Result<Vec<TrainSample>> {
    let mut out = vec![];
    for v in videos {
        let Some(sharp) = &v.sharp else {
            log::warn!("video {}: no ground truth, not used for training", v.id);
            continue;
        };
        for (i, gt) in sharp.iter().enumerate().take(v.blurry.len()) {
            let stack = make_stack(&v.blurry, i, cfg.single_frame_mode)?;
            out.push(TrainSample {
                stack: align_stack(&stack, cfg.align_mode, align),
                sharp: gt.clone(),
            });
        }
    }
    Ok(out)
}

/// Minibatch training over a fixed pool of patch crops.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ModelParams<f32>,
    pub optimizer: ModelOptimizer<f32>,
    pub log: Vec<LogRow>,
    frames: Vec<TrainSample>,
    pool: Vec<(usize, Crop)>,
    val: Vec<TrainSample>,
    /// Generator state just before the current epoch's shuffle.
    epoch_start: ChaCha8Rng,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    /// Train on patches cropped from full frames; the crops (10 per frame by
    /// default) are fixed by the seed. Validation patches come from `val_frames`.
    pub fn new(cfg: TrainConfig, frames: Vec<TrainSample>, val_frames: &[TrainSample]) -> Result<Self> {
        cfg.validate()?;
        let spec = AugmentSpec {
            crops_per_image: cfg.crops_per_image,
            ..AugmentSpec::default()
        };
        let mut pool_rng = stream_rng(cfg.seed, POOL_STREAM);
        let mut pool = vec![];
        for (i, f) in frames.iter().enumerate() {
            let (w, h) = f.sharp.dims();
            for _ in 0..cfg.crops_per_image {
                match random_crop(&spec, cfg.patch, w, h, &mut pool_rng) {
                    Some(c) => pool.push((i, c)),
                    None => log::warn!("frame {w}x{h} smaller than a {}px patch, skipped", cfg.patch),
                }
            }
        }
        let mut val_rng = stream_rng(cfg.seed, VAL_STREAM);
        let mut val = vec![];
        if !val_frames.is_empty() {
            for k in 0..cfg.val_patches {
                let f = &val_frames[k % val_frames.len()];
                let (w, h) = f.sharp.dims();
                if let Some(c) = random_crop(&spec, cfg.patch, w, h, &mut val_rng) {
                    val.push(apply_crop(f, &c, cfg.patch)?);
                }
            }
        }
        Trainer::with_pool(cfg, frames, pool, val)
    }

    /// Train directly on ready-made patches (each exactly `patch` square).
    pub fn from_samples(cfg: TrainConfig, samples: Vec<TrainSample>, val: Vec<TrainSample>) -> Result<Self> {
        cfg.validate()?;
        if samples.iter().chain(&val).any(|s| s.sharp.dims() != (cfg.patch, cfg.patch)) {
            return Err(Error::Invalid(format!("samples must be {0}x{0} patches", cfg.patch)));
        }
        let pool = (0..samples.len())
            .map(|i| {
                (
                    i,
                    Crop {
                        variant: Variant::IDENTITY,
                        x: 0,
                        y: 0,
                    },
                )
            })
            .collect();
        Trainer::with_pool(cfg, samples, pool, val)
    }

    fn with_pool(cfg: TrainConfig, frames: Vec<TrainSample>, pool: Vec<(usize, Crop)>, val: Vec<TrainSample>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Invalid("no training patches".into()));
        }
        let params = build_model(cfg.seed);
        let optimizer = ModelOptimizer::new(&params);
        let rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
        let mut t = Trainer {
            cfg,
            params,
            optimizer,
            log: vec![],
            frames,
            pool,
            val,
            epoch_start: rng.clone(),
            rng,
            order: vec![],
            cursor: 0,
        };
        t.shuffle();
        Ok(t)
    }

    fn shuffle(&mut self) {
        self.epoch_start = self.rng.clone();
        self.order = (0..self.pool.len()).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn validation_samples(&self) -> &[TrainSample] {
        &self.val
    }

    /// Materialize one pool entry.
    pub fn patch(&self, index: usize) -> Result<TrainSample> {
        let (f, crop) = &self.pool[index];
        apply_crop(&self.frames[*f], crop, self.cfg.patch)
    }

    /// Next minibatch in epoch order, reshuffling at each epoch boundary.
    pub fn next_batch(&mut self) -> Result<Vec<TrainSample>> {
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        while batch.len() < self.cfg.batch_size {
            if self.cursor == self.order.len() {
                self.shuffle();
            }
            batch.push(self.patch(self.order[self.cursor])?);
            self.cursor += 1;
        }
        Ok(batch)
    }

    pub fn validation_loss(&self) -> Result<f64> {
        evaluate_loss(&self.params, &self.val, self.cfg.batch_size, false)
    }

    /// Training-state tensors stored alongside the model in checkpoints.
    pub fn state_tensors(&self) -> Vec<NamedTensor> {
        let rng = encode_words(&rng_words(&self.epoch_start));
        let cursor = encode_words(&[self.cursor as u64, self.pool.len() as u64]);
        let log: Vec<u64> = self
            .log
            .iter()
            .flat_map(|r| [r.iter, r.train_loss.to_bits(), r.val_loss.to_bits(), r.lr.to_bits()])
            .collect();
        let log = encode_words(&log);
        vec![
            NamedTensor::new("shuffle_rng", &[rng.len()], rng),
            NamedTensor::new("cursor", &[cursor.len()], cursor),
            NamedTensor::new("log", &[log.len()], log),
        ]
    }

    /// Continue from a checkpoint written by [`Trainer::save`]. The trainer
    /// must have been built from the same data and seed.
    pub fn restore(&mut self, state: TrainingState) -> Result<()> {
        let get = |name: &str| {
            state
                .extra(name)
                .map(|t| t.data.clone())
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks training state `{name}`")))
        };
        let rng = rng_from_words(&decode_words(&get("shuffle_rng")?)?)?;
        let cursor = decode_words(&get("cursor")?)?;
        if cursor.len() != 2 || cursor[1] != self.pool.len() as u64 || cursor[0] > cursor[1] {
            return Err(Error::Invalid("checkpoint was written for a different patch pool".into()));
        }
        let log_words = decode_words(&get("log")?)?;
        self.log = log_words
            .chunks(4)
            .map(|c| LogRow {
                iter: c[0],
                train_loss: f64::from_bits(c[1]),
                val_loss: f64::from_bits(c[2]),
                lr: f64::from_bits(c[3]),
            })
            .collect();
        self.rng = rng;
        self.shuffle();
        self.cursor = cursor[0] as usize;
        self.params = state.params;
        self.optimizer = state.optimizer.ok_or_else(|| Error::Invalid("checkpoint lacks optimizer state".into()))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, Some(&self.optimizer), &self.state_tensors(), path)
    }

    /// Run until `max_iters` steps are done. Every `log_every` iterations a
    /// row `(iter, train_loss, val_loss, lr)` is appended, where `train_loss`
    /// is the loss of the batch at that iteration before its update and
    /// `val_loss` the inference-mode validation MSE. With an output directory
    /// the log is rewritten after each row and checkpoints are written every
    /// `checkpoint_every` iterations and at the end.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        let k = self.cfg.log_every;
        loop {
            let it = self.params.iteration;
            if it > self.cfg.max_iters {
                break;
            }
            let log_now = it.is_multiple_of(k) && self.log.last().is_none_or(|r| r.iter < it);
            if it == self.cfg.max_iters && !log_now {
                break;
            }
            let val_loss = if log_now { self.validation_loss()? } else { f64::NAN };
            let batch = self.next_batch()?;
            let (x, y) = batch_tensors(&batch);
            let loss = if it < self.cfg.max_iters {
                match train_step(&mut self.params, &mut self.optimizer, &x, &y, &self.cfg) {
                    Ok(l) => l,
                    Err(e) => {
                        if let Some(dir) = out_dir {
                            self.save(&dir.join("last_good.dbnc"))?;
                            self.write_log(dir)?;
                        }
                        return Err(e);
                    }
                }
            } else {
                let out = forward(&self.params, &x, true, None)?.output;
                mse_loss(&out, &y)?.0
            };
            if log_now {
                self.log.push(LogRow {
                    iter: it,
                    train_loss: loss,
                    val_loss,
                    lr: lr_at(it, &self.cfg),
                });
                log::info!("iter {it}: train {loss:.6} val {val_loss:.6}");
                if let Some(dir) = out_dir {
                    self.write_log(dir)?;
                }
            }
            if it == self.cfg.max_iters {
                break;
            }
            let done = self.params.iteration;
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every) && done < self.cfg.max_iters {
                    self.save(&checkpoint_path(dir, done))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.write_log(dir)?;
            self.save(&dir.join("model.dbnc"))?;
        }
        Ok(())
    }

    fn write_log(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("log.csv"), render_log(&self.log).as_bytes())
    }
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.dbnc"))
}
