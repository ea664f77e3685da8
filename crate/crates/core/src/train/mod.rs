//! Patch sampling, minibatch optimization and checkpointed training runs.

mod augment;
mod config;
mod data;
mod trainer;

pub use augment::{apply_crop, augment, fits, random_crop, rotate, transform_frame, AugmentSpec, Crop, TrainSample, Variant};
pub use config::{lr_at, TrainConfig};
pub use data::{list_pngs, load_dataset, load_frames, load_video, make_stack, split_by_video, VideoClip};
pub use trainer::{
    batch_tensors, checkpoint_path, evaluate_loss, prepare_frames, render_log, train_step, LogRow, Trainer, LOG_HEADER,
};
