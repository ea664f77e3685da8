use crate::align::AlignMode;
use crate::io::ConfigMap;
use crate::{Error, Result};

/// Training hyperparameters. `Default` is the desk-scale setting;
/// [`TrainConfig::full_scale`] restores the full-scale protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Square patch edge in pixels.
    pub patch: usize,
    pub base_lr: f64,
    pub lr_drop_start: u64,
    pub lr_drop_every: u64,
    pub lr_floor: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub align_mode: AlignMode,
    pub single_frame_mode: bool,
    /// Log (and validate) every this many iterations.
    pub log_every: u64,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
    /// Random crops per frame for the patch pool.
    pub crops_per_image: usize,
    /// Held-out videos (whole videos) when splitting a dataset.
    pub val_videos: usize,
    /// Validation patches drawn from the held-out videos.
    pub val_patches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            patch: 64,
            base_lr: 0.005,
            lr_drop_start: 24_000,
            lr_drop_every: 8_000,
            lr_floor: 1e-6,
            max_iters: 2_000,
            seed: 0,
            align_mode: AlignMode::None,
            single_frame_mode: false,
            log_every: 100,
            checkpoint_every: 1_000,
            crops_per_image: 10,
            val_videos: 1,
            val_patches: 32,
        }
    }
}

macro_rules! config_fields {
    ($m:ident, $s:ident, $($f:ident),*) => {
        $( $m(stringify!($f), &mut $s.$f)?; )*
    };
}

impl TrainConfig {
    /// Batch 64, 128-pixel patches, 80,000 iterations.
    pub fn full_scale() -> Self {
        TrainConfig {
            batch_size: 64,
            patch: 128,
            max_iters: 80_000,
            log_every: 1_000,
            checkpoint_every: 8_000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.patch == 0 || self.max_iters == 0 || self.log_every == 0 {
            return bad("batch_size, patch, max_iters and log_every must be positive");
        }
        if !self.patch.is_multiple_of(crate::model::SPATIAL_MULTIPLE) {
            return bad("patch must be divisible by 8");
        }
        if self.lr_drop_every == 0 || self.crops_per_image == 0 {
            return bad("lr_drop_every and crops_per_image must be positive");
        }
        if !(self.base_lr > 0.0 && self.lr_floor > 0.0 && self.lr_floor < self.base_lr) {
            return bad("learning rates must satisfy 0 < lr_floor < base_lr");
        }
        Ok(())
    }

    /// Overwrite fields from `key = value` settings; unknown keys are errors.
    pub fn apply(&mut self, map: &ConfigMap) -> Result<()> {
        for (k, v) in map {
            let mut hit = false;
            let mut set = |name: &str, field: &mut dyn SetField| -> Result<()> {
                if name == k {
                    field.set(v).map_err(|e| Error::Config(format!("{k}: {e}")))?;
                    hit = true;
                }
                Ok(())
            };
            config_fields!(
                set,
                self,
                batch_size,
                patch,
                base_lr,
                lr_drop_start,
                lr_drop_every,
                lr_floor,
                max_iters,
                seed,
                align_mode,
                single_frame_mode,
                log_every,
                checkpoint_every,
                crops_per_image,
                val_videos,
                val_patches
            );
            if !hit {
                return Err(Error::Config(format!("unknown training key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("batch_size", self.batch_size.to_string());
        put("patch", self.patch.to_string());
        put("base_lr", self.base_lr.to_string());
        put("lr_drop_start", self.lr_drop_start.to_string());
        put("lr_drop_every", self.lr_drop_every.to_string());
        put("lr_floor", self.lr_floor.to_string());
        put("max_iters", self.max_iters.to_string());
        put("seed", self.seed.to_string());
        put("align_mode", self.align_mode.to_string());
        put("single_frame_mode", self.single_frame_mode.to_string());
        put("log_every", self.log_every.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("crops_per_image", self.crops_per_image.to_string());
        put("val_videos", self.val_videos.to_string());
        put("val_patches", self.val_patches.to_string());
        m
    }
}

trait SetField {
    fn set(&mut self, v: &str) -> std::result::Result<(), String>;
}

macro_rules! parse_field {
    ($($t:ty),*) => {
        $(impl SetField for $t {
            fn set(&mut self, v: &str) -> std::result::Result<(), String> {
                *self = v.parse().map_err(|e| format!("{e}"))?;
                Ok(())
            }
        })*
    };
}

parse_field!(usize, u64, f64, bool, AlignMode);

/// Learning rate at iteration `iter`: `base_lr` until `lr_drop_start`, then
/// halved at the start and every `lr_drop_every` iterations after, never
/// below `lr_floor`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    if iter < cfg.lr_drop_start {
        return cfg.base_lr;
    }
    let halvings = 1 + (iter - cfg.lr_drop_start) / cfg.lr_drop_every;
    let lr = cfg.base_lr * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32);
    lr.max(cfg.lr_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_config;

    #[test]
    fn schedule_anchors() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c), 0.005);
        assert_eq!(lr_at(23_999, &c), 0.005);
        assert_eq!(lr_at(24_000, &c), 0.0025);
        assert_eq!(lr_at(31_999, &c), 0.0025);
        assert_eq!(lr_at(32_000, &c), 0.00125);
        assert_eq!(lr_at(1_000_000_000, &c), 1e-6);
        assert_eq!(lr_at(u64::MAX, &c), 1e-6);
    }

    #[test]
    fn config_round_trip_and_errors() {
        let mut c = TrainConfig::default();
        c.apply(&parse_config("batch_size = 4\nalign_mode = flow\nsingle_frame_mode = true\n").unwrap())
            .unwrap();
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.align_mode, AlignMode::Flow);
        assert!(c.single_frame_mode);
        let mut d = TrainConfig::default();
        d.apply(&c.to_map()).unwrap();
        assert_eq!(c, d);
        assert!(d.apply(&parse_config("bogus = 1").unwrap()).is_err());
        assert!(d.apply(&parse_config("patch = big").unwrap()).is_err());
        assert!(TrainConfig { patch: 60, ..c.clone() }.validate().is_err());
        assert!(TrainConfig::full_scale().validate().is_ok());
    }
}
