//! Cosine learning-rate schedule with linear warmup, tuned so the minimum
//! rate is reached exactly at the end of the run.

use super::{Result, TrainConfig, TrainError};

/// Learning rate at `step` (0..=total_steps): linear `0 -> lr_max` over the
/// warmup, then cosine from `lr_max` down to `lr_max * lr_min_ratio`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(TrainError::StepOutOfRange(step, cfg.total_steps));
    }
    if step <= cfg.warmup_steps {
        if cfg.warmup_steps == 0 {
            return Ok(cfg.lr_max);
        }
        return Ok(cfg.lr_max * step as f64 / cfg.warmup_steps as f64);
    }
    let lr_min = cfg.lr_max * cfg.lr_min_ratio;
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(lr_min + (cfg.lr_max - lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
