use crate::error::{Result, TensorError};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to 0
/// at `total`.
pub fn cosine_lr(step: usize, warmup: usize, total: usize, peak: f64) -> Result<f64> {
    if warmup > total {
        return Err(TensorError::Schedule { warmup, total });
    }
    if step > total {
        return Err(TensorError::ScheduleStep { step, total });
    }
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(peak);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos()))
}
