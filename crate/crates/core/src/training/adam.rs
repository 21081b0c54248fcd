use serde::{Deserialize, Serialize};

use super::{TrainError, TrainState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected Adam update of `state.params`.
pub fn adam_step(state: &mut TrainState, grads: &[f64], lr: f64, config: &AdamConfig) -> Result<(), TrainError> {
    if grads.len() != state.params.len() {
        return Err(TrainError::DimensionMismatch {
            expected: format!("{} gradient entries", state.params.len()),
            found: grads.len().to_string(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - config.beta1.powf(t);
    let c2 = 1.0 - config.beta2.powf(t);
    for (((p, m), v), &g) in state.params.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(grads) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + config.epsilon);
    }
    Ok(())
}

/// `base_lr` before `decay_epoch`, `base_lr / factor` from then on.
pub fn lr_schedule(epoch: usize, base_lr: f64, decay_epoch: usize, factor: f64) -> f64 {
    if epoch < decay_epoch {
        base_lr
    } else {
        base_lr / factor
    }
}
