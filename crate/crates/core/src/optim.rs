//! Adam with decoupled weight decay, and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, ModelState, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config(format!(
                "schedule needs 0 <= lr_min <= lr0, got lr0 = {}, lr_min = {}",
                self.lr0, self.lr_min
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("schedule needs total_steps >= 1".into()));
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min) (1 + cos(π t / T)) / 2` for `0 <= t <= T`.
pub fn cosine_lr(t: usize, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.validate()?;
    if t > cfg.total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {t} beyond schedule length {}",
            cfg.total_steps
        )));
    }
    let progress = t as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Moment estimates and step counter of an Adam run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Params,
    pub second_moment: Params,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    /// Zero moments shaped like `params`, default hyperparameters.
    pub fn new(params: &Params) -> AdamState {
        AdamState {
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
        }
    }

    /// One in-place update.
    ///
    /// `p ← p - lr (m̂ / (√v̂ + ε) + wd · p)` with bias-corrected moments.
    /// Weight decay is decoupled from the gradient and skips biases.
    pub fn step(
        &mut self,
        params: &mut Params,
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !params.same_shape(grads)
            || !params.same_shape(&self.first_moment)
            || !params.same_shape(&self.second_moment)
        {
            return Err(Error::Shape(
                "parameters, gradients and moments disagree".into(),
            ));
        }
        if !(lr >= 0.0 && lr.is_finite()) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr and weight decay must be finite and >= 0, got {lr} and {weight_decay}"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, decay: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * *p);
        };

        let layers = params.layers_mut().zip(grads.layers()).zip(
            self.first_moment
                .layers_mut()
                .zip(self.second_moment.layers_mut()),
        );
        for ((p, g), (m, v)) in layers {
            ndarray::Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v, weight_decay));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v, 0.0));
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    params: &ModelState,
    grads: &Gradients,
    state: &AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(ModelState, AdamState)> {
    let mut next = params.clone();
    let mut state = state.clone();
    state.step(&mut next.params, grads, lr, weight_decay)?;
    Ok((next, state))
}
