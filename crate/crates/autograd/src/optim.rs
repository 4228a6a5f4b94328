use ndarray::ArrayD;

use crate::{AutogradError, Element, Result};

/// Bias-corrected Adam moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    pub m: Vec<ArrayD<E>>,
    pub v: Vec<ArrayD<E>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<E: Element> AdamState<E> {
    pub fn new(params: &[ArrayD<E>]) -> Self {
        Self {
            m: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. Weight decay enters as an L2 term added to the gradient
/// before the moment updates and only where `decay_mask` is set.
pub fn adam_step<E: Element>(
    state: &mut AdamState<E>,
    params: &mut [ArrayD<E>],
    grads: &[ArrayD<E>],
    decay_mask: &[bool],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || params.len() != decay_mask.len()
    {
        return Err(AutogradError::ShapeMismatch(format!(
            "adam_step: {} params, {} grads, {} moments, {} mask entries",
            params.len(),
            grads.len(),
            state.m.len(),
            decay_mask.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = E::from_f64(state.beta1);
    let b2 = E::from_f64(state.beta2);
    let one = E::one();
    let bc1 = E::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = E::from_f64(1.0 - state.beta2.powi(t));
    let lr_e = E::from_f64(lr);
    let wd = E::from_f64(weight_decay);
    let eps = E::from_f64(state.eps);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(AutogradError::ShapeMismatch(format!(
                "adam_step: param {:?} vs grad {:?}",
                params[i].shape(),
                grads[i].shape()
            )));
        }
        let decay = decay_mask[i];
        let (m, v, p, g) = (&mut state.m[i], &mut state.v[i], &mut params[i], &grads[i]);
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                let g = if decay { g + wd * *p } else { g };
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p - lr_e * mhat / (vhat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Cosine annealing from `lr_initial` down to `lr_initial * floor_fraction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr_initial: f64,
    pub floor_fraction: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_initial: f64, floor_fraction: f64, total_steps: u64) -> Self {
        Self {
            lr_initial,
            floor_fraction,
            total_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        let lr_floor = self.lr_initial * self.floor_fraction;
        let phase = std::f64::consts::PI * step as f64 / self.total_steps as f64;
        lr_floor + (self.lr_initial - lr_floor) * (1.0 + phase.cos()) / 2.0
    }
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self::new(4e-4, 2.5e-3, 1)
    }
}
