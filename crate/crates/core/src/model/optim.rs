//! SGD with momentum and learning-rate schedules.

use super::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total_steps: usize,
}

/// Learning rate at `step`; steps past the end keep the final value.
pub fn lr_at(schedule: &Schedule, step: usize) -> f64 {
    let frac = if schedule.total_steps == 0 {
        1.0
    } else {
        step.min(schedule.total_steps) as f64 / schedule.total_steps as f64
    };
    match schedule.kind {
        ScheduleKind::Cosine => schedule.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        ScheduleKind::Linear => schedule.base_lr * (1.0 - frac),
        ScheduleKind::Constant => schedule.base_lr,
    }
}

/// `buf ← momentum·buf + grad + weight_decay·param`, then `param ← param − lr·buf`.
pub fn sgd_momentum_step(
    params: &mut MlpParams,
    grads: &MlpParams,
    buffers: &mut MlpParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let grads = grads.tensors();
    for ((p, b), g) in params.tensors_mut().into_iter().zip(buffers.tensors_mut()).zip(grads) {
        for ((p, b), g) in p.iter_mut().zip(b.iter_mut()).zip(g) {
            *b = momentum * *b + g + weight_decay * *p;
            *p -= lr * *b;
        }
    }
}
