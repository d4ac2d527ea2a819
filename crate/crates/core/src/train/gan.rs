use crate::autodiff::Var;
use crate::error::Result;
use crate::nn::Bound;

use super::critic::Critic;

/// `f(x) = -log(1 + exp(-x))`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Losses of one adversarial step; both are minimised.
#[derive(Debug, Clone)]
pub struct GanLosses {
    /// `-E[f(D(fake))]`.
    pub generator: Var,
    /// `-E[f(D(real))] - E[f(-D(fake))] + lambda_r * R1`.
    pub critic: Var,
    pub r1: Var,
}

/// Non-saturating objective from per-location logits.
///
/// `fake_for_generator` must be computed with frozen critic weights and
/// undetached fakes, `fake_for_critic` with trainable critic weights and
/// detached fakes.
pub fn gan_objective(fake_for_generator: &Var, fake_for_critic: &Var, real: &Var, r1: Var, lambda_r: f64) -> GanLosses {
    let generator = fake_for_generator.neg().softplus().mean();
    let critic = real.neg().softplus().mean().add(&fake_for_critic.softplus().mean()).add(&r1.scale(lambda_r));
    GanLosses { generator, critic, r1 }
}

/// `mean_b ||grad_I D(I_b)||^2` on `real` patches, kept differentiable with
/// respect to the critic weights. `real` must be a trainable leaf.
pub fn r1_penalty(critic: &Critic, bound: &Bound, real: &Var, batch: usize) -> Result<Var> {
    let score = critic.score(bound, real, batch)?.sum();
    let g = real.graph().grad(&score, &[real], true).remove(0);
    Ok(g.square().sum().scale(1.0 / batch as f64))
}

/// `lr0 * decay^floor(step / period)`.
pub fn lr_schedule(step: u64, lr0: f64, decay: f64, period: u64) -> f64 {
    if period == 0 {
        return lr0;
    }
    lr0 * decay.powi((step / period) as i32)
}
