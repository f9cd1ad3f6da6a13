use std::fmt;
use std::sync::Arc;

use super::{IgoConfig, Pathway, ScoreError, ScoreNet};
use crate::nn::{backward, NnError, Tensor};
use crate::sde::{SdeSpec, VpSchedule};

/// Per-time loss weight `λ(t)`.
#[derive(Clone)]
pub enum Lambda {
    Constant(f64),
    /// `σ(t)²` of a variance-preserving kernel.
    Variance(VpSchedule),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Constant(1.0)
    }
}

impl fmt::Debug for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Constant(c) => write!(f, "Constant({c})"),
            Lambda::Variance(s) => write!(f, "Variance({s:?})"),
            Lambda::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Lambda {
    pub fn weight(&self, t: f64) -> f64 {
        match self {
            Lambda::Constant(c) => *c,
            Lambda::Variance(s) => s.std(t).powi(2),
            Lambda::Custom(f) => f(t),
        }
    }
}

/// States observed at one time index of a batch of trajectories, with their
/// regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateSlice {
    pub times: Vec<f64>,
    pub states: Tensor,
    pub targets: Tensor,
}

impl IterateSlice {
    pub fn new(times: Vec<f64>, states: Tensor, targets: Tensor) -> Result<Self, ScoreError> {
        if states.shape() != targets.shape() || states.rows() != times.len() {
            return Err(NnError::ShapeMismatch {
                expected: states.shape().to_vec(),
                got: targets.shape().to_vec(),
            }
            .into());
        }
        Ok(Self {
            times,
            states,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Clean samples with their corrupted state at `t` and intermediate iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0: Tensor,
    /// `x̃_t` and its targets.
    pub main: IterateSlice,
    /// `x̃_τ` slices, one per τ.
    pub intermediate: Vec<IterateSlice>,
}

/// `∇ log p_t(x_t | x_0)` for the variance-preserving kernel.
pub fn dsm_target_gaussian(
    x0: &[f64],
    xt: &[f64],
    t: f64,
    schedule: &VpSchedule,
) -> Result<Vec<f64>, ScoreError> {
    let var = schedule.std(t).powi(2);
    if t <= 0.0 || var <= 0.0 {
        return Err(ScoreError::ZeroVariance(t));
    }
    let c = schedule.mean_coef(t);
    Ok(x0.iter().zip(xt).map(|(a, x)| (c * a - x) / var).collect())
}

/// Score of the one-step EM transition density `N(x + a·dt, b²·dt)` at
/// `x_next`.
pub fn dsm_target_em(
    x_prev: &[f64],
    x_next: &[f64],
    t: f64,
    dt: f64,
    spec: &SdeSpec,
) -> Result<Vec<f64>, ScoreError> {
    let a = spec.drift(x_prev, t);
    let b = spec.diffusion(x_prev, t);
    if let Some(i) = b.iter().position(|v| *v == 0.0) {
        return Err(ScoreError::DegenerateDiffusion(i));
    }
    Ok((0..x_prev.len())
        .map(|i| (x_prev[i] + a[i] * dt - x_next[i]) / (b[i] * b[i] * dt))
        .collect())
}

/// Mean of `λ(tᵢ)·‖s(xᵢ, tᵢ) − gᵢ‖²`; adds `weight` times its gradient to the
/// parameters the pathway touches.
pub(crate) fn accumulate(
    net: &mut ScoreNet,
    slice: &IterateSlice,
    pathway: Pathway,
    lambda: &Lambda,
    weight: f64,
) -> Result<f64, ScoreError> {
    if slice.is_empty() {
        return Ok(0.0);
    }
    let (out, tape) = net.forward(&slice.states, &slice.times, pathway)?;
    let n = slice.len() as f64;
    let d = out.cols();
    let mut loss = 0.0;
    let mut grad = vec![0.0; out.len()];
    for (i, &t) in slice.times.iter().enumerate() {
        let lam = lambda.weight(t);
        let (o, g) = (out.row(i), slice.targets.row(i));
        let mut sq = 0.0;
        for k in 0..d {
            let r = o[k] - g[k];
            sq += r * r;
            grad[i * d + k] = weight * 2.0 * lam * r / n;
        }
        loss += lam * sq;
    }
    let loss = loss / n;
    if weight != 0.0 {
        let g = Tensor::new(out.shape().to_vec(), grad)?;
        backward(&tape, &mut net.params, &g)?;
    }
    Ok(loss)
}

fn fresh_grads<F>(net: &mut ScoreNet, f: F) -> Result<(f64, Vec<Tensor>), ScoreError>
where
    F: FnOnce(&mut ScoreNet) -> Result<f64, ScoreError>,
{
    net.params.zero_grads();
    let loss = f(net)?;
    Ok((loss, net.params.grads()))
}

/// Standard denoising score-matching loss through `D ∘ S ∘ E`.
pub fn loss_standard(
    net: &mut ScoreNet,
    slice: &IterateSlice,
    cfg: &IgoConfig,
) -> Result<(f64, Vec<Tensor>), ScoreError> {
    fresh_grads(net, |net| accumulate(net, slice, Pathway::Final, &cfg.lambda, 1.0))
}

/// The regularizer `R`: the same loss through `D_τ ∘ s_τ ∘ E_τ`.
pub fn loss_igo(
    net: &mut ScoreNet,
    slice: &IterateSlice,
    cfg: &IgoConfig,
) -> Result<(f64, Vec<Tensor>), ScoreError> {
    fresh_grads(net, |net| accumulate(net, slice, Pathway::Intermediate, &cfg.lambda, 1.0))
}

pub(crate) fn accumulate_multi(
    net: &mut ScoreNet,
    slices: &[IterateSlice],
    lambda: &Lambda,
    weight: f64,
) -> Result<f64, ScoreError> {
    if slices.is_empty() {
        return Err(ScoreError::EmptyIterateList);
    }
    slices.iter().try_fold(0.0, |acc, s| {
        Ok(acc + accumulate(net, s, Pathway::Intermediate, lambda, weight)?)
    })
}

/// Sum of `R` over several intermediate iterates.
pub fn loss_multi(
    net: &mut ScoreNet,
    slices: &[IterateSlice],
    cfg: &IgoConfig,
) -> Result<(f64, Vec<Tensor>), ScoreError> {
    fresh_grads(net, |net| accumulate_multi(net, slices, &cfg.lambda, 1.0))
}

/// Component losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StepLoss {
    pub total: f64,
    pub standard: f64,
    /// `None` when the regularizer did not run.
    pub regularizer: Option<f64>,
}

/// Accumulates the gradient of `α·L + (1−α)·R` without clearing first.
pub(crate) fn accumulate_step(
    net: &mut ScoreNet,
    batch: &TrainBatch,
    cfg: &IgoConfig,
) -> Result<StepLoss, ScoreError> {
    let use_r = cfg.regularizer && cfg.alpha < 1.0;
    let alpha = if cfg.regularizer { cfg.alpha } else { 1.0 };
    let standard = accumulate(net, &batch.main, Pathway::Final, &cfg.lambda, alpha)?;
    let regularizer = if use_r {
        Some(accumulate_multi(net, &batch.intermediate, &cfg.lambda, 1.0 - alpha)?)
    } else {
        None
    };
    let total = alpha * standard + (1.0 - alpha) * regularizer.unwrap_or(0.0);
    Ok(StepLoss {
        total,
        standard,
        regularizer,
    })
}

/// `α·L + (1−α)·R` on a batch, with its gradients.
pub fn total_loss(
    net: &mut ScoreNet,
    batch: &TrainBatch,
    cfg: &IgoConfig,
) -> Result<(f64, Vec<Tensor>), ScoreError> {
    fresh_grads(net, |net| accumulate_step(net, batch, cfg).map(|s| s.total))
}
