//! Forward corruption processes and their Euler–Maruyama simulation.
//!
//! A process is `dx = a(x, t) dt + b(x, t) ⊙ dw` with diagonal diffusion. The
//! simulator walks a fixed `dt` grid from `t = 0` and records the iterates at
//! requested capture times, snapping each capture to the nearest grid index.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::io::{fmt_f64, indexed_header, write_row};
use crate::rng;

/// `(state, time, out)`: writes the field value into `out`.
pub type VectorField = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("trajectory diverged at t={t}: non-finite {what} in component {component}")]
    DivergedTrajectory {
        t: f64,
        component: usize,
        what: &'static str,
    },
    #[error("capture time {tau} outside [0, {horizon}]")]
    InvalidCapture { tau: f64, horizon: f64 },
    #[error("invalid step size {dt} for horizon {horizon}")]
    InvalidStep { dt: f64, horizon: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid process: {0}")]
    InvalidProcess(String),
}

/// A diagonal-diffusion SDE on `R^dim` over `[0, horizon]`.
#[derive(Clone)]
pub struct SdeSpec {
    dim: usize,
    drift: VectorField,
    diffusion: VectorField,
    horizon: f64,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl SdeSpec {
    pub fn new(
        dim: usize,
        drift: VectorField,
        diffusion: VectorField,
        horizon: f64,
    ) -> Result<Self, SdeError> {
        if dim == 0 {
            return Err(SdeError::InvalidProcess("dimension must be positive".into()));
        }
        if !(horizon > 0.0 && horizon <= 1.0) {
            return Err(SdeError::InvalidProcess(format!(
                "horizon {horizon} not in (0, 1]"
            )));
        }
        Ok(Self {
            dim,
            drift,
            diffusion,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, t, out)
    }

    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, t, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.diffusion_into(x, t, &mut out);
        out
    }

    /// Same process restricted to a shorter horizon.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self, SdeError> {
        Self::new(self.dim, self.drift.clone(), self.diffusion.clone(), horizon)
    }

    /// Ornstein–Uhlenbeck process `dx = -θx dt + σ dw`.
    pub fn ornstein_uhlenbeck(dim: usize, theta: f64, sigma: f64) -> Result<Self, SdeError> {
        Self::new(
            dim,
            linear_drift(-theta),
            constant_diffusion(sigma),
            1.0,
        )
    }

    /// Variance-preserving process with a linear β schedule.
    pub fn variance_preserving(dim: usize, schedule: VpSchedule) -> Result<Self, SdeError> {
        let drift: VectorField = Arc::new(move |x, t, out| {
            let c = -0.5 * schedule.beta(t);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = c * xi;
            }
        });
        let diffusion: VectorField = Arc::new(move |_x, t, out| {
            out.fill(schedule.beta(t).sqrt());
        });
        Self::new(dim, drift, diffusion, 1.0)
    }

    /// Deterministic process with zero drift and diffusion.
    pub fn frozen(dim: usize) -> Result<Self, SdeError> {
        Self::new(dim, constant_field(0.0), constant_field(0.0), 1.0)
    }
}

/// `a(x, t) = c·x`.
pub fn linear_drift(c: f64) -> VectorField {
    Arc::new(move |x, _t, out| {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    })
}

/// Every component equal to `c`.
pub fn constant_field(c: f64) -> VectorField {
    Arc::new(move |_x, _t, out| out.fill(c))
}

pub fn constant_diffusion(sigma: f64) -> VectorField {
    constant_field(sigma)
}

/// Rates `(α, β, γ, δ)` of the predator–prey system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterraRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// `a(x) = [α x₁ − β x₁x₂, δ x₁x₂ − γ x₂]`.
pub fn lotka_volterra_drift(rates: LotkaVolterraRates) -> VectorField {
    let LotkaVolterraRates {
        alpha,
        beta,
        gamma,
        delta,
    } = rates;
    Arc::new(move |x, _t, out| {
        let (prey, pred) = (x[0], x[1]);
        out[0] = alpha * prey - beta * prey * pred;
        out[1] = delta * prey * pred - gamma * pred;
    })
}

/// Continuous-time cat-map field `(M − I)x` with `M = [[1, 1], [1, 2]]`.
pub fn cat_map_drift() -> VectorField {
    Arc::new(|x, _t, out| {
        out[0] = x[1];
        out[1] = x[0] + x[1];
    })
}

/// Linear schedule `β(s) = β_min + s(β_max − β_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for VpSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl VpSchedule {
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `∫₀ᵗ β(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * t * t * (self.beta_max - self.beta_min)
    }

    pub fn mean_coef(&self, t: f64) -> f64 {
        (-0.5 * self.integral(t)).exp()
    }

    pub fn std(&self, t: f64) -> f64 {
        (-(-self.integral(t)).exp_m1()).sqrt()
    }
}

/// Closed-form marginal `x(t) | x(0)` of the variance-preserving process.
pub fn vp_kernel(x0: &[f64], t: f64, schedule: &VpSchedule) -> (Vec<f64>, f64) {
    let c = schedule.mean_coef(t);
    (x0.iter().map(|v| v * c).collect(), schedule.std(t))
}

/// Step size, noise seed and capture times for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub dt: f64,
    pub seed: u64,
    pub capture_times: Vec<f64>,
}

impl EmConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        Self {
            dt,
            seed,
            capture_times: Vec::new(),
        }
    }

    pub fn with_captures(mut self, capture_times: Vec<f64>) -> Self {
        self.capture_times = capture_times;
        self
    }

    /// Number of grid steps covering `horizon`.
    pub fn steps_for(&self, horizon: f64) -> Result<usize, SdeError> {
        if !(self.dt > 0.0 && self.dt <= horizon) {
            return Err(SdeError::InvalidStep {
                dt: self.dt,
                horizon,
            });
        }
        let n = (horizon / self.dt).round();
        if ((n * self.dt) - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(SdeError::InvalidStep {
                dt: self.dt,
                horizon,
            });
        }
        Ok(n as usize)
    }

    /// Grid indices of the capture times, snapped to the nearest step.
    pub fn capture_indices(&self, horizon: f64) -> Result<Vec<usize>, SdeError> {
        self.capture_times
            .iter()
            .map(|&tau| {
                if !(0.0..=horizon + 1e-12).contains(&tau) {
                    return Err(SdeError::InvalidCapture { tau, horizon });
                }
                Ok((tau / self.dt).round() as usize)
            })
            .collect()
    }
}

/// A state recorded at a requested capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// The requested time.
    pub tau: f64,
    /// Grid time the request snapped to.
    pub grid_time: f64,
    pub index: usize,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    pub times: Vec<f64>,
    /// Row-major `times.len() × dim`.
    states: Vec<f64>,
    pub captures: Vec<Capture>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn capture(&self, tau: f64) -> Option<&Capture> {
        self.captures.iter().find(|c| c.tau == tau)
    }

    /// `t,x0,...` with one row per grid point.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(indexed_header("x", self.dim));
        writeln!(w, "{}", header.join(","))?;
        let mut row = Vec::with_capacity(self.dim + 1);
        for (t, x) in self.times.iter().zip(self.states()) {
            row.clear();
            row.push(*t);
            row.extend_from_slice(x);
            write_row(w, &row)?;
        }
        Ok(())
    }

    /// `tau,x0,...` with one row per capture; `tau` is the snapped grid time.
    pub fn write_captures_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = vec!["tau".to_string()];
        header.extend(indexed_header("x", self.dim));
        writeln!(w, "{}", header.join(","))?;
        for c in &self.captures {
            let mut line = fmt_f64(c.grid_time);
            for v in &c.state {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Scratch buffers for repeated stepping.
pub struct EmWorkspace {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl EmWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            diffusion: vec![0.0; dim],
        }
    }
}

/// One Euler–Maruyama step `x + a·dt + b⊙z·√dt`.
pub fn em_step(
    x: &[f64],
    t: f64,
    dt: f64,
    spec: &SdeSpec,
    z: &[f64],
) -> Result<Vec<f64>, SdeError> {
    check_dim(spec.dim, x.len())?;
    check_dim(spec.dim, z.len())?;
    if !(dt > 0.0) {
        return Err(SdeError::InvalidStep {
            dt,
            horizon: spec.horizon,
        });
    }
    let mut out = x.to_vec();
    em_step_in_place(&mut out, t, dt, spec, z, &mut EmWorkspace::new(spec.dim))?;
    Ok(out)
}

/// In-place variant of [`em_step`]; no shape checks.
pub fn em_step_in_place(
    x: &mut [f64],
    t: f64,
    dt: f64,
    spec: &SdeSpec,
    z: &[f64],
    ws: &mut EmWorkspace,
) -> Result<(), SdeError> {
    spec.drift_into(x, t, &mut ws.drift);
    spec.diffusion_into(x, t, &mut ws.diffusion);
    check_finite(&ws.drift, t, "drift")?;
    check_finite(&ws.diffusion, t, "diffusion")?;
    let sq = dt.sqrt();
    for i in 0..x.len() {
        x[i] += ws.drift[i] * dt + ws.diffusion[i] * z[i] * sq;
    }
    check_finite(x, t + dt, "state")
}

fn check_dim(expected: usize, got: usize) -> Result<(), SdeError> {
    if expected == got {
        Ok(())
    } else {
        Err(SdeError::DimensionMismatch { expected, got })
    }
}

fn check_finite(v: &[f64], t: f64, what: &'static str) -> Result<(), SdeError> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(component) => Err(SdeError::DivergedTrajectory { t, component, what }),
    }
}

/// Runs `n_steps` EM steps of size `dt` with caller-supplied standard-normal
/// draws, recording every state and the given capture indices.
pub fn simulate_driven<F>(
    spec: &SdeSpec,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    captures: &[(f64, usize)],
    mut noise: F,
) -> Result<Trajectory, SdeError>
where
    F: FnMut(&mut [f64]),
{
    check_dim(spec.dim, x0.len())?;
    let dim = spec.dim;
    let mut ws = EmWorkspace::new(dim);
    let mut z = vec![0.0; dim];
    let mut x = x0.to_vec();
    check_finite(&x, 0.0, "state")?;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * dim);
    times.push(0.0);
    states.extend_from_slice(&x);
    for j in 0..n_steps {
        let t = j as f64 * dt;
        noise(&mut z);
        em_step_in_place(&mut x, t, dt, spec, &z, &mut ws)?;
        times.push((j + 1) as f64 * dt);
        states.extend_from_slice(&x);
    }
    let captures = captures
        .iter()
        .map(|&(tau, index)| Capture {
            tau,
            grid_time: times[index],
            index,
            state: states[index * dim..(index + 1) * dim].to_vec(),
        })
        .collect();
    Ok(Trajectory {
        dim,
        times,
        states,
        captures,
    })
}

/// Simulates `spec` from `x0` over its horizon with noise from `cfg.seed`.
pub fn simulate(spec: &SdeSpec, x0: &[f64], cfg: &EmConfig) -> Result<Trajectory, SdeError> {
    let n_steps = cfg.steps_for(spec.horizon)?;
    let idx = cfg.capture_indices(spec.horizon)?;
    let captures: Vec<(f64, usize)> = cfg
        .capture_times
        .iter()
        .zip(idx)
        .map(|(&tau, i)| (tau, i.min(n_steps)))
        .collect();
    let mut rng = rng::seeded(cfg.seed);
    simulate_driven(spec, x0, cfg.dt, n_steps, &captures, |z| {
        rng::fill_normal(&mut rng, z)
    })
}

/// Terminal states of `n` independent trajectories.
///
/// Trajectory `i` draws from the stream `(cfg.seed, "trajectory", i)`. With
/// `antithetic`, trajectories `2k` and `2k + 1` share a stream and the second
/// uses the negated draws.
pub fn terminal_ensemble(
    spec: &SdeSpec,
    x0: &[f64],
    cfg: &EmConfig,
    n: usize,
    antithetic: bool,
) -> Result<Vec<Vec<f64>>, SdeError> {
    check_dim(spec.dim, x0.len())?;
    let n_steps = cfg.steps_for(spec.horizon)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (stream_index, sign) = if antithetic {
                ((i / 2) as u64, if i % 2 == 0 { 1.0 } else { -1.0 })
            } else {
                (i as u64, 1.0)
            };
            let mut rng = rng::stream(cfg.seed, "trajectory", stream_index);
            let mut ws = EmWorkspace::new(spec.dim);
            let mut z = vec![0.0; spec.dim];
            let mut x = x0.to_vec();
            for j in 0..n_steps {
                rng::fill_normal(&mut rng, &mut z);
                if sign < 0.0 {
                    z.iter_mut().for_each(|v| *v = -*v);
                }
                em_step_in_place(&mut x, j as f64 * cfg.dt, cfg.dt, spec, &z, &mut ws)?;
            }
            Ok(x)
        })
        .collect()
}
