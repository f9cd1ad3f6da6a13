//! Generation by reversing the forward process: reverse-time Euler–Maruyama
//! and the probability-flow ODE integrated with an adaptive Dormand–Prince
//! pair.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::{fmt_f64, indexed_header, write_row};
use crate::nn::{NnError, Tensor};
use crate::rng;
use crate::score::{Pathway, ScoreNet};
use crate::sde::SdeSpec;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("sample diverged at t={t}")]
    DivergedSample { t: f64 },
    #[error("step size {h} underflowed at t={t}")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

/// Anything that returns `s(x, t)` for a batch of rows.
pub trait ScoreModel: Sync {
    fn score(&self, x: &Tensor, ts: &[f64], pathway: Pathway) -> Result<Tensor, SampleError>;
}

const CHUNK: usize = 512;

impl ScoreModel for ScoreNet {
    fn score(&self, x: &Tensor, ts: &[f64], pathway: Pathway) -> Result<Tensor, SampleError> {
        if x.rows() <= CHUNK {
            return Ok(ScoreNet::score(self, x, ts, pathway)?);
        }
        let d = x.cols();
        let parts: Vec<Vec<f64>> = x
            .data()
            .par_chunks(CHUNK * d)
            .zip(ts.par_chunks(CHUNK))
            .map(|(rows, t)| {
                let chunk = Tensor::matrix(t.len(), d, rows.to_vec())?;
                Ok(ScoreNet::score(self, &chunk, t, pathway)?.into_data())
            })
            .collect::<Result<_, SampleError>>()?;
        let out_cols = parts.first().map_or(d, |p| p.len() / ts.len().min(CHUNK));
        Ok(Tensor::matrix(x.rows(), out_cols, parts.concat())?)
    }
}

/// A score given row by row by a closure `(x, t) ↦ s`; ignores the pathway.
pub struct FnScore<F>(pub F);

impl<F> ScoreModel for FnScore<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn score(&self, x: &Tensor, ts: &[f64], _pathway: Pathway) -> Result<Tensor, SampleError> {
        let mut data = Vec::with_capacity(x.len());
        for (i, &t) in ts.iter().enumerate() {
            data.extend((self.0)(x.row(i), t));
        }
        Ok(Tensor::new(x.shape().to_vec(), data)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub t_start: f64,
    /// Floor of the reverse integration.
    pub t_min: f64,
    pub pathway: Pathway,
    pub rtol: f64,
    pub atol: f64,
    pub seed: u64,
    /// Take the last reverse-EM step without noise.
    pub denoise_last: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 500,
            t_start: 1.0,
            t_min: 1e-3,
            pathway: Pathway::Final,
            rtol: 1e-5,
            atol: 1e-5,
            seed: 0,
            denoise_last: true,
        }
    }
}

impl SamplerConfig {
    /// Defaults for `pathway`; the intermediate pathway starts at half the
    /// horizon.
    pub fn for_pathway(pathway: Pathway, horizon: f64) -> Self {
        let t_start = match pathway {
            Pathway::Final => horizon,
            Pathway::Intermediate => 0.5 * horizon,
        };
        Self {
            pathway,
            t_start,
            ..Self::default()
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<(), SampleError> {
        let bad = |m: String| Err(SampleError::InvalidConfig(m));
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("rtol and atol must be positive".into());
        }
        if !(self.t_start > 0.0 && self.t_start <= horizon + 1e-12) {
            return bad(format!("t_start {} not in (0, {horizon}]", self.t_start));
        }
        if !(self.t_min >= 0.0 && self.t_min < self.t_start) {
            return bad(format!("t_min {} not in [0, t_start)", self.t_min));
        }
        Ok(())
    }
}

fn check_rows(spec: &SdeSpec, x: &Tensor) -> Result<(), SampleError> {
    if x.cols() != spec.dim() {
        return Err(NnError::ShapeMismatch {
            expected: vec![x.rows(), spec.dim()],
            got: x.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Reverse-time Euler–Maruyama for one starting state.
pub fn reverse_em(
    model: &dyn ScoreModel,
    spec: &SdeSpec,
    x_t: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, SampleError> {
    let x = Tensor::row_vector(x_t.to_vec());
    Ok(reverse_em_batch(model, spec, &x, cfg)?.into_data())
}

/// Reverse-time Euler–Maruyama for every row of `x_t`.
///
/// `x ← x − [f(x,t) − g²⊙s(x,t)]·Δt + g⊙z·√Δt` on a uniform grid from
/// `t_start` down to `t_min`. Row `i` draws its noise from the stream
/// `(seed, "reverse-em", i)`.
pub fn reverse_em_batch(
    model: &dyn ScoreModel,
    spec: &SdeSpec,
    x_t: &Tensor,
    cfg: &SamplerConfig,
) -> Result<Tensor, SampleError> {
    cfg.validate(spec.horizon())?;
    check_rows(spec, x_t)?;
    let (rows, d) = (x_t.rows(), x_t.cols());
    let mut rngs: Vec<ChaCha8Rng> = (0..rows)
        .map(|i| rng::stream(cfg.seed, "reverse-em", i as u64))
        .collect();
    let dt = (cfg.t_start - cfg.t_min) / cfg.n_steps as f64;
    let sq = dt.sqrt();
    let mut x = x_t.clone();
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut z = vec![0.0; d];
    for k in 0..cfg.n_steps {
        let t = cfg.t_start - k as f64 * dt;
        let ts = vec![t; rows];
        let s = model.score(&x, &ts, cfg.pathway)?;
        let noisy = !(cfg.denoise_last && k + 1 == cfg.n_steps);
        let data = x.data_mut();
        for (i, rng) in rngs.iter_mut().enumerate() {
            let row = &mut data[i * d..(i + 1) * d];
            spec.drift_into(row, t, &mut f);
            spec.diffusion_into(row, t, &mut g);
            if noisy {
                rng::fill_normal(rng, &mut z);
            } else {
                z.fill(0.0);
            }
            let sr = s.row(i);
            for j in 0..d {
                row[j] += -(f[j] - g[j] * g[j] * sr[j]) * dt + g[j] * z[j] * sq;
            }
        }
        if !x.is_finite() {
            return Err(SampleError::DivergedSample { t: t - dt });
        }
    }
    Ok(x)
}

/// Probability-flow ODE sample for one starting state.
pub fn probability_flow_sample(
    model: &dyn ScoreModel,
    spec: &SdeSpec,
    x_t: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, SampleError> {
    let x = Tensor::row_vector(x_t.to_vec());
    Ok(probability_flow_batch(model, spec, &x, cfg)?.into_data())
}

/// Integrates `dx/dt = f(x,t) − ½g²⊙s(x,t)` from `t_start` to `t_min` for all
/// rows as one stacked system, so rows share the adaptive step sequence.
pub fn probability_flow_batch(
    model: &dyn ScoreModel,
    spec: &SdeSpec,
    x_t: &Tensor,
    cfg: &SamplerConfig,
) -> Result<Tensor, SampleError> {
    cfg.validate(spec.horizon())?;
    check_rows(spec, x_t)?;
    let (rows, d) = (x_t.rows(), x_t.cols());
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d];
    let field = |t: f64, x: &[f64], out: &mut [f64]| -> Result<(), SampleError> {
        let xs = Tensor::matrix(rows, d, x.to_vec())?;
        let s = model.score(&xs, &vec![t; rows], cfg.pathway)?;
        for i in 0..rows {
            let row = &x[i * d..(i + 1) * d];
            spec.drift_into(row, t, &mut f);
            spec.diffusion_into(row, t, &mut g);
            let sr = s.row(i);
            for j in 0..d {
                out[i * d + j] = f[j] - 0.5 * g[j] * g[j] * sr[j];
            }
        }
        Ok(())
    };
    let opts = Rk45Options {
        rtol: cfg.rtol,
        atol: cfg.atol,
        ..Rk45Options::default()
    };
    let sol = rk45_integrate(field, x_t.data(), cfg.t_start, cfg.t_min, &opts)?;
    Ok(Tensor::matrix(rows, d, sol.x)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible |h|.
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            h_min: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rk45Solution {
    pub x: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

fn rms_scaled(v: &[f64], scale: impl Fn(usize) -> f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().enumerate().map(|(i, x)| (x / scale(i)).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Adaptive Dormand–Prince integration of `ẋ = field(t, x)` from `t0` to
/// `t1` (either direction). Steps are accepted when every component's local
/// error estimate is within `atol + rtol·max(|x|, |x_new|)`; the step size
/// follows a PI controller.
pub fn rk45_integrate<F>(
    mut field: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    opts: &Rk45Options,
) -> Result<Rk45Solution, SampleError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SampleError>,
{
    if t0 == t1 {
        return Err(SampleError::InvalidConfig("t0 must differ from t1".into()));
    }
    let n = x0.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut evaluations = 0;
    field(t, &x, &mut k[0])?;
    evaluations += 1;
    if !k[0].iter().all(|v| v.is_finite()) {
        return Err(SampleError::DivergedSample { t });
    }

    // Initial step from the local scale of the solution and its derivative.
    let sc = |i: usize, x: &[f64]| opts.atol + opts.rtol * x[i].abs();
    let d0 = rms_scaled(&x, |i| sc(i, &x));
    let d1 = rms_scaled(&k[0], |i| sc(i, &x));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let x_probe: Vec<f64> = x.iter().zip(&k[0]).map(|(a, b)| a + dir * h0 * b).collect();
    let mut f_probe = vec![0.0; n];
    field(t + dir * h0, &x_probe, &mut f_probe)?;
    evaluations += 1;
    let diff: Vec<f64> = f_probe.iter().zip(&k[0]).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, |i| sc(i, &x)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let mut h = (100.0 * h0).min(h1).min(span);

    let mut x_new = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut prev_err: f64 = 1e-4;
    let (mut accepted, mut rejected) = (0, 0);
    let mut finished = false;
    while !finished {
        if accepted + rejected >= opts.max_steps {
            return Err(SampleError::StepSizeUnderflow { t, h });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < opts.h_min && !last {
            return Err(SampleError::StepSizeUnderflow { t, h });
        }
        let hs = dir * h;
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for j in 0..s {
                    acc += hs * A[s][j] * k[j][i];
                }
                stage[i] = acc;
            }
            let (done, rest) = k.split_at_mut(s);
            let _ = done;
            field(t + C[s] * hs, &stage, &mut rest[0])?;
            evaluations += 1;
            if s == 6 {
                x_new.copy_from_slice(&stage);
            }
        }
        for i in 0..n {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            err[i] = hs * e;
        }
        let mut err_norm: f64 = 0.0;
        for i in 0..n {
            let scale = opts.atol + opts.rtol * x[i].abs().max(x_new[i].abs());
            err_norm = err_norm.max(err[i].abs() / scale);
        }
        if !err_norm.is_finite() || !x_new.iter().all(|v| v.is_finite()) {
            if h < opts.h_min {
                return Err(SampleError::DivergedSample { t });
            }
            h *= MIN_FACTOR;
            rejected += 1;
            continue;
        }
        if err_norm <= 1.0 {
            accepted += 1;
            t = if last { t1 } else { t + hs };
            x.copy_from_slice(&x_new);
            k.swap(0, 6);
            finished = last;
            let factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                SAFETY * err_norm.powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0)
            };
            h *= factor.clamp(MIN_FACTOR, MAX_FACTOR);
            prev_err = err_norm.max(1e-4);
        } else {
            rejected += 1;
            h *= (SAFETY * err_norm.powf(-0.2)).max(MIN_FACTOR);
            if h < opts.h_min {
                return Err(SampleError::StepSizeUnderflow { t, h });
            }
        }
    }
    Ok(Rk45Solution {
        x,
        accepted,
        rejected,
        evaluations,
    })
}

/// One row per sample; the first line records the sampler settings.
pub fn write_samples_csv<W: Write>(
    w: &mut W,
    samples: &Tensor,
    pathway: Pathway,
    t_start: f64,
    seed: u64,
) -> io::Result<()> {
    writeln!(
        w,
        "# pathway={},t_start={},seed={seed}",
        pathway.name(),
        fmt_f64(t_start)
    )?;
    writeln!(w, "{}", indexed_header("x", samples.cols()).join(","))?;
    for i in 0..samples.rows() {
        write_row(w, samples.row(i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng::seeded;
    use crate::score::ScoreNetSpec;
    use crate::sde::{constant_field, linear_drift};

    fn frozen() -> SdeSpec {
        SdeSpec::frozen(2).unwrap()
    }

    #[test]
    fn degenerate_reverse_sde_is_identity() {
        let score = FnScore(|x: &[f64], _t| x.iter().map(|v| 5.0 * v + 1.0).collect());
        let cfg = SamplerConfig::default();
        let out = reverse_em(&score, &frozen(), &[0.3, -1.2], &cfg).unwrap();
        assert_eq!(out, vec![0.3, -1.2]);
    }

    #[test]
    fn single_reverse_step_by_hand() {
        let spec = SdeSpec::new(1, constant_field(0.0), constant_field(1.0), 1.0).unwrap();
        let score = FnScore(|_x: &[f64], _t| vec![3.0]);
        let cfg = SamplerConfig {
            n_steps: 1,
            t_start: 0.011,
            t_min: 0.001,
            ..SamplerConfig::default()
        };
        let out = reverse_em(&score, &spec, &[2.0], &cfg).unwrap();
        assert!((out[0] - (2.0 + 3.0 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn reverse_em_undoes_forward_euler_to_first_order() {
        // g ≡ 0 and s ≡ 0: the reverse walk retraces forward Euler up to O(Δt).
        let spec = SdeSpec::new(1, linear_drift(-1.0), constant_field(0.0), 1.0).unwrap();
        let zero = FnScore(|x: &[f64], _t| vec![0.0; x.len()]);
        let errs: Vec<f64> = [100, 200]
            .into_iter()
            .map(|n| {
                let dt = 1.0 / n as f64;
                let mut x = 1.0f64;
                for _ in 0..n {
                    x += -x * dt;
                }
                let cfg = SamplerConfig {
                    n_steps: n,
                    t_start: 1.0,
                    t_min: 0.0,
                    ..SamplerConfig::default()
                };
                (reverse_em(&zero, &spec, &[x], &cfg).unwrap()[0] - 1.0).abs()
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(errs[0] < 0.01 && (1.8..2.2).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn reverse_em_is_seeded() {
        let spec = SdeSpec::ornstein_uhlenbeck(2, 1.0, 1.0).unwrap();
        let score = FnScore(|x: &[f64], _t| x.iter().map(|v| -v).collect());
        let cfg = SamplerConfig {
            n_steps: 50,
            seed: 11,
            ..SamplerConfig::default()
        };
        let a = reverse_em(&score, &spec, &[1.0, 0.0], &cfg).unwrap();
        let b = reverse_em(&score, &spec, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(a, b);
        let c = reverse_em(&score, &spec, &[1.0, 0.0], &SamplerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn probability_flow_linear_decay_backwards() {
        let spec = SdeSpec::new(1, linear_drift(-1.0), constant_field(0.0), 1.0).unwrap();
        let zero = FnScore(|x: &[f64], _t| vec![0.0; x.len()]);
        let cfg = SamplerConfig {
            t_start: 1.0,
            t_min: 0.0,
            rtol: 1e-10,
            atol: 1e-12,
            ..SamplerConfig::default()
        };
        let out = probability_flow_sample(&zero, &spec, &[1.0], &cfg).unwrap();
        assert!((out[0] - std::f64::consts::E).abs() < 1e-6);
        let again = probability_flow_sample(&zero, &spec, &[1.0], &cfg).unwrap();
        assert_eq!(out, again);
        let id = probability_flow_sample(&zero, &frozen(), &[0.5, 0.25], &cfg).unwrap();
        assert_eq!(id, vec![0.5, 0.25]);
    }

    #[test]
    fn rk45_exponential_growth() {
        let opts = Rk45Options {
            rtol: 1e-9,
            atol: 1e-9,
            ..Rk45Options::default()
        };
        let sol = rk45_integrate(
            |_t, x: &[f64], out: &mut [f64]| {
                out[0] = x[0];
                Ok(())
            },
            &[1.0],
            0.0,
            1.0,
            &opts,
        )
        .unwrap();
        assert!((sol.x[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn rk45_zero_field_and_rotation() {
        let opts = Rk45Options::default();
        let still = rk45_integrate(
            |_t, _x: &[f64], out: &mut [f64]| {
                out.fill(0.0);
                Ok(())
            },
            &[1.5, -2.0],
            0.0,
            3.0,
            &opts,
        )
        .unwrap();
        assert_eq!(still.x, vec![1.5, -2.0]);
        let opts = Rk45Options {
            rtol: 1e-10,
            atol: 1e-10,
            ..Rk45Options::default()
        };
        let rot = rk45_integrate(
            |_t, x: &[f64], out: &mut [f64]| {
                out[0] = -x[1];
                out[1] = x[0];
                Ok(())
            },
            &[1.0, 0.0],
            0.0,
            2.0 * std::f64::consts::PI,
            &opts,
        )
        .unwrap();
        assert!((rot.x[0] - 1.0).abs() < 1e-6 && rot.x[1].abs() < 1e-6, "{:?}", rot.x);
    }

    #[test]
    fn rk45_reports_underflow_on_blowup() {
        let err = rk45_integrate(
            |_t, x: &[f64], out: &mut [f64]| {
                out[0] = x[0] * x[0];
                Ok(())
            },
            &[1.0],
            0.0,
            2.0,
            &Rk45Options::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SampleError::StepSizeUnderflow { .. } | SampleError::DivergedSample { .. }
        ));
    }

    #[test]
    fn rigged_pathways_agree() {
        let spec = ScoreNetSpec {
            data_dim: 2,
            hidden: 8,
            encoder_depth: 1,
            core_depth: 2,
            decoder_depth: 1,
            time_embed_dim: 4,
            activation: Activation::Tanh,
            tap_layer: Some(0),
        };
        let mut net = ScoreNet::new(&spec, &mut seeded(5)).unwrap();
        let (e, et) = (net.encoder()[0], net.inter_encoder());
        let (d, dt) = (net.decoder()[0], net.inter_decoder());
        for (src, dst) in [(e.weight, et.weight), (e.bias, et.bias), (d.weight, dt.weight), (d.bias, dt.bias)] {
            let v = net.params.value(src).clone();
            net.params.set_value(dst, v).unwrap();
        }
        let sde = SdeSpec::variance_preserving(2, Default::default()).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.1, -0.4, 1.0, 0.7, -1.1, 0.2]).unwrap();
        let cfg = SamplerConfig {
            n_steps: 40,
            t_start: 0.5,
            seed: 3,
            ..SamplerConfig::default()
        };
        let a = reverse_em_batch(&net, &sde, &x, &cfg).unwrap();
        let b = reverse_em_batch(
            &net,
            &sde,
            &x,
            &SamplerConfig {
                pathway: Pathway::Intermediate,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_scoring_matches_single_pass() {
        let spec = ScoreNetSpec {
            hidden: 8,
            time_embed_dim: 4,
            ..ScoreNetSpec::default()
        };
        let net = ScoreNet::new(&spec, &mut seeded(8)).unwrap();
        let n = 1300;
        let x = Tensor::matrix(n, 2, crate::rng::normal_vec(&mut seeded(9), 2 * n)).unwrap();
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let chunked = ScoreModel::score(&net, &x, &ts, Pathway::Final).unwrap();
        for i in [0, 511, 512, 1299] {
            let one = Tensor::row_vector(x.row(i).to_vec());
            let direct = ScoreNet::score(&net, &one, &ts[i..=i], Pathway::Final).unwrap();
            for (a, b) in chunked.row(i).iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_csv_header() {
        let mut buf = Vec::new();
        let s = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_samples_csv(&mut buf, &s, Pathway::Intermediate, 0.5, 7).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# pathway=intermediate,t_start=5.0"));
        assert_eq!(lines.next().unwrap(), "x0,x1");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn invalid_configs() {
        let spec = frozen();
        let zero = FnScore(|x: &[f64], _t| vec![0.0; x.len()]);
        for cfg in [
            SamplerConfig { n_steps: 0, ..SamplerConfig::default() },
            SamplerConfig { rtol: 0.0, ..SamplerConfig::default() },
            SamplerConfig { t_start: 1.5, ..SamplerConfig::default() },
        ] {
            assert!(matches!(
                reverse_em(&zero, &spec, &[0.0, 0.0], &cfg),
                Err(SampleError::InvalidConfig(_))
            ));
        }
    }
}
