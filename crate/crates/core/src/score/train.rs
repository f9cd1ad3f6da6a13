use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use super::loss::{accumulate_multi, accumulate_step};
use super::{dsm_target_em, dsm_target_gaussian, IterateSlice, Lambda, ScoreError, ScoreNet, TrainBatch};
use crate::downstream::weight_divergence;
use crate::io::write_row;
use crate::nn::{Adam, AdamConfig, NnError, Tensor};
use crate::rng::{self, derive_seed};
use crate::sde::{simulate_driven, SdeSpec, VpSchedule};

/// How intermediate times are chosen from the sampled `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum TauRule {
    /// `τ = t/2`.
    HalfT,
    /// `τ_k = c_k·t` for each fraction `c_k ∈ (0, 1)`.
    Fractions(Vec<f64>),
}

impl TauRule {
    pub fn fractions(&self) -> Vec<f64> {
        match self {
            TauRule::HalfT => vec![0.5],
            TauRule::Fractions(f) => {
                let mut f = f.clone();
                f.sort_by(f64::total_cmp);
                f
            }
        }
    }
}

/// The corruption process that produces training pairs.
#[derive(Debug, Clone)]
pub enum ForwardProcess {
    /// Variance-preserving kernel sampled in closed form along each
    /// trajectory; targets are exact conditional scores.
    Gaussian(VpSchedule),
    /// Euler–Maruyama simulation; targets are one-step transition scores.
    Simulated { spec: SdeSpec, dt: f64 },
}

impl ForwardProcess {
    pub fn horizon(&self) -> f64 {
        match self {
            ForwardProcess::Gaussian(_) => 1.0,
            ForwardProcess::Simulated { spec, .. } => spec.horizon(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IgoConfig {
    /// Weight on the standard loss; `1 − alpha` weights the regularizer.
    pub alpha: f64,
    pub lambda: Lambda,
    pub tau_rule: TauRule,
    pub batch_size: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    /// When false the regularizer is never evaluated and `alpha` is ignored.
    pub regularizer: bool,
    pub log_every: usize,
    /// Lower end of the `t` draw.
    pub t_floor: f64,
}

impl Default for IgoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: Lambda::default(),
            tau_rule: TauRule::HalfT,
            batch_size: 128,
            steps: 2000,
            adam: AdamConfig::default(),
            regularizer: true,
            log_every: 100,
            t_floor: 1e-3,
        }
    }
}

impl IgoConfig {
    pub fn validate(&self, horizon: f64) -> Result<(), ScoreError> {
        let bad = |m: String| Err(ScoreError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} not in [0, 1]", self.alpha));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return bad("batch_size and log_every must be positive".into());
        }
        if !(self.t_floor > 0.0 && self.t_floor < horizon) {
            return bad(format!("t_floor {} not in (0, {horizon})", self.t_floor));
        }
        if self.tau_rule.fractions().iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return bad("tau fractions must lie in (0, 1)".into());
        }
        for k in 0..=16 {
            let t = self.t_floor + (horizon - self.t_floor) * k as f64 / 16.0;
            if !(self.lambda.weight(t) > 0.0) {
                return bad(format!("lambda({t}) is not positive"));
            }
        }
        Ok(())
    }
}

struct SampleDraw {
    x0: Vec<f64>,
    /// `(time, state, target)` for each τ in ascending order, then `t`.
    points: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

fn draw_sample(
    dataset: &Tensor,
    process: &ForwardProcess,
    cfg: &IgoConfig,
    fractions: &[f64],
    rng: &mut impl Rng,
) -> Result<SampleDraw, ScoreError> {
    let x0 = dataset.row(rng.random_range(0..dataset.rows())).to_vec();
    let horizon = process.horizon();
    let t = cfg.t_floor + (horizon - cfg.t_floor) * rng.random::<f64>();
    let dim = x0.len();
    let mut points = Vec::with_capacity(fractions.len() + 1);
    match process {
        ForwardProcess::Gaussian(schedule) => {
            let mut x = x0.clone();
            let mut prev = 0.0;
            let mut z = vec![0.0; dim];
            for s in fractions.iter().map(|c| c * t).chain([t]) {
                let delta = schedule.integral(s) - schedule.integral(prev);
                let coef = (-0.5 * delta).exp();
                let sd = (-(-delta).exp_m1()).sqrt();
                rng::fill_normal(rng, &mut z);
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi = coef * *xi + sd * zi;
                }
                let g = dsm_target_gaussian(&x0, &x, s, schedule)?;
                points.push((s, x.clone(), g));
                prev = s;
            }
        }
        ForwardProcess::Simulated { spec, dt } => {
            let n = ((t / dt).round() as usize).max(1);
            let idx: Vec<usize> = fractions
                .iter()
                .map(|c| ((c * n as f64).round() as usize).clamp(1, n))
                .chain([n])
                .collect();
            let traj = simulate_driven(spec, &x0, *dt, n, &[], |z| rng::fill_normal(rng, z))?;
            for j in idx {
                let g = dsm_target_em(traj.state(j - 1), traj.state(j), (j - 1) as f64 * dt, *dt, spec)?;
                points.push((traj.times[j], traj.state(j).to_vec(), g));
            }
        }
    }
    Ok(SampleDraw { x0, points })
}

/// Draws the batch for training step `step`. Sample `i` uses its own stream,
/// so assembly may run in parallel without changing the result.
pub fn assemble_batch(
    dataset: &Tensor,
    process: &ForwardProcess,
    cfg: &IgoConfig,
    seed: u64,
    step: usize,
) -> Result<TrainBatch, ScoreError> {
    if dataset.rows() == 0 {
        return Err(ScoreError::InvalidConfig("dataset is empty".into()));
    }
    let fractions = cfg.tau_rule.fractions();
    let step_seed = derive_seed(seed, "train-step", step as u64);
    let draws: Vec<SampleDraw> = (0..cfg.batch_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(step_seed, "sample", i as u64);
            draw_sample(dataset, process, cfg, &fractions, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let d = dataset.cols();
    let n = draws.len();
    let slice_at = |k: usize| -> Result<IterateSlice, ScoreError> {
        let mut times = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n * d);
        let mut targets = Vec::with_capacity(n * d);
        for s in &draws {
            let (t, x, g) = &s.points[k];
            times.push(*t);
            states.extend_from_slice(x);
            targets.extend_from_slice(g);
        }
        IterateSlice::new(times, Tensor::matrix(n, d, states)?, Tensor::matrix(n, d, targets)?)
    };
    let k = fractions.len();
    let intermediate = (0..k).map(slice_at).collect::<Result<Vec<_>, _>>()?;
    let main = slice_at(k)?;
    let x0 = Tensor::matrix(n, d, draws.iter().flat_map(|s| s.x0.iter().copied()).collect())?;
    Ok(TrainBatch {
        x0,
        main,
        intermediate,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_std: f64,
    pub loss_r: f64,
    pub cos_e: f64,
    pub cos_d: f64,
    pub eucl_e: f64,
    pub eucl_d: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "step,loss_total,loss_std,loss_R,cos_E,cos_D,eucl_E,eucl_D";

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.records {
            write!(w, "{},", r.step)?;
            write_row(
                w,
                &[r.loss_total, r.loss_std, r.loss_r, r.cos_e, r.cos_d, r.eucl_e, r.eucl_d],
            )?;
        }
        Ok(())
    }
}

fn diverged(step: usize) -> impl Fn(ScoreError) -> ScoreError {
    move |e| match e {
        ScoreError::Nn(NnError::NonFinite(_)) => ScoreError::DivergedTraining(step),
        other => other,
    }
}

/// Trains `net` and returns the log.
pub fn train(
    net: &mut ScoreNet,
    dataset: &Tensor,
    process: &ForwardProcess,
    cfg: &IgoConfig,
    seed: u64,
) -> Result<TrainingLog, ScoreError> {
    train_with(net, dataset, process, cfg, seed, |_, _| Ok(()))
}

/// Like [`train`], calling `on_log` after every logged step.
pub fn train_with<F>(
    net: &mut ScoreNet,
    dataset: &Tensor,
    process: &ForwardProcess,
    cfg: &IgoConfig,
    seed: u64,
    mut on_log: F,
) -> Result<TrainingLog, ScoreError>
where
    F: FnMut(&LogRecord, &ScoreNet) -> Result<(), ScoreError>,
{
    cfg.validate(process.horizon())?;
    if dataset.cols() != net.data_dim() {
        return Err(NnError::ShapeMismatch {
            expected: vec![dataset.rows(), net.data_dim()],
            got: dataset.shape().to_vec(),
        }
        .into());
    }
    let mut adam = Adam::new(cfg.adam, &net.params);
    let mut log = TrainingLog::default();
    for step in 0..cfg.steps {
        let batch = assemble_batch(dataset, process, cfg, seed, step)?;
        net.params.zero_grads();
        let loss = accumulate_step(net, &batch, cfg).map_err(diverged(step))?;
        if !loss.total.is_finite() {
            return Err(ScoreError::DivergedTraining(step));
        }
        let logged = step % cfg.log_every == 0 || step + 1 == cfg.steps;
        let loss_r = match (logged, loss.regularizer) {
            (_, Some(r)) => r,
            // Forward-only evaluation for the log; no gradient, no draws.
            (true, None) => accumulate_multi(net, &batch.intermediate, &cfg.lambda, 0.0)
                .map_err(diverged(step))?,
            (false, None) => 0.0,
        };
        adam.step(&mut net.params);
        if logged {
            let wd = weight_divergence(net).ok();
            let record = LogRecord {
                step,
                loss_total: loss.total,
                loss_std: loss.standard,
                loss_r,
                cos_e: wd.map_or(f64::NAN, |w| w.cos_e),
                cos_d: wd.map_or(f64::NAN, |w| w.cos_d),
                eucl_e: wd.map_or(f64::NAN, |w| w.eucl_e),
                eucl_d: wd.map_or(f64::NAN, |w| w.eucl_d),
            };
            on_log(&record, net)?;
            log.records.push(record);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::GaussianMixture;
    use crate::nn::Activation;
    use crate::rng::seeded;
    use crate::score::ScoreNetSpec;
    use crate::sde::{constant_field, lotka_volterra_drift, LotkaVolterraRates};

    fn small_spec() -> ScoreNetSpec {
        ScoreNetSpec {
            data_dim: 2,
            hidden: 16,
            encoder_depth: 1,
            core_depth: 2,
            decoder_depth: 1,
            time_embed_dim: 4,
            activation: Activation::Silu,
            tap_layer: None,
        }
    }

    fn data() -> Tensor {
        GaussianMixture::symmetric_pair(vec![2.0, 2.0], 0.5).sample(64, &mut seeded(3))
    }

    #[test]
    fn gaussian_batch_targets_are_exact() {
        let s = VpSchedule::default();
        let cfg = IgoConfig {
            batch_size: 16,
            ..IgoConfig::default()
        };
        let b = assemble_batch(&data(), &ForwardProcess::Gaussian(s), &cfg, 5, 0).unwrap();
        assert_eq!(b.intermediate.len(), 1);
        for i in 0..16 {
            let t = b.main.times[i];
            let tau = b.intermediate[0].times[i];
            assert!((tau - 0.5 * t).abs() < 1e-15);
            let (mean, sd) = crate::sde::vp_kernel(b.x0.row(i), t, &s);
            for k in 0..2 {
                let expected = -(b.main.states.row(i)[k] - mean[k]) / (sd * sd);
                assert!((b.main.targets.row(i)[k] - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn simulated_batch_captures_half_time_on_grid() {
        let spec = SdeSpec::new(
            2,
            lotka_volterra_drift(LotkaVolterraRates {
                alpha: 1.0,
                beta: 0.2,
                gamma: 1.0,
                delta: 0.2,
            }),
            constant_field(0.3),
            1.0,
        )
        .unwrap();
        let process = ForwardProcess::Simulated { spec, dt: 0.01 };
        let cfg = IgoConfig {
            batch_size: 8,
            ..IgoConfig::default()
        };
        let b = assemble_batch(&data(), &process, &cfg, 1, 2).unwrap();
        for i in 0..8 {
            let t = b.main.times[i];
            let tau = b.intermediate[0].times[i];
            let n = (t / 0.01).round();
            assert!((t - n * 0.01).abs() < 1e-12);
            assert!((tau - (0.5 * n).round().max(1.0) * 0.01).abs() < 1e-12);
        }
        let again = assemble_batch(&data(), &process, &cfg, 1, 2).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn alpha_one_matches_disabled_regularizer() {
        let spec = small_spec();
        let process = ForwardProcess::Gaussian(VpSchedule::default());
        let base = IgoConfig {
            alpha: 1.0,
            steps: 30,
            batch_size: 16,
            log_every: 10,
            ..IgoConfig::default()
        };
        let mut a = ScoreNet::new(&spec, &mut seeded(9)).unwrap();
        let mut b = a.clone();
        train(&mut a, &data(), &process, &base, 4).unwrap();
        let off = IgoConfig {
            regularizer: false,
            ..base
        };
        train(&mut b, &data(), &process, &off, 4).unwrap();
        for id in a.outer_params() {
            let (x, y) = (a.params.value(id).data(), b.params.value(id).data());
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn alpha_zero_freezes_encoder_and_pre_tap_core() {
        let process = ForwardProcess::Gaussian(VpSchedule::default());
        let cfg = IgoConfig {
            alpha: 0.0,
            steps: 20,
            batch_size: 16,
            ..IgoConfig::default()
        };
        let mut net = ScoreNet::new(&small_spec(), &mut seeded(2)).unwrap();
        let before = net.clone();
        train(&mut net, &data(), &process, &cfg, 8).unwrap();
        for id in net.pre_tap_params() {
            assert_eq!(net.params.value(id), before.params.value(id));
        }
        let moved = net
            .restricted_params()
            .into_iter()
            .any(|id| net.params.value(id) != before.params.value(id));
        assert!(moved);
    }

    #[test]
    fn training_is_deterministic_and_logs_every_interval() {
        let process = ForwardProcess::Gaussian(VpSchedule::default());
        let cfg = IgoConfig {
            steps: 25,
            batch_size: 8,
            log_every: 10,
            ..IgoConfig::default()
        };
        let mut a = ScoreNet::new(&small_spec(), &mut seeded(6)).unwrap();
        let mut b = a.clone();
        let la = train(&mut a, &data(), &process, &cfg, 3).unwrap();
        let lb = train(&mut b, &data(), &process, &cfg, 3).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        let steps: Vec<usize> = la.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 24]);
        let mut buf = Vec::new();
        la.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,loss_total,loss_std,loss_R,cos_E,cos_D,eucl_E,eucl_D\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let process = ForwardProcess::Gaussian(VpSchedule::default());
        let cfg = IgoConfig {
            alpha: 1.5,
            ..IgoConfig::default()
        };
        let mut net = ScoreNet::new(&small_spec(), &mut seeded(1)).unwrap();
        assert!(matches!(
            train(&mut net, &data(), &process, &cfg, 0),
            Err(ScoreError::InvalidConfig(_))
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let process = ForwardProcess::Gaussian(VpSchedule::default());
        let cfg = IgoConfig {
            steps: 200,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e150,
                ..AdamConfig::default()
            },
            ..IgoConfig::default()
        };
        let mut net = ScoreNet::new(&small_spec(), &mut seeded(1)).unwrap();
        assert!(matches!(
            train(&mut net, &data(), &process, &cfg, 0),
            Err(ScoreError::DivergedTraining(_))
        ));
    }
}
