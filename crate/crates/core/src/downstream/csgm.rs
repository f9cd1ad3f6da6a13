use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{check_len, clamp_to_ball, dot, norm, DownstreamError, Generator, ReportMeta};
use crate::io::fmt_f64;
use crate::rng;

/// `y = A·x_true + 𝔫` with `A` of shape m×n.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub a: DMatrix<f64>,
    pub y: Vec<f64>,
    pub noise_std: f64,
    /// Kept for scoring the recovery only.
    pub x_true: Option<Vec<f64>>,
}

impl MeasurementModel {
    /// Gaussian sensing matrix with entries `N(0, 1/m)` and observation noise
    /// `N(0, noise_std²)`.
    pub fn gaussian<R: Rng + ?Sized>(
        m: usize,
        x_true: Vec<f64>,
        noise_std: f64,
        rng: &mut R,
    ) -> Self {
        let n = x_true.len();
        let scale = if m == 0 { 0.0 } else { 1.0 / (m as f64).sqrt() };
        let entries: Vec<f64> = rng::normal_vec(rng, m * n).into_iter().map(|v| v * scale).collect();
        let a = DMatrix::from_row_slice(m, n, &entries);
        let noise = rng::normal_vec(rng, m);
        Self::observe(a, x_true, &noise, noise_std)
    }

    /// Builds `y` from an explicit matrix and noise draw.
    pub fn observe(a: DMatrix<f64>, x_true: Vec<f64>, noise: &[f64], noise_std: f64) -> Self {
        let ax = &a * DVector::from_column_slice(&x_true);
        let y = ax.iter().zip(noise).map(|(v, e)| v + noise_std * e).collect();
        Self {
            a,
            y,
            noise_std,
            x_true: Some(x_true),
        }
    }

    /// A model from given measurements, with no ground truth attached.
    pub fn from_measurements(a: DMatrix<f64>, y: Vec<f64>, noise_std: f64) -> Result<Self, DownstreamError> {
        check_len(a.nrows(), y.len())?;
        Ok(Self {
            a,
            y,
            noise_std,
            x_true: None,
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn adjoint(&self, r: &[f64]) -> Vec<f64> {
        (self.a.transpose() * DVector::from_column_slice(r)).as_slice().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LineSearch {
    /// Exact minimization along the gradient for affine generators,
    /// backtracking otherwise.
    #[default]
    Auto,
    /// Armijo backtracking from the current step size.
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsgmConfig {
    pub steps: usize,
    /// Initial step size for backtracking.
    pub lr: f64,
    pub restarts: usize,
    pub line_search: LineSearch,
}

impl Default for CsgmConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            restarts: 3,
            line_search: LineSearch::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsgmResult {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// `‖A·x̂ − y‖₂`.
    pub residual: f64,
    /// `‖x̂ − x_true‖ / ‖x_true‖` when the truth is attached.
    pub recovery_error: Option<f64>,
    /// Objective after each accepted step of the winning restart.
    pub objective_trace: Vec<f64>,
}

fn objective(model: &MeasurementModel, gen: &dyn Generator, z: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), DownstreamError> {
    let x = gen.generate(z)?;
    let r: Vec<f64> = model.apply(&x).iter().zip(&model.y).map(|(a, b)| a - b).collect();
    Ok((dot(&r, &r), r, x))
}

struct Run {
    z: Vec<f64>,
    x: Vec<f64>,
    f: f64,
    trace: Vec<f64>,
}

fn descend(
    model: &MeasurementModel,
    gen: &dyn Generator,
    z0: Vec<f64>,
    cfg: &CsgmConfig,
) -> Result<Run, DownstreamError> {
    let radius = gen.radius();
    let exact = cfg.line_search == LineSearch::Auto && gen.is_affine();
    let mut z = z0;
    let (mut f, mut r, mut x) = objective(model, gen, &z)?;
    let mut trace = vec![f];
    let mut eta = cfg.lr;
    for _ in 0..cfg.steps {
        let g: Vec<f64> = gen.vjp(&z, &model.adjoint(&r))?.into_iter().map(|v| 2.0 * v).collect();
        let gg = dot(&g, &g);
        if gg == 0.0 || !gg.is_finite() {
            break;
        }
        let step = if exact {
            // A·G is affine, so the objective along −g is a parabola.
            let shifted: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = gen.generate(&shifted)?.iter().zip(&x).map(|(a, b)| b - a).collect();
            let q = model.apply(&dx);
            let qq = dot(&q, &q);
            if qq == 0.0 {
                break;
            }
            let mut cand: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - dot(&r, &q) / qq * b).collect();
            clamp_to_ball(&mut cand, radius);
            let (fc, rc, xc) = objective(model, gen, &cand)?;
            (fc <= f).then_some((cand, fc, rc, xc))
        } else {
            let mut found = None;
            for _ in 0..60 {
                let mut cand: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
                clamp_to_ball(&mut cand, radius);
                let (fc, rc, xc) = objective(model, gen, &cand)?;
                if fc <= f - 1e-4 * eta * gg {
                    found = Some((cand, fc, rc, xc));
                    break;
                }
                eta *= 0.5;
            }
            if found.is_some() {
                eta *= 2.0;
            }
            found
        };
        let Some((zc, fc, rc, xc)) = step else {
            break;
        };
        let stalled = fc == f;
        (z, f, r, x) = (zc, fc, rc, xc);
        trace.push(f);
        if stalled {
            break;
        }
    }
    Ok(Run { z, x, f, trace })
}

/// Minimizes `‖A·G(z) − y‖²` over the latent ball by gradient descent from
/// `restarts` seeded starts and returns `G(z)` of the best one.
pub fn csgm_recover(
    model: &MeasurementModel,
    gen: &dyn Generator,
    cfg: &CsgmConfig,
    seed: u64,
) -> Result<CsgmResult, DownstreamError> {
    check_len(model.n(), gen.output_dim())?;
    if cfg.restarts == 0 {
        return Err(DownstreamError::InvalidConfig("restarts must be at least 1".into()));
    }
    let mut best: Option<Run> = None;
    for restart in 0..cfg.restarts {
        let mut z0 = rng::normal_vec(&mut rng::stream(seed, "csgm-restart", restart as u64), gen.latent_dim());
        clamp_to_ball(&mut z0, gen.radius());
        let run = descend(model, gen, z0, cfg)?;
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let recovery_error = model.x_true.as_ref().map(|t| {
        let diff: Vec<f64> = run.x.iter().zip(t).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(t)
    });
    Ok(CsgmResult {
        residual: run.f.sqrt(),
        recovery_error,
        objective_trace: run.trace,
        x: run.x,
        z: run.z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub trials: usize,
    pub noise_std: f64,
    pub csgm: CsgmConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            trials: 5,
            noise_std: 0.0,
            csgm: CsgmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub mean_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub n: usize,
    pub k: usize,
    pub rows: Vec<SweepRow>,
}

/// Mean relative recovery error against the number of measurements.
///
/// Every `(m, trial)` cell draws its own in-range `x_true` and sensing matrix
/// from a stream keyed by both, so cells are independent of evaluation order.
pub fn sample_complexity_sweep(
    gen: &dyn Generator,
    m_list: &[usize],
    cfg: &SweepConfig,
    seed: u64,
) -> Result<SweepTable, DownstreamError> {
    if m_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(DownstreamError::InvalidConfig("m_list must be sorted ascending".into()));
    }
    if cfg.trials == 0 {
        return Err(DownstreamError::InvalidConfig("trials must be at least 1".into()));
    }
    let (n, k) = (gen.output_dim(), gen.latent_dim());
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let errors: Vec<f64> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let cell = rng::derive_seed(seed, "sweep-cell", m as u64);
                let mut rng = rng::stream(cell, "trial", trial as u64);
                let mut z_true = rng::normal_vec(&mut rng, k);
                clamp_to_ball(&mut z_true, gen.radius());
                let x_true = gen.generate(&z_true)?;
                let model = MeasurementModel::gaussian(m, x_true, cfg.noise_std, &mut rng);
                let csgm_seed = rng::derive_seed(cell, "csgm", trial as u64);
                let res = csgm_recover(&model, gen, &cfg.csgm, csgm_seed)?;
                Ok(res.recovery_error.unwrap_or(f64::NAN))
            })
            .collect::<Result<_, DownstreamError>>()?;
        rows.push(SweepRow {
            m,
            mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
            trials: cfg.trials,
        });
    }
    Ok(SweepTable { n, k, rows })
}

pub fn write_sweep_csv<W: Write>(w: &mut W, table: &SweepTable, meta: &ReportMeta) -> io::Result<()> {
    writeln!(w, "{},n={},k={}", meta.header_line(), table.n, table.k)?;
    writeln!(w, "m,mean_rel_error,trials")?;
    for r in &table.rows {
        writeln!(w, "{},{},{}", r.m, fmt_f64(r.mean_error), r.trials)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::LinearRig;
    use crate::rng::{normal_vec, seeded};

    fn rig(n: usize, k: usize, seed: u64) -> LinearRig {
        LinearRig::new(DMatrix::from_vec(n, k, normal_vec(&mut seeded(seed), n * k)), 100.0)
    }

    #[test]
    fn noiseless_linear_recovery_matches_least_squares() {
        let g = rig(32, 4, 1);
        let x_true = g.generate(&[0.5, -1.0, 0.3, 0.8]).unwrap();
        let model = MeasurementModel::gaussian(16, x_true.clone(), 0.0, &mut seeded(2));
        let res = csgm_recover(&model, &g, &CsgmConfig::default(), 3).unwrap();
        assert!(res.recovery_error.unwrap() < 1e-2, "{:?}", res.recovery_error);
        // Least-squares oracle over the latent.
        let ab = &model.a * g.matrix();
        let z_ls = ab.svd(true, true).solve(&DVector::from_vec(model.y.clone()), 1e-12).unwrap();
        let x_ls = g.generate(z_ls.as_slice()).unwrap();
        for (a, b) in res.x.iter().zip(&x_ls) {
            assert!((a - b).abs() < 1e-3 * norm(&x_true));
        }
    }

    #[test]
    fn empty_measurements_leave_start_unchanged() {
        let g = rig(8, 3, 4);
        let model = MeasurementModel::gaussian(0, vec![1.0; 8], 0.0, &mut seeded(5));
        let cfg = CsgmConfig { restarts: 1, ..CsgmConfig::default() };
        let res = csgm_recover(&model, &g, &cfg, 6).unwrap();
        let mut z0 = normal_vec(&mut rng::stream(6, "csgm-restart", 0), 3);
        clamp_to_ball(&mut z0, 100.0);
        assert_eq!(res.z, z0);
        assert_eq!(res.x, g.generate(&z0).unwrap());
    }

    #[test]
    fn fully_observed_identity_sensing() {
        let g = rig(6, 3, 7);
        let x_true = g.generate(&[1.0, 0.0, -2.0]).unwrap();
        let model = MeasurementModel::observe(DMatrix::identity(6, 6), x_true, &[0.0; 6], 0.0);
        let res = csgm_recover(&model, &g, &CsgmConfig::default(), 8).unwrap();
        assert!(res.residual < 1e-3);
    }

    #[test]
    fn exact_line_search_is_monotone() {
        let g = rig(20, 5, 9);
        let x_true = g.generate(&[0.1, 0.2, -0.3, 0.4, 0.0]).unwrap();
        let model = MeasurementModel::gaussian(12, x_true, 0.01, &mut seeded(10));
        let cfg = CsgmConfig { steps: 200, restarts: 1, ..CsgmConfig::default() };
        let res = csgm_recover(&model, &g, &cfg, 11).unwrap();
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.objective_trace.len() > 2);
    }

    #[test]
    fn backtracking_also_recovers() {
        let g = rig(32, 4, 12);
        let x_true = g.generate(&[0.5, 0.5, 0.5, -0.5]).unwrap();
        let model = MeasurementModel::gaussian(24, x_true, 0.0, &mut seeded(13));
        let cfg = CsgmConfig {
            steps: 3000,
            line_search: LineSearch::Backtracking,
            ..CsgmConfig::default()
        };
        let res = csgm_recover(&model, &g, &cfg, 14).unwrap();
        assert!(res.recovery_error.unwrap() < 1e-2, "{:?}", res.recovery_error);
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sweep_trend_and_determinism() {
        let g = rig(32, 4, 15);
        let cfg = SweepConfig { trials: 3, ..SweepConfig::default() };
        let t = sample_complexity_sweep(&g, &[4, 32, 40], &cfg, 16).unwrap();
        assert!(t.rows[1].mean_error < t.rows[0].mean_error);
        assert!(t.rows[2].mean_error < 1e-2);
        let one = SweepConfig { trials: 1, ..cfg };
        assert_eq!(
            sample_complexity_sweep(&g, &[4, 8], &one, 17).unwrap(),
            sample_complexity_sweep(&g, &[4, 8], &one, 17).unwrap()
        );
        assert!(sample_complexity_sweep(&g, &[8, 4], &cfg, 0).is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let t = SweepTable {
            n: 3,
            k: 1,
            rows: vec![SweepRow { m: 2, mean_error: 0.5, trials: 4 }],
        };
        let mut buf = Vec::new();
        let meta = ReportMeta { seed: 9, config_hash: "abc".into() };
        write_sweep_csv(&mut buf, &t, &meta).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# seed=9,config_hash=abc,n=3,k=1\nm,mean_rel_error,trials\n2,5.0000000000000000e-1,4\n"
        );
    }
}
