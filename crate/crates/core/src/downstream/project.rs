use nalgebra::DMatrix;

use super::{check_len, clamp_to_ball, dot, norm, DownstreamError, Generator};
use crate::nn::{Adam, AdamConfig, ParamStore, Tensor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    /// `‖G(z) − w‖₂` at the returned latent.
    pub residual: f64,
}

/// Fits `G(z) ≈ w` over the latent ball with Adam, clamping after every
/// step, and returns the best iterate seen (the start included).
///
/// The start is the generator's closed-form warm start when it has one and
/// a seeded Gaussian latent otherwise.
pub fn project_to_range(
    gen: &dyn Generator,
    w: &[f64],
    cfg: &ProjectConfig,
    seed: u64,
) -> Result<Projection, DownstreamError> {
    check_len(gen.output_dim(), w.len())?;
    let k = gen.latent_dim();
    let z0 = gen.warm_start(w).unwrap_or_else(|| {
        let mut z = rng::normal_vec(&mut rng::stream(seed, "project-init", 0), k);
        clamp_to_ball(&mut z, gen.radius());
        z
    });
    let mut store = ParamStore::new();
    let id = store.add("z", Tensor::row_vector(z0));
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut best: Option<Projection> = None;
    for step in 0..=cfg.steps {
        let z = store.value(id).data().to_vec();
        let x = gen.generate(&z)?;
        let r: Vec<f64> = x.iter().zip(w).map(|(a, b)| a - b).collect();
        let residual = norm(&r);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(Projection {
                z: z.clone(),
                x,
                residual,
            });
        }
        if step == cfg.steps || residual == 0.0 {
            break;
        }
        let g: Vec<f64> = gen.vjp(&z, &r)?.into_iter().map(|v| 2.0 * v).collect();
        store.grad_mut(id).data_mut().copy_from_slice(&g);
        adam.step(&mut store);
        clamp_to_ball(store.value_mut(id).data_mut(), gen.radius());
    }
    Ok(best.expect("at least one iterate"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PPowerConfig {
    pub iters: usize,
    pub project: ProjectConfig,
}

impl Default for PPowerConfig {
    fn default() -> Self {
        Self {
            iters: 50,
            project: ProjectConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPowerResult {
    pub vector: Vec<f64>,
    /// `v̂ᵀVv̂` of the returned vector.
    pub rayleigh: f64,
    /// Which generator supplied the final iterate.
    pub chosen: usize,
}

fn matvec(v: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (0..v.nrows())
        .map(|i| (0..v.ncols()).map(|j| v[(i, j)] * w[j]).sum())
        .collect()
}

fn normalized(u: &[f64], what: &str) -> Result<Vec<f64>, DownstreamError> {
    let n = norm(u);
    if n == 0.0 || !n.is_finite() {
        return Err(DownstreamError::ZeroVector(what.into()));
    }
    Ok(u.iter().map(|x| x / n).collect())
}

/// Projected power method: `w ← normalize(P(V·w))`, where `P` projects onto
/// a generator's range.
///
/// With several generators each projection is normalized separately and the
/// one with the largest Rayleigh quotient is kept, which reads the range of
/// the union as the better of the individual ranges at each iterate.
pub fn ppower(
    v: &DMatrix<f64>,
    gens: &[&dyn Generator],
    cfg: &PPowerConfig,
    seed: u64,
) -> Result<PPowerResult, DownstreamError> {
    let n = v.nrows();
    if v.ncols() != n {
        return Err(DownstreamError::InvalidConfig("V must be square".into()));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if (0..n).any(|i| (0..i).any(|j| (v[(i, j)] - v[(j, i)]).abs() > 1e-12 * scale.max(1.0))) {
        return Err(DownstreamError::InvalidConfig("V must be symmetric".into()));
    }
    if cfg.iters == 0 {
        return Err(DownstreamError::InvalidConfig("iters must be at least 1".into()));
    }
    if gens.is_empty() {
        return Err(DownstreamError::InvalidConfig("no generator given".into()));
    }
    for g in gens {
        check_len(n, g.output_dim())?;
    }
    let start = rng::normal_vec(&mut rng::stream(seed, "ppower-init", 0), n);
    let mut w = normalized(&start, "initial vector")?;
    let mut chosen = 0;
    for it in 0..cfg.iters {
        let u = matvec(v, &w);
        if norm(&u) == 0.0 {
            return Err(DownstreamError::ZeroVector(format!("V·w at iteration {it}")));
        }
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for (gi, g) in gens.iter().enumerate() {
            let seed_it = rng::derive_seed(seed, "ppower-project", (it * gens.len() + gi) as u64);
            let p = project_to_range(*g, &u, &cfg.project, seed_it)?;
            let Ok(cand) = normalized(&p.x, "projection") else {
                continue;
            };
            let rq = dot(&cand, &matvec(v, &cand));
            if best.as_ref().is_none_or(|(b, _, _)| rq > *b) {
                best = Some((rq, cand, gi));
            }
        }
        let (_, next, gi) =
            best.ok_or_else(|| DownstreamError::ZeroVector(format!("every projection at iteration {it}")))?;
        w = next;
        chosen = gi;
    }
    let rayleigh = dot(&w, &matvec(v, &w));
    Ok(PPowerResult {
        vector: w,
        rayleigh,
        chosen,
    })
}
