use nalgebra::{DMatrix, DVector};

use super::{check_len, norm, DownstreamError};
use crate::nn::{gradients, Tensor};
use crate::score::{Pathway, ScoreNet};

/// Latent ball radius used when an experiment does not set one.
pub const DEFAULT_RADIUS: f64 = 10.0;

/// A deterministic map from a latent ball `B₂ᵏ(r)` into output space.
pub trait Generator: Sync {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn radius(&self) -> f64;
    fn generate(&self, z: &[f64]) -> Result<Vec<f64>, DownstreamError>;
    /// `J(z)ᵀ·v`, the vector-Jacobian product at `z`.
    fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, DownstreamError>;
    /// Whether `G(z) = Bz + c` for some fixed `B`, `c`.
    fn is_affine(&self) -> bool {
        false
    }
    /// A closed-form starting latent for fitting `w`, when one exists.
    fn warm_start(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Rescales `z` onto the ball of radius `r` when it lies outside.
pub fn clamp_to_ball(z: &mut [f64], r: f64) {
    let n = norm(z);
    if n > r {
        let s = r / n;
        z.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone)]
enum Map {
    Identity(usize),
    Matrix(DMatrix<f64>),
}

/// Affine generator `G(z) = Bz + c` with an explicit matrix.
#[derive(Debug, Clone)]
pub struct LinearRig {
    map: Map,
    offset: Option<Vec<f64>>,
    radius: f64,
}

impl LinearRig {
    /// `G(z) = z` on `ℝⁿ`.
    pub fn identity(n: usize, radius: f64) -> Self {
        Self {
            map: Map::Identity(n),
            offset: None,
            radius,
        }
    }

    /// `G(z) = Bz` with `B` of shape output×latent.
    pub fn new(b: DMatrix<f64>, radius: f64) -> Self {
        Self {
            map: Map::Matrix(b),
            offset: None,
            radius,
        }
    }

    pub fn with_offset(mut self, c: Vec<f64>) -> Result<Self, DownstreamError> {
        check_len(self.output_dim(), c.len())?;
        self.offset = Some(c);
        Ok(self)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.map {
            Map::Identity(n) => DMatrix::identity(*n, *n),
            Map::Matrix(b) => b.clone(),
        }
    }
}

impl Generator for LinearRig {
    fn latent_dim(&self) -> usize {
        match &self.map {
            Map::Identity(n) => *n,
            Map::Matrix(b) => b.ncols(),
        }
    }

    fn output_dim(&self) -> usize {
        match &self.map {
            Map::Identity(n) => *n,
            Map::Matrix(b) => b.nrows(),
        }
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>, DownstreamError> {
        check_len(self.latent_dim(), z.len())?;
        let mut x = match &self.map {
            Map::Identity(_) => z.to_vec(),
            Map::Matrix(b) => (b * DVector::from_column_slice(z)).as_slice().to_vec(),
        };
        if let Some(c) = &self.offset {
            x.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        Ok(x)
    }

    fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, DownstreamError> {
        check_len(self.latent_dim(), z.len())?;
        check_len(self.output_dim(), v.len())?;
        Ok(match &self.map {
            Map::Identity(_) => v.to_vec(),
            Map::Matrix(b) => (b.transpose() * DVector::from_column_slice(v)).as_slice().to_vec(),
        })
    }

    fn is_affine(&self) -> bool {
        true
    }

    /// Least-squares latent, pulled back into the ball.
    fn warm_start(&self, w: &[f64]) -> Option<Vec<f64>> {
        if w.len() != self.output_dim() {
            return None;
        }
        let mut target = w.to_vec();
        if let Some(c) = &self.offset {
            target.iter_mut().zip(c).for_each(|(a, b)| *a -= b);
        }
        let mut z = match &self.map {
            Map::Identity(_) => target,
            Map::Matrix(b) => {
                let svd = b.clone().svd(true, true);
                let sol = svd.solve(&DVector::from_vec(target), 1e-12).ok()?;
                sol.as_slice().to_vec()
            }
        };
        clamp_to_ball(&mut z, self.radius);
        Some(z)
    }
}

/// A score network read as a generator at a fixed time.
///
/// `Final` maps data-dimension latents through `D∘S∘E`; `Intermediate` maps
/// tap-width latents through `D_τ∘s_τ`.
pub struct NetGenerator<'a> {
    pub net: &'a ScoreNet,
    pub pathway: Pathway,
    pub t: f64,
    pub radius: f64,
}

impl<'a> NetGenerator<'a> {
    pub fn new(net: &'a ScoreNet, pathway: Pathway, t: f64, radius: f64) -> Self {
        Self {
            net,
            pathway,
            t,
            radius,
        }
    }

    fn run(&self, z: &[f64]) -> Result<(Tensor, crate::nn::Tape), DownstreamError> {
        check_len(self.latent_dim(), z.len())?;
        let x = Tensor::row_vector(z.to_vec());
        let ts = [self.t];
        Ok(match self.pathway {
            Pathway::Final => self.net.forward(&x, &ts, Pathway::Final)?,
            Pathway::Intermediate => self.net.forward_intermediate_generator(&x, &ts)?,
        })
    }
}

impl Generator for NetGenerator<'_> {
    fn latent_dim(&self) -> usize {
        match self.pathway {
            Pathway::Final => self.net.data_dim(),
            Pathway::Intermediate => self.net.tap_width(),
        }
    }

    fn output_dim(&self) -> usize {
        self.net.data_dim()
    }

    fn radius(&self) -> f64 {
        self.radius
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>, DownstreamError> {
        Ok(self.run(z)?.0.into_data())
    }

    fn vjp(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, DownstreamError> {
        check_len(self.output_dim(), v.len())?;
        let (_, tape) = self.run(z)?;
        let grads = gradients(&tape, &self.net.params, &Tensor::row_vector(v.to_vec()))?;
        Ok(grads
            .inputs
            .into_iter()
            .next()
            .map_or_else(|| vec![0.0; z.len()], |(_, g)| g.into_data()))
    }
}
