//! Toy data distributions with analytic scores.

use rand::Rng;

use crate::nn::Tensor;
use crate::rng::normal_vec;

/// Isotropic Gaussian mixture with equal component scales.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub std: f64,
}

impl GaussianMixture {
    pub fn single(mean: Vec<f64>, std: f64) -> Self {
        Self {
            centers: vec![mean],
            weights: vec![1.0],
            std,
        }
    }

    /// Equal-weight modes at `±center`.
    pub fn symmetric_pair(center: Vec<f64>, std: f64) -> Self {
        let neg = center.iter().map(|v| -v).collect();
        Self {
            centers: vec![center, neg],
            weights: vec![0.5, 0.5],
            std,
        }
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.dim();
        let total: f64 = self.weights.iter().sum();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut k = self.centers.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let z = normal_vec(rng, d);
            data.extend(self.centers[k].iter().zip(z).map(|(c, z)| c + self.std * z));
        }
        Tensor::matrix(n, d, data).expect("sized above")
    }

    /// The mixture pushed through `x ↦ c·x + s·z`: centers scale by `c`,
    /// variance becomes `c²σ² + s²`.
    pub fn diffused(&self, mean_coef: f64, noise_std: f64) -> Self {
        Self {
            centers: self
                .centers
                .iter()
                .map(|c| c.iter().map(|v| v * mean_coef).collect())
                .collect(),
            weights: self.weights.clone(),
            std: (mean_coef * mean_coef * self.std * self.std + noise_std * noise_std).sqrt(),
        }
    }

    /// `∇ log p(x)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let var = self.std * self.std;
        let total: f64 = self.weights.iter().sum();
        let logs: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                (w / total).ln() - 0.5 * d2 / var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let norm: f64 = resp.iter().sum();
        let mut out = vec![0.0; x.len()];
        for (c, r) in self.centers.iter().zip(&resp) {
            for ((o, xi), ci) in out.iter_mut().zip(x).zip(c) {
                *o += r / norm * (ci - xi) / var;
            }
        }
        out
    }
}
