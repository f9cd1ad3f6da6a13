use std::io::{self, Write};

use super::{check_len, clamp_to_ball, norm, DownstreamError, Generator, ReportMeta};
use crate::io::fmt_f64;
use crate::rng;

/// Nearest-sample distances for each test point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub base: Vec<f64>,
    pub sum: Vec<f64>,
    /// Fraction of test points strictly closer under the sum; `None` for an
    /// empty test set.
    pub coverage: Option<f64>,
}

fn draw(gen: &dyn Generator, seed: u64, label: &str, i: usize) -> Result<Vec<f64>, DownstreamError> {
    let mut z = rng::normal_vec(&mut rng::stream(seed, label, i as u64), gen.latent_dim());
    clamp_to_ball(&mut z, gen.radius());
    gen.generate(&z)
}

fn nearest(point: &[f64], samples: &[Vec<f64>]) -> f64 {
    samples
        .iter()
        .map(|s| norm(&s.iter().zip(point).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(f64::INFINITY, f64::min)
}

/// Compares how close samples of `base` alone and of the Minkowski sum
/// `base ⊕ inter` come to each test point.
///
/// Sample `i` of the sum is `base(z₁ᵢ) + inter(z₂ᵢ)`, reusing the base draw
/// `z₁ᵢ`, so an `inter` that maps everything to zero reproduces the base
/// distances exactly.
pub fn range_expansion_probe(
    base: &dyn Generator,
    inter: &dyn Generator,
    test_set: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<CoverageReport, DownstreamError> {
    check_len(base.output_dim(), inter.output_dim())?;
    for p in test_set {
        check_len(base.output_dim(), p.len())?;
    }
    if test_set.is_empty() {
        return Ok(CoverageReport {
            base: Vec::new(),
            sum: Vec::new(),
            coverage: None,
        });
    }
    let mut base_samples = Vec::with_capacity(n_samples);
    let mut sum_samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let b = draw(base, seed, "probe-base", i)?;
        let e = draw(inter, seed, "probe-inter", i)?;
        sum_samples.push(b.iter().zip(&e).map(|(x, y)| x + y).collect());
        base_samples.push(b);
    }
    let base_d: Vec<f64> = test_set.iter().map(|p| nearest(p, &base_samples)).collect();
    let sum_d: Vec<f64> = test_set.iter().map(|p| nearest(p, &sum_samples)).collect();
    let improved = base_d.iter().zip(&sum_d).filter(|(b, s)| s < b).count();
    Ok(CoverageReport {
        coverage: Some(improved as f64 / test_set.len() as f64),
        base: base_d,
        sum: sum_d,
    })
}

pub fn write_coverage_csv<W: Write>(w: &mut W, report: &CoverageReport, meta: &ReportMeta) -> io::Result<()> {
    let cov = report.coverage.map_or_else(|| "none".to_string(), fmt_f64);
    writeln!(w, "{},coverage={cov}", meta.header_line())?;
    writeln!(w, "point,d_base,d_sum,improved")?;
    for (i, (b, s)) in report.base.iter().zip(&report.sum).enumerate() {
        writeln!(w, "{i},{},{},{}", fmt_f64(*b), fmt_f64(*s), u8::from(s < b))?;
    }
    Ok(())
}

/// Sampled lower bound on the Lipschitz constant of a generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub l_lower: f64,
    pub pairs: usize,
}

/// `max ‖G(z₁) − G(z₂)‖ / ‖z₁ − z₂‖` over seeded latent pairs in the ball.
pub fn lipschitz_estimate(
    gen: &dyn Generator,
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate, DownstreamError> {
    if n_pairs == 0 {
        return Err(DownstreamError::InvalidConfig("n_pairs must be at least 1".into()));
    }
    let k = gen.latent_dim();
    let mut best: f64 = 0.0;
    for i in 0..n_pairs {
        let mut rng = rng::stream(seed, "lipschitz", i as u64);
        let mut z1 = rng::normal_vec(&mut rng, k);
        let mut z2 = rng::normal_vec(&mut rng, k);
        clamp_to_ball(&mut z1, gen.radius());
        clamp_to_ball(&mut z2, gen.radius());
        let dz = norm(&z1.iter().zip(&z2).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dz == 0.0 {
            continue;
        }
        let (g1, g2) = (gen.generate(&z1)?, gen.generate(&z2)?);
        let dg = norm(&g1.iter().zip(&g2).map(|(a, b)| a - b).collect::<Vec<_>>());
        best = best.max(dg / dz);
    }
    Ok(LipschitzEstimate {
        l_lower: best,
        pairs: n_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::LinearRig;
    use crate::rng::{normal_vec, seeded};
    use nalgebra::DMatrix;

    fn segment(dir: [f64; 2], r: f64) -> LinearRig {
        LinearRig::new(DMatrix::from_column_slice(2, 1, &dir), r)
    }

    #[test]
    fn zero_inter_reproduces_base() {
        let base = segment([1.0, 0.0], 1.0);
        let zero = LinearRig::new(DMatrix::zeros(2, 3), 1.0);
        let pts = vec![vec![0.2, 0.7], vec![-2.0, 0.1]];
        let rep = range_expansion_probe(&base, &zero, &pts, 200, 1).unwrap();
        assert_eq!(rep.base, rep.sum);
        assert_eq!(rep.coverage, Some(0.0));
    }

    #[test]
    fn orthogonal_segment_shrinks_off_line_distance() {
        let base = segment([1.0, 0.0], 1.0);
        let inter = segment([0.0, 1.0], 1.0);
        let p = vec![vec![0.3, 0.6]];
        let rep = range_expansion_probe(&base, &inter, &p, 2000, 2).unwrap();
        // Every base sample lies on the x-axis, so no base distance beats 0.6.
        assert!(rep.base[0] >= 0.6);
        assert!(rep.sum[0] < rep.base[0]);
        assert_eq!(rep.coverage, Some(1.0));
    }

    #[test]
    fn empty_test_set() {
        let g = segment([1.0, 0.0], 1.0);
        let rep = range_expansion_probe(&g, &g, &[], 10, 3).unwrap();
        assert!(rep.base.is_empty() && rep.coverage.is_none());
    }

    #[test]
    fn lipschitz_linear_rigs() {
        let b = DMatrix::from_vec(4, 4, normal_vec(&mut seeded(4), 16));
        let sigma = b.singular_values().max();
        let est = lipschitz_estimate(&LinearRig::new(b, 10.0), 10_000, 5).unwrap();
        assert!(est.l_lower <= sigma * (1.0 + 1e-12));
        assert!(est.l_lower > 0.9 * sigma);

        let doubled = LinearRig::new(DMatrix::identity(3, 3) * 2.0, 10.0);
        assert!((lipschitz_estimate(&doubled, 50, 6).unwrap().l_lower - 2.0).abs() < 1e-9);

        let constant = LinearRig::new(DMatrix::zeros(2, 2), 10.0).with_offset(vec![1.0, -3.0]).unwrap();
        assert_eq!(lipschitz_estimate(&constant, 50, 7).unwrap().l_lower, 0.0);
    }

    #[test]
    fn coverage_csv() {
        let rep = CoverageReport {
            base: vec![1.0],
            sum: vec![0.5],
            coverage: Some(1.0),
        };
        let mut buf = Vec::new();
        write_coverage_csv(&mut buf, &rep, &ReportMeta { seed: 1, config_hash: "h".into() }).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed=1,config_hash=h,coverage=1.0"));
        assert!(text.ends_with("0,1.0000000000000000e0,5.0000000000000000e-1,1\n"));
    }
}
