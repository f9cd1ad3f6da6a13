use super::DownstreamError;
use crate::score::ScoreNet;

/// Cosine similarity and Euclidean distance of two flattened vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatComparison {
    pub cosine: f64,
    pub distance: f64,
    /// Zeros appended to the shorter vector.
    pub padding: usize,
}

/// Compares `a` and `b`, zero-padding the shorter one.
pub fn compare_flat(a: &[f64], b: &[f64]) -> Result<FlatComparison, DownstreamError> {
    let len = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let (mut ab, mut aa, mut bb, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..len {
        let (x, y) = (at(a, i), at(b, i));
        ab += x * y;
        aa += x * x;
        bb += y * y;
        dd += (x - y) * (x - y);
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(DownstreamError::ZeroVector("flattened weights are all zero".into()));
    }
    Ok(FlatComparison {
        cosine: (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0),
        distance: dd.sqrt(),
        padding: a.len().abs_diff(b.len()),
    })
}

/// Outer-versus-intermediate weight comparison: the first encoder layer
/// against `E_τ` and the last decoder layer against `D_τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDivergence {
    pub cos_e: f64,
    pub cos_d: f64,
    pub eucl_e: f64,
    pub eucl_d: f64,
    pub pad_e: usize,
    pub pad_d: usize,
}

pub fn weight_divergence(net: &ScoreNet) -> Result<WeightDivergence, DownstreamError> {
    let w = |id| net.params.value(id).data();
    let e = compare_flat(w(net.encoder()[0].weight), w(net.inter_encoder().weight))?;
    let last = net.decoder().last().expect("decoder has at least one layer");
    let d = compare_flat(w(last.weight), w(net.inter_decoder().weight))?;
    Ok(WeightDivergence {
        cos_e: e.cosine,
        cos_d: d.cosine,
        eucl_e: e.distance,
        eucl_d: d.distance,
        pad_e: e.padding,
        pad_d: d.padding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use crate::rng::{normal_vec, seeded};
    use crate::score::ScoreNetSpec;
    use proptest::prelude::*;

    #[test]
    fn exact_reference_values() {
        let w = normal_vec(&mut seeded(1), 37);
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let dbl: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let same = compare_flat(&w, &w).unwrap();
        assert_eq!((same.cosine, same.distance), (1.0, 0.0));
        assert_eq!(compare_flat(&w, &neg).unwrap().cosine, -1.0);
        let c = compare_flat(&w, &dbl).unwrap();
        assert_eq!(c.distance, n);
        assert!((c.cosine - 1.0).abs() < 1e-15);
    }

    #[test]
    fn padding_and_zero_vectors() {
        let c = compare_flat(&[1.0, 0.0, 0.0], &[1.0]).unwrap();
        assert_eq!((c.cosine, c.distance, c.padding), (1.0, 0.0, 2));
        assert!(matches!(compare_flat(&[0.0, 0.0], &[1.0]), Err(DownstreamError::ZeroVector(_))));
    }

    #[test]
    fn net_metrics() {
        let spec = ScoreNetSpec {
            hidden: 8,
            time_embed_dim: 4,
            ..ScoreNetSpec::default()
        };
        let mut net = ScoreNet::new(&spec, &mut seeded(2)).unwrap();
        let wd = weight_divergence(&net).unwrap();
        // E_τ starts at half the first encoder layer.
        assert!((wd.cos_e - 1.0).abs() < 1e-12 && (wd.cos_d - 1.0).abs() < 1e-12);
        assert_eq!((wd.pad_e, wd.pad_d), (0, 0));
        let id = net.inter_encoder().weight;
        let shape = net.params.value(id).shape().to_vec();
        net.params.set_value(id, Tensor::zeros(&shape)).unwrap();
        assert!(weight_divergence(&net).is_err());
    }

    proptest! {
        #[test]
        fn cosine_ignores_common_scale_distance_does_not(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in 0.1f64..10.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let sa: Vec<f64> = a.iter().map(|x| c * x).collect();
            let sb: Vec<f64> = b.iter().map(|x| c * x).collect();
            let p = compare_flat(&a, &b).unwrap();
            let q = compare_flat(&sa, &sb).unwrap();
            prop_assert!((p.cosine - q.cosine).abs() < 1e-12);
            prop_assert!((q.distance - c * p.distance).abs() < 1e-9 * (1.0 + q.distance));
        }
    }
}
