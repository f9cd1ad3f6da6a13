use rand::Rng;

use super::{NnError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::rng::normal_vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    #[default]
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    /// Derivative at pre-activation `x` with output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "silu" => Some(Activation::Silu),
            _ => None,
        }
    }
}

/// Sinusoidal embedding of `t ∈ [0, 1]`, scaled by 1000 before use.
///
/// Pairs are `[sin(1000·t·ω_k), cos(1000·t·ω_k)]` with
/// `ω_k = 10000^{−2(k−1)/dim}` for `k = 1..dim/2`.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Tensor, NnError> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(NnError::OddDim(dim));
    }
    let mut out = Vec::with_capacity(dim);
    push_embedding(&mut out, t, dim);
    Ok(Tensor::row_vector(out))
}

fn push_embedding(out: &mut Vec<f64>, t: f64, dim: usize) {
    let scaled = 1000.0 * t;
    for k in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let (s, c) = (scaled * omega).sin_cos();
        out.push(s);
        out.push(c);
    }
}

/// One embedding row per time.
pub fn embed_times(ts: &[f64], dim: usize) -> Result<Tensor, NnError> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(NnError::OddDim(dim));
    }
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        push_embedding(&mut data, t, dim);
    }
    Tensor::matrix(ts.len(), dim, data)
}

/// Fully connected stack with the time embedding concatenated to every layer's
/// input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
    /// Apply the activation after the last layer as well.
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, time_embed_dim: usize) -> Self {
        Self {
            layer_widths,
            activation,
            time_embed_dim,
            activate_output: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_widths.len() < 2 {
            return Err(NnError::InvalidSpec(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(NnError::InvalidSpec("layer widths must be positive".into()));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(NnError::OddDim(self.time_embed_dim));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }
}

/// A single affine map on `[h, emb(t)]` followed by an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl Layer {
    /// Registers `name.w` (`out × (in + embed)`) and `name.b` with
    /// `N(0, 1/fan_in)` weights and zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_width: usize,
        out_width: usize,
        time_embed_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_width + time_embed_dim;
        let scale = (1.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = normal_vec(rng, out_width * fan_in)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let weight = store.add(
            format!("{name}.w"),
            Tensor::matrix(out_width, fan_in, w).expect("sized above"),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_width]));
        Self {
            weight,
            bias,
            in_width,
            out_width,
            activation,
        }
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Records this layer on `tape`; `emb` is the per-row time embedding.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        emb: NodeId,
    ) -> Result<NodeId, NnError> {
        let width = tape.value(h).cols();
        if width != self.in_width {
            return Err(NnError::ShapeMismatch {
                expected: vec![tape.value(h).rows(), self.in_width],
                got: tape.value(h).shape().to_vec(),
            });
        }
        let joined = tape.concat(h, emb)?;
        let pre = tape.affine(store, joined, self.weight, self.bias)?;
        tape.activation(pre, self.activation)
    }
}

/// Runs `layers` in sequence on `h`.
pub fn apply_layers(
    layers: &[Layer],
    tape: &mut Tape,
    store: &ParamStore,
    mut h: NodeId,
    emb: NodeId,
) -> Result<NodeId, NnError> {
    for layer in layers {
        h = layer.apply(tape, store, h, emb)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        spec.validate()?;
        let n = spec.layer_widths.len() - 1;
        let layers = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 < n || spec.activate_output {
                    spec.activation
                } else {
                    Activation::Identity
                };
                Layer::new(
                    store,
                    &format!("{prefix}.{i}"),
                    w[0],
                    w[1],
                    spec.time_embed_dim,
                    act,
                    rng,
                )
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Evaluates the network on every row of `x` at a common time `t`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, t: f64) -> Result<(Tensor, Tape), NnError> {
        let ts = vec![t; x.rows()];
        self.forward_batch(store, x, &ts)
    }

    /// Evaluates row `i` of `x` at time `ts[i]`.
    pub fn forward_batch(
        &self,
        store: &ParamStore,
        x: &Tensor,
        ts: &[f64],
    ) -> Result<(Tensor, Tape), NnError> {
        if x.cols() != self.spec.input_width() {
            return Err(NnError::ShapeMismatch {
                expected: vec![x.rows(), self.spec.input_width()],
                got: x.shape().to_vec(),
            });
        }
        if ts.len() != x.rows() {
            return Err(NnError::ShapeMismatch {
                expected: vec![x.rows()],
                got: vec![ts.len()],
            });
        }
        let mut tape = Tape::new();
        let h = tape.input(x.clone());
        let emb = tape.constant(embed_times(ts, self.spec.time_embed_dim)?);
        let out = apply_layers(&self.layers, &mut tape, store, h, emb)?;
        tape.set_output(out);
        Ok((tape.value(out).clone(), tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::backward;
    use crate::rng::seeded;

    #[test]
    fn embedding_at_zero() {
        let e = sinusoidal_embed(0.0, 4).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn embedding_rejects_odd_dim() {
        assert!(matches!(sinusoidal_embed(0.5, 3), Err(NnError::OddDim(3))));
        assert!(matches!(sinusoidal_embed(0.5, 0), Err(NnError::OddDim(0))));
    }

    #[test]
    fn embedding_quarter_turn() {
        let e = sinusoidal_embed(std::f64::consts::PI / 2000.0, 2).unwrap();
        assert!((e.data()[0] - 1.0).abs() < 1e-15);
        assert!(e.data()[1].abs() < 1e-15);
    }

    #[test]
    fn embedding_bounded() {
        for k in 0..200 {
            let e = sinusoidal_embed(k as f64 / 199.0, 16).unwrap();
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    fn set(store: &mut ParamStore, id: ParamId, data: Vec<f64>) {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::new(shape, data).unwrap()).unwrap();
    }

    #[test]
    fn identity_network() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![2, 2], Activation::Silu, 2);
        let mlp = Mlp::new(spec, &mut store, "f", &mut seeded(0)).unwrap();
        let l = mlp.layers[0];
        set(&mut store, l.weight, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        set(&mut store, l.bias, vec![0.0, 0.0]);
        let x = Tensor::row_vector(vec![1.0, 2.0]);
        let (y, _) = mlp.forward(&store, &x, 0.4).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn wrong_width_is_shape_mismatch() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(vec![3, 4, 1], Activation::Tanh, 2), &mut store, "f", &mut seeded(1)).unwrap();
        let err = mlp.forward(&store, &Tensor::row_vector(vec![1.0, 2.0]), 0.1).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }

    #[test]
    fn zero_weights_give_the_output_bias() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(vec![2, 5, 3], Activation::Relu, 4), &mut store, "f", &mut seeded(2)).unwrap();
        for l in &mlp.layers {
            store.value_mut(l.weight).fill(0.0);
        }
        set(&mut store, mlp.layers[1].bias, vec![0.5, -1.0, 2.0]);
        for x in [[0.0, 0.0], [3.0, -7.0]] {
            let (y, _) = mlp.forward(&store, &Tensor::row_vector(x.to_vec()), 0.9).unwrap();
            assert_eq!(y.data(), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn scalar_linear_gradient() {
        // One layer f(w) = w·x with the embedding columns and bias zeroed.
        let mut store = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(vec![1, 1], Activation::Silu, 2), &mut store, "f", &mut seeded(3)).unwrap();
        let l = mlp.layers[0];
        set(&mut store, l.weight, vec![0.7, 0.0, 0.0]);
        let (_, tape) = mlp.forward(&store, &Tensor::row_vector(vec![3.0]), 0.0).unwrap();
        backward(&tape, &mut store, &Tensor::row_vector(vec![1.0])).unwrap();
        assert_eq!(store.grad(l.weight).data()[0], 3.0);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        // tanh(w·1) at w = 0.
        let mut store = ParamStore::new();
        let mut spec = MlpSpec::new(vec![1, 1], Activation::Tanh, 2);
        spec.activate_output = true;
        let mlp = Mlp::new(spec, &mut store, "f", &mut seeded(4)).unwrap();
        let l = mlp.layers[0];
        set(&mut store, l.weight, vec![0.0, 0.0, 0.0]);
        let (_, tape) = mlp.forward(&store, &Tensor::row_vector(vec![1.0]), 0.0).unwrap();
        backward(&tape, &mut store, &Tensor::row_vector(vec![1.0])).unwrap();
        assert_eq!(store.grad(l.weight).data()[0], 1.0);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(vec![2, 3, 2], Activation::Silu, 2), &mut store, "f", &mut seeded(5)).unwrap();
        let x = Tensor::row_vector(vec![0.3, -0.2]);
        let (_, tape) = mlp.forward(&store, &x, 0.2).unwrap();
        let g = Tensor::row_vector(vec![1.0, -2.0]);
        backward(&tape, &mut store, &g).unwrap();
        let once = store.grads();
        backward(&tape, &mut store, &g).unwrap();
        for (a, b) in once.iter().zip(store.grads()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn stale_tape_is_refused() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(MlpSpec::new(vec![2, 2], Activation::Silu, 2), &mut store, "f", &mut seeded(6)).unwrap();
        let (_, tape) = mlp.forward(&store, &Tensor::row_vector(vec![1.0, 1.0]), 0.5).unwrap();
        store.value_mut(mlp.layers[0].bias).fill(1.0);
        let err = backward(&tape, &mut store, &Tensor::row_vector(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, NnError::StaleTape(name) if name == "f.0.b"));
    }
}
