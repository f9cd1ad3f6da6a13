use rand::Rng;

use super::ScoreError;
use crate::nn::{apply_layers, embed_times, Activation, Layer, NnError, NodeId, ParamId, ParamStore, Tape, Tensor};

/// Which composition evaluates the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pathway {
    /// `D ∘ S ∘ E`.
    #[default]
    Final,
    /// `D_τ ∘ s_τ ∘ E_τ`, where `s_τ` is the core from the tap layer on.
    Intermediate,
}

impl Pathway {
    pub fn name(self) -> &'static str {
        match self {
            Pathway::Final => "final",
            Pathway::Intermediate => "intermediate",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "final" => Some(Pathway::Final),
            "intermediate" => Some(Pathway::Intermediate),
            _ => None,
        }
    }
}

/// Shape of a [`ScoreNet`]. Encoder, core and decoder all use `hidden` units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetSpec {
    pub data_dim: usize,
    pub hidden: usize,
    pub encoder_depth: usize,
    pub core_depth: usize,
    pub decoder_depth: usize,
    pub time_embed_dim: usize,
    pub activation: Activation,
    /// Core layer where the intermediate pathway enters; `core_depth / 2`
    /// when unset.
    pub tap_layer: Option<usize>,
}

impl Default for ScoreNetSpec {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden: 64,
            encoder_depth: 1,
            core_depth: 2,
            decoder_depth: 1,
            time_embed_dim: 16,
            activation: Activation::Silu,
            tap_layer: None,
        }
    }
}

impl ScoreNetSpec {
    pub fn resolved_tap(&self) -> usize {
        self.tap_layer.unwrap_or(self.core_depth / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub params: ParamStore,
    encoder: Vec<Layer>,
    core: Vec<Layer>,
    decoder: Vec<Layer>,
    inter_encoder: Layer,
    inter_decoder: Layer,
    tap_layer: usize,
    data_dim: usize,
    time_embed_dim: usize,
}

fn invalid(msg: impl Into<String>) -> ScoreError {
    ScoreError::Nn(NnError::InvalidSpec(msg.into()))
}

impl ScoreNet {
    pub fn new<R: Rng + ?Sized>(spec: &ScoreNetSpec, rng: &mut R) -> Result<Self, ScoreError> {
        if spec.encoder_depth == 0 || spec.core_depth == 0 || spec.decoder_depth == 0 {
            return Err(invalid("encoder, core and decoder need at least one layer"));
        }
        if spec.data_dim == 0 || spec.hidden == 0 {
            return Err(invalid("widths must be positive"));
        }
        if spec.time_embed_dim < 2 || !spec.time_embed_dim.is_multiple_of(2) {
            return Err(NnError::OddDim(spec.time_embed_dim).into());
        }
        let (d, h, e, act) = (spec.data_dim, spec.hidden, spec.time_embed_dim, spec.activation);
        let mut store = ParamStore::new();
        let encoder = (0..spec.encoder_depth)
            .map(|i| Layer::new(&mut store, &format!("enc.{i}"), if i == 0 { d } else { h }, h, e, act, rng))
            .collect();
        let core = (0..spec.core_depth)
            .map(|i| Layer::new(&mut store, &format!("core.{i}"), h, h, e, act, rng))
            .collect();
        let decoder: Vec<Layer> = (0..spec.decoder_depth)
            .map(|i| {
                let last = i + 1 == spec.decoder_depth;
                let out = if last { d } else { h };
                let a = if last { Activation::Identity } else { act };
                Layer::new(&mut store, &format!("dec.{i}"), h, out, e, a, rng)
            })
            .collect();
        let inter_encoder = Layer::new(&mut store, "inter_enc", d, h, e, act, rng);
        let inter_decoder = Layer::new(&mut store, "inter_dec", h, d, e, Activation::Identity, rng);
        let mut net = Self::from_parts(
            store,
            encoder,
            core,
            decoder,
            inter_encoder,
            inter_decoder,
            spec.resolved_tap(),
            e,
        )?;
        net.init_intermediate_from_outer();
        Ok(net)
    }

    /// Assembles a network from layers already registered in `params`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        params: ParamStore,
        encoder: Vec<Layer>,
        core: Vec<Layer>,
        decoder: Vec<Layer>,
        inter_encoder: Layer,
        inter_decoder: Layer,
        tap_layer: usize,
        time_embed_dim: usize,
    ) -> Result<Self, ScoreError> {
        let (Some(first), Some(last)) = (encoder.first(), decoder.last()) else {
            return Err(invalid("encoder and decoder must be non-empty"));
        };
        if core.is_empty() {
            return Err(invalid("core must be non-empty"));
        }
        if tap_layer >= core.len() {
            return Err(invalid(format!(
                "tap layer {tap_layer} outside core of depth {}",
                core.len()
            )));
        }
        let data_dim = first.in_width;
        let chain = encoder.iter().chain(&core).chain(&decoder).collect::<Vec<_>>();
        for pair in chain.windows(2) {
            if pair[0].out_width != pair[1].in_width {
                return Err(invalid("consecutive layer widths disagree"));
            }
        }
        if last.out_width != data_dim {
            return Err(invalid("decoder must return to the data dimension"));
        }
        if inter_encoder.in_width != data_dim || inter_encoder.out_width != core[tap_layer].in_width {
            return Err(invalid("intermediate encoder must map data to the tap layer's input"));
        }
        let tail_out = core.last().expect("non-empty").out_width;
        if inter_decoder.in_width != tail_out || inter_decoder.out_width != data_dim {
            return Err(invalid("intermediate decoder must map the core output back to data"));
        }
        for l in chain.iter().copied().chain([&inter_encoder, &inter_decoder]) {
            let w = params.value(l.weight).shape();
            if w != [l.out_width, l.in_width + time_embed_dim] {
                return Err(invalid(format!("weight `{}` has shape {w:?}", params.get(l.weight).name)));
            }
        }
        Ok(Self {
            params,
            encoder,
            core,
            decoder,
            inter_encoder,
            inter_decoder,
            tap_layer,
            data_dim,
            time_embed_dim,
        })
    }

    /// Sets `E_τ`/`D_τ` to half of the first encoder / last decoder layer when
    /// their shapes agree.
    fn init_intermediate_from_outer(&mut self) {
        let pairs = [
            (self.encoder[0], self.inter_encoder),
            (*self.decoder.last().expect("non-empty"), self.inter_decoder),
        ];
        for (outer, inner) in pairs {
            for (src, dst) in [(outer.weight, inner.weight), (outer.bias, inner.bias)] {
                if self.params.value(src).shape() == self.params.value(dst).shape() {
                    let mut v = self.params.value(src).clone();
                    v.scale(0.5);
                    *self.params.value_mut(dst) = v;
                }
            }
        }
    }

    /// The network `D_τ ∘ s_τ ∘ E_τ` as a stand-alone net whose final
    /// pathway is this net's intermediate pathway.
    pub fn intermediate_as_network(&self) -> Result<Self, ScoreError> {
        Self::from_parts(
            self.params.clone(),
            vec![self.inter_encoder],
            self.core[self.tap_layer..].to_vec(),
            vec![self.inter_decoder],
            self.inter_encoder,
            self.inter_decoder,
            0,
            self.time_embed_dim,
        )
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn tap_layer(&self) -> usize {
        self.tap_layer
    }

    /// Width of the intermediate latent fed to `s_τ`.
    pub fn tap_width(&self) -> usize {
        self.core[self.tap_layer].in_width
    }

    pub fn encoder(&self) -> &[Layer] {
        &self.encoder
    }

    pub fn core(&self) -> &[Layer] {
        &self.core
    }

    pub fn decoder(&self) -> &[Layer] {
        &self.decoder
    }

    pub fn inter_encoder(&self) -> Layer {
        self.inter_encoder
    }

    pub fn inter_decoder(&self) -> Layer {
        self.inter_decoder
    }

    fn ids(layers: &[Layer]) -> Vec<ParamId> {
        layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Parameters the regularizer may update: `E_τ`, `D_τ`, and the core from
    /// the tap layer on.
    pub fn restricted_params(&self) -> Vec<ParamId> {
        let mut ids = Self::ids(&[self.inter_encoder, self.inter_decoder]);
        ids.extend(Self::ids(&self.core[self.tap_layer..]));
        ids
    }

    /// Parameters of `E`, `S` and `D`.
    pub fn outer_params(&self) -> Vec<ParamId> {
        let mut ids = Self::ids(&self.encoder);
        ids.extend(Self::ids(&self.core));
        ids.extend(Self::ids(&self.decoder));
        ids
    }

    /// `E` and the core layers before the tap.
    pub fn pre_tap_params(&self) -> Vec<ParamId> {
        let mut ids = Self::ids(&self.encoder);
        ids.extend(Self::ids(&self.core[..self.tap_layer]));
        ids
    }

    pub fn intermediate_params(&self) -> Vec<ParamId> {
        Self::ids(&[self.inter_encoder, self.inter_decoder])
    }

    /// Records the chosen pathway applied to node `x`.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: NodeId,
        emb: NodeId,
        pathway: Pathway,
    ) -> Result<NodeId, NnError> {
        let p = &self.params;
        match pathway {
            Pathway::Final => {
                let h = apply_layers(&self.encoder, tape, p, x, emb)?;
                let h = apply_layers(&self.core, tape, p, h, emb)?;
                apply_layers(&self.decoder, tape, p, h, emb)
            }
            Pathway::Intermediate => {
                let h = self.inter_encoder.apply(tape, p, x, emb)?;
                self.record_intermediate_generator(tape, h, emb)
            }
        }
    }

    /// `D_τ ∘ s_τ` applied to a latent at the tap layer's input.
    pub fn record_intermediate_generator(
        &self,
        tape: &mut Tape,
        h: NodeId,
        emb: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = apply_layers(&self.core[self.tap_layer..], tape, &self.params, h, emb)?;
        self.inter_decoder.apply(tape, &self.params, h, emb)
    }

    fn start_tape(&self, x: &Tensor, ts: &[f64], width: usize) -> Result<(Tape, NodeId, NodeId), NnError> {
        if x.cols() != width {
            return Err(NnError::ShapeMismatch {
                expected: vec![x.rows(), width],
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
        let xn = tape.input(x.clone());
        let emb = tape.constant(embed_times(ts, self.time_embed_dim)?);
        Ok((tape, xn, emb))
    }

    /// Scores for every row of `x` at the matching time in `ts`.
    pub fn forward(&self, x: &Tensor, ts: &[f64], pathway: Pathway) -> Result<(Tensor, Tape), NnError> {
        let (mut tape, xn, emb) = self.start_tape(x, ts, self.data_dim)?;
        let out = self.record(&mut tape, xn, emb, pathway)?;
        tape.set_output(out);
        Ok((tape.value(out).clone(), tape))
    }

    /// `D_τ ∘ s_τ` on tap-width latents.
    pub fn forward_intermediate_generator(&self, h: &Tensor, ts: &[f64]) -> Result<(Tensor, Tape), NnError> {
        let (mut tape, hn, emb) = self.start_tape(h, ts, self.tap_width())?;
        let out = self.record_intermediate_generator(&mut tape, hn, emb)?;
        tape.set_output(out);
        Ok((tape.value(out).clone(), tape))
    }

    pub fn score(&self, x: &Tensor, ts: &[f64], pathway: Pathway) -> Result<Tensor, NnError> {
        self.forward(x, ts, pathway).map(|(y, _)| y)
    }
}
