//! Experiment configuration. Every table rejects unknown keys, and every
//! field has a default so a resolved file records exactly what ran.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Train,
    Sample,
    Gpca,
    Csgm,
    Sweep,
    Probe,
    Metrics,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Gpca => "gpca",
            Command::Csgm => "csgm",
            Command::Sweep => "sweep",
            Command::Probe => "probe",
            Command::Metrics => "metrics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    pub seed: u64,
    pub output_dir: String,
    pub process: ProcessConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub igo: IgoSection,
    pub sampler: SamplerSection,
    pub downstream: DownstreamSection,
    /// Present only in resolved files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            seed: 0,
            output_dir: "out".into(),
            process: ProcessConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            igo: IgoSection::default(),
            sampler: SamplerSection::default(),
            downstream: DownstreamSection::default(),
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub build: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    OrnsteinUhlenbeck,
    VariancePreserving,
    LotkaVolterra,
    CatMap,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessConfig {
    pub kind: ProcessKind,
    pub dim: usize,
    /// Ornstein–Uhlenbeck drift rate and diffusion.
    pub theta: f64,
    pub sigma: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Lotka–Volterra rates.
    pub lv_alpha: f64,
    pub lv_beta: f64,
    pub lv_gamma: f64,
    pub lv_delta: f64,
    /// Constant diffusion for the Lotka–Volterra and cat-map drifts.
    pub noise: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub capture_times: Vec<f64>,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            kind: ProcessKind::VariancePreserving,
            dim: 2,
            theta: 1.0,
            sigma: std::f64::consts::SQRT_2,
            beta_min: 0.1,
            beta_max: 20.0,
            lv_alpha: 1.0,
            lv_beta: 0.5,
            lv_gamma: 1.0,
            lv_delta: 0.5,
            noise: 0.1,
            horizon: 1.0,
            x0: vec![0.0, 0.0],
            dt: 1e-3,
            capture_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub std: f64,
    pub n_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            centers: vec![vec![2.0, 2.0], vec![-2.0, -2.0]],
            weights: vec![0.5, 0.5],
            std: 0.5,
            n_points: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub encoder_depth: usize,
    pub core_depth: usize,
    pub decoder_depth: usize,
    pub time_embed_dim: usize,
    pub activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tap_layer: Option<usize>,
    /// Load weights from this file instead of training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            encoder_depth: 1,
            core_depth: 2,
            decoder_depth: 1,
            time_embed_dim: 16,
            activation: "silu".into(),
            tap_layer: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardKind {
    Gaussian,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaKind {
    Constant,
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IgoSection {
    pub alpha: f64,
    pub lambda: LambdaKind,
    pub lambda_value: f64,
    pub tau_fractions: Vec<f64>,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub regularizer: bool,
    pub log_every: usize,
    pub t_floor: f64,
    pub forward: ForwardKind,
}

impl Default for IgoSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: LambdaKind::Variance,
            lambda_value: 1.0,
            tau_fractions: vec![0.5],
            batch_size: 128,
            steps: 2000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            regularizer: true,
            log_every: 100,
            t_floor: 1e-3,
            forward: ForwardKind::Gaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    ReverseEm,
    ProbabilityFlow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub method: SamplerMethod,
    pub pathway: String,
    pub n_samples: usize,
    pub n_steps: usize,
    /// Defaults to the horizon on the final pathway and half of it on the
    /// intermediate one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    pub t_min: f64,
    pub rtol: f64,
    pub atol: f64,
    pub denoise_last: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            method: SamplerMethod::ReverseEm,
            pathway: "final".into(),
            n_samples: 1000,
            n_steps: 500,
            t_start: None,
            t_min: 1e-3,
            rtol: 1e-5,
            atol: 1e-5,
            denoise_last: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `G(z) = z`.
    Identity,
    /// Gaussian `n×k` matrix.
    Linear,
    /// Two orthogonal unit segments in the plane (probe only).
    Segments,
    NetFinal,
    NetIntermediate,
    /// Final and intermediate pathways together (gpca only).
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamSection {
    pub generator: GeneratorKind,
    pub n: usize,
    pub k: usize,
    pub radius: f64,
    /// Time at which a network is read as a generator.
    pub t_eval: f64,
    pub iters: usize,
    pub project_steps: usize,
    pub project_lr: f64,
    pub m: usize,
    pub m_list: Vec<usize>,
    pub trials: usize,
    pub csgm_steps: usize,
    pub csgm_lr: f64,
    pub restarts: usize,
    pub noise_std: f64,
    pub n_pairs: usize,
    pub probe_samples: usize,
    pub test_points: usize,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::Linear,
            n: 32,
            k: 4,
            radius: 10.0,
            t_eval: 1e-3,
            iters: 50,
            project_steps: 100,
            project_lr: 1e-3,
            m: 16,
            m_list: vec![4, 8, 16, 32],
            trials: 5,
            csgm_steps: 500,
            csgm_lr: 0.1,
            restarts: 3,
            noise_std: 0.0,
            n_pairs: 1000,
            probe_samples: 1000,
            test_points: 50,
        }
    }
}
