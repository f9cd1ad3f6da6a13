//! Reproducible experiment driver over `igo-core`.
//!
//! A run reads a TOML configuration, derives every random stream from the
//! root seed, executes one command, and writes its artifacts together with a
//! `resolved_config.toml` that records every default used. Replaying that
//! file on the same build regenerates byte-identical artifacts.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use igo_core::datasets::GaussianMixture;
use igo_core::downstream::{
    clamp_to_ball, csgm_recover, lipschitz_estimate, ppower, range_expansion_probe,
    sample_complexity_sweep, weight_divergence, write_coverage_csv, write_sweep_csv, CsgmConfig,
    DownstreamError, Generator, LineSearch, LinearRig, MeasurementModel, NetGenerator,
    PPowerConfig, ProjectConfig, ReportMeta, SweepConfig,
};
use igo_core::io::{fmt_f64, indexed_header, write_row};
use igo_core::nn::{read_checkpoint, write_checkpoint, Activation, AdamConfig, NnError, Tensor};
use igo_core::rng::{derive_seed, normal_vec, stream};
use igo_core::sampling::{
    probability_flow_batch, reverse_em_batch, write_samples_csv, SampleError, SamplerConfig,
};
use igo_core::score::{
    train, ForwardProcess, IgoConfig, Lambda, Pathway, ScoreError, ScoreNet, ScoreNetSpec,
    TauRule,
};
use igo_core::sde::{
    cat_map_drift, constant_diffusion, lotka_volterra_drift, simulate, EmConfig,
    LotkaVolterraRates, SdeError, SdeSpec, VpSchedule,
};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use config::{
    Command, ExperimentConfig, ForwardKind, GeneratorKind, LambdaKind, ProcessKind, Provenance,
    SamplerMethod,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("version mismatch: resolved config was written by build {found}, this is build {expected}")]
    VersionMismatch { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{module} error: {message}")]
    Module {
        module: &'static str,
        message: String,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::VersionMismatch { .. } => 2,
            _ => 1,
        }
    }
}

macro_rules! module_error {
    ($ty:ty, $name:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Module {
                    module: $name,
                    message: e.to_string(),
                }
            }
        }
    };
}

module_error!(SdeError, "sde-core");
module_error!(NnError, "tensor-nn");
module_error!(ScoreError, "score-model");
module_error!(SampleError, "sampling");
module_error!(DownstreamError, "downstream");

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Package version plus a digest of the running executable.
pub fn build_fingerprint() -> &'static str {
    static FP: OnceLock<String> = OnceLock::new();
    FP.get_or_init(|| {
        let digest = std::env::current_exe()
            .and_then(fs::read)
            .map(|b| hex(&Sha256::digest(&b))[..16].to_string())
            .unwrap_or_else(|_| "unknown".into());
        format!("igo-cli-{}+{digest}", env!("CARGO_PKG_VERSION"))
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| config_err(e.to_string().trim().replace('\n', " ")))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    parse_config(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// SHA-256 of the canonical serialization. Provenance and the output
/// directory are left out; neither changes what a run computes.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut bare = cfg.clone();
    bare.provenance = None;
    bare.output_dir.clear();
    let text = toml::to_string(&bare).map_err(|e| config_err(e.to_string()))?;
    Ok(hex(&Sha256::digest(text.as_bytes())))
}

fn data_dim(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    let d = cfg
        .data
        .centers
        .first()
        .map(Vec::len)
        .ok_or_else(|| config_err("data.centers is empty"))?;
    if d == 0 || cfg.data.centers.iter().any(|c| c.len() != d) {
        return Err(config_err("data.centers must share one positive dimension"));
    }
    if cfg.data.weights.len() != cfg.data.centers.len() {
        return Err(config_err("data.weights must have one entry per centre"));
    }
    Ok(d)
}

fn pathway(name: &str) -> Result<Pathway, CliError> {
    Pathway::from_name(name).ok_or_else(|| config_err(format!("unknown pathway `{name}`")))
}

/// Fills every optional field with the value a run would use.
pub fn resolve(mut cfg: ExperimentConfig, command: Command) -> Result<ExperimentConfig, CliError> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(config_err(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )));
        }
    }
    cfg.command = Some(command);
    let dim = data_dim(&cfg)?;
    let spec = net_spec(&cfg, dim)?;
    cfg.model.tap_layer = Some(spec.resolved_tap());
    let p = pathway(&cfg.sampler.pathway)?;
    if cfg.sampler.t_start.is_none() {
        cfg.sampler.t_start = Some(SamplerConfig::for_pathway(p, cfg.process.horizon).t_start);
    }
    Ok(cfg)
}

fn net_spec(cfg: &ExperimentConfig, data_dim: usize) -> Result<ScoreNetSpec, CliError> {
    let m = &cfg.model;
    let activation = Activation::from_name(&m.activation)
        .ok_or_else(|| config_err(format!("unknown activation `{}`", m.activation)))?;
    Ok(ScoreNetSpec {
        data_dim,
        hidden: m.hidden,
        encoder_depth: m.encoder_depth,
        core_depth: m.core_depth,
        decoder_depth: m.decoder_depth,
        time_embed_dim: m.time_embed_dim,
        activation,
        tap_layer: m.tap_layer,
    })
}

fn schedule(cfg: &ExperimentConfig) -> VpSchedule {
    VpSchedule {
        beta_min: cfg.process.beta_min,
        beta_max: cfg.process.beta_max,
    }
}

fn build_process(cfg: &ExperimentConfig) -> Result<SdeSpec, CliError> {
    let p = &cfg.process;
    let planar = |what: &str| {
        if p.dim == 2 {
            Ok(())
        } else {
            Err(config_err(format!("{what} needs process.dim = 2")))
        }
    };
    let spec = match p.kind {
        ProcessKind::OrnsteinUhlenbeck => SdeSpec::ornstein_uhlenbeck(p.dim, p.theta, p.sigma)?,
        ProcessKind::VariancePreserving => SdeSpec::variance_preserving(p.dim, schedule(cfg))?,
        ProcessKind::LotkaVolterra => {
            planar("lotka_volterra")?;
            let rates = LotkaVolterraRates {
                alpha: p.lv_alpha,
                beta: p.lv_beta,
                gamma: p.lv_gamma,
                delta: p.lv_delta,
            };
            SdeSpec::new(2, lotka_volterra_drift(rates), constant_diffusion(p.noise), 1.0)?
        }
        ProcessKind::CatMap => {
            planar("cat_map")?;
            SdeSpec::new(2, cat_map_drift(), constant_diffusion(p.noise), 1.0)?
        }
        ProcessKind::Frozen => SdeSpec::frozen(p.dim)?,
    };
    Ok(spec.with_horizon(p.horizon)?)
}

fn dataset(cfg: &ExperimentConfig) -> Result<Tensor, CliError> {
    data_dim(cfg)?;
    let mixture = GaussianMixture {
        centers: cfg.data.centers.clone(),
        weights: cfg.data.weights.clone(),
        std: cfg.data.std,
    };
    Ok(mixture.sample(cfg.data.n_points, &mut stream(cfg.seed, "data", 0)))
}

fn igo_config(cfg: &ExperimentConfig) -> IgoConfig {
    let s = &cfg.igo;
    IgoConfig {
        alpha: s.alpha,
        lambda: match s.lambda {
            LambdaKind::Constant => Lambda::Constant(s.lambda_value),
            LambdaKind::Variance => Lambda::Variance(schedule(cfg)),
        },
        tau_rule: if s.tau_fractions == [0.5] {
            TauRule::HalfT
        } else {
            TauRule::Fractions(s.tau_fractions.clone())
        },
        batch_size: s.batch_size,
        steps: s.steps,
        adam: AdamConfig {
            lr: s.lr,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
        },
        regularizer: s.regularizer,
        log_every: s.log_every,
        t_floor: s.t_floor,
    }
}

/// Named output files, written only once the command has succeeded.
#[derive(Default)]
struct Artifacts(Vec<(String, Vec<u8>)>);

impl Artifacts {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(io_err(Path::new(name)))?;
        self.add(name, buf);
        Ok(())
    }
}

fn obtain_net(cfg: &ExperimentConfig, out: &mut Artifacts, force_train: bool) -> Result<ScoreNet, CliError> {
    let dim = data_dim(cfg)?;
    let spec = net_spec(cfg, dim)?;
    let mut net = ScoreNet::new(&spec, &mut stream(cfg.seed, "model-init", 0))?;
    if let Some(path) = &cfg.model.checkpoint {
        let path = Path::new(path);
        let file = fs::File::open(path).map_err(io_err(path))?;
        let entries = read_checkpoint(&mut std::io::BufReader::new(file))?;
        net.params.load(entries)?;
        if !force_train {
            return Ok(net);
        }
    }
    let data = dataset(cfg)?;
    let process = match cfg.igo.forward {
        ForwardKind::Gaussian => ForwardProcess::Gaussian(schedule(cfg)),
        ForwardKind::Simulated => {
            let spec = build_process(cfg)?;
            if spec.dim() != dim {
                return Err(config_err("process.dim must equal the data dimension"));
            }
            ForwardProcess::Simulated { spec, dt: cfg.process.dt }
        }
    };
    let log = train(&mut net, &data, &process, &igo_config(cfg), derive_seed(cfg.seed, "train", 0))?;
    out.csv("training_log.csv", |w| log.write_csv(w))?;
    let mut ckpt = Vec::new();
    write_checkpoint(&net.params, &mut ckpt)?;
    out.add("checkpoint.bin", ckpt);
    Ok(net)
}

fn run_simulate(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let spec = build_process(cfg)?;
    let em = EmConfig::new(cfg.process.dt, derive_seed(cfg.seed, "simulate", 0))
        .with_captures(cfg.process.capture_times.clone());
    let traj = simulate(&spec, &cfg.process.x0, &em)?;
    out.csv("trajectory.csv", |w| traj.write_csv(w))?;
    if !cfg.process.capture_times.is_empty() {
        out.csv("captures.csv", |w| traj.write_captures_csv(w))?;
    }
    Ok(())
}

fn run_sample(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let net = obtain_net(cfg, out, false)?;
    let sde = build_process(cfg)?;
    let dim = net.data_dim();
    if sde.dim() != dim {
        return Err(config_err("process.dim must equal the data dimension"));
    }
    let s = &cfg.sampler;
    let p = pathway(&s.pathway)?;
    let t_start = s.t_start.expect("resolved");
    let scfg = SamplerConfig {
        n_steps: s.n_steps,
        t_start,
        t_min: s.t_min,
        pathway: p,
        rtol: s.rtol,
        atol: s.atol,
        seed: derive_seed(cfg.seed, "sample", 0),
        denoise_last: s.denoise_last,
    };
    let prior = normal_vec(&mut stream(cfg.seed, "prior", 0), s.n_samples * dim);
    let x_t = Tensor::matrix(s.n_samples, dim, prior)?;
    let samples = match s.method {
        SamplerMethod::ReverseEm => reverse_em_batch(&net, &sde, &x_t, &scfg)?,
        SamplerMethod::ProbabilityFlow => probability_flow_batch(&net, &sde, &x_t, &scfg)?,
    };
    out.csv("samples.csv", |w| write_samples_csv(w, &samples, p, t_start, cfg.seed))
}

fn linear_rig(cfg: &ExperimentConfig, label: &str) -> LinearRig {
    let d = &cfg.downstream;
    let scale = 1.0 / (d.n as f64).sqrt();
    let entries: Vec<f64> = normal_vec(&mut stream(cfg.seed, label, 0), d.n * d.k)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    LinearRig::new(DMatrix::from_vec(d.n, d.k, entries), d.radius)
}

/// Owned generators for a command; network-backed ones borrow `net`.
enum GenSet<'a> {
    Rigs(Vec<LinearRig>),
    Net(Vec<NetGenerator<'a>>),
}

impl GenSet<'_> {
    fn as_dyn(&self) -> Vec<&dyn Generator> {
        match self {
            GenSet::Rigs(v) => v.iter().map(|g| g as &dyn Generator).collect(),
            GenSet::Net(v) => v.iter().map(|g| g as &dyn Generator).collect(),
        }
    }
}

fn needs_net(kind: GeneratorKind) -> bool {
    matches!(
        kind,
        GeneratorKind::NetFinal | GeneratorKind::NetIntermediate | GeneratorKind::Union
    )
}

fn generators<'a>(cfg: &ExperimentConfig, net: Option<&'a ScoreNet>) -> Result<GenSet<'a>, CliError> {
    let d = &cfg.downstream;
    let net_gen = |p: Pathway| NetGenerator::new(net.expect("network prepared"), p, d.t_eval, d.radius);
    Ok(match d.generator {
        GeneratorKind::Identity => GenSet::Rigs(vec![LinearRig::identity(d.n, d.radius)]),
        GeneratorKind::Linear => GenSet::Rigs(vec![linear_rig(cfg, "generator")]),
        GeneratorKind::Segments => GenSet::Rigs(vec![
            LinearRig::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), d.radius),
            LinearRig::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), d.radius),
        ]),
        GeneratorKind::NetFinal => GenSet::Net(vec![net_gen(Pathway::Final)]),
        GeneratorKind::NetIntermediate => GenSet::Net(vec![net_gen(Pathway::Intermediate)]),
        GeneratorKind::Union => GenSet::Net(vec![net_gen(Pathway::Final), net_gen(Pathway::Intermediate)]),
    })
}

fn maybe_net(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<Option<ScoreNet>, CliError> {
    if needs_net(cfg.downstream.generator) {
        Ok(Some(obtain_net(cfg, out, false)?))
    } else {
        Ok(None)
    }
}

fn single(set: &GenSet<'_>, command: &str) -> Result<(), CliError> {
    if set.as_dyn().len() != 1 {
        return Err(config_err(format!("`{command}` needs a single generator")));
    }
    Ok(())
}

fn meta(cfg: &ExperimentConfig) -> Result<ReportMeta, CliError> {
    Ok(ReportMeta {
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
    })
}

fn run_gpca(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    if cfg.downstream.generator == GeneratorKind::Segments {
        return Err(config_err("gpca does not support the segments generator"));
    }
    let net = maybe_net(cfg, out)?;
    let set = generators(cfg, net.as_ref())?;
    let gens = set.as_dyn();
    let g0 = gens[0];
    let n = g0.output_dim();
    // Spiked second-moment matrix from noisy range samples of the first
    // generator.
    let count = cfg.data.n_points.max(1);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for i in 0..count {
        let mut rng = stream(cfg.seed, "gpca-data", i as u64);
        let mut z = normal_vec(&mut rng, g0.latent_dim());
        clamp_to_ball(&mut z, g0.radius());
        let mut x = g0.generate(&z)?;
        for (xi, e) in x.iter_mut().zip(normal_vec(&mut rng, n)) {
            *xi += 0.1 * e;
        }
        for r in 0..n {
            for c in 0..n {
                v[(r, c)] += x[r] * x[c] / count as f64;
            }
        }
    }
    let v = (&v + v.transpose()) * 0.5;
    let d = &cfg.downstream;
    let pcfg = PPowerConfig {
        iters: d.iters,
        project: ProjectConfig {
            steps: d.project_steps,
            lr: d.project_lr,
        },
    };
    let res = ppower(&v, &gens, &pcfg, derive_seed(cfg.seed, "gpca", 0))?;
    let m = meta(cfg)?;
    out.csv("vhat.csv", |w| {
        use std::io::Write;
        writeln!(
            w,
            "# seed={},config_hash={},rayleigh={},chosen={}",
            m.seed,
            m.config_hash,
            fmt_f64(res.rayleigh),
            res.chosen
        )?;
        writeln!(w, "{}", indexed_header("v", n).join(","))?;
        write_row(w, &res.vector)
    })
}

fn csgm_config(cfg: &ExperimentConfig) -> CsgmConfig {
    let d = &cfg.downstream;
    CsgmConfig {
        steps: d.csgm_steps,
        lr: d.csgm_lr,
        restarts: d.restarts,
        line_search: LineSearch::Auto,
    }
}

fn run_csgm(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let net = maybe_net(cfg, out)?;
    let set = generators(cfg, net.as_ref())?;
    single(&set, "csgm")?;
    let gen = set.as_dyn()[0];
    let mut rng = stream(cfg.seed, "csgm-truth", 0);
    let mut z = normal_vec(&mut rng, gen.latent_dim());
    clamp_to_ball(&mut z, gen.radius());
    let x_true = gen.generate(&z)?;
    let model = MeasurementModel::gaussian(cfg.downstream.m, x_true.clone(), cfg.downstream.noise_std, &mut rng);
    let res = csgm_recover(&model, gen, &csgm_config(cfg), derive_seed(cfg.seed, "csgm", 0))?;
    let m = meta(cfg)?;
    out.csv("recovery.csv", |w| {
        use std::io::Write;
        writeln!(
            w,
            "# seed={},config_hash={},m={},residual={},rel_error={}",
            m.seed,
            m.config_hash,
            cfg.downstream.m,
            fmt_f64(res.residual),
            fmt_f64(res.recovery_error.unwrap_or(f64::NAN))
        )?;
        writeln!(w, "x_true,x_hat")?;
        for (a, b) in x_true.iter().zip(&res.x) {
            write_row(w, &[*a, *b])?;
        }
        Ok(())
    })
}

fn run_sweep(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let net = maybe_net(cfg, out)?;
    let set = generators(cfg, net.as_ref())?;
    single(&set, "sweep")?;
    let d = &cfg.downstream;
    let scfg = SweepConfig {
        trials: d.trials,
        noise_std: d.noise_std,
        csgm: csgm_config(cfg),
    };
    let table = sample_complexity_sweep(set.as_dyn()[0], &d.m_list, &scfg, derive_seed(cfg.seed, "sweep", 0))?;
    let m = meta(cfg)?;
    out.csv("sweep.csv", |w| write_sweep_csv(w, &table, &m))
}

fn run_probe(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let d = &cfg.downstream;
    let net;
    let set = match d.generator {
        GeneratorKind::Segments => generators(cfg, None)?,
        GeneratorKind::Identity | GeneratorKind::Linear => {
            GenSet::Rigs(vec![linear_rig(cfg, "generator"), linear_rig(cfg, "generator-inter")])
        }
        _ => {
            net = obtain_net(cfg, out, false)?;
            let g = |p| NetGenerator::new(&net, p, d.t_eval, d.radius);
            GenSet::Net(vec![g(Pathway::Final), g(Pathway::Intermediate)])
        }
    };
    let gens = set.as_dyn();
    let n = gens[0].output_dim();
    let test: Vec<Vec<f64>> = if needs_net(d.generator) {
        let data = dataset(cfg)?;
        let pick = data.rows().min(d.test_points);
        (0..pick).map(|i| data.row(i).to_vec()).collect()
    } else {
        (0..d.test_points)
            .map(|i| normal_vec(&mut stream(cfg.seed, "probe-test", i as u64), n))
            .collect()
    };
    let rep = range_expansion_probe(gens[0], gens[1], &test, d.probe_samples, derive_seed(cfg.seed, "probe", 0))?;
    let m = meta(cfg)?;
    out.csv("coverage.csv", |w| write_coverage_csv(w, &rep, &m))
}

fn run_metrics(cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    let net = obtain_net(cfg, out, false)?;
    let wd = weight_divergence(&net)?;
    let d = &cfg.downstream;
    let seed = derive_seed(cfg.seed, "lipschitz", 0);
    let lf = lipschitz_estimate(&NetGenerator::new(&net, Pathway::Final, d.t_eval, d.radius), d.n_pairs, seed)?;
    let li = lipschitz_estimate(
        &NetGenerator::new(&net, Pathway::Intermediate, d.t_eval, d.radius),
        d.n_pairs,
        seed,
    )?;
    let m = meta(cfg)?;
    out.csv("metrics.csv", |w| {
        use std::io::Write;
        writeln!(w, "# seed={},config_hash={}", m.seed, m.config_hash)?;
        writeln!(w, "metric,value")?;
        for (k, v) in [
            ("cos_E", wd.cos_e),
            ("cos_D", wd.cos_d),
            ("eucl_E", wd.eucl_e),
            ("eucl_D", wd.eucl_d),
            ("pad_E", wd.pad_e as f64),
            ("pad_D", wd.pad_d as f64),
            ("L_hat_lower_final", lf.l_lower),
            ("L_hat_lower_intermediate", li.l_lower),
        ] {
            writeln!(w, "{k},{}", fmt_f64(v))?;
        }
        Ok(())
    })
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
    }
}

/// Runs `command` and returns the paths written.
pub fn run(cfg: ExperimentConfig, command: Command, overrides: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    if cfg.provenance.is_some() {
        return Err(config_err("[provenance] is only valid in a file passed to `replay`"));
    }
    let mut cfg = cfg;
    overrides.apply(&mut cfg);
    let cfg = resolve(cfg, command)?;
    execute(cfg)
}

fn execute(mut cfg: ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let command = cfg.command.ok_or_else(|| config_err("no command"))?;
    let mut out = Artifacts::default();
    match command {
        Command::Simulate => run_simulate(&cfg, &mut out)?,
        Command::Train => {
            obtain_net(&cfg, &mut out, true)?;
        }
        Command::Sample => run_sample(&cfg, &mut out)?,
        Command::Gpca => run_gpca(&cfg, &mut out)?,
        Command::Csgm => run_csgm(&cfg, &mut out)?,
        Command::Sweep => run_sweep(&cfg, &mut out)?,
        Command::Probe => run_probe(&cfg, &mut out)?,
        Command::Metrics => run_metrics(&cfg, &mut out)?,
    }
    cfg.provenance = Some(Provenance {
        build: build_fingerprint().to_string(),
        config_hash: config_hash(&cfg)?,
    });
    let resolved = toml::to_string(&cfg).map_err(|e| config_err(e.to_string()))?;
    out.add(RESOLVED_CONFIG, resolved.into_bytes());

    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut written = Vec::new();
    for (name, bytes) in out.0 {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Re-runs a resolved configuration after checking that it came from this
/// build and has not been edited.
pub fn replay(path: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(path)?;
    let prov = cfg
        .provenance
        .clone()
        .ok_or_else(|| config_err("not a resolved config: [provenance] is missing"))?;
    if prov.build != build_fingerprint() {
        return Err(CliError::VersionMismatch {
            expected: build_fingerprint().to_string(),
            found: prov.build,
        });
    }
    if config_hash(&cfg)? != prov.config_hash {
        return Err(config_err("resolved config does not match its recorded hash"));
    }
    cfg.provenance = None;
    overrides.apply(&mut cfg);
    let command = cfg.command.ok_or_else(|| config_err("resolved config names no command"))?;
    let cfg = resolve(cfg, command)?;
    execute(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("[igo]\nalpah = 0.3\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("alpah")), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(ExperimentConfig::default(), Command::Train).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config_hash(&back).unwrap(), config_hash(&cfg).unwrap());
        assert_eq!(back.model.tap_layer, Some(1));
        assert_eq!(back.sampler.t_start, Some(1.0));
    }

    #[test]
    fn command_mismatch_is_rejected() {
        let cfg = ExperimentConfig {
            command: Some(Command::Sweep),
            ..ExperimentConfig::default()
        };
        assert!(matches!(resolve(cfg, Command::Train), Err(CliError::Config(_))));
    }

    #[test]
    fn module_errors_name_their_origin() {
        let e: CliError = SdeError::InvalidProcess("x".into()).into();
        assert!(e.to_string().starts_with("sde-core error"));
        let e: CliError = DownstreamError::ZeroVector("v".into()).into();
        assert!(e.to_string().starts_with("downstream error"));
    }
}
