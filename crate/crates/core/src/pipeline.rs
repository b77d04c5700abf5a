//! Stage orchestration: configuration, file artifacts, the run manifest and
//! the invariant checks behind `validate`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{tradeoff_report, AnalysisOptions, Candidate, GainReport};
use crate::cfnn::{train, Cfnn, TrainConfig, TrainingSet};
use crate::dynamics::{
    lqr_state_feedback, DiscreteLinearModel, NonlinearSystem, Pendulum, SubprocessSystem, VanDerPol,
};
use crate::envelope::{halton_sample, Hyperrectangle, ParameterSet};
use crate::error::{Error, Result};
use crate::falsify::{
    bound_dynamic_uncertainty, generate_coverage_data, write_log_csv, AnnealingConfig, ClosedLoopComparison,
    CoverageConfig, Interpolation, ScalarDim, SearchSpace, SignalDim,
};
use crate::linalg::serde_matrix;
use crate::lpvlft::{active_priority, evaluate_lft, factorize, lft_realize, reduced_lpv, LftSystem, LpvModel};
use crate::sysid::{build_basis, identify, BasisSpec, IdentifyOptions, PnlssModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Identify,
    Lpvify,
    Lftize,
    Gendata,
    Reduce,
    Bound,
    Analyze,
    Pipeline,
    Validate,
}

impl Stage {
    pub const SEQUENCE: [Stage; 7] =
        [Stage::Identify, Stage::Lpvify, Stage::Lftize, Stage::Gendata, Stage::Reduce, Stage::Bound, Stage::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Identify => "identify",
            Stage::Lpvify => "lpvify",
            Stage::Lftize => "lftize",
            Stage::Gendata => "gendata",
            Stage::Reduce => "reduce",
            Stage::Bound => "bound",
            Stage::Analyze => "analyze",
            Stage::Pipeline => "pipeline",
            Stage::Validate => "validate",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::SEQUENCE
            .iter()
            .chain(&[Stage::Pipeline, Stage::Validate])
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemConfig {
    Pendulum {
        #[serde(default = "default_g_over_l")]
        gravity_over_length: f64,
        #[serde(default = "default_damping")]
        damping: f64,
        #[serde(default = "default_drag")]
        drag: f64,
    },
    Vanderpol {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// External system speaking line-delimited JSON on stdin/stdout.
    Plugin {
        command: Vec<String>,
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        #[serde(default)]
        equation_variables: Option<Vec<Vec<usize>>>,
    },
}

fn default_g_over_l() -> f64 {
    9.81
}
fn default_damping() -> f64 {
    0.1
}
fn default_drag() -> f64 {
    0.5
}
fn default_mu() -> f64 {
    1.0
}

impl SystemConfig {
    pub fn instantiate(&self) -> Result<Box<dyn NonlinearSystem>> {
        Ok(match self {
            SystemConfig::Pendulum { gravity_over_length, damping, drag } => Box::new(Pendulum {
                gravity_over_length: *gravity_over_length,
                damping: *damping,
                drag: *drag,
            }),
            SystemConfig::Vanderpol { mu } => Box::new(VanDerPol { mu: *mu }),
            SystemConfig::Plugin { command, state_dim, input_dim, output_dim, equation_variables } => Box::new(
                SubprocessSystem::spawn(command, *state_dim, *input_dim, *output_dim, equation_variables.clone())?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub max_degree: u32,
    pub variable_caps: Option<Vec<u32>>,
    /// Defaults to the system's declared equation variables.
    pub state_subsets: Option<Vec<Vec<usize>>>,
    pub output_subsets: Option<Vec<Vec<usize>>>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { max_degree: 5, variable_caps: None, state_subsets: None, output_subsets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LpvConfig {
    /// Factoring order over `[x; u]`; derived from the identified model when absent.
    pub priority: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Diagonals of the LQR weights; identity when absent.
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    pub horizon: f64,
    pub control_points: usize,
    /// Disturbance amplitude per input channel.
    pub amplitude: Vec<f64>,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { horizon: 30.0, control_points: 10, amplitude: vec![1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GendataConfig {
    #[serde(flatten)]
    pub coverage: CoverageConfig,
    pub signal: SignalConfig,
    /// Initial deviations are searched over this fraction of the state envelope.
    pub initial_fraction: f64,
}

impl Default for GendataConfig {
    fn default() -> Self {
        Self { coverage: CoverageConfig::default(), signal: SignalConfig::default(), initial_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfnnConfig {
    /// Candidate bottleneck sizes; `{0, 1, l}` when absent.
    pub m: Option<Vec<usize>>,
    /// Widths of extra tanh layers ahead of the bottleneck.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Halton samples of the parameter box used to bound the reduced parameters.
    pub bound_samples: usize,
    /// Relative widening of the reduced-parameter value and rate bounds.
    pub bound_inflation: f64,
}

impl Default for CfnnConfig {
    fn default() -> Self {
        Self { m: None, hidden: Vec::new(), train: TrainConfig::default(), bound_samples: 100_000, bound_inflation: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    pub budget: usize,
    pub safety_factor: f64,
    pub signal: SignalConfig,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { budget: 200, safety_factor: 1.25, signal: SignalConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub tau: f64,
    pub system: SystemConfig,
    /// Operating point; the origin when absent.
    #[serde(default)]
    pub x_op: Option<Vec<f64>>,
    #[serde(default)]
    pub u_op: Option<Vec<f64>>,
    pub envelope: EnvelopeConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub identify: IdentifyOptions,
    #[serde(default)]
    pub lpv: LpvConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub gendata: GendataConfig,
    #[serde(default)]
    pub cfnn: CfnnConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub annealing: AnnealingConfig,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

fn default_seed() -> u64 {
    1
}

impl PipelineConfig {
    /// Pendulum about the hanging equilibrium, `|theta| <= 1`, `|omega| <= 2`, `|u| <= 2`.
    pub fn pendulum() -> Self {
        Self {
            seed: 1,
            tau: 0.01,
            system: SystemConfig::Pendulum {
                gravity_over_length: default_g_over_l(),
                damping: default_damping(),
                drag: default_drag(),
            },
            x_op: None,
            u_op: None,
            envelope: EnvelopeConfig {
                lower: vec![-1.0, -2.0, -2.0],
                upper: vec![1.0, 2.0, 2.0],
                labels: vec!["theta".into(), "omega".into(), "u".into()],
            },
            basis: BasisConfig { variable_caps: Some(vec![5, 5, 1]), ..BasisConfig::default() },
            identify: IdentifyOptions::default(),
            lpv: LpvConfig::default(),
            controller: ControllerConfig { q: Some(vec![1.0, 5.0]), r: Some(vec![0.1]) },
            gendata: GendataConfig {
                coverage: CoverageConfig { decimation: 2, ..CoverageConfig::default() },
                signal: SignalConfig { amplitude: vec![4.0], ..SignalConfig::default() },
                initial_fraction: 1.0,
            },
            cfnn: CfnnConfig::default(),
            bound: BoundConfig {
                signal: SignalConfig { amplitude: vec![4.0], ..SignalConfig::default() },
                ..BoundConfig::default()
            },
            annealing: AnnealingConfig::default(),
            analysis: AnalysisOptions::default(),
        }
    }

    /// TOML, or a previous run's `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            let manifest: Manifest = serde_json::from_str(&text)?;
            manifest.config
        } else {
            toml::from_str(&text)?
        };
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        self.envelope()?;
        if self.cfnn.bound_inflation < 0.0 || self.bound.safety_factor < 1.0 {
            return Err(Error::Config("inflation must be >= 0 and the safety factor >= 1".into()));
        }
        Ok(())
    }

    pub fn envelope(&self) -> Result<Hyperrectangle> {
        let labels = if self.envelope.labels.is_empty() {
            (1..=self.envelope.lower.len()).map(|i| format!("z{i}")).collect()
        } else {
            self.envelope.labels.clone()
        };
        Hyperrectangle::new(self.envelope.lower.clone(), self.envelope.upper.clone(), labels)
    }

    /// RK4 step length used by every simulation.
    pub fn step(&self) -> f64 {
        self.tau / self.identify.substeps.max(1) as f64
    }
}

/// Distinct, reproducible seeds per stage and candidate.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(with = "serde_matrix")]
    pub gain: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub m: usize,
    pub bound: f64,
    pub max_ratio: f64,
    pub safety_factor: f64,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GendataRecord {
    pub seed: u64,
    pub budget: usize,
    pub database_runs: usize,
    pub selected_runs: Vec<usize>,
    pub spreads: Vec<f64>,
    pub discrepancy_path: Vec<f64>,
    pub samples: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub started_unix: u64,
    pub seed: u64,
    pub m: Vec<usize>,
    pub stages: Vec<StageTiming>,
    pub config: PipelineConfig,
}

/// Artifact directory with typed read/write helpers.
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        fs::write(self.path(name), to_json(value)?)?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    /// Reads `name`, failing with a dependency error naming `stage` when absent.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<T> {
        let path = self.require(name, stage)?;
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn require(&self, name: &str, stage: Stage) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact { path, stage: stage.name().into() });
        }
        Ok(path)
    }

    pub fn create(&self, name: &str) -> Result<fs::File> {
        Ok(fs::File::create(self.path(name))?)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Runs `stage` (all of them for `Pipeline`) and writes `manifest.json`.
pub fn run(stage: Stage, config: &PipelineConfig, out: &Path) -> Result<Manifest> {
    config.check()?;
    let ws = Workspace::new(out)?;
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let stages: Vec<Stage> = match stage {
        Stage::Pipeline => Stage::SEQUENCE.to_vec(),
        s => vec![s],
    };
    let system = config.system.instantiate()?;
    let mut timings = Vec::new();
    for s in stages {
        let start = Instant::now();
        log::info!("stage {}", s.name());
        run_single(s, config, system.as_ref(), &ws)?;
        timings.push(StageTiming { stage: s.name().into(), wall_time: start.elapsed().as_secs_f64() });
    }
    let m = candidate_list(config, &ws).unwrap_or_default();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix,
        seed: config.seed,
        m,
        stages: timings,
        config: config.clone(),
    };
    ws.write_json("manifest.json", &manifest)?;
    Ok(manifest)
}

fn run_single(stage: Stage, cfg: &PipelineConfig, system: &dyn NonlinearSystem, ws: &Workspace) -> Result<()> {
    match stage {
        Stage::Identify => stage_identify(cfg, system, ws),
        Stage::Lpvify => stage_lpvify(cfg, ws),
        Stage::Lftize => stage_lftize(ws),
        Stage::Gendata => stage_gendata(cfg, system, ws),
        Stage::Reduce => stage_reduce(cfg, ws),
        Stage::Bound => stage_bound(cfg, system, ws),
        Stage::Analyze => stage_analyze(cfg, ws),
        Stage::Validate => validate(cfg, ws),
        Stage::Pipeline => Stage::SEQUENCE.iter().try_for_each(|&s| run_single(s, cfg, system, ws)),
    }
}

fn stage_identify(cfg: &PipelineConfig, system: &dyn NonlinearSystem, ws: &Workspace) -> Result<()> {
    let (n, nu) = (system.state_dim(), system.input_dim());
    let envelope = cfg.envelope()?;
    if envelope.dim() != n + nu {
        return Err(Error::Config(format!(
            "envelope has {} dimensions, system has {} states and {} inputs",
            envelope.dim(),
            n,
            nu
        )));
    }
    let x_op = cfg.x_op.clone().unwrap_or_else(|| vec![0.0; n]);
    let u_op = cfg.u_op.clone().unwrap_or_else(|| vec![0.0; nu]);
    let linear = DiscreteLinearModel::from_system(system, &x_op, &u_op, cfg.tau)?;
    let spec = BasisSpec {
        n_vars: n + nu,
        max_degree: cfg.basis.max_degree,
        variable_caps: cfg.basis.variable_caps.clone(),
        state_subsets: cfg.basis.state_subsets.clone().unwrap_or_else(|| system.equation_variables()),
        output_subsets: cfg.basis.output_subsets.clone().unwrap_or_else(|| system.output_equation_variables()),
    };
    let basis = build_basis(&spec)?;
    let id = identify(system, &linear, &envelope, &basis, &cfg.identify)?;
    ws.write_json("pnlss.json", &id.model)?;
    id.write_pareto_csv(ws.create("pareto.csv")?)?;

    let diag = |v: &Option<Vec<f64>>, k: usize| -> Result<DMatrix<f64>> {
        let d = v.clone().unwrap_or_else(|| vec![1.0; k]);
        if d.len() != k {
            return Err(Error::Config(format!("LQR weight has {} entries, expected {k}", d.len())));
        }
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)))
    };
    let q = diag(&cfg.controller.q, n)?;
    let r = diag(&cfg.controller.r, nu)?;
    let gain = lqr_state_feedback(&linear.a, &linear.b, &q, &r)?;
    ws.write_json("controller.json", &Controller { q: q.diagonal().as_slice().to_vec(), r: r.diagonal().as_slice().to_vec(), gain })
}

fn stage_lpvify(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let pnlss: PnlssModel = ws.read_json("pnlss.json", Stage::Identify)?;
    let priority = cfg.lpv.priority.clone().unwrap_or_else(|| active_priority(&pnlss));
    let lpv = factorize(&pnlss, &priority)?;
    ws.write_json("lpv.json", &lpv)
}

fn stage_lftize(ws: &Workspace) -> Result<()> {
    let lpv: LpvModel = ws.read_json("lpv.json", Stage::Lpvify)?;
    ws.write_json("lft.json", &lft_realize(&lpv)?)
}

fn disturbance_signals(signal: &SignalConfig, nu: usize) -> Result<Vec<SignalDim>> {
    if signal.amplitude.len() != nu && signal.amplitude.len() != 1 {
        return Err(Error::Config(format!("{} disturbance amplitudes for {nu} inputs", signal.amplitude.len())));
    }
    Ok((0..nu)
        .map(|k| {
            let a = signal.amplitude[k.min(signal.amplitude.len() - 1)];
            SignalDim {
                name: format!("d{}", k + 1),
                control_points: signal.control_points,
                lower: -a,
                upper: a,
                interpolation: Interpolation::PiecewiseConstant,
            }
        })
        .collect())
}

fn stage_gendata(cfg: &PipelineConfig, system: &dyn NonlinearSystem, ws: &Workspace) -> Result<()> {
    let pnlss: PnlssModel = ws.read_json("pnlss.json", Stage::Identify)?;
    let controller: Controller = ws.read_json("controller.json", Stage::Identify)?;
    let envelope = cfg.envelope()?;
    let n = pnlss.state_dim();
    let f = cfg.gendata.initial_fraction;
    let space = SearchSpace {
        scalars: (0..n)
            .map(|i| ScalarDim {
                name: format!("{}0", envelope.labels[i]),
                lower: envelope.center(i) - f * envelope.half_width(i),
                upper: envelope.center(i) + f * envelope.half_width(i),
            })
            .collect(),
        signals: disturbance_signals(&cfg.gendata.signal, pnlss.input_dim())?,
        horizon: cfg.gendata.signal.horizon,
        tau: cfg.tau,
    };
    let seed = derive_seed(cfg.seed, 1);
    let outcome = generate_coverage_data(
        system,
        &pnlss.linear,
        &controller.gain,
        &envelope,
        &space,
        &cfg.gendata.coverage,
        &cfg.annealing,
        seed,
        cfg.step(),
    )?;
    outcome.set.write_csv(ws.create("training_set.csv")?)?;
    write_log_csv(&outcome.search.log, &space.labels(), ws.create("gendata_log.csv")?)?;
    ws.write_json(
        "training_set.json",
        &GendataRecord {
            seed,
            budget: cfg.gendata.coverage.budget,
            database_runs: outcome.database.len(),
            selected_runs: outcome.selected.iter().map(|&i| outcome.database[i].evaluation).collect(),
            spreads: outcome.selected.iter().map(|&i| outcome.database[i].spread).collect(),
            discrepancy_path: outcome.discrepancy_path,
            samples: outcome.set.len(),
            labels: outcome.set.labels.clone(),
        },
    )
}

/// Candidate bottleneck sizes, sorted and deduplicated.
pub fn candidate_list(cfg: &PipelineConfig, ws: &Workspace) -> Result<Vec<usize>> {
    let lpv: LpvModel = ws.read_json("lpv.json", Stage::Lpvify)?;
    let l = lpv.parameter_count();
    let mut m = cfg.cfnn.m.clone().unwrap_or_else(|| vec![0, 1.min(l), l]);
    m.sort_unstable();
    m.dedup();
    if let Some(bad) = m.iter().find(|&&k| k > l) {
        return Err(Error::Config(format!("m = {bad} exceeds the {l} scheduling parameters")));
    }
    Ok(m)
}

fn widen(lo: f64, hi: f64, inflation: f64) -> [f64; 2] {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo) * (1.0 + inflation);
    [c - h, c + h]
}

/// Value bounds of `mu = encoder(rho)` over Halton samples of the parameter
/// box; rate bounds from one-step model predictions at the training samples.
pub fn reduced_parameter_set(
    net: &Cfnn,
    lpv: &LpvModel,
    pnlss: &PnlssModel,
    data: &TrainingSet,
    samples: usize,
    inflation: f64,
) -> Result<ParameterSet> {
    let m = net.bottleneck();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let rho_box = lpv.parameter_set.as_box();
    for rho in halton_sample(rho_box.dim(), samples, &rho_box, 1)? {
        for (j, v) in net.encode(&rho).into_iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let values: Vec<[f64; 2]> = (0..m).map(|j| widen(lo[j], hi[j], inflation)).collect();
    let rates = rate_bounds(data, pnlss, &values, inflation, |z| Ok(net.encode(&lpv.parameters_from(z)?)))?;
    ParameterSet::new(values, rates)
}

fn rate_bounds<F>(
    data: &TrainingSet,
    pnlss: &PnlssModel,
    values: &[[f64; 2]],
    inflation: f64,
    parameters: F,
) -> Result<Vec<[f64; 2]>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = pnlss.state_dim();
    let k = values.len();
    let mut lo = vec![0.0f64; k];
    let mut hi = vec![0.0f64; k];
    for z in &data.samples {
        let next_x = pnlss.evaluate(&z[..n], &z[n..]);
        let next: Vec<f64> = next_x.iter().chain(&z[n..]).copied().collect();
        let (a, b) = (parameters(z)?, parameters(&next)?);
        for j in 0..k {
            let d = b[j] - a[j];
            lo[j] = lo[j].min(d);
            hi[j] = hi[j].max(d);
        }
    }
    Ok((0..k)
        .map(|j| {
            let width = values[j][1] - values[j][0];
            let r = widen(lo[j], hi[j], inflation);
            [r[0].max(-width), r[1].min(width)]
        })
        .collect())
}

fn stage_reduce(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let pnlss: PnlssModel = ws.read_json("pnlss.json", Stage::Identify)?;
    let lpv: LpvModel = ws.read_json("lpv.json", Stage::Lpvify)?;
    ws.require("lft.json", Stage::Lftize)?;
    let data = TrainingSet::read_csv(fs::File::open(ws.require("training_set.csv", Stage::Gendata)?)?)?;
    let l = lpv.parameter_count();
    for m in candidate_list(cfg, ws)? {
        let reduced = if m == l {
            let mut full = lpv.clone();
            full.parameter_set.rate_bounds = rate_bounds(
                &data,
                &pnlss,
                &full.parameter_set.value_bounds,
                cfg.cfnn.bound_inflation,
                |z| lpv.parameters_from(z),
            )?;
            full
        } else {
            let seed = derive_seed(cfg.seed, 100 + m as u64);
            let net = train(&Cfnn::for_model(&lpv, &cfg.cfnn.hidden, m, seed)?, &lpv, &data, &cfg.cfnn.train)?;
            let mu_set =
                reduced_parameter_set(&net, &lpv, &pnlss, &data, cfg.cfnn.bound_samples, cfg.cfnn.bound_inflation)?;
            let (w, b) = net.export_decoder();
            ws.write_json(&format!("cfnn_m{m}.json"), &net)?;
            reduced_lpv(&lpv, &w, &b, mu_set)?
        };
        ws.write_json(&format!("lpv_m{m}.json"), &reduced)?;
        ws.write_json(&format!("lft_m{m}.json"), &lft_realize(&reduced)?)?;
    }
    Ok(())
}

fn stage_bound(cfg: &PipelineConfig, system: &dyn NonlinearSystem, ws: &Workspace) -> Result<()> {
    let pnlss: PnlssModel = ws.read_json("pnlss.json", Stage::Identify)?;
    let controller: Controller = ws.read_json("controller.json", Stage::Identify)?;
    let lpv: LpvModel = ws.read_json("lpv.json", Stage::Lpvify)?;
    let l = lpv.parameter_count();
    let space = SearchSpace {
        scalars: Vec::new(),
        signals: disturbance_signals(&cfg.bound.signal, pnlss.input_dim())?,
        horizon: cfg.bound.signal.horizon,
        tau: cfg.tau,
    };
    let mut records = Vec::new();
    for m in candidate_list(cfg, ws)? {
        let lft: LftSystem = ws.read_json(&format!("lft_m{m}.json"), Stage::Reduce)?;
        let net: Option<Cfnn> =
            if m < l && m > 0 { Some(ws.read_json(&format!("cfnn_m{m}.json"), Stage::Reduce)?) } else { None };
        let scheduling = |z: &[f64]| -> Vec<f64> {
            let rho = lpv.parameters_from(z).unwrap_or_default();
            match (&net, m) {
                (_, 0) => Vec::new(),
                (Some(net), _) => net.encode(&rho),
                (None, _) => rho,
            }
        };
        let comparison =
            ClosedLoopComparison::new(system, &pnlss.linear, &controller.gain, &lft, &scheduling, cfg.step());
        let seed = derive_seed(cfg.seed, 200 + m as u64);
        let outcome = bound_dynamic_uncertainty(
            &comparison,
            &space,
            cfg.bound.budget,
            &cfg.annealing,
            seed,
            cfg.bound.safety_factor,
        )?;
        write_log_csv(&outcome.search.log, &space.labels(), ws.create(&format!("bound_log_m{m}.csv"))?)?;
        records.push(BoundRecord {
            m,
            bound: outcome.bound,
            max_ratio: outcome.max_ratio,
            safety_factor: outcome.safety_factor,
            budget: cfg.bound.budget,
            seed,
        });
    }
    ws.write_json("bounds.json", &records)
}

fn stage_analyze(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    ws.require("lft.json", Stage::Lftize)?;
    let controller: Controller = ws.read_json("controller.json", Stage::Identify)?;
    let bounds: Vec<BoundRecord> = ws.read_json("bounds.json", Stage::Bound)?;
    let candidates = bounds
        .iter()
        .map(|b| {
            let lft: LftSystem = ws.read_json(&format!("lft_m{}.json", b.m), Stage::Reduce)?;
            Ok(Candidate { m: b.m, lft: lft.with_state_feedback(&controller.gain), bound: b.bound })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = tradeoff_report(&candidates, cfg.tau, &cfg.analysis)?;
    ws.write_json("gain_report.json", &report)?;
    report.write_csv(ws.create("gain_report.csv")?)?;
    ws.write_text("gain_report.txt", &report.to_text())?;
    ws.write_text("gain_report.svg", &report.to_svg())
}

fn invariant(id: &str, ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation { id: id.into(), message: message() })
    }
}

/// Largest entrywise gap between `evaluate_lft` and the LPV matrices over
/// Halton points of the parameter box.
pub fn lft_mismatch(lft: &LftSystem, lpv: &LpvModel, points: usize) -> Result<f64> {
    let l = lpv.parameter_count();
    let rhos = if l == 0 {
        vec![Vec::new()]
    } else {
        halton_sample(l, points, &lpv.parameter_set.as_box(), 1)?
    };
    let mut worst = 0.0f64;
    for rho in rhos {
        let a = evaluate_lft(lft, &rho)?;
        let b = lpv.evaluate(&rho)?;
        worst = worst.max((a - b).abs().max());
    }
    Ok(worst)
}

/// Largest gap between `residual_matrix(rho(z)) z` and the PNLSS residual
/// over Halton points of the envelope.
pub fn factorization_mismatch(pnlss: &PnlssModel, lpv: &LpvModel, points: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for z in halton_sample(pnlss.envelope.dim(), points, &pnlss.envelope, 1)? {
        let m = lpv.residual_matrix(&lpv.parameters_from(&z)?)?;
        let lhs = m * nalgebra::DVector::from_column_slice(&z);
        let rhs: Vec<f64> = pnlss.state_residual(&z).into_iter().chain(pnlss.output_residual(&z)).collect();
        for (a, b) in lhs.iter().zip(&rhs) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    Ok(worst)
}

fn round_trips<T: Serialize + DeserializeOwned>(ws: &Workspace, name: &str, stage: Stage) -> Result<()> {
    let path = ws.require(name, stage)?;
    let text = fs::read_to_string(path)?;
    let value: T = serde_json::from_str(&text)?;
    invariant("artifact-round-trip", to_json(&value)? == text, || format!("{name} changes on rewrite"))
}

/// Invariant suite over stored artifacts; the first failure is returned.
pub fn validate(cfg: &PipelineConfig, ws: &Workspace) -> Result<()> {
    let pnlss: PnlssModel = ws.read_json("pnlss.json", Stage::Identify)?;
    let lpv: LpvModel = ws.read_json("lpv.json", Stage::Lpvify)?;
    let lft: LftSystem = ws.read_json("lft.json", Stage::Lftize)?;
    round_trips::<PnlssModel>(ws, "pnlss.json", Stage::Identify)?;
    round_trips::<Controller>(ws, "controller.json", Stage::Identify)?;
    round_trips::<LpvModel>(ws, "lpv.json", Stage::Lpvify)?;
    round_trips::<LftSystem>(ws, "lft.json", Stage::Lftize)?;

    let f = factorization_mismatch(&pnlss, &lpv, 1000)?;
    invariant("factorization-exactness", f < 1e-12, || format!("mismatch {f:e}"))?;
    let e = lft_mismatch(&lft, &lpv, 1000)?;
    invariant("lft-exactness", e < 1e-10, || format!("mismatch {e:e}"))?;

    let envelope = cfg.envelope()?;
    if let Ok(path) = ws.require("training_set.csv", Stage::Gendata) {
        let data = TrainingSet::read_csv(fs::File::open(path)?)?;
        let outside = data.samples.iter().filter(|z| !envelope.contains(z)).count();
        invariant("training-in-envelope", outside == 0, || format!("{outside} samples outside the envelope"))?;
    }
    if ws.path("bounds.json").is_file() {
        round_trips::<Vec<BoundRecord>>(ws, "bounds.json", Stage::Bound)?;
        for m in candidate_list(cfg, ws)? {
            let lpv_m: LpvModel = ws.read_json(&format!("lpv_m{m}.json"), Stage::Reduce)?;
            let lft_m: LftSystem = ws.read_json(&format!("lft_m{m}.json"), Stage::Reduce)?;
            round_trips::<LftSystem>(ws, &format!("lft_m{m}.json"), Stage::Reduce)?;
            let e = lft_mismatch(&lft_m, &lpv_m, 1000)?;
            invariant("lft-exactness", e < 1e-10, || format!("m = {m}: mismatch {e:e}"))?;
        }
    }
    if ws.path("gain_report.json").is_file() {
        round_trips::<GainReport>(ws, "gain_report.json", Stage::Analyze)?;
        let report: GainReport = ws.read_json("gain_report.json", Stage::Analyze)?;
        for r in &report.rows {
            let ordered = match (r.gamma_without, r.gamma_with) {
                (Some(a), Some(b)) => b >= a,
                (None, Some(_)) => false,
                _ => true,
            };
            invariant("gain-ordering", ordered, || format!("m = {}: gamma with dE below gamma without", r.m))?;
            if let Some(g) = r.gamma_without {
                invariant("nominal-below-robust", r.nominal_gain <= g * (1.0 + cfg.analysis.tolerance), || {
                    format!("m = {}: nominal {} above robust {g}", r.m, r.nominal_gain)
                })?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_parse() {
        for s in Stage::SEQUENCE.iter().chain(&[Stage::Pipeline, Stage::Validate]) {
            assert_eq!(s.name().parse::<Stage>().unwrap(), *s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn pendulum_config_round_trips_through_toml() {
        let cfg = PipelineConfig::pendulum();
        let text = toml::to_string(&cfg).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            tau = 0.01
            [system]
            kind = "vanderpol"
            [envelope]
            lower = [-1.0, -1.0, -1.0]
            upper = [1.0, 1.0, 1.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.bound.safety_factor, 1.25);
        assert_eq!(cfg.cfnn.train.batch_size, 128);
        assert_eq!(cfg.envelope().unwrap().labels, vec!["z1", "z2", "z3"]);
    }

    #[test]
    fn missing_artifact_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path()).unwrap();
        match ws.read_json::<LpvModel>("lpv.json", Stage::Lpvify) {
            Err(Error::MissingArtifact { stage, path }) => {
                assert_eq!(stage, "lpvify");
                assert!(path.ends_with("lpv.json"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
