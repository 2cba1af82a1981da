//! Experiment drivers: initialization phase diagrams, depth-by-width sweeps,
//! protocol and optimizer comparisons, multiplier sweeps and the
//! linearization studies of the implicit energy regularization.
//!
//! Every driver takes a serializable config, derives per-cell seeds from a
//! base seed and cell coordinates, and returns rows in coordinate order so
//! results do not depend on the worker count.

use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, NetworkSpec, ProblemSpec};
use crate::grad::{self, GradError, LossSpec, Protocol, Schedule, TbpttVariant};
use crate::nn::{self, Activation, BoundRule, InitScheme, MlpSpec, NnError, ParamVector};
use crate::numkit::{derive_seed, SeededRng};
use crate::oc_analytic::{self, OcSolution};
use crate::ode::{self, ControlProblem, ControlledDynamics, Trajectory};
use crate::optim::{self, DeltaUWeights, OptimizerConfig, RecorderFlags, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// A linearly spaced axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(name: &str, min: f64, max: f64, count: usize) -> Self {
        Axis {
            name: name.to_string(),
            min,
            max,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.min < self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(ExperimentError::Invalid(format!(
                "axis {} needs count >= 2 and finite min < max",
                self.name
            )));
        }
        Ok(())
    }

    /// Grid values; symmetric ranges hit 0 exactly at the middle of odd counts.
    pub fn values(&self) -> Vec<f64> {
        let n = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if self.min == -self.max {
                    self.max * (2.0 * i as f64 - n) / n
                } else {
                    self.min + (self.max - self.min) * i as f64 / n
                }
            })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: Axis,
    pub y: Axis,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        self.y.validate()
    }

    /// `(x, y)` pairs, `y` outer and `x` inner.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let xs = self.x.values();
        self.y
            .values()
            .into_iter()
            .flat_map(|y| xs.iter().map(move |&x| (x, y)))
            .collect()
    }
}

/// Maps `f` over `items` on at most `workers` threads, preserving order.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Run description written next to every output.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'a str,
    pub config: &'a C,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub outputs: Vec<String>,
}

pub fn write_manifest<C: Serialize>(
    dir: &Path,
    experiment: &str,
    config: &C,
    seeds: Vec<u64>,
    workers: usize,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let m = Manifest {
        tool: "nodec",
        version: env!("CARGO_PKG_VERSION"),
        experiment,
        config,
        seeds,
        workers,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}

/// Trains from a fresh initialization drawn with `seed`.
fn train_fresh(
    problem: &ControlProblem,
    spec: &MlpSpec,
    init: InitScheme,
    seed: u64,
    cfg: &TrainConfig,
) -> std::result::Result<optim::TrainOutcome, TrainError> {
    let theta0 = nn::init_params(spec, init, &mut SeededRng::new(seed))?;
    optim::train(problem, spec, &theta0, cfg, &mut SeededRng::new(derive_seed(seed, &[1])))
}

/// `MSE(u*, û)` on `samples` evenly spaced points of `(0, T]`.
pub fn control_mse(spec: &MlpSpec, params: &ParamVector, oc: &OcSolution, samples: usize) -> f64 {
    ode::mse_control(
        |t| nn::forward(spec, params, t).unwrap_or_else(|_| vec![f64::NAN; spec.output_dim]),
        |t| oc.u(t),
        samples,
        oc.horizon,
    )
}

// ---------------------------------------------------------------------------
// Phase diagrams of the single-neuron maps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Linear,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub kind: NeuronKind,
    /// `x` is `w⁽⁰⁾`, `y` is `b⁽⁰⁾`.
    pub grid: GridSpec,
    pub lr: f64,
    pub epochs: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_phase_target")]
    pub target: f64,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_phase_target() -> f64 {
    -1.0
}

impl PhaseConfig {
    pub fn new(kind: NeuronKind, grid: GridSpec, lr: f64, epochs: usize) -> Self {
        PhaseConfig {
            kind,
            grid,
            lr,
            epochs,
            horizon: 1.0,
            x0: 0.0,
            target: -1.0,
        }
    }

    pub fn optimal_bias(&self) -> f64 {
        (self.target - self.x0) / self.horizon
    }

    fn step(&self, s: (f64, f64)) -> (f64, f64) {
        match self.kind {
            NeuronKind::Linear => oc_analytic::linear_neuron_map(s, self.lr, self.horizon, self.x0, self.target),
            NeuronKind::Relu => oc_analytic::relu_neuron_map(s, self.lr, self.horizon, self.x0, self.target),
        }
    }

    /// Parameter-space MSE against `(0, b*)`; for ReLU against the set `{w ≤ 0, b = b*}`.
    pub fn error(&self, (w, b): (f64, f64)) -> f64 {
        let bstar = self.optimal_bias();
        let dw = match self.kind {
            NeuronKind::Linear => w,
            NeuronKind::Relu => w.max(0.0),
        };
        0.5 * (dw * dw + (b - bstar).powi(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub w0: f64,
    pub b0: f64,
    pub w: f64,
    pub b: f64,
    pub mse: f64,
    /// Distance to the fixed-point line `w = −(2/T²)(bT + x₀ − x*)`.
    pub line_distance: f64,
}

/// Iterates the exact steepest-descent map from one initialization.
pub fn phase_cell(cfg: &PhaseConfig, w0: f64, b0: f64) -> PhaseCell {
    let mut s = (w0, b0);
    for _ in 0..cfg.epochs {
        s = cfg.step(s);
    }
    let t = cfg.horizon;
    // residual ½wT² + bT + x₀ − x* vanishes on the line; normalize by its gradient
    let r = 0.5 * s.0 * t * t + s.1 * t + cfg.x0 - cfg.target;
    let line_distance = r.abs() / (0.25 * t.powi(4) + t * t).sqrt();
    PhaseCell {
        w0,
        b0,
        w: s.0,
        b: s.1,
        mse: cfg.error(s),
        line_distance,
    }
}

pub fn phase_diagram(cfg: &PhaseConfig, workers: usize) -> Result<Vec<PhaseCell>> {
    cfg.grid.validate()?;
    if !(cfg.lr > 0.0) || cfg.epochs == 0 {
        return Err(ExperimentError::Invalid("phase diagram needs lr > 0 and epochs >= 1".into()));
    }
    let pts = cfg.grid.points();
    par_map(&pts, workers, |&(w, b)| phase_cell(cfg, w, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub w0: f64,
    pub b0: f64,
    pub map_w: f64,
    pub map_b: f64,
    pub sim_w: f64,
    pub sim_b: f64,
    pub map_mse: f64,
    pub sim_mse: f64,
}

/// Compares the analytic map with simulator training on `cells` random grid points.
pub fn phase_spot_check(
    cfg: &PhaseConfig,
    cells: usize,
    optimizer: OptimizerConfig,
    steps: usize,
    seed: u64,
) -> Result<Vec<SpotCheck>> {
    cfg.grid.validate()?;
    let problem = ControlProblem::integrator(cfg.x0, cfg.target, cfg.horizon, steps).map_err(ConfigError::from)?;
    let spec = match cfg.kind {
        NeuronKind::Linear => MlpSpec::linear_neuron(),
        NeuronKind::Relu => MlpSpec::relu_neuron(),
    };
    let pts = cfg.grid.points();
    let mut rng = SeededRng::new(seed);
    let tc = TrainConfig::new(Protocol::Bptt, optimizer, cfg.epochs);
    (0..cells)
        .map(|_| {
            let (w0, b0) = pts[rng.below(pts.len())];
            let map = phase_cell(cfg, w0, b0);
            let theta0 = ParamVector::new(&spec, vec![w0, b0])?;
            let out = optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(seed))?;
            let (sw, sb) = (out.theta_final.theta[0], out.theta_final.theta[1]);
            Ok(SpotCheck {
                w0,
                b0,
                map_w: map.w,
                map_b: map.b,
                sim_w: sw,
                sim_b: sb,
                map_mse: map.mse,
                sim_mse: cfg.error((sw, sb)),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Depth-by-width sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPreset {
    /// Constant optimal control on `ẋ = u`.
    Constant,
    /// Exponentially decaying optimal control on `ẋ = x + u`.
    TimeDependent,
    /// Two-dimensional benchmark flow.
    TwoD,
}

impl std::str::FromStr for SweepPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(SweepPreset::Constant),
            "time_dependent" | "time-dependent" => Ok(SweepPreset::TimeDependent),
            "two_d" | "2d" | "two-d" => Ok(SweepPreset::TwoD),
            other => Err(format!("unknown preset {other:?} (constant, time-dependent, 2d)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemSpec,
    pub activation: Activation,
    pub bias: bool,
    pub init: InitScheme,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub layers: Vec<usize>,
    pub max_neurons: Vec<usize>,
    pub seed: u64,
    #[serde(default)]
    pub protocol: Protocol,
}

impl SweepPreset {
    pub fn config(self) -> SweepConfig {
        let layers: Vec<usize> = (1..=9).collect();
        let init = InitScheme::Uniform {
            rule: BoundRule::InvSqrtK,
            scale: 1.0,
        };
        match self {
            SweepPreset::Constant => SweepConfig {
                problem: ProblemSpec::constant(),
                activation: Activation::Tanh,
                bias: false,
                init,
                optimizer: OptimizerConfig::adam(1e-3),
                epochs: 100,
                layers,
                max_neurons: (1..=10).map(|i| 110 * i).collect(),
                seed: 5,
                protocol: Protocol::Bptt,
            },
            SweepPreset::TimeDependent => SweepConfig {
                problem: ProblemSpec::time_dependent(),
                activation: Activation::elu(),
                bias: true,
                init,
                optimizer: OptimizerConfig::adam(3e-3),
                epochs: 500,
                layers,
                max_neurons: (1..=10).map(|i| 9 * i).collect(),
                seed: 6,
                protocol: Protocol::Bptt,
            },
            SweepPreset::TwoD => SweepConfig {
                problem: ProblemSpec::Benchmark2d { steps: 100 },
                activation: Activation::leaky_relu(),
                bias: true,
                init,
                optimizer: OptimizerConfig::adam(3e-3),
                epochs: 500,
                layers,
                max_neurons: (1..=10).map(|i| 9 * i).collect(),
                seed: 12,
                protocol: Protocol::Bptt,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCellResult {
    pub layers: usize,
    pub max_neurons: usize,
    pub width: usize,
    pub seed: u64,
    pub energy: f64,
    pub loss: f64,
    pub mean_u: f64,
    pub var_u: f64,
    pub epochs: usize,
    pub diverged: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.max_neurons.is_empty() || self.epochs == 0 {
            return Err(ExperimentError::Invalid("sweep needs layers, max_neurons and epochs >= 1".into()));
        }
        for &l in &self.layers {
            for &n in &self.max_neurons {
                if l == 0 || n / l == 0 {
                    return Err(ExperimentError::Invalid(format!(
                        "{n} neurons over {l} layers leaves an empty layer"
                    )));
                }
            }
        }
        self.optimizer.validate()?;
        Ok(())
    }

    /// `(layers, max_neurons)` pairs, layers outer.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .flat_map(|&l| self.max_neurons.iter().map(move |&n| (l, n)))
            .collect()
    }

    pub fn cell_seed(&self, layers: usize, max_neurons: usize) -> u64 {
        derive_seed(self.seed, &[layers as u64, max_neurons as u64])
    }
}

/// Trains and evaluates one sweep cell; reruns are bit-identical.
pub fn sweep_cell(cfg: &SweepConfig, layers: usize, max_neurons: usize) -> Result<SweepCellResult> {
    let problem = cfg.problem.build()?;
    let width = max_neurons / layers;
    let spec = MlpSpec::new(&vec![width; layers], cfg.activation, problem.control_dim(), cfg.bias);
    let seed = cfg.cell_seed(layers, max_neurons);
    let tc = TrainConfig::new(cfg.protocol, cfg.optimizer, cfg.epochs);
    let mut cell = SweepCellResult {
        layers,
        max_neurons,
        width,
        seed,
        energy: f64::NAN,
        loss: f64::NAN,
        mean_u: f64::NAN,
        var_u: f64::NAN,
        epochs: cfg.epochs,
        diverged: true,
    };
    match train_fresh(&problem, &spec, cfg.init, seed, &tc) {
        Ok(out) => {
            let ev = grad::evaluate(&problem, &spec, &out.theta_best, &tc.loss)?;
            let (m, v) = ode::control_moments(&ev.traj);
            cell.energy = ode::control_energy(&ev.traj);
            cell.loss = ev.terminal;
            cell.mean_u = m;
            cell.var_u = v;
            cell.diverged = ![cell.energy, cell.loss, m, v].iter().all(|x| x.is_finite());
        }
        Err(TrainError::Diverged { epoch, .. }) => cell.epochs = epoch,
        Err(e) => return Err(e.into()),
    }
    Ok(cell)
}

pub fn depth_width_sweep(cfg: &SweepConfig, workers: usize) -> Result<Vec<SweepCellResult>> {
    cfg.validate()?;
    cfg.problem.build()?;
    par_map(&cfg.cells(), workers, |&(l, n)| sweep_cell(cfg, l, n))?
        .into_iter()
        .collect()
}

// ---------------------------------------------------------------------------
// BPTT versus TBPTT

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub seed: u64,
    pub epochs: usize,
    pub bptt_lr: f64,
    pub tbptt_lr: f64,
    pub schedule: Schedule,
    pub variant: TbpttVariant,
    pub timing_epochs: usize,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            problem: ProblemSpec::Benchmark2d { steps: 100 },
            network: NetworkSpec {
                hidden: vec![14, 14],
                activation: Activation::elu(),
                bias: true,
                init: InitScheme::fan_in_uniform(),
            },
            seed: 2,
            epochs: 1000,
            bptt_lr: 3e-3,
            tbptt_lr: 5e-3,
            schedule: Schedule::RandomUniform,
            variant: TbpttVariant::Propagated,
            timing_epochs: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub label: &'static str,
    pub lr: f64,
    pub history: TrainHistory,
    pub best_loss: f64,
    pub best_energy: f64,
    pub vjp_per_epoch: f64,
    pub seconds_per_epoch: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct ProtocolComparison {
    pub oc_energy: f64,
    pub bptt: ProtocolRun,
    pub tbptt: ProtocolRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub epoch: usize,
    pub bptt_loss: f64,
    pub bptt_energy: f64,
    pub tbptt_loss: f64,
    pub tbptt_energy: f64,
}

impl ProtocolComparison {
    pub fn rows(&self) -> Vec<ComparisonRow> {
        self.bptt
            .history
            .records
            .iter()
            .zip(&self.tbptt.history.records)
            .map(|(a, b)| ComparisonRow {
                epoch: a.epoch,
                bptt_loss: a.loss,
                bptt_energy: a.energy,
                tbptt_loss: b.loss,
                tbptt_energy: b.energy,
            })
            .collect()
    }
}

pub fn protocol_comparison(cfg: &ComparisonConfig) -> Result<ProtocolComparison> {
    if cfg.epochs == 0 || cfg.timing_epochs == 0 {
        return Err(ExperimentError::Invalid("comparison needs epochs >= 1".into()));
    }
    let problem = cfg.problem.build()?;
    let oc_energy = cfg.problem.oracle()?.energy;
    let spec = cfg.network.mlp(problem.control_dim())?;
    let theta0 = nn::init_params(&spec, cfg.network.init, &mut SeededRng::new(cfg.seed))?;
    let tbptt = Protocol::Tbptt {
        schedule: cfg.schedule,
        variant: cfg.variant,
    };
    let setups = [("bptt", Protocol::Bptt, cfg.bptt_lr), ("tbptt", tbptt, cfg.tbptt_lr)];

    // interleaved repeats; the fastest repeat is the least disturbed one
    let mut timing = [f64::INFINITY; 2];
    for _ in 0..3 {
        for (i, (_, proto, lr)) in setups.iter().enumerate() {
            let tc = TrainConfig::new(*proto, OptimizerConfig::adam(*lr), cfg.timing_epochs);
            let start = Instant::now();
            let _ = optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(cfg.seed));
            timing[i] = timing[i].min(start.elapsed().as_secs_f64() / cfg.timing_epochs as f64);
        }
    }

    let mut runs = Vec::with_capacity(2);
    for (i, (label, proto, lr)) in setups.into_iter().enumerate() {
        let tc = TrainConfig::new(proto, OptimizerConfig::adam(lr), cfg.epochs);
        let out = optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(derive_seed(cfg.seed, &[1])))?;
        let ev = grad::evaluate(&problem, &spec, &out.theta_best, &tc.loss)?;
        runs.push(ProtocolRun {
            label,
            lr,
            best_loss: ev.terminal,
            best_energy: ode::control_energy(&ev.traj),
            vjp_per_epoch: out.vjp_calls as f64 / cfg.epochs as f64,
            seconds_per_epoch: timing[i],
            history: out.history,
            trajectory: ev.traj,
        });
    }
    let tbptt = runs.pop().unwrap();
    let bptt = runs.pop().unwrap();
    Ok(ProtocolComparison { oc_energy, bptt, tbptt })
}

// ---------------------------------------------------------------------------
// Lagrange-multiplier sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuSweepConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub mus: Vec<f64>,
    pub seed: u64,
}

impl Default for MuSweepConfig {
    fn default() -> Self {
        MuSweepConfig {
            problem: ProblemSpec::MovingParticle { steps: 100 },
            network: NetworkSpec {
                hidden: vec![6; 8],
                activation: Activation::elu(),
                bias: true,
                init: InitScheme::UniformConstantBias {
                    rule: BoundRule::InvSqrtK,
                    scale: 1.0,
                    bias: 1e-2,
                },
            },
            optimizer: OptimizerConfig::adam(0.1),
            epochs: 100,
            mus: vec![1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 2e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0],
            seed: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSweepRow {
    pub mu: f64,
    /// `true` for the μ = 0 run that relies on implicit regularization only.
    pub reference: bool,
    pub terminal: f64,
    pub work: f64,
    pub total: f64,
    pub best_epoch: usize,
    pub diverged: bool,
}

/// One training per μ from a shared initialization, preceded by the μ = 0 reference.
pub fn mu_sweep(cfg: &MuSweepConfig, workers: usize) -> Result<Vec<MuSweepRow>> {
    if cfg.mus.iter().any(|m| !(*m >= 0.0)) || cfg.epochs == 0 {
        return Err(ExperimentError::Invalid("multipliers must be >= 0 and epochs >= 1".into()));
    }
    let problem = cfg.problem.build()?;
    if problem.dynamics.kind() != ode::SystemKind::MovingParticle {
        return Err(ExperimentError::Invalid("the work multiplier sweep needs the moving particle".into()));
    }
    let spec = cfg.network.mlp(problem.control_dim())?;
    let theta0 = nn::init_params(&spec, cfg.network.init, &mut SeededRng::new(cfg.seed))?;
    let mut jobs = vec![(0.0, true)];
    jobs.extend(cfg.mus.iter().map(|&m| (m, false)));
    par_map(&jobs, workers, |&(mu, reference)| {
        let loss = if mu == 0.0 { LossSpec::terminal() } else { LossSpec::work(mu) };
        let tc = TrainConfig::new(Protocol::Bptt, cfg.optimizer, cfg.epochs).with_loss(loss);
        match optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(cfg.seed)) {
            Ok(out) => {
                let ev = grad::evaluate(&problem, &spec, &out.theta_best, &LossSpec::work(mu))?;
                Ok(MuSweepRow {
                    mu,
                    reference,
                    terminal: ev.terminal,
                    work: ev.running,
                    total: ev.loss,
                    best_epoch: out.best_epoch,
                    diverged: false,
                })
            }
            Err(TrainError::Diverged { epoch, .. }) => Ok(MuSweepRow {
                mu,
                reference,
                terminal: f64::NAN,
                work: f64::NAN,
                total: f64::NAN,
                best_epoch: epoch,
                diverged: true,
            }),
            Err(e) => Err(e.into()),
        }
    })?
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Architecture scan on the moving particle

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchScanConfig {
    pub problem: ProblemSpec,
    pub layers: Vec<usize>,
    pub width: usize,
    pub activations: Vec<Activation>,
    pub init: InitScheme,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub mse_samples: usize,
    pub seed: u64,
}

impl Default for ArchScanConfig {
    fn default() -> Self {
        ArchScanConfig {
            problem: ProblemSpec::MovingParticle { steps: 100 },
            layers: vec![1, 2, 4, 8, 16, 32, 64],
            width: 6,
            activations: vec![Activation::Relu, Activation::elu()],
            init: InitScheme::constant(1e-2),
            optimizer: OptimizerConfig::adam(5e-3),
            epochs: 100,
            mse_samples: 1000,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchScanRow {
    pub activation: String,
    pub layers: usize,
    pub width: usize,
    pub loss: f64,
    pub mse_u: f64,
    pub work: f64,
}

pub fn architecture_scan(cfg: &ArchScanConfig, workers: usize) -> Result<Vec<ArchScanRow>> {
    if cfg.width == 0 || cfg.layers.contains(&0) || cfg.mse_samples == 0 {
        return Err(ExperimentError::Invalid("architecture scan needs positive layers, width and samples".into()));
    }
    let problem = cfg.problem.build()?;
    let oc = cfg.problem.oracle()?;
    let jobs: Vec<(Activation, usize)> = cfg
        .activations
        .iter()
        .flat_map(|&a| cfg.layers.iter().map(move |&l| (a, l)))
        .collect();
    par_map(&jobs, workers, |&(act, layers)| {
        let spec = MlpSpec::new(&vec![cfg.width; layers], act, problem.control_dim(), true);
        let tc = TrainConfig::new(Protocol::Bptt, cfg.optimizer, cfg.epochs);
        let seed = derive_seed(cfg.seed, &[layers as u64]);
        let (loss, mse_u, work) = match train_fresh(&problem, &spec, cfg.init, seed, &tc) {
            Ok(out) => {
                let ev = grad::evaluate(&problem, &spec, &out.theta_best, &tc.loss)?;
                let work = ode::work_functional(&ev.traj).unwrap_or(f64::NAN);
                (ev.terminal, control_mse(&spec, &out.theta_best, &oc, cfg.mse_samples), work)
            }
            Err(TrainError::Diverged { .. }) => (f64::NAN, f64::NAN, f64::NAN),
            Err(e) => return Err(e.into()),
        };
        Ok(ArchScanRow {
            activation: act.to_string(),
            layers,
            width: cfg.width,
            loss,
            mse_u,
            work,
        })
    })?
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Optimizer study: steepest descent versus Adam on the time-dependent problem

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerStudyConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub optimizers: Vec<OptimizerConfig>,
    pub epochs: usize,
    pub snapshot_every: usize,
    pub mse_samples: usize,
    pub seed: u64,
}

impl Default for OptimizerStudyConfig {
    fn default() -> Self {
        OptimizerStudyConfig {
            problem: ProblemSpec::time_dependent(),
            network: NetworkSpec {
                hidden: vec![6, 6],
                activation: Activation::elu(),
                bias: true,
                init: InitScheme::constant(0.1),
            },
            optimizers: vec![
                OptimizerConfig::adam(0.05),
                OptimizerConfig::adam(0.1),
                OptimizerConfig::adam(0.15),
                OptimizerConfig::sd(0.15),
            ],
            epochs: 1000,
            snapshot_every: 50,
            mse_samples: 1000,
            seed: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRun {
    pub optimizer: String,
    pub lr: f64,
    pub loss: f64,
    pub energy: f64,
    pub energy_ratio: f64,
    pub mse_u: f64,
    pub best_epoch: usize,
    /// `(epoch, MSE)` at every snapshot.
    #[serde(skip)]
    pub mse_curve: Vec<(usize, f64)>,
}

pub fn optimizer_study(cfg: &OptimizerStudyConfig, workers: usize) -> Result<Vec<OptimizerRun>> {
    if cfg.epochs == 0 || cfg.snapshot_every == 0 || cfg.mse_samples == 0 {
        return Err(ExperimentError::Invalid("optimizer study needs positive epochs, stride and samples".into()));
    }
    let problem = cfg.problem.build()?;
    let oc = cfg.problem.oracle()?;
    let spec = cfg.network.mlp(problem.control_dim())?;
    let theta0 = nn::init_params(&spec, cfg.network.init, &mut SeededRng::new(cfg.seed))?;
    par_map(&cfg.optimizers, workers, |opt| {
        let tc = TrainConfig::new(Protocol::Bptt, *opt, cfg.epochs).with_recorders(RecorderFlags {
            snapshot_every: Some(cfg.snapshot_every),
            ..Default::default()
        });
        let out = optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(cfg.seed))?;
        let ev = grad::evaluate(&problem, &spec, &out.theta_best, &tc.loss)?;
        let energy = ode::control_energy(&ev.traj);
        let mse_curve = out
            .history
            .snapshots
            .iter()
            .map(|(e, th)| {
                let p = theta0.with_theta(th.clone())?;
                Ok((*e, control_mse(&spec, &p, &oc, cfg.mse_samples)))
            })
            .collect::<std::result::Result<Vec<_>, NnError>>()?;
        Ok(OptimizerRun {
            optimizer: match opt {
                OptimizerConfig::Sd { .. } => "sd".into(),
                OptimizerConfig::Adam { .. } => "adam".into(),
            },
            lr: opt.lr(),
            loss: ev.terminal,
            energy,
            energy_ratio: energy / oc.energy,
            mse_u: control_mse(&spec, &out.theta_best, &oc, cfg.mse_samples),
            best_epoch: out.best_epoch,
            mse_curve,
        })
    })?
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Order-of-linearization studies for the energy diagnostics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub lr: f64,
    pub epochs: usize,
    pub weights: DeltaUWeights,
    pub seed: u64,
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        LinearizationConfig {
            problem: ProblemSpec::time_dependent(),
            network: NetworkSpec {
                hidden: vec![6, 6],
                activation: Activation::elu(),
                bias: true,
                init: InitScheme::constant(0.1),
            },
            lr: 0.05,
            epochs: 50,
            weights: DeltaUWeights::Discrete,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationRow {
    pub epoch: usize,
    pub loss: f64,
    pub delta_u: f64,
    pub delta_u_pred: f64,
    /// `|ΔÛ − prediction| / |ΔÛ|` for a step of size η
    pub deviation: f64,
    /// same for a step of size η/2 from the same parameters
    pub deviation_half: f64,
    pub residual: f64,
    pub residual_half: f64,
    pub cos_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationSummary {
    pub median_deviation: f64,
    pub median_deviation_half: f64,
    pub deviation_ratio: f64,
    pub median_residual: f64,
    pub median_residual_half: f64,
    pub residual_ratio: f64,
}

struct StepProbe {
    delta_u: f64,
    pred: f64,
    residual: f64,
    cos: f64,
}

fn probe_step(
    problem: &ControlProblem,
    spec: &MlpSpec,
    theta: &ParamVector,
    g: &grad::GradResult,
    grad_e: &[f64],
    lr: f64,
    weights: DeltaUWeights,
) -> Result<StepProbe> {
    let (a, b) = problem
        .dynamics
        .scalar_linear()
        .ok_or_else(|| ExperimentError::Invalid("linearization study needs scalar linear dynamics".into()))?;
    let next = theta.with_theta(optim::sd_step(&theta.theta, &g.grad, lr))?;
    let delta_u = optim::delta_u_weighted_with(spec, theta, &next, a, problem.horizon, problem.steps, weights)?;
    let step_sq: f64 = g.grad.iter().map(|v| (lr * v).powi(2)).sum();
    let dl_dx = g.eval.traj.final_state()[0] - problem.target[0];
    let pred = optim::delta_u_predicted_with(lr, b, a, problem.horizon, problem.steps, step_sq, dl_dx, weights);
    let e0 = ode::control_energy(&g.eval.traj);
    let e1 = ode::control_energy(&grad::evaluate(problem, spec, &next, &LossSpec::terminal())?.traj);
    let dot = crate::numkit::dot(grad_e, &g.grad);
    let denom = crate::numkit::norm(grad_e) * crate::numkit::norm(&g.grad);
    Ok(StepProbe {
        delta_u,
        pred,
        residual: e1 - e0 + lr * dot,
        cos: if denom > 0.0 { dot / denom } else { 0.0 },
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Follows steepest descent at `lr`; at every visited θ also takes a trial
/// step of `lr/2`, measuring how the linearization errors of the weighted
/// control change and of the energy identity scale with the step size.
pub fn linearization_study(cfg: &LinearizationConfig) -> Result<(Vec<LinearizationRow>, LinearizationSummary)> {
    if !(cfg.lr > 0.0) || cfg.epochs == 0 {
        return Err(ExperimentError::Invalid("linearization study needs lr > 0 and epochs >= 1".into()));
    }
    let problem = cfg.problem.build()?;
    let spec = cfg.network.mlp(problem.control_dim())?;
    let mut theta = nn::init_params(&spec, cfg.network.init, &mut SeededRng::new(cfg.seed))?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let g = grad::bptt_grad(&problem, &spec, &theta, &LossSpec::terminal())?;
        let ge = grad::energy_grad(&spec, &theta, &g.eval.traj)?;
        let full = probe_step(&problem, &spec, &theta, &g, &ge, cfg.lr, cfg.weights)?;
        let half = probe_step(&problem, &spec, &theta, &g, &ge, 0.5 * cfg.lr, cfg.weights)?;
        let dev = |p: &StepProbe| ((p.delta_u - p.pred) / p.delta_u).abs();
        rows.push(LinearizationRow {
            epoch,
            loss: g.eval.loss,
            delta_u: full.delta_u,
            delta_u_pred: full.pred,
            deviation: dev(&full),
            deviation_half: dev(&half),
            residual: full.residual,
            residual_half: half.residual,
            cos_angle: full.cos,
        });
        theta = theta.with_theta(optim::sd_step(&theta.theta, &g.grad, cfg.lr))?;
    }
    let col = |f: fn(&LinearizationRow) -> f64| median(rows.iter().map(f).collect());
    let md = col(|r| r.deviation);
    let mdh = col(|r| r.deviation_half);
    let mr = col(|r| r.residual.abs());
    let mrh = col(|r| r.residual_half.abs());
    let summary = LinearizationSummary {
        median_deviation: md,
        median_deviation_half: mdh,
        deviation_ratio: md / mdh,
        median_residual: mr,
        median_residual_half: mrh,
        residual_ratio: mr / mrh,
    };
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            x: Axis::new("w0", -1.0, 1.0, n),
            y: Axis::new("b0", -2.0, 1.0, n),
        }
    }

    #[test]
    fn axis_values() {
        let a = Axis::new("alpha", -0.4, 0.4, 101);
        let v = a.values();
        assert_eq!(v.len(), 101);
        assert_eq!(v[50], 0.0);
        assert_eq!(v[0], -0.4);
        assert_eq!(v[100], 0.4);
        assert!((a.spacing() - 0.008).abs() < 1e-15);
        assert!(Axis::new("x", 0.0, 1.0, 1).validate().is_err());
        assert!(Axis::new("x", 1.0, 0.0, 3).validate().is_err());
    }

    #[test]
    fn optimum_cell_is_zero() {
        let cfg = PhaseConfig::new(NeuronKind::Linear, grid(3), 0.1, 10);
        let c = phase_cell(&cfg, 0.0, -1.0);
        assert_eq!(c.mse, 0.0);
        assert_eq!(c.line_distance, 0.0);
    }

    #[test]
    fn linear_phase_diagram_reaches_fixed_line() {
        let cfg = PhaseConfig::new(NeuronKind::Linear, grid(5), 0.1, 10_000);
        let cells = phase_diagram(&cfg, 2).unwrap();
        assert_eq!(cells.len(), 25);
        for c in &cells {
            assert!(c.line_distance < 1e-6);
            assert!((c.w + 2.0 * (1.0 + c.b)).abs() < 1e-6);
        }
        // initializations on w0 = ½(b0 + 1) flow into the optimum
        for b0 in [-2.0, -0.5, 0.6] {
            let c = phase_cell(&cfg, 0.5 * (b0 + 1.0), b0);
            assert!(c.mse < 1e-6, "{c:?}");
        }
        assert!(phase_cell(&cfg, 0.5, -1.0).mse > 1e-3);
    }

    #[test]
    fn relu_phase_diagram_negative_half_plane() {
        let cfg = PhaseConfig::new(NeuronKind::Relu, grid(6), 0.1, 10_000);
        for c in phase_diagram(&cfg, 1).unwrap() {
            if c.w0 < 0.0 {
                assert!(c.mse < 1e-6 && (c.b + 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn phase_diagram_independent_of_workers() {
        let cfg = PhaseConfig::new(NeuronKind::Relu, grid(7), 0.05, 300);
        assert_eq!(phase_diagram(&cfg, 1).unwrap(), phase_diagram(&cfg, 3).unwrap());
    }

    #[test]
    fn spot_check_simulator_agrees_with_map() {
        let cfg = PhaseConfig::new(NeuronKind::Linear, grid(5), 0.1, 200);
        for c in phase_spot_check(&cfg, 10, OptimizerConfig::sd(0.1), 1000, 3).unwrap() {
            assert!((c.map_w - c.sim_w).abs() < 5e-3 && (c.map_b - c.sim_b).abs() < 5e-3, "{c:?}");
        }
        let relu = PhaseConfig::new(NeuronKind::Relu, grid(5), 0.1, 200);
        let adam = phase_spot_check(&relu, 4, OptimizerConfig::adam(0.05), 100, 3).unwrap();
        assert!(adam.iter().all(|c| c.sim_mse.is_finite()));
    }

    #[test]
    fn sweep_cell_reruns_bit_exactly() {
        let mut cfg = SweepPreset::TimeDependent.config();
        cfg.layers = vec![1, 2];
        cfg.max_neurons = vec![4, 8];
        cfg.epochs = 20;
        let grid = depth_width_sweep(&cfg, 2).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[3].width, 4);
        let alone = sweep_cell(&cfg, 2, 8).unwrap();
        assert_eq!(alone, grid[3]);
        assert_eq!(grid, depth_width_sweep(&cfg, 1).unwrap());
    }

    #[test]
    fn sweep_rejects_empty_layers() {
        let mut cfg = SweepPreset::Constant.config();
        cfg.layers = vec![9];
        cfg.max_neurons = vec![5];
        assert!(matches!(depth_width_sweep(&cfg, 1), Err(ExperimentError::Invalid(_))));
    }

    #[test]
    fn sweep_marks_divergence() {
        let mut cfg = SweepPreset::TimeDependent.config();
        cfg.layers = vec![1];
        cfg.max_neurons = vec![4];
        cfg.optimizer = OptimizerConfig::sd(1e4);
        cfg.epochs = 50;
        let cells = depth_width_sweep(&cfg, 1).unwrap();
        assert!(cells[0].diverged);
    }

    #[test]
    fn mu_sweep_reference_and_large_mu() {
        let cfg = MuSweepConfig {
            mus: vec![100.0],
            epochs: 40,
            ..Default::default()
        };
        let rows = mu_sweep(&cfg, 1).unwrap();
        assert!(rows[0].reference && rows[0].mu == 0.0);
        assert_eq!(rows[0].total, rows[0].terminal);
        assert!(rows[1].terminal > rows[0].terminal);
        assert!(rows[1].work < rows[0].work);
    }

    #[test]
    fn serialized_configs_roundtrip() {
        let s = toml::to_string(&SweepPreset::TwoD.config()).unwrap();
        let back: SweepConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, SweepPreset::TwoD.config());
        let c = toml::to_string(&ComparisonConfig::default()).unwrap();
        assert_eq!(toml::from_str::<ComparisonConfig>(&c).unwrap(), ComparisonConfig::default());
        let m = toml::to_string(&MuSweepConfig::default()).unwrap();
        assert_eq!(toml::from_str::<MuSweepConfig>(&m).unwrap(), MuSweepConfig::default());
    }

    #[test]
    fn median_of_values() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![f64::NAN]).is_nan());
    }
}
