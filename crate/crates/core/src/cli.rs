//! Command-line front end: argument parsing, TOML run configs and output files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{sampled_oracle_energy, ConfigError, NetworkSpec, ProblemSpec};
use crate::experiments::{self, write_csv, write_manifest, ExperimentError};
use crate::grad::{self, LossSpec, Protocol, RunningCost, Schedule, TbpttVariant};
use crate::landscape::{self, LandscapeError};
use crate::nn::{self, MlpSpec, NnError, ParamVector};
use crate::numkit::{derive_seed, SeededRng};
use crate::oc_analytic::FunctionalKind;
use crate::ode::{self, ControlledDynamics, SystemKind};
use crate::optim::{self, OptimizerConfig, RecorderFlags, TrainConfig, TrainError, TrainHistory};
use crate::plot::{self, Series};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Invalid(_) | ExperimentError::Config(_) | ExperimentError::Nn(_) => {
                CliError::Config(e.to_string())
            }
            ExperimentError::Train(t) => t.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<LandscapeError> for CliError {
    fn from(e: LandscapeError) -> Self {
        match e {
            LandscapeError::Invalid(_) | LandscapeError::Config(_) | LandscapeError::Nn(_) => {
                CliError::Config(e.to_string())
            }
            LandscapeError::Experiment(x) => x.into(),
            LandscapeError::Train(t) => t.into(),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nodec", version, about = "Neural-network controllers for ODE systems")]
pub struct Cli {
    /// Worker threads for grids and projections.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also render SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one controller from a run config.
    Train(ConfigArg),
    /// Print the analytic optimal control of a problem.
    Oc(OcArgs),
    /// Single-neuron initialization phase diagram.
    Phase(ConfigArg),
    /// Depth-by-width sweep.
    Sweep(SweepArgs),
    /// Work-multiplier sweep on the moving particle.
    Musweep(OptConfigArg),
    /// Random-direction projection around a trained optimum.
    Project(OptConfigArg),
    /// BPTT against TBPTT on the same initialization.
    CompareProtocols(OptConfigArg),
    /// Steepest descent against Adam with control-MSE tracking.
    Optimizers(OptConfigArg),
    /// Step-size scaling of the energy linearization errors.
    Linearize(OptConfigArg),
    /// Depth scan on the moving particle.
    Archscan(OptConfigArg),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptConfigArg {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// constant, time-dependent or 2d
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<experiments::SweepPreset>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct OcProblem {
    /// `ẋ = ax + bu`: a= b= x0= xstar= T=
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub scalar_linear: Option<Vec<String>>,
    /// `ẋ = u`: x0= xstar= T=
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    pub integrator: Option<Vec<String>>,
    #[arg(long)]
    pub benchmark_2d: bool,
    #[arg(long)]
    pub moving_particle: bool,
    /// TOML file holding a problem table.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OcArgs {
    #[command(flatten)]
    pub problem: OcProblem,
    /// Number of printed samples on [0, T].
    #[arg(long, default_value_t = 11)]
    pub samples: usize,
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    if cli.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    match &cli.command {
        Command::Train(a) => cmd_train(cli, &a.config),
        Command::Oc(a) => cmd_oc(a),
        Command::Phase(a) => cmd_phase(cli, &a.config),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Musweep(a) => cmd_musweep(cli, a.config.as_deref()),
        Command::Project(a) => cmd_project(cli, a.config.as_deref()),
        Command::CompareProtocols(a) => cmd_compare(cli, a.config.as_deref()),
        Command::Optimizers(a) => cmd_optimizers(cli, a.config.as_deref()),
        Command::Linearize(a) => cmd_linearize(cli, a.config.as_deref()),
        Command::Archscan(a) => cmd_archscan(cli, a.config.as_deref()),
    }
}

/// Parses a TOML file; errors carry the file name and the parser's line and field.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), load_toml)
}

fn out_dir(cli: &Cli, fallback: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    #[default]
    Bptt,
    Tbptt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    #[default]
    None,
    Energy,
    Work,
}

fn default_beta1() -> f64 {
    optim::ADAM_BETA1
}
fn default_beta2() -> f64 {
    optim::ADAM_BETA2
}
fn default_eps() -> f64 {
    optim::ADAM_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default)]
    pub protocol: ProtocolName,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub variant: TbpttVariant,
    pub optimizer: OptimizerName,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cost: CostKind,
    #[serde(default)]
    pub mu: f64,
    /// Records the per-epoch energy diagnostics (scalar linear problems only).
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out(),
            snapshot_every: None,
            plots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub training: TrainingSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn protocol(&self) -> Protocol {
        match self.training.protocol {
            ProtocolName::Bptt => Protocol::Bptt,
            ProtocolName::Tbptt => Protocol::Tbptt {
                schedule: self.training.schedule,
                variant: self.training.variant,
            },
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let t = &self.training;
        match t.optimizer {
            OptimizerName::Sd => OptimizerConfig::Sd { lr: t.lr },
            OptimizerName::Adam => OptimizerConfig::Adam {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
        }
    }

    pub fn loss(&self) -> LossSpec {
        let mu = self.training.mu;
        LossSpec {
            running: match self.training.cost {
                CostKind::None => RunningCost::None,
                CostKind::Energy => RunningCost::Energy { mu },
                CostKind::Work => RunningCost::Work { mu },
            },
        }
    }

    /// Builds every component, rejecting the config before anything is computed.
    pub fn resolve(&self) -> Result<(ode::ControlProblem, MlpSpec, TrainConfig)> {
        let problem = self.problem.build()?;
        let spec = self.network.mlp(problem.control_dim())?;
        let t = &self.training;
        let opt = self.optimizer();
        opt.validate().map_err(CliError::from)?;
        if t.epochs == 0 {
            return Err(CliError::Config("training.epochs must be at least 1".into()));
        }
        if !(t.mu >= 0.0) || !t.mu.is_finite() {
            return Err(CliError::Config("training.mu must be a finite number >= 0".into()));
        }
        if t.cost == CostKind::None && t.mu != 0.0 {
            return Err(CliError::Config("training.mu is set but training.cost is \"none\"".into()));
        }
        if t.cost == CostKind::Work && problem.dynamics.kind() != SystemKind::MovingParticle {
            return Err(CliError::Config("training.cost = \"work\" needs the moving_particle problem".into()));
        }
        if t.diagnostics && problem.dynamics.scalar_linear().is_none() {
            return Err(CliError::Config("training.diagnostics needs a scalar linear problem".into()));
        }
        if self.output.snapshot_every == Some(0) {
            return Err(CliError::Config("output.snapshot_every must be positive".into()));
        }
        let recorders = RecorderFlags {
            delta_u: t.diagnostics,
            energy_identity: t.diagnostics,
            snapshot_every: self.output.snapshot_every,
            ..Default::default()
        };
        let tc = TrainConfig::new(self.protocol(), opt, t.epochs)
            .with_loss(self.loss())
            .with_recorders(recorders);
        Ok((problem, spec, tc))
    }
}

fn history_plots(dir: &Path, h: &TrainHistory) -> Result<Vec<PathBuf>> {
    let pts = |f: fn(&optim::EpochRecord) -> f64| h.records.iter().map(|r| (r.epoch as f64, f(r))).collect();
    let loss = dir.join("loss.svg");
    write_text(
        &loss,
        &plot::line_chart("loss", "epoch", "L", &[Series { label: "loss", points: pts(|r| r.loss) }], true),
    )?;
    let energy = dir.join("energy.svg");
    write_text(
        &energy,
        &plot::line_chart(
            "control energy",
            "epoch",
            "E_T",
            &[Series { label: "energy", points: pts(|r| r.energy) }],
            false,
        ),
    )?;
    Ok(vec![loss, energy])
}

fn cmd_train(cli: &Cli, path: &Path) -> Result<()> {
    let mut cfg: RunConfig = load_toml(path)?;
    if let Some(s) = cli.seed {
        cfg.training.seed = s;
    }
    let (problem, spec, tc) = cfg.resolve()?;
    let seed = cfg.training.seed;
    let theta0 = nn::init_params(&spec, cfg.network.init, &mut SeededRng::new(seed))?;
    let order_seed = derive_seed(seed, &[1]);
    let result = optim::train(&problem, &spec, &theta0, &tc, &mut SeededRng::new(order_seed));

    let dir = match &cli.out {
        Some(_) => out_dir(cli, "out")?,
        None => {
            std::fs::create_dir_all(&cfg.output.dir).map_err(io_err)?;
            cfg.output.dir.clone()
        }
    };
    let plots = cli.plot || cfg.output.plots;
    let mut outputs = vec![dir.join("history.csv")];
    let (history, failure) = match result {
        Ok(out) => {
            write_text(&dir.join("best_theta.json"), &out.theta_best.to_json())?;
            outputs.push(dir.join("best_theta.json"));
            let ev = grad::evaluate(&problem, &spec, &out.theta_best, &tc.loss).map_err(io_err)?;
            println!("best epoch     {}", out.best_epoch);
            println!("terminal loss  {:.6e}", ev.terminal);
            println!("control energy {:.6e}", ode::control_energy(&ev.traj));
            if let Ok(oc) = cfg.problem.oracle() {
                println!("oracle energy  {:.6e}", oc.energy);
                if problem.control_dim() == 1 && plots {
                    let svg = plot::line_chart(
                        "control",
                        "t",
                        "u",
                        &[
                            Series {
                                label: "trained",
                                points: ev.traj.times.iter().zip(&ev.traj.controls).map(|(t, u)| (*t, u[0])).collect(),
                            },
                            Series {
                                label: "optimal",
                                points: ev.traj.times.iter().map(|&t| (t, oc.u(t)[0])).collect(),
                            },
                        ],
                        false,
                    );
                    write_text(&dir.join("control.svg"), &svg)?;
                    outputs.push(dir.join("control.svg"));
                }
            }
            println!("vjp calls      {}", out.vjp_calls);
            (out.history, None)
        }
        Err(TrainError::Diverged { epoch, reason, history }) => {
            (*history, Some(CliError::Diverged(format!("training diverged at epoch {epoch}: {reason}"))))
        }
        Err(e) => return Err(e.into()),
    };
    history.save_csv(dir.join("history.csv")).map_err(io_err)?;
    if plots && !history.is_empty() {
        outputs.extend(history_plots(&dir, &history)?);
    }
    outputs.push(dir.join("manifest.json"));
    write_manifest(&dir, "train", &cfg, vec![seed, order_seed], cli.workers, &outputs)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// oc

fn parse_kv(pairs: &[String], allowed: &[&str]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got {p:?}")))?;
        if !allowed.contains(&k) {
            return Err(CliError::Config(format!("unknown key {k:?}; expected one of {allowed:?}")));
        }
        let v: f64 = v.parse().map_err(|_| CliError::Config(format!("{k}: {v:?} is not a number")))?;
        map.insert(k.to_string(), v);
    }
    Ok(map)
}

fn kv_problem(oc: &OcProblem) -> Result<ProblemSpec> {
    let get = |m: &BTreeMap<String, f64>, k: &str, d: Option<f64>| {
        m.get(k).copied().or(d).ok_or_else(|| CliError::Config(format!("missing {k}=")))
    };
    if let Some(kv) = &oc.scalar_linear {
        let m = parse_kv(kv, &["a", "b", "x0", "xstar", "T", "steps"])?;
        return Ok(ProblemSpec::ScalarLinear {
            a: get(&m, "a", None)?,
            b: get(&m, "b", None)?,
            x0: get(&m, "x0", Some(0.0))?,
            target: get(&m, "xstar", None)?,
            horizon: get(&m, "T", Some(1.0))?,
            steps: get(&m, "steps", Some(100.0))? as usize,
        });
    }
    if let Some(kv) = &oc.integrator {
        let m = parse_kv(kv, &["x0", "xstar", "T", "steps"])?;
        return Ok(ProblemSpec::Integrator {
            x0: get(&m, "x0", Some(0.0))?,
            target: get(&m, "xstar", None)?,
            horizon: get(&m, "T", Some(1.0))?,
            steps: get(&m, "steps", Some(100.0))? as usize,
        });
    }
    if oc.benchmark_2d {
        return Ok(ProblemSpec::Benchmark2d { steps: 100 });
    }
    if oc.moving_particle {
        return Ok(ProblemSpec::MovingParticle { steps: 100 });
    }
    let path = oc.config.as_ref().expect("clap requires one problem source");
    #[derive(Deserialize)]
    struct File {
        problem: ProblemSpec,
    }
    Ok(load_toml::<File>(path)?.problem)
}

fn cmd_oc(a: &OcArgs) -> Result<()> {
    let spec = kv_problem(&a.problem)?;
    if a.samples < 2 {
        return Err(CliError::Config("--samples must be at least 2".into()));
    }
    let problem = spec.build()?;
    let oc = spec.oracle()?;
    match oc.functional {
        FunctionalKind::Energy => println!("E* = {:.10}", oc.energy),
        FunctionalKind::Work => println!("W* = {:.10}", oc.energy),
    }
    println!("E_T of u* sampled on the Euler grid = {:.10}", sampled_oracle_energy(&problem, &oc)?);
    println!("{:>10} {:>16} {:>16}", "t", "u*(t)", "x*(t)");
    for i in 0..a.samples {
        let t = oc.horizon * i as f64 / (a.samples - 1) as f64;
        let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.8}")).collect::<Vec<_>>().join(",");
        println!("{:>10.4} {:>16} {:>16}", t, fmt(oc.u(t)), fmt(oc.x(t)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// grids and studies

fn cmd_phase(cli: &Cli, path: &Path) -> Result<()> {
    let cfg: experiments::PhaseConfig = load_toml(path)?;
    let cells = experiments::phase_diagram(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/phase")?;
    let grid = dir.join("grid.csv");
    write_csv(&grid, &cells)?;
    let mut outputs = vec![grid];
    if cli.plot {
        let nx = cfg.grid.x.count;
        let rows: Vec<Vec<f64>> = cells.chunks(nx).map(|r| r.iter().map(|c| c.mse).collect()).collect();
        let svg = plot::heatmap("MSE after training", "w0", "b0", &cfg.grid.x.values(), &cfg.grid.y.values(), &rows, true);
        let p = dir.join("phase.svg");
        write_text(&p, &svg)?;
        outputs.push(p);
    }
    write_manifest(&dir, "phase", &cfg, vec![], cli.workers, &outputs)?;
    let converged = cells.iter().filter(|c| c.mse < 1e-6).count();
    println!("{} cells, {converged} within 1e-6 of the optimum", cells.len());
    Ok(())
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), None) => p.config(),
        (None, Some(path)) => load_toml(path)?,
        _ => return Err(CliError::Config("sweep needs --preset or --config".into())),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cells = experiments::depth_width_sweep(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/sweep")?;
    let grid = dir.join("grid.csv");
    write_csv(&grid, &cells)?;
    let mut outputs = vec![grid];
    if cli.plot {
        let nx = cfg.max_neurons.len();
        let rows: Vec<Vec<f64>> = cells.chunks(nx).map(|r| r.iter().map(|c| c.energy).collect()).collect();
        let xs: Vec<f64> = cfg.max_neurons.iter().map(|&n| n as f64).collect();
        let ys: Vec<f64> = cfg.layers.iter().map(|&l| l as f64).collect();
        let p = dir.join("energy.svg");
        write_text(&p, &plot::heatmap("control energy", "max neurons", "layers", &xs, &ys, &rows, false))?;
        outputs.push(p);
    }
    let seeds = cells.iter().map(|c| c.seed).collect();
    write_manifest(&dir, "sweep", &cfg, seeds, cli.workers, &outputs)?;
    let diverged = cells.iter().filter(|c| c.diverged).count();
    println!("{} cells written, {diverged} diverged", cells.len());
    Ok(())
}

fn cmd_musweep(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: experiments::MuSweepConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let rows = experiments::mu_sweep(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/musweep")?;
    let csv = dir.join("musweep.csv");
    write_csv(&csv, &rows)?;
    write_manifest(&dir, "musweep", &cfg, vec![cfg.seed], cli.workers, &[csv])?;
    for r in &rows {
        println!("mu {:>9.2e}  terminal {:.4e}  work {:.6}", r.mu, r.terminal, r.work);
    }
    Ok(())
}

fn cmd_project(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: landscape::ProjectionConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.direction_seed = s;
    }
    let run = landscape::run_projection(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/project")?;
    let csv = dir.join("projection.csv");
    write_csv(&csv, &run.cells)?;
    let mut outputs = vec![csv];
    if cli.plot {
        let p = dir.join("projection.svg");
        let svg = if let Some(beta) = &cfg.beta {
            let rows: Vec<Vec<f64>> = run.cells.chunks(cfg.alpha.count).map(|r| r.iter().map(|c| c.loss).collect()).collect();
            plot::heatmap("projected loss", "alpha", "beta", &cfg.alpha.values(), &beta.values(), &rows, true)
        } else {
            let series = |label, f: fn(&landscape::ProjectionCell) -> f64| Series {
                label,
                points: run.cells.iter().map(|c| (c.alpha, f(c))).collect(),
            };
            plot::line_chart("projection", "alpha", "value", &[series("loss", |c| c.loss), series("mse_u", |c| c.mse_u)], true)
        };
        write_text(&p, &svg)?;
        outputs.push(p);
    }
    #[derive(Serialize)]
    struct Record<'a> {
        run: &'a landscape::ProjectionConfig,
        projection: &'a landscape::ProjectionSpec,
    }
    write_manifest(
        &dir,
        "project",
        &Record { run: &cfg, projection: &run.spec },
        vec![cfg.seed, cfg.direction_seed],
        cli.workers,
        &outputs,
    )?;
    let (l, m, e) = run.center;
    println!("center loss {l:.4e}  mse_u {m:.4e}  energy {e:.6}");
    println!("sharpness {:.4e}", run.sharpness);
    Ok(())
}

fn cmd_compare(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: experiments::ComparisonConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cmp = experiments::protocol_comparison(&cfg)?;
    let dir = out_dir(cli, "out/compare")?;
    let csv = dir.join("comparison.csv");
    write_csv(&csv, &cmp.rows())?;
    let mut outputs = vec![csv];
    if cli.plot {
        let p = dir.join("comparison.svg");
        let series = |r: &experiments::ProtocolRun| Series {
            label: r.label,
            points: r.history.records.iter().map(|e| (e.epoch as f64, e.loss)).collect(),
        };
        write_text(&p, &plot::line_chart("loss", "epoch", "L", &[series(&cmp.bptt), series(&cmp.tbptt)], true))?;
        outputs.push(p);
    }
    write_manifest(&dir, "compare-protocols", &cfg, vec![cfg.seed, derive_seed(cfg.seed, &[1])], cli.workers, &outputs)?;
    println!("oracle energy {:.6}", cmp.oc_energy);
    for r in [&cmp.bptt, &cmp.tbptt] {
        println!(
            "{:<6} loss {:.4e}  energy {:.4}  vjp/epoch {:.0}  s/epoch {:.3e}",
            r.label, r.best_loss, r.best_energy, r.vjp_per_epoch, r.seconds_per_epoch
        );
    }
    Ok(())
}

fn cmd_optimizers(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: experiments::OptimizerStudyConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let runs = experiments::optimizer_study(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/optimizers")?;
    let csv = dir.join("optimizers.csv");
    write_csv(&csv, &runs)?;
    write_manifest(&dir, "optimizers", &cfg, vec![cfg.seed], cli.workers, &[csv])?;
    for r in &runs {
        println!(
            "{:<4} lr {:<5} loss {:.3e}  E/E* {:.4}  mse_u {:.3e}",
            r.optimizer, r.lr, r.loss, r.energy_ratio, r.mse_u
        );
    }
    Ok(())
}

fn cmd_linearize(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: experiments::LinearizationConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let (rows, summary) = experiments::linearization_study(&cfg)?;
    let dir = out_dir(cli, "out/linearize")?;
    let csv = dir.join("linearization.csv");
    write_csv(&csv, &rows)?;
    #[derive(Serialize)]
    struct Record<'a> {
        run: &'a experiments::LinearizationConfig,
        summary: experiments::LinearizationSummary,
    }
    write_manifest(&dir, "linearize", &Record { run: &cfg, summary }, vec![cfg.seed], cli.workers, &[csv])?;
    println!("deviation ratio {:.4}", summary.deviation_ratio);
    println!("residual ratio  {:.4}", summary.residual_ratio);
    Ok(())
}

fn cmd_archscan(cli: &Cli, path: Option<&Path>) -> Result<()> {
    let mut cfg: experiments::ArchScanConfig = load_or_default(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let rows = experiments::architecture_scan(&cfg, cli.workers)?;
    let dir = out_dir(cli, "out/archscan")?;
    let csv = dir.join("archscan.csv");
    write_csv(&csv, &rows)?;
    write_manifest(&dir, "archscan", &cfg, vec![cfg.seed], cli.workers, &[csv])?;
    for r in &rows {
        println!("{:<10} H {:>3}  loss {:.3e}  mse_u {:.3e}", r.activation, r.layers, r.loss, r.mse_u);
    }
    Ok(())
}

/// Loads a saved parameter vector.
pub fn load_theta(path: &Path) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path).map_err(io_err)?;
    ParamVector::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
