//! Random one- and two-direction projections of the loss, control MSE and
//! control energy around a trained parameter vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, NetworkSpec, ProblemSpec};
use crate::experiments::{self, control_mse, par_map, Axis, ExperimentError};
use crate::grad::{self, LossSpec, Protocol};
use crate::nn::{self, MlpSpec, NnError, ParamVector};
use crate::numkit::{derive_seed, SeededRng};
use crate::oc_analytic::OcSolution;
use crate::ode::{self, ControlProblem};
use crate::optim::{self, OptimizerConfig, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("invalid projection: {0}")]
    Invalid(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, LandscapeError>;

/// `θ = θ* + αδ + βd₂` over a grid of `(α, β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub center: Vec<f64>,
    pub delta: Vec<f64>,
    pub d2: Option<Vec<f64>>,
    pub alpha: Axis,
    pub beta: Option<Axis>,
    pub direction_seed: u64,
}

impl ProjectionSpec {
    /// Draws i.i.d. standard normal directions with `seed`.
    pub fn random(center: Vec<f64>, alpha: Axis, beta: Option<Axis>, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let delta = rng.normal_vec(center.len());
        let d2 = beta.as_ref().map(|_| rng.normal_vec(center.len()));
        ProjectionSpec {
            center,
            delta,
            d2,
            alpha,
            beta,
            direction_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.center.len();
        if n == 0 || self.delta.len() != n || self.d2.as_ref().is_some_and(|d| d.len() != n) {
            return Err(LandscapeError::Invalid("directions must match the center length".into()));
        }
        if self.beta.is_some() != self.d2.is_some() {
            return Err(LandscapeError::Invalid("a beta axis needs a second direction".into()));
        }
        for axis in std::iter::once(&self.alpha).chain(self.beta.as_ref()) {
            axis.validate()?;
            if axis.count < 3 {
                return Err(LandscapeError::Invalid(format!("axis {} needs at least 3 points", axis.name)));
            }
        }
        Ok(())
    }

    /// `(α, β)` pairs, `β` outer; `β = 0` throughout for 1-D projections.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let alphas = self.alpha.values();
        let betas = self.beta.as_ref().map_or(vec![0.0], Axis::values);
        betas
            .into_iter()
            .flat_map(|b| alphas.iter().map(move |&a| (a, b)))
            .collect()
    }

    pub fn theta_at(&self, alpha: f64, beta: f64) -> Vec<f64> {
        let mut th: Vec<f64> = self.center.iter().zip(&self.delta).map(|(c, d)| c + alpha * d).collect();
        if let Some(d2) = &self.d2 {
            for (t, d) in th.iter_mut().zip(d2) {
                *t += beta * d;
            }
        }
        th
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCell {
    pub alpha: f64,
    pub beta: f64,
    pub loss: f64,
    pub mse_u: f64,
    pub energy: f64,
}

/// What a single parameter vector scores.
pub fn evaluate_point(
    problem: &ControlProblem,
    mlp: &MlpSpec,
    params: &ParamVector,
    loss: &LossSpec,
    oc: &OcSolution,
    samples: usize,
) -> (f64, f64, f64) {
    match grad::evaluate(problem, mlp, params, loss) {
        Ok(ev) => (ev.loss, control_mse(mlp, params, oc, samples), ode::control_energy(&ev.traj)),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    }
}

pub fn project(
    spec: &ProjectionSpec,
    problem: &ControlProblem,
    mlp: &MlpSpec,
    loss: &LossSpec,
    oc: &OcSolution,
    samples: usize,
    workers: usize,
) -> Result<Vec<ProjectionCell>> {
    spec.validate()?;
    if samples == 0 {
        return Err(LandscapeError::Invalid("MSE needs at least one sample".into()));
    }
    let base = ParamVector::new(mlp, spec.center.clone())?;
    let cells = par_map(&spec.points(), workers, |&(alpha, beta)| {
        let p = base.with_theta(spec.theta_at(alpha, beta)).expect("length checked");
        let (l, m, e) = evaluate_point(problem, mlp, &p, loss, oc, samples);
        ProjectionCell {
            alpha,
            beta,
            loss: l,
            mse_u: m,
            energy: e,
        }
    })?;
    Ok(cells)
}

/// Second difference at the middle of an odd-length uniform grid, over `h²`.
pub fn sharpness_1d(values: &[f64], spacing: f64) -> Result<f64> {
    if values.len() < 3 || values.len().is_multiple_of(2) || !(spacing > 0.0) {
        return Err(LandscapeError::Invalid("sharpness needs an odd grid of at least 3 points".into()));
    }
    let c = values.len() / 2;
    Ok((values[c + 1] - 2.0 * values[c] + values[c - 1]) / (spacing * spacing))
}

/// The `β = 0` row, in `α` order.
pub fn center_row(cells: &[ProjectionCell]) -> Vec<ProjectionCell> {
    cells.iter().copied().filter(|c| c.beta == 0.0).collect()
}

/// Whether `L(0) ≤ L(α)` for every grid `α` with `|α| ≤ radius` on the `β = 0` row.
pub fn is_local_min(cells: &[ProjectionCell], radius: f64) -> bool {
    let row = center_row(cells);
    let Some(center) = row.iter().find(|c| c.alpha == 0.0) else {
        return false;
    };
    row.iter()
        .filter(|c| c.alpha.abs() <= radius)
        .all(|c| center.loss <= c.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub direction_seed: u64,
    pub alpha: Axis,
    #[serde(default)]
    pub beta: Option<Axis>,
    pub mse_samples: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        let opt = experiments::OptimizerStudyConfig::default();
        ProjectionConfig {
            problem: opt.problem,
            network: opt.network,
            optimizer: OptimizerConfig::adam(0.15),
            epochs: 1000,
            seed: opt.seed,
            direction_seed: 77,
            alpha: Axis::new("alpha", -0.4, 0.4, 101),
            beta: None,
            mse_samples: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionRun {
    pub theta_star: Vec<f64>,
    pub spec: ProjectionSpec,
    pub cells: Vec<ProjectionCell>,
    pub sharpness: f64,
    /// Values at `θ*` from a direct evaluation.
    pub center: (f64, f64, f64),
}

/// Trains to `θ*`, then projects around it.
pub fn run_projection(cfg: &ProjectionConfig, workers: usize) -> Result<ProjectionRun> {
    if cfg.epochs == 0 {
        return Err(LandscapeError::Invalid("training needs epochs >= 1".into()));
    }
    let problem = cfg.problem.build()?;
    let oc = cfg.problem.oracle()?;
    let mlp = cfg.network.mlp(problem.control_dim())?;
    let theta0 = nn::init_params(&mlp, cfg.network.init, &mut SeededRng::new(cfg.seed))?;
    let tc = TrainConfig::new(Protocol::Bptt, cfg.optimizer, cfg.epochs);
    let out = optim::train(&problem, &mlp, &theta0, &tc, &mut SeededRng::new(derive_seed(cfg.seed, &[1])))?;
    project_around(cfg, &problem, &mlp, &oc, &out.theta_best, workers)
}

/// Projects around a given `θ*` with the config's directions and grid.
pub fn project_around(
    cfg: &ProjectionConfig,
    problem: &ControlProblem,
    mlp: &MlpSpec,
    oc: &OcSolution,
    theta_star: &ParamVector,
    workers: usize,
) -> Result<ProjectionRun> {
    let spec = ProjectionSpec::random(theta_star.theta.clone(), cfg.alpha.clone(), cfg.beta.clone(), cfg.direction_seed);
    let loss = LossSpec::terminal();
    let cells = project(&spec, problem, mlp, &loss, oc, cfg.mse_samples, workers)?;
    let row: Vec<f64> = center_row(&cells).iter().map(|c| c.loss).collect();
    let sharpness = sharpness_1d(&row, cfg.alpha.spacing())?;
    let center = evaluate_point(problem, mlp, theta_star, &loss, oc, cfg.mse_samples);
    Ok(ProjectionRun {
        theta_star: theta_star.theta.clone(),
        spec,
        cells,
        sharpness,
        center,
    })
}
