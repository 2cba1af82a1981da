//! Steepest descent and Adam, the epoch-budgeted training loop, and the
//! per-epoch recorders used to study implicit energy regularization.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{self, GradError, GradResult, LossSpec, Protocol, Schedule};
use crate::nn::{self, MlpSpec, NnError, ParamVector};
use crate::numkit::{dot, norm, SeededRng};
use crate::ode::{ControlProblem, OdeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: Box<TrainHistory>,
    },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn default_beta1() -> f64 {
    ADAM_BETA1
}
fn default_beta2() -> f64 {
    ADAM_BETA2
}
fn default_eps() -> f64 {
    ADAM_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sd(lr: f64) -> Self {
        OptimizerConfig::Sd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {lr}"));
        }
        if let OptimizerConfig::Adam { beta1, beta2, eps, .. } = *self {
            for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return bad(format!("{name} must lie in [0, 1), got {b}"));
                }
            }
            if !(eps > 0.0) {
                return bad(format!("eps must be positive, got {eps}"));
            }
        }
        Ok(())
    }
}

/// `θ − η·g`
pub fn sd_step(theta: &[f64], grad: &[f64], lr: f64) -> Vec<f64> {
    theta.iter().zip(grad).map(|(t, g)| t - lr * g).collect()
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update; advances `state` in place.
pub fn adam_step(state: &mut AdamState, theta: &[f64], grad: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Vec<f64> {
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    theta
        .iter()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|((t, g), (m, v))| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            t - lr * mhat / (vhat.sqrt() + eps)
        })
        .collect()
}

enum Stepper {
    Sd(f64),
    Adam {
        state: AdamState,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Stepper {
    fn new(cfg: &OptimizerConfig, n: usize) -> Self {
        match *cfg {
            OptimizerConfig::Sd { lr } => Stepper::Sd(lr),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Stepper::Adam {
                state: AdamState::new(n),
                lr,
                beta1,
                beta2,
                eps,
            },
        }
    }

    fn step(&mut self, theta: &[f64], grad: &[f64]) -> Vec<f64> {
        match self {
            Stepper::Sd(lr) => sd_step(theta, grad, *lr),
            Stepper::Adam {
                state,
                lr,
                beta1,
                beta2,
                eps,
            } => adam_step(state, theta, grad, *lr, *beta1, *beta2, *eps),
        }
    }
}

/// Weights of the weighted control change `ΔÛ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaUWeights {
    /// `e^{−at}` over time and `e^{−aT}` in the prediction.
    #[default]
    Continuous,
    /// `(1 + aΔt)^{−(k+1)}` and `(1 + aΔt)^{−K}`: the Euler scheme's own gain,
    /// which makes the linearization error the only mismatch.
    Discrete,
}

/// Which optional diagnostics `train` computes each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecorderFlags {
    /// Weighted control change, direct and linearized (scalar linear systems only).
    #[serde(default)]
    pub delta_u: bool,
    #[serde(default)]
    pub delta_u_weights: DeltaUWeights,
    /// `(∇E)ᵀ∇L` and the cosine between the two gradients.
    #[serde(default)]
    pub energy_identity: bool,
    /// Store θ every `s` epochs (and at the last one).
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss at the parameters of this epoch, before the update.
    pub loss: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub delta_u_direct: Option<f64>,
    pub delta_u_pred: Option<f64>,
    pub e_dot_l: Option<f64>,
    pub cos_angle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub lr: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Epoch with the smallest recorded loss (first one on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        self.records
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .map(|r| r.epoch)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "epoch",
            "loss",
            "energy",
            "grad_norm",
            "delta_u_direct",
            "delta_u_pred",
            "e_dot_l",
            "cos_angle",
        ])?;
        let opt = |v: Option<f64>| v.map(crate::ode::fmt_f64).unwrap_or_default();
        for r in &self.records {
            wr.write_record([
                r.epoch.to_string(),
                crate::ode::fmt_f64(r.loss),
                crate::ode::fmt_f64(r.energy),
                crate::ode::fmt_f64(r.grad_norm),
                opt(r.delta_u_direct),
                opt(r.delta_u_pred),
                opt(r.e_dot_l),
                opt(r.cos_angle),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub protocol: Protocol,
    pub optimizer: OptimizerConfig,
    pub loss: LossSpec,
    pub epochs: usize,
    pub recorders: RecorderFlags,
}

impl TrainConfig {
    pub fn new(protocol: Protocol, optimizer: OptimizerConfig, epochs: usize) -> Self {
        TrainConfig {
            protocol,
            optimizer,
            loss: LossSpec::terminal(),
            epochs,
            recorders: RecorderFlags::default(),
        }
    }

    pub fn with_loss(mut self, loss: LossSpec) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_recorders(mut self, recorders: RecorderFlags) -> Self {
        self.recorders = recorders;
        self
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub theta_best: ParamVector,
    pub theta_final: ParamVector,
    pub best_epoch: usize,
    pub vjp_calls: usize,
}

/// `∫₀ᵀ e^{−at}(û(t; θ_next) − û(t; θ_prev)) dt` by a K-point left Riemann sum.
pub fn delta_u_weighted(
    spec: &MlpSpec,
    prev: &ParamVector,
    next: &ParamVector,
    a: f64,
    horizon: f64,
    steps: usize,
) -> std::result::Result<f64, NnError> {
    delta_u_weighted_with(spec, prev, next, a, horizon, steps, DeltaUWeights::Continuous)
}

pub fn delta_u_weighted_with(
    spec: &MlpSpec,
    prev: &ParamVector,
    next: &ParamVector,
    a: f64,
    horizon: f64,
    steps: usize,
    weights: DeltaUWeights,
) -> std::result::Result<f64, NnError> {
    let dt = horizon / steps as f64;
    let mut acc = 0.0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let du = nn::forward(spec, next, t)?[0] - nn::forward(spec, prev, t)?[0];
        let w = match weights {
            DeltaUWeights::Continuous => (-a * t).exp(),
            DeltaUWeights::Discrete => (1.0 + a * dt).powi(-(k as i32 + 1)),
        };
        acc += w * du;
    }
    Ok(acc * dt)
}

/// Linearized weighted control change `−η⁻¹ b⁻¹ e^{−aT} ‖Δθ‖² / (∂L/∂x(T))`.
pub fn delta_u_predicted(lr: f64, b: f64, a: f64, horizon: f64, step_sq: f64, dl_dx: f64) -> f64 {
    -step_sq * (-a * horizon).exp() / (lr * b * dl_dx)
}

/// [`delta_u_predicted`] with the decay factor matching `weights` on a K-step grid.
pub fn delta_u_predicted_with(
    lr: f64,
    b: f64,
    a: f64,
    horizon: f64,
    steps: usize,
    step_sq: f64,
    dl_dx: f64,
    weights: DeltaUWeights,
) -> f64 {
    match weights {
        DeltaUWeights::Continuous => delta_u_predicted(lr, b, a, horizon, step_sq, dl_dx),
        DeltaUWeights::Discrete => {
            let decay = (1.0 + a * horizon / steps as f64).powi(-(steps as i32));
            -step_sq * decay / (lr * b * dl_dx)
        }
    }
}

/// `E⁽ⁿ⁺¹⁾ − E⁽ⁿ⁾ + η(∇E)ᵀ∇L`; `None` without the energy recorder or at the last epoch.
pub fn energy_identity_residual(history: &TrainHistory, epoch: usize) -> Option<f64> {
    let cur = history.records.get(epoch)?;
    let next = history.records.get(epoch + 1)?;
    Some(next.energy - cur.energy + history.lr * cur.e_dot_l?)
}

fn is_finite_all(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs `epochs` gradient steps from `theta0`. `rng` drives the random
/// TBPTT schedule only.
pub fn train(
    problem: &ControlProblem,
    spec: &MlpSpec,
    theta0: &ParamVector,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    cfg.optimizer.validate()?;
    if cfg.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
    }
    if cfg.recorders.snapshot_every == Some(0) {
        return Err(TrainError::InvalidConfig("snapshot interval must be positive".into()));
    }
    let scalar = problem.dynamics.scalar_linear();
    let mut theta = theta0.clone();
    let mut stepper = Stepper::new(&cfg.optimizer, theta.len());
    let mut history = TrainHistory {
        lr: cfg.optimizer.lr(),
        ..Default::default()
    };
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut vjp_calls = 0;
    let k_steps = problem.steps;

    for epoch in 0..cfg.epochs {
        let step = match cfg.protocol {
            Protocol::Bptt => grad::bptt_grad(problem, spec, &theta, &cfg.loss),
            Protocol::Tbptt { schedule, variant } => {
                let k = match schedule {
                    Schedule::Cyclic => epoch % k_steps,
                    Schedule::RandomUniform => rng.below(k_steps),
                };
                grad::tbptt_grad(problem, spec, &theta, k, variant, &cfg.loss)
            }
        };
        let GradResult { grad: g, eval, vjp_calls: calls } = match step {
            Ok(r) => r,
            Err(GradError::Ode(OdeError::Diverged { step })) => {
                return Err(TrainError::Diverged {
                    epoch,
                    reason: format!("state blew up at step {step}"),
                    history: Box::new(history),
                })
            }
            Err(e) => return Err(e.into()),
        };
        vjp_calls += calls;
        if !eval.loss.is_finite() || !is_finite_all(&g) {
            return Err(TrainError::Diverged {
                epoch,
                reason: "non-finite loss or gradient".into(),
                history: Box::new(history),
            });
        }
        let energy = crate::ode::control_energy(&eval.traj);
        let grad_norm = norm(&g);

        let (e_dot_l, cos_angle) = if cfg.recorders.energy_identity {
            let ge = grad::energy_grad(spec, &theta, &eval.traj)?;
            let d = dot(&ge, &g);
            let denom = norm(&ge) * grad_norm;
            (Some(d), Some(if denom > 0.0 { d / denom } else { 0.0 }))
        } else {
            (None, None)
        };

        let next = theta.with_theta(stepper.step(&theta.theta, &g))?;

        let (delta_u_direct, delta_u_pred) = match (cfg.recorders.delta_u, scalar) {
            (true, Some((a, b))) => {
                let weights = cfg.recorders.delta_u_weights;
                let direct = delta_u_weighted_with(spec, &theta, &next, a, problem.horizon, k_steps, weights)?;
                let step_sq: f64 = theta.theta.iter().zip(&next.theta).map(|(p, q)| (q - p).powi(2)).sum();
                let dl_dx = eval.traj.final_state()[0] - problem.target[0];
                let pred = delta_u_predicted_with(history.lr, b, a, problem.horizon, k_steps, step_sq, dl_dx, weights);
                (Some(direct), Some(pred))
            }
            _ => (None, None),
        };

        if let Some(s) = cfg.recorders.snapshot_every {
            if epoch % s == 0 || epoch + 1 == cfg.epochs {
                history.snapshots.push((epoch, theta.theta.clone()));
            }
        }
        if best.as_ref().is_none_or(|(l, _, _)| eval.loss < *l) {
            best = Some((eval.loss, epoch, theta.theta.clone()));
        }
        history.records.push(EpochRecord {
            epoch,
            loss: eval.loss,
            energy,
            grad_norm,
            delta_u_direct,
            delta_u_pred,
            e_dot_l,
            cos_angle,
        });
        theta = next;
    }

    let (_, best_epoch, best_theta) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        theta_best: theta0.with_theta(best_theta)?,
        theta_final: theta,
        best_epoch,
        history,
        vjp_calls,
    })
}
