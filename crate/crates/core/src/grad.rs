//! Parameter gradients of trajectory losses: full backpropagation through
//! time via the discrete adjoint of the Euler scheme, the truncated
//! single-time variant, and central finite differences.
//!
//! The loss is `J = ½‖x_K − x*‖² + μ·Δt·Σ_k ℓ(x_k, u_k)` with `ℓ = ½‖u‖²`
//! (energy) or `ℓ = v·u` (work). Its exact gradient follows from the
//! backward recursion
//!
//! ```text
//! λ_K = x_K − x*
//! λ_k = λ_{k+1} + Δt·(∂f/∂x)ᵀ λ_{k+1} + μ·Δt·∂ℓ/∂x
//! ∇θ J = Σ_k Δt · J_û(t_k)ᵀ [ (∂f/∂u)ᵀ λ_{k+1} + μ·∂ℓ/∂u ]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, MlpSpec, NnError, ParamVector, Tape};
use crate::ode::{self, ControlProblem, ControlledDynamics, OdeError, SystemKind, Trajectory};

#[derive(Debug, Error)]
pub enum GradError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("evaluation index {index} out of range for {steps} steps")]
    IndexOutOfRange { index: usize, steps: usize },
    #[error("network output dimension {net} does not match control dimension {control}")]
    OutputDim { net: usize, control: usize },
    #[error("work cost needs moving-particle dynamics")]
    WorkNeedsParticle,
    #[error("negative cost multiplier {0}")]
    NegativeMultiplier(f64),
}

pub type Result<T> = std::result::Result<T, GradError>;

/// Integrated cost added to the terminal loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningCost {
    #[default]
    None,
    /// `μ · ½∫‖u‖²`
    Energy { mu: f64 },
    /// `μ · ∫ v u`
    Work { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSpec {
    pub running: RunningCost,
}

impl LossSpec {
    pub fn terminal() -> Self {
        LossSpec::default()
    }

    pub fn energy(mu: f64) -> Self {
        LossSpec {
            running: RunningCost::Energy { mu },
        }
    }

    pub fn work(mu: f64) -> Self {
        LossSpec {
            running: RunningCost::Work { mu },
        }
    }

    pub fn mu(&self) -> f64 {
        match self.running {
            RunningCost::None => 0.0,
            RunningCost::Energy { mu } | RunningCost::Work { mu } => mu,
        }
    }

    fn validate(&self, problem: &ControlProblem) -> Result<()> {
        let mu = self.mu();
        if mu < 0.0 || !mu.is_finite() {
            return Err(GradError::NegativeMultiplier(mu));
        }
        if matches!(self.running, RunningCost::Work { .. }) && problem.dynamics.kind() != SystemKind::MovingParticle {
            return Err(GradError::WorkNeedsParticle);
        }
        Ok(())
    }

    /// Running-cost value of a trajectory, without μ.
    pub fn running_value(&self, traj: &Trajectory) -> f64 {
        match self.running {
            RunningCost::None => 0.0,
            RunningCost::Energy { .. } => ode::control_energy(traj),
            RunningCost::Work { .. } => ode::work_functional(traj).unwrap_or(f64::NAN),
        }
    }

    /// `μ·∂ℓ/∂u` and `μ·∂ℓ/∂x` at one time step.
    fn running_partials(&self, x: &[f64], u: &[f64]) -> Option<(Vec<f64>, Option<Vec<f64>>)> {
        match self.running {
            RunningCost::None => None,
            RunningCost::Energy { mu } => Some((u.iter().map(|v| mu * v).collect(), None)),
            RunningCost::Work { mu } => Some((vec![mu * x[1]], Some(vec![0.0, mu * u[0]]))),
        }
    }
}

/// How the TBPTT evaluation index is chosen each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `k′ = n mod K`
    #[default]
    Cyclic,
    RandomUniform,
}

/// Downstream state sensitivity handling in the truncated gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TbpttVariant {
    /// Uses `∂L/∂x_K` directly, ignoring how `x` after `t′` depends on `u(t′)`.
    Frozen,
    /// Uses the full adjoint `λ_{k′+1}`: exact single-time term of BPTT.
    #[default]
    Propagated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Bptt,
    Tbptt {
        #[serde(default)]
        schedule: Schedule,
        #[serde(default)]
        variant: TbpttVariant,
    },
}

impl Protocol {
    pub fn tbptt() -> Self {
        Protocol::Tbptt {
            schedule: Schedule::Cyclic,
            variant: TbpttVariant::Propagated,
        }
    }
}

/// Loss value and its pieces for one simulated trajectory.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub terminal: f64,
    pub running: f64,
    pub traj: Trajectory,
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub grad: Vec<f64>,
    pub eval: Evaluation,
    /// Vector–Jacobian products through the controller.
    pub vjp_calls: usize,
}

fn check_dims(problem: &ControlProblem, spec: &MlpSpec) -> Result<()> {
    if spec.output_dim != problem.control_dim() {
        return Err(GradError::OutputDim {
            net: spec.output_dim,
            control: problem.control_dim(),
        });
    }
    Ok(())
}

fn finish_eval(problem: &ControlProblem, loss: &LossSpec, traj: Trajectory) -> Evaluation {
    let terminal = ode::terminal_loss(&traj, &problem.target);
    let running = loss.running_value(&traj);
    Evaluation {
        loss: terminal + loss.mu() * running,
        terminal,
        running,
        traj,
    }
}

/// Simulates the controlled system and evaluates the loss.
pub fn evaluate(problem: &ControlProblem, spec: &MlpSpec, params: &ParamVector, loss: &LossSpec) -> Result<Evaluation> {
    check_dims(problem, spec)?;
    loss.validate(problem)?;
    nn::forward_tape(spec, params, 0.0)?;
    let traj = ode::integrate_euler(problem, |t| {
        nn::forward_unchecked(&params.layout, &params.theta, t).output().to_vec()
    })?;
    Ok(finish_eval(problem, loss, traj))
}

/// Simulates while keeping the layer tape of every step for which `keep(k)`.
fn rollout(
    problem: &ControlProblem,
    spec: &MlpSpec,
    params: &ParamVector,
    keep: impl Fn(usize) -> bool,
) -> Result<(Trajectory, Vec<Option<Tape>>)> {
    check_dims(problem, spec)?;
    nn::forward_tape(spec, params, 0.0)?;
    let mut tapes = Vec::with_capacity(problem.steps);
    let traj = ode::integrate_euler(problem, |t| {
        let tape = nn::forward_unchecked(&params.layout, &params.theta, t);
        let u = tape.output().to_vec();
        let k = tapes.len();
        tapes.push(keep(k).then_some(tape));
        u
    })?;
    Ok((traj, tapes))
}

/// Backward adjoint recursion; returns `λ_{k+1}` for k = 0..K−1 down to `stop`.
fn adjoints(problem: &ControlProblem, traj: &Trajectory, loss: &LossSpec, stop: usize) -> Vec<Vec<f64>> {
    let k_max = traj.steps();
    let dt = traj.dt;
    let dyn_ = &problem.dynamics;
    let mut lam: Vec<f64> = traj
        .final_state()
        .iter()
        .zip(problem.target.iter())
        .map(|(x, y)| x - y)
        .collect();
    // out[k] = λ_{k+1}
    let mut out = vec![Vec::new(); k_max];
    for k in (stop..k_max).rev() {
        out[k] = lam.clone();
        if k == stop {
            break;
        }
        let (x, u, t) = (&traj.states[k], &traj.controls[k], traj.times[k]);
        let fx = dyn_.dfdx(x, u, t);
        let back = fx.tmatvec(&lam).expect("adjoint dimension");
        for (l, b) in lam.iter_mut().zip(back.iter()) {
            *l += dt * b;
        }
        if let Some((_, Some(lx))) = loss.running_partials(x, u) {
            for (l, g) in lam.iter_mut().zip(&lx) {
                *l += dt * g;
            }
        }
    }
    out
}

/// Cotangent `(∂f/∂u)ᵀ λ + μ ∂ℓ/∂u` at step k.
fn control_cotangent(problem: &ControlProblem, traj: &Trajectory, loss: &LossSpec, k: usize, lam: &[f64]) -> Vec<f64> {
    let (x, u, t) = (&traj.states[k], &traj.controls[k], traj.times[k]);
    let fu = problem.dynamics.dfdu(x, u, t);
    let mut ybar = fu.tmatvec(lam).expect("adjoint dimension").into_inner();
    if let Some((lu, _)) = loss.running_partials(x, u) {
        for (y, g) in ybar.iter_mut().zip(lu) {
            *y += g;
        }
    }
    ybar
}

/// Exact gradient of the discretized loss (discrete adjoint); performs one
/// vjp per time step.
pub fn bptt_grad(problem: &ControlProblem, spec: &MlpSpec, params: &ParamVector, loss: &LossSpec) -> Result<GradResult> {
    loss.validate(problem)?;
    let (traj, tapes) = rollout(problem, spec, params, |_| true)?;
    let lams = adjoints(problem, &traj, loss, 0);
    let dt = traj.dt;
    let mut grad = vec![0.0; params.len()];
    let mut vjp_calls = 0;
    for (k, tape) in tapes.iter().enumerate() {
        let ybar = control_cotangent(problem, &traj, loss, k, &lams[k]);
        nn::vjp_with_tape(params, tape.as_ref().unwrap(), &ybar, dt, &mut grad)?;
        vjp_calls += 1;
    }
    Ok(GradResult {
        grad,
        eval: finish_eval(problem, loss, traj),
        vjp_calls,
    })
}

/// Truncated gradient through the control at the single time `t_{k′}`;
/// performs exactly one vjp. The returned value carries the factor Δt.
pub fn tbptt_grad(
    problem: &ControlProblem,
    spec: &MlpSpec,
    params: &ParamVector,
    index: usize,
    variant: TbpttVariant,
    loss: &LossSpec,
) -> Result<GradResult> {
    if index >= problem.steps {
        return Err(GradError::IndexOutOfRange {
            index,
            steps: problem.steps,
        });
    }
    loss.validate(problem)?;
    let (traj, mut tapes) = rollout(problem, spec, params, |k| k == index)?;
    let lam = match variant {
        TbpttVariant::Frozen => traj
            .final_state()
            .iter()
            .zip(problem.target.iter())
            .map(|(x, y)| x - y)
            .collect(),
        TbpttVariant::Propagated => adjoints(problem, &traj, loss, index).swap_remove(index),
    };
    let ybar = control_cotangent(problem, &traj, loss, index, &lam);
    let mut grad = vec![0.0; params.len()];
    let tape = tapes[index].take().unwrap();
    nn::vjp_with_tape(params, &tape, &ybar, traj.dt, &mut grad)?;
    Ok(GradResult {
        grad,
        eval: finish_eval(problem, loss, traj),
        vjp_calls: 1,
    })
}

/// Central differences of an arbitrary scalar function.
pub fn fd_grad_fn<F>(f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let fp = f(&x);
            x[i] = orig - h;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference gradient of the simulated loss.
pub fn fd_grad(problem: &ControlProblem, spec: &MlpSpec, params: &ParamVector, loss: &LossSpec, h: f64) -> Result<Vec<f64>> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(GradError::Nn(NnError::InvalidSpec(format!(
            "finite-difference step {h} outside [1e-8, 1e-4]"
        ))));
    }
    evaluate(problem, spec, params, loss)?;
    let failure = std::cell::RefCell::new(None);
    let g = fd_grad_fn(
        |theta| {
            let p = ParamVector {
                layout: params.layout.clone(),
                theta: theta.to_vec(),
            };
            match evaluate(problem, spec, &p, loss) {
                Ok(e) => e.loss,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e.to_string());
                    f64::NAN
                }
            }
        },
        &params.theta,
        h,
    );
    match failure.into_inner() {
        Some(msg) => Err(GradError::Nn(NnError::InvalidSpec(msg))),
        None => Ok(g),
    }
}

/// `∇θ E = Δt Σ_k J_û(t_k)ᵀ u_k`, the gradient of the discrete control energy.
pub fn energy_grad(spec: &MlpSpec, params: &ParamVector, traj: &Trajectory) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    for (t, u) in traj.times.iter().zip(&traj.controls) {
        let tape = nn::forward_tape(spec, params, *t)?;
        nn::vjp_with_tape(params, &tape, u, traj.dt, &mut grad)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, InitScheme};
    use crate::numkit::SeededRng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = crate::numkit::norm(b).max(crate::numkit::norm(a)).max(1e-300);
        diff / scale
    }

    #[test]
    fn single_neuron_gradient_near_closed_form() {
        let p = ControlProblem::integrator(0.0, -1.0, 1.0, 100).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.0, 0.0]).unwrap();
        let g = bptt_grad(&p, &spec, &params, &LossSpec::terminal()).unwrap();
        assert!((g.grad[0] - 0.5).abs() / 0.5 < 0.02, "{:?}", g.grad);
        assert!((g.grad[1] - 1.0).abs() < 0.02);
        assert_eq!(g.vjp_calls, 100);
    }

    #[test]
    fn zero_gradient_at_target() {
        let p = ControlProblem::integrator(0.0, -1.0, 1.0, 50).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.0, -1.0]).unwrap();
        let g = bptt_grad(&p, &spec, &params, &LossSpec::terminal()).unwrap();
        assert!(g.grad.iter().all(|v| v.abs() < 1e-14));
        for variant in [TbpttVariant::Frozen, TbpttVariant::Propagated] {
            let t = tbptt_grad(&p, &spec, &params, 7, variant, &LossSpec::terminal()).unwrap();
            assert!(t.grad.iter().all(|v| v.abs() < 1e-14));
        }
        let fd = fd_grad(&p, &spec, &params, &LossSpec::terminal(), 1e-6).unwrap();
        assert!(crate::numkit::norm(&fd) < 1e-6);
    }

    #[test]
    fn fd_of_quadratic() {
        let theta = [0.3, -1.2, 2.0];
        let h = 1e-5;
        let g = fd_grad_fn(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(), &theta, h);
        for (a, b) in g.iter().zip(theta) {
            assert!((a - b).abs() < h * h * 10.0);
        }
    }

    #[test]
    fn fd_step_is_validated() {
        let p = ControlProblem::integrator(0.0, -1.0, 1.0, 10).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.0, 0.0]).unwrap();
        assert!(fd_grad(&p, &spec, &params, &LossSpec::terminal(), 1e-2).is_err());
    }

    #[test]
    fn elu_net_matches_finite_differences() {
        let p = ControlProblem::scalar_linear(1.0, 1.0, 0.0, 1.0, 1.0, 100).unwrap();
        let spec = MlpSpec::new(&[6, 6], Activation::elu(), 1, true);
        let params = init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(2)).unwrap();
        for loss in [LossSpec::terminal(), LossSpec::energy(0.1)] {
            let g = bptt_grad(&p, &spec, &params, &loss).unwrap();
            let fd = fd_grad(&p, &spec, &params, &loss, 1e-6).unwrap();
            assert!(rel_err(&g.grad, &fd) < 1e-5, "{}", rel_err(&g.grad, &fd));
        }
    }

    #[test]
    fn work_cost_gradient_matches_finite_differences() {
        let p = ControlProblem::moving_particle(50);
        let spec = MlpSpec::new(&[4, 4], Activation::Tanh, 1, true);
        let params = init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(4)).unwrap();
        let loss = LossSpec::work(0.1);
        let g = bptt_grad(&p, &spec, &params, &loss).unwrap();
        let fd = fd_grad(&p, &spec, &params, &loss, 1e-6).unwrap();
        assert!(rel_err(&g.grad, &fd) < 1e-5);
    }

    #[test]
    fn work_cost_needs_particle() {
        let p = ControlProblem::integrator(0.0, 1.0, 1.0, 10).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            bptt_grad(&p, &spec, &params, &LossSpec::work(0.1)),
            Err(GradError::WorkNeedsParticle)
        ));
    }

    #[test]
    fn tbptt_integrator_hand_value() {
        let p = ControlProblem::integrator(0.0, -1.0, 1.0, 20).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.4, 0.2]).unwrap();
        let k = 13;
        let frozen = tbptt_grad(&p, &spec, &params, k, TbpttVariant::Frozen, &LossSpec::terminal()).unwrap();
        let prop = tbptt_grad(&p, &spec, &params, k, TbpttVariant::Propagated, &LossSpec::terminal()).unwrap();
        assert_eq!(frozen.grad, prop.grad);
        let dt = p.dt();
        let tk = k as f64 * dt;
        let resid = frozen.eval.traj.final_state()[0] + 1.0;
        let want = [dt * tk * resid, dt * resid];
        for (a, b) in frozen.grad.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(frozen.vjp_calls, 1);
    }

    #[test]
    fn tbptt_terms_sum_to_bptt() {
        let p = ControlProblem::scalar_linear(1.0, 1.0, 0.0, 1.0, 1.0, 40).unwrap();
        let spec = MlpSpec::new(&[5], Activation::Tanh, 1, true);
        let params = init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(8)).unwrap();
        let full = bptt_grad(&p, &spec, &params, &LossSpec::terminal()).unwrap();
        let mut sum = vec![0.0; params.len()];
        for k in 0..p.steps {
            let g = tbptt_grad(&p, &spec, &params, k, TbpttVariant::Propagated, &LossSpec::terminal()).unwrap();
            for (s, v) in sum.iter_mut().zip(g.grad) {
                *s += v;
            }
        }
        assert!(rel_err(&sum, &full.grad) < 1e-10);
    }

    #[test]
    fn tbptt_index_checked() {
        let p = ControlProblem::integrator(0.0, 1.0, 1.0, 10).unwrap();
        let spec = MlpSpec::linear_neuron();
        let params = ParamVector::new(&spec, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            tbptt_grad(&p, &spec, &params, 10, TbpttVariant::Propagated, &LossSpec::terminal()),
            Err(GradError::IndexOutOfRange { index: 10, steps: 10 })
        ));
    }

    #[test]
    fn energy_grad_matches_fd() {
        let p = ControlProblem::scalar_linear(1.0, 1.0, 0.0, 1.0, 1.0, 30).unwrap();
        let spec = MlpSpec::new(&[3], Activation::elu(), 1, true);
        let params = init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(1)).unwrap();
        let ev = evaluate(&p, &spec, &params, &LossSpec::terminal()).unwrap();
        let g = energy_grad(&spec, &params, &ev.traj).unwrap();
        let fd = fd_grad_fn(
            |th| {
                let q = params.with_theta(th.to_vec()).unwrap();
                ode::control_energy(&evaluate(&p, &spec, &q, &LossSpec::terminal()).unwrap().traj)
            },
            &params.theta,
            1e-6,
        );
        assert!(rel_err(&g, &fd) < 1e-6);
    }
}
