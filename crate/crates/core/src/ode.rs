//! Controlled dynamics, forward-Euler integration, and trajectory functionals.

use std::fmt;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{Matrix, NumError, Vector};

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("integration diverged at step {step}: non-finite state")]
    Diverged { step: usize },
    #[error("controller returned {got} values, dynamics expects {expected}")]
    ControlDim { expected: usize, got: usize },
    #[error("{functional} requires {expected} dynamics, trajectory comes from {got}")]
    WrongDynamics {
        functional: &'static str,
        expected: &'static str,
        got: String,
    },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, OdeError>;

/// Coarse family of a dynamical system; functionals that only make sense
/// for one family check it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Linear,
    MovingParticle,
    Custom,
}

/// `ẋ = f(x, u, t)` with analytic partial derivatives.
pub trait ControlledDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn f(&self, x: &[f64], u: &[f64], t: f64) -> Vector;
    /// ∂f/∂x, n×n.
    fn dfdx(&self, x: &[f64], u: &[f64], t: f64) -> Matrix;
    /// ∂f/∂u, n×m.
    fn dfdu(&self, x: &[f64], u: &[f64], t: f64) -> Matrix;
    fn name(&self) -> &str;
    fn kind(&self) -> SystemKind {
        SystemKind::Custom
    }
}

/// `ẋ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDynamics {
    a: Matrix,
    b: Matrix,
}

impl LinearDynamics {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() || b.cols() == 0 {
            return Err(OdeError::InvalidProblem(format!(
                "linear dynamics needs A n×n and B n×m, got A {:?} and B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(LinearDynamics { a, b })
    }

    /// `ẋ = ax + bu`.
    pub fn scalar(a: f64, b: f64) -> Self {
        LinearDynamics {
            a: Matrix::from_row_major(1, 1, vec![a]).unwrap(),
            b: Matrix::from_row_major(1, 1, vec![b]).unwrap(),
        }
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// `(a, b)` when the system is one-dimensional with a scalar input.
    pub fn as_scalar(&self) -> Option<(f64, f64)> {
        (self.a.shape() == (1, 1) && self.b.shape() == (1, 1)).then(|| (self.a[(0, 0)], self.b[(0, 0)]))
    }
}

impl ControlledDynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn control_dim(&self) -> usize {
        self.b.cols()
    }

    fn f(&self, x: &[f64], u: &[f64], _t: f64) -> Vector {
        let ax = self.a.matvec(x).expect("state dimension checked by caller");
        let bu = self.b.matvec(u).expect("control dimension checked by caller");
        ax.add(&bu).expect("both n-vectors")
    }

    fn dfdx(&self, _x: &[f64], _u: &[f64], _t: f64) -> Matrix {
        self.a.clone()
    }

    fn dfdu(&self, _x: &[f64], _u: &[f64], _t: f64) -> Matrix {
        self.b.clone()
    }

    fn name(&self) -> &str {
        "linear"
    }

    fn kind(&self) -> SystemKind {
        SystemKind::Linear
    }
}

/// Particle with friction: state `(x, v)`, `ẋ = v`, `v̇ = −v + u`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MovingParticleDynamics;

impl ControlledDynamics for MovingParticleDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn f(&self, x: &[f64], u: &[f64], _t: f64) -> Vector {
        Vector::from(vec![x[1], -x[1] + u[0]])
    }

    fn dfdx(&self, _x: &[f64], _u: &[f64], _t: f64) -> Matrix {
        Matrix::from_row_major(2, 2, vec![0.0, 1.0, 0.0, -1.0]).unwrap()
    }

    fn dfdu(&self, _x: &[f64], _u: &[f64], _t: f64) -> Matrix {
        Matrix::from_row_major(2, 1, vec![0.0, 1.0]).unwrap()
    }

    fn name(&self) -> &str {
        "moving_particle"
    }

    fn kind(&self) -> SystemKind {
        SystemKind::MovingParticle
    }
}

/// The systems a [`ControlProblem`] can carry.
#[derive(Clone)]
pub enum Dynamics {
    Linear(LinearDynamics),
    MovingParticle(MovingParticleDynamics),
    Custom(Arc<dyn ControlledDynamics>),
}

impl Dynamics {
    fn inner(&self) -> &dyn ControlledDynamics {
        match self {
            Dynamics::Linear(d) => d,
            Dynamics::MovingParticle(d) => d,
            Dynamics::Custom(d) => d.as_ref(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearDynamics> {
        match self {
            Dynamics::Linear(d) => Some(d),
            _ => None,
        }
    }

    /// `(a, b)` for a scalar linear system.
    pub fn scalar_linear(&self) -> Option<(f64, f64)> {
        self.as_linear().and_then(LinearDynamics::as_scalar)
    }

    /// True when `f` does not depend on the state (∂f/∂x ≡ 0 for linear systems).
    pub fn is_state_independent(&self) -> bool {
        self.as_linear().is_some_and(|d| d.a().as_slice().iter().all(|&v| v == 0.0))
    }
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Linear(d) => f.debug_tuple("Linear").field(d).finish(),
            Dynamics::MovingParticle(_) => f.write_str("MovingParticle"),
            Dynamics::Custom(d) => write!(f, "Custom({})", d.name()),
        }
    }
}

impl ControlledDynamics for Dynamics {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner().control_dim()
    }
    fn f(&self, x: &[f64], u: &[f64], t: f64) -> Vector {
        self.inner().f(x, u, t)
    }
    fn dfdx(&self, x: &[f64], u: &[f64], t: f64) -> Matrix {
        self.inner().dfdx(x, u, t)
    }
    fn dfdu(&self, x: &[f64], u: &[f64], t: f64) -> Matrix {
        self.inner().dfdu(x, u, t)
    }
    fn name(&self) -> &str {
        self.inner().name()
    }
    fn kind(&self) -> SystemKind {
        self.inner().kind()
    }
}

/// Steer `x₀` to `x*` over `[0, T]` using `steps` Euler steps.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub dynamics: Dynamics,
    pub x0: Vector,
    pub target: Vector,
    pub horizon: f64,
    pub steps: usize,
}

impl ControlProblem {
    pub fn new(dynamics: Dynamics, x0: Vec<f64>, target: Vec<f64>, horizon: f64, steps: usize) -> Result<Self> {
        let n = dynamics.state_dim();
        if x0.len() != n || target.len() != n {
            return Err(OdeError::InvalidProblem(format!(
                "state dimension is {n}, got x0 of length {} and target of length {}",
                x0.len(),
                target.len()
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(OdeError::InvalidProblem(format!("horizon must be > 0, got {horizon}")));
        }
        if steps == 0 {
            return Err(OdeError::InvalidProblem("steps must be >= 1".into()));
        }
        Ok(ControlProblem {
            dynamics,
            x0: x0.into(),
            target: target.into(),
            horizon,
            steps,
        })
    }

    /// `ẋ = ax + bu` with scalar state.
    pub fn scalar_linear(a: f64, b: f64, x0: f64, target: f64, horizon: f64, steps: usize) -> Result<Self> {
        ControlProblem::new(
            Dynamics::Linear(LinearDynamics::scalar(a, b)),
            vec![x0],
            vec![target],
            horizon,
            steps,
        )
    }

    /// `ẋ = u`.
    pub fn integrator(x0: f64, target: f64, horizon: f64, steps: usize) -> Result<Self> {
        ControlProblem::scalar_linear(0.0, 1.0, x0, target, horizon, steps)
    }

    /// Two-dimensional linear benchmark: `A = [[1,0],[1,0]]`, `B = (1,0)ᵀ`,
    /// from `(0.5, 0.5)` to `(1, −1)` in unit time.
    pub fn linear_2d_benchmark(steps: usize) -> Self {
        let (a, b) = benchmark_2d_matrices();
        ControlProblem::new(
            Dynamics::Linear(LinearDynamics::new(a, b).unwrap()),
            vec![0.5, 0.5],
            vec![1.0, -1.0],
            1.0,
            steps,
        )
        .unwrap()
    }

    /// Moving particle from `(0, 1)` to `(1, 1)` in unit time.
    pub fn moving_particle(steps: usize) -> Self {
        ControlProblem::new(
            Dynamics::MovingParticle(MovingParticleDynamics),
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            1.0,
            steps,
        )
        .unwrap()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// Left-endpoint grid `t_k = kΔt`, k = 0..K−1.
    pub fn control_times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.dt();
        (0..self.steps).map(move |k| k as f64 * dt)
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        ControlProblem {
            steps,
            ..self.clone()
        }
    }
}

/// `A`, `B` of the two-dimensional benchmark flow.
pub fn benchmark_2d_matrices() -> (Matrix, Matrix) {
    (
        Matrix::from_row_major(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
        Matrix::from_row_major(2, 1, vec![1.0, 0.0]).unwrap(),
    )
}

/// One Euler solve: `K+1` states and `K` left-endpoint controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub dt: f64,
    pub kind: SystemKind,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Writes `t, x1..xn, u1..um`; the final row leaves the controls empty.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let n = self.states[0].len();
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wr.write_record(&header)?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![fmt_f64(*t)];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            match self.controls.get(k) {
                Some(u) => row.extend(u.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).unwrap()
    }
}

/// Shortest round-trip representation.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Explicit Euler: `x_{k+1} = x_k + Δt·f(x_k, u_k, t_k)`, `u_k = controller(t_k)`.
pub fn integrate_euler<C>(problem: &ControlProblem, mut controller: C) -> Result<Trajectory>
where
    C: FnMut(f64) -> Vec<f64>,
{
    let dyn_ = &problem.dynamics;
    let m = dyn_.control_dim();
    let dt = problem.dt();
    let k_max = problem.steps;
    let mut times = Vec::with_capacity(k_max + 1);
    let mut states = Vec::with_capacity(k_max + 1);
    let mut controls = Vec::with_capacity(k_max);
    let mut x = problem.x0.clone();
    for k in 0..k_max {
        let t = k as f64 * dt;
        let u = controller(t);
        if u.len() != m {
            return Err(OdeError::ControlDim {
                expected: m,
                got: u.len(),
            });
        }
        let fx = dyn_.f(&x, &u, t);
        let mut next = x.clone();
        next.axpy(dt, &fx)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::Diverged { step: k });
        }
        times.push(t);
        states.push(std::mem::replace(&mut x, next));
        controls.push(Vector::from(u));
    }
    times.push(problem.horizon);
    states.push(x);
    Ok(Trajectory {
        times,
        states,
        controls,
        dt,
        kind: dyn_.kind(),
    })
}

/// `E = ½·Δt·Σ ‖u_k‖²`.
pub fn control_energy(traj: &Trajectory) -> f64 {
    0.5 * traj.dt * traj.controls.iter().map(|u| crate::numkit::dot(u, u)).sum::<f64>()
}

/// `W = Δt·Σ v_k·u_k` for the moving particle.
pub fn work_functional(traj: &Trajectory) -> Result<f64> {
    if traj.kind != SystemKind::MovingParticle {
        return Err(OdeError::WrongDynamics {
            functional: "work",
            expected: "moving_particle",
            got: format!("{:?}", traj.kind),
        });
    }
    Ok(traj.dt * traj.states.iter().zip(&traj.controls).map(|(x, u)| x[1] * u[0]).sum::<f64>())
}

/// `½‖x_K − x*‖²`.
pub fn terminal_loss(traj: &Trajectory, target: &[f64]) -> f64 {
    0.5 * traj
        .final_state()
        .iter()
        .zip(target)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
}

/// `(1/M)·Σ_{i=1}^{M} ‖u*(t_i) − û(t_i)‖²` with `t_i = iT/M`.
pub fn mse_control<U, S>(uhat: U, ustar: S, samples: usize, horizon: f64) -> f64
where
    U: Fn(f64) -> Vec<f64>,
    S: Fn(f64) -> Vec<f64>,
{
    assert!(samples >= 1, "mse_control needs at least one sample");
    let total: f64 = (1..=samples)
        .map(|i| {
            let t = i as f64 * horizon / samples as f64;
            uhat(t).iter().zip(ustar(t)).map(|(a, b)| (b - a).powi(2)).sum::<f64>()
        })
        .sum();
    total / samples as f64
}

/// Time mean and population variance of the control samples (first
/// component per sample, averaged over components for m > 1).
pub fn control_moments(traj: &Trajectory) -> (f64, f64) {
    let m = traj.controls[0].len();
    let k = traj.controls.len() as f64;
    let mut mean_acc = 0.0;
    let mut var_acc = 0.0;
    for j in 0..m {
        let mean = traj.controls.iter().map(|u| u[j]).sum::<f64>() / k;
        let var = traj.controls.iter().map(|u| (u[j] - mean).powi(2)).sum::<f64>() / k;
        mean_acc += mean;
        var_acc += var;
    }
    (mean_acc / m as f64, var_acc / m as f64)
}

/// Violations of the moving-particle constraints `v ≥ 0`, `0 ≤ u ≤ 2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub min_velocity: f64,
    pub min_control: f64,
    pub max_control: f64,
    pub violations: usize,
}

impl ConstraintReport {
    pub fn is_feasible(&self) -> bool {
        self.violations == 0
    }
}

pub fn check_particle_constraints(traj: &Trajectory) -> Result<ConstraintReport> {
    if traj.kind != SystemKind::MovingParticle {
        return Err(OdeError::WrongDynamics {
            functional: "particle constraints",
            expected: "moving_particle",
            got: format!("{:?}", traj.kind),
        });
    }
    let min_velocity = traj.states.iter().map(|x| x[1]).fold(f64::INFINITY, f64::min);
    let min_control = traj.controls.iter().map(|u| u[0]).fold(f64::INFINITY, f64::min);
    let max_control = traj.controls.iter().map(|u| u[0]).fold(f64::NEG_INFINITY, f64::max);
    let violations = traj.states.iter().filter(|x| x[1] < 0.0).count()
        + traj.controls.iter().filter(|u| !(0.0..=2.0).contains(&u[0])).count();
    Ok(ConstraintReport {
        min_velocity,
        min_control,
        max_control,
        violations,
    })
}
