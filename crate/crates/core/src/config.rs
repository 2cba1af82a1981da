//! Serializable descriptions of problems and networks shared by the
//! experiment drivers, the command line and run manifests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, InitScheme, MlpSpec, NnError};
use crate::numkit::Matrix;
use crate::oc_analytic::{self, OcError, OcSolution};
use crate::ode::{self, ControlProblem, Dynamics, LinearDynamics, OdeError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Oc(#[from] OcError),
    #[error("invalid matrix: {0}")]
    Matrix(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

pub const DEFAULT_STEPS: usize = 100;

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn one() -> f64 {
    1.0
}

/// A controlled system with its boundary data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `ẋ = u`
    Integrator {
        x0: f64,
        target: f64,
        #[serde(default = "one")]
        horizon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// `ẋ = ax + bu`
    ScalarLinear {
        a: f64,
        b: f64,
        x0: f64,
        target: f64,
        #[serde(default = "one")]
        horizon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// `ẋ = Ax + Bu` with row-major matrices.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        x0: Vec<f64>,
        target: Vec<f64>,
        #[serde(default = "one")]
        horizon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// The two-dimensional benchmark flow from (0.5, 0.5) to (1, −1).
    Benchmark2d {
        #[serde(default = "default_steps")]
        steps: usize,
    },
    /// Particle with friction from (0, 1) to (1, 1).
    MovingParticle {
        #[serde(default = "default_steps")]
        steps: usize,
    },
}

impl ProblemSpec {
    pub fn time_dependent() -> Self {
        ProblemSpec::ScalarLinear {
            a: 1.0,
            b: 1.0,
            x0: 0.0,
            target: 1.0,
            horizon: 1.0,
            steps: DEFAULT_STEPS,
        }
    }

    pub fn constant() -> Self {
        ProblemSpec::Integrator {
            x0: 0.0,
            target: -1.0,
            horizon: 1.0,
            steps: DEFAULT_STEPS,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn steps(&self) -> usize {
        match *self {
            ProblemSpec::Integrator { steps, .. }
            | ProblemSpec::ScalarLinear { steps, .. }
            | ProblemSpec::Linear { steps, .. }
            | ProblemSpec::Benchmark2d { steps }
            | ProblemSpec::MovingParticle { steps } => steps,
        }
    }

    pub fn build(&self) -> Result<ControlProblem> {
        Ok(match self {
            ProblemSpec::Integrator { x0, target, horizon, steps } => {
                ControlProblem::integrator(*x0, *target, *horizon, *steps)?
            }
            ProblemSpec::ScalarLinear {
                a,
                b,
                x0,
                target,
                horizon,
                steps,
            } => ControlProblem::scalar_linear(*a, *b, *x0, *target, *horizon, *steps)?,
            ProblemSpec::Linear {
                a,
                b,
                x0,
                target,
                horizon,
                steps,
            } => {
                let am = Matrix::from_rows(a).map_err(|e| ConfigError::Matrix(e.to_string()))?;
                let bm = Matrix::from_rows(b).map_err(|e| ConfigError::Matrix(e.to_string()))?;
                let dynamics = Dynamics::Linear(LinearDynamics::new(am, bm)?);
                ControlProblem::new(dynamics, x0.clone(), target.clone(), *horizon, *steps)?
            }
            ProblemSpec::Benchmark2d { steps } => {
                check_steps(*steps)?;
                ControlProblem::linear_2d_benchmark(*steps)
            }
            ProblemSpec::MovingParticle { steps } => {
                check_steps(*steps)?;
                ControlProblem::moving_particle(*steps)
            }
        })
    }

    /// Closed-form optimal control, when one is known.
    pub fn oracle(&self) -> Result<OcSolution> {
        Ok(match self {
            ProblemSpec::Integrator { x0, target, horizon, .. } => oc_analytic::constant_oc(*x0, *target, *horizon)?,
            ProblemSpec::ScalarLinear {
                a,
                b,
                x0,
                target,
                horizon,
                ..
            } => {
                if *a == 0.0 {
                    if *b == 0.0 {
                        return Err(OcError::ZeroGain.into());
                    }
                    let base = oc_analytic::constant_oc(*x0, *target, *horizon)?;
                    let gain = *b;
                    let u = base.u_star.clone();
                    oc_analytic::OcSolution {
                        u_star: std::sync::Arc::new(move |t| u(t).into_iter().map(|v| v / gain).collect()),
                        energy: base.energy / (gain * gain),
                        ..base
                    }
                } else {
                    oc_analytic::scalar_linear_oc(*a, *b, *x0, *target, *horizon)?
                }
            }
            ProblemSpec::Linear { .. } | ProblemSpec::Benchmark2d { .. } => {
                let p = self.build()?;
                let lin = p.dynamics.as_linear().expect("linear dynamics");
                oc_analytic::linear_nd_oc(lin.a(), lin.b(), &p.x0, &p.target, p.horizon, 10_000)?
            }
            ProblemSpec::MovingParticle { .. } => oc_analytic::moving_particle_oc(),
        })
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        Err(ConfigError::Invalid("steps must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn yes() -> bool {
    true
}

/// Fully connected controller architecture plus its initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default = "InitScheme::fan_in_uniform")]
    pub init: InitScheme,
}

impl NetworkSpec {
    pub fn mlp(&self, output_dim: usize) -> Result<MlpSpec> {
        let spec = MlpSpec::new(&self.hidden, self.activation, output_dim, self.bias);
        spec.validate()?;
        Ok(spec)
    }
}

/// `E_T` of the problem's analytic solution sampled on the problem grid.
pub fn sampled_oracle_energy(problem: &ControlProblem, oc: &OcSolution) -> Result<f64> {
    let traj = ode::integrate_euler(problem, |t| oc.u(t))?;
    Ok(ode::control_energy(&traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_problem_roundtrip() {
        let text = "kind = \"scalar_linear\"\na = 1.0\nb = 1.0\nx0 = 0.0\ntarget = 1.0\n";
        let p: ProblemSpec = toml::from_str(text).unwrap();
        assert_eq!(p, ProblemSpec::time_dependent());
        let back: ProblemSpec = toml::from_str(&toml::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(toml::from_str::<ProblemSpec>("kind = \"integrator\"\nx0 = 0.0\ntarget = 1.0\nbogus = 1\n").is_err());
    }

    #[test]
    fn every_problem_builds_with_oracle() {
        let specs = [
            ProblemSpec::constant(),
            ProblemSpec::time_dependent(),
            ProblemSpec::Benchmark2d { steps: 100 },
            ProblemSpec::MovingParticle { steps: 100 },
            ProblemSpec::Linear {
                a: vec![vec![0.0]],
                b: vec![vec![1.0]],
                x0: vec![0.0],
                target: vec![2.0],
                horizon: 1.0,
                steps: 50,
            },
        ];
        for s in specs {
            let p = s.build().unwrap();
            assert_eq!(p.steps, s.steps());
            let oc = s.oracle().unwrap();
            assert!(oc.energy.is_finite());
        }
    }

    #[test]
    fn zero_drift_oracle_falls_back_to_constant() {
        let s = ProblemSpec::ScalarLinear {
            a: 0.0,
            b: 2.0,
            x0: 0.0,
            target: 1.0,
            horizon: 1.0,
            steps: 10,
        };
        let oc = s.oracle().unwrap();
        assert_eq!(oc.u(0.3), vec![0.5]);
        assert_eq!(oc.energy, 0.125);
    }

    #[test]
    fn bad_problems_rejected() {
        assert!(ProblemSpec::MovingParticle { steps: 0 }.build().is_err());
        let s = ProblemSpec::Linear {
            a: vec![vec![0.0, 1.0]],
            b: vec![vec![1.0]],
            x0: vec![0.0],
            target: vec![1.0],
            horizon: 1.0,
            steps: 10,
        };
        assert!(s.build().is_err());
    }

    #[test]
    fn network_spec_defaults() {
        let n: NetworkSpec = toml::from_str("hidden = [6, 6]\nactivation = \"elu\"\n").unwrap();
        assert!(n.bias);
        assert_eq!(n.init, InitScheme::fan_in_uniform());
        assert_eq!(n.mlp(1).unwrap().param_count(), 61);
    }
}
