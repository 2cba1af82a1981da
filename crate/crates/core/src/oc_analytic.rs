//! Closed-form optimal controls and the exactly solvable steepest-descent
//! maps of single-neuron and constant controllers.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{self, mat_exp, Matrix, NumError};

#[derive(Debug, Error)]
pub enum OcError {
    #[error("scalar linear oracle needs a != 0; use the constant-control oracle for a = 0")]
    ZeroDrift,
    #[error("input gain b must be nonzero")]
    ZeroGain,
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, OcError>;

pub type Signal = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Which functional the `energy` slot of an [`OcSolution`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `½∫‖u‖² dt`
    Energy,
    /// `∫ v u dt`
    Work,
}

#[derive(Clone)]
pub struct OcSolution {
    pub u_star: Signal,
    pub x_star: Signal,
    pub energy: f64,
    pub functional: FunctionalKind,
    pub horizon: f64,
}

impl fmt::Debug for OcSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcSolution")
            .field("energy", &self.energy)
            .field("functional", &self.functional)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl OcSolution {
    pub fn u(&self, t: f64) -> Vec<f64> {
        (self.u_star)(t)
    }

    pub fn x(&self, t: f64) -> Vec<f64> {
        (self.x_star)(t)
    }

    /// Scalar view of the first control component.
    pub fn u0(&self) -> impl Fn(f64) -> f64 + '_ {
        move |t| (self.u_star)(t)[0]
    }

    /// `(t_k, u*(t_k), x*(t_k))` on `n + 1` evenly spaced points including both ends.
    pub fn samples(&self, n: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let n = n.max(1);
        (0..=n)
            .map(|k| {
                let t = self.horizon * k as f64 / n as f64;
                (t, self.u(t), self.x(t))
            })
            .collect()
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(OcError::Horizon(t))
    }
}

/// Minimum-energy control of `ẋ = u`: the constant `(x* − x₀)/T`.
pub fn constant_oc(x0: f64, target: f64, horizon: f64) -> Result<OcSolution> {
    check_horizon(horizon)?;
    let u = (target - x0) / horizon;
    Ok(OcSolution {
        u_star: Arc::new(move |_| vec![u]),
        x_star: Arc::new(move |t| vec![x0 + t * u]),
        energy: 0.5 * u * u * horizon,
        functional: FunctionalKind::Energy,
        horizon,
    })
}

/// Minimum-energy control of `ẋ = ax + bu`.
pub fn scalar_linear_oc(a: f64, b: f64, x0: f64, target: f64, horizon: f64) -> Result<OcSolution> {
    check_horizon(horizon)?;
    if a == 0.0 {
        return Err(OcError::ZeroDrift);
    }
    if b == 0.0 {
        return Err(OcError::ZeroGain);
    }
    let v = target - x0 * (a * horizon).exp();
    let sh = (a * horizon).sinh();
    let gain = a * v / (b * sh);
    Ok(OcSolution {
        u_star: Arc::new(move |t| vec![gain * (-a * t).exp()]),
        x_star: Arc::new(move |t| vec![x0 * (a * t).exp() + (a * t).sinh() / sh * v]),
        energy: a * v * v / (b * b * (2.0 * a * horizon).exp_m1()),
        functional: FunctionalKind::Energy,
        horizon,
    })
}

/// Minimum-energy control of `ẋ = Ax + Bu` from the controllability Gramian
/// computed on a `grid`-point trapezoid rule.
pub fn linear_nd_oc(a: &Matrix, b: &Matrix, x0: &[f64], target: &[f64], horizon: f64, grid: usize) -> Result<OcSolution> {
    check_horizon(horizon)?;
    let n = a.rows();
    if x0.len() != n || target.len() != n || b.rows() != n {
        return Err(OcError::Dimension(format!(
            "A is {n}x{n}, B has {} rows, x0 has {}, target has {}",
            b.rows(),
            x0.len(),
            target.len()
        )));
    }
    let w = numkit::gramian(a, b, horizon, grid)?;
    let free = mat_exp(a, horizon)?.matvec(x0)?;
    let v: Vec<f64> = target.iter().zip(free.iter()).map(|(t, f)| t - f).collect();
    let wv = numkit::solve_spd(&w, &v)?;
    let energy = 0.5 * numkit::dot(&v, &wv);

    let (a_t, b_t) = (a.transpose(), b.transpose());
    let wv_u = wv.clone();
    let u_star: Signal = Arc::new(move |t| {
        let e = mat_exp(&a_t, horizon - t).expect("square");
        b_t.matvec(&e.matvec(&wv_u).expect("dims")).expect("dims").into_inner()
    });
    let (a2, b2, x0v) = (a.clone(), b.clone(), x0.to_vec());
    let x_star: Signal = Arc::new(move |t| {
        let mut x = mat_exp(&a2, t).expect("square").matvec(&x0v).expect("dims").into_inner();
        let rest = horizon - t;
        let w_rest = if rest > 0.0 {
            let steps = ((grid as f64 * rest / horizon).ceil() as usize).max(100);
            numkit::gramian(&a2, &b2, rest, steps).expect("gramian")
        } else {
            Matrix::zeros(a2.rows(), a2.rows())
        };
        let dw = w.sub(&w_rest).expect("dims");
        let back = mat_exp(&a2, -rest).expect("square");
        let add = back.matvec(&dw.matvec(&wv).expect("dims")).expect("dims");
        for (xi, d) in x.iter_mut().zip(add.iter()) {
            *xi += d;
        }
        x
    });
    Ok(OcSolution {
        u_star,
        x_star,
        energy,
        functional: FunctionalKind::Energy,
        horizon,
    })
}

/// Work-optimal control of the moving particle from (0, 1) to (1, 1) on [0, 1].
pub fn moving_particle_oc() -> OcSolution {
    OcSolution {
        u_star: Arc::new(|_| vec![1.0]),
        x_star: Arc::new(|t| vec![t, 1.0]),
        energy: 1.0,
        functional: FunctionalKind::Work,
        horizon: 1.0,
    }
}

/// Best constant control `c*` of `ẋ = ax + bu` and its energy `½c*²T`.
pub fn constant_baseline(a: f64, b: f64, x0: f64, target: f64, horizon: f64) -> Result<(f64, f64)> {
    check_horizon(horizon)?;
    if b == 0.0 {
        return Err(OcError::ZeroGain);
    }
    let reach = if a == 0.0 { horizon } else { (a * horizon).exp_m1() / a };
    let c = (target - x0 * (a * horizon).exp()) / (b * reach);
    Ok((c, 0.5 * c * c * horizon))
}

/// One exact steepest-descent step for the linear neuron `û = wt + b` on `ẋ = û`.
pub fn linear_neuron_map((w, b): (f64, f64), lr: f64, horizon: f64, x0: f64, target: f64) -> (f64, f64) {
    let t = horizon;
    let r = 0.5 * w * t * t + b * t + x0 - target;
    (w - lr * 0.5 * t * t * r, b - lr * t * r)
}

/// ReLU neuron `û = max(0, wt) + b`; `w = 0` takes the active branch.
pub fn relu_neuron_map((w, b): (f64, f64), lr: f64, horizon: f64, x0: f64, target: f64) -> (f64, f64) {
    if w >= 0.0 {
        linear_neuron_map((w, b), lr, horizon, x0, target)
    } else {
        (w, b - lr * horizon * (b * horizon + x0 - target))
    }
}

/// Constant-control descent on `ẋ = x + u`, `x(0) = 0`, `T = x* = 1`:
/// returns the next `c` and the energy increment of the step.
pub fn baseline_energy_recursion(c: f64, lr: f64) -> (f64, f64) {
    let g = E - 1.0;
    let resid = c * g - 1.0;
    (c - lr * g * resid, -lr * c * g * resid)
}
