//! C interface to the nodec controllers: opaque problem and network handles,
//! status codes and a thread-local last-error message.
//!
//! Every function catches panics, never unwinds into C and reports failures
//! through `NodecStatus` (or a null handle) plus `nodec_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nodec::config::ProblemSpec;
use nodec::grad::{self, LossSpec, Protocol};
use nodec::nn::{self, Activation, InitScheme, MlpSpec, ParamVector};
use nodec::numkit::{derive_seed, SeededRng};
use nodec::ode::ControlProblem;
use nodec::optim::{self, OptimizerConfig, TrainConfig, TrainError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Diverged = 3,
    Internal = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodecOptimizer {
    Sd = 0,
    Adam = 1,
}

/// A controlled system with boundary data.
pub struct NodecProblem {
    spec: ProblemSpec,
    problem: ControlProblem,
}

/// A fully connected controller and its parameters.
pub struct NodecMlp {
    spec: MlpSpec,
    params: ParamVector,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::default());
}

/// Message of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next nodec call on the same thread.
#[no_mangle]
pub extern "C" fn nodec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn guard(f: impl FnOnce() -> Result<(), (NodecStatus, String)>) -> NodecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            NodecStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NodecStatus::Internal
        }
    }
}

fn guard_ptr<T>(f: impl FnOnce() -> Result<T, String>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => {
            clear_error();
            Box::into_raw(Box::new(v))
        }
        Ok(Err(msg)) => {
            set_error(msg);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

fn invalid(e: impl ToString) -> (NodecStatus, String) {
    (NodecStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> (NodecStatus, String) {
    (NodecStatus::NullPointer, format!("{what} is null"))
}

fn make_problem(spec: ProblemSpec) -> Result<NodecProblem, String> {
    let problem = spec.build().map_err(|e| e.to_string())?;
    Ok(NodecProblem { spec, problem })
}

/// `ẋ = ax + bu` from `x0` to `target` on `[0, horizon]` with `steps` Euler steps.
#[no_mangle]
pub extern "C" fn nodec_problem_scalar_linear(
    a: f64,
    b: f64,
    x0: f64,
    target: f64,
    horizon: f64,
    steps: usize,
) -> *mut NodecProblem {
    guard_ptr(|| {
        make_problem(ProblemSpec::ScalarLinear {
            a,
            b,
            x0,
            target,
            horizon,
            steps,
        })
    })
}

/// `ẋ = u` from `x0` to `target`.
#[no_mangle]
pub extern "C" fn nodec_problem_integrator(x0: f64, target: f64, horizon: f64, steps: usize) -> *mut NodecProblem {
    guard_ptr(|| {
        make_problem(ProblemSpec::Integrator {
            x0,
            target,
            horizon,
            steps,
        })
    })
}

/// The two-dimensional linear benchmark.
#[no_mangle]
pub extern "C" fn nodec_problem_benchmark_2d(steps: usize) -> *mut NodecProblem {
    guard_ptr(|| make_problem(ProblemSpec::Benchmark2d { steps }))
}

/// The moving particle with friction.
#[no_mangle]
pub extern "C" fn nodec_problem_moving_particle(steps: usize) -> *mut NodecProblem {
    guard_ptr(|| make_problem(ProblemSpec::MovingParticle { steps }))
}

/// A problem from a TOML table with a `kind` key.
///
/// # Safety
/// `text` must be null or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nodec_problem_from_toml(text: *const c_char) -> *mut NodecProblem {
    guard_ptr(|| {
        if text.is_null() {
            return Err("text is null".into());
        }
        let s = unsafe { CStr::from_ptr(text) }.to_str().map_err(|e| e.to_string())?;
        let spec = ProblemSpec::from_toml(s).map_err(|e| e.to_string())?;
        make_problem(spec)
    })
}

/// # Safety
/// `p` must be null or a handle from a `nodec_problem_*` constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn nodec_problem_free(p: *mut NodecProblem) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn nodec_problem_state_dim(p: *const NodecProblem) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.problem.x0.len())
}

/// # Safety
/// `p` must be null or a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn nodec_problem_control_dim(p: *const NodecProblem) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.problem.control_dim())
}

/// Optimal value of the problem's reference functional (control energy, or
/// work for the moving particle).
///
/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nodec_problem_oracle_energy(p: *const NodecProblem, out: *mut f64) -> NodecStatus {
    guard(|| {
        let p = unsafe { p.as_ref() }.ok_or_else(|| null("problem"))?;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = p.spec.oracle().map_err(invalid)?.energy;
        Ok(())
    })
}

/// Controller with the fan-in uniform initialization drawn from `seed`.
/// `activation` is a name such as `"elu"`, `"tanh"`, `"relu"`.
///
/// # Safety
/// `hidden` must point to `n_hidden` values (or be null with `n_hidden == 0`);
/// `activation` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_new(
    hidden: *const usize,
    n_hidden: usize,
    activation: *const c_char,
    output_dim: usize,
    bias: bool,
    seed: u64,
) -> *mut NodecMlp {
    guard_ptr(|| {
        if hidden.is_null() && n_hidden > 0 {
            return Err("hidden is null".into());
        }
        if activation.is_null() {
            return Err("activation is null".into());
        }
        let widths: &[usize] = if n_hidden == 0 {
            &[]
        } else {
            unsafe { std::slice::from_raw_parts(hidden, n_hidden) }
        };
        let name = unsafe { CStr::from_ptr(activation) }.to_str().map_err(|e| e.to_string())?;
        let act: Activation = name.parse().map_err(|e: nn::NnError| e.to_string())?;
        let spec = MlpSpec::new(widths, act, output_dim, bias);
        spec.validate().map_err(|e| e.to_string())?;
        let params = nn::init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(seed))
            .map_err(|e| e.to_string())?;
        Ok(NodecMlp { spec, params })
    })
}

/// # Safety
/// `m` must be null or a handle from `nodec_mlp_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_free(m: *mut NodecMlp) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// # Safety
/// `m` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_param_count(m: *const NodecMlp) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.params.len())
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, want: usize, what: &str) -> Result<&'a mut [f64], (NodecStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err(invalid(format!("{what} has length {len}, expected {want}")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

/// Copies the parameters into `out[0..len]`; `len` must equal the parameter count.
///
/// # Safety
/// `m` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_get_params(m: *const NodecMlp, out: *mut f64, len: usize) -> NodecStatus {
    guard(|| {
        let m = unsafe { m.as_ref() }.ok_or_else(|| null("mlp"))?;
        unsafe { slice_mut(out, len, m.params.len(), "out") }?.copy_from_slice(&m.params.theta);
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `theta` readable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_set_params(m: *mut NodecMlp, theta: *const f64, len: usize) -> NodecStatus {
    guard(|| {
        let m = unsafe { m.as_mut() }.ok_or_else(|| null("mlp"))?;
        if theta.is_null() {
            return Err(null("theta"));
        }
        if len != m.params.len() {
            return Err(invalid(format!("theta has length {len}, expected {}", m.params.len())));
        }
        let v = unsafe { std::slice::from_raw_parts(theta, len) }.to_vec();
        m.params = m.params.with_theta(v).map_err(invalid)?;
        Ok(())
    })
}

/// Control `û(t)` written to `out[0..len]`; `len` must equal the output dimension.
///
/// # Safety
/// `m` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn nodec_mlp_forward(m: *const NodecMlp, t: f64, out: *mut f64, len: usize) -> NodecStatus {
    guard(|| {
        let m = unsafe { m.as_ref() }.ok_or_else(|| null("mlp"))?;
        let dst = unsafe { slice_mut(out, len, m.spec.output_dim, "out") }?;
        dst.copy_from_slice(&nn::forward(&m.spec, &m.params, t).map_err(invalid)?);
        Ok(())
    })
}

fn check_pair(p: &NodecProblem, m: &NodecMlp) -> Result<(), (NodecStatus, String)> {
    if m.spec.output_dim != p.problem.control_dim() {
        return Err(invalid(format!(
            "network outputs {} controls, problem takes {}",
            m.spec.output_dim,
            p.problem.control_dim()
        )));
    }
    Ok(())
}

/// Exact terminal-loss gradient by backpropagation through all Euler steps.
///
/// # Safety
/// Handles must be live; `grad_out` writable for `len` values; `loss_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn nodec_bptt_grad(
    p: *const NodecProblem,
    m: *const NodecMlp,
    grad_out: *mut f64,
    len: usize,
    loss_out: *mut f64,
) -> NodecStatus {
    guard(|| {
        let p = unsafe { p.as_ref() }.ok_or_else(|| null("problem"))?;
        let m = unsafe { m.as_ref() }.ok_or_else(|| null("mlp"))?;
        check_pair(p, m)?;
        let dst = unsafe { slice_mut(grad_out, len, m.params.len(), "grad_out") }?;
        let r = grad::bptt_grad(&p.problem, &m.spec, &m.params, &LossSpec::terminal()).map_err(|e| match e {
            grad::GradError::Ode(nodec::ode::OdeError::Diverged { .. }) => (NodecStatus::Diverged, e.to_string()),
            other => invalid(other),
        })?;
        dst.copy_from_slice(&r.grad);
        if let Some(l) = unsafe { loss_out.as_mut() } {
            *l = r.eval.loss;
        }
        Ok(())
    })
}

/// Trains the network in place on the terminal loss with BPTT; the handle ends
/// up holding the best parameters seen. On divergence the parameters are unchanged.
///
/// # Safety
/// Handles must be live; `best_loss_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn nodec_train(
    p: *const NodecProblem,
    m: *mut NodecMlp,
    optimizer: NodecOptimizer,
    lr: f64,
    epochs: usize,
    seed: u64,
    best_loss_out: *mut f64,
) -> NodecStatus {
    guard(|| {
        let p = unsafe { p.as_ref() }.ok_or_else(|| null("problem"))?;
        let m = unsafe { m.as_mut() }.ok_or_else(|| null("mlp"))?;
        check_pair(p, m)?;
        let opt = match optimizer {
            NodecOptimizer::Sd => OptimizerConfig::sd(lr),
            NodecOptimizer::Adam => OptimizerConfig::adam(lr),
        };
        let tc = TrainConfig::new(Protocol::Bptt, opt, epochs);
        let mut rng = SeededRng::new(derive_seed(seed, &[1]));
        let out = optim::train(&p.problem, &m.spec, &m.params, &tc, &mut rng).map_err(|e| match e {
            TrainError::Diverged { .. } => (NodecStatus::Diverged, e.to_string()),
            other => invalid(other),
        })?;
        let best = out.history.records[out.best_epoch].loss;
        m.params = out.theta_best;
        if let Some(l) = unsafe { best_loss_out.as_mut() } {
            *l = best;
        }
        Ok(())
    })
}
