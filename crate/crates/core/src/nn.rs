//! Fully connected controllers `û(t; θ)` with a layer tape for reverse mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::SeededRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("parameter vector has length {got}, network expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("parameter layout does not match the network specification")]
    LayoutMismatch,
    #[error("output cotangent has length {got}, network output is {expected}")]
    CotangentLength { expected: usize, got: usize },
    #[error("invalid network specification: {0}")]
    InvalidSpec(String),
    #[error("invalid activation {0:?}")]
    BadActivation(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub const DEFAULT_ELU_ALPHA: f64 = 1.0;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Pointwise nonlinearity. Written in configs as `linear`, `relu`, `tanh`,
/// `elu`, `elu:<alpha>`, `leaky_relu` or `leaky_relu:<slope>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu { slope: f64 },
    Elu { alpha: f64 },
    Tanh,
}

impl Activation {
    pub fn elu() -> Self {
        Activation::Elu {
            alpha: DEFAULT_ELU_ALPHA,
        }
    }

    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    z
                } else {
                    alpha * z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative; at the kink `z = 0` the left branch is used, so the ReLU
    /// derivative at 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu { alpha } => {
                if z > 0.0 {
                    1.0
                } else {
                    alpha * z.exp()
                }
            }
            Activation::Tanh => {
                let th = z.tanh();
                1.0 - th * th
            }
        }
    }

    /// Whether the derivative jumps at zero.
    pub fn has_kink(self) -> bool {
        match self {
            Activation::Relu | Activation::LeakyRelu { .. } => true,
            Activation::Elu { alpha } => alpha != 1.0,
            Activation::Linear | Activation::Tanh => false,
        }
    }

    fn validate(self) -> Result<Self> {
        match self {
            Activation::LeakyRelu { slope } if !(slope > 0.0) => {
                Err(NnError::BadActivation(format!("leaky_relu slope must be > 0, got {slope}")))
            }
            Activation::Elu { alpha } if !(alpha > 0.0) => {
                Err(NnError::BadActivation(format!("elu alpha must be > 0, got {alpha}")))
            }
            a => Ok(a),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Linear => f.write_str("linear"),
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Elu { alpha } if *alpha == DEFAULT_ELU_ALPHA => f.write_str("elu"),
            Activation::Elu { alpha } => write!(f, "elu:{alpha}"),
            Activation::LeakyRelu { slope } if *slope == DEFAULT_LEAKY_SLOPE => f.write_str("leaky_relu"),
            Activation::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
        }
    }
}

impl FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let parse_arg = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| a.trim().parse().map_err(|_| NnError::BadActivation(s.clone())))
        };
        let act = match name {
            "linear" | "identity" if arg.is_none() => Activation::Linear,
            "relu" if arg.is_none() => Activation::Relu,
            "tanh" if arg.is_none() => Activation::Tanh,
            "elu" => Activation::Elu {
                alpha: parse_arg(DEFAULT_ELU_ALPHA)?,
            },
            "leaky_relu" | "leakyrelu" => Activation::LeakyRelu {
                slope: parse_arg(DEFAULT_LEAKY_SLOPE)?,
            },
            _ => return Err(NnError::BadActivation(s.clone())),
        };
        act.validate()
    }
}

impl TryFrom<String> for Activation {
    type Error = NnError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

/// Architecture of a controller taking the time `t` as its only input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// When false the network has no input at all and its output is a
    /// learned constant (bias-only controller).
    pub time_input: bool,
    pub hidden: Vec<usize>,
    pub hidden_activation: Vec<Activation>,
    pub output_dim: usize,
    pub output_activation: Activation,
    pub use_bias: bool,
    /// Adds the bias after the activation, `σ(Wh) + b`, instead of inside it.
    pub bias_after_activation: bool,
}

impl MlpSpec {
    /// Hidden layers of the given widths, all with the same activation, and a
    /// linear output layer.
    pub fn new(hidden: &[usize], activation: Activation, output_dim: usize, use_bias: bool) -> Self {
        MlpSpec {
            time_input: true,
            hidden: hidden.to_vec(),
            hidden_activation: vec![activation; hidden.len()],
            output_dim,
            output_activation: Activation::Linear,
            use_bias,
            bias_after_activation: false,
        }
    }

    /// `u = w t + b`.
    pub fn linear_neuron() -> Self {
        MlpSpec::new(&[], Activation::Linear, 1, true)
    }

    /// `u = max(0, w t) + b`.
    pub fn relu_neuron() -> Self {
        MlpSpec {
            output_activation: Activation::Relu,
            bias_after_activation: true,
            ..MlpSpec::linear_neuron()
        }
    }

    /// `u ≡ c`, a single learned constant per output.
    pub fn bias_only(output_dim: usize) -> Self {
        MlpSpec {
            time_input: false,
            ..MlpSpec::new(&[], Activation::Linear, output_dim, true)
        }
    }

    pub fn input_dim(&self) -> usize {
        usize::from(self.time_input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(NnError::InvalidSpec("output dimension must be >= 1".into()));
        }
        if let Some(i) = self.hidden.iter().position(|&w| w == 0) {
            return Err(NnError::InvalidSpec(format!("hidden layer {i} has width 0")));
        }
        if self.hidden_activation.len() != self.hidden.len() {
            return Err(NnError::InvalidSpec(format!(
                "{} hidden layers but {} activations",
                self.hidden.len(),
                self.hidden_activation.len()
            )));
        }
        if !self.time_input && !self.use_bias {
            return Err(NnError::InvalidSpec("a network without time input needs biases".into()));
        }
        for a in self.hidden_activation.iter().chain(std::iter::once(&self.output_activation)) {
            a.validate()?;
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut fan_in = self.input_dim();
        let mut offset = 0;
        let widths = self.hidden.iter().copied().chain(std::iter::once(self.output_dim));
        let acts = self
            .hidden_activation
            .iter()
            .copied()
            .chain(std::iter::once(self.output_activation));
        widths
            .zip(acts)
            .map(|(fan_out, activation)| {
                let weight_offset = offset;
                offset += fan_in * fan_out;
                let bias_offset = self.use_bias.then(|| {
                    let b = offset;
                    offset += fan_out;
                    b
                });
                let l = LayerLayout {
                    fan_in,
                    fan_out,
                    activation,
                    weight_offset,
                    bias_offset,
                    bias_after_activation: self.bias_after_activation,
                };
                fan_in = fan_out;
                l
            })
            .collect()
    }

    /// Number of parameters `N = Σ (fan_in + use_bias)·fan_out`.
    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerLayout::len).sum()
    }
}

/// Position of one affine layer inside the flat parameter vector. Weights are
/// stored row-major as `W[out][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
    #[serde(default)]
    pub bias_after_activation: bool,
}

impl LayerLayout {
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias_offset.is_some() { self.fan_out } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector θ with its layer layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: Vec<LayerLayout>,
    pub theta: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: &MlpSpec, theta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let expected: usize = layout.iter().map(LayerLayout::len).sum();
        if theta.len() != expected {
            return Err(NnError::ParamLength {
                expected,
                got: theta.len(),
            });
        }
        Ok(ParamVector { layout, theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Same layout, different values.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(NnError::ParamLength {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        Ok(ParamVector {
            layout: self.layout.clone(),
            theta,
        })
    }

    /// Per-layer views `(weights, bias)`.
    pub fn unflatten(&self) -> Vec<(&[f64], Option<&[f64]>)> {
        self.layout
            .iter()
            .map(|l| {
                let w = &self.theta[l.weight_offset..l.weight_offset + l.fan_in * l.fan_out];
                let b = l.bias_offset.map(|o| &self.theta[o..o + l.fan_out]);
                (w, b)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter vectors always serialize")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn check(&self, spec: &MlpSpec) -> Result<()> {
        let expected = spec.param_count();
        if self.theta.len() != expected {
            return Err(NnError::ParamLength {
                expected,
                got: self.theta.len(),
            });
        }
        if self.layout != spec.layout() {
            return Err(NnError::LayoutMismatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRule {
    /// `bound = 1/√k`
    InvSqrtK,
    /// `bound = √k`
    SqrtK,
}

impl BoundRule {
    pub fn bound(self, fan_in: usize) -> f64 {
        let k = fan_in.max(1) as f64;
        match self {
            BoundRule::InvSqrtK => 1.0 / k.sqrt(),
            BoundRule::SqrtK => k.sqrt(),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

/// Parameter initialization. `k` is the fan-in of the layer being
/// initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitScheme {
    /// Every weight and bias equals `value`.
    Constant { value: f64 },
    /// Weights and biases drawn from `U(-scale·bound, scale·bound)`.
    Uniform {
        rule: BoundRule,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Uniform weights as above, every bias set to `bias`.
    UniformConstantBias {
        rule: BoundRule,
        #[serde(default = "default_scale")]
        scale: f64,
        bias: f64,
    },
}

impl InitScheme {
    pub fn constant(value: f64) -> Self {
        InitScheme::Constant { value }
    }

    /// The usual fan-in default, `U(-1/√k, 1/√k)`.
    pub fn fan_in_uniform() -> Self {
        InitScheme::Uniform {
            rule: BoundRule::InvSqrtK,
            scale: 1.0,
        }
    }
}

/// Draws θ for `spec`. Layers are filled in order, weights row-major, then
/// biases.
pub fn init_params(spec: &MlpSpec, scheme: InitScheme, rng: &mut SeededRng) -> Result<ParamVector> {
    spec.validate()?;
    let layout = spec.layout();
    let mut theta = vec![0.0; layout.iter().map(LayerLayout::len).sum()];
    for l in &layout {
        let weights = l.weight_offset..l.weight_offset + l.fan_in * l.fan_out;
        let biases = l.bias_offset.map(|o| o..o + l.fan_out);
        match scheme {
            InitScheme::Constant { value } => {
                theta[weights].fill(value);
                if let Some(b) = biases {
                    theta[b].fill(value);
                }
            }
            InitScheme::Uniform { rule, scale } => {
                let bound = scale * rule.bound(l.fan_in);
                for v in &mut theta[weights] {
                    *v = rng.uniform(-bound, bound);
                }
                if let Some(b) = biases {
                    for v in &mut theta[b] {
                        *v = rng.uniform(-bound, bound);
                    }
                }
            }
            InitScheme::UniformConstantBias { rule, scale, bias } => {
                let bound = scale * rule.bound(l.fan_in);
                for v in &mut theta[weights] {
                    *v = rng.uniform(-bound, bound);
                }
                if let Some(b) = biases {
                    theta[b].fill(bias);
                }
            }
        }
    }
    Ok(ParamVector { layout, theta })
}

/// Values stored during a forward pass: each layer's input and
/// pre-activation.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Forward pass keeping the tape for a later [`vjp_with_tape`].
pub fn forward_tape(spec: &MlpSpec, params: &ParamVector, t: f64) -> Result<Tape> {
    params.check(spec)?;
    Ok(forward_unchecked(&params.layout, &params.theta, t))
}

pub(crate) fn forward_unchecked(layout: &[LayerLayout], theta: &[f64], t: f64) -> Tape {
    let mut inputs = Vec::with_capacity(layout.len());
    let mut preacts = Vec::with_capacity(layout.len());
    let mut h: Vec<f64> = if layout.first().is_some_and(|l| l.fan_in == 0) {
        Vec::new()
    } else {
        vec![t]
    };
    for l in layout {
        let w = &theta[l.weight_offset..l.weight_offset + l.fan_in * l.fan_out];
        let mut z: Vec<f64> = if l.fan_in == 0 {
            vec![0.0; l.fan_out]
        } else {
            w.chunks_exact(l.fan_in).map(|row| crate::numkit::dot(row, &h)).collect()
        };
        let bias = l.bias_offset.map(|o| &theta[o..o + l.fan_out]);
        if let (Some(b), false) = (bias, l.bias_after_activation) {
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
            }
        }
        let mut a: Vec<f64> = z.iter().map(|&zi| l.activation.value(zi)).collect();
        if let (Some(b), true) = (bias, l.bias_after_activation) {
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += bi;
            }
        }
        inputs.push(std::mem::replace(&mut h, a));
        preacts.push(z);
    }
    Tape {
        inputs,
        preacts,
        output: h,
    }
}

/// Evaluates `û(t; θ)`.
pub fn forward(spec: &MlpSpec, params: &ParamVector, t: f64) -> Result<Vec<f64>> {
    Ok(forward_tape(spec, params, t)?.output)
}

/// Accumulates `scale · ȳᵀ J_û` into `out` using a stored tape.
pub fn vjp_with_tape(params: &ParamVector, tape: &Tape, ybar: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
    let m = tape.output.len();
    if ybar.len() != m {
        return Err(NnError::CotangentLength {
            expected: m,
            got: ybar.len(),
        });
    }
    if out.len() != params.theta.len() {
        return Err(NnError::ParamLength {
            expected: params.theta.len(),
            got: out.len(),
        });
    }
    vjp_unchecked(&params.layout, &params.theta, tape, ybar, scale, out);
    Ok(())
}

pub(crate) fn vjp_unchecked(
    layout: &[LayerLayout],
    theta: &[f64],
    tape: &Tape,
    ybar: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let mut g: Vec<f64> = ybar.iter().map(|y| y * scale).collect();
    for (li, l) in layout.iter().enumerate().rev() {
        let z = &tape.preacts[li];
        let h = &tape.inputs[li];
        if let (Some(bo), true) = (l.bias_offset, l.bias_after_activation) {
            for (o, gi) in out[bo..bo + l.fan_out].iter_mut().zip(&g) {
                *o += gi;
            }
        }
        let gz: Vec<f64> = g
            .iter()
            .zip(z)
            .map(|(gi, &zi)| gi * l.activation.derivative(zi))
            .collect();
        if let (Some(bo), false) = (l.bias_offset, l.bias_after_activation) {
            for (o, gi) in out[bo..bo + l.fan_out].iter_mut().zip(&gz) {
                *o += gi;
            }
        }
        let wo = l.weight_offset;
        for (r, &gr) in gz.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = &mut out[wo + r * l.fan_in..wo + (r + 1) * l.fan_in];
            for (o, hi) in row.iter_mut().zip(h) {
                *o += gr * hi;
            }
        }
        if li > 0 {
            let w = &theta[wo..wo + l.fan_in * l.fan_out];
            let mut gh = vec![0.0; l.fan_in];
            for (r, &gr) in gz.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                for (o, wi) in gh.iter_mut().zip(&w[r * l.fan_in..(r + 1) * l.fan_in]) {
                    *o += gr * wi;
                }
            }
            g = gh;
        }
    }
}

/// `ȳᵀ · J_û(t; θ)`, the gradient of `ȳ · û(t; θ)` with respect to θ.
pub fn vjp(spec: &MlpSpec, params: &ParamVector, t: f64, ybar: &[f64]) -> Result<Vec<f64>> {
    let tape = forward_tape(spec, params, t)?;
    let mut out = vec![0.0; params.theta.len()];
    vjp_with_tape(params, &tape, ybar, 1.0, &mut out)?;
    Ok(out)
}
