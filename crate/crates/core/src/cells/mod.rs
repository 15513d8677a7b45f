//! Recurrent cells, their parameters and stacked execution.

mod jacobian;
mod stack;
mod step;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LscError, Result};
use crate::linalg::{init_matrix, InitScheme, Matrix, RandomSource};

pub use jacobian::{jac_depth, jac_depth_chained, jac_time, output_jacobian, TransitionPoint};
pub use stack::{stack_backward, stack_forward, Readout, StackConfig, StackGrads, StackParams, StackRun};
pub use step::{cell_forward, cell_vjp, output_map, output_vjp, StepVjp};

/// ALIF surrogate dampening used throughout.
pub const DEFAULT_GAMMA: f64 = 0.5;
/// ALIF surrogate sharpness used throughout.
pub const DEFAULT_OMEGA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Swish,
}

impl Activation {
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Swish => z * sigmoid(z),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
        }
    }

    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Relu => 0.0,
            Activation::Swish => {
                let s = sigmoid(z);
                let ds = s * (1.0 - s);
                2.0 * ds + z * ds * (1.0 - 2.0 * s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlifVariant {
    /// Positive adaptation drawn from the truncated Gaussian.
    Plus,
    /// Zero-centred adaptation.
    Pm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CellKind {
    Pascal { rho: f64 },
    Simple { activation: Activation },
    Gru,
    Lstm,
    /// With `relaxed` the Heaviside spike is replaced by the fast sigmoid
    /// `0.5 + gamma v / (1 + omega |v|)`, whose derivative is the surrogate.
    Alif { variant: AlifVariant, gamma: f64, omega: f64, relaxed: bool },
}

impl CellKind {
    pub fn alif(variant: AlifVariant) -> Self {
        CellKind::Alif { variant, gamma: DEFAULT_GAMMA, omega: DEFAULT_OMEGA, relaxed: false }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CellKind::Pascal { .. } => "pascal",
            CellKind::Simple { activation: Activation::Sigmoid } => "rnn-sigmoid",
            CellKind::Simple { activation: Activation::Relu } => "rnn-relu",
            CellKind::Simple { activation: Activation::Swish } => "rnn-swish",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
            CellKind::Alif { variant: AlifVariant::Plus, .. } => "alif",
            CellKind::Alif { variant: AlifVariant::Pm, .. } => "alif-pm",
        }
    }

    /// Parses the CLI names (`pascal`, `rnn-sigmoid`, `rnn-relu`, `rnn-swish`,
    /// `gru`, `lstm`, `alif`, `alif-pm`).
    pub fn from_name(name: &str, rho: f64) -> Result<Self> {
        Ok(match name {
            "pascal" => CellKind::Pascal { rho },
            "rnn-sigmoid" | "rnn" => CellKind::Simple { activation: Activation::Sigmoid },
            "rnn-relu" => CellKind::Simple { activation: Activation::Relu },
            "rnn-swish" => CellKind::Simple { activation: Activation::Swish },
            "gru" => CellKind::Gru,
            "lstm" => CellKind::Lstm,
            "alif" | "alif-plus" => CellKind::alif(AlifVariant::Plus),
            "alif-pm" => CellKind::alif(AlifVariant::Pm),
            other => return Err(LscError::Config(format!("unknown cell '{other}'"))),
        })
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, CellKind::Alif { relaxed: false, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub width: usize,
    pub input_width: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, width: usize, input_width: usize) -> Result<Self> {
        let spec = Self { kind, width, input_width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.input_width == 0 {
            return Err(LscError::Config("cell widths must be at least 1".into()));
        }
        match self.kind {
            CellKind::Pascal { rho } => {
                if !(rho >= 0.0 && rho.is_finite()) {
                    return Err(LscError::Config(format!("PascalRNN needs rho >= 0, got {rho}")));
                }
                if self.width != self.input_width {
                    return Err(LscError::Config("PascalRNN needs equal input and state widths".into()));
                }
            }
            CellKind::Alif { gamma, omega, .. } => {
                if !(gamma > 0.0 && omega > 0.0) {
                    return Err(LscError::Config("ALIF needs gamma > 0 and omega > 0".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Length of the concatenated state vector.
    pub fn state_len(&self) -> usize {
        match self.kind {
            CellKind::Lstm | CellKind::Alif { .. } => 2 * self.width,
            _ => self.width,
        }
    }

    /// Length of the vector passed upward and to the readout.
    pub fn output_len(&self) -> usize {
        self.width
    }

    /// Draws parameters with the default initialization of each cell kind.
    pub fn init_params(&self, rng: &mut RandomSource) -> Result<CellParams> {
        let (n, m) = (self.width, self.input_width);
        let mut p = CellParams::default();
        match self.kind {
            CellKind::Pascal { rho } => {
                p.insert("rho", Matrix::new(1, 1, vec![rho])?);
            }
            CellKind::Simple { .. } => {
                p.insert("W_rec", init_matrix(InitScheme::Orthogonal, n, n, rng)?);
                p.insert("W_in", init_matrix(InitScheme::GlorotUniform, n, m, rng)?);
                p.insert("b", init_matrix(InitScheme::GlorotUniform, n, 1, rng)?);
            }
            CellKind::Gru => {
                for g in ["z", "r", "h"] {
                    p.insert(&format!("W_{g}"), init_matrix(InitScheme::GlorotUniform, n, m, rng)?);
                    p.insert(&format!("U_{g}"), init_matrix(InitScheme::Orthogonal, n, n, rng)?);
                    p.insert(&format!("b_{g}"), Matrix::zeros(n, 1));
                }
            }
            CellKind::Lstm => {
                for g in ["i", "f", "o", "c"] {
                    p.insert(&format!("W_{g}"), init_matrix(InitScheme::GlorotUniform, n, m, rng)?);
                    p.insert(&format!("U_{g}"), init_matrix(InitScheme::Orthogonal, n, n, rng)?);
                    p.insert(&format!("b_{g}"), Matrix::zeros(n, 1));
                }
            }
            CellKind::Alif { variant, .. } => {
                p.insert("W_rec", init_matrix(InitScheme::GlorotUniform, n, n, rng)?);
                p.insert("W_in", init_matrix(InitScheme::GlorotUniform, n, m, rng)?);
                p.insert("tau_y", init_matrix(InitScheme::rate_parameter(ALIF_TAU_Y), n, 1, rng)?);
                p.insert("tau_theta", init_matrix(InitScheme::rate_parameter(ALIF_TAU_THETA), n, 1, rng)?);
                p.insert("b_theta", init_matrix(InitScheme::rate_parameter(ALIF_B_THETA), n, 1, rng)?);
                let beta = match variant {
                    AlifVariant::Plus => InitScheme::rate_parameter(ALIF_BETA),
                    AlifVariant::Pm => InitScheme::CenteredGaussian { std: ALIF_BETA / m as f64 },
                };
                p.insert("beta", init_matrix(beta, n, 1, rng)?);
                p.insert("b_y", Matrix::zeros(n, 1));
            }
        }
        Ok(p)
    }

    /// Initial state `h_{0,l}`. Zero for all cells except ALIF, whose
    /// threshold starts at its baseline so that no spike is emitted at t = 0.
    pub fn initial_state(&self, params: &CellParams) -> Result<CellState> {
        let mut state = vec![0.0; self.state_len()];
        if let CellKind::Alif { .. } = self.kind {
            let b = params.get("b_theta")?;
            state[self.width..].copy_from_slice(b.as_slice());
        }
        let output = output_map(self, &state);
        Ok(CellState { state, output })
    }
}

pub const ALIF_TAU_Y: f64 = 0.1;
pub const ALIF_TAU_THETA: f64 = 100.0;
pub const ALIF_B_THETA: f64 = 0.01;
pub const ALIF_BETA: f64 = 1.8;
/// Lower clamp applied to ALIF time constants after every update.
pub const ALIF_TAU_MIN: f64 = 0.1;

/// Side of the cell a tensor belongs to, which decides the kappa it receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Input,
    Recurrent,
    /// Biases and other tensors that kappa leaves alone.
    Neutral,
}

/// Named learnable tensors of one layer, kept in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    tensors: BTreeMap<String, Matrix>,
}

impl CellParams {
    pub fn insert(&mut self, name: &str, m: Matrix) {
        self.tensors.insert(name.to_string(), m);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .get(name)
            .ok_or_else(|| LscError::Config(format!("missing parameter tensor '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| LscError::Config(format!("missing parameter tensor '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> CellParams {
        CellParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols()))).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &CellParams) -> Result<()> {
        for (name, m) in &other.tensors {
            self.get_mut(name)?.add_assign(m)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.tensors.values_mut().for_each(|m| m.scale_in_place(c));
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Matrix::is_finite)
    }
}

/// Whether `name` is updated by training and pre-training.
pub fn is_trainable(kind: &CellKind, name: &str) -> bool {
    !(matches!(kind, CellKind::Alif { .. }) && name == "b_y")
}

pub fn tensor_role(kind: &CellKind, name: &str) -> TensorRole {
    match kind {
        CellKind::Pascal { .. } => TensorRole::Recurrent,
        CellKind::Alif { .. } => match name {
            "W_in" | "b_theta" | "beta" => TensorRole::Input,
            "W_rec" | "tau_y" | "tau_theta" => TensorRole::Recurrent,
            _ => TensorRole::Neutral,
        },
        _ => {
            if name == "W_rec" || name.starts_with("U_") {
                TensorRole::Recurrent
            } else if name.starts_with("W_") {
                TensorRole::Input
            } else {
                TensorRole::Neutral
            }
        }
    }
}

/// Concatenated state of one layer plus the vector it emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub state: Vec<f64>,
    /// `h` for most cells, `h` of `[h; c]` for LSTM, spikes for ALIF.
    pub output: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Heaviside spike with the fast-sigmoid pseudo-derivative.
pub fn surrogate_heaviside(v: f64, gamma: f64, omega: f64) -> (f64, f64) {
    let value = if v >= 0.0 { 1.0 } else { 0.0 };
    (value, surrogate_derivative(v, gamma, omega))
}

pub fn surrogate_derivative(v: f64, gamma: f64, omega: f64) -> f64 {
    gamma / (1.0 + omega * v.abs()).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_values() {
        assert_eq!(surrogate_heaviside(0.0, 0.5, 1.0), (1.0, 0.5));
        assert_eq!(surrogate_heaviside(1.0, 0.5, 1.0), (1.0, 0.125));
        assert_eq!(surrogate_heaviside(-1.0, 0.5, 1.0).0, 0.0);
        assert!(surrogate_heaviside(1e9, 0.5, 1.0).1 < 1e-15);
        assert!(surrogate_heaviside(-1e9, 0.5, 1.0).1 < 1e-15);
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::Sigmoid, Activation::Swish] {
            for z in [-2.0, -0.3, 0.0, 0.7, 3.0] {
                let h = 1e-5;
                let d1 = (act.value(z + h) - act.value(z - h)) / (2.0 * h);
                let d2 = (act.derivative(z + h) - act.derivative(z - h)) / (2.0 * h);
                assert!((d1 - act.derivative(z)).abs() < 1e-9);
                assert!((d2 - act.second_derivative(z)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(CellSpec::new(CellKind::Gru, 0, 3).is_err());
        assert!(CellSpec::new(CellKind::Pascal { rho: -1.0 }, 2, 2).is_err());
        assert!(CellSpec::new(CellKind::Pascal { rho: 1.0 }, 2, 3).is_err());
        let bad = CellKind::Alif { variant: AlifVariant::Plus, gamma: 0.0, omega: 1.0, relaxed: false };
        assert!(CellSpec::new(bad, 2, 2).is_err());
    }

    #[test]
    fn alif_params_positive() {
        let spec = CellSpec::new(CellKind::alif(AlifVariant::Plus), 16, 8).unwrap();
        let p = spec.init_params(&mut RandomSource::new(1)).unwrap();
        for name in ["tau_y", "tau_theta", "b_theta", "beta"] {
            assert!(p.get(name).unwrap().as_slice().iter().all(|v| *v > 0.0), "{name}");
        }
        let init = spec.initial_state(&p).unwrap();
        assert!(init.output.iter().all(|x| *x == 0.0));
    }
}
