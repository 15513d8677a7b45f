use serde::{Deserialize, Serialize};

use super::jacobian::TransitionPoint;
use super::step::{cell_forward, cell_vjp, output_vjp};
use super::{CellKind, CellParams, CellSpec, CellState};
use crate::error::{LscError, Result};
use crate::linalg::{init_matrix, InitScheme, Matrix, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Readout {
    /// Outputs are the top layer's emitted vector.
    Identity,
    /// Learned `classes x n_L` matrix without bias.
    Linear { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: Vec<CellSpec>,
    pub readout: Readout,
}

impl StackConfig {
    pub fn new(layers: Vec<CellSpec>, readout: Readout) -> Result<Self> {
        let cfg = Self { layers, readout };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uniform stack of `depth` layers of `width` on `channels` inputs.
    pub fn uniform(kind: CellKind, depth: usize, width: usize, channels: usize, readout: Readout) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| CellSpec::new(kind, width, if l == 0 { channels } else { width }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, readout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(LscError::Config("a stack needs at least one layer".into()));
        }
        for (l, spec) in self.layers.iter().enumerate() {
            spec.validate()?;
            if l > 0 && spec.input_width != self.layers[l - 1].output_len() {
                return Err(LscError::Config(format!(
                    "layer {} expects input width {}, layer below emits {}",
                    l + 1,
                    spec.input_width,
                    self.layers[l - 1].output_len()
                )));
            }
        }
        if let Readout::Linear { classes } = self.readout {
            if classes == 0 {
                return Err(LscError::Config("readout needs at least one class".into()));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn top(&self) -> &CellSpec {
        self.layers.last().expect("validated stack is non-empty")
    }

    pub fn output_len(&self) -> usize {
        match self.readout {
            Readout::Identity => self.top().output_len(),
            Readout::Linear { classes } => classes,
        }
    }

    /// Each layer draws from its own fork of `rng`, so adding a layer does
    /// not change the draws of the others.
    pub fn init_params(&self, rng: &RandomSource) -> Result<StackParams> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, spec)| spec.init_params(&mut rng.fork(l as u64)))
            .collect::<Result<Vec<_>>>()?;
        let readout = match self.readout {
            Readout::Identity => None,
            Readout::Linear { classes } => Some(init_matrix(
                InitScheme::GlorotUniform,
                classes,
                self.top().output_len(),
                &mut rng.fork(1 << 20),
            )?),
        };
        Ok(StackParams { layers, readout })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub layers: Vec<CellParams>,
    pub readout: Option<Matrix>,
}

impl StackParams {
    pub fn zeros_like(&self) -> StackParams {
        StackParams {
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            readout: self.readout.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(CellParams::is_finite) && self.readout.as_ref().is_none_or(Matrix::is_finite)
    }
}

/// Recorded trajectory of a stack: `states[t][l]` for `t = 0..=T` (0-based
/// layer index), inputs `x_0..x_{T-1}` and outputs `o_1..o_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackRun {
    pub states: Vec<Vec<CellState>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl StackRun {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn depth(&self) -> usize {
        self.states[0].len()
    }

    /// Linearization point of the step that produced `states[t][l]`, `t >= 1`.
    pub fn point(&self, t: usize, l: usize) -> TransitionPoint {
        let below = if l == 0 { self.inputs[t - 1].clone() } else { self.states[t - 1][l - 1].output.clone() };
        TransitionPoint { prev: self.states[t - 1][l].clone(), below }
    }
}

fn readout_apply(config: &StackConfig, params: &StackParams, top: &[f64]) -> Result<Vec<f64>> {
    match (&config.readout, &params.readout) {
        (Readout::Identity, _) => Ok(top.to_vec()),
        (Readout::Linear { .. }, Some(w)) => w.mul_vec(top),
        (Readout::Linear { .. }, None) => Err(LscError::Config("linear readout without a readout matrix".into())),
    }
}

/// Runs the stack with causal indexing: step `t` of layer `l` reads layer
/// `l-1` at `t-1`, and layer 1 reads input row `t-1`.
pub fn stack_forward(config: &StackConfig, params: &StackParams, inputs: &[Vec<f64>]) -> Result<StackRun> {
    config.validate()?;
    if params.layers.len() != config.depth() {
        return Err(LscError::Config("parameter list does not match the stack depth".into()));
    }
    if inputs.is_empty() {
        return Err(LscError::Argument("need at least one time step".into()));
    }
    for row in inputs {
        if row.len() != config.channels() {
            return Err(LscError::Dimension(format!(
                "input row has {} channels, stack expects {}",
                row.len(),
                config.channels()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LscError::NonFinite("input contains a non-finite value".into()));
        }
    }
    let depth = config.depth();
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(
        config
            .layers
            .iter()
            .zip(&params.layers)
            .map(|(s, p)| s.initial_state(p))
            .collect::<Result<Vec<_>>>()?,
    );
    let mut outputs = Vec::with_capacity(inputs.len());
    for t in 1..=inputs.len() {
        let prev: &Vec<CellState> = &states[t - 1];
        let mut now = Vec::with_capacity(depth);
        for l in 0..depth {
            let below = if l == 0 { &inputs[t - 1] } else { &prev[l - 1].output };
            now.push(cell_forward(&config.layers[l], &params.layers[l], &prev[l], below)?);
        }
        outputs.push(readout_apply(config, params, &now[depth - 1].output)?);
        states.push(now);
    }
    Ok(StackRun { states, inputs: inputs.to_vec(), outputs })
}

/// Gradients of a loss whose output gradients are `d_outputs[t-1] = dL/do_t`.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub params: StackParams,
    pub inputs: Vec<Vec<f64>>,
}

/// Backpropagation through time over the whole stack.
pub fn stack_backward(
    config: &StackConfig,
    params: &StackParams,
    run: &StackRun,
    d_outputs: &[Vec<f64>],
) -> Result<StackGrads> {
    let steps = run.steps();
    if d_outputs.len() != steps {
        return Err(LscError::Dimension("one output gradient per time step required".into()));
    }
    let depth = config.depth();
    let mut grads = params.zeros_like();
    let mut d_inputs = vec![Vec::new(); steps];
    let mut adj: Vec<Vec<f64>> = config.layers.iter().map(|s| vec![0.0; s.state_len()]).collect();
    for t in (1..=steps).rev() {
        let top = &run.states[t][depth - 1];
        let d_top = match (&config.readout, &params.readout) {
            (Readout::Identity, _) => d_outputs[t - 1].clone(),
            (Readout::Linear { .. }, Some(w)) => {
                let g = grads.readout.as_mut().expect("readout gradient allocated");
                for (i, di) in d_outputs[t - 1].iter().enumerate() {
                    for (j, oj) in top.output.iter().enumerate() {
                        g[(i, j)] += di * oj;
                    }
                }
                w.vec_mul(&d_outputs[t - 1])?
            }
            (Readout::Linear { .. }, None) => {
                return Err(LscError::Config("linear readout without a readout matrix".into()))
            }
        };
        let pulled = output_vjp(config.top(), &top.state, &d_top);
        adj[depth - 1].iter_mut().zip(&pulled).for_each(|(a, b)| *a += b);

        let mut next: Vec<Vec<f64>> = config.layers.iter().map(|s| vec![0.0; s.state_len()]).collect();
        for l in 0..depth {
            let point = run.point(t, l);
            let v = cell_vjp(&config.layers[l], &params.layers[l], &point.prev, &point.below, &adj[l])?;
            grads.layers[l].add_assign(&v.d_params)?;
            next[l].iter_mut().zip(&v.d_prev).for_each(|(a, b)| *a += b);
            if l == 0 {
                d_inputs[t - 1] = v.d_below;
            } else {
                let below_state = &run.states[t - 1][l - 1].state;
                let pulled = output_vjp(&config.layers[l - 1], below_state, &v.d_below);
                next[l - 1].iter_mut().zip(&pulled).for_each(|(a, b)| *a += b);
            }
        }
        adj = next;
    }
    Ok(StackGrads { params: grads, inputs: d_inputs })
}
