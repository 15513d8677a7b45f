//! The time x depth gradient grid.

mod combinatorics;
mod covariance;
mod curves;
mod paths;
mod variance;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{jac_depth, jac_time, StackConfig, StackParams, StackRun};
use crate::error::{LscError, Result};
use crate::linalg::{induced_norm, spectral_radius, Matrix, NormKind};

pub use combinatorics::{
    causal_path_count, growth_regime, limit_curve, ln_biguint, log_path_count, path_count, total_path_bound,
    GrowthLimit, GrowthRegime, PathBound,
};
pub use covariance::{decaying_covariance, CovarianceReport, LagStatistics};
pub use curves::{norm_curve, pascal_curve, BoundCurve, BoundKind, CurvePoint};
pub use paths::{
    adjoint_sweep, brute_force_paths, grid_jacobian, grid_jacobian_column, grid_jacobian_from, MAX_ENUMERATED_PATHS,
};
pub use variance::{update_decomposition, update_variance, UpdateVariance};

/// Induced 1-, 2- and infinity-norms of one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTriple {
    pub one: f64,
    pub two: f64,
    pub inf: f64,
}

impl NormTriple {
    pub fn of(m: &Matrix) -> Result<Self> {
        Ok(Self {
            one: induced_norm(m, NormKind::One)?,
            two: induced_norm(m, NormKind::Two)?,
            inf: induced_norm(m, NormKind::Inf)?,
        })
    }

    pub fn get(&self, p: NormKind) -> f64 {
        match p {
            NormKind::One => self.one,
            NormKind::Two => self.two,
            NormKind::Inf => self.inf,
        }
    }
}

/// The transition derivatives entering `h_{t,l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionJacobians {
    pub t: usize,
    /// 1-based layer index.
    pub l: usize,
    pub time_jac: Matrix,
    pub depth_jac: Matrix,
    pub rho_time: f64,
    /// Radius of the depth Jacobian zero-padded to a square.
    pub rho_depth: f64,
    pub a_time: Option<NormTriple>,
    pub a_depth: Option<NormTriple>,
}

/// All transition derivatives of a run, `t = 1..=T`, `l = 1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianGrid {
    steps: usize,
    depth: usize,
    cells: Vec<TransitionJacobians>,
}

impl JacobianGrid {
    /// Evaluates every transition derivative of `run`; `with_norms` also
    /// stores the induced norms.
    pub fn compute(config: &StackConfig, params: &StackParams, run: &StackRun, with_norms: bool) -> Result<Self> {
        let (steps, depth) = (run.steps(), run.depth());
        if depth != config.depth() {
            return Err(LscError::Config("run and stack depth differ".into()));
        }
        let cells = (0..steps * depth)
            .into_par_iter()
            .map(|idx| {
                let (t, l) = (idx / depth + 1, idx % depth);
                let spec = &config.layers[l];
                let point = run.point(t, l);
                let below = if l == 0 { None } else { Some(&config.layers[l - 1]) };
                let time_jac = jac_time(spec, &params.layers[l], &point)?;
                let depth_jac = jac_depth(spec, &params.layers[l], &point, below)?;
                let rho_time = spectral_radius(&time_jac)?;
                let rho_depth = spectral_radius(&depth_jac.square_padded())?;
                let (a_time, a_depth) = if with_norms {
                    (Some(NormTriple::of(&time_jac)?), Some(NormTriple::of(&depth_jac)?))
                } else {
                    (None, None)
                };
                Ok(TransitionJacobians { t, l: l + 1, time_jac, depth_jac, rho_time, rho_depth, a_time, a_depth })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, depth, cells })
    }

    /// Builds a grid from explicit matrices (`time[t-1][l-1]`, `depth[t-1][l-1]`).
    pub fn from_matrices(time: Vec<Vec<Matrix>>, depth: Vec<Vec<Matrix>>) -> Result<Self> {
        let steps = time.len();
        let layers = time.first().map_or(0, Vec::len);
        if steps == 0 || layers == 0 || depth.len() != steps {
            return Err(LscError::Dimension("grid needs T >= 1 and L >= 1 matching matrices".into()));
        }
        let mut cells = Vec::with_capacity(steps * layers);
        for (t, (tr, dr)) in time.into_iter().zip(depth).enumerate() {
            if tr.len() != layers || dr.len() != layers {
                return Err(LscError::Dimension("ragged grid".into()));
            }
            for (l, (tj, dj)) in tr.into_iter().zip(dr).enumerate() {
                let rho_time = spectral_radius(&tj)?;
                let rho_depth = spectral_radius(&dj.square_padded())?;
                cells.push(TransitionJacobians {
                    t: t + 1,
                    l: l + 1,
                    time_jac: tj,
                    depth_jac: dj,
                    rho_time,
                    rho_depth,
                    a_time: None,
                    a_depth: None,
                });
            }
        }
        Ok(Self { steps, depth: layers, cells })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Transition derivatives into `h_{t,l}`; `1 <= t <= T`, `1 <= l <= L`.
    pub fn get(&self, t: usize, l: usize) -> Result<&TransitionJacobians> {
        if t == 0 || t > self.steps || l == 0 || l > self.depth {
            return Err(LscError::Range(format!("({t}, {l}) outside the {}x{} grid", self.steps, self.depth)));
        }
        Ok(&self.cells[(t - 1) * self.depth + (l - 1)])
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionJacobians> {
        self.cells.iter()
    }

    /// State width of layer `l` (rows of its transition derivatives).
    pub fn state_len(&self, l: usize) -> usize {
        self.cells[l - 1].time_jac.rows()
    }
}
