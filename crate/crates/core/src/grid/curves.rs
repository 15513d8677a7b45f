use serde::{Deserialize, Serialize};

use super::combinatorics::{causal_path_count, ln_biguint};
use super::paths::grid_jacobian_column;
use super::JacobianGrid;
use crate::cells::{stack_forward, CellKind, Readout, StackConfig};
use crate::error::{LscError, Result};
use crate::linalg::{induced_norm, NormKind, RandomSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Binomial,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub value: f64,
    pub bound_binomial: f64,
    pub bound_constant: f64,
}

/// `||J^{T,L}_{t,1}||` against the two bound shapes.
///
/// The binomial shape at `t` is the number of causal paths `C(T - t, L - 1)`.
/// Both constants are the tightest upper bounds over the reachable points
/// (`T - t >= L - 1`), and each deviation is the largest relative gap between
/// curve and bound there, `1 - min(ratio) / max(ratio)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub steps: usize,
    pub depth: usize,
    pub norm: NormKind,
    pub points: Vec<CurvePoint>,
    pub c1: f64,
    pub c2: f64,
    pub binomial_deviation: f64,
    pub constant_deviation: f64,
    /// The branch with the smaller deviation.
    pub kind: BoundKind,
}

fn tight_fit(ratios: &[f64]) -> (f64, f64) {
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || ratios.is_empty() {
        return (f64::MIN_POSITIVE, 0.0);
    }
    (max, 1.0 - min / max)
}

pub fn norm_curve(grid: &JacobianGrid, norm: NormKind) -> Result<BoundCurve> {
    let (steps, depth) = (grid.steps(), grid.depth());
    let column = grid_jacobian_column(grid, 1)?;
    let values: Vec<f64> = column.iter().map(|j| induced_norm(j, norm)).collect::<Result<_>>()?;
    let dl = (depth - 1) as u64;
    let ln_shape: Vec<f64> = (0..=steps).map(|t| ln_biguint(&causal_path_count((steps - t) as u64, dl))).collect();
    let reachable: Vec<usize> = (0..=steps).filter(|t| steps - t >= depth - 1).collect();
    let binomial_ratios: Vec<f64> =
        reachable.iter().map(|&t| if values[t] > 0.0 { (values[t].ln() - ln_shape[t]).exp() } else { 0.0 }).collect();
    let constant_values: Vec<f64> = reachable.iter().map(|&t| values[t]).collect();
    let (c1, binomial_deviation) = tight_fit(&binomial_ratios);
    let (c2, constant_deviation) = tight_fit(&constant_values);
    let points = (0..=steps)
        .map(|t| CurvePoint {
            t,
            value: values[t],
            bound_binomial: c1 * ln_shape[t].exp(),
            bound_constant: c2,
        })
        .collect();
    let kind = if binomial_deviation <= constant_deviation { BoundKind::Binomial } else { BoundKind::Constant };
    Ok(BoundCurve { steps, depth, norm, points, c1, c2, binomial_deviation, constant_deviation, kind })
}

impl BoundCurve {
    /// CSV with columns `t, value, bound_binomial, bound_constant`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Norm curve of a width-1 PascalRNN driven by standard-normal inputs.
pub fn pascal_curve(depth: usize, steps: usize, rho: f64, norm: NormKind, rng: &RandomSource) -> Result<BoundCurve> {
    if depth == 0 || steps == 0 {
        return Err(LscError::Argument("a Pascal curve needs L >= 1 and T >= 1".into()));
    }
    let stack = StackConfig::uniform(CellKind::Pascal { rho }, depth, 1, 1, Readout::Identity)?;
    let params = stack.init_params(rng)?;
    let mut r = rng.fork(1);
    let x: Vec<Vec<f64>> = (0..steps).map(|_| vec![r.normal()]).collect();
    let run = stack_forward(&stack, &params, &x)?;
    let grid = JacobianGrid::compute(&stack, &params, &run, false)?;
    norm_curve(&grid, norm)
}
