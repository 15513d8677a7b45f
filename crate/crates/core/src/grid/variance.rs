use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::paths::adjoint_sweep;
use super::JacobianGrid;
use crate::cells::{cell_vjp, output_vjp, CellParams, Readout, StackConfig, StackParams, StackRun};
use crate::error::{LscError, Result};

/// Parameter update of layer `layer` (1-based) assembled path by path:
/// for each output time `t` the row `dL/do_t * do_t/dh_{t,L}` is carried
/// down the grid to every `h_{t',l}`, `t' <= t`, and contracted with the
/// local parameter derivative of that step.
pub fn update_decomposition(
    config: &StackConfig,
    params: &StackParams,
    run: &StackRun,
    grid: &JacobianGrid,
    d_outputs: &[Vec<f64>],
    layer: usize,
) -> Result<CellParams> {
    let (steps, depth) = (run.steps(), config.depth());
    if layer == 0 || layer > depth {
        return Err(LscError::Range(format!("layer {layer} outside 1..={depth}")));
    }
    if d_outputs.len() != steps || grid.steps() != steps || grid.depth() != depth {
        return Err(LscError::Dimension("run, grid and output gradients disagree".into()));
    }
    let spec = &config.layers[layer - 1];
    // the local contraction is linear in the row, so rows reaching the same
    // cell from different output times are summed first
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; spec.state_len()]; steps + 1];
    for t in 1..=steps {
        let g = &d_outputs[t - 1];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let d_top = match (&config.readout, &params.readout) {
            (Readout::Identity, _) => g.clone(),
            (Readout::Linear { .. }, Some(w)) => w.vec_mul(g)?,
            (Readout::Linear { .. }, None) => {
                return Err(LscError::Config("linear readout without a readout matrix".into()))
            }
        };
        let u = output_vjp(config.top(), &run.states[t][depth - 1].state, &d_top);
        let sweep = adjoint_sweep(grid, t, depth, &u)?;
        for (s, row) in rows.iter_mut().enumerate().take(t + 1).skip(1) {
            row.iter_mut().zip(&sweep[s][layer - 1]).for_each(|(a, b)| *a += b);
        }
    }
    let mut total = params.layers[layer - 1].zeros_like();
    for (s, row) in rows.iter().enumerate().skip(1) {
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        let point = run.point(s, layer - 1);
        let v = cell_vjp(spec, &params.layers[layer - 1], &point.prev, &point.below, row)?;
        total.add_assign(&v.d_params)?;
    }
    Ok(total)
}

/// Element-wise batch variance of a layer's parameter update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateVariance {
    pub layer: usize,
    pub batch: usize,
    /// Mean element-wise variance of each tensor.
    pub per_tensor: BTreeMap<String, f64>,
    /// Mean over every parameter of the layer.
    pub mean: f64,
    pub elementwise: CellParams,
}

/// Runs [`update_decomposition`] on every `(run, d_outputs)` sample and
/// returns the unbiased variance across the batch.
pub fn update_variance(
    config: &StackConfig,
    params: &StackParams,
    batch: &[(StackRun, Vec<Vec<f64>>)],
    layer: usize,
) -> Result<UpdateVariance> {
    if batch.len() < 2 {
        return Err(LscError::Statistics(format!("variance needs a batch of at least 2, got {}", batch.len())));
    }
    let updates = batch
        .iter()
        .map(|(run, d)| {
            let grid = JacobianGrid::compute(config, params, run, false)?;
            update_decomposition(config, params, run, &grid, d, layer)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = updates.len() as f64;
    let mut mean = updates[0].zeros_like();
    for u in &updates {
        mean.add_assign(u)?;
    }
    mean.scale_in_place(1.0 / n);
    let mut var = mean.zeros_like();
    for u in &updates {
        for ((_, v), ((_, x), (_, m))) in var.iter_mut().zip(u.iter().zip(mean.iter())) {
            for ((vi, xi), mi) in v.as_mut_slice().iter_mut().zip(x.as_slice()).zip(m.as_slice()) {
                *vi += (xi - mi).powi(2) / (n - 1.0);
            }
        }
    }
    let per_tensor: BTreeMap<String, f64> =
        var.iter().map(|(k, m)| (k.to_string(), m.as_slice().iter().sum::<f64>() / m.len().max(1) as f64)).collect();
    let count = var.parameter_count().max(1) as f64;
    let overall = var.iter().map(|(_, m)| m.as_slice().iter().sum::<f64>()).sum::<f64>() / count;
    Ok(UpdateVariance { layer, batch: batch.len(), per_tensor, mean: overall, elementwise: var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{stack_backward, stack_forward, Activation, CellKind};
    use crate::linalg::RandomSource;

    fn sample(config: &StackConfig, params: &StackParams, t: usize, rng: &mut RandomSource) -> (StackRun, Vec<Vec<f64>>) {
        let x: Vec<Vec<f64>> = (0..t).map(|_| (0..config.channels()).map(|_| rng.normal()).collect()).collect();
        let run = stack_forward(config, params, &x).unwrap();
        let d = (0..t).map(|_| (0..config.output_len()).map(|_| rng.normal()).collect()).collect();
        (run, d)
    }

    #[test]
    fn decomposition_matches_reverse_mode() {
        let kinds = [
            CellKind::Pascal { rho: 0.9 },
            CellKind::Simple { activation: Activation::Sigmoid },
            CellKind::Simple { activation: Activation::Swish },
            CellKind::Gru,
            CellKind::Lstm,
        ];
        let mut rng = RandomSource::new(5);
        for kind in kinds {
            let (width, channels, readout) = match kind {
                CellKind::Pascal { .. } => (3, 3, Readout::Identity),
                _ => (4, 2, Readout::Linear { classes: 3 }),
            };
            let cfg = StackConfig::uniform(kind, 3, width, channels, readout).unwrap();
            let p = cfg.init_params(&RandomSource::new(11)).unwrap();
            let (run, d) = sample(&cfg, &p, 6, &mut rng);
            let grid = JacobianGrid::compute(&cfg, &p, &run, false).unwrap();
            let reference = stack_backward(&cfg, &p, &run, &d).unwrap();
            for layer in 1..=3 {
                let ours = update_decomposition(&cfg, &p, &run, &grid, &d, layer).unwrap();
                for ((name, a), (_, b)) in ours.iter().zip(reference.params.layers[layer - 1].iter()) {
                    let diff = a.max_abs_diff(b).unwrap();
                    assert!(diff < 1e-8, "{} layer {layer} {name}: {diff}", kind.name());
                }
            }
        }
    }

    #[test]
    fn zero_gradient_has_zero_variance() {
        let cfg = StackConfig::uniform(CellKind::Gru, 2, 3, 2, Readout::Identity).unwrap();
        let p = cfg.init_params(&RandomSource::new(0)).unwrap();
        let mut rng = RandomSource::new(1);
        let batch: Vec<_> = (0..4)
            .map(|_| {
                let (run, d) = sample(&cfg, &p, 5, &mut rng);
                let zero = d.iter().map(|r| vec![0.0; r.len()]).collect();
                (run, zero)
            })
            .collect();
        let v = update_variance(&cfg, &p, &batch, 1).unwrap();
        assert_eq!(v.mean, 0.0);
        assert!(v.per_tensor.values().all(|x| *x == 0.0));
        assert!(matches!(update_variance(&cfg, &p, &batch[..1], 1), Err(LscError::Statistics(_))));
    }

    #[test]
    fn unit_rho_variance_outgrows_half_rho() {
        let ratio = |t: usize| {
            let var = |rho: f64| {
                let cfg = StackConfig::uniform(CellKind::Pascal { rho }, 3, 1, 1, Readout::Identity).unwrap();
                let p = cfg.init_params(&RandomSource::new(0)).unwrap();
                let mut rng = RandomSource::new(7);
                let batch: Vec<_> = (0..16).map(|_| sample(&cfg, &p, t, &mut rng)).collect();
                update_variance(&cfg, &p, &batch, 1).unwrap().mean
            };
            var(1.0) / var(0.5)
        };
        let (a, b, c) = (ratio(8), ratio(16), ratio(32));
        assert!(a < b && b < c, "{a} {b} {c}");
    }
}
