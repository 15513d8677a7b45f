use rayon::prelude::*;

use super::{GradMode, Measurement, PretrainConfig};
use crate::cells::{cell_vjp, is_trainable, output_map, output_vjp, CellKind, CellState, StackConfig, StackParams, StackRun};
use crate::error::{LscError, Result};
use crate::linalg::{dominant_eigen, Matrix};

/// Largest trainable parameter count accepted by the finite-difference mode.
pub const FD_PARAMETER_LIMIT: usize = 5000;

const DEGENERACY_TOL: f64 = 1e-8;

/// Gradient of the batch radius loss.
#[derive(Debug, Clone)]
pub struct RadiusGrad {
    pub grads: StackParams,
    /// A repeated dominant eigenvalue forced finite differences.
    pub fell_back: bool,
}

/// Gradient of [`Measurement::loss`] with respect to every trainable tensor.
/// `measured` must come from `params` on `batch`.
pub fn radius_grad(
    stack: &StackConfig,
    params: &StackParams,
    measured: &Measurement,
    batch: &[Vec<Vec<f64>>],
    config: &PretrainConfig,
    mode: GradMode,
) -> Result<RadiusGrad> {
    match mode {
        GradMode::KappaOnly => Ok(RadiusGrad { grads: params.zeros_like(), fell_back: false }),
        GradMode::FiniteDifference => {
            Ok(RadiusGrad { grads: finite_difference(stack, params, batch, config)?, fell_back: false })
        }
        GradMode::EigenAdjoint => match adjoint(stack, params, measured, config)? {
            Some(grads) => Ok(RadiusGrad { grads, fell_back: false }),
            None => Ok(RadiusGrad { grads: finite_difference(stack, params, batch, config)?, fell_back: true }),
        },
    }
}

fn finite_difference(
    stack: &StackConfig,
    params: &StackParams,
    batch: &[Vec<Vec<f64>>],
    config: &PretrainConfig,
) -> Result<StackParams> {
    let mut slots = Vec::new();
    for (l, (spec, p)) in stack.layers.iter().zip(&params.layers).enumerate() {
        for (name, m) in p.iter() {
            if is_trainable(&spec.kind, name) {
                slots.extend((0..m.len()).map(|i| (l, name.to_string(), i)));
            }
        }
    }
    if slots.len() > FD_PARAMETER_LIMIT {
        return Err(LscError::Size(format!(
            "{} trainable parameters exceed the finite-difference limit of {FD_PARAMETER_LIMIT}",
            slots.len()
        )));
    }
    let h = config.fd_step;
    let loss_at = |l: usize, name: &str, i: usize, delta: f64| -> Result<f64> {
        let mut q = params.clone();
        q.layers[l].get_mut(name)?.as_mut_slice()[i] += delta;
        Measurement::take(stack, &q, batch)?.loss(config.target_time, config.target_depth)
    };
    let derivs = slots
        .par_iter()
        .map(|(l, name, i)| Ok((loss_at(*l, name, *i, h)? - loss_at(*l, name, *i, -h)?) / (2.0 * h)))
        .collect::<Result<Vec<f64>>>()?;
    let mut grads = params.zeros_like();
    for ((l, name, i), d) in slots.iter().zip(derivs) {
        grads.layers[*l].get_mut(name)?.as_mut_slice()[*i] = d;
    }
    Ok(grads)
}

/// Eigenvalue adjoints chained through the closed-form transition
/// derivatives; `None` when some dominant eigenvalue is repeated.
fn adjoint(
    stack: &StackConfig,
    params: &StackParams,
    measured: &Measurement,
    config: &PretrainConfig,
) -> Result<Option<StackParams>> {
    let kinds: Vec<CellKind> = stack.layers.iter().map(|s| s.kind).collect();
    if kinds.iter().all(|k| matches!(k, CellKind::Pascal { .. })) {
        return pascal_adjoint(params, measured, config).map(Some);
    }
    if kinds.iter().all(|k| matches!(k, CellKind::Simple { .. })) {
        return simple_adjoint(stack, params, measured, config);
    }
    if kinds.iter().all(CellKind::is_differentiable) {
        return differenced_adjoint(stack, params, measured, config);
    }
    Err(LscError::Argument("eigen-adjoint gradients need differentiable cells".into()))
}

/// Both transition derivatives are `rho * I`, so each radius is `|rho|`.
fn pascal_adjoint(params: &StackParams, measured: &Measurement, config: &PretrainConfig) -> Result<StackParams> {
    let mut grads = params.zeros_like();
    let b = measured.batch() as f64;
    for g in &measured.grids {
        for c in g.iter() {
            let rho = params.layers[c.l - 1].get("rho")?[(0, 0)];
            let d = 2.0 * (c.rho_time - config.target_time) + 2.0 * (c.rho_depth - config.target_depth);
            grads.layers[c.l - 1].get_mut("rho")?.as_mut_slice()[0] += d * rho.signum() / b;
        }
    }
    Ok(grads)
}

/// SimpleRNN: `M_time = diag(a'(z)) W_rec`, `M_depth = diag(a'(z)) W_in`.
/// The radius depends on the parameters directly and through `z`, whose
/// sensitivity is carried back through the unrolled network.
fn simple_adjoint(
    stack: &StackConfig,
    params: &StackParams,
    measured: &Measurement,
    config: &PretrainConfig,
) -> Result<Option<StackParams>> {
    let depth = stack.depth();
    let b = measured.batch() as f64;
    let mut grads = params.zeros_like();
    for (run, grid) in measured.runs.iter().zip(&measured.grids) {
        let steps = run.steps();
        // a'(z) and the radius sensitivity on z at every (t, l)
        let mut pre: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); depth]; steps + 1];
        let mut d_z_direct: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); depth]; steps + 1];
        for t in 1..=steps {
            for l in 0..depth {
                let CellKind::Simple { activation } = stack.layers[l].kind else { unreachable!() };
                let p = &params.layers[l];
                let (w_rec, w_in) = (p.get("W_rec")?, p.get("W_in")?);
                let point = run.point(t, l);
                let mut z = w_rec.mul_vec(&point.prev.state)?;
                z.iter_mut().zip(w_in.mul_vec(&point.below)?).for_each(|(a, v)| *a += v);
                z.iter_mut().zip(p.get("b")?.as_slice()).for_each(|(a, v)| *a += v);
                let n = z.len();
                let da: Vec<f64> = z.iter().map(|v| activation.derivative(*v)).collect();
                let dda: Vec<f64> = z.iter().map(|v| activation.second_derivative(*v)).collect();
                let cell = grid.get(t, l + 1)?;
                let mut dz = vec![0.0; n];
                for (m, target, weight, name) in [
                    (&cell.time_jac, config.target_time, w_rec, "W_rec"),
                    (&cell.depth_jac, config.target_depth, w_in, "W_in"),
                ] {
                    let Some((rho, gm)) = radius_sensitivity(m)? else { return Ok(None) };
                    let coef = 2.0 * (rho - target) / b;
                    let gw = grads.layers[l].get_mut(name)?;
                    for i in 0..n {
                        for j in 0..weight.cols() {
                            let gij = coef * gm[(i, j)];
                            gw.as_mut_slice()[i * weight.cols() + j] += gij * da[i];
                            dz[i] += gij * weight[(i, j)] * dda[i];
                        }
                    }
                }
                pre[t][l] = da;
                d_z_direct[t][l] = dz;
            }
        }
        backprop_pre_activation(stack, params, run, &pre, &d_z_direct, &mut grads)?;
    }
    Ok(Some(grads))
}

/// The radius and `d rho / d M` restricted to the unpadded block of `m`.
fn radius_sensitivity(m: &Matrix) -> Result<Option<(f64, Matrix)>> {
    let sq = m.square_padded();
    let dom = dominant_eigen(&sq, DEGENERACY_TOL)?;
    if dom.degenerate || dom.value.norm() <= super::DEGENERATE_RADIUS {
        return Ok(None);
    }
    let g = dom.radius_gradient();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            out.as_mut_slice()[i * m.cols() + j] = g[(i, j)];
        }
    }
    Ok(Some((dom.value.norm(), out)))
}

fn backprop_pre_activation(
    stack: &StackConfig,
    params: &StackParams,
    run: &StackRun,
    pre: &[Vec<Vec<f64>>],
    d_z_direct: &[Vec<Vec<f64>>],
    grads: &mut StackParams,
) -> Result<()> {
    let depth = stack.depth();
    let steps = run.steps();
    let mut adj: Vec<Vec<f64>> = stack.layers.iter().map(|s| vec![0.0; s.width]).collect();
    for t in (1..=steps).rev() {
        let mut next: Vec<Vec<f64>> = stack.layers.iter().map(|s| vec![0.0; s.width]).collect();
        for l in 0..depth {
            let da = &pre[t][l];
            let dz: Vec<f64> = adj[l].iter().zip(da).zip(&d_z_direct[t][l]).map(|((a, d), e)| a * d + e).collect();
            let point = run.point(t, l);
            let p = &params.layers[l];
            let g = &mut grads.layers[l];
            outer_add(g.get_mut("W_rec")?, &dz, &point.prev.state);
            outer_add(g.get_mut("W_in")?, &dz, &point.below);
            g.get_mut("b")?.as_mut_slice().iter_mut().zip(&dz).for_each(|(a, v)| *a += v);
            next[l].iter_mut().zip(p.get("W_rec")?.vec_mul(&dz)?).for_each(|(a, v)| *a += v);
            if l > 0 {
                next[l - 1].iter_mut().zip(p.get("W_in")?.vec_mul(&dz)?).for_each(|(a, v)| *a += v);
            }
        }
        adj = next;
    }
    Ok(())
}

/// Step along one state or input axis used to differentiate a transition
/// derivative in [`differenced_adjoint`].
const AXIS_STEP: f64 = 1e-5;

/// Gated cells: `sum_ij G_ij dM_ij/d(theta, h, x)` is the derivative along
/// axis `j` of the vector-Jacobian product with column `G_{:,j}`, taken by a
/// central difference of two reverse passes. Sensitivities on the incoming
/// states are then carried back through the unrolled network.
fn differenced_adjoint(
    stack: &StackConfig,
    params: &StackParams,
    measured: &Measurement,
    config: &PretrainConfig,
) -> Result<Option<StackParams>> {
    let depth = stack.depth();
    let b = measured.batch() as f64;
    let mut grads = params.zeros_like();
    let h = AXIS_STEP;
    for (run, grid) in measured.runs.iter().zip(&measured.grids) {
        let steps = run.steps();
        let mut injected: Vec<Vec<Vec<f64>>> =
            (0..=steps).map(|_| stack.layers.iter().map(|s| vec![0.0; s.state_len()]).collect()).collect();
        for t in 1..=steps {
            for l in 0..depth {
                let spec = &stack.layers[l];
                let p = &params.layers[l];
                let point = run.point(t, l);
                let cell = grid.get(t, l + 1)?;
                let rows = spec.state_len();
                let mut d_below = vec![0.0; point.below.len()];
                for (m, target, along_state) in
                    [(&cell.time_jac, config.target_time, true), (&cell.depth_jac, config.target_depth, false)]
                {
                    let Some((rho, gm)) = radius_sensitivity(m)? else { return Ok(None) };
                    let coef = 2.0 * (rho - target) / b;
                    let axes = if along_state { rows } else { point.below.len() };
                    for j in 0..axes {
                        let col: Vec<f64> = (0..rows).map(|i| coef * gm[(i, j)]).collect();
                        if col.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        let vjp_at = |delta: f64| {
                            if along_state {
                                let mut state = point.prev.state.clone();
                                state[j] += delta;
                                let prev = CellState { output: output_map(spec, &state), state };
                                cell_vjp(spec, p, &prev, &point.below, &col)
                            } else {
                                let mut below = point.below.clone();
                                below[j] += delta;
                                cell_vjp(spec, p, &point.prev, &below, &col)
                            }
                        };
                        let (plus, minus) = (vjp_at(h)?, vjp_at(-h)?);
                        let mut dp = plus.d_params;
                        let mut neg = minus.d_params;
                        neg.scale_in_place(-1.0);
                        dp.add_assign(&neg)?;
                        dp.scale_in_place(1.0 / (2.0 * h));
                        grads.layers[l].add_assign(&dp)?;
                        for (a, (x, y)) in injected[t - 1][l].iter_mut().zip(plus.d_prev.iter().zip(&minus.d_prev)) {
                            *a += (x - y) / (2.0 * h);
                        }
                        for (a, (x, y)) in d_below.iter_mut().zip(plus.d_below.iter().zip(&minus.d_below)) {
                            *a += (x - y) / (2.0 * h);
                        }
                    }
                }
                if l > 0 {
                    let below_state = &run.states[t - 1][l - 1].state;
                    let pulled = output_vjp(&stack.layers[l - 1], below_state, &d_below);
                    injected[t - 1][l - 1].iter_mut().zip(&pulled).for_each(|(a, v)| *a += v);
                }
            }
        }
        backprop_states(stack, params, run, &injected, &mut grads)?;
    }
    Ok(Some(grads))
}

/// Reverse pass for gradients `injected[t][l]` placed directly on the states.
fn backprop_states(
    stack: &StackConfig,
    params: &StackParams,
    run: &StackRun,
    injected: &[Vec<Vec<f64>>],
    grads: &mut StackParams,
) -> Result<()> {
    let depth = stack.depth();
    let mut adj: Vec<Vec<f64>> = stack.layers.iter().map(|s| vec![0.0; s.state_len()]).collect();
    for t in (1..=run.steps()).rev() {
        for (a, inj) in adj.iter_mut().zip(&injected[t]) {
            a.iter_mut().zip(inj).for_each(|(x, y)| *x += y);
        }
        let mut next: Vec<Vec<f64>> = stack.layers.iter().map(|s| vec![0.0; s.state_len()]).collect();
        for l in 0..depth {
            if adj[l].iter().all(|v| *v == 0.0) {
                continue;
            }
            let point = run.point(t, l);
            let v = cell_vjp(&stack.layers[l], &params.layers[l], &point.prev, &point.below, &adj[l])?;
            grads.layers[l].add_assign(&v.d_params)?;
            next[l].iter_mut().zip(&v.d_prev).for_each(|(a, b)| *a += b);
            if l > 0 {
                let pulled = output_vjp(&stack.layers[l - 1], &run.states[t - 1][l - 1].state, &v.d_below);
                next[l - 1].iter_mut().zip(&pulled).for_each(|(a, b)| *a += b);
            }
        }
        adj = next;
    }
    Ok(())
}

fn outer_add(m: &mut Matrix, u: &[f64], v: &[f64]) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            data[i * cols + j] += ui * vj;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Activation, Readout};
    use crate::linalg::RandomSource;
    use crate::pretrain::{BatchSource, GaussianBatches};

    fn grads(stack: &StackConfig, params: &StackParams, cfg: &PretrainConfig, mode: GradMode) -> RadiusGrad {
        let batch = GaussianBatches::new(stack.channels(), 5, 3, RandomSource::new(4)).next_batch(1).unwrap();
        let m = Measurement::take(stack, params, &batch).unwrap();
        radius_grad(stack, params, &m, &batch, cfg, mode).unwrap()
    }

    #[test]
    fn pascal_gradient_is_hand_derivative() {
        let stack = StackConfig::uniform(CellKind::Pascal { rho: 0.8 }, 2, 1, 1, Readout::Identity).unwrap();
        let params = stack.init_params(&RandomSource::new(0)).unwrap();
        let cfg = PretrainConfig::with_target(0.5);
        let g = grads(&stack, &params, &cfg, GradMode::EigenAdjoint);
        // T = 5 steps, two transitions per step, each contributing 2 (rho - rho_t)
        for l in 0..2 {
            let v = g.grads.layers[l].get("rho").unwrap()[(0, 0)];
            assert!((v - 10.0 * 2.0 * 0.3).abs() < 1e-12, "{v}");
        }
        let fd = grads(&stack, &params, &cfg, GradMode::FiniteDifference);
        assert!(fd.grads.layers[0].get("rho").unwrap().max_abs_diff(g.grads.layers[0].get("rho").unwrap()).unwrap() < 1e-6);
        let at_target = StackConfig::uniform(CellKind::Pascal { rho: 0.5 }, 2, 1, 1, Readout::Identity).unwrap();
        let p = at_target.init_params(&RandomSource::new(0)).unwrap();
        let z = grads(&at_target, &p, &cfg, GradMode::EigenAdjoint);
        assert_eq!(z.grads.layers[1].get("rho").unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn simple_adjoint_matches_finite_differences() {
        for activation in [Activation::Sigmoid, Activation::Swish] {
            let stack = StackConfig::uniform(CellKind::Simple { activation }, 2, 4, 3, Readout::Identity).unwrap();
            let params = stack.init_params(&RandomSource::new(2)).unwrap();
            let cfg = PretrainConfig::with_target(0.5);
            let a = grads(&stack, &params, &cfg, GradMode::EigenAdjoint);
            assert!(!a.fell_back);
            let f = grads(&stack, &params, &cfg, GradMode::FiniteDifference);
            let scale = a.grads.layers.iter().flat_map(|p| p.iter().map(|(_, m)| m.max_abs())).fold(0.0, f64::max);
            for (pa, pf) in a.grads.layers.iter().zip(&f.grads.layers) {
                for ((name, x), (_, y)) in pa.iter().zip(pf.iter()) {
                    let dev = x.max_abs_diff(y).unwrap() / scale;
                    assert!(dev < 1e-4, "{activation:?} {name}: {dev}");
                }
            }
        }
    }

    #[test]
    fn gated_adjoint_matches_finite_differences() {
        for kind in [CellKind::Gru, CellKind::Lstm] {
            let stack = StackConfig::uniform(kind, 2, 3, 2, Readout::Identity).unwrap();
            let mut params = stack.init_params(&RandomSource::new(3)).unwrap();
            let mut rng = RandomSource::new(8);
            for p in &mut params.layers {
                for (_, m) in p.iter_mut() {
                    m.as_mut_slice().iter_mut().for_each(|v| *v += 0.3 * rng.normal());
                }
            }
            let cfg = PretrainConfig::with_target(0.5);
            let a = grads(&stack, &params, &cfg, GradMode::EigenAdjoint);
            assert!(!a.fell_back);
            let f = grads(&stack, &params, &cfg, GradMode::FiniteDifference);
            let scale = a.grads.layers.iter().flat_map(|p| p.iter().map(|(_, m)| m.max_abs())).fold(0.0, f64::max);
            for (pa, pf) in a.grads.layers.iter().zip(&f.grads.layers) {
                for ((name, x), (_, y)) in pa.iter().zip(pf.iter()) {
                    let dev = x.max_abs_diff(y).unwrap() / scale;
                    assert!(dev < 1e-4, "{} {name}: {dev}", kind.name());
                }
            }
        }
    }

    #[test]
    fn finite_difference_guard() {
        let stack = StackConfig::uniform(CellKind::Gru, 1, 48, 2, Readout::Identity).unwrap();
        let params = stack.init_params(&RandomSource::new(0)).unwrap();
        let batch = vec![vec![vec![0.1, 0.2]; 2]];
        let m = Measurement::take(&stack, &params, &batch).unwrap();
        let cfg = PretrainConfig::default();
        let r = radius_grad(&stack, &params, &m, &batch, &cfg, GradMode::FiniteDifference);
        assert!(matches!(r, Err(LscError::Size(_))));
        let alif = StackConfig::uniform(CellKind::alif(crate::cells::AlifVariant::Plus), 1, 3, 2, Readout::Identity).unwrap();
        let ap = alif.init_params(&RandomSource::new(0)).unwrap();
        let am = Measurement::take(&alif, &ap, &batch).unwrap();
        assert!(radius_grad(&alif, &ap, &am, &batch, &cfg, GradMode::EigenAdjoint).is_err());
    }
}
