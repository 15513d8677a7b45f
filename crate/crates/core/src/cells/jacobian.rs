use super::step::{cell_vjp, output_vjp};
use super::{CellParams, CellSpec, CellState};
use crate::error::Result;
use crate::linalg::Matrix;

/// Everything a step consumes: the previous state of the layer and the
/// vector arriving from below.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPoint {
    pub prev: CellState,
    pub below: Vec<f64>,
}

/// Rows of the step Jacobians, one reverse pass per state component.
fn rows(spec: &CellSpec, params: &CellParams, point: &TransitionPoint) -> Result<(Matrix, Matrix)> {
    let n = spec.state_len();
    let m = point.below.len();
    let mut time = Matrix::zeros(n, n);
    let mut depth = Matrix::zeros(n, m);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let v = cell_vjp(spec, params, &point.prev, &point.below, &e)?;
        e[i] = 0.0;
        time.as_mut_slice()[i * n..(i + 1) * n].copy_from_slice(&v.d_prev);
        depth.as_mut_slice()[i * m..(i + 1) * m].copy_from_slice(&v.d_below);
    }
    Ok((time, depth))
}

/// `d h_{t,l} / d h_{t-1,l}` over the concatenated state.
pub fn jac_time(spec: &CellSpec, params: &CellParams, point: &TransitionPoint) -> Result<Matrix> {
    Ok(rows(spec, params, point)?.0)
}

/// `d h_{t,l} / d out_{t-1,l-1}`, with the columns of the emitted vector
/// placed first and zero-padded to the width of the state below. For the
/// first layer (`below == None`) the columns are the task channels.
pub fn jac_depth(
    spec: &CellSpec,
    params: &CellParams,
    point: &TransitionPoint,
    below: Option<&CellSpec>,
) -> Result<Matrix> {
    let d = rows(spec, params, point)?.1;
    Ok(match below {
        Some(b) => d.zero_pad(d.rows(), b.state_len()),
        None => d,
    })
}

/// Jacobian of the emitted vector w.r.t. the state (surrogate for spikes).
pub fn output_jacobian(spec: &CellSpec, state: &[f64]) -> Matrix {
    let k = spec.output_len();
    let n = spec.state_len();
    let mut out = Matrix::zeros(k, n);
    let mut e = vec![0.0; k];
    for i in 0..k {
        e[i] = 1.0;
        let row = output_vjp(spec, state, &e);
        e[i] = 0.0;
        out.as_mut_slice()[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    out
}

/// Full chain `d h_{t,l} / d h_{t-1,l-1}` through the output map of the layer below.
pub fn jac_depth_chained(
    spec: &CellSpec,
    params: &CellParams,
    point: &TransitionPoint,
    below: &CellSpec,
    below_state: &[f64],
) -> Result<Matrix> {
    let d = rows(spec, params, point)?.1;
    d.matmul(&output_jacobian(below, below_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::step::{cell_forward, output_map};
    use crate::cells::{Activation, AlifVariant, CellKind};
    use crate::linalg::{spectral_radius, RandomSource};

    fn random_point(spec: &CellSpec, rng: &mut RandomSource, scale: f64) -> TransitionPoint {
        let mut state: Vec<f64> = (0..spec.state_len()).map(|_| scale * rng.normal()).collect();
        if let CellKind::Alif { .. } = spec.kind {
            // thresholds are positive in practice
            for v in &mut state[spec.width..] {
                *v = v.abs();
            }
        }
        let output = output_map(spec, &state);
        TransitionPoint {
            prev: CellState { state, output },
            below: (0..spec.input_width).map(|_| scale * rng.normal()).collect(),
        }
    }

    fn perturb_params(spec: &CellSpec, params: &mut CellParams, rng: &mut RandomSource) {
        for (name, m) in params.iter_mut() {
            if name.starts_with("tau") {
                continue;
            }
            for v in m.as_mut_slice() {
                *v += 0.3 * rng.normal();
            }
        }
        if let CellKind::Alif { .. } = spec.kind {
            params.get_mut("tau_y").unwrap().as_mut_slice().iter_mut().for_each(|v| *v = 0.5 + rng.uniform());
        }
    }

    /// Central differences of the forward step over the state and below vectors.
    fn fd_jacobians(spec: &CellSpec, params: &CellParams, p: &TransitionPoint, h: f64) -> (Matrix, Matrix) {
        let n = spec.state_len();
        let m = p.below.len();
        let f = |prev: &[f64], below: &[f64]| {
            let st = CellState { state: prev.to_vec(), output: output_map(spec, prev) };
            cell_forward(spec, params, &st, below).unwrap().state
        };
        let mut time = Matrix::zeros(n, n);
        for j in 0..n {
            let mut a = p.prev.state.clone();
            let mut b = p.prev.state.clone();
            a[j] += h;
            b[j] -= h;
            let (fa, fb) = (f(&a, &p.below), f(&b, &p.below));
            for i in 0..n {
                time[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        let mut depth = Matrix::zeros(n, m);
        for j in 0..m {
            let mut a = p.below.clone();
            let mut b = p.below.clone();
            a[j] += h;
            b[j] -= h;
            let (fa, fb) = (f(&p.prev.state, &a), f(&p.prev.state, &b));
            for i in 0..n {
                depth[(i, j)] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        (time, depth)
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.max_abs_diff(b).unwrap() / b.max_abs().max(1.0)
    }

    #[test]
    fn analytic_matches_fd_for_each_cell() {
        let kinds = [
            CellKind::Pascal { rho: 0.7 },
            CellKind::Simple { activation: Activation::Sigmoid },
            CellKind::Simple { activation: Activation::Swish },
            CellKind::Gru,
            CellKind::Lstm,
            CellKind::Alif { variant: AlifVariant::Plus, gamma: 0.5, omega: 1.0, relaxed: true },
        ];
        let mut rng = RandomSource::new(17);
        for kind in kinds {
            let (w, m) = if matches!(kind, CellKind::Pascal { .. }) { (4, 4) } else { (4, 3) };
            let spec = CellSpec::new(kind, w, m).unwrap();
            for _ in 0..10 {
                let mut params = spec.init_params(&mut rng).unwrap();
                perturb_params(&spec, &mut params, &mut rng);
                let p = random_point(&spec, &mut rng, 1.0);
                let (ft, fdp) = fd_jacobians(&spec, &params, &p, 1e-5);
                let jt = jac_time(&spec, &params, &p).unwrap();
                let jd = jac_depth(&spec, &params, &p, None).unwrap();
                let tol = if matches!(kind, CellKind::Alif { .. }) { 1e-5 } else { 1e-6 };
                assert!(rel_err(&jt, &ft) < tol, "{} time", kind.name());
                assert!(rel_err(&jd, &fdp) < tol, "{} depth", kind.name());
            }
        }
    }

    #[test]
    fn closed_forms() {
        let spec = CellSpec::new(CellKind::Pascal { rho: 0.3 }, 3, 3).unwrap();
        let params = spec.init_params(&mut RandomSource::new(0)).unwrap();
        let p = random_point(&spec, &mut RandomSource::new(1), 1.0);
        assert!(jac_time(&spec, &params, &p).unwrap().max_abs_diff(&Matrix::identity(3).scale(0.3)).unwrap() < 1e-15);
        assert!(jac_depth(&spec, &params, &p, None).unwrap().max_abs_diff(&Matrix::identity(3).scale(0.3)).unwrap() < 1e-15);

        let act = Activation::Sigmoid;
        let spec = CellSpec::new(CellKind::Simple { activation: act }, 3, 2).unwrap();
        let params = spec.init_params(&mut RandomSource::new(2)).unwrap();
        let p = random_point(&spec, &mut RandomSource::new(3), 1.0);
        let w_rec = params.get("W_rec").unwrap();
        let w_in = params.get("W_in").unwrap();
        let mut z = w_rec.mul_vec(&p.prev.state).unwrap();
        let zi = w_in.mul_vec(&p.below).unwrap();
        for i in 0..3 {
            z[i] += zi[i] + params.get("b").unwrap()[(i, 0)];
        }
        let d = Matrix::diag(&z.iter().map(|v| act.derivative(*v)).collect::<Vec<_>>());
        let expect_t = d.matmul(w_rec).unwrap();
        let expect_d = d.matmul(w_in).unwrap();
        assert!(jac_time(&spec, &params, &p).unwrap().max_abs_diff(&expect_t).unwrap() < 1e-14);
        assert!(jac_depth(&spec, &params, &p, None).unwrap().max_abs_diff(&expect_d).unwrap() < 1e-14);
    }

    #[test]
    fn lstm_depth_padding_matches_chain() {
        let below = CellSpec::new(CellKind::Lstm, 3, 2).unwrap();
        let spec = CellSpec::new(CellKind::Lstm, 4, 3).unwrap();
        let mut rng = RandomSource::new(4);
        let params = spec.init_params(&mut rng).unwrap();
        let below_state: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mut p = random_point(&spec, &mut rng, 1.0);
        p.below = output_map(&below, &below_state);
        let padded = jac_depth(&spec, &params, &p, Some(&below)).unwrap();
        let chained = jac_depth_chained(&spec, &params, &p, &below, &below_state).unwrap();
        assert_eq!(padded.shape(), (8, 6));
        assert!(padded.max_abs_diff(&chained).unwrap() < 1e-15);
        assert!(spectral_radius(&padded.square_padded()).is_ok());
    }
}
