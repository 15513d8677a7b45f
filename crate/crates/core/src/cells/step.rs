use super::{sigmoid, surrogate_derivative, CellKind, CellParams, CellSpec, CellState};
use crate::error::{LscError, Result};
use crate::linalg::Matrix;

/// Vector-Jacobian products of one cell step.
#[derive(Debug, Clone)]
pub struct StepVjp {
    /// Gradient w.r.t. the previous concatenated state of the same layer.
    pub d_prev: Vec<f64>,
    /// Gradient w.r.t. the output vector of the layer below.
    pub d_below: Vec<f64>,
    pub d_params: CellParams,
}

fn check_inputs(spec: &CellSpec, prev: &CellState, below: &[f64]) -> Result<()> {
    if prev.state.len() != spec.state_len() {
        return Err(LscError::Dimension(format!(
            "{} state has length {}, expected {}",
            spec.kind.name(),
            prev.state.len(),
            spec.state_len()
        )));
    }
    if below.len() != spec.input_width {
        return Err(LscError::Dimension(format!(
            "{} input has length {}, expected {}",
            spec.kind.name(),
            below.len(),
            spec.input_width
        )));
    }
    Ok(())
}

fn alif_output(v: f64, gamma: f64, omega: f64, relaxed: bool) -> f64 {
    if relaxed {
        0.5 + gamma * v / (1.0 + omega * v.abs())
    } else if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// The vector a layer emits upward, as a function of its state.
pub fn output_map(spec: &CellSpec, state: &[f64]) -> Vec<f64> {
    let n = spec.width;
    match spec.kind {
        CellKind::Lstm => state[..n].to_vec(),
        CellKind::Alif { gamma, omega, relaxed, .. } => {
            (0..n).map(|i| alif_output(state[i] - state[n + i], gamma, omega, relaxed)).collect()
        }
        _ => state.to_vec(),
    }
}

/// Pulls a gradient on the emitted vector back onto the state.
pub fn output_vjp(spec: &CellSpec, state: &[f64], d_out: &[f64]) -> Vec<f64> {
    let n = spec.width;
    match spec.kind {
        CellKind::Lstm => {
            let mut d = vec![0.0; 2 * n];
            d[..n].copy_from_slice(d_out);
            d
        }
        CellKind::Alif { gamma, omega, .. } => {
            let mut d = vec![0.0; 2 * n];
            for i in 0..n {
                let s = d_out[i] * surrogate_derivative(state[i] - state[n + i], gamma, omega);
                d[i] = s;
                d[n + i] = -s;
            }
            d
        }
        _ => d_out.to_vec(),
    }
}

fn mv(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.mul_vec(v).expect("shape checked")
}

fn mtv(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.vec_mul(v).expect("shape checked")
}

fn outer(a: &[f64], b: &[f64]) -> Matrix {
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in a {
        data.extend(b.iter().map(|y| x * y));
    }
    Matrix::from_vec_unchecked(a.len(), b.len(), data)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn preact(p: &CellParams, gate: &str, below: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let mut z = mv(p.get(&format!("W_{gate}"))?, below);
    add_into(&mut z, &mv(p.get(&format!("U_{gate}"))?, h));
    add_into(&mut z, p.get(&format!("b_{gate}"))?.as_slice());
    Ok(z)
}

struct GruCache {
    z: Vec<f64>,
    r: Vec<f64>,
    hh: Vec<f64>,
    rh: Vec<f64>,
}

fn gru_forward(p: &CellParams, h: &[f64], x: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    let z: Vec<f64> = preact(p, "z", x, h)?.into_iter().map(sigmoid).collect();
    let r: Vec<f64> = preact(p, "r", x, h)?.into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut a = mv(p.get("W_h")?, x);
    add_into(&mut a, &mv(p.get("U_h")?, &rh));
    add_into(&mut a, p.get("b_h")?.as_slice());
    let hh: Vec<f64> = a.into_iter().map(f64::tanh).collect();
    let out = (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * hh[i]).collect();
    Ok((out, GruCache { z, r, hh, rh }))
}

struct LstmCache {
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
}

fn lstm_forward(p: &CellParams, state: &[f64], x: &[f64], n: usize) -> Result<(Vec<f64>, LstmCache)> {
    let (h, c_prev) = state.split_at(n);
    let i: Vec<f64> = preact(p, "i", x, h)?.into_iter().map(sigmoid).collect();
    let f: Vec<f64> = preact(p, "f", x, h)?.into_iter().map(sigmoid).collect();
    let o: Vec<f64> = preact(p, "o", x, h)?.into_iter().map(sigmoid).collect();
    let g: Vec<f64> = preact(p, "c", x, h)?.into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let mut out: Vec<f64> = (0..n).map(|k| o[k] * c[k].tanh()).collect();
    out.extend_from_slice(&c);
    Ok((out, LstmCache { i, f, o, g, c }))
}

fn column(p: &CellParams, name: &str) -> Result<Vec<f64>> {
    Ok(p.get(name)?.as_slice().to_vec())
}

/// One step `h_{t,l} = g(h_{t-1,l}, out_{t-1,l-1})`.
pub fn cell_forward(spec: &CellSpec, params: &CellParams, prev: &CellState, below: &[f64]) -> Result<CellState> {
    check_inputs(spec, prev, below)?;
    let n = spec.width;
    let h = &prev.state;
    let state = match spec.kind {
        CellKind::Pascal { .. } => {
            let rho = params.get("rho")?[(0, 0)];
            (0..n).map(|i| rho * (h[i] + below[i])).collect()
        }
        CellKind::Simple { activation } => {
            let mut z = mv(params.get("W_rec")?, h);
            add_into(&mut z, &mv(params.get("W_in")?, below));
            add_into(&mut z, params.get("b")?.as_slice());
            z.into_iter().map(|v| activation.value(v)).collect()
        }
        CellKind::Gru => gru_forward(params, h, below)?.0,
        CellKind::Lstm => lstm_forward(params, h, below, n)?.0,
        CellKind::Alif { .. } => {
            let (y_p, th_p) = h.split_at(n);
            let x_p = output_map(spec, h);
            let tau_y = column(params, "tau_y")?;
            let tau_th = column(params, "tau_theta")?;
            let b_th = column(params, "b_theta")?;
            let beta = column(params, "beta")?;
            let b_y = column(params, "b_y")?;
            let mut y = mv(params.get("W_rec")?, &x_p);
            add_into(&mut y, &mv(params.get("W_in")?, below));
            let mut out = vec![0.0; 2 * n];
            for i in 0..n {
                let ay = (-1.0 / tau_y[i]).exp();
                let ath = (-1.0 / tau_th[i]).exp();
                out[i] = ay * y_p[i] + y[i] + b_y[i] - th_p[i] * x_p[i];
                out[n + i] = ath * th_p[i] + b_th[i] + beta[i] * x_p[i];
            }
            out
        }
    };
    if state.iter().any(|v: &f64| !v.is_finite()) {
        return Err(LscError::NonFinite(format!("{} forward produced a non-finite state", spec.kind.name())));
    }
    let output = output_map(spec, &state);
    Ok(CellState { state, output })
}

/// Reverse-mode pass of [`cell_forward`] for a gradient `d_state` on the new state.
/// Heaviside derivatives are replaced by the surrogate.
pub fn cell_vjp(
    spec: &CellSpec,
    params: &CellParams,
    prev: &CellState,
    below: &[f64],
    d_state: &[f64],
) -> Result<StepVjp> {
    check_inputs(spec, prev, below)?;
    if d_state.len() != spec.state_len() {
        return Err(LscError::Dimension("state gradient has the wrong length".into()));
    }
    let n = spec.width;
    let h = &prev.state;
    let mut dp = CellParams::default();
    let (d_prev, d_below) = match spec.kind {
        CellKind::Pascal { .. } => {
            let rho = params.get("rho")?[(0, 0)];
            let g: f64 = (0..n).map(|i| d_state[i] * (h[i] + below[i])).sum();
            dp.insert("rho", Matrix::from_vec_unchecked(1, 1, vec![g]));
            let d: Vec<f64> = d_state.iter().map(|v| rho * v).collect();
            (d.clone(), d)
        }
        CellKind::Simple { activation } => {
            let w_rec = params.get("W_rec")?;
            let w_in = params.get("W_in")?;
            let mut z = mv(w_rec, h);
            add_into(&mut z, &mv(w_in, below));
            add_into(&mut z, params.get("b")?.as_slice());
            let dz: Vec<f64> = z.iter().zip(d_state).map(|(z, d)| d * activation.derivative(*z)).collect();
            dp.insert("W_rec", outer(&dz, h));
            dp.insert("W_in", outer(&dz, below));
            dp.insert("b", Matrix::column(&dz));
            (mtv(w_rec, &dz), mtv(w_in, &dz))
        }
        CellKind::Gru => {
            let (_, c) = gru_forward(params, h, below)?;
            let d = d_state;
            let da: Vec<f64> = (0..n).map(|i| d[i] * c.z[i] * (1.0 - c.hh[i] * c.hh[i])).collect();
            let dz: Vec<f64> = (0..n).map(|i| d[i] * (c.hh[i] - h[i]) * c.z[i] * (1.0 - c.z[i])).collect();
            let drh = mtv(params.get("U_h")?, &da);
            let dr: Vec<f64> = (0..n).map(|i| drh[i] * h[i] * c.r[i] * (1.0 - c.r[i])).collect();
            let mut dh: Vec<f64> = (0..n).map(|i| d[i] * (1.0 - c.z[i]) + drh[i] * c.r[i]).collect();
            add_into(&mut dh, &mtv(params.get("U_z")?, &dz));
            add_into(&mut dh, &mtv(params.get("U_r")?, &dr));
            let mut dx = mtv(params.get("W_z")?, &dz);
            add_into(&mut dx, &mtv(params.get("W_r")?, &dr));
            add_into(&mut dx, &mtv(params.get("W_h")?, &da));
            for (g, grad, rec) in [("z", &dz, h.as_slice()), ("r", &dr, h.as_slice()), ("h", &da, c.rh.as_slice())] {
                dp.insert(&format!("W_{g}"), outer(grad, below));
                dp.insert(&format!("U_{g}"), outer(grad, rec));
                dp.insert(&format!("b_{g}"), Matrix::column(grad));
            }
            (dh, dx)
        }
        CellKind::Lstm => {
            let (_, c) = lstm_forward(params, h, below, n)?;
            let (dh_new, dc_new) = d_state.split_at(n);
            let (h_prev, c_prev) = h.split_at(n);
            let mut do_ = vec![0.0; n];
            let mut di = vec![0.0; n];
            let mut df = vec![0.0; n];
            let mut dg = vec![0.0; n];
            let mut dc_prev = vec![0.0; n];
            for k in 0..n {
                let tc = c.c[k].tanh();
                let dc = dc_new[k] + dh_new[k] * c.o[k] * (1.0 - tc * tc);
                do_[k] = dh_new[k] * tc * c.o[k] * (1.0 - c.o[k]);
                di[k] = dc * c.g[k] * c.i[k] * (1.0 - c.i[k]);
                df[k] = dc * c_prev[k] * c.f[k] * (1.0 - c.f[k]);
                dg[k] = dc * c.i[k] * (1.0 - c.g[k] * c.g[k]);
                dc_prev[k] = dc * c.f[k];
            }
            let mut dh = vec![0.0; n];
            let mut dx = vec![0.0; spec.input_width];
            for (g, grad) in [("i", &di), ("f", &df), ("o", &do_), ("c", &dg)] {
                add_into(&mut dh, &mtv(params.get(&format!("U_{g}"))?, grad));
                add_into(&mut dx, &mtv(params.get(&format!("W_{g}"))?, grad));
                dp.insert(&format!("W_{g}"), outer(grad, below));
                dp.insert(&format!("U_{g}"), outer(grad, h_prev));
                dp.insert(&format!("b_{g}"), Matrix::column(grad));
            }
            dh.extend_from_slice(&dc_prev);
            (dh, dx)
        }
        CellKind::Alif { gamma, omega, .. } => {
            let (y_p, th_p) = h.split_at(n);
            let (dy, dth) = d_state.split_at(n);
            let x_p = output_map(spec, h);
            let w_rec = params.get("W_rec")?;
            let tau_y = column(params, "tau_y")?;
            let tau_th = column(params, "tau_theta")?;
            let beta = column(params, "beta")?;
            let mut dx_p = mtv(w_rec, dy);
            let mut d_prev = vec![0.0; 2 * n];
            let mut d_tau_y = vec![0.0; n];
            let mut d_tau_th = vec![0.0; n];
            for i in 0..n {
                dx_p[i] += -th_p[i] * dy[i] + beta[i] * dth[i];
                let s = surrogate_derivative(y_p[i] - th_p[i], gamma, omega);
                let ay = (-1.0 / tau_y[i]).exp();
                let ath = (-1.0 / tau_th[i]).exp();
                d_prev[i] = ay * dy[i] + dx_p[i] * s;
                d_prev[n + i] = ath * dth[i] - dy[i] * x_p[i] - dx_p[i] * s;
                d_tau_y[i] = dy[i] * y_p[i] * ay / (tau_y[i] * tau_y[i]);
                d_tau_th[i] = dth[i] * th_p[i] * ath / (tau_th[i] * tau_th[i]);
            }
            let d_below = mtv(params.get("W_in")?, dy);
            dp.insert("W_rec", outer(dy, &x_p));
            dp.insert("W_in", outer(dy, below));
            dp.insert("tau_y", Matrix::column(&d_tau_y));
            dp.insert("tau_theta", Matrix::column(&d_tau_th));
            dp.insert("b_theta", Matrix::column(dth));
            let d_beta: Vec<f64> = dth.iter().zip(&x_p).map(|(a, b)| a * b).collect();
            dp.insert("beta", Matrix::column(&d_beta));
            dp.insert("b_y", Matrix::column(dy));
            (d_prev, d_below)
        }
    };
    Ok(StepVjp { d_prev, d_below, d_params: dp })
}
