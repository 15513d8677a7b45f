use num_traits::ToPrimitive;

use super::combinatorics::path_count;
use super::JacobianGrid;
use crate::error::{LscError, Result};
use crate::linalg::Matrix;

/// Enumeration guard for [`brute_force_paths`].
pub const MAX_ENUMERATED_PATHS: u64 = 1_000_000;

fn check_target(grid: &JacobianGrid, t_top: usize, l_top: usize, t: usize, l: usize) -> Result<()> {
    if t_top > grid.steps() || l_top == 0 || l_top > grid.depth() {
        return Err(LscError::Range(format!("origin ({t_top}, {l_top}) outside the grid")));
    }
    if t > t_top || l == 0 || l > grid.depth() {
        return Err(LscError::Range(format!("target ({t}, {l}) not reachable from ({t_top}, {l_top})")));
    }
    Ok(())
}

/// `J^{T,L}_{t,l} = d h_{T,L} / d h_{t,l}` by the two-term recursion.
pub fn grid_jacobian(grid: &JacobianGrid, t: usize, l: usize) -> Result<Matrix> {
    grid_jacobian_from(grid, grid.steps(), grid.depth(), t, l)
}

/// `d h_{t_top,l_top} / d h_{t,l}`, sweeping one time column at a time.
pub fn grid_jacobian_from(grid: &JacobianGrid, t_top: usize, l_top: usize, t: usize, l: usize) -> Result<Matrix> {
    check_target(grid, t_top, l_top, t, l)?;
    let rows = grid.state_len(l_top);
    if l > l_top || l_top - l > t_top - t {
        return Ok(Matrix::zeros(rows, grid.state_len(l)));
    }
    // column[k - l] holds J_{s,k}; None is a zero block
    let mut column: Vec<Option<Matrix>> = vec![None; l_top - l + 1];
    column[l_top - l] = Some(Matrix::identity(rows));
    for s in (t + 1..=t_top).rev() {
        let mut next: Vec<Option<Matrix>> = vec![None; column.len()];
        for k in l..=l_top {
            let mut acc: Option<Matrix> = None;
            if let Some(j) = &column[k - l] {
                acc = Some(j.matmul(&grid.get(s, k)?.time_jac)?);
            }
            if k < l_top {
                if let Some(j) = &column[k + 1 - l] {
                    let term = j.matmul(&grid.get(s, k + 1)?.depth_jac)?;
                    acc = Some(match acc {
                        Some(mut a) => {
                            a.add_assign(&term)?;
                            a
                        }
                        None => term,
                    });
                }
            }
            next[k - l] = acc;
        }
        column = next;
    }
    Ok(column.swap_remove(0).unwrap_or_else(|| Matrix::zeros(rows, grid.state_len(l))))
}

/// `J^{T,L}_{t,l}` for every `t = 0..=T` at fixed `l`, from a single sweep.
pub fn grid_jacobian_column(grid: &JacobianGrid, l: usize) -> Result<Vec<Matrix>> {
    let (t_top, l_top) = (grid.steps(), grid.depth());
    check_target(grid, t_top, l_top, 0, l)?;
    let rows = grid.state_len(l_top);
    let zero = Matrix::zeros(rows, grid.state_len(l));
    let mut out = vec![zero.clone(); t_top + 1];
    let mut column: Vec<Option<Matrix>> = vec![None; l_top - l + 1];
    column[l_top - l] = Some(Matrix::identity(rows));
    for s in (0..=t_top).rev() {
        if let Some(j) = &column[0] {
            out[s] = j.clone();
        }
        if s == 0 {
            break;
        }
        let mut next: Vec<Option<Matrix>> = vec![None; column.len()];
        for k in l..=l_top {
            let mut acc: Option<Matrix> = None;
            if let Some(j) = &column[k - l] {
                acc = Some(j.matmul(&grid.get(s, k)?.time_jac)?);
            }
            if k < l_top {
                if let Some(j) = &column[k + 1 - l] {
                    let term = j.matmul(&grid.get(s, k + 1)?.depth_jac)?;
                    acc = Some(match acc {
                        Some(mut a) => {
                            a.add_assign(&term)?;
                            a
                        }
                        None => term,
                    });
                }
            }
            next[k - l] = acc;
        }
        column = next;
    }
    Ok(out)
}

/// Sums the matrix products along every monotone lattice path from
/// `(T, L)` down to `(t, l)`; the independent oracle for [`grid_jacobian`].
pub fn brute_force_paths(grid: &JacobianGrid, t: usize, l: usize) -> Result<Matrix> {
    let (t_top, l_top) = (grid.steps(), grid.depth());
    check_target(grid, t_top, l_top, t, l)?;
    let (dt, dl) = ((t_top - t) as u64, (l_top - l) as u64);
    let bound = path_count(dt, dl);
    if bound.to_u64().is_none_or(|c| c > MAX_ENUMERATED_PATHS) {
        return Err(LscError::Size(format!("C({}, {dl}) = {bound} paths exceed the enumeration guard", dt + dl)));
    }
    let rows = grid.state_len(l_top);
    let mut total = Matrix::zeros(rows, grid.state_len(l));
    if l > l_top || l_top - l > t_top - t {
        return Ok(total);
    }
    let mut stack = vec![(t_top, l_top, Matrix::identity(rows))];
    // depth-first, time move before depth move, so the summation order is fixed
    while let Some((s, k, prod)) = stack.pop() {
        if s == t {
            if k == l {
                total.add_assign(&prod)?;
            }
            continue;
        }
        if k > l {
            stack.push((s - 1, k - 1, prod.matmul(&grid.get(s, k)?.depth_jac)?));
        }
        if k - l <= s - t - 1 {
            stack.push((s - 1, k, prod.matmul(&grid.get(s, k)?.time_jac)?));
        }
    }
    Ok(total)
}

/// Row-vector form of the recursion: `out[s][k-1] = row * d h_{t_top,l_top} / d h_{s,k}`
/// for every `s <= t_top`; unreachable cells are zero.
pub fn adjoint_sweep(grid: &JacobianGrid, t_top: usize, l_top: usize, row: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
    check_target(grid, t_top, l_top, t_top, l_top)?;
    if row.len() != grid.state_len(l_top) {
        return Err(LscError::Dimension("adjoint row does not match the top state".into()));
    }
    let depth = grid.depth();
    let mut out: Vec<Vec<Vec<f64>>> =
        (0..=t_top).map(|_| (1..=depth).map(|k| vec![0.0; grid.state_len(k)]).collect()).collect();
    out[t_top][l_top - 1] = row.to_vec();
    for s in (1..=t_top).rev() {
        for k in 1..=l_top {
            let v = &out[s][k - 1];
            if v.iter().all(|x| *x == 0.0) {
                continue;
            }
            let cell = grid.get(s, k)?;
            let through_time = cell.time_jac.vec_mul(v)?;
            let v_depth = if k > 1 { Some(cell.depth_jac.vec_mul(v)?) } else { None };
            out[s - 1][k - 1].iter_mut().zip(&through_time).for_each(|(a, b)| *a += b);
            if let Some(d) = v_depth {
                out[s - 1][k - 2].iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(out)
}
