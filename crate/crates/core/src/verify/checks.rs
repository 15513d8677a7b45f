use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::stats::{log_log_slope, mean, variance_increase_p_value};
use super::VerificationReport;
use crate::cells::{stack_forward, CellKind, Readout, StackConfig};
use crate::error::{LscError, Result};
use crate::grid::{
    growth_regime, limit_curve, pascal_curve, path_count, total_path_bound, update_variance, GrowthLimit, GrowthRegime,
};
use crate::linalg::{determinant, eigenvalues, frobenius_norm, init_matrix, random_psd, spectral_radius, InitScheme, Matrix, NormKind, RandomSource};
use crate::pretrain::{pretrain_run, GaussianBatches, GradMode, PretrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    /// Independent standard normal entries.
    Real,
    /// Independent complex normal entries with `E|z|^2 = 1`.
    Complex,
}

/// Mean modulus of the `k`-th smallest eigenvalue: `sqrt(2) G((k+1)/2) / G(k/2)`
/// for the real ensemble (the chi law of the lemma), `G(k+1/2) / G(k)` for the
/// complex one (Kostlan's theorem).
pub fn kostlan_predicted(k: usize, ensemble: Ensemble) -> f64 {
    let k = k as f64;
    match ensemble {
        Ensemble::Real => (0.5 * std::f64::consts::LN_2 + ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp(),
        Ensemble::Complex => (ln_gamma(k + 0.5) - ln_gamma(k)).exp(),
    }
}

/// Ascending eigenvalue moduli of one random matrix.
fn sorted_moduli(n: usize, ensemble: Ensemble, rng: &mut RandomSource) -> Result<Vec<f64>> {
    let mut moduli: Vec<f64> = match ensemble {
        Ensemble::Real => {
            let m = Matrix::new(n, n, (0..n * n).map(|_| rng.normal()).collect())?;
            eigenvalues(&m)?.iter().map(|z| z.norm()).collect()
        }
        Ensemble::Complex => {
            // [[X, -Y], [Y, X]] carries every eigenvalue together with its conjugate
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let x: Vec<f64> = (0..n * n).map(|_| s * rng.normal()).collect();
            let y: Vec<f64> = (0..n * n).map(|_| s * rng.normal()).collect();
            let mut data = vec![0.0; 4 * n * n];
            for i in 0..n {
                for j in 0..n {
                    data[i * 2 * n + j] = x[i * n + j];
                    data[i * 2 * n + n + j] = -y[i * n + j];
                    data[(n + i) * 2 * n + j] = y[i * n + j];
                    data[(n + i) * 2 * n + n + j] = x[i * n + j];
                }
            }
            let mut all: Vec<f64> = eigenvalues(&Matrix::new(2 * n, 2 * n, data)?)?.iter().map(|z| z.norm()).collect();
            all.sort_by(f64::total_cmp);
            all.into_iter().step_by(2).collect()
        }
    };
    moduli.sort_by(f64::total_cmp);
    Ok(moduli)
}

fn moduli_samples(n: usize, samples: usize, ensemble: Ensemble, rng: &RandomSource) -> Result<Vec<Vec<f64>>> {
    (0..samples)
        .into_par_iter()
        .map(|i| sorted_moduli(n, ensemble, &mut rng.fork(i as u64)))
        .collect()
}

/// Mean of each sorted eigenvalue modulus against the chi law, 3% tolerance.
pub fn kostlan_check(n: usize, samples: usize, ensemble: Ensemble, rng: &RandomSource) -> Result<Vec<VerificationReport>> {
    if n == 0 || n > 64 || samples < 1000 {
        return Err(LscError::Argument("kostlan_check needs 1 <= n <= 64 and samples >= 1000".into()));
    }
    let all = moduli_samples(n, samples, ensemble, rng)?;
    let tag = match ensemble {
        Ensemble::Real => "",
        Ensemble::Complex => "_complex",
    };
    Ok((1..=n)
        .map(|k| {
            let col: Vec<f64> = all.iter().map(|m| m[k - 1]).collect();
            VerificationReport::within(format!("kostlan{tag}_k{k}"), n, samples, mean(&col), kostlan_predicted(k, ensemble), 0.03)
        })
        .collect())
}

/// Whether the variance of the largest modulus fails to increase from each
/// `n` to the next. Reports the smallest one-sided p-value of an increase,
/// which passes above 0.05.
pub fn kostlan_variance_check(ns: &[usize], samples: usize, rng: &RandomSource) -> Result<VerificationReport> {
    if ns.len() < 2 || samples < 2 {
        return Err(LscError::Argument("need at least two sizes and two samples".into()));
    }
    let tops = ns
        .iter()
        .map(|&n| Ok(moduli_samples(n, samples, Ensemble::Real, &rng.fork(n as u64))?.iter().map(|m| m[n - 1]).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut p_min = 1.0f64;
    for w in tops.windows(2) {
        p_min = p_min.min(variance_increase_p_value(&w[0], &w[1])?);
    }
    Ok(VerificationReport::above("kostlan_variance_increase_p", *ns.last().unwrap(), samples, p_min, 0.05))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnActivation {
    Linear,
    Relu,
}

/// Mean spectral radius of `W diag(H(y))^k` with symmetric pre-activations.
/// Orthogonal weights are held to every sample being 1 within 1e-8.
pub fn init_equivalence_check(
    scheme: InitScheme,
    n: usize,
    activation: FfnActivation,
    samples: usize,
    rng: &RandomSource,
) -> Result<VerificationReport> {
    let radii = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let mut w = init_matrix(scheme, n, n, &mut r)?;
            if activation == FfnActivation::Relu {
                let mask: Vec<f64> = (0..n).map(|_| if r.normal() > 0.0 { 1.0 } else { 0.0 }).collect();
                let data = w.as_mut_slice();
                for i in 0..n {
                    for j in 0..n {
                        data[i * n + j] *= mask[j];
                    }
                }
            }
            spectral_radius(&w)
        })
        .collect::<Result<Vec<f64>>>()?;
    let name = |s: &str| {
        let act = match activation {
            FfnActivation::Linear => "linear",
            FfnActivation::Relu => "relu",
        };
        format!("init_{s}_{act}")
    };
    Ok(match (scheme, activation) {
        (InitScheme::Orthogonal, FfnActivation::Linear) => {
            let worst = radii.iter().copied().fold(1.0, |w: f64, r| if (r - 1.0).abs() > (w - 1.0).abs() { r } else { w });
            VerificationReport::within(name("orthogonal"), n, samples, worst, 1.0, 1e-8)
        }
        (InitScheme::GlorotUniform, _) => VerificationReport::within(name("glorot"), n, samples, mean(&radii), 1.0, 0.05),
        (InitScheme::HeNormal, _) => VerificationReport::within(name("he"), n, samples, mean(&radii), 1.0, 0.07),
        (s, _) => VerificationReport::within(name(&format!("{s:?}").to_lowercase()), n, samples, mean(&radii), 1.0, 0.07),
    })
}

/// Path-count identities and the growth regime along the three limits.
pub fn path_growth_check() -> Result<Vec<VerificationReport>> {
    let mut recurrence_failures = 0usize;
    for dt in 1..=60u64 {
        for dl in 1..=60u64 {
            if path_count(dt, dl) != path_count(dt - 1, dl) + path_count(dt, dl - 1) {
                recurrence_failures += 1;
            }
        }
    }
    let mut identity_failures = 0usize;
    for t in 1..=30 {
        for dl in 0..=30 {
            if total_path_bound(t, dl).is_err() {
                identity_failures += 1;
            }
        }
    }
    let mut reports = vec![
        VerificationReport::within("pascal_recurrence_failures", 60, 3600, recurrence_failures as f64, 0.0, 0.0),
        VerificationReport::within("path_bound_identity_failures", 30, 930, identity_failures as f64, 0.0, 0.0),
    ];
    let exponential = |c: &[f64]| -> Result<f64> {
        Ok(if growth_regime(c)? == GrowthRegime::Exponential { 1.0 } else { 0.0 })
    };
    for (name, limit, expect) in [
        ("growth_fixed_depth", GrowthLimit::FixedDepth { dl: 5, start: 10, step: 10 }, 0.0),
        ("growth_fixed_time", GrowthLimit::FixedTime { t: 5, start: 10, step: 10 }, 0.0),
        ("growth_joint", GrowthLimit::Joint { ratio: 100 }, 1.0),
    ] {
        let curve = limit_curve(limit, 20)?;
        reports.push(VerificationReport::within(format!("{name}_exponential"), 20, 20, exponential(&curve)?, expect, 0.0));
    }
    Ok(reports)
}

/// Norm curve of a width-1 PascalRNN: the binomial fit for `rho = 1`
/// (tolerance 1e-6) and the constant fit otherwise (1e-9).
pub fn pascal_bound_check(depth: usize, steps: usize, rho: f64, rng: &RandomSource) -> Result<VerificationReport> {
    if depth == 0 || depth > 12 || steps == 0 || steps > 200 {
        return Err(LscError::Argument("pascal_bound_check needs 1 <= L <= 12 and 1 <= T <= 200".into()));
    }
    let curve = pascal_curve(depth, steps, rho, NormKind::Two, rng)?;
    let tag = format!("pascal_bound_L{depth}_T{steps}_rho{rho}");
    Ok(if rho == 1.0 && depth > 1 {
        VerificationReport::within(format!("{tag}_binomial_deviation"), depth, steps, curve.binomial_deviation, 0.0, 1e-6)
    } else {
        VerificationReport::within(format!("{tag}_constant_deviation"), depth, steps, curve.constant_deviation, 0.0, 1e-9)
    })
}

/// Super-additivity and multiplicativity of the determinant on random PSD
/// pairs; reports the number of violations.
pub fn psd_superadditivity_check(n: usize, samples: usize, rng: &RandomSource) -> Result<VerificationReport> {
    if n == 0 || n > 16 {
        return Err(LscError::Argument("psd check needs 1 <= n <= 16".into()));
    }
    let violations = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let a = random_psd(n, &mut r)?;
            let b = random_psd(n, &mut r)?;
            let (da, db) = (determinant(&a)?, determinant(&b)?);
            let sum = determinant(&a.add(&b)?)?;
            let prod = determinant(&a.matmul(&b)?)?;
            // rounding in a determinant scales with the Hadamard bound, not with |det|
            let (na, nb) = (frobenius_norm(&a).powi(n as i32), frobenius_norm(&b).powi(n as i32));
            let additive = sum >= da + db - 1e-12 * (na + nb);
            let multiplicative = (prod - da * db).abs() <= 1e-9 * na * nb;
            Ok(usize::from(!additive) + usize::from(!multiplicative))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(VerificationReport::within("psd_violations", n, samples, violations as f64, 0.0, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthRule {
    Fixed(usize),
    /// `L = max(1, T / ratio)`.
    Joint { ratio: usize },
}

impl DepthRule {
    pub fn depth(self, steps: usize) -> usize {
        match self {
            DepthRule::Fixed(l) => l,
            DepthRule::Joint { ratio } => (steps / ratio).max(1),
        }
    }
}

/// Growth exponent in `T` of the first-layer update variance of a width-1
/// PascalRNN pre-trained to `rho_target`, under the squared error
/// `1/2 sum_t |o_t - y_t|^2` with random targets. `rho_target = 0.5` must
/// stay at most linear (exponent <= 1.2); any other target is reported as
/// exceeding 2.
pub fn halfrho_linear_bound_check(
    rho_target: f64,
    t_list: &[usize],
    depth: DepthRule,
    batch: usize,
    rng: &RandomSource,
) -> Result<VerificationReport> {
    if t_list.len() < 2 || batch < 2 {
        return Err(LscError::Argument("need at least two horizons and a batch of two".into()));
    }
    let mut variances = Vec::with_capacity(t_list.len());
    for (i, &steps) in t_list.iter().enumerate() {
        let l = depth.depth(steps);
        let stack = StackConfig::uniform(CellKind::Pascal { rho: 1.0 }, l, 1, 1, Readout::Identity)?;
        let start = stack.init_params(rng)?;
        let cfg = PretrainConfig { grad_mode: Some(GradMode::KappaOnly), ..PretrainConfig::with_target(rho_target) };
        let mut source = GaussianBatches::new(1, steps.min(8), 2, rng.fork(100 + i as u64));
        let report = pretrain_run(&stack, start, &cfg, &mut source, &rng.fork(200 + i as u64))?;
        if !report.converged {
            return Err(LscError::Precondition(format!("pre-training to {rho_target} did not converge at T={steps}")));
        }
        let params = report.params;
        let mut r = rng.fork(300 + i as u64);
        let samples = (0..batch)
            .map(|_| {
                let x: Vec<Vec<f64>> = (0..steps).map(|_| vec![r.normal()]).collect();
                let y: Vec<f64> = (0..steps).map(|_| r.normal()).collect();
                let run = stack_forward(&stack, &params, &x)?;
                let d = run.outputs.iter().zip(&y).map(|(o, y)| vec![o[0] - y]).collect();
                Ok((run, d))
            })
            .collect::<Result<Vec<_>>>()?;
        variances.push(update_variance(&stack, &params, &samples, 1)?.mean);
    }
    let x: Vec<f64> = t_list.iter().map(|t| *t as f64).collect();
    let slope = log_log_slope(&x, &variances)?;
    let n = depth.depth(*t_list.last().unwrap());
    let claim = format!("halfrho_variance_exponent_rho{rho_target}");
    Ok(if rho_target == 0.5 {
        VerificationReport::at_most(claim, n, batch, slope, 1.0, 0.2)
    } else {
        VerificationReport::above(claim, n, batch, slope, 2.0)
    })
}
