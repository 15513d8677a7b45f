//! Numerical checks of the stability theory.

mod checks;
pub mod stats;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{LscError, Result};
use crate::linalg::RandomSource;

pub use checks::{
    halfrho_linear_bound_check, init_equivalence_check, kostlan_check, kostlan_predicted, kostlan_variance_check,
    pascal_bound_check, path_growth_check, psd_superadditivity_check, DepthRule, Ensemble, FfnActivation,
};
pub use stats::ks_two_sample;

/// One machine-readable verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub claim: String,
    pub n: usize,
    pub samples: usize,
    pub observed: f64,
    pub predicted: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seconds: f64,
}

impl VerificationReport {
    /// `|observed - predicted| <= tolerance`, relative to `|predicted|` unless
    /// it is zero.
    pub fn within(claim: impl Into<String>, n: usize, samples: usize, observed: f64, predicted: f64, tolerance: f64) -> Self {
        let scale = if predicted == 0.0 { 1.0 } else { predicted.abs() };
        let pass = (observed - predicted).abs() <= tolerance * scale;
        Self { claim: claim.into(), n, samples, observed, predicted, tolerance, pass, seconds: 0.0 }
    }

    /// One-sided: `observed <= predicted + tolerance`.
    pub fn at_most(claim: impl Into<String>, n: usize, samples: usize, observed: f64, predicted: f64, tolerance: f64) -> Self {
        let pass = observed <= predicted + tolerance;
        Self { claim: claim.into(), n, samples, observed, predicted, tolerance, pass, seconds: 0.0 }
    }

    /// One-sided: `observed > predicted`.
    pub fn above(claim: impl Into<String>, n: usize, samples: usize, observed: f64, predicted: f64) -> Self {
        let pass = observed > predicted;
        Self { claim: claim.into(), n, samples, observed, predicted, tolerance: 0.0, pass, seconds: 0.0 }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Kostlan,
    InitEquivalence,
    PathGrowth,
    PascalBound,
    Psd,
    Halfrho,
}

impl Claim {
    pub const ALL: [Claim; 6] =
        [Claim::Kostlan, Claim::InitEquivalence, Claim::PathGrowth, Claim::PascalBound, Claim::Psd, Claim::Halfrho];

    pub fn name(self) -> &'static str {
        match self {
            Claim::Kostlan => "kostlan",
            Claim::InitEquivalence => "init_equivalence",
            Claim::PathGrowth => "path_growth",
            Claim::PascalBound => "pascal_bound",
            Claim::Psd => "psd",
            Claim::Halfrho => "halfrho",
        }
    }
}

impl FromStr for Claim {
    type Err = LscError;

    fn from_str(s: &str) -> Result<Self> {
        Claim::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LscError::Argument(format!("unknown claim '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides each claim's default sample count.
    pub samples: Option<usize>,
    /// `false` writes 0 seconds so that reports replay byte for byte.
    pub timing: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, samples: None, timing: true }
    }
}

/// Runs every check of `claim` with its default sizes.
pub fn run_claim(claim: Claim, opts: &VerifyOptions) -> Result<Vec<VerificationReport>> {
    let rng = RandomSource::new(opts.seed).fork(claim as u64);
    let samples = |default: usize| opts.samples.unwrap_or(default);
    let start = Instant::now();
    let mut reports = match claim {
        Claim::Kostlan => {
            let mut r = kostlan_check(8, samples(5000), Ensemble::Real, &rng.fork(0))?;
            r.push(kostlan_variance_check(&[4, 16, 64], samples(5000), &rng.fork(1))?);
            r
        }
        Claim::InitEquivalence => {
            use crate::linalg::InitScheme;
            let n = samples(2000);
            vec![
                init_equivalence_check(InitScheme::GlorotUniform, 32, FfnActivation::Linear, n, &rng.fork(0))?,
                init_equivalence_check(InitScheme::HeNormal, 32, FfnActivation::Relu, n, &rng.fork(1))?,
                init_equivalence_check(InitScheme::Orthogonal, 32, FfnActivation::Linear, n, &rng.fork(2))?,
            ]
        }
        Claim::PathGrowth => path_growth_check()?,
        Claim::PascalBound => vec![
            pascal_bound_check(10, 100, 1.0, &rng.fork(0))?,
            pascal_bound_check(10, 100, 0.5, &rng.fork(1))?,
            pascal_bound_check(1, 100, 1.0, &rng.fork(2))?,
        ],
        Claim::Psd => vec![psd_superadditivity_check(6, samples(1000), &rng.fork(0))?],
        Claim::Halfrho => {
            let batch = samples(16);
            vec![
                halfrho_linear_bound_check(0.5, &[25, 50, 100, 200], DepthRule::Joint { ratio: 10 }, batch, &rng.fork(0))?,
                halfrho_linear_bound_check(1.0, &[20, 40, 80, 160], DepthRule::Joint { ratio: 10 }, batch, &rng.fork(1))?,
            ]
        }
    };
    let seconds = if opts.timing { start.elapsed().as_secs_f64() / reports.len().max(1) as f64 } else { 0.0 };
    reports.iter_mut().for_each(|r| r.seconds = seconds);
    Ok(reports)
}
