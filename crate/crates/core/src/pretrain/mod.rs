//! Pre-training a stack towards a target spectral radius of its transition
//! derivatives.

mod grad;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{is_trainable, stack_forward, tensor_role, CellKind, CellParams, StackConfig, StackParams, StackRun, TensorRole};
use crate::error::{LscError, Result};
use crate::grid::JacobianGrid;
use crate::linalg::RandomSource;
use crate::optim::{project_constraints, AdaBelief, AdaBeliefConfig};

pub use grad::{radius_grad, RadiusGrad, FD_PARAMETER_LIMIT};

/// Radii at or below this are treated as a dead transition.
pub const DEGENERATE_RADIUS: f64 = 1e-12;

/// Sum of squared distances to the target.
pub fn radius_loss(radii: &[f64], target: f64) -> Result<f64> {
    if radii.is_empty() {
        return Err(LscError::Argument("radius_loss needs at least one radius".into()));
    }
    Ok(radii.iter().map(|r| (r - target).powi(2)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// The radius was too small to form a ratio; `value` is the upper clip.
    pub degenerate: bool,
}

pub fn kappa(rho: f64, target: f64, clip: (f64, f64)) -> Kappa {
    if rho <= DEGENERATE_RADIUS {
        return Kappa { value: clip.1, degenerate: true };
    }
    Kappa { value: (target / rho).clamp(clip.0, clip.1), degenerate: false }
}

/// Scales the input-side tensors by `kappa_depth` and the recurrent-side
/// tensors by `kappa_time`. ALIF time constants are multiplied as well, which
/// moves their decay factors in the same direction.
pub fn apply_kappa(kind: &CellKind, params: &mut CellParams, kappa_time: f64, kappa_depth: f64) {
    for (name, m) in params.iter_mut() {
        if !is_trainable(kind, name) {
            continue;
        }
        match tensor_role(kind, name) {
            TensorRole::Input => m.scale_in_place(kappa_depth),
            TensorRole::Recurrent => m.scale_in_place(kappa_time),
            TensorRole::Neutral => {}
        }
    }
}

/// Permutes the entries of every trainable tensor independently.
pub fn shuffle_tensors(kind: &CellKind, params: &mut CellParams, rng: &mut RandomSource) {
    for (name, m) in params.iter_mut() {
        if is_trainable(kind, name) {
            rng.shuffle(m.as_mut_slice());
        }
    }
}

/// `(T / (T + L), L / (T + L))`.
pub fn weighted_targets(steps: usize, depth: usize) -> Result<(f64, f64)> {
    if steps == 0 || depth == 0 {
        return Err(LscError::Argument("weighted targets need T, L >= 1".into()));
    }
    let total = (steps + depth) as f64;
    Ok((steps as f64 / total, depth as f64 / total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    KappaOnly,
    FiniteDifference,
    EigenAdjoint,
}

impl GradMode {
    /// Eigenvalue adjoints for every differentiable stack, kappa alone when a
    /// layer spikes.
    pub fn default_for(config: &StackConfig) -> Self {
        if config.layers.iter().all(|s| s.kind.is_differentiable()) {
            GradMode::EigenAdjoint
        } else {
            GradMode::KappaOnly
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub target_time: f64,
    pub target_depth: f64,
    pub epsilon: f64,
    pub std_threshold: f64,
    pub ema_window: usize,
    pub kappa_clip: (f64, f64),
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
    pub shuffle: bool,
    /// `None` picks [`GradMode::default_for`] the stack.
    pub grad_mode: Option<GradMode>,
    pub fd_step: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let opt = AdaBeliefConfig::default();
        Self {
            target_time: 1.0,
            target_depth: 1.0,
            epsilon: 0.02,
            std_threshold: 0.2,
            ema_window: 10,
            kappa_clip: (0.85, 1.15),
            learning_rate: opt.learning_rate,
            weight_decay: opt.weight_decay,
            max_steps: 500,
            shuffle: true,
            grad_mode: None,
            fd_step: 1e-4,
        }
    }
}

impl PretrainConfig {
    pub fn with_target(rho: f64) -> Self {
        Self { target_time: rho, target_depth: rho, ..Self::default() }
    }

    pub fn weighted(steps: usize, depth: usize) -> Result<Self> {
        let (time, d) = weighted_targets(steps, depth)?;
        Ok(Self { target_time: time, target_depth: d, ..Self::default() })
    }

    pub fn validate(&self) -> Result<()> {
        let low = self.target_time.min(self.target_depth);
        if !(self.epsilon > 0.0 && self.epsilon < low) {
            return Err(LscError::Config(format!("need 0 < epsilon < target, got epsilon {}", self.epsilon)));
        }
        let (lo, hi) = self.kappa_clip;
        if !(lo > 0.0 && lo < 1.0 && hi > 1.0) {
            return Err(LscError::Config(format!("kappa clip must satisfy 0 < low < 1 < high, got ({lo}, {hi})")));
        }
        if self.max_steps == 0 || self.ema_window == 0 {
            return Err(LscError::Config("max_steps and ema_window must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.fd_step > 0.0 && self.std_threshold > 0.0 && self.weight_decay >= 0.0) {
            return Err(LscError::Config("learning rate, fd step and std threshold must be positive".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> AdaBeliefConfig {
        AdaBeliefConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..Default::default() }
    }
}

/// Radius summary of one pre-training step. `k` runs over every
/// `(t, l, time|depth)` transition; each `k` is first averaged over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusStats {
    pub mean_rho: f64,
    /// Mean over `k` of the distance to the target of that transition.
    pub mean_deviation: f64,
    /// Standard deviation over `k` of the distance to the target (of the radii
    /// themselves when both targets agree).
    pub std_rho: f64,
    pub ema_std: f64,
    pub layer_time: Vec<f64>,
    pub layer_depth: Vec<f64>,
}

/// One forward pass per batch sample with its transition derivatives.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub runs: Vec<StackRun>,
    pub grids: Vec<JacobianGrid>,
}

impl Measurement {
    pub fn take(config: &StackConfig, params: &StackParams, batch: &[Vec<Vec<f64>>]) -> Result<Self> {
        if batch.is_empty() {
            return Err(LscError::Argument("empty pre-training batch".into()));
        }
        if batch.iter().any(|x| x.len() != batch[0].len()) {
            return Err(LscError::Dimension("batch sequences differ in length".into()));
        }
        let pairs = batch
            .par_iter()
            .map(|x| {
                let run = stack_forward(config, params, x)?;
                let grid = JacobianGrid::compute(config, params, &run, false)?;
                Ok((run, grid))
            })
            .collect::<Result<Vec<_>>>()?;
        let (runs, grids) = pairs.into_iter().unzip();
        let m = Self { runs, grids };
        m.check_finite()?;
        Ok(m)
    }

    fn check_finite(&self) -> Result<()> {
        let bad: Vec<String> = self
            .grids
            .iter()
            .enumerate()
            .flat_map(|(b, g)| {
                g.iter().filter(|c| !(c.rho_time.is_finite() && c.rho_depth.is_finite())).map(move |c| format!("(sample {b}, t {}, l {})", c.t, c.l))
            })
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(LscError::NonFinite(format!("non-finite radius at M_k {}", bad.join(", "))))
        }
    }

    pub fn batch(&self) -> usize {
        self.grids.len()
    }

    /// Batch-mean loss `sum_k (rho_k - target_k)^2`.
    pub fn loss(&self, target_time: f64, target_depth: f64) -> Result<f64> {
        let mut total = 0.0;
        for g in &self.grids {
            let time: Vec<f64> = g.iter().map(|c| c.rho_time).collect();
            let depth: Vec<f64> = g.iter().map(|c| c.rho_depth).collect();
            total += radius_loss(&time, target_time)? + radius_loss(&depth, target_depth)?;
        }
        let loss = total / self.batch() as f64;
        if !loss.is_finite() {
            return Err(LscError::NonFinite("pre-training loss is not finite".into()));
        }
        Ok(loss)
    }

    /// Statistics without the moving average (`ema_std` is set to `std_rho`).
    pub fn stats(&self, target_time: f64, target_depth: f64) -> RadiusStats {
        let (steps, depth) = (self.grids[0].steps(), self.grids[0].depth());
        let b = self.batch() as f64;
        let mut per_k = vec![0.0; 2 * steps * depth];
        for g in &self.grids {
            for (i, c) in g.iter().enumerate() {
                per_k[2 * i] += c.rho_time / b;
                per_k[2 * i + 1] += c.rho_depth / b;
            }
        }
        let k = per_k.len() as f64;
        let deviation: Vec<f64> = per_k
            .iter()
            .enumerate()
            .map(|(i, r)| r - if i % 2 == 0 { target_time } else { target_depth })
            .collect();
        let mean_rho = per_k.iter().sum::<f64>() / k;
        let mean_deviation = deviation.iter().sum::<f64>() / k;
        let std_rho = (deviation.iter().map(|d| (d - mean_deviation).powi(2)).sum::<f64>() / k).sqrt();
        let mut layer_time = vec![0.0; depth];
        let mut layer_depth = vec![0.0; depth];
        for (i, r) in per_k.iter().enumerate() {
            let l = (i / 2) % depth;
            if i % 2 == 0 {
                layer_time[l] += r / steps as f64;
            } else {
                layer_depth[l] += r / steps as f64;
            }
        }
        RadiusStats { mean_rho, mean_deviation, std_rho, ema_std: std_rho, layer_time, layer_depth }
    }
}

/// Supplies the input sequences (`batch x T x channels`) of each step.
pub trait BatchSource {
    fn next_batch(&mut self, step: usize) -> Result<Vec<Vec<Vec<f64>>>>;
}

impl<F: FnMut(usize) -> Result<Vec<Vec<Vec<f64>>>>> BatchSource for F {
    fn next_batch(&mut self, step: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        self(step)
    }
}

/// Fresh standard-normal sequences every step.
#[derive(Debug, Clone)]
pub struct GaussianBatches {
    pub channels: usize,
    pub steps: usize,
    pub batch: usize,
    rng: RandomSource,
}

impl GaussianBatches {
    pub fn new(channels: usize, steps: usize, batch: usize, rng: RandomSource) -> Self {
        Self { channels, steps, batch, rng }
    }
}

impl BatchSource for GaussianBatches {
    fn next_batch(&mut self, _step: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let rng = &mut self.rng;
        Ok((0..self.batch)
            .map(|_| (0..self.steps).map(|_| (0..self.channels).map(|_| rng.normal()).collect()).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub ema_std: f64,
    pub loss: f64,
    pub kappa_time: Vec<f64>,
    pub kappa_depth: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps_taken: usize,
    pub converged: bool,
    pub grad_mode: GradMode,
    pub final_stats: RadiusStats,
    pub trace: Vec<TraceRow>,
    /// Gradient steps that fell back to finite differences on a repeated
    /// dominant eigenvalue.
    pub fd_fallbacks: usize,
    pub warnings: Vec<String>,
    pub params: StackParams,
}

impl PretrainReport {
    pub fn kappa_history(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.trace.iter().map(|r| (r.kappa_time.clone(), r.kappa_depth.clone())).collect()
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let depth = self.final_stats.layer_time.len();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> =
            ["step", "mean_rho", "std_rho", "ema_std", "loss"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=depth).map(|l| format!("kappa_time_l{l}")));
        header.extend((1..=depth).map(|l| format!("kappa_depth_l{l}")));
        w.write_record(&header)?;
        for r in &self.trace {
            let mut rec = vec![r.step.to_string()];
            rec.extend([r.mean_rho, r.std_rho, r.ema_std, r.loss].iter().map(f64::to_string));
            rec.extend(r.kappa_time.iter().chain(&r.kappa_depth).map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether all three stopping criteria hold.
pub fn criteria_met(stats: &RadiusStats, config: &PretrainConfig) -> bool {
    stats.mean_deviation.abs() <= config.epsilon
        && stats.std_rho < config.std_threshold
        && stats.ema_std < config.std_threshold
}

/// Each step measures the radii on a fresh batch and stops if the criteria
/// hold; otherwise it takes an optional gradient step on the radius loss,
/// multiplies every layer by its clipped kappa and optionally shuffles.
pub fn pretrain_run(
    stack: &StackConfig,
    mut params: StackParams,
    config: &PretrainConfig,
    source: &mut dyn BatchSource,
    rng: &RandomSource,
) -> Result<PretrainReport> {
    config.validate()?;
    stack.validate()?;
    let mode = config.grad_mode.unwrap_or_else(|| GradMode::default_for(stack));
    let mut shuffle_rng = rng.fork(1);
    let mut optimizer = AdaBelief::new(config.optimizer());
    let alpha = 2.0 / (config.ema_window as f64 + 1.0);
    let mut ema: Option<f64> = None;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut fd_fallbacks = 0;
    let mut converged = false;
    let mut last_stats = None;
    for step in 1..=config.max_steps {
        let batch = source.next_batch(step)?;
        let measured = Measurement::take(stack, &params, &batch)?;
        let loss = measured.loss(config.target_time, config.target_depth)?;
        let mut stats = measured.stats(config.target_time, config.target_depth);
        let e = ema.map_or(stats.std_rho, |prev| alpha * stats.std_rho + (1.0 - alpha) * prev);
        ema = Some(e);
        stats.ema_std = e;
        let kt: Vec<Kappa> = stats.layer_time.iter().map(|r| kappa(*r, config.target_time, config.kappa_clip)).collect();
        let kd: Vec<Kappa> =
            stats.layer_depth.iter().map(|r| kappa(*r, config.target_depth, config.kappa_clip)).collect();
        for (l, (a, b)) in kt.iter().zip(&kd).enumerate() {
            if a.degenerate || b.degenerate {
                warnings.push(format!("step {step}: layer {} has a vanishing radius, kappa capped", l + 1));
            }
        }
        trace.push(TraceRow {
            step,
            mean_rho: stats.mean_rho,
            std_rho: stats.std_rho,
            ema_std: stats.ema_std,
            loss,
            kappa_time: kt.iter().map(|k| k.value).collect(),
            kappa_depth: kd.iter().map(|k| k.value).collect(),
        });
        let done = criteria_met(&stats, config);
        last_stats = Some(stats);
        if done {
            converged = true;
            break;
        }
        if mode != GradMode::KappaOnly {
            let g = radius_grad(stack, &params, &measured, &batch, config, mode)?;
            if g.fell_back {
                fd_fallbacks += 1;
            }
            optimizer.step_stack(stack, &mut params, &g.grads)?;
        }
        for (l, spec) in stack.layers.iter().enumerate() {
            apply_kappa(&spec.kind, &mut params.layers[l], kt[l].value, kd[l].value);
            if config.shuffle {
                shuffle_tensors(&spec.kind, &mut params.layers[l], &mut shuffle_rng);
            }
        }
        project_constraints(stack, &mut params);
        if !params.is_finite() {
            return Err(LscError::NonFinite(format!("parameters became non-finite at step {step}")));
        }
    }
    Ok(PretrainReport {
        steps_taken: trace.len(),
        converged,
        grad_mode: mode,
        final_stats: last_stats.expect("at least one step"),
        trace,
        fd_fallbacks,
        warnings,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Activation, Readout};
    use crate::linalg::Matrix;

    #[test]
    fn loss_examples() {
        assert_eq!(radius_loss(&[0.5, 0.5], 0.5).unwrap(), 0.0);
        assert!((radius_loss(&[0.0, 1.0], 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((radius_loss(&[1.5], 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(radius_loss(&[], 1.0).is_err());
    }

    #[test]
    fn kappa_examples() {
        let clip = (0.85, 1.15);
        assert_eq!(kappa(2.0, 1.0, clip).value, 0.85);
        assert_eq!(kappa(0.7, 0.7, clip).value, 1.0);
        assert!((kappa(0.95, 1.0, clip).value - 1.0 / 0.95).abs() < 1e-15);
        let dead = kappa(0.0, 1.0, clip);
        assert!(dead.degenerate && dead.value == 1.15);
        let mut last = f64::INFINITY;
        for i in 1..200 {
            let k = kappa(i as f64 * 0.01, 0.5, clip).value;
            assert!(k <= last);
            last = k;
        }
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_targets(4, 4).unwrap(), (0.5, 0.5));
        let (a, b) = weighted_targets(100, 3).unwrap();
        assert_eq!((a, b), (100.0 / 103.0, 3.0 / 103.0));
        assert!((a + b - 1.0).abs() < 1e-15);
        assert!(weighted_targets(0, 3).is_err());
    }

    #[test]
    fn kappa_scales_by_role() {
        let kind = CellKind::Simple { activation: Activation::Relu };
        let spec = crate::cells::CellSpec::new(kind, 3, 2).unwrap();
        let p = spec.init_params(&mut RandomSource::new(0)).unwrap();
        let mut q = p.clone();
        apply_kappa(&kind, &mut q, 1.0, 1.0);
        assert_eq!(p, q);
        apply_kappa(&kind, &mut q, 0.9, 1.0);
        assert!(q.get("W_rec").unwrap().max_abs_diff(&p.get("W_rec").unwrap().scale(0.9)).unwrap() < 1e-15);
        assert_eq!(q.get("W_in").unwrap(), p.get("W_in").unwrap());
        assert_eq!(q.get("b").unwrap(), p.get("b").unwrap());
        let mut pascal = CellParams::default();
        pascal.insert("rho", Matrix::new(1, 1, vec![2.0]).unwrap());
        apply_kappa(&CellKind::Pascal { rho: 2.0 }, &mut pascal, 0.85, 1.1);
        assert_eq!(pascal.get("rho").unwrap()[(0, 0)], 1.7);
    }

    #[test]
    fn shuffle_preserves_entries() {
        let spec = crate::cells::CellSpec::new(CellKind::Gru, 4, 3).unwrap();
        let p = spec.init_params(&mut RandomSource::new(0)).unwrap();
        let mut a = p.clone();
        let mut b = p.clone();
        shuffle_tensors(&CellKind::Gru, &mut a, &mut RandomSource::new(5));
        shuffle_tensors(&CellKind::Gru, &mut b, &mut RandomSource::new(5));
        assert_eq!(a, b);
        assert_ne!(a, p);
        for ((_, x), (_, y)) in a.iter().zip(p.iter()) {
            let mut u = x.as_slice().to_vec();
            let mut v = y.as_slice().to_vec();
            u.sort_by(f64::total_cmp);
            v.sort_by(f64::total_cmp);
            assert_eq!(u, v);
            assert_eq!(x.shape(), y.shape());
        }
    }

    fn pascal_run(start: f64, target: f64) -> PretrainReport {
        let stack = StackConfig::uniform(CellKind::Pascal { rho: start }, 3, 2, 2, Readout::Identity).unwrap();
        let params = stack.init_params(&RandomSource::new(0)).unwrap();
        let cfg = PretrainConfig { grad_mode: Some(GradMode::KappaOnly), ..PretrainConfig::with_target(target) };
        let mut src = GaussianBatches::new(2, 6, 2, RandomSource::new(1));
        pretrain_run(&stack, params, &cfg, &mut src, &RandomSource::new(2)).unwrap()
    }

    #[test]
    fn pascal_kappa_only_converges_within_bound() {
        for start in [0.011, 0.3, 2.0, 7.5, 99.0] {
            let rep = pascal_run(start, 1.0);
            let bound = ((start / 1.0f64).ln().abs() / 1.15f64.ln()).ceil() as usize + 2;
            assert!(rep.converged, "start {start}");
            assert!(rep.steps_taken <= bound, "start {start}: {} > {bound}", rep.steps_taken);
            assert!((rep.final_stats.mean_rho - 1.0).abs() <= 0.02);
        }
    }

    #[test]
    fn satisfied_stack_stops_at_first_step() {
        let rep = pascal_run(0.5, 0.5);
        assert!(rep.converged);
        assert_eq!(rep.steps_taken, 1);
        assert!(rep.params.layers.iter().all(|p| p.get("rho").unwrap()[(0, 0)] == 0.5));
    }

    #[test]
    fn trace_csv_has_layer_columns() {
        let rep = pascal_run(2.0, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        rep.write_trace(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "step,mean_rho,std_rho,ema_std,loss,kappa_time_l1,kappa_time_l2,kappa_time_l3,kappa_depth_l1,kappa_depth_l2,kappa_depth_l3"
        );
        assert_eq!(text.lines().count(), rep.steps_taken + 1);
    }

    #[test]
    fn config_validation() {
        assert!(PretrainConfig::default().validate().is_ok());
        assert!(PretrainConfig { epsilon: 0.6, ..PretrainConfig::with_target(0.5) }.validate().is_err());
        assert!(PretrainConfig { kappa_clip: (1.1, 1.2), ..Default::default() }.validate().is_err());
        assert!(PretrainConfig { max_steps: 0, ..Default::default() }.validate().is_err());
    }
}
