use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{mode_accuracy, sequence_loss, Evaluation, MetricRow, TieBreak};
use super::tasks::{synthetic_generate, Dataset, Sample};
use crate::cells::{stack_backward, stack_forward, StackConfig, StackParams};
use crate::error::{LscError, Result};
use crate::linalg::RandomSource;
use crate::optim::{AdaBelief, AdaBeliefConfig};
use crate::pretrain::pretrain_run;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "pretrain_trace.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const AGGREGATE_CSV: &str = "aggregate.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    EarlyStopped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub steps_taken: usize,
    pub converged: bool,
    pub mean_rho: f64,
    pub std_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub status: RunStatus,
    pub reason: Option<String>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub test: Option<Evaluation>,
    pub pretrain: Option<PretrainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (0 for a single seed).
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub failed: Vec<u64>,
    pub metrics: Vec<MetricSummary>,
}

/// Everything a training run produces, also what the report reader rebuilds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub seeds: Vec<SeedSummary>,
    pub histories: Vec<Vec<MetricRow>>,
    pub aggregate: Aggregate,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    (mean, std)
}

/// Test metrics over the seeds that did not fail.
pub fn aggregate(seeds: &[SeedSummary]) -> Aggregate {
    let done: Vec<&Evaluation> = seeds.iter().filter(|s| s.status != RunStatus::Failed).filter_map(|s| s.test.as_ref()).collect();
    let metric = |name: &str, f: fn(&Evaluation) -> f64| {
        let values: Vec<f64> = done.iter().map(|e| f(e)).collect();
        let (mean, std) = mean_std(&values);
        MetricSummary { metric: name.into(), mean, std, n: values.len() }
    };
    Aggregate {
        seeds: seeds.iter().map(|s| s.seed).collect(),
        failed: seeds.iter().filter(|s| s.status == RunStatus::Failed).map(|s| s.seed).collect(),
        metrics: vec![
            metric("test_loss", |e| e.loss),
            metric("test_accuracy", |e| e.accuracy),
            metric("test_perplexity", |e| e.perplexity),
        ],
    }
}

/// Mean sequence loss and mode accuracy over a split.
pub fn evaluate(stack: &StackConfig, params: &StackParams, split: &[Sample], tie: TieBreak) -> Result<Evaluation> {
    let per_sample = split
        .par_iter()
        .map(|s| {
            let run = stack_forward(stack, params, &s.inputs)?;
            let (loss, _) = sequence_loss(&run.outputs, s.label);
            Ok((loss, mode_accuracy(&run.outputs, s.label, tie)?))
        })
        .collect::<Result<Vec<(f64, u8)>>>()?;
    let loss = per_sample.iter().map(|p| p.0).sum::<f64>() / split.len() as f64;
    if !loss.is_finite() {
        return Err(LscError::NonFinite("loss diverged".into()));
    }
    let correct = per_sample.iter().map(|p| p.1 as usize).sum();
    Ok(Evaluation::new(loss, correct, split.len()))
}

fn accumulate(total: &mut StackParams, g: &StackParams) -> Result<()> {
    for (a, b) in total.layers.iter_mut().zip(&g.layers) {
        a.add_assign(b)?;
    }
    if let (Some(a), Some(b)) = (total.readout.as_mut(), g.readout.as_ref()) {
        a.add_assign(b)?;
    }
    Ok(())
}

fn scale(p: &mut StackParams, c: f64) {
    p.layers.iter_mut().for_each(|l| l.scale_in_place(c));
    if let Some(m) = p.readout.as_mut() {
        m.as_mut_slice().iter_mut().for_each(|v| *v *= c);
    }
}

/// Mean gradient of the time-averaged cross-entropy over a minibatch.
fn batch_gradient(stack: &StackConfig, params: &StackParams, batch: &[&Sample]) -> Result<StackParams> {
    let grads = batch
        .par_iter()
        .map(|s| {
            let run = stack_forward(stack, params, &s.inputs)?;
            let (_, d) = sequence_loss(&run.outputs, s.label);
            Ok(stack_backward(stack, params, &run, &d)?.params)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = params.zeros_like();
    for g in &grads {
        accumulate(&mut total, g)?;
    }
    scale(&mut total, 1.0 / batch.len() as f64);
    Ok(total)
}

/// Per-seed artifacts before they are written.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub history: Vec<MetricRow>,
    pub trace: Option<crate::pretrain::PretrainReport>,
}

/// Trains one seed. Failures are recorded in the summary, not returned.
pub fn train_seed(config: &RunConfig, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let stack = config.stack_config()?;
    let rng = RandomSource::new(seed);
    let data = synthetic_generate(&config.task, &rng.fork(0))?;
    let mut run = SeedRun {
        summary: SeedSummary {
            seed,
            status: RunStatus::Failed,
            reason: None,
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: None,
            test: None,
            pretrain: None,
        },
        history: Vec::new(),
        trace: None,
    };
    if let Err(e) = train_into(config, &stack, &data, &rng, &mut run) {
        run.summary.status = RunStatus::Failed;
        run.summary.reason = Some(e.to_string());
    }
    Ok(run)
}

fn train_into(config: &RunConfig, stack: &StackConfig, data: &Dataset, rng: &RandomSource, run: &mut SeedRun) -> Result<()> {
    let mut params = stack.init_params(&rng.fork(1))?;
    if let Some(pre) = &config.pretrain {
        let train = &data.train;
        let b = config.pretrain_batch;
        let mut source = |step: usize| -> Result<Vec<Vec<Vec<f64>>>> {
            Ok((0..b).map(|i| train[((step - 1) * b + i) % train.len()].inputs.clone()).collect())
        };
        let report = pretrain_run(stack, params, pre, &mut source, &rng.fork(2))?;
        run.summary.pretrain = Some(PretrainSummary {
            steps_taken: report.steps_taken,
            converged: report.converged,
            mean_rho: report.final_stats.mean_rho,
            std_rho: report.final_stats.std_rho,
        });
        params = report.params.clone();
        run.trace = Some(report);
    }
    let tie = config.tie_break;
    let mut optimizer = AdaBelief::new(AdaBeliefConfig {
        learning_rate: config.learning_rate,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let mut shuffle = rng.fork(3);
    let val0 = evaluate(stack, &params, &data.val, tie)?;
    run.history.push(MetricRow::new(0, "train", evaluate(stack, &params, &data.train, tie)?));
    run.history.push(MetricRow::new(0, "val", val0));
    let (mut best, mut best_epoch, mut best_params) = (val0.loss, 0, params.clone());
    let mut wait = 0;
    run.summary.status = RunStatus::Completed;
    for epoch in 1..=config.max_epochs {
        let order = shuffle.permutation(data.train.len());
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let grads = batch_gradient(stack, &params, &batch)?;
            optimizer.step_stack(stack, &mut params, &grads)?;
        }
        if !params.is_finite() {
            return Err(LscError::NonFinite(format!("parameters diverged in epoch {epoch}")));
        }
        let val = evaluate(stack, &params, &data.val, tie)?;
        run.history.push(MetricRow::new(epoch, "train", evaluate(stack, &params, &data.train, tie)?));
        run.history.push(MetricRow::new(epoch, "val", val));
        run.summary.epochs_run = epoch;
        if val.loss < best {
            (best, best_epoch, best_params) = (val.loss, epoch, params.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.early_stop_patience {
                run.summary.status = RunStatus::EarlyStopped;
                break;
            }
        }
    }
    let test = evaluate(stack, &best_params, &data.test, tie)?;
    run.history.push(MetricRow::new(best_epoch, "test", test));
    run.summary.best_epoch = best_epoch;
    run.summary.best_val_loss = Some(best);
    run.summary.test = Some(test);
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn seed_dir(output: &Path, seed: u64) -> std::path::PathBuf {
    output.join(format!("seed_{seed}"))
}

/// Trains every seed in parallel, writes per-seed files under
/// `output_dir/seed_<s>/` and the aggregate at the top level.
pub fn train_run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let runs = config.seeds.par_iter().map(|&s| train_seed(config, s)).collect::<Result<Vec<_>>>()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out)?;
    for r in &runs {
        let dir = seed_dir(out, r.summary.seed);
        std::fs::create_dir_all(&dir)?;
        write_metrics(&dir.join(METRICS_FILE), &r.history)?;
        write_json(&dir.join(SUMMARY_FILE), &r.summary)?;
        if let Some(t) = &r.trace {
            t.write_trace(&dir.join(TRACE_FILE))?;
        }
    }
    let seeds: Vec<SeedSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let agg = aggregate(&seeds);
    write_aggregate(out, &agg)?;
    Ok(RunOutcome { seeds, histories: runs.into_iter().map(|r| r.history).collect(), aggregate: agg })
}

pub fn write_aggregate(out: &Path, agg: &Aggregate) -> Result<()> {
    write_json(&out.join(AGGREGATE_JSON), agg)?;
    let mut w = csv::Writer::from_path(out.join(AGGREGATE_CSV))?;
    for m in &agg.metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
