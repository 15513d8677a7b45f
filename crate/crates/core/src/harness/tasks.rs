use serde::{Deserialize, Serialize};

use super::config::{TaskKind, TaskSpec};
use super::idx::{read_idx, IMAGE_MAGIC, LABEL_MAGIC};
use crate::error::{LscError, Result};
use crate::linalg::RandomSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `T x channels`.
    pub inputs: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn label_counts(split: &[Sample], classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        split.iter().for_each(|s| counts[s.label] += 1);
        counts
    }
}

/// Spike time of a pixel intensity `x` under `tau_eff ln(x / (x - threshold))`,
/// rounded and clamped to `[0, T-1]`; `None` (no spike) when `x <= threshold`.
pub fn spike_latency_encode(x: f64, threshold: f64, tau_eff: f64, steps: usize) -> Result<Option<usize>> {
    if !(0.0..=1.0).contains(&x) {
        return Err(LscError::Argument(format!("pixel intensity must lie in [0, 1], got {x}")));
    }
    if steps == 0 {
        return Err(LscError::Argument("latency coding needs T >= 1".into()));
    }
    if x <= threshold {
        return Ok(None);
    }
    let t = (tau_eff * (x / (x - threshold)).ln()).round();
    Ok(Some(if t.is_finite() { (t.max(0.0) as usize).min(steps - 1) } else { steps - 1 }))
}

/// Builds the train/val/test splits of `spec`; identical seeds give
/// identical datasets.
pub fn synthetic_generate(spec: &TaskSpec, rng: &RandomSource) -> Result<Dataset> {
    spec.validate()?;
    let mut ds = match spec.kind {
        TaskKind::SyntheticRowsum => {
            let cuts = rowsum_cuts(spec, &mut rng.fork(0));
            Dataset {
                train: rowsum_split(spec, &cuts, spec.train, &mut rng.fork(1))?,
                val: rowsum_split(spec, &cuts, spec.val, &mut rng.fork(2))?,
                test: rowsum_split(spec, &cuts, spec.test, &mut rng.fork(3))?,
            }
        }
        TaskKind::SyntheticDelayedRecall => Dataset {
            train: recall_split(spec, spec.train, &mut rng.fork(1)),
            val: recall_split(spec, spec.val, &mut rng.fork(2)),
            test: recall_split(spec, spec.test, &mut rng.fork(3)),
        },
        TaskKind::SpikeLatencyImages => spike_latency_images(spec)?,
    };
    if spec.repeat > 1 {
        for s in ds.train.iter_mut().chain(&mut ds.val).chain(&mut ds.test) {
            s.inputs = s.inputs.iter().flat_map(|f| std::iter::repeat_n(f.clone(), spec.repeat)).collect();
        }
    }
    Ok(ds)
}

fn uniform_sequence(spec: &TaskSpec, rng: &mut RandomSource) -> Vec<Vec<f64>> {
    (0..spec.steps).map(|_| (0..spec.channels).map(|_| rng.uniform()).collect()).collect()
}

fn total(inputs: &[Vec<f64>]) -> f64 {
    inputs.iter().flatten().sum()
}

/// Inner quantiles of the sum, estimated from a reference draw.
fn rowsum_cuts(spec: &TaskSpec, rng: &mut RandomSource) -> Vec<f64> {
    const REFERENCE: usize = 4096;
    let mut sums: Vec<f64> = (0..REFERENCE).map(|_| total(&uniform_sequence(spec, rng))).collect();
    sums.sort_by(f64::total_cmp);
    (1..spec.classes).map(|c| sums[c * REFERENCE / spec.classes]).collect()
}

fn bucket(cuts: &[f64], value: f64) -> usize {
    cuts.iter().take_while(|c| value >= **c).count()
}

/// Class `i mod classes` for the `i`-th sample, drawn by rejection, then
/// shuffled.
fn rowsum_split(spec: &TaskSpec, cuts: &[f64], n: usize, rng: &mut RandomSource) -> Result<Vec<Sample>> {
    const MAX_TRIES: usize = 100_000;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        let inputs = (0..MAX_TRIES)
            .map(|_| uniform_sequence(spec, rng))
            .find(|x| bucket(cuts, total(x)) == label)
            .ok_or_else(|| LscError::Precondition(format!("could not draw a rowsum sample of class {label}")))?;
        out.push(Sample { inputs, label });
    }
    rng.shuffle(&mut out);
    Ok(out)
}

/// One-hot symbol at the first step, a query flag on the last channel at the
/// final step, small Gaussian distractors in between.
fn recall_split(spec: &TaskSpec, n: usize, rng: &mut RandomSource) -> Vec<Sample> {
    let mut out: Vec<Sample> = (0..n)
        .map(|i| {
            let label = i % spec.classes;
            let mut inputs: Vec<Vec<f64>> =
                (0..spec.steps).map(|_| (0..spec.channels).map(|_| 0.1 * rng.normal()).collect()).collect();
            inputs[0].iter_mut().for_each(|v| *v = 0.0);
            inputs[0][label] = 1.0;
            let last = spec.steps - 1;
            inputs[last].iter_mut().for_each(|v| *v = 0.0);
            inputs[last][spec.channels - 1] = 1.0;
            Sample { inputs, label }
        })
        .collect();
    rng.shuffle(&mut out);
    out
}

/// Latency-coded spike trains of the first `train + val + test` images.
pub fn spike_latency_images(spec: &TaskSpec) -> Result<Dataset> {
    let (Some(ip), Some(lp)) = (&spec.images, &spec.labels) else {
        return Err(LscError::Config("spike_latency_images needs image and label paths".into()));
    };
    let images = read_idx(ip, IMAGE_MAGIC)?;
    let labels = read_idx(lp, LABEL_MAGIC)?;
    let needed = spec.train + spec.val + spec.test;
    if images.len() != labels.len() || images.len() < needed {
        return Err(LscError::Config(format!(
            "{} images and {} labels cannot supply {needed} samples",
            images.len(),
            labels.len()
        )));
    }
    if images.item_len() != spec.channels {
        return Err(LscError::Config(format!("images have {} pixels, task expects {} channels", images.item_len(), spec.channels)));
    }
    let samples = (0..needed)
        .map(|i| {
            let label = labels.item(i)[0] as usize;
            if label >= spec.classes {
                return Err(LscError::Config(format!("label {label} out of range for {} classes", spec.classes)));
            }
            let mut inputs = vec![vec![0.0; spec.channels]; spec.steps];
            for (c, &px) in images.item(i).iter().enumerate() {
                if let Some(t) = spike_latency_encode(px as f64 / 255.0, spec.threshold, spec.tau_eff, spec.steps)? {
                    inputs[t][c] = 1.0;
                }
            }
            Ok(Sample { inputs, label })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = samples.into_iter();
    Ok(Dataset {
        train: it.by_ref().take(spec.train).collect(),
        val: it.by_ref().take(spec.val).collect(),
        test: it.collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::idx::encode_idx;

    #[test]
    fn latency_examples() {
        assert_eq!(spike_latency_encode(0.1, 0.2, 50.0, 100).unwrap(), None);
        assert_eq!(spike_latency_encode(0.2, 0.2, 50.0, 100).unwrap(), None);
        assert_eq!(spike_latency_encode(1.0, 0.2, 50.0, 100).unwrap(), Some(11));
        assert_eq!(spike_latency_encode(0.2 + 1e-12, 0.2, 50.0, 100).unwrap(), Some(99));
        assert!(spike_latency_encode(1.5, 0.2, 50.0, 100).is_err());
        assert!(spike_latency_encode(-0.1, 0.2, 50.0, 100).is_err());
    }

    #[test]
    fn rowsum_is_balanced_and_bucketed() {
        let spec = TaskSpec { train: 40, val: 8, test: 12, ..TaskSpec::default() };
        let ds = synthetic_generate(&spec, &RandomSource::new(1)).unwrap();
        assert_eq!(Dataset::label_counts(&ds.train, 4), vec![10; 4]);
        assert_eq!(Dataset::label_counts(&ds.test, 4), vec![3; 4]);
        let cuts = rowsum_cuts(&spec, &mut RandomSource::new(1).fork(0));
        assert_eq!(bucket(&cuts, 0.0), 0);
        for s in &ds.train {
            assert_eq!(bucket(&cuts, total(&s.inputs)), s.label);
        }
    }

    #[test]
    fn recall_layout_and_repeat() {
        let spec = TaskSpec {
            kind: TaskKind::SyntheticDelayedRecall,
            steps: 3,
            channels: 4,
            classes: 3,
            train: 6,
            val: 3,
            test: 3,
            repeat: 2,
            ..TaskSpec::default()
        };
        let ds = synthetic_generate(&spec, &RandomSource::new(2)).unwrap();
        for s in &ds.train {
            assert_eq!(s.inputs.len(), 6);
            assert_eq!(s.inputs[0], s.inputs[1]);
            assert_eq!(s.inputs[0][s.label], 1.0);
            assert_eq!(s.inputs[5], vec![0.0, 0.0, 0.0, 1.0]);
        }
        assert_eq!(Dataset::label_counts(&ds.train, 3), vec![2; 3]);
    }

    #[test]
    fn images_are_latency_coded() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&ip, encode_idx(IMAGE_MAGIC, &[3, 1, 2], &[255, 0, 128, 255, 0, 0])).unwrap();
        std::fs::write(&lp, encode_idx(LABEL_MAGIC, &[3], &[1, 0, 1])).unwrap();
        let spec = TaskSpec {
            kind: TaskKind::SpikeLatencyImages,
            steps: 30,
            channels: 2,
            classes: 2,
            train: 1,
            val: 1,
            test: 1,
            images: Some(ip),
            labels: Some(lp),
            ..TaskSpec::default()
        };
        let ds = synthetic_generate(&spec, &RandomSource::new(0)).unwrap();
        let s = &ds.train[0];
        assert_eq!(s.label, 1);
        assert_eq!(s.inputs[11], vec![1.0, 0.0]);
        assert_eq!(s.inputs.iter().flatten().sum::<f64>(), 1.0);
        // 128/255 spikes later than 255/255
        let t_val = ds.val[0].inputs.iter().position(|f| f[0] == 1.0).unwrap();
        assert!(t_val > 11);
        assert_eq!(ds.test[0].inputs.iter().flatten().sum::<f64>(), 0.0);
    }
}
