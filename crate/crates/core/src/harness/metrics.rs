use serde::{Deserialize, Serialize};

use crate::error::{LscError, Result};

/// Resolution of "the class that fired the most for the longest".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Most frequent argmax, then longest run, then lowest index.
    #[default]
    FrequencyThenRun,
    /// Longest run, then most frequent, then lowest index.
    RunThenFrequency,
}

fn argmax(v: &[f64]) -> usize {
    // first maximum, so ties go to the lower class
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Predicted class of a `T x classes` logit sequence.
pub fn mode_prediction(logits: &[Vec<f64>], tie: TieBreak) -> Result<usize> {
    let classes = logits.first().map(Vec::len).unwrap_or(0);
    if classes == 0 {
        return Err(LscError::Argument("mode prediction needs T >= 1 and at least one class".into()));
    }
    let seq: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let mut freq = vec![0usize; classes];
    let mut run = vec![0usize; classes];
    let mut i = 0;
    while i < seq.len() {
        let c = seq[i];
        let j = seq[i..].iter().position(|&d| d != c).map_or(seq.len(), |k| i + k);
        freq[c] += j - i;
        run[c] = run[c].max(j - i);
        i = j;
    }
    let key = |c: usize| match tie {
        TieBreak::FrequencyThenRun => (freq[c], run[c]),
        TieBreak::RunThenFrequency => (run[c], freq[c]),
    };
    // strict comparison keeps the lowest index on a full tie
    Ok((1..classes).fold(0, |best, c| if key(c) > key(best) { c } else { best }))
}

/// 1 when the mode prediction equals `label`, else 0.
pub fn mode_accuracy(logits: &[Vec<f64>], label: usize, tie: TieBreak) -> Result<u8> {
    Ok(u8::from(mode_prediction(logits, tie)? == label))
}

/// Softmax cross-entropy of one step and its gradient with respect to the
/// logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Cross-entropy averaged over time and its per-step logit gradients.
pub fn sequence_loss(logits: &[Vec<f64>], label: usize) -> (f64, Vec<Vec<f64>>) {
    let scale = 1.0 / logits.len() as f64;
    let mut total = 0.0;
    let grads = logits
        .iter()
        .map(|l| {
            let (loss, mut g) = cross_entropy(l, label);
            total += loss;
            g.iter_mut().for_each(|v| *v *= scale);
            g
        })
        .collect();
    (total * scale, grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

impl Evaluation {
    /// From the mean cross-entropy and the number of correct sequences.
    pub fn new(mean_loss: f64, correct: usize, total: usize) -> Self {
        Self { loss: mean_loss, accuracy: correct as f64 / total.max(1) as f64, perplexity: mean_loss.exp() }
    }
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub perplexity: f64,
}

impl MetricRow {
    pub fn new(epoch: usize, split: &str, e: Evaluation) -> Self {
        Self { epoch, split: split.into(), loss: e.loss, accuracy: e.accuracy, perplexity: e.perplexity }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehots(seq: &[usize], classes: usize) -> Vec<Vec<f64>> {
        seq.iter()
            .map(|&c| {
                let mut v = vec![0.0; classes];
                v[c] = 1.0;
                v
            })
            .collect()
    }

    #[test]
    fn mode_rules() {
        let constant = vec![vec![0.1, 0.2, 0.9]; 4];
        assert_eq!(mode_prediction(&constant, TieBreak::FrequencyThenRun).unwrap(), 2);
        assert_eq!(mode_prediction(&onehots(&[0, 1, 1, 0], 2), TieBreak::FrequencyThenRun).unwrap(), 1);
        assert_eq!(mode_prediction(&onehots(&[0, 1, 0, 1], 2), TieBreak::FrequencyThenRun).unwrap(), 0);
        // 0 is most frequent, 1 has the longest run
        let seq = onehots(&[0, 2, 0, 2, 0, 1, 1], 3);
        assert_eq!(mode_prediction(&seq, TieBreak::FrequencyThenRun).unwrap(), 0);
        assert_eq!(mode_prediction(&seq, TieBreak::RunThenFrequency).unwrap(), 1);
        assert_eq!(mode_accuracy(&seq, 0, TieBreak::FrequencyThenRun).unwrap(), 1);
        assert!(mode_prediction(&[], TieBreak::FrequencyThenRun).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let logits = vec![0.3, -1.2, 2.0];
        let (loss, g) = cross_entropy(&logits, 1);
        let direct = -((-1.2f64).exp() / logits.iter().map(|z: &f64| z.exp()).sum::<f64>()).ln();
        assert!((loss - direct).abs() < 1e-12);
        for i in 0..3 {
            let mut p = logits.clone();
            p[i] += 1e-6;
            let mut m = logits.clone();
            m[i] -= 1e-6;
            let fd = (cross_entropy(&p, 1).0 - cross_entropy(&m, 1).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
        let uniform = Evaluation::new(cross_entropy(&[0.0; 4], 2).0, 1, 4);
        assert!((uniform.perplexity - 4.0).abs() < 1e-12);
        assert_eq!(uniform.accuracy, 0.25);
    }
}
