use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::TieBreak;
use crate::cells::{CellKind, Readout, StackConfig};
use crate::error::{LscError, Result};
use crate::optim::DEFAULT_LEARNING_RATE;
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Label is the quantile bucket of the summed inputs.
    SyntheticRowsum,
    /// A symbol shown at the first step must be reported at the last.
    SyntheticDelayedRecall,
    /// IDX images turned into spike trains by latency coding.
    SpikeLatencyImages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub steps: usize,
    pub channels: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Latency-coding threshold.
    pub threshold: f64,
    pub tau_eff: f64,
    /// Each input frame is presented this many times.
    pub repeat: usize,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::SyntheticRowsum,
            steps: 20,
            channels: 4,
            classes: 4,
            train: 256,
            val: 64,
            test: 256,
            threshold: 0.2,
            tau_eff: 50.0,
            repeat: 1,
            images: None,
            labels: None,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(LscError::Config(format!("a task needs at least 2 classes, got {}", self.classes)));
        }
        if self.steps < 2 {
            return Err(LscError::Config(format!("a task needs T >= 2, got {}", self.steps)));
        }
        if self.channels == 0 || self.repeat == 0 {
            return Err(LscError::Config("channels and repeat must be at least 1".into()));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(LscError::Config("train, val and test splits must be non-empty".into()));
        }
        match self.kind {
            TaskKind::SyntheticDelayedRecall if self.channels < self.classes + 1 => Err(LscError::Config(format!(
                "delayed recall needs channels >= classes + 1 (one-hot symbol plus query flag), got {}",
                self.channels
            ))),
            TaskKind::SpikeLatencyImages if self.images.is_none() || self.labels.is_none() => {
                Err(LscError::Config("spike_latency_images needs `images` and `labels` IDX paths".into()))
            }
            TaskKind::SpikeLatencyImages if !(self.threshold > 0.0 && self.threshold < 1.0 && self.tau_eff > 0.0) => {
                Err(LscError::Config("latency coding needs 0 < threshold < 1 and tau_eff > 0".into()))
            }
            _ => Ok(()),
        }
    }

    /// Sequence length seen by the network.
    pub fn presented_steps(&self) -> usize {
        self.steps * self.repeat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackSpec {
    /// Cell name as accepted by [`CellKind::from_name`].
    pub cell: String,
    pub depth: usize,
    pub width: usize,
    /// Only used by PascalRNN.
    pub rho: f64,
}

impl Default for StackSpec {
    fn default() -> Self {
        Self { cell: "rnn-sigmoid".into(), depth: 2, width: 16, rho: 1.0 }
    }
}

impl StackSpec {
    pub fn build(&self, channels: usize, classes: usize) -> Result<StackConfig> {
        let kind = CellKind::from_name(&self.cell, self.rho)?;
        if self.depth == 0 {
            return Err(LscError::Config("depth must be at least 1".into()));
        }
        StackConfig::uniform(kind, self.depth, self.width, channels, Readout::Linear { classes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub stack: StackSpec,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seeds: Vec<u64>,
    pub pretrain: Option<PretrainConfig>,
    /// Training sequences per pre-training step.
    pub pretrain_batch: usize,
    pub tie_break: TieBreak,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            stack: StackSpec::default(),
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: 0.0,
            batch_size: 32,
            max_epochs: 30,
            early_stop_patience: 10,
            seeds: vec![0, 1, 2, 3],
            pretrain: None,
            pretrain_batch: 8,
            tie_break: TieBreak::FrequencyThenRun,
            output_dir: PathBuf::from("lsc-output"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.stack.build(self.task.channels, self.task.classes)?;
        if self.early_stop_patience == 0 {
            return Err(LscError::Config("early_stop_patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(LscError::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 || self.pretrain_batch == 0 {
            return Err(LscError::Config("batch sizes must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0) {
            return Err(LscError::Config("learning rate must be positive and weight decay non-negative".into()));
        }
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        Ok(())
    }

    pub fn stack_config(&self) -> Result<StackConfig> {
        self.stack.build(self.task.channels, self.task.classes)
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = parse_document(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LscError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LscError::Config(e.to_string()))
    }
}

/// TOML or JSON into any config type.
pub fn parse_document<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| LscError::Config(format!("invalid JSON config: {e}")))
    } else {
        toml::from_str(text).map_err(|e| LscError::Config(format!("invalid TOML config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let text = r#"
            learning_rate = 0.01
            seeds = [3, 4]

            [task]
            kind = "synthetic_delayed_recall"
            steps = 5
            channels = 5
            classes = 4

            [stack]
            cell = "gru"
            width = 8

            [pretrain]
            target_time = 0.5
            target_depth = 0.5
        "#;
        let a = RunConfig::parse(text).unwrap();
        assert_eq!(a.task.kind, TaskKind::SyntheticDelayedRecall);
        assert_eq!(a.seeds, vec![3, 4]);
        assert_eq!(a.pretrain.as_ref().unwrap().target_time, 0.5);
        assert_eq!(a.pretrain.as_ref().unwrap().max_steps, 500);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(RunConfig::parse(&json).unwrap(), a);
        assert_eq!(RunConfig::parse(&a.to_toml().unwrap()).unwrap(), a);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(RunConfig::parse("early_stop_patience = 0"), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::parse("seeds = []"), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::parse("[task]\nclasses = 1"), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::parse("[task]\nsteps = 1"), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::parse("[stack]\ncell = \"tcn\""), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(LscError::Config(_))));
        assert!(matches!(RunConfig::load(Path::new("/nonexistent/run.toml")), Err(LscError::Config(_))));
    }
}
