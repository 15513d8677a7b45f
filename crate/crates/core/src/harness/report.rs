use std::path::Path;

use super::metrics::MetricRow;
use super::train::{aggregate, Aggregate, RunOutcome, SeedSummary, AGGREGATE_JSON, METRICS_FILE, SUMMARY_FILE};
use crate::error::{LscError, Result};

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?)
}

pub fn read_summary(path: &Path) -> Result<SeedSummary> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn read_aggregate(path: &Path) -> Result<Aggregate> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Reads every `seed_<s>/` directory of a training output, ordered as the
/// seeds appear in the stored aggregate (by seed when there is none), and
/// recomputes the aggregate from the per-seed summaries.
pub fn read_output_dir(dir: &Path) -> Result<RunOutcome> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| LscError::Config(format!("cannot read {}: {e}", dir.display())))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(seed) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) {
            if path.is_dir() {
                found.push((seed, path));
            }
        }
    }
    if found.is_empty() {
        return Err(LscError::Config(format!("{} holds no seed_<s> directories", dir.display())));
    }
    let stored = dir.join(AGGREGATE_JSON);
    let order: Vec<u64> = if stored.exists() { read_aggregate(&stored)?.seeds } else { Vec::new() };
    found.sort_by_key(|(s, _)| (order.iter().position(|o| o == s).unwrap_or(usize::MAX), *s));
    let mut seeds = Vec::new();
    let mut histories = Vec::new();
    for (_, path) in &found {
        seeds.push(read_summary(&path.join(SUMMARY_FILE))?);
        histories.push(read_metrics(&path.join(METRICS_FILE))?);
    }
    let aggregate = aggregate(&seeds);
    Ok(RunOutcome { seeds, histories, aggregate })
}
