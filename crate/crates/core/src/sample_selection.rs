//! Epoch-wise pruning of the source set. After each adaptation epoch, a
//! source image stays only if the image-level discriminator scores it below
//! the current threshold, i.e. finds it target-like enough. The threshold
//! doubles every epoch up to a cap below one.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold cap: just below one, the supremum of a sigmoid score.
pub const DEFAULT_DELTA_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    retained_ids: Vec<String>,
    delta: f64,
    epoch: u32,
    delta0: f64,
    delta_max: f64,
}

/// One line of the selection log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// Epoch whose end triggered this selection (0-based).
    pub epoch: u32,
    /// Threshold the scores were compared against.
    pub delta: f64,
    pub retained: usize,
    pub dropped_ids: Vec<String>,
    /// Score of every image that was up for selection.
    pub scores: BTreeMap<String, f64>,
}

/// `min(delta0 · 2^epoch, delta_max)`.
pub fn delta_at(delta0: f64, delta_max: f64, epoch: u32) -> f64 {
    (delta0 * 2f64.powi(epoch.min(1100) as i32)).min(delta_max)
}

impl SelectionState {
    pub fn new(ids: Vec<String>, delta0: f64, delta_max: f64) -> Result<Self> {
        if !(delta0 > 0.0 && delta0 <= delta_max) {
            return Err(Error::invalid(
                "delta0",
                format!("{delta0} must be in (0, delta_max]"),
            ));
        }
        if !(delta_max <= 1.0) {
            return Err(Error::invalid(
                "delta_max",
                format!("{delta_max} exceeds 1"),
            ));
        }
        Ok(Self {
            retained_ids: ids,
            delta: delta0,
            epoch: 0,
            delta0,
            delta_max,
        })
    }

    pub fn retained_ids(&self) -> &[String] {
        &self.retained_ids
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn epoch(&self) -> u32 {
        self.epoch
    }
    pub fn delta0(&self) -> f64 {
        self.delta0
    }
    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    /// True once no source image survives; the adaptation phase ends here.
    pub fn is_exhausted(&self) -> bool {
        self.retained_ids.is_empty()
    }
}

/// Keeps each retained id whose score is strictly below the current
/// threshold, then advances the epoch and the threshold. Only previously
/// retained ids are considered, so the set can never grow.
pub fn select_epoch(
    state: &SelectionState,
    scores: &BTreeMap<String, f64>,
) -> Result<(SelectionState, SelectionRecord)> {
    let mut kept = Vec::with_capacity(state.retained_ids.len());
    let mut dropped = Vec::new();
    let mut considered = BTreeMap::new();
    for id in &state.retained_ids {
        let score = *scores
            .get(id)
            .ok_or_else(|| Error::MissingScore(id.clone()))?;
        considered.insert(id.clone(), score);
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(
                "score",
                format!("{score} for `{id}` outside [0, 1]"),
            ));
        }
        if score < state.delta {
            kept.push(id.clone());
        } else {
            dropped.push(id.clone());
        }
    }
    let record = SelectionRecord {
        epoch: state.epoch,
        delta: state.delta,
        retained: kept.len(),
        dropped_ids: dropped,
        scores: considered,
    };
    let epoch = state.epoch + 1;
    let next = SelectionState {
        retained_ids: kept,
        delta: delta_at(state.delta0, state.delta_max, epoch),
        epoch,
        ..*state
    };
    Ok((next, record))
}

/// Appends `record` as one JSON line.
pub fn append_record(path: &Path, record: &SelectionRecord) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record)?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn threshold_keeps_only_lower_scores() {
        let mut s = SelectionState::new(ids(&["a", "b", "c"]), 0.4, DEFAULT_DELTA_MAX).unwrap();
        let (next, rec) = select_epoch(&s, &scores(&[("a", 0.3), ("b", 0.5), ("c", 0.9)])).unwrap();
        assert_eq!(next.retained_ids(), ids(&["a"]).as_slice());
        assert_eq!(rec.dropped_ids, ids(&["b", "c"]));
        assert_eq!(next.delta(), 0.8);
        s = next;
        let (next, _) = select_epoch(&s, &scores(&[("a", 0.7)])).unwrap();
        assert_eq!(next.retained_ids().len(), 1);
        assert_eq!(next.delta(), DEFAULT_DELTA_MAX);
    }

    #[test]
    fn boundary_cases() {
        let s = SelectionState::new(ids(&["a", "b"]), 0.4, DEFAULT_DELTA_MAX).unwrap();
        let (all_high, _) = select_epoch(&s, &scores(&[("a", 0.4), ("b", 0.99)])).unwrap();
        assert!(all_high.is_exhausted());
        let (all_low, _) = select_epoch(&s, &scores(&[("a", 0.1), ("b", 0.39)])).unwrap();
        assert_eq!(all_low.retained_ids(), s.retained_ids());
        assert!(
            matches!(select_epoch(&s, &scores(&[("a", 0.1)])), Err(Error::MissingScore(id)) if id == "b")
        );
    }

    #[test]
    fn delta_sequence_doubles_then_clamps() {
        let seq: Vec<f64> = (0..4)
            .map(|k| delta_at(0.4, DEFAULT_DELTA_MAX, k))
            .collect();
        assert_eq!(seq, vec![0.4, 0.8, DEFAULT_DELTA_MAX, DEFAULT_DELTA_MAX]);
    }
}
