use serde::{Deserialize, Serialize};

use crate::eval::MetricsReport;
use crate::sample_selection::SelectionRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adapt,
    Finetune,
}

/// Loss scalars of one optimizer step; absent terms are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_focal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_focal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_disc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_disc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kd: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub phase: Phase,
    /// 0-based step index within the phase.
    pub iteration: usize,
    pub seg_lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_lr: Option<f64>,
    pub losses: Losses,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseEvent {
    Start,
    End,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub event: PhaseEvent,
    /// Steps taken so far in the phase.
    pub iterations: usize,
}

/// Receives training progress as it happens.
pub trait Observer {
    fn iteration(&mut self, _record: &IterationRecord) {}
    fn selection(&mut self, _record: &SelectionRecord) {}
    fn phase(&mut self, _record: &PhaseRecord) {}
}

pub struct NullObserver;

impl Observer for NullObserver {}

/// Append-only in-memory history of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub phases: Vec<PhaseRecord>,
    pub iterations: Vec<IterationRecord>,
    pub selections: Vec<SelectionRecord>,
    pub checkpoints: Vec<String>,
    pub metrics: Option<MetricsReport>,
}

impl RunRecord {
    pub fn iterations_in(&self, phase: Phase) -> impl Iterator<Item = &IterationRecord> {
        self.iterations.iter().filter(move |r| r.phase == phase)
    }
}

impl Observer for RunRecord {
    fn iteration(&mut self, record: &IterationRecord) {
        self.iterations.push(record.clone());
    }
    fn selection(&mut self, record: &SelectionRecord) {
        self.selections.push(record.clone());
    }
    fn phase(&mut self, record: &PhaseRecord) {
        self.phases.push(record.clone());
    }
}
