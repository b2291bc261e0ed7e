use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{pretrain_source, run_finetune, train_adversarial, Method, NullObserver, TrainConfig};
use crate::data::{kshot_select, LabeledImage};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ClassPartition, MetricsReport, ZeroUnion};

/// Inputs shared by every run of an ablation.
pub struct AblationData<'a> {
    pub source: &'a [LabeledImage],
    /// Pool of city-tagged target images. Each seed draws its `k` shots per
    /// city from here; the remaining images form that seed's evaluation set.
    pub target_pool: &'a [LabeledImage],
    pub k: usize,
    pub partition: &'a ClassPartition,
    pub zero_union: ZeroUnion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub method: Method,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Per-method medians over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub seeds: Vec<u64>,
    /// mIoU per seed in percent, in seed order.
    pub miou: Vec<f64>,
    pub median_miou: f64,
    /// Median per-class IoU in percent; `None` if the class is absent in
    /// every run.
    pub median_class_iou: Vec<Option<f64>>,
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationRow {
    pub fn summarize(method: Method, runs: &[AblationRun]) -> Option<Self> {
        let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.method == method).collect();
        if mine.is_empty() {
            return None;
        }
        let miou: Vec<f64> = mine
            .iter()
            .map(|r| 100.0 * r.report.miou.unwrap_or(0.0))
            .collect();
        let classes = mine[0].report.per_class_iou.len();
        let median_class_iou = (0..classes)
            .map(|c| {
                let vals: Vec<f64> = mine
                    .iter()
                    .filter_map(|r| r.report.per_class_iou[c])
                    .map(|v| 100.0 * v)
                    .collect();
                (!vals.is_empty()).then(|| median(&vals))
            })
            .collect();
        Some(Self {
            method,
            seeds: mine.iter().map(|r| r.seed).collect(),
            median_miou: median(&miou),
            miou,
            median_class_iou,
        })
    }
}

/// Runs every method for every seed. Within a seed, source pretraining is
/// shared by all methods and each distinct adaptation phase runs once, so
/// variants that differ only in fine-tuning share their adapted model.
/// `on_run` sees each result as soon as it is evaluated.
pub fn run_ablation(
    config: &TrainConfig,
    methods: &[Method],
    seeds: &[u64],
    data: &AblationData<'_>,
    on_run: &mut dyn FnMut(&AblationRun),
) -> Result<Vec<AblationRun>> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "ablation",
            "needs at least one method and one seed",
        ));
    }
    let mut runs = Vec::with_capacity(methods.len() * seeds.len());
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            ..config.clone()
        };
        let shots = kshot_select(data.target_pool, data.k, seed)?;
        let shot_ids: BTreeSet<&str> = shots.iter().map(|s| s.id.as_str()).collect();
        let eval_set: Vec<LabeledImage> = data
            .target_pool
            .iter()
            .filter(|t| !shot_ids.contains(t.id.as_str()))
            .cloned()
            .collect();
        if eval_set.is_empty() {
            return Err(Error::EmptyDataset(
                "no target images left for evaluation".into(),
            ));
        }
        let pretrained = pretrain_source(&cfg, data.source, &mut NullObserver)?;
        let mut adapted = HashMap::new();
        for &method in methods {
            let pipeline = method.pipeline();
            if let std::collections::hash_map::Entry::Vacant(e) = adapted.entry(pipeline.adapt) {
                let model = match pipeline.adapt {
                    Some(opts) => train_adversarial(
                        &cfg,
                        opts,
                        &pretrained,
                        data.source,
                        &shots,
                        &mut NullObserver,
                    )?,
                    None => pretrained.clone(),
                };
                e.insert(model);
            }
            let model = run_finetune(
                &cfg,
                pipeline.finetune,
                adapted[&pipeline.adapt].clone(),
                &shots,
                &mut NullObserver,
            )?;
            let run = AblationRun {
                method,
                seed,
                report: evaluate(&model, &eval_set, data.partition, data.zero_union)?,
            };
            on_run(&run);
            runs.push(run);
        }
    }
    Ok(runs)
}
