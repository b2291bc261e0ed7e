use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pixalign::checkpoint::{load_segmenter, save_segmenter};
use pixalign::data::{kshot_select, LabeledImage};
use pixalign::eval::{evaluate, iou_chart_svg, MetricsReport};
use pixalign::models::Segmenter;
use pixalign::trainer::{pretrain_source, run_finetune, train_adversarial, Method};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::load_dataset;
use crate::config::{load_toml, relative_to, resolve_partition, to_toml, RunConfig};
use crate::error::{CliError, CliResult};
use crate::run_dir::{
    artifact_version, create_output_dir, write_json, write_text, JsonlLog, RunManifest, CHART_FILE,
    CHECKPOINT_DIR, CONFIG_FILE, MANIFEST_FILE, REPORT_FILE,
};

pub struct TrainOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub output_dir: Option<PathBuf>,
    pub dry_run: bool,
    /// Print phase boundaries and selection events to stderr.
    pub verbose: bool,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    /// `held_out` when scored on target images that were not used as shots,
    /// `shots` when every target image was a shot.
    pub evaluated_on: String,
    pub eval_images: usize,
    pub metrics: MetricsReport,
}

/// Outcome of [`cmd_train`]: the resolved config, plus the run report
/// unless it was a dry run.
pub struct TrainOutcome {
    pub config: RunConfig,
    pub report: Option<RunReport>,
}

fn resolve(opts: &TrainOptions) -> CliResult<RunConfig> {
    let mut cfg: RunConfig = load_toml(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    if let Some(m) = opts.method {
        cfg.method = m;
    }
    cfg.dataset = relative_to(&opts.config, &cfg.dataset);
    cfg.output_dir = match &opts.output_dir {
        Some(d) => d.clone(),
        None => relative_to(&opts.config, &cfg.output_dir),
    };
    cfg.pretrained = cfg
        .pretrained
        .as_deref()
        .map(|p| relative_to(&opts.config, p));
    cfg.train.validate()?;
    if cfg.k_shot == 0 {
        return Err(CliError::config("k_shot must be at least 1"));
    }
    resolve_partition(cfg.partition.as_ref(), cfg.train.segmenter.class_count)?;
    Ok(cfg)
}

fn load_pretrained(path: &Path, cfg: &RunConfig) -> CliResult<Segmenter> {
    let (seg, _) = load_segmenter(path)?;
    if seg.config() != &cfg.train.segmenter {
        return Err(CliError::config(format!(
            "checkpoint {} was built with a different segmenter config",
            path.display()
        )));
    }
    Ok(seg)
}

fn save_stage(dir: &Path, stage: &str, seg: &Segmenter, cfg: &RunConfig) -> CliResult<()> {
    let meta = json!({ "stage": stage, "method": cfg.method, "seed": cfg.train.seed });
    Ok(save_segmenter(
        &dir.join(format!("{stage}.ckpt")),
        seg,
        &meta,
    )?)
}

/// Runs one training recipe end to end: pretraining (or loading the given
/// checkpoint), the method's adaptation and fine-tuning stages, then
/// evaluation on the held-out target images.
pub fn cmd_train(opts: &TrainOptions) -> CliResult<TrainOutcome> {
    let cfg = resolve(opts)?;
    if opts.dry_run {
        return Ok(TrainOutcome {
            config: cfg,
            report: None,
        });
    }
    let classes = cfg.train.segmenter.class_count;
    let partition = resolve_partition(cfg.partition.as_ref(), classes)?;
    let data = load_dataset(&cfg.dataset, classes)?;
    let shots = kshot_select(&data.target, cfg.k_shot, cfg.train.seed)?;
    let shot_ids: BTreeSet<&str> = shots.iter().map(|s| s.id.as_str()).collect();
    let held_out: Vec<LabeledImage> = data
        .target
        .iter()
        .filter(|t| !shot_ids.contains(t.id.as_str()))
        .cloned()
        .collect();

    let out = &cfg.output_dir;
    create_output_dir(out)?;
    let manifest = RunManifest {
        command: "train".into(),
        config_path: opts.config.clone(),
        seed: Some(cfg.train.seed),
        version: artifact_version(),
        output_dir: out.clone(),
        config: serde_json::to_value(&cfg).map_err(pixalign::Error::from)?,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_text(&out.join(CONFIG_FILE), &to_toml(&cfg)?)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;

    let mut log = JsonlLog::create(out, opts.verbose)?;
    let pipeline = cfg.method.pipeline();
    let pretrained = match &cfg.pretrained {
        Some(path) => load_pretrained(path, &cfg)?,
        None => {
            let seg = pretrain_source(&cfg.train, &data.source, &mut log)?;
            save_stage(&ckpt_dir, "pretrained", &seg, &cfg)?;
            seg
        }
    };
    let adapted = match pipeline.adapt {
        Some(adapt) => {
            let seg = train_adversarial(
                &cfg.train,
                adapt,
                &pretrained,
                &data.source,
                &shots,
                &mut log,
            )?;
            save_stage(&ckpt_dir, "adapted", &seg, &cfg)?;
            seg
        }
        None => pretrained,
    };
    let model = run_finetune(&cfg.train, pipeline.finetune, adapted, &shots, &mut log)?;
    save_stage(&ckpt_dir, "final", &model, &cfg)?;
    log.finish()?;

    let (evaluated_on, eval_set) = if held_out.is_empty() {
        ("shots", &shots)
    } else {
        ("held_out", &held_out)
    };
    let metrics = evaluate(&model, eval_set, &partition, cfg.zero_union)?;
    let report = RunReport {
        method: cfg.method,
        seed: cfg.train.seed,
        evaluated_on: evaluated_on.into(),
        eval_images: eval_set.len(),
        metrics,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_text(&out.join(CHART_FILE), &iou_chart_svg(&report.metrics, None))?;
    Ok(TrainOutcome {
        config: cfg,
        report: Some(report),
    })
}
