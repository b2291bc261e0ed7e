use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use pixalign::eval::ClassPartition;
use pixalign::trainer::{run_ablation, AblationData, AblationRow, AblationRun, Method};
use serde::{Deserialize, Serialize};

use super::load_dataset;
use crate::config::{load_toml, relative_to, resolve_partition, to_toml, AblateConfig};
use crate::error::{CliError, CliResult};
use crate::run_dir::{
    artifact_version, create_output_dir, write_json, write_text, RunManifest, CONFIG_FILE,
    MANIFEST_FILE,
};

pub const RUNS_LOG: &str = "runs.jsonl";
pub const SUMMARY_FILE: &str = "ablation.json";
pub const TABLE_FILE: &str = "table.md";

/// Required gap, in mIoU points, between full PixAdv and each single-term
/// weighting variant.
pub const PIXADV_MARGIN: f64 = 0.5;
/// Slack, in mIoU points, allowed for each component addition.
pub const COMPONENT_SLACK: f64 = 0.2;
/// Required gap, in IoU points, between PixDA and the image-wise baseline
/// on every under-represented class.
pub const RARE_CLASS_MARGIN: f64 = 2.0;

pub struct AblateOptions {
    pub config: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub dry_run: bool,
    /// Print each finished run to stderr.
    pub verbose: bool,
}

/// One pairwise ordering check between medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Contents of `ablation.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub verdicts: Vec<Verdict>,
}

fn row(rows: &[AblationRow], m: Method) -> Option<&AblationRow> {
    rows.iter().find(|r| r.method == m)
}

/// Ordering checks over per-method medians. A check is emitted only when
/// every method it compares is present.
pub fn ordering_verdicts(rows: &[AblationRow], partition: &ClassPartition) -> Vec<Verdict> {
    use Method::*;
    let mut out = Vec::new();
    // (lower, higher, minimum gap, strict)
    let pairs = [
        (JointTraining, ImageWiseAdversarial, 0.0, true),
        (ImageWiseAdversarial, PixelWise, 0.0, true),
        (PixelB, Pixadv, PIXADV_MARGIN, false),
        (PixelS, Pixadv, PIXADV_MARGIN, false),
        (Pixadv, PixadvSelection, -COMPONENT_SLACK, false),
        (
            PixadvSelection,
            PixadvSelectionFinetune,
            -COMPONENT_SLACK,
            false,
        ),
        (PixadvSelectionFinetune, Pixda, -COMPONENT_SLACK, false),
        (Pixadv, Pixda, 0.0, true),
    ];
    for (lo, hi, gap, strict) in pairs {
        let (Some(a), Some(b)) = (row(rows, lo), row(rows, hi)) else {
            continue;
        };
        let diff = b.median_miou - a.median_miou;
        let passed = if strict { diff > gap } else { diff >= gap };
        let op = if strict { ">" } else { ">=" };
        out.push(Verdict {
            name: format!(
                "{hi} {op} {lo}{}",
                if gap == 0.0 {
                    String::new()
                } else {
                    format!(" {gap:+}")
                }
            ),
            passed,
            detail: format!("{:.2} vs {:.2} ({diff:+.2})", b.median_miou, a.median_miou),
        });
    }
    if let (Some(a), Some(b)) = (row(rows, ImageWiseAdversarial), row(rows, Pixda)) {
        for &c in &partition.under {
            let (x, y) = (
                a.median_class_iou.get(c).copied().flatten(),
                b.median_class_iou.get(c).copied().flatten(),
            );
            let (passed, detail) = match (x, y) {
                (Some(x), Some(y)) => (
                    y - x >= RARE_CLASS_MARGIN,
                    format!("{y:.2} vs {x:.2} ({:+.2})", y - x),
                ),
                _ => (false, "class absent from every evaluation set".to_string()),
            };
            out.push(Verdict {
                name: format!(
                    "class {c} IoU: pixda >= image_wise_adversarial +{RARE_CLASS_MARGIN}"
                ),
                passed,
                detail,
            });
        }
    }
    out
}

/// Markdown table of medians followed by the verdict list.
pub fn render_table(summary: &AblationSummary) -> String {
    let mut s = String::new();
    let classes = summary.rows.first().map_or(0, |r| r.median_class_iou.len());
    s.push_str("| method | median mIoU |");
    for c in 0..classes {
        let _ = write!(s, " class {c} |");
    }
    s.push_str(" per-seed mIoU |\n|---|---|");
    s.push_str(&"---|".repeat(classes + 1));
    s.push('\n');
    for r in &summary.rows {
        let _ = write!(s, "| {} | {:.2} |", r.method, r.median_miou);
        for v in &r.median_class_iou {
            match v {
                Some(v) => {
                    let _ = write!(s, " {v:.2} |");
                }
                None => s.push_str(" - |"),
            }
        }
        let per_seed: Vec<String> = r.miou.iter().map(|v| format!("{v:.2}")).collect();
        let _ = writeln!(s, " {} |", per_seed.join(" "));
    }
    if !summary.verdicts.is_empty() {
        s.push('\n');
        for v in &summary.verdicts {
            let _ = writeln!(
                s,
                "- {} {}: {}",
                if v.passed { "PASS" } else { "FAIL" },
                v.name,
                v.detail
            );
        }
    }
    s
}

/// Runs every listed variant for every seed and writes the comparison.
/// Returns the resolved config and, unless dry-running, the summary.
pub fn cmd_ablate(opts: &AblateOptions) -> CliResult<(AblateConfig, Option<AblationSummary>)> {
    let mut cfg: AblateConfig = load_toml(&opts.config)?;
    cfg.dataset = relative_to(&opts.config, &cfg.dataset);
    cfg.output_dir = match &opts.output_dir {
        Some(d) => d.clone(),
        None => relative_to(&opts.config, &cfg.output_dir),
    };
    let methods = cfg.methods()?;
    if cfg.seeds.is_empty() {
        return Err(CliError::config("`seeds` is empty"));
    }
    if cfg.k_shot == 0 {
        return Err(CliError::config("k_shot must be at least 1"));
    }
    cfg.train.validate()?;
    let classes = cfg.train.segmenter.class_count;
    let partition = resolve_partition(cfg.partition.as_ref(), classes)?;
    if opts.dry_run {
        return Ok((cfg, None));
    }
    let data = load_dataset(&cfg.dataset, classes)?;

    let out = &cfg.output_dir;
    create_output_dir(out)?;
    let manifest = RunManifest {
        command: "ablate".into(),
        config_path: opts.config.clone(),
        seed: None,
        version: artifact_version(),
        output_dir: out.clone(),
        config: serde_json::to_value(&cfg).map_err(pixalign::Error::from)?,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    write_text(&out.join(CONFIG_FILE), &to_toml(&cfg)?)?;

    let runs_path = out.join(RUNS_LOG);
    let mut runs_log =
        BufWriter::new(File::create(&runs_path).map_err(|e| CliError::io(&runs_path, e))?);
    let mut log_error = None;
    let ablation = AblationData {
        source: &data.source,
        target_pool: &data.target,
        k: cfg.k_shot,
        partition: &partition,
        zero_union: cfg.zero_union,
    };
    let runs = run_ablation(
        &cfg.train,
        &methods,
        &cfg.seeds,
        &ablation,
        &mut |run: &AblationRun| {
            if opts.verbose {
                eprintln!(
                    "{} seed {}: mIoU {:.2}",
                    run.method,
                    run.seed,
                    100.0 * run.report.miou.unwrap_or(0.0)
                );
            }
            let line = serde_json::to_string(run).map_err(std::io::Error::from);
            if let Err(e) = line.and_then(|l| writeln!(runs_log, "{l}")) {
                log_error.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_error {
        return Err(CliError::io(&runs_path, e));
    }
    runs_log.flush().map_err(|e| CliError::io(&runs_path, e))?;

    let rows: Vec<AblationRow> = methods
        .iter()
        .filter_map(|&m| AblationRow::summarize(m, &runs))
        .collect();
    let verdicts = ordering_verdicts(&rows, &partition);
    let summary = AblationSummary { rows, verdicts };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_text(&out.join(TABLE_FILE), &render_table(&summary))?;
    Ok((cfg, Some(summary)))
}
