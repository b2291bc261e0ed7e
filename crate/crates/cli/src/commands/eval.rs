use std::path::PathBuf;

use pixalign::checkpoint::load_segmenter;
use pixalign::data::Split;
use pixalign::eval::{evaluate, iou_chart_svg, ClassPartition, MetricsReport, ZeroUnion};

use super::load_dataset;
use crate::config::{load_toml, resolve_partition};
use crate::error::{CliError, CliResult};
use crate::run_dir::{create_output_dir, write_json, write_text, CHART_FILE, REPORT_FILE};

pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// TOML file with `well` and `under` class lists.
    pub partition: Option<PathBuf>,
    pub split: Split,
    pub zero_union: ZeroUnion,
    /// Directory for `report.json` and `iou.svg`.
    pub out: Option<PathBuf>,
}

/// Scores a segmenter checkpoint on one split of a dataset directory.
pub fn cmd_eval(opts: &EvalOptions) -> CliResult<MetricsReport> {
    let partition: Option<ClassPartition> = opts.partition.as_deref().map(load_toml).transpose()?;
    let (seg, _) = load_segmenter(&opts.checkpoint)?;
    let classes = seg.class_count();
    let partition = resolve_partition(partition.as_ref(), classes)?;
    let data = load_dataset(&opts.dataset, classes).map_err(|e| CliError::data(e.message))?;
    let items = match opts.split {
        Split::Source => &data.source,
        Split::Target => &data.target,
    };
    let report = evaluate(&seg, items, &partition, opts.zero_union)?;
    if let Some(out) = &opts.out {
        create_output_dir(out)?;
        write_json(&out.join(REPORT_FILE), &report)?;
        write_text(&out.join(CHART_FILE), &iou_chart_svg(&report, None))?;
    }
    Ok(report)
}
