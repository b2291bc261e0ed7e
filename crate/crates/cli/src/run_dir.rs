//! Files every command writes into its output directory.
//!
//! ```text
//! manifest.json        RunManifest, written before any training
//! config.toml          the resolved config
//! metrics.jsonl        one LogLine per optimizer step or phase boundary
//! selection_log.jsonl  one SelectionRecord per adaptation epoch
//! checkpoints/         segmenter checkpoints per stage
//! report.json          final evaluation
//! iou.svg              per-class IoU bar chart
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pixalign::sample_selection::SelectionRecord;
use pixalign::trainer::{IterationRecord, Observer, PhaseEvent, PhaseRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const SELECTION_LOG: &str = "selection_log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "report.json";
pub const CHART_FILE: &str = "iou.svg";

/// Version string recorded in manifests: `v<crate version>`, with
/// `-g<rev>` appended when `PIXALIGN_GIT_REV` was set at build time.
pub fn artifact_version() -> String {
    let base = concat!("v", env!("CARGO_PKG_VERSION"));
    match option_env!("PIXALIGN_GIT_REV") {
        Some(rev) if !rev.is_empty() => format!("{base}-g{rev}"),
        _ => base.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub seed: Option<u64>,
    pub version: String,
    pub output_dir: PathBuf,
    /// The fully resolved config, after overrides.
    pub config: serde_json::Value,
}

/// Creates `dir`, refusing to reuse a non-empty one.
pub fn create_output_dir(dir: &Path) -> CliResult<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() {
            return Err(CliError::config(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(pixalign::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// One line of `metrics.jsonl`.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine<'a> {
    Iteration(&'a IterationRecord),
    Phase(&'a PhaseRecord),
}

/// Streams training progress to the run directory's JSONL logs. Write
/// errors are held until [`JsonlLog::finish`].
pub struct JsonlLog {
    metrics: BufWriter<File>,
    selection: BufWriter<File>,
    error: Option<CliError>,
    verbose: bool,
}

impl JsonlLog {
    pub fn create(dir: &Path, verbose: bool) -> CliResult<Self> {
        let open = |name: &str| {
            let path = dir.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| CliError::io(&path, e))
        };
        Ok(Self {
            metrics: open(METRICS_LOG)?,
            selection: open(SELECTION_LOG)?,
            error: None,
            verbose,
        })
    }

    fn write<T: Serialize>(&mut self, to_selection: bool, value: &T) {
        if self.error.is_some() {
            return;
        }
        let (out, name) = if to_selection {
            (&mut self.selection, SELECTION_LOG)
        } else {
            (&mut self.metrics, METRICS_LOG)
        };
        let result = serde_json::to_writer(&mut *out, value)
            .map_err(std::io::Error::from)
            .and_then(|()| out.write_all(b"\n"));
        if let Err(e) = result {
            self.error = Some(CliError::io(Path::new(name), e));
        }
    }

    pub fn finish(mut self) -> CliResult<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.metrics
            .flush()
            .map_err(|e| CliError::io(Path::new(METRICS_LOG), e))?;
        self.selection
            .flush()
            .map_err(|e| CliError::io(Path::new(SELECTION_LOG), e))
    }
}

impl Observer for JsonlLog {
    fn iteration(&mut self, record: &IterationRecord) {
        self.write(false, &LogLine::Iteration(record));
    }

    fn selection(&mut self, record: &SelectionRecord) {
        if self.verbose {
            eprintln!(
                "selection epoch {}: delta {:.3}, kept {}, dropped {}",
                record.epoch,
                record.delta,
                record.retained,
                record.dropped_ids.len()
            );
        }
        self.write(true, record);
    }

    fn phase(&mut self, record: &PhaseRecord) {
        if self.verbose {
            let what = match record.event {
                PhaseEvent::Start => "started",
                PhaseEvent::End => "finished",
            };
            eprintln!(
                "{:?} {what} after {} iterations",
                record.phase, record.iterations
            );
        }
        self.write(false, &LogLine::Phase(record));
    }
}
