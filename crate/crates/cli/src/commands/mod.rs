mod ablate;
mod eval;
mod generate;
mod train;

pub use ablate::{
    cmd_ablate, ordering_verdicts, render_table, AblateOptions, AblationSummary, Verdict,
};
pub use eval::{cmd_eval, EvalOptions};
pub use generate::{cmd_generate, GenerateOptions};
pub use train::{cmd_train, RunReport, TrainOptions, TrainOutcome};

use std::path::Path;

use pixalign::data::{load_dataset_dir, DatasetDir};

use crate::error::{CliError, CliResult};

fn load_dataset(dir: &Path, class_count: usize) -> CliResult<DatasetDir> {
    let data = load_dataset_dir(dir)?;
    if data.meta.class_count != class_count {
        return Err(CliError::config(format!(
            "dataset {} has {} classes but the segmenter is configured for {class_count}",
            dir.display(),
            data.meta.class_count
        )));
    }
    Ok(data)
}
