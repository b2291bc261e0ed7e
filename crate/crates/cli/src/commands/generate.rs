use std::path::PathBuf;

use pixalign::data::{generate_toy_pair, save_dataset_dir, DatasetMeta, GeneratorInfo};

use crate::config::{load_toml, GenerateConfig};
use crate::error::CliResult;
use crate::run_dir::create_output_dir;

pub struct GenerateOptions {
    pub spec: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Renders the toy dataset described by a [`GenerateConfig`] file into a
/// new dataset directory.
pub fn cmd_generate(opts: &GenerateOptions) -> CliResult<DatasetMeta> {
    let mut cfg: GenerateConfig = load_toml(&opts.spec)?;
    if let Some(seed) = opts.seed {
        cfg.scene.seed = seed;
    }
    let (source, target) = generate_toy_pair(&cfg.scene, cfg.n_source, cfg.n_target, cfg.n_cities)?;
    create_output_dir(&opts.out)?;
    let info = GeneratorInfo {
        spec: cfg.scene.clone(),
        n_source: cfg.n_source,
        n_target: cfg.n_target,
        n_cities: cfg.n_cities,
    };
    Ok(save_dataset_dir(
        &opts.out,
        cfg.scene.class_count,
        Some(info),
        &source,
        &target,
    )?)
}
