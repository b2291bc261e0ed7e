//! Config file schemas. Relative paths inside a config file are resolved
//! against the directory containing that file.

use std::fs;
use std::path::{Path, PathBuf};

use pixalign::data::ToySceneSpec;
use pixalign::eval::{ClassPartition, ZeroUnion};
use pixalign::trainer::{Method, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Input of `pixalign generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub n_source: usize,
    pub n_target: usize,
    #[serde(default = "one")]
    pub n_cities: usize,
    pub scene: ToySceneSpec,
}

/// Input of `pixalign train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Dataset directory as written by `pixalign generate`.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Target shots per city.
    #[serde(default = "one")]
    pub k_shot: usize,
    /// Start from this segmenter checkpoint instead of pretraining.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    /// Well/under-represented class split. Defaults to every class well.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<ClassPartition>,
    #[serde(default)]
    pub zero_union: ZeroUnion,
    #[serde(default)]
    pub train: TrainConfig,
}

/// Input of `pixalign ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub k_shot: usize,
    pub seeds: Vec<u64>,
    /// Defaults to the loss ablation followed by the component ablation.
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<ClassPartition>,
    #[serde(default)]
    pub zero_union: ZeroUnion,
    #[serde(default)]
    pub train: TrainConfig,
}

fn one() -> usize {
    1
}

fn default_variants() -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for m in Method::LOSS_ABLATION
        .into_iter()
        .chain(Method::COMPONENT_ABLATION)
    {
        if !names.iter().any(|n| n == m.name()) {
            names.push(m.name().to_string());
        }
    }
    names
}

impl AblateConfig {
    /// Parses the variant list, rejecting unknown and repeated names.
    pub fn methods(&self) -> CliResult<Vec<Method>> {
        let mut out: Vec<Method> = Vec::with_capacity(self.variants.len());
        for name in &self.variants {
            let m: Method = name.parse()?;
            if out.contains(&m) {
                return Err(CliError::config(format!(
                    "variant `{name}` is listed twice"
                )));
            }
            out.push(m);
        }
        if out.is_empty() {
            return Err(CliError::config("`variants` is empty"));
        }
        Ok(out)
    }
}

/// The partition to report with, checked against the class count.
pub fn resolve_partition(
    partition: Option<&ClassPartition>,
    classes: usize,
) -> CliResult<ClassPartition> {
    let p = partition.cloned().unwrap_or_else(|| ClassPartition {
        well: (0..classes).collect(),
        under: Vec::new(),
    });
    if let Some(c) = p.well.iter().chain(&p.under).find(|&&c| c >= classes) {
        return Err(CliError::config(format!(
            "partition names class {c} but there are {classes} classes"
        )));
    }
    Ok(p)
}

/// Reads and parses a TOML file.
pub fn load_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string_pretty(value)
        .map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
}

/// Resolves `p` against the directory of the config file it came from.
pub fn relative_to(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config_path.parent().unwrap_or(Path::new("")).join(p)
}
