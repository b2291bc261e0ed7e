#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pixalign::data::{DomainShift, ToySceneSpec};
use pixalign::eval::ClassPartition;
use pixalign::models::{ImageDiscriminatorSpec, PixelDiscriminatorSpec, SegmenterConfig};
use pixalign::trainer::{Method, TrainConfig};
use pixalign_cli::config::{to_toml, AblateConfig, GenerateConfig, RunConfig};

pub fn scene(weights: &[f64], rare: &[usize], seed: u64) -> ToySceneSpec {
    ToySceneSpec {
        class_count: weights.len(),
        class_frequency_targets: weights.to_vec(),
        rare_object_classes: rare.to_vec(),
        domain_shift: DomainShift {
            hue_shift: 0.15,
            noise_sigma: 0.05,
            horizon_tilt: 0.1,
        },
        image_size: [32, 32],
        seed,
        rare_object_size: 4,
        source_outlier_fraction: 0.25,
    }
}

pub fn tiny_train() -> TrainConfig {
    let mut cfg = TrainConfig {
        batch_size: 2,
        pretrain_iterations: 6,
        kd_iterations: 3,
        max_adv_epochs: 2,
        iterations_per_epoch: Some(3),
        segmenter: SegmenterConfig {
            class_count: 3,
            base_channels: 4,
            depth: 2,
            output_stride: 1,
        },
        pixel_discriminator: PixelDiscriminatorSpec {
            channels: [8, 8, 1],
            ..PixelDiscriminatorSpec::default()
        },
        image_discriminator: ImageDiscriminatorSpec {
            channels: [4, 8, 8, 8, 1],
            ..ImageDiscriminatorSpec::default()
        },
        ..TrainConfig::default()
    };
    cfg.seg_optimizer.lr = 0.01;
    cfg
}

pub fn rare_partition() -> ClassPartition {
    ClassPartition {
        well: vec![0, 1],
        under: vec![2],
    }
}

pub fn write_toml<T: serde::Serialize>(path: &Path, value: &T) -> PathBuf {
    fs::write(path, to_toml(value).unwrap()).unwrap();
    path.to_path_buf()
}

/// Writes a generate spec for a small 3-class toy pair (8 source, 6 target
/// over 3 cities) and renders it to `<root>/data` via the library.
pub fn tiny_dataset(root: &Path) -> PathBuf {
    let spec = write_toml(
        &root.join("scene.toml"),
        &GenerateConfig {
            n_source: 8,
            n_target: 6,
            n_cities: 3,
            scene: scene(&[0.7, 0.25, 0.05], &[2], 1),
        },
    );
    let out = root.join("data");
    pixalign_cli::commands::cmd_generate(&pixalign_cli::commands::GenerateOptions {
        spec,
        out: out.clone(),
        seed: None,
    })
    .unwrap();
    out
}

pub fn tiny_run_config(root: &Path, method: Method) -> PathBuf {
    write_toml(
        &root.join("run.toml"),
        &RunConfig {
            method,
            dataset: "data".into(),
            output_dir: "run".into(),
            k_shot: 1,
            pretrained: None,
            partition: Some(rare_partition()),
            zero_union: Default::default(),
            train: tiny_train(),
        },
    )
}

pub fn tiny_ablate_config(root: &Path, variants: &[&str], seeds: &[u64]) -> PathBuf {
    write_toml(
        &root.join("ablate.toml"),
        &AblateConfig {
            dataset: "data".into(),
            output_dir: "ablation".into(),
            k_shot: 1,
            seeds: seeds.to_vec(),
            variants: variants.iter().map(|v| v.to_string()).collect(),
            partition: Some(rare_partition()),
            zero_union: Default::default(),
            train: tiny_train(),
        },
    )
}

pub fn pixalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixalign"))
        .args(args)
        .output()
        .unwrap()
}

/// Relative path and contents of every file under `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
