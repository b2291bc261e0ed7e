//! Dataset directory layout:
//!
//! ```text
//! <dir>/meta.json        DatasetMeta
//! <dir>/images/<id>.png  8-bit RGB
//! <dir>/labels/<id>.png  8-bit single-channel class ids, 255 = ignore
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cityscapes::{read_labels, read_rgb};
use super::{LabeledImage, ToySceneSpec};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaEntry {
    pub id: String,
    pub split: Split,
    pub city: Option<String>,
}

/// Arguments the toy generator was called with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorInfo {
    pub spec: ToySceneSpec,
    pub n_source: usize,
    pub n_target: usize,
    pub n_cities: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub class_count: usize,
    pub ignore_index: u8,
    pub generator: Option<GeneratorInfo>,
    pub entries: Vec<MetaEntry>,
}

/// A dataset directory loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetDir {
    pub meta: DatasetMeta,
    pub source: Vec<LabeledImage>,
    pub target: Vec<LabeledImage>,
}

fn write_png(
    path: &Path,
    w: usize,
    h: usize,
    color: image::ExtendedColorType,
    bytes: &[u8],
) -> Result<()> {
    image::save_buffer(path, bytes, w as u32, h as u32, color).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
        && id != "..";
    if !ok {
        return Err(Error::invalid(
            "id",
            format!("`{id}` is not a safe file stem"),
        ));
    }
    Ok(())
}

/// Writes `source` and `target` into `dir`, creating it if needed.
pub fn save_dataset_dir(
    dir: &Path,
    class_count: usize,
    generator: Option<GeneratorInfo>,
    source: &[LabeledImage],
    target: &[LabeledImage],
) -> Result<DatasetMeta> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(source.len() + target.len());
    let tagged = source
        .iter()
        .map(|i| (Split::Source, i))
        .chain(target.iter().map(|i| (Split::Target, i)));
    for (split, item) in tagged {
        check_id(&item.id)?;
        let (h, w) = (item.image.height, item.image.width);
        let n = h * w;
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                rgb.push((item.image.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let file = format!("{}.png", item.id);
        write_png(
            &images.join(&file),
            w,
            h,
            image::ExtendedColorType::Rgb8,
            &rgb,
        )?;
        write_png(
            &labels.join(&file),
            w,
            h,
            image::ExtendedColorType::L8,
            item.labels.data(),
        )?;
        entries.push(MetaEntry {
            id: item.id.clone(),
            split,
            city: item.city.clone(),
        });
    }
    let ignore_index = source
        .iter()
        .chain(target)
        .map(|i| i.labels.ignore_index())
        .next()
        .unwrap_or(crate::losses::DEFAULT_IGNORE);
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        class_count,
        ignore_index,
        generator,
        entries,
    };
    let path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn load_dataset_dir(dir: &Path) -> Result<DatasetDir> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::invalid(
            "format_version",
            format!("dataset format {} is not supported", meta.format_version),
        ));
    }
    let (mut source, mut target) = (Vec::new(), Vec::new());
    for entry in &meta.entries {
        check_id(&entry.id)?;
        let file = format!("{}.png", entry.id);
        let image = read_rgb(&dir.join("images").join(&file))?;
        let label_path = dir.join("labels").join(&file);
        let labels = read_labels(&label_path)?;
        let labels = crate::losses::LabelMap::new(
            labels.height(),
            labels.width(),
            labels.data().to_vec(),
            meta.ignore_index,
        )?;
        if let Err(e) = labels.check_classes(meta.class_count) {
            return Err(Error::BadLabel {
                path: label_path,
                reason: e.to_string(),
            });
        }
        let item = LabeledImage::new(entry.id.clone(), image, labels, entry.city.clone())?;
        match entry.split {
            Split::Source => source.push(item),
            Split::Target => target.push(item),
        }
    }
    Ok(DatasetDir {
        meta,
        source,
        target,
    })
}
