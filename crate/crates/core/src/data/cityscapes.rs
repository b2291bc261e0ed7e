use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{Image, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::{LabelMap, DEFAULT_IGNORE};

const IMAGE_SUFFIX: &str = "_leftImg8bit";
const LABEL_SUFFIXES: [&str; 2] = ["_gtFine_labelTrainIds", "_labelTrainIds"];

/// City of a `city_sequence_frame` stem, or `None` when the stem does not
/// follow that convention.
pub fn city_from_stem(stem: &str) -> Option<String> {
    let parts: Vec<&str> = stem.split('_').collect();
    (parts.len() >= 3 && !parts[0].is_empty()).then(|| parts[0].to_string())
}

fn png_stems(dir: &Path, suffixes: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(
                path,
                e.into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("directory loop")),
            )
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("png")
        {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let key = suffixes
            .iter()
            .find_map(|s| stem.strip_suffix(s))
            .unwrap_or(stem)
            .to_string();
        out.insert(key, path.to_path_buf());
    }
    Ok(out)
}

pub(crate) fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Image::new(h, w, data)
}

pub(crate) fn read_labels(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let image::DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::BadLabel {
            path: path.to_path_buf(),
            reason: format!(
                "expected a single-channel 8-bit PNG, found {:?}",
                img.color()
            ),
        });
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    LabelMap::new(h, w, gray.into_raw(), DEFAULT_IGNORE)
}

/// Loads `*_leftImg8bit.png` images and `*_gtFine_labelTrainIds.png` train-id
/// labels, pairing them by stem. Both directories are searched recursively.
/// Label value 255 marks unannotated pixels.
pub fn load_cityscapes_format(image_dir: &Path, label_dir: &Path) -> Result<Vec<LabeledImage>> {
    for dir in [image_dir, label_dir] {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            ));
        }
    }
    let images = png_stems(image_dir, &[IMAGE_SUFFIX])?;
    let labels = png_stems(label_dir, &LABEL_SUFFIXES)?;
    let mut out = Vec::with_capacity(images.len());
    for (stem, image_path) in images {
        let label_path = labels
            .get(&stem)
            .ok_or_else(|| Error::UnmatchedStem(stem.clone()))?;
        let image = read_rgb(&image_path)?;
        let labels = read_labels(label_path)?;
        if (labels.height(), labels.width()) != (image.height, image.width) {
            return Err(Error::BadLabel {
                path: label_path.clone(),
                reason: format!(
                    "{}x{} labels for a {}x{} image",
                    labels.height(),
                    labels.width(),
                    image.height,
                    image.width
                ),
            });
        }
        let city = city_from_stem(&stem);
        out.push(LabeledImage::new(stem, image, labels, city)?);
    }
    Ok(out)
}
