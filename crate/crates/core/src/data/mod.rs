//! Labelled images, the K-shot protocol, the procedural toy domain pair and
//! Cityscapes-format ingestion.

mod cityscapes;
mod store;
mod toy;

pub use cityscapes::{city_from_stem, load_cityscapes_format};
pub use store::{
    load_dataset_dir, save_dataset_dir, DatasetDir, DatasetMeta, GeneratorInfo, MetaEntry, Split,
    META_FILE,
};
pub use toy::{generate_toy_pair, DomainShift, ToySceneSpec};

use std::collections::BTreeMap;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::losses::LabelMap;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Planar RGB image `(3, H, W)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Rounds every value to the nearest multiple of 1/255, as an 8-bit PNG
    /// would store it.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Image,
    pub labels: LabelMap,
    pub city: Option<String>,
}

impl LabeledImage {
    pub fn new(
        id: impl Into<String>,
        image: Image,
        labels: LabelMap,
        city: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        if (image.height, image.width) != (labels.height(), labels.width()) {
            return Err(Error::ShapeMismatch(format!(
                "{id}: image {}x{} vs labels {}x{}",
                image.height,
                image.width,
                labels.height(),
                labels.width()
            )));
        }
        Ok(Self {
            id,
            image,
            labels,
            city,
        })
    }
}

/// Stacks the images of `items` into an `(N, 3, H, W)` batch.
pub fn image_batch(items: &[&Image]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::EmptyDataset("batch".into()))?;
    let refs: Vec<&[f32]> = items.iter().map(|i| i.data.as_slice()).collect();
    Tensor::stack(&refs, 3, first.height, first.width)
}

/// Draws exactly `k` images per distinct city, uniformly without replacement.
///
/// Cities are visited in sorted order and each city's picks keep their
/// dataset order, so the result depends only on the dataset, `k` and `seed`.
pub fn kshot_select(dataset: &[LabeledImage], k: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in dataset.iter().enumerate() {
        let city = item
            .city
            .as_deref()
            .ok_or_else(|| Error::MissingCity(item.id.clone()))?;
        by_city.entry(city).or_default().push(i);
    }
    let mut rng = stream(seed, Stream::KShot);
    let mut out = Vec::with_capacity(k * by_city.len());
    for (city, members) in by_city {
        if members.len() < k {
            return Err(Error::NotEnoughImages {
                city: city.to_string(),
                available: members.len(),
                requested: k,
            });
        }
        let mut picks = index::sample(&mut rng, members.len(), k).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|p| dataset[members[p]].clone()));
    }
    Ok(out)
}
