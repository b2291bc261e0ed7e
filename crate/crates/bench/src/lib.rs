//! Input fixtures shared by the benchmarks.

use pixalign::data::Image;
use pixalign::losses::{ClassMap, LabelMap};
use pixalign::rng::{stream, Stream};
use pixalign::tensor::Tensor;
use rand::Rng;

pub fn random_logits(classes: usize, h: usize, w: usize, seed: u64) -> ClassMap {
    let mut rng = stream(seed, Stream::SegmenterInit);
    let data = (0..classes * h * w)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    ClassMap::new(classes, h, w, data).expect("valid shape")
}

pub fn random_labels(classes: usize, h: usize, w: usize, seed: u64) -> LabelMap {
    let mut rng = stream(seed, Stream::TargetScenes);
    let data = (0..h * w)
        .map(|_| rng.random_range(0..classes as u8))
        .collect();
    LabelMap::new(h, w, data, 255).expect("valid shape")
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = stream(seed, Stream::Scenes);
    Image::new(
        h,
        w,
        (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .expect("valid shape")
}

pub fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let images: Vec<Image> = (0..n as u64)
        .map(|i| random_image(h, w, seed + i))
        .collect();
    let samples: Vec<&[f32]> = images.iter().map(|i| i.data.as_slice()).collect();
    Tensor::stack(&samples, 3, h, w).expect("valid shape")
}
