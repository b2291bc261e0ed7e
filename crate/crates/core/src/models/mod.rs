//! Segmentation network and the two domain discriminators.
//!
//! Both discriminators read the segmenter's softmax output, so their input
//! channel count equals the class count.

mod discriminator;
mod segmenter;

pub use discriminator::{
    DiscTape, ImageDiscriminator, ImageDiscriminatorSpec, PixelDiscriminator,
    PixelDiscriminatorSpec,
};
pub use segmenter::{Segmenter, SegmenterConfig, SegmenterTape};

use crate::losses::ClassMap;
use crate::tensor::Tensor;

/// Channel-wise softmax of a logits batch, in `f32`.
pub fn softmax_channels(logits: &Tensor) -> Tensor {
    let [n, c, h, w] = logits.shape();
    let hw = h * w;
    let mut out = logits.clone();
    for s in 0..n {
        let x = out.sample_mut(s);
        for i in 0..hw {
            let max = (0..c)
                .map(|k| x[k * hw + i])
                .fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for k in 0..c {
                let e = (x[k * hw + i] - max).exp();
                x[k * hw + i] = e;
                z += e;
            }
            for k in 0..c {
                x[k * hw + i] /= z;
            }
        }
    }
    out
}

/// Per-sample `f64` class maps from a batch tensor.
pub fn class_maps(t: &Tensor) -> Vec<ClassMap> {
    (0..t.batch())
        .map(|i| {
            ClassMap::from_f32(t.channels(), t.height(), t.width(), t.sample(i)).expect("shape")
        })
        .collect()
}

/// Stacks per-sample `f64` class maps back into a batch tensor.
pub fn stack_class_maps(maps: &[ClassMap]) -> Tensor {
    let first = &maps[0];
    let data: Vec<Vec<f32>> = maps.iter().map(ClassMap::to_f32).collect();
    let refs: Vec<&[f32]> = data.iter().map(Vec::as_slice).collect();
    Tensor::stack(&refs, first.classes(), first.height(), first.width()).expect("uniform maps")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::losses::ProbMap;
    use crate::nn::Module;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn image(seed: u64, h: usize, w: usize) -> Tensor {
        let mut rng = stream(seed, Stream::Scenes);
        Tensor::from_vec(
            [1, 3, h, w],
            (0..3 * h * w).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    fn seg(seed: u64, os: usize) -> Segmenter {
        let cfg = SegmenterConfig {
            class_count: 4,
            base_channels: 4,
            depth: 3,
            output_stride: os,
        };
        Segmenter::new(cfg, &mut stream(seed, Stream::SegmenterInit)).unwrap()
    }

    #[test]
    fn segment_shapes_follow_output_stride() {
        let x = image(0, 32, 32);
        assert_eq!(seg(0, 1).forward(&x).unwrap().shape(), [1, 4, 32, 32]);
        assert_eq!(seg(0, 2).forward(&x).unwrap().shape(), [1, 4, 16, 16]);
        assert_eq!(seg(0, 4).forward(&x).unwrap().shape(), [1, 4, 8, 8]);
    }

    #[test]
    fn segment_rejects_non_rgb() {
        let x = Tensor::zeros([1, 4, 8, 8]);
        assert!(matches!(seg(0, 1).forward(&x), Err(Error::NotRgb(4))));
    }

    #[test]
    fn segmenter_is_deterministic_per_seed() {
        let x = image(5, 16, 16);
        let a = seg(9, 1).forward(&x).unwrap();
        let b = seg(9, 1).forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            seg(9, 1).forward(&x).unwrap(),
            seg(9, 1).forward(&x).unwrap()
        );
        assert_ne!(seg(10, 1).forward(&x).unwrap(), a);
    }

    #[test]
    fn segmenter_softmax_is_a_prob_map() {
        let logits = seg(1, 1).forward(&image(2, 16, 16)).unwrap();
        let p = softmax_channels(&logits);
        let data: Vec<f64> = p.sample(0).iter().map(|v| *v as f64).collect();
        assert!(ProbMap::new(4, 16, 16, data).is_ok());
    }

    #[test]
    fn segmenter_backward_matches_finite_differences() {
        for os in [1, 2] {
            let mut s = seg(3, os);
            let x = image(4, 8, 8);
            let (y, tape) = s.forward_train(&x).unwrap();
            let mut rng = stream(8, Stream::Batches);
            let r: Vec<f32> = (0..y.data().len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let dy = Tensor::from_vec(y.shape(), r.clone()).unwrap();
            s.backward(&tape, &dy);
            let loss = |m: &Segmenter| -> f64 {
                m.forward(&x)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| *a as f64 * *b as f64)
                    .sum()
            };
            let mut grads = Vec::new();
            s.visit(&mut |p| grads.push(p.grad.clone()));
            let mut checked = 0;
            for (pi, g) in grads.iter().enumerate() {
                let idx = (pi * 7) % g.len();
                let perturb = |delta: f32| {
                    let mut m = s.clone();
                    let mut k = 0;
                    m.visit_mut(&mut |p| {
                        if k == pi {
                            p.value[idx] += delta;
                        }
                        k += 1;
                    });
                    loss(&m)
                };
                let an = g[idx] as f64;
                // ReLU kinks near the evaluation point corrupt some step sizes
                // and f32 rounding corrupts the smallest; accept the best.
                let err = [1e-3f32, 3e-4, 1e-4]
                    .map(|h| ((perturb(h) - perturb(-h)) / (2.0 * h as f64) - an).abs())
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    err <= 2e-2 * an.abs() + 2e-3,
                    "os={os} param {pi}: err {err} on {an}"
                );
                checked += 1;
            }
            assert!(checked > 10);
        }
    }

    #[test]
    fn pixel_discriminator_preserves_size_and_zero_head_gives_half() {
        let mut rng = stream(0, Stream::PixelDiscInit);
        let mut d = PixelDiscriminator::new(3, PixelDiscriminatorSpec::default(), &mut rng);
        for (h, w) in [(3, 3), (16, 16), (5, 9)] {
            let y = d.forward(&Tensor::zeros([1, 3, h, w])).unwrap();
            assert_eq!((y.height(), y.width()), (h, w));
        }
        let last = d.final_layer_mut();
        last.weight.value.fill(0.0);
        last.bias.value.fill(0.0);
        let probs = ProbMap::new(3, 4, 4, vec![1.0 / 3.0; 48]).unwrap();
        let out = d.discriminate(&probs).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn image_discriminator_min_size_and_range() {
        let mut rng = stream(0, Stream::ImageDiscInit);
        let mut d = ImageDiscriminator::new(3, ImageDiscriminatorSpec::default(), &mut rng);
        assert_eq!(d.min_input(), 32);
        let small = ProbMap::new(3, 31, 40, vec![1.0 / 3.0; 3 * 31 * 40]).unwrap();
        let err = d.discriminate(&small).unwrap_err();
        assert!(err.to_string().contains("32"), "{err}");
        let probs = ProbMap::new(3, 32, 32, vec![1.0 / 3.0; 3 * 1024]).unwrap();
        let v = d.discriminate(&probs).unwrap();
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, d.clone().discriminate(&probs).unwrap());
        let last = d.final_layer_mut();
        last.weight.value.fill(0.0);
        last.bias.value.fill(0.0);
        assert_eq!(d.discriminate(&probs).unwrap(), 0.5);
    }

    #[test]
    fn discriminator_input_gradient_matches_finite_differences() {
        let spec = PixelDiscriminatorSpec {
            channels: [6, 5, 1],
            ..Default::default()
        };
        let mut d = PixelDiscriminator::new(2, spec, &mut stream(1, Stream::PixelDiscInit));
        d.visit_mut(&mut |p| p.value.iter_mut().for_each(|v| *v *= 20.0));
        let x = image(3, 4, 4);
        let x = Tensor::from_vec([1, 2, 4, 4], x.data()[..32].to_vec()).unwrap();
        let (y, tape) = d.forward_train(&x).unwrap();
        let ones = Tensor::from_vec(y.shape(), vec![1.0; y.data().len()]).unwrap();
        let dx = d.backward(&tape, &ones, true).unwrap();
        let f = |x: &Tensor| {
            d.forward(x)
                .unwrap()
                .data()
                .iter()
                .map(|v| *v as f64)
                .sum::<f64>()
        };
        for idx in [0, 9, 21, 31] {
            let h = 1e-3;
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h as f64);
            assert!(
                (fd - dx.data()[idx] as f64).abs() < 2e-2 * fd.abs().max(1.0),
                "{fd} vs {}",
                dx.data()[idx]
            );
        }
    }
}
