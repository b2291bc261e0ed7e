use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ClassMap;
use crate::nn::{
    leaky_relu, leaky_relu_backward, upsample2, upsample2_backward, Conv2d, ConvCache, Module,
    Param,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub class_count: usize,
    pub base_channels: usize,
    /// Number of encoder resolution levels; each level below the first halves
    /// the resolution.
    pub depth: usize,
    /// Ratio of input to logit resolution: 1, 2 or 4.
    pub output_stride: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            class_count: 3,
            base_channels: 8,
            depth: 3,
            output_stride: 1,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 || self.class_count > 255 {
            return Err(Error::invalid(
                "segmenter.class_count",
                "must be in 2..=255",
            ));
        }
        if self.depth < 2 {
            return Err(Error::invalid("segmenter.depth", "must be at least 2"));
        }
        if self.base_channels == 0 {
            return Err(Error::invalid(
                "segmenter.base_channels",
                "must be positive",
            ));
        }
        if !matches!(self.output_stride, 1 | 2 | 4) || self.output_stride > self.downsampling() {
            return Err(Error::invalid(
                "segmenter.output_stride",
                format!("must be 1, 2 or 4 and at most {}", self.downsampling()),
            ));
        }
        Ok(())
    }

    /// Total downsampling at the deepest encoder level.
    pub fn downsampling(&self) -> usize {
        1 << (self.depth - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn output_level(&self) -> usize {
        self.output_stride.trailing_zeros() as usize
    }
}

/// Small U-shaped encoder-decoder: two 3×3 convolutions per level, stride-2
/// downsampling, nearest upsampling with skip concatenation, 1×1 class head.
#[derive(Clone, Debug)]
pub struct Segmenter {
    config: SegmenterConfig,
    encoder: Vec<[Conv2d; 2]>,
    decoder: Vec<Conv2d>,
    head: Conv2d,
}

struct EncoderTape {
    a_cache: ConvCache,
    a_out: Tensor,
    b_cache: ConvCache,
    b_out: Tensor,
}

struct DecoderTape {
    cache: ConvCache,
    out: Tensor,
    up_channels: usize,
}

/// Activations kept by a training forward pass.
pub struct SegmenterTape {
    encoder: Vec<EncoderTape>,
    decoder: Vec<DecoderTape>,
    head: ConvCache,
}

impl Segmenter {
    /// Fan-in scaled (He) initialization.
    pub fn new(config: SegmenterConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let he = |fan_in: usize| (2.0 / fan_in as f32).sqrt();
        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let out = config.channels(level);
            let (inp, stride) = if level == 0 {
                (3, 1)
            } else {
                (config.channels(level - 1), 2)
            };
            let a = Conv2d::new(
                &format!("enc{level}.a"),
                inp,
                out,
                3,
                stride,
                1,
                he(inp * 9),
                rng,
            );
            let b = Conv2d::new(
                &format!("enc{level}.b"),
                out,
                out,
                3,
                1,
                1,
                he(out * 9),
                rng,
            );
            encoder.push([a, b]);
        }
        let mut decoder = Vec::new();
        for level in (config.output_level() + 1..config.depth).rev() {
            let inp = config.channels(level) + config.channels(level - 1);
            let out = config.channels(level - 1);
            decoder.push(Conv2d::new(
                &format!("dec{level}"),
                inp,
                out,
                3,
                1,
                1,
                he(inp * 9),
                rng,
            ));
        }
        let top = config.channels(config.output_level());
        let head = Conv2d::new(
            "head",
            top,
            config.class_count,
            1,
            1,
            0,
            (1.0 / top as f32).sqrt(),
            rng,
        );
        Ok(Self {
            config,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.channels() != 3 {
            return Err(Error::NotRgb(x.channels()));
        }
        let m = self.config.downsampling();
        if !x.height().is_multiple_of(m) || !x.width().is_multiple_of(m) || x.height() == 0 || x.width() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} input must be a non-empty multiple of {m}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Logits `(N, C, H/os, W/os)` for a batch of RGB images in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for [a, b] in &self.encoder {
            h = leaky_relu(&a.forward(&h)?, 0.0);
            h = leaky_relu(&b.forward(&h)?, 0.0);
            skips.push(h.clone());
        }
        let mut level = self.config.depth - 1;
        for conv in &self.decoder {
            let cat = Tensor::concat_channels(&upsample2(&h), &skips[level - 1])?;
            h = leaky_relu(&conv.forward(&cat)?, 0.0);
            level -= 1;
        }
        self.head.forward(&h)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, SegmenterTape)> {
        self.check_input(x)?;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for [a, b] in &self.encoder {
            let (za, a_cache) = a.forward_train(&h)?;
            let a_out = leaky_relu(&za, 0.0);
            let (zb, b_cache) = b.forward_train(&a_out)?;
            let b_out = leaky_relu(&zb, 0.0);
            h = b_out.clone();
            encoder.push(EncoderTape {
                a_cache,
                a_out,
                b_cache,
                b_out,
            });
        }
        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut level = self.config.depth - 1;
        for conv in &self.decoder {
            let up = upsample2(&h);
            let up_channels = up.channels();
            let cat = Tensor::concat_channels(&up, &encoder[level - 1].b_out)?;
            let (z, cache) = conv.forward_train(&cat)?;
            h = leaky_relu(&z, 0.0);
            decoder.push(DecoderTape {
                cache,
                out: h.clone(),
                up_channels,
            });
            level -= 1;
        }
        let (logits, head) = self.head.forward_train(&h)?;
        Ok((
            logits,
            SegmenterTape {
                encoder,
                decoder,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients for `dlogits`. The image itself is
    /// never differentiated.
    pub fn backward(&mut self, tape: &SegmenterTape, dlogits: &Tensor) {
        let mut g = self
            .head
            .backward(&tape.head, dlogits, true)
            .expect("input grad");
        let depth = self.config.depth;
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        let mut level = depth - 1 - self.decoder.len();
        for (conv, t) in self.decoder.iter_mut().zip(&tape.decoder).rev() {
            let dz = leaky_relu_backward(&t.out, &g, 0.0);
            let dcat = conv.backward(&t.cache, &dz, true).expect("input grad");
            let (dup, dskip) = dcat.split_channels(t.up_channels);
            skip_grads[level] = Some(dskip);
            g = upsample2_backward(&dup);
            level += 1;
        }
        debug_assert_eq!(level, depth - 1);
        for (lvl, ([a, b], t)) in self.encoder.iter_mut().zip(&tape.encoder).enumerate().rev() {
            if lvl < depth - 1 {
                // g currently holds the gradient flowing down from level lvl + 1.
                if let Some(s) = skip_grads[lvl].take() {
                    g.add_assign(&s);
                }
            }
            let dzb = leaky_relu_backward(&t.b_out, &g, 0.0);
            let da = b.backward(&t.b_cache, &dzb, true).expect("input grad");
            let dza = leaky_relu_backward(&t.a_out, &da, 0.0);
            match a.backward(&t.a_cache, &dza, lvl > 0) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }

    /// Logits for one `(3, H, W)` image as an `f64` class map.
    pub fn segment(&self, image: &[f32], height: usize, width: usize) -> Result<ClassMap> {
        if image.len() != 3 * height * width {
            return Err(Error::NotRgb(image.len() / (height * width).max(1)));
        }
        let x = Tensor::from_vec([1, 3, height, width], image.to_vec())?;
        let y = self.forward(&x)?;
        ClassMap::from_f32(y.channels(), y.height(), y.width(), y.sample(0))
    }
}

impl Module for Segmenter {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for [a, b] in &self.encoder {
            a.visit(f);
            b.visit(f);
        }
        for c in &self.decoder {
            c.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for [a, b] in &mut self.encoder {
            a.visit_mut(f);
            b.visit_mut(f);
        }
        for c in &mut self.decoder {
            c.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}
