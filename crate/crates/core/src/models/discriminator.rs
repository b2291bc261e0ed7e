use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{sigmoid, ProbMap, SpatialMap};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, Conv2d, ConvCache,
    Module, Param,
};
use crate::tensor::Tensor;

const INIT_STD: f32 = 0.02;

/// Fully convolutional per-pixel domain classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelDiscriminatorSpec {
    pub channels: [usize; 3],
    pub kernels: [usize; 3],
    pub strides: [usize; 3],
    pub paddings: [usize; 3],
    pub slope: f32,
}

impl Default for PixelDiscriminatorSpec {
    fn default() -> Self {
        Self {
            channels: [64, 128, 1],
            kernels: [3, 3, 1],
            strides: [1, 1, 1],
            paddings: [1, 1, 0],
            slope: 0.2,
        }
    }
}

/// Strided fully convolutional image-level domain classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageDiscriminatorSpec {
    pub channels: [usize; 5],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub slope: f32,
}

impl Default for ImageDiscriminatorSpec {
    fn default() -> Self {
        Self {
            channels: [64, 128, 256, 512, 1],
            kernel: 4,
            stride: 2,
            padding: 1,
            slope: 0.2,
        }
    }
}

impl ImageDiscriminatorSpec {
    /// Smallest square input for which every layer yields at least one pixel.
    pub fn min_input(&self) -> usize {
        let mut size = 1;
        for _ in 0..self.channels.len() {
            size = (size - 1) * self.stride + self.kernel - 2 * self.padding;
        }
        size
    }
}

struct LayerTape {
    cache: ConvCache,
    out: Tensor,
}

/// Activations kept by a discriminator's training forward pass.
pub struct DiscTape {
    layers: Vec<LayerTape>,
    pooled_from: Option<[usize; 4]>,
}

/// Convolution stack with leaky rectifiers between layers; shared by both
/// discriminators.
#[derive(Clone, Debug)]
struct ConvStack {
    layers: Vec<Conv2d>,
    slope: f32,
}

impl ConvStack {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i < last {
                h = leaky_relu(&h, self.slope);
            }
        }
        Ok(h)
    }

    fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerTape>)> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        let mut tape = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (z, cache) = l.forward_train(&h)?;
            h = if i < last {
                leaky_relu(&z, self.slope)
            } else {
                z
            };
            tape.push(LayerTape {
                cache,
                out: h.clone(),
            });
        }
        Ok((h, tape))
    }

    fn backward(&mut self, tape: &[LayerTape], dy: &Tensor, input_grad: bool) -> Option<Tensor> {
        let last = self.layers.len() - 1;
        let mut g = dy.clone();
        for (i, (l, t)) in self.layers.iter_mut().zip(tape).enumerate().rev() {
            if i < last {
                g = leaky_relu_backward(&t.out, &g, self.slope);
            }
            {
                let d = l.backward(&t.cache, &g, i > 0 || input_grad)?;
                g = d
            }
        }
        Some(g)
    }
}

/// Per-pixel source-vs-target classifier over segmentation probabilities.
#[derive(Clone, Debug)]
pub struct PixelDiscriminator {
    stack: ConvStack,
}

impl PixelDiscriminator {
    pub fn new(in_channels: usize, spec: PixelDiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(3);
        let mut inp = in_channels;
        for i in 0..3 {
            layers.push(Conv2d::new(
                &format!("pixel_disc.{i}"),
                inp,
                spec.channels[i],
                spec.kernels[i],
                spec.strides[i],
                spec.paddings[i],
                INIT_STD,
                rng,
            ));
            inp = spec.channels[i];
        }
        Self {
            stack: ConvStack {
                layers,
                slope: spec.slope,
            },
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stack.layers[0].in_channels
    }

    /// Pre-sigmoid logits, `(N, 1, H, W)`.
    pub fn forward(&self, probs: &Tensor) -> Result<Tensor> {
        self.stack.forward(probs)
    }

    pub fn forward_train(&self, probs: &Tensor) -> Result<(Tensor, DiscTape)> {
        let (y, layers) = self.stack.forward_train(probs)?;
        Ok((
            y,
            DiscTape {
                layers,
                pooled_from: None,
            },
        ))
    }

    /// Accumulates parameter gradients; returns d(loss)/d(input) if asked.
    pub fn backward(
        &mut self,
        tape: &DiscTape,
        dlogits: &Tensor,
        input_grad: bool,
    ) -> Option<Tensor> {
        self.stack.backward(&tape.layers, dlogits, input_grad)
    }

    /// Per-pixel probability that each pixel of `probs` comes from the source
    /// domain.
    pub fn discriminate(&self, probs: &ProbMap) -> Result<SpatialMap> {
        let x = Tensor::from_vec(
            [1, probs.classes(), probs.height(), probs.width()],
            probs.map().to_f32(),
        )?;
        let z = self.forward(&x)?;
        Ok(SpatialMap::from_f32(z.height(), z.width(), z.sample(0))?.map(sigmoid))
    }

    pub fn final_layer_mut(&mut self) -> &mut Conv2d {
        self.stack.layers.last_mut().expect("three layers")
    }
}

/// Image-level source-vs-target classifier. The last feature map is
/// global-average-pooled to a single logit.
#[derive(Clone, Debug)]
pub struct ImageDiscriminator {
    stack: ConvStack,
    min_input: usize,
}

impl ImageDiscriminator {
    pub fn new(in_channels: usize, spec: ImageDiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(spec.channels.len());
        let mut inp = in_channels;
        for (i, out) in spec.channels.iter().enumerate() {
            layers.push(Conv2d::new(
                &format!("image_disc.{i}"),
                inp,
                *out,
                spec.kernel,
                spec.stride,
                spec.padding,
                INIT_STD,
                rng,
            ));
            inp = *out;
        }
        Self {
            stack: ConvStack {
                layers,
                slope: spec.slope,
            },
            min_input: spec.min_input(),
        }
    }

    pub fn min_input(&self) -> usize {
        self.min_input
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.height() < self.min_input || x.width() < self.min_input {
            return Err(Error::InputTooSmall {
                got: x.height(),
                got_w: x.width(),
                min: self.min_input,
            });
        }
        Ok(())
    }

    /// One pre-sigmoid logit per sample, `(N, 1, 1, 1)`.
    pub fn forward(&self, probs: &Tensor) -> Result<Tensor> {
        self.check(probs)?;
        Ok(global_avg_pool(&self.stack.forward(probs)?))
    }

    pub fn forward_train(&self, probs: &Tensor) -> Result<(Tensor, DiscTape)> {
        self.check(probs)?;
        let (y, layers) = self.stack.forward_train(probs)?;
        let shape = y.shape();
        Ok((
            global_avg_pool(&y),
            DiscTape {
                layers,
                pooled_from: Some(shape),
            },
        ))
    }

    pub fn backward(
        &mut self,
        tape: &DiscTape,
        dlogits: &Tensor,
        input_grad: bool,
    ) -> Option<Tensor> {
        let shape = tape.pooled_from.expect("image discriminator tape");
        let dy = global_avg_pool_backward(dlogits, shape);
        self.stack.backward(&tape.layers, &dy, input_grad)
    }

    /// Probability that the image behind `probs` comes from the source domain.
    pub fn discriminate(&self, probs: &ProbMap) -> Result<f64> {
        let x = Tensor::from_vec(
            [1, probs.classes(), probs.height(), probs.width()],
            probs.map().to_f32(),
        )?;
        Ok(sigmoid(self.forward(&x)?.data()[0] as f64))
    }

    pub fn final_layer_mut(&mut self) -> &mut Conv2d {
        self.stack.layers.last_mut().expect("five layers")
    }
}

impl Module for PixelDiscriminator {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stack.layers.iter().for_each(|l| l.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stack.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

impl Module for ImageDiscriminator {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.stack.layers.iter().for_each(|l| l.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stack.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}
