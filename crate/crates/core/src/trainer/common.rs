use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::eval::resize_nearest;
use crate::losses::{focal_loss_logits_grad, ClassMap, FocalParams, LabelMap};
use crate::models::stack_class_maps;
use crate::nn::Module;
use crate::tensor::Tensor;

/// Labels at the segmenter's logit resolution.
pub(crate) fn labels_at(labels: &LabelMap, height: usize, width: usize) -> LabelMap {
    if (labels.height(), labels.width()) == (height, width) {
        return labels.clone();
    }
    let data = resize_nearest(
        labels.data(),
        labels.height(),
        labels.width(),
        height,
        width,
    );
    LabelMap::new(height, width, data, labels.ignore_index()).expect("resized labels")
}

/// Mean focal loss over a batch and its gradient w.r.t. the logits batch.
pub(crate) fn focal_batch(
    logits: &Tensor,
    items: &[&LabeledImage],
    focal: FocalParams,
) -> Result<(f64, Tensor)> {
    let n = items.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let map = ClassMap::from_f32(
            logits.channels(),
            logits.height(),
            logits.width(),
            logits.sample(i),
        )?;
        let labels = labels_at(&item.labels, logits.height(), logits.width());
        let (v, mut g) = focal_loss_logits_grad(&map, &labels, focal)?;
        g.data_mut().iter_mut().for_each(|x| *x /= n);
        total += v;
        grads.push(g);
    }
    Ok((total / n, stack_class_maps(&grads)))
}

/// Pulls a gradient w.r.t. channel-softmax outputs back to the logits.
pub(crate) fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let [n, c, h, w] = probs.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(probs.shape());
    for s in 0..n {
        let (p, g) = (probs.sample(s), dprobs.sample(s));
        let o = out.sample_mut(s);
        for i in 0..hw {
            let dot: f32 = (0..c).map(|k| p[k * hw + i] * g[k * hw + i]).sum();
            for k in 0..c {
                o[k * hw + i] = p[k * hw + i] * (g[k * hw + i] - dot);
            }
        }
    }
    out
}

/// Yields batches from a shuffled index order, reshuffling whenever a pass
/// is exhausted.
pub(crate) struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub(crate) fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub(crate) fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("{what} loss is {v}")))
    }
}

/// Parameter fingerprint used by the isolation checks.
pub(crate) fn fingerprint(m: &impl Module) -> u64 {
    m.param_hash()
}

pub(crate) fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvariantViolated(what()))
    }
}

pub(crate) fn check_classes(items: &[LabeledImage], classes: usize) -> Result<()> {
    for item in items {
        item.labels
            .check_classes(classes)
            .map_err(|e| Error::BadLabel {
                path: item.id.clone().into(),
                reason: e.to_string(),
            })?;
    }
    Ok(())
}
