use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::common::{
    check_classes, check_finite, ensure, fingerprint, focal_batch, labels_at, softmax_backward,
    Sampler,
};
use super::{IterationRecord, Losses, Observer, Phase, PhaseEvent, PhaseRecord, TrainConfig};
use crate::data::{image_batch, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::{
    global_discriminator_loss_logits_grad, image_adv_loss_logits_grad, pixadv_loss_logits_grad,
    pixel_discriminator_loss_logits_grad, sigmoid, AdvWeighting, ProbMap, SpatialMap,
};
use crate::models::{softmax_channels, ImageDiscriminator, PixelDiscriminator, Segmenter};
use crate::nn::{poly_lr, Adam, Module, Sgd};
use crate::rng::{stream, Stream};
use crate::sample_selection::{select_epoch, SelectionState};
use crate::style_transfer::fda_translate;
use crate::tensor::Tensor;

/// Adversarial term used during adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Adversary {
    /// No adversarial term: joint supervised training on both domains.
    None,
    /// Unweighted image-level term through the image discriminator.
    Image,
    /// Pixel-level term through the pixel discriminator, weighted per pixel.
    Pixel(AdvWeighting),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AdaptOptions {
    pub adversary: Adversary,
    /// Prune the source set after every epoch with the image discriminator.
    pub selection: bool,
}

struct Discriminators {
    pixel: Option<(PixelDiscriminator, Adam)>,
    image: Option<(ImageDiscriminator, Adam)>,
}

impl Discriminators {
    fn hashes(&self) -> (Option<u64>, Option<u64>) {
        (
            self.pixel.as_ref().map(|(d, _)| fingerprint(d)),
            self.image.as_ref().map(|(d, _)| fingerprint(d)),
        )
    }
}

fn sample_logits(z: &Tensor, s: usize) -> Result<SpatialMap> {
    SpatialMap::from_f32(z.height(), z.width(), z.sample(s))
}

/// Adversarial adaptation from `init`.
///
/// Every iteration draws a batch of style-translated source images and a
/// batch of target shots, then (1) updates the pixel discriminator,
/// (2) updates the image discriminator, both on detached segmenter outputs,
/// and (3) updates the segmenter on source focal + target focal +
/// `lambda_adv` × adversarial loss against the freshly updated
/// discriminator. After every epoch the source set may be pruned.
/// Learning rates decay polynomially over `max_adv_epochs` epochs of the
/// initial length.
pub fn train_adversarial(
    config: &TrainConfig,
    opts: AdaptOptions,
    init: &Segmenter,
    source: &[LabeledImage],
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    config.validate()?;
    if target_kshot.is_empty() {
        return Err(Error::EmptyDataset("target shots".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptyDataset("source set".into()));
    }
    let classes = init.class_count();
    check_classes(source, classes)?;
    check_classes(target_kshot, classes)?;
    let seed = config.seed;
    let mut seg = init.clone();
    let mut sgd = Sgd::new(config.seg_optimizer);
    let mut discs = Discriminators {
        pixel: matches!(opts.adversary, Adversary::Pixel(_)).then(|| {
            let d = PixelDiscriminator::new(
                classes,
                config.pixel_discriminator,
                &mut stream(seed, Stream::PixelDiscInit),
            );
            (d, Adam::new(config.disc_optimizer))
        }),
        image: (opts.adversary == Adversary::Image || opts.selection).then(|| {
            let d = ImageDiscriminator::new(
                classes,
                config.image_discriminator,
                &mut stream(seed, Stream::ImageDiscInit),
            );
            (d, Adam::new(config.disc_optimizer))
        }),
    };
    let by_id: HashMap<&str, usize> = source
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    if by_id.len() != source.len() {
        return Err(Error::invalid("source", "image ids must be unique"));
    }
    let mut state = SelectionState::new(
        source.iter().map(|s| s.id.clone()).collect(),
        config.delta0,
        config.delta_max,
    )?;
    let epoch_len = |retained: usize| {
        config
            .iterations_per_epoch
            .unwrap_or(retained.div_ceil(config.batch_size))
    };
    let max_iter = config.max_adv_epochs * epoch_len(source.len());
    let mut batch_rng = stream(seed, Stream::Batches);
    let mut style_rng = stream(seed, Stream::StyleSampling);
    let mut tgt_sampler = Sampler::new(target_kshot.len());
    let weighting = match opts.adversary {
        Adversary::Pixel(w) => Some(w),
        _ => None,
    };
    let disc_lr0 = config.disc_optimizer.lr;
    let power = config.disc_optimizer.poly_power;
    let mut it = 0;
    observer.phase(&PhaseRecord {
        phase: Phase::Adapt,
        event: PhaseEvent::Start,
        iterations: 0,
    });

    for _epoch in 0..config.max_adv_epochs {
        if state.is_exhausted() {
            break;
        }
        // Style-translate the retained source images for this epoch.
        let retained: Vec<LabeledImage> = state
            .retained_ids()
            .iter()
            .map(|id| {
                let item = &source[by_id[id.as_str()]];
                let style = &target_kshot[style_rng.random_range(0..target_kshot.len())].image;
                Ok(LabeledImage {
                    image: fda_translate(&item.image, style, config.fda)?,
                    ..item.clone()
                })
            })
            .collect::<Result<_>>()?;
        let mut src_sampler = Sampler::new(retained.len());
        for _ in 0..epoch_len(retained.len()) {
            if it >= max_iter {
                break;
            }
            let seg_lr = poly_lr(
                config.seg_optimizer.lr,
                it,
                max_iter,
                config.seg_optimizer.poly_power,
            );
            let disc_lr = poly_lr(disc_lr0, it, max_iter, power);
            let src_items: Vec<&LabeledImage> = src_sampler
                .next_batch(config.batch_size, &mut batch_rng)
                .into_iter()
                .map(|i| &retained[i])
                .collect();
            let tgt_items: Vec<&LabeledImage> = tgt_sampler
                .next_batch(config.batch_size, &mut batch_rng)
                .into_iter()
                .map(|i| &target_kshot[i])
                .collect();
            let xs = image_batch(&src_items.iter().map(|i| &i.image).collect::<Vec<_>>())?;
            let xt = image_batch(&tgt_items.iter().map(|i| &i.image).collect::<Vec<_>>())?;
            seg.zero_grad();
            let (src_logits, src_tape) = seg.forward_train(&xs)?;
            let (tgt_logits, tgt_tape) = seg.forward_train(&xt)?;
            let src_probs = softmax_channels(&src_logits);
            let tgt_probs = softmax_channels(&tgt_logits);
            let mut losses = Losses::default();

            let seg_hash = config.check_invariants.then(|| fingerprint(&seg));
            if let Some((d, adam)) = discs.pixel.as_mut() {
                losses.pixel_disc =
                    Some(pixel_disc_step(d, adam, &src_probs, &tgt_probs, disc_lr)?);
            }
            if let Some((d, adam)) = discs.image.as_mut() {
                losses.image_disc =
                    Some(image_disc_step(d, adam, &src_probs, &tgt_probs, disc_lr)?);
            }
            if let Some(h) = seg_hash {
                ensure(fingerprint(&seg) == h, || {
                    format!("segmenter changed during discriminator step {it}")
                })?;
                ensure(seg.grads_are_zero(), || {
                    format!("discriminator loss reached the segmenter at step {it}")
                })?;
            }

            let disc_hashes = config.check_invariants.then(|| discs.hashes());
            let (src_focal, dsrc) = focal_batch(&src_logits, &src_items, config.focal)?;
            let (tgt_focal, mut dtgt) = focal_batch(&tgt_logits, &tgt_items, config.focal)?;
            losses.source_focal = Some(check_finite("source focal", src_focal)?);
            losses.target_focal = Some(check_finite("target focal", tgt_focal)?);
            if config.lambda_adv != 0.0 {
                let adv = match (opts.adversary, weighting) {
                    (Adversary::None, _) => None,
                    (Adversary::Pixel(_), Some(w)) => {
                        let (d, _) = discs.pixel.as_mut().expect("pixel discriminator");
                        Some(pixel_adv_grad(
                            d,
                            w,
                            &tgt_probs,
                            &tgt_items,
                            config.lambda_adv,
                            &mut dtgt,
                        )?)
                    }
                    _ => {
                        let (d, _) = discs.image.as_mut().expect("image discriminator");
                        Some(image_adv_grad(d, &tgt_probs, config.lambda_adv, &mut dtgt)?)
                    }
                };
                if let Some(a) = adv {
                    losses.adversarial = Some(check_finite("adversarial", a)?);
                }
            }
            seg.backward(&src_tape, &dsrc);
            seg.backward(&tgt_tape, &dtgt);
            sgd.step(&mut seg, seg_lr);
            if let Some(h) = disc_hashes {
                ensure(discs.hashes() == h, || {
                    format!("discriminator changed during segmenter step {it}")
                })?;
            }
            observer.iteration(&IterationRecord {
                phase: Phase::Adapt,
                iteration: it,
                seg_lr,
                disc_lr: (discs.pixel.is_some() || discs.image.is_some()).then_some(disc_lr),
                losses,
            });
            it += 1;
        }

        if opts.selection {
            let (d, _) = discs.image.as_ref().expect("image discriminator");
            let scores = score_sources(&seg, d, &retained)?;
            let (next, record) = select_epoch(&state, &scores)?;
            observer.selection(&record);
            state = next;
        }
    }
    observer.phase(&PhaseRecord {
        phase: Phase::Adapt,
        event: PhaseEvent::End,
        iterations: it,
    });
    Ok(seg)
}

/// Pixel discriminator step: source pixels labelled 1, target pixels 0,
/// each domain's loss averaged over its pixels, then over the batch.
fn pixel_disc_step(
    d: &mut PixelDiscriminator,
    adam: &mut Adam,
    src: &Tensor,
    tgt: &Tensor,
    lr: f64,
) -> Result<f64> {
    d.zero_grad();
    let (zs, ts) = d.forward_train(src)?;
    let (zt, tt) = d.forward_train(tgt)?;
    let n = src.batch().min(tgt.batch());
    let mut gs = Tensor::zeros(zs.shape());
    let mut gt = Tensor::zeros(zt.shape());
    let mut total = 0.0;
    for s in 0..n {
        let (v, a, b) =
            pixel_discriminator_loss_logits_grad(&sample_logits(&zs, s)?, &sample_logits(&zt, s)?);
        total += v;
        for (dst, v) in gs.sample_mut(s).iter_mut().zip(a.data()) {
            *dst = (*v / n as f64) as f32;
        }
        for (dst, v) in gt.sample_mut(s).iter_mut().zip(b.data()) {
            *dst = (*v / n as f64) as f32;
        }
    }
    d.backward(&ts, &gs, false);
    d.backward(&tt, &gt, false);
    adam.step(d, lr);
    check_finite("pixel discriminator", total / n as f64)
}

/// Image discriminator step on one scalar per image.
fn image_disc_step(
    d: &mut ImageDiscriminator,
    adam: &mut Adam,
    src: &Tensor,
    tgt: &Tensor,
    lr: f64,
) -> Result<f64> {
    d.zero_grad();
    let (zs, ts) = d.forward_train(src)?;
    let (zt, tt) = d.forward_train(tgt)?;
    let n = src.batch().min(tgt.batch());
    let mut gs = Tensor::zeros(zs.shape());
    let mut gt = Tensor::zeros(zt.shape());
    let mut total = 0.0;
    for s in 0..n {
        let (v, a, b) =
            global_discriminator_loss_logits_grad(zs.data()[s] as f64, zt.data()[s] as f64);
        total += v;
        gs.data_mut()[s] = (a / n as f64) as f32;
        gt.data_mut()[s] = (b / n as f64) as f32;
    }
    d.backward(&ts, &gs, false);
    d.backward(&tt, &gt, false);
    adam.step(d, lr);
    check_finite("image discriminator", total / n as f64)
}

/// Adds `lambda` × the weighted pixel-wise adversarial gradient to
/// `dlogits`; returns the mean loss. The weight maps are computed from the
/// current predictions and treated as constants.
fn pixel_adv_grad(
    d: &mut PixelDiscriminator,
    weighting: AdvWeighting,
    probs: &Tensor,
    items: &[&LabeledImage],
    lambda: f64,
    dlogits: &mut Tensor,
) -> Result<f64> {
    let (z, tape) = d.forward_train(probs)?;
    let n = items.len() as f64;
    let mut dz = Tensor::zeros(z.shape());
    let mut total = 0.0;
    for (s, item) in items.iter().enumerate() {
        let p: Vec<f64> = probs.sample(s).iter().map(|v| *v as f64).collect();
        let p = ProbMap::new(probs.channels(), probs.height(), probs.width(), p)?;
        let labels = labels_at(&item.labels, probs.height(), probs.width());
        let w = weighting.weight_maps(&p, &labels)?;
        let (v, g) = pixadv_loss_logits_grad(&sample_logits(&z, s)?, &w)?;
        total += v;
        for (dst, v) in dz.sample_mut(s).iter_mut().zip(g.data()) {
            *dst = (lambda * v / n) as f32;
        }
    }
    let dprobs = d.backward(&tape, &dz, true).expect("input gradient");
    dlogits.add_assign(&softmax_backward(probs, &dprobs));
    Ok(total / n)
}

/// Adds `lambda` × the image-level adversarial gradient to `dlogits`.
fn image_adv_grad(
    d: &mut ImageDiscriminator,
    probs: &Tensor,
    lambda: f64,
    dlogits: &mut Tensor,
) -> Result<f64> {
    let (z, tape) = d.forward_train(probs)?;
    let n = probs.batch() as f64;
    let mut dz = Tensor::zeros(z.shape());
    let mut total = 0.0;
    for s in 0..probs.batch() {
        let (v, g) = image_adv_loss_logits_grad(z.data()[s] as f64);
        total += v;
        dz.data_mut()[s] = (lambda * g / n) as f32;
    }
    let dprobs = d.backward(&tape, &dz, true).expect("input gradient");
    dlogits.add_assign(&softmax_backward(probs, &dprobs));
    Ok(total / n)
}

/// Image discriminator scores (probability of "source") for every retained,
/// style-translated source image.
fn score_sources(
    seg: &Segmenter,
    d: &ImageDiscriminator,
    retained: &[LabeledImage],
) -> Result<BTreeMap<String, f64>> {
    let mut scores = BTreeMap::new();
    for item in retained {
        let x = image_batch(&[&item.image])?;
        let z = d.forward(&softmax_channels(&seg.forward(&x)?))?;
        scores.insert(item.id.clone(), sigmoid(z.data()[0] as f64));
    }
    Ok(scores)
}
