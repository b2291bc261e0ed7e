use super::common::{check_classes, check_finite, focal_batch, Sampler};
use super::{IterationRecord, Losses, Observer, Phase, PhaseEvent, PhaseRecord, TrainConfig};
use crate::data::{image_batch, LabeledImage};
use crate::error::{Error, Result};
use crate::models::Segmenter;
use crate::nn::{poly_lr, Module, Sgd};
use crate::rng::{stream, Stream};

/// Trains a freshly initialized segmenter on the source set with the focal
/// loss for `pretrain_iterations` SGD steps.
pub fn pretrain_source(
    config: &TrainConfig,
    source: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset("source set".into()));
    }
    check_classes(source, config.segmenter.class_count)?;
    let mut seg = Segmenter::new(
        config.segmenter.clone(),
        &mut stream(config.seed, Stream::SegmenterInit),
    )?;
    let mut sgd = Sgd::new(config.seg_optimizer);
    let mut rng = stream(config.seed, Stream::PretrainBatches);
    let mut sampler = Sampler::new(source.len());
    let max_iter = config.pretrain_iterations;
    observer.phase(&PhaseRecord {
        phase: Phase::Pretrain,
        event: PhaseEvent::Start,
        iterations: 0,
    });
    for it in 0..max_iter {
        let lr = poly_lr(
            config.seg_optimizer.lr,
            it,
            max_iter,
            config.seg_optimizer.poly_power,
        );
        let idx = sampler.next_batch(config.batch_size, &mut rng);
        let items: Vec<&LabeledImage> = idx.iter().map(|i| &source[*i]).collect();
        let images: Vec<_> = items.iter().map(|i| &i.image).collect();
        let x = image_batch(&images)?;
        seg.zero_grad();
        let (logits, tape) = seg.forward_train(&x)?;
        let (loss, dlogits) = focal_batch(&logits, &items, config.focal)?;
        check_finite("pretrain focal", loss)?;
        seg.backward(&tape, &dlogits);
        sgd.step(&mut seg, lr);
        observer.iteration(&IterationRecord {
            phase: Phase::Pretrain,
            iteration: it,
            seg_lr: lr,
            disc_lr: None,
            losses: Losses {
                source_focal: Some(loss),
                ..Losses::default()
            },
        });
    }
    observer.phase(&PhaseRecord {
        phase: Phase::Pretrain,
        event: PhaseEvent::End,
        iterations: max_iter,
    });
    Ok(seg)
}
