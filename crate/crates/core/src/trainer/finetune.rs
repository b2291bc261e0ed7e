use super::common::{check_classes, check_finite, labels_at, Sampler};
use super::{IterationRecord, Losses, Observer, Phase, PhaseEvent, PhaseRecord, TrainConfig};
use crate::data::{image_batch, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::{focal_loss_logits_grad, kd_loss_grad, ClassMap};
use crate::models::{stack_class_maps, Segmenter};
use crate::nn::{poly_lr, Module, Sgd};
use crate::rng::{stream, Stream};

/// Fine-tunes a copy of `teacher` on the target shots for exactly
/// `kd_iterations` SGD steps, regularized towards the frozen teacher's
/// tempered predictions with weight `lambda_kd`. With `lambda_kd = 0` this is
/// plain target fine-tuning.
pub fn finetune_kd(
    config: &TrainConfig,
    teacher: &Segmenter,
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    config.validate()?;
    if target_kshot.is_empty() {
        return Err(Error::EmptyDataset("target shots".into()));
    }
    check_classes(target_kshot, teacher.class_count())?;
    let distill = config.lambda_kd != 0.0;
    let teacher_logits: Vec<ClassMap> = if distill {
        target_kshot
            .iter()
            .map(|t| teacher.segment(&t.image.data, t.image.height, t.image.width))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut student = teacher.clone();
    let mut sgd = Sgd::new(config.seg_optimizer);
    let mut rng = stream(config.seed, Stream::FinetuneBatches);
    let mut sampler = Sampler::new(target_kshot.len());
    let max_iter = config.kd_iterations;
    observer.phase(&PhaseRecord {
        phase: Phase::Finetune,
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
        let images: Vec<_> = idx.iter().map(|i| &target_kshot[*i].image).collect();
        let x = image_batch(&images)?;
        student.zero_grad();
        let (logits, tape) = student.forward_train(&x)?;
        let n = idx.len() as f64;
        let (mut focal_total, mut kd_total) = (0.0, 0.0);
        let mut grads = Vec::with_capacity(idx.len());
        for (s, &i) in idx.iter().enumerate() {
            let map = ClassMap::from_f32(
                logits.channels(),
                logits.height(),
                logits.width(),
                logits.sample(s),
            )?;
            let labels = labels_at(&target_kshot[i].labels, map.height(), map.width());
            let (f, mut g) = focal_loss_logits_grad(&map, &labels, config.focal)?;
            focal_total += f;
            if distill {
                let (k, gk) = kd_loss_grad(&teacher_logits[i], &map, config.tau)?;
                kd_total += k;
                for (a, b) in g.data_mut().iter_mut().zip(gk.data()) {
                    *a += config.lambda_kd * b;
                }
            }
            g.data_mut().iter_mut().for_each(|v| *v /= n);
            grads.push(g);
        }
        let focal = check_finite("fine-tune focal", focal_total / n)?;
        let kd = check_finite("distillation", kd_total / n)?;
        student.backward(&tape, &stack_class_maps(&grads));
        sgd.step(&mut student, lr);
        observer.iteration(&IterationRecord {
            phase: Phase::Finetune,
            iteration: it,
            seg_lr: lr,
            disc_lr: None,
            losses: Losses {
                target_focal: Some(focal),
                kd: distill.then_some(kd),
                ..Losses::default()
            },
        });
    }
    observer.phase(&PhaseRecord {
        phase: Phase::Finetune,
        event: PhaseEvent::End,
        iterations: max_iter,
    });
    Ok(student)
}
