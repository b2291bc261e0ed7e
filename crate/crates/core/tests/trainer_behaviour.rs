//! End-to-end properties of the training phases on a tiny toy problem.

use pixalign::checkpoint::{decode_segmenter, encode_segmenter};
use pixalign::data::{generate_toy_pair, kshot_select, DomainShift, LabeledImage, ToySceneSpec};
use pixalign::losses::LabelMap;
use pixalign::models::{
    ImageDiscriminatorSpec, PixelDiscriminatorSpec, Segmenter, SegmenterConfig,
};
use pixalign::trainer::*;
use pixalign::Error;

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        batch_size: 2,
        pretrain_iterations: 6,
        kd_iterations: 3,
        max_adv_epochs: 2,
        iterations_per_epoch: Some(3),
        segmenter: SegmenterConfig {
            class_count: 3,
            base_channels: 4,
            depth: 2,
            output_stride: 1,
        },
        pixel_discriminator: PixelDiscriminatorSpec {
            channels: [8, 8, 1],
            ..PixelDiscriminatorSpec::default()
        },
        image_discriminator: ImageDiscriminatorSpec {
            channels: [4, 8, 8, 8, 1],
            ..ImageDiscriminatorSpec::default()
        },
        ..TrainConfig::default()
    };
    cfg.seg_optimizer.lr = 0.01;
    cfg
}

fn toy() -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let spec = ToySceneSpec {
        class_count: 3,
        class_frequency_targets: vec![0.7, 0.25, 0.05],
        rare_object_classes: vec![2],
        domain_shift: DomainShift {
            hue_shift: 0.2,
            noise_sigma: 0.05,
            horizon_tilt: 0.1,
        },
        image_size: [32, 32],
        seed: 1,
        rare_object_size: 4,
        source_outlier_fraction: 0.25,
    };
    let (source, target) = generate_toy_pair(&spec, 8, 6, 3).unwrap();
    (source, kshot_select(&target, 1, 0).unwrap())
}

fn bytes(seg: &Segmenter) -> Vec<u8> {
    encode_segmenter(seg, &serde_json::Value::Null).unwrap()
}

#[test]
fn zero_learning_rates_leave_parameters_untouched() {
    let (source, shots) = toy();
    let mut cfg = tiny_config();
    let pretrained = pretrain_source(&cfg, &source, &mut NullObserver).unwrap();
    cfg.seg_optimizer.lr = 0.0;
    cfg.disc_optimizer.lr = 0.0;
    for method in [Method::ImageWiseAdversarial, Method::Pixda] {
        let out = run_method(
            method,
            &cfg,
            &pretrained,
            &source,
            &shots,
            &mut NullObserver,
        )
        .unwrap();
        assert_eq!(bytes(&out), bytes(&pretrained), "{method}");
    }
}

#[test]
fn zero_adversarial_weight_reduces_to_joint_training() {
    let (source, shots) = toy();
    let cfg = TrainConfig {
        lambda_adv: 0.0,
        ..tiny_config()
    };
    let pretrained = pretrain_source(&cfg, &source, &mut NullObserver).unwrap();
    let joint = run_method(
        Method::JointTraining,
        &cfg,
        &pretrained,
        &source,
        &shots,
        &mut NullObserver,
    )
    .unwrap();
    for method in [
        Method::PixelWise,
        Method::Pixadv,
        Method::ImageWiseAdversarial,
    ] {
        let out = run_method(
            method,
            &cfg,
            &pretrained,
            &source,
            &shots,
            &mut NullObserver,
        )
        .unwrap();
        assert_eq!(bytes(&out), bytes(&joint), "{method}");
    }
}

#[test]
fn zero_distillation_weight_is_plain_fine_tuning() {
    let (source, shots) = toy();
    let cfg = TrainConfig {
        lambda_kd: 0.0,
        ..tiny_config()
    };
    let pretrained = pretrain_source(&cfg, &source, &mut NullObserver).unwrap();
    let teacher = run_method(
        Method::Pixadv,
        &cfg,
        &pretrained,
        &source,
        &shots,
        &mut NullObserver,
    )
    .unwrap();
    let distilled = finetune_kd(&cfg, &teacher, &shots, &mut NullObserver).unwrap();
    let naive = run_finetune(&cfg, Finetune::Naive, teacher, &shots, &mut NullObserver).unwrap();
    assert_eq!(bytes(&distilled), bytes(&naive));
}

#[test]
fn one_distillation_iteration_takes_one_step() {
    let (source, shots) = toy();
    let cfg = TrainConfig {
        kd_iterations: 1,
        ..tiny_config()
    };
    let teacher = pretrain_source(&cfg, &source, &mut NullObserver).unwrap();
    let mut record = RunRecord::default();
    let student = finetune_kd(&cfg, &teacher, &shots, &mut record).unwrap();
    let steps: Vec<_> = record.iterations_in(Phase::Finetune).collect();
    assert_eq!(steps.len(), 1);
    assert!(steps[0].losses.kd.is_some());
    assert_ne!(bytes(&student), bytes(&teacher));
}

#[test]
fn full_pipeline_holds_invariants_and_logs_every_phase() {
    let (source, shots) = toy();
    let cfg = TrainConfig {
        check_invariants: true,
        ..tiny_config()
    };
    let mut record = RunRecord::default();
    run_pipeline(Method::Pixda, &cfg, &source, &shots, &mut record).unwrap();
    assert_eq!(
        record.iterations_in(Phase::Pretrain).count(),
        cfg.pretrain_iterations
    );
    assert_eq!(
        record.iterations_in(Phase::Finetune).count(),
        cfg.kd_iterations
    );
    let adapt: Vec<_> = record.iterations_in(Phase::Adapt).collect();
    assert!(!adapt.is_empty() && adapt.len() <= 6);
    assert!(adapt
        .iter()
        .all(|r| r.losses.adversarial.is_some() && r.losses.pixel_disc.is_some()));
    let mut retained = source.len();
    for s in &record.selections {
        assert!(s.retained <= retained);
        retained = s.retained;
    }
    assert!(!record.selections.is_empty());
}

#[test]
fn one_class_target_trains() {
    let (source, mut shots) = toy();
    for s in &mut shots {
        s.labels = LabelMap::new(32, 32, vec![0; 32 * 32], 255).unwrap();
    }
    let seg = run_pipeline(
        Method::Pixda,
        &tiny_config(),
        &source,
        &shots,
        &mut NullObserver,
    )
    .unwrap();
    assert_eq!(seg.class_count(), 3);
}

#[test]
fn pretraining_reduces_the_source_loss() {
    let (source, _) = toy();
    let cfg = TrainConfig {
        pretrain_iterations: 60,
        ..tiny_config()
    };
    let mut record = RunRecord::default();
    pretrain_source(&cfg, &source, &mut record).unwrap();
    let losses: Vec<f64> = record
        .iterations
        .iter()
        .map(|r| r.losses.source_focal.unwrap())
        .collect();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "first {head} last {tail}");
}

#[test]
fn runs_are_seed_determined() {
    let (source, shots) = toy();
    let cfg = tiny_config();
    let a = run_pipeline(Method::Pixda, &cfg, &source, &shots, &mut NullObserver).unwrap();
    let b = run_pipeline(Method::Pixda, &cfg, &source, &shots, &mut NullObserver).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let c = run_pipeline(
        Method::Pixda,
        &TrainConfig { seed: 1, ..cfg },
        &source,
        &shots,
        &mut NullObserver,
    )
    .unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn checkpoints_round_trip() {
    let (source, shots) = toy();
    let seg = pretrain_source(&tiny_config(), &source, &mut NullObserver).unwrap();
    let meta = serde_json::json!({ "stage": "pretrained" });
    let (back, back_meta) = decode_segmenter(&encode_segmenter(&seg, &meta).unwrap()).unwrap();
    assert_eq!(back_meta, meta);
    let img = &shots[0].image;
    assert_eq!(
        seg.segment(&img.data, img.height, img.width).unwrap(),
        back.segment(&img.data, img.height, img.width).unwrap()
    );
    let mut truncated = encode_segmenter(&seg, &meta).unwrap();
    truncated.truncate(truncated.len() - 4);
    assert!(matches!(
        decode_segmenter(&truncated),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn baselines_dispatch_by_name() {
    let (source, shots) = toy();
    let cfg = tiny_config();
    let joint = run_baseline("joint_training", &cfg, &source, &shots, &mut NullObserver).unwrap();
    let direct = run_pipeline(
        Method::JointTraining,
        &cfg,
        &source,
        &shots,
        &mut NullObserver,
    )
    .unwrap();
    assert_eq!(bytes(&joint), bytes(&direct));
    let err = run_baseline("pixda", &cfg, &source, &shots, &mut NullObserver).unwrap_err();
    assert!(matches!(err, Error::UnknownVariant { .. }), "{err}");
}

#[test]
fn ablation_shares_work_and_reports_every_run() {
    let spec_source = toy().0;
    let spec = ToySceneSpec {
        class_count: 3,
        class_frequency_targets: vec![0.7, 0.25, 0.05],
        rare_object_classes: vec![2],
        domain_shift: DomainShift {
            hue_shift: 0.2,
            noise_sigma: 0.05,
            horizon_tilt: 0.1,
        },
        image_size: [32, 32],
        seed: 2,
        rare_object_size: 4,
        source_outlier_fraction: 0.0,
    };
    let (_, pool) = generate_toy_pair(&spec, 1, 6, 3).unwrap();
    let partition = pixalign::eval::ClassPartition {
        well: vec![0, 1],
        under: vec![2],
    };
    let data = AblationData {
        source: &spec_source,
        target_pool: &pool,
        k: 1,
        partition: &partition,
        zero_union: pixalign::eval::ZeroUnion::Exclude,
    };
    let methods = [Method::PixadvSelection, Method::Pixda];
    let mut seen = 0;
    let runs = run_ablation(&tiny_config(), &methods, &[0, 0], &data, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 4);
    let rows: Vec<AblationRow> = methods
        .iter()
        .map(|m| AblationRow::summarize(*m, &runs).unwrap())
        .collect();
    for row in &rows {
        assert_eq!(row.miou[0], row.miou[1], "{}", row.method);
    }
}
