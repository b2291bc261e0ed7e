//! Three-phase training: source pretraining, adversarial adaptation with
//! source sample selection, and distillation fine-tuning on the few target
//! shots. The baselines and ablation variants are expressed as subsets of
//! these phases.

mod ablation;
mod adapt;
mod common;
mod finetune;
mod pretrain;
mod record;

pub use ablation::{median, run_ablation, AblationData, AblationRow, AblationRun};
pub use adapt::{train_adversarial, AdaptOptions, Adversary};
pub use finetune::finetune_kd;
pub use pretrain::pretrain_source;
pub use record::{
    IterationRecord, Losses, NullObserver, Observer, Phase, PhaseEvent, PhaseRecord, RunRecord,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::losses::{AdvWeighting, FocalParams};
use crate::models::{ImageDiscriminatorSpec, PixelDiscriminatorSpec, Segmenter, SegmenterConfig};
use crate::nn::{AdamConfig, SgdConfig};
use crate::sample_selection::DEFAULT_DELTA_MAX;
use crate::style_transfer::FdaParams;

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Weight of the adversarial term in the adaptation objective.
    pub lambda_adv: f64,
    /// Weight of the distillation term during fine-tuning.
    pub lambda_kd: f64,
    /// Teacher softmax temperature during fine-tuning.
    pub tau: f64,
    pub focal: FocalParams,
    /// Initial selection threshold; doubled after every epoch.
    pub delta0: f64,
    pub delta_max: f64,
    pub seg_optimizer: SgdConfig,
    pub disc_optimizer: AdamConfig,
    pub batch_size: usize,
    pub pretrain_iterations: usize,
    pub kd_iterations: usize,
    pub max_adv_epochs: usize,
    /// Fixed adaptation epoch length. When absent an epoch is one pass over
    /// the currently retained source images.
    pub iterations_per_epoch: Option<usize>,
    pub fda: FdaParams,
    pub segmenter: SegmenterConfig,
    pub pixel_discriminator: PixelDiscriminatorSpec,
    pub image_discriminator: ImageDiscriminatorSpec,
    /// Verify parameter isolation between the alternating updates after
    /// every step. Costs a few parameter hashes per iteration.
    pub check_invariants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda_adv: 0.1,
            lambda_kd: 0.5,
            tau: 0.5,
            focal: FocalParams::default(),
            delta0: 0.4,
            delta_max: DEFAULT_DELTA_MAX,
            seg_optimizer: SgdConfig::default(),
            disc_optimizer: AdamConfig::default(),
            batch_size: 4,
            pretrain_iterations: 1000,
            kd_iterations: 200,
            max_adv_epochs: 6,
            iterations_per_epoch: None,
            fda: FdaParams::default(),
            segmenter: SegmenterConfig::default(),
            pixel_discriminator: PixelDiscriminatorSpec::default(),
            image_discriminator: ImageDiscriminatorSpec::default(),
            check_invariants: false,
        }
    }
}

fn check_rate(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(
            name,
            format!("{v} must be a finite non-negative number"),
        ));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_rate("lambda_adv", self.lambda_adv)?;
        check_rate("lambda_kd", self.lambda_kd)?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(
                "tau",
                format!("{} must be positive", self.tau),
            ));
        }
        self.focal.validate()?;
        if !(self.delta0 > 0.0 && self.delta0 <= self.delta_max && self.delta_max <= 1.0) {
            return Err(Error::invalid(
                "delta0",
                "need 0 < delta0 <= delta_max <= 1",
            ));
        }
        let s = &self.seg_optimizer;
        check_rate("seg_optimizer.lr", s.lr)?;
        check_rate("seg_optimizer.weight_decay", s.weight_decay)?;
        if !(0.0..1.0).contains(&s.momentum) {
            return Err(Error::invalid(
                "seg_optimizer.momentum",
                "must be in [0, 1)",
            ));
        }
        let d = &self.disc_optimizer;
        check_rate("disc_optimizer.lr", d.lr)?;
        if !(0.0..1.0).contains(&d.betas.0) || !(0.0..1.0).contains(&d.betas.1) {
            return Err(Error::invalid("disc_optimizer.betas", "must be in [0, 1)"));
        }
        for (name, p) in [
            ("seg_optimizer.poly_power", s.poly_power),
            ("disc_optimizer.poly_power", d.poly_power),
        ] {
            check_rate(name, p)?;
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.kd_iterations == 0 {
            return Err(Error::invalid("kd_iterations", "must be at least 1"));
        }
        if self.max_adv_epochs == 0 {
            return Err(Error::invalid("max_adv_epochs", "must be at least 1"));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::invalid(
                "iterations_per_epoch",
                "must be at least 1 when set",
            ));
        }
        self.fda.validate()?;
        self.segmenter.validate()
    }
}

/// What the adaptation phase does, if it runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pipeline {
    /// `None`: no adaptation phase at all.
    pub adapt: Option<AdaptOptions>,
    pub finetune: Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Finetune {
    None,
    /// Target-only focal loss.
    Naive,
    /// Target focal loss plus distillation from the frozen adapted model.
    Distill,
}

/// Named training recipes: the baselines and every ablation variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SourceOnly,
    #[serde(alias = "none")]
    JointTraining,
    FineTuning,
    #[serde(alias = "image_wise")]
    ImageWiseAdversarial,
    PixelWise,
    PixelB,
    PixelS,
    Pixadv,
    PixadvSelection,
    PixadvSelectionFinetune,
    Pixda,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::SourceOnly,
        Method::JointTraining,
        Method::FineTuning,
        Method::ImageWiseAdversarial,
        Method::PixelWise,
        Method::PixelB,
        Method::PixelS,
        Method::Pixadv,
        Method::PixadvSelection,
        Method::PixadvSelectionFinetune,
        Method::Pixda,
    ];

    /// Variants compared when choosing the adversarial loss.
    pub const LOSS_ABLATION: [Method; 6] = [
        Method::JointTraining,
        Method::ImageWiseAdversarial,
        Method::PixelWise,
        Method::PixelB,
        Method::PixelS,
        Method::Pixadv,
    ];

    /// Cumulative component additions on top of the weighted pixel loss.
    pub const COMPONENT_ABLATION: [Method; 4] = [
        Method::Pixadv,
        Method::PixadvSelection,
        Method::PixadvSelectionFinetune,
        Method::Pixda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::JointTraining => "joint_training",
            Method::FineTuning => "fine_tuning",
            Method::ImageWiseAdversarial => "image_wise_adversarial",
            Method::PixelWise => "pixel_wise",
            Method::PixelB => "pixel_b",
            Method::PixelS => "pixel_s",
            Method::Pixadv => "pixadv",
            Method::PixadvSelection => "pixadv_selection",
            Method::PixadvSelectionFinetune => "pixadv_selection_finetune",
            Method::Pixda => "pixda",
        }
    }

    pub fn pipeline(self) -> Pipeline {
        let adapt = |adversary, selection| {
            Some(AdaptOptions {
                adversary,
                selection,
            })
        };
        let pixel = |use_s, use_b| Adversary::Pixel(AdvWeighting { use_s, use_b });
        let (adapt, finetune) = match self {
            Method::SourceOnly => (None, Finetune::None),
            Method::FineTuning => (None, Finetune::Naive),
            Method::JointTraining => (adapt(Adversary::None, false), Finetune::None),
            Method::ImageWiseAdversarial => (adapt(Adversary::Image, false), Finetune::None),
            Method::PixelWise => (adapt(pixel(false, false), false), Finetune::None),
            Method::PixelB => (adapt(pixel(false, true), false), Finetune::None),
            Method::PixelS => (adapt(pixel(true, false), false), Finetune::None),
            Method::Pixadv => (adapt(pixel(true, true), false), Finetune::None),
            Method::PixadvSelection => (adapt(pixel(true, true), true), Finetune::None),
            Method::PixadvSelectionFinetune => (adapt(pixel(true, true), true), Finetune::Naive),
            Method::Pixda => (adapt(pixel(true, true), true), Finetune::Distill),
        };
        Pipeline { adapt, finetune }
    }

    fn valid_names() -> String {
        let mut names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        names.extend(["none", "image_wise"]);
        names.join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts every method name plus the aliases `none` (joint training)
    /// and `image_wise`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => return Ok(Method::JointTraining),
            "image_wise" => return Ok(Method::ImageWiseAdversarial),
            _ => {}
        }
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownVariant {
                what: "method",
                got: s.to_string(),
                valid: Method::valid_names(),
            })
    }
}

/// Runs everything `method` does after source pretraining, starting from
/// `pretrained`.
pub fn run_method(
    method: Method,
    config: &TrainConfig,
    pretrained: &Segmenter,
    source: &[LabeledImage],
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    let pipeline = method.pipeline();
    let adapted = match pipeline.adapt {
        Some(opts) => train_adversarial(config, opts, pretrained, source, target_kshot, observer)?,
        None => pretrained.clone(),
    };
    run_finetune(config, pipeline.finetune, adapted, target_kshot, observer)
}

/// Applies the fine-tuning stage of a pipeline to an adapted model.
pub fn run_finetune(
    config: &TrainConfig,
    finetune: Finetune,
    adapted: Segmenter,
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    match finetune {
        Finetune::None => Ok(adapted),
        Finetune::Naive => finetune_kd(
            &TrainConfig {
                lambda_kd: 0.0,
                ..config.clone()
            },
            &adapted,
            target_kshot,
            observer,
        ),
        Finetune::Distill => finetune_kd(config, &adapted, target_kshot, observer),
    }
}

/// Baselines by name: `source_only`, `joint_training`, `fine_tuning` or
/// `image_wise_adversarial`.
pub fn run_baseline(
    kind: &str,
    config: &TrainConfig,
    source: &[LabeledImage],
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    const BASELINES: [Method; 4] = [
        Method::SourceOnly,
        Method::JointTraining,
        Method::FineTuning,
        Method::ImageWiseAdversarial,
    ];
    let method = BASELINES
        .into_iter()
        .find(|m| m.name() == kind)
        .ok_or_else(|| Error::UnknownVariant {
            what: "baseline",
            got: kind.to_string(),
            valid: BASELINES.map(Method::name).join(", "),
        })?;
    let pretrained = pretrain_source(config, source, observer)?;
    run_method(method, config, &pretrained, source, target_kshot, observer)
}

/// Full pipeline for `method`: pretraining followed by [`run_method`].
pub fn run_pipeline(
    method: Method,
    config: &TrainConfig,
    source: &[LabeledImage],
    target_kshot: &[LabeledImage],
    observer: &mut dyn Observer,
) -> Result<Segmenter> {
    let pretrained = pretrain_source(config, source, observer)?;
    run_method(method, config, &pretrained, source, target_kshot, observer)
}
