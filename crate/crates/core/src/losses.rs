//! Segmentation, adversarial and distillation losses plus the per-pixel
//! weighting maps that modulate the pixel-wise adversarial term.
//!
//! Everything here is a pure function over `f64` maps. Functions with a
//! `_grad` suffix also return the gradient with respect to their
//! differentiable input; the weighting maps are plain values, so no gradient
//! can flow through them.
//!
//! Probabilities entering a logarithm are clamped to at least [`PROB_EPS`];
//! discriminator outputs are clamped to `[PROB_EPS, 1 - PROB_EPS]`. A clamped
//! entry contributes zero gradient.

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

/// Label value Cityscapes-format data uses for "not annotated".
pub const DEFAULT_IGNORE: u8 = 255;

/// Real-valued `(C, H, W)` map in channel-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    classes: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ClassMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a ({classes}, {height}, {width}) map",
                data.len()
            )));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn from_f32(classes: usize, height: usize, width: usize, data: &[f32]) -> Result<Self> {
        Self::new(
            classes,
            height,
            width,
            data.iter().map(|v| *v as f64).collect(),
        )
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, class: usize, pixel: usize) -> f64 {
        self.data[class * self.pixels() + pixel]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| *v as f32).collect()
    }

    /// Channel-wise softmax of `self / tau`.
    pub fn softmax_tempered(&self, tau: f64) -> ProbMap {
        let n = self.pixels();
        let mut out = vec![0.0; self.data.len()];
        for i in 0..n {
            let max = (0..self.classes)
                .map(|c| self.data[c * n + i] / tau)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..self.classes {
                let e = (self.data[c * n + i] / tau - max).exp();
                out[c * n + i] = e;
                z += e;
            }
            for c in 0..self.classes {
                out[c * n + i] /= z;
            }
        }
        ProbMap(self.with_data(out))
    }

    pub fn softmax(&self) -> ProbMap {
        self.softmax_tempered(1.0)
    }

    fn with_data(&self, data: Vec<f64>) -> ClassMap {
        debug_assert_eq!(data.len(), self.data.len());
        ClassMap {
            classes: self.classes,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Per-pixel argmax over classes (first maximum wins).
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.pixels();
        (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Per-pixel class distribution: entries in `[0, 1]`, each pixel sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap(ClassMap);

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let map = ClassMap::new(classes, height, width, data)?;
        let n = map.pixels();
        if let Some(v) = map.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("probs", format!("entry {v} outside [0, 1]")));
        }
        for i in 0..n {
            let s: f64 = (0..classes).map(|c| map.data[c * n + i]).sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::invalid("probs", format!("pixel {i} sums to {s}")));
            }
        }
        Ok(Self(map))
    }

    pub fn map(&self) -> &ClassMap {
        &self.0
    }
    pub fn classes(&self) -> usize {
        self.0.classes
    }
    pub fn height(&self) -> usize {
        self.0.height
    }
    pub fn width(&self) -> usize {
        self.0.width
    }
    pub fn pixels(&self) -> usize {
        self.0.pixels()
    }
    pub fn at(&self, class: usize, pixel: usize) -> f64 {
        self.0.at(class, pixel)
    }
    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    /// Pulls a gradient w.r.t. these probabilities back to the logits that
    /// produced them: `dz_c = p_c (g_c − Σ_k p_k g_k)`.
    pub fn softmax_backward(&self, dprobs: &ClassMap) -> ClassMap {
        let n = self.pixels();
        let c = self.classes();
        let p = &self.0.data;
        let g = &dprobs.data;
        let mut out = vec![0.0; p.len()];
        for i in 0..n {
            let dot: f64 = (0..c).map(|k| p[k * n + i] * g[k * n + i]).sum();
            for k in 0..c {
                out[k * n + i] = p[k * n + i] * (g[k * n + i] - dot);
            }
        }
        self.0.with_data(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
    ignore_index: u8,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>, ignore_index: u8) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            ignore_index,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.data.len()
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.data[pixel] != self.ignore_index
    }

    pub fn valid_count(&self) -> usize {
        self.data
            .iter()
            .filter(|l| **l != self.ignore_index)
            .count()
    }

    /// Checks that every non-ignore label indexes one of `classes` classes.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|l| **l != self.ignore_index && **l as usize >= classes)
        {
            Some(l) => Err(Error::invalid(
                "labels",
                format!("label {l} with {classes} classes"),
            )),
            None => Ok(()),
        }
    }
}

/// Real-valued `(H, W)` map.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SpatialMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_f32(height: usize, width: usize, data: &[f32]) -> Result<Self> {
        Self::new(height, width, data.iter().map(|v| *v as f64).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> usize {
        self.data.len()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| *v as f32).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpatialMap {
        SpatialMap {
            data: self.data.iter().map(|v| f(*v)).collect(),
            ..*self
        }
    }

    fn same_shape(&self, other: &SpatialMap, what: &str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Confidence (`s`) and imbalance (`b`) weights for the pixel-wise
/// adversarial term. Plain values: they never carry gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMaps {
    pub s: SpatialMap,
    pub b: SpatialMap,
}

impl WeightMaps {
    /// Product `s · b`, the effective per-pixel weight.
    pub fn combined(&self) -> Result<SpatialMap> {
        self.s.same_shape(&self.b, "weight maps")?;
        Ok(SpatialMap {
            data: self
                .s
                .data
                .iter()
                .zip(&self.b.data)
                .map(|(s, b)| s * b)
                .collect(),
            ..self.s
        })
    }
}

/// Which of the two weighting terms an adversarial variant uses. A disabled
/// term is replaced by one on annotated pixels (zero on ignored ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct AdvWeighting {
    pub use_s: bool,
    pub use_b: bool,
}

impl AdvWeighting {
    pub const PLAIN: Self = Self {
        use_s: false,
        use_b: false,
    };
    pub const FULL: Self = Self {
        use_s: true,
        use_b: true,
    };

    pub fn weight_maps(&self, probs: &ProbMap, labels: &LabelMap) -> Result<WeightMaps> {
        let mask = || {
            SpatialMap::new(
                labels.height,
                labels.width,
                labels
                    .data
                    .iter()
                    .map(|l| if *l == labels.ignore_index { 0.0 } else { 1.0 })
                    .collect(),
            )
        };
        let s = if self.use_s {
            s_map(probs, labels)?
        } else {
            mask()?
        };
        let b = if self.use_b { b_map(labels)? } else { mask()? };
        Ok(WeightMaps { s, b })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(
                "focal.alpha",
                format!("{} is not positive", self.alpha),
            ));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid(
                "focal.gamma",
                format!("{} is negative", self.gamma),
            ));
        }
        Ok(())
    }

    /// `alpha = 1, gamma = 0`: plain cross-entropy.
    pub const CROSS_ENTROPY: Self = Self {
        alpha: 1.0,
        gamma: 0.0,
    };
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
        }
    }
}

fn check_prob_labels(probs: &ProbMap, labels: &LabelMap) -> Result<()> {
    if (probs.height(), probs.width()) != (labels.height, labels.width) {
        return Err(Error::ShapeMismatch(format!(
            "probs {}x{} vs labels {}x{}",
            probs.height(),
            probs.width(),
            labels.height,
            labels.width
        )));
    }
    labels.check_classes(probs.classes())
}

fn log_floor(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0).ln()
}

fn clamp_disc(d: f64) -> f64 {
    d.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn in_disc_range(d: f64) -> bool {
    d > PROB_EPS && d < 1.0 - PROB_EPS
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss averaged over annotated pixels.
pub fn focal_loss(probs: &ProbMap, labels: &LabelMap, params: FocalParams) -> Result<f64> {
    focal_loss_grad(probs, labels, params).map(|(v, _)| v)
}

/// Focal loss and its gradient with respect to the probability entries.
pub fn focal_loss_grad(
    probs: &ProbMap,
    labels: &LabelMap,
    params: FocalParams,
) -> Result<(f64, ClassMap)> {
    check_prob_labels(probs, labels)?;
    params.validate()?;
    let valid = labels.valid_count();
    if valid == 0 {
        return Err(Error::EmptySupervision);
    }
    let n = probs.pixels();
    let norm = valid as f64;
    let FocalParams { alpha, gamma } = params;
    let mut grad = vec![0.0; probs.data().len()];
    let mut total = 0.0;
    for i in (0..n).filter(|i| labels.is_valid(*i)) {
        let y = labels.data[i] as usize;
        let p = probs.at(y, i);
        let log_p = log_floor(p);
        let q = 1.0 - p.min(1.0);
        total += -alpha * q.powf(gamma) * log_p;
        if p > PROB_EPS {
            let mut d = -q.powf(gamma) / p;
            if log_p != 0.0 && gamma != 0.0 {
                d += gamma * q.powf(gamma - 1.0) * log_p;
            }
            grad[y * n + i] = alpha * d / norm;
        }
    }
    let grad = ClassMap::new(probs.classes(), probs.height(), probs.width(), grad)?;
    Ok((total / norm, grad))
}

/// Focal loss with its gradient pulled back through the softmax to logits.
pub fn focal_loss_logits_grad(
    logits: &ClassMap,
    labels: &LabelMap,
    params: FocalParams,
) -> Result<(f64, ClassMap)> {
    let probs = logits.softmax();
    let (v, dp) = focal_loss_grad(&probs, labels, params)?;
    Ok((v, probs.softmax_backward(&dp)))
}

/// Confidence weight: `−ln p` of the true class; zero on ignored pixels.
pub fn s_map(probs: &ProbMap, labels: &LabelMap) -> Result<SpatialMap> {
    check_prob_labels(probs, labels)?;
    let data = (0..probs.pixels())
        .map(|i| {
            if labels.is_valid(i) {
                -log_floor(probs.at(labels.data[i] as usize, i))
            } else {
                0.0
            }
        })
        .collect();
    SpatialMap::new(labels.height, labels.width, data)
}

/// Imbalance weight: one minus the in-image frequency of the pixel's class,
/// counted over annotated pixels only; zero on ignored pixels.
pub fn b_map(labels: &LabelMap) -> Result<SpatialMap> {
    let valid = labels.valid_count();
    if valid == 0 {
        return Err(Error::EmptySupervision);
    }
    let mut counts = [0usize; 256];
    for l in labels.data.iter().filter(|l| **l != labels.ignore_index) {
        counts[*l as usize] += 1;
    }
    let data = labels
        .data
        .iter()
        .map(|l| {
            if *l == labels.ignore_index {
                0.0
            } else {
                1.0 - counts[*l as usize] as f64 / valid as f64
            }
        })
        .collect();
    SpatialMap::new(labels.height, labels.width, data)
}

/// Pixel-wise discriminator loss with source label 1, target label 0,
/// averaged over each map's pixels.
pub fn pixel_discriminator_loss(d_src: &SpatialMap, d_tgt: &SpatialMap) -> f64 {
    pixel_discriminator_loss_grad(d_src, d_tgt).0
}

/// Same as [`pixel_discriminator_loss`], with gradients w.r.t. both maps.
pub fn pixel_discriminator_loss_grad(
    d_src: &SpatialMap,
    d_tgt: &SpatialMap,
) -> (f64, SpatialMap, SpatialMap) {
    let ns = d_src.pixels() as f64;
    let nt = d_tgt.pixels() as f64;
    let src: f64 = d_src.data.iter().map(|d| -clamp_disc(*d).ln()).sum::<f64>() / ns;
    let tgt: f64 = d_tgt
        .data
        .iter()
        .map(|d| -(1.0 - clamp_disc(*d)).ln())
        .sum::<f64>()
        / nt;
    let g_src = d_src.map(|d| {
        if in_disc_range(d) {
            -1.0 / (d * ns)
        } else {
            0.0
        }
    });
    let g_tgt = d_tgt.map(|d| {
        if in_disc_range(d) {
            1.0 / ((1.0 - d) * nt)
        } else {
            0.0
        }
    });
    (src + tgt, g_src, g_tgt)
}

/// Discriminator loss evaluated on pre-sigmoid logits. Agrees with
/// [`pixel_discriminator_loss`] on `sigmoid(z)` away from saturation, and its
/// gradient never vanishes through clamping.
pub fn pixel_discriminator_loss_logits_grad(
    z_src: &SpatialMap,
    z_tgt: &SpatialMap,
) -> (f64, SpatialMap, SpatialMap) {
    let ns = z_src.pixels() as f64;
    let nt = z_tgt.pixels() as f64;
    let v = z_src.data.iter().map(|z| softplus(-z)).sum::<f64>() / ns
        + z_tgt.data.iter().map(|z| softplus(*z)).sum::<f64>() / nt;
    (
        v,
        z_src.map(|z| (sigmoid(z) - 1.0) / ns),
        z_tgt.map(|z| sigmoid(z) / nt),
    )
}

/// Weighted pixel-wise adversarial loss on target predictions.
pub fn pixadv_loss(d_tgt: &SpatialMap, weights: &WeightMaps) -> Result<f64> {
    pixadv_loss_grad(d_tgt, weights).map(|(v, _)| v)
}

/// Value and gradient w.r.t. `d_tgt`; the weights are treated as constants.
pub fn pixadv_loss_grad(d_tgt: &SpatialMap, weights: &WeightMaps) -> Result<(f64, SpatialMap)> {
    let w = weights.combined()?;
    d_tgt.same_shape(&w, "pixadv")?;
    let n = d_tgt.pixels() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; d_tgt.pixels()];
    for ((d, w), g) in d_tgt.data.iter().zip(&w.data).zip(&mut grad) {
        if *w == 0.0 {
            continue;
        }
        value -= w * clamp_disc(*d).ln();
        if in_disc_range(*d) {
            *g = -w / (d * n);
        }
    }
    Ok((value / n, SpatialMap { data: grad, ..w }))
}

/// [`pixadv_loss`] on pre-sigmoid logits: `−(1/|I|) Σ w ln σ(z)`.
pub fn pixadv_loss_logits_grad(
    z_tgt: &SpatialMap,
    weights: &WeightMaps,
) -> Result<(f64, SpatialMap)> {
    let w = weights.combined()?;
    z_tgt.same_shape(&w, "pixadv")?;
    let n = z_tgt.pixels() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; z_tgt.pixels()];
    for ((z, w), g) in z_tgt.data.iter().zip(&w.data).zip(&mut grad) {
        value += w * softplus(-z);
        *g = -w * (1.0 - sigmoid(*z)) / n;
    }
    Ok((value / n, SpatialMap { data: grad, ..w }))
}

/// Image-wise discriminator loss on two scalar outputs.
pub fn global_discriminator_loss(dg_src: f64, dg_tgt: f64) -> f64 {
    global_discriminator_loss_grad(dg_src, dg_tgt).0
}

pub fn global_discriminator_loss_grad(dg_src: f64, dg_tgt: f64) -> (f64, f64, f64) {
    let v = -clamp_disc(dg_src).ln() - (1.0 - clamp_disc(dg_tgt)).ln();
    let gs = if in_disc_range(dg_src) {
        -1.0 / dg_src
    } else {
        0.0
    };
    let gt = if in_disc_range(dg_tgt) {
        1.0 / (1.0 - dg_tgt)
    } else {
        0.0
    };
    (v, gs, gt)
}

/// Logit-domain counterpart of [`global_discriminator_loss_grad`].
pub fn global_discriminator_loss_logits_grad(z_src: f64, z_tgt: f64) -> (f64, f64, f64) {
    (
        softplus(-z_src) + softplus(z_tgt),
        sigmoid(z_src) - 1.0,
        sigmoid(z_tgt),
    )
}

/// Unweighted image-level adversarial term `−ln σ(z)` for a target image and
/// its gradient w.r.t. the logit.
pub fn image_adv_loss_logits_grad(z_tgt: f64) -> (f64, f64) {
    (softplus(-z_tgt), sigmoid(z_tgt) - 1.0)
}

/// Distillation loss: cross-entropy of the student's softmax against the
/// teacher's softmax at temperature `tau`, averaged over pixels. Only the
/// teacher is tempered.
pub fn kd_loss(teacher_logits: &ClassMap, student_logits: &ClassMap, tau: f64) -> Result<f64> {
    kd_loss_grad(teacher_logits, student_logits, tau).map(|(v, _)| v)
}

/// [`kd_loss`] with the gradient w.r.t. the student logits. The teacher
/// receives no gradient.
pub fn kd_loss_grad(
    teacher_logits: &ClassMap,
    student_logits: &ClassMap,
    tau: f64,
) -> Result<(f64, ClassMap)> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", format!("{tau} is not positive")));
    }
    if (
        teacher_logits.classes,
        teacher_logits.height,
        teacher_logits.width,
    ) != (
        student_logits.classes,
        student_logits.height,
        student_logits.width,
    ) {
        return Err(Error::ShapeMismatch(
            "teacher and student logits differ".into(),
        ));
    }
    let q = teacher_logits.softmax_tempered(tau);
    let p = student_logits.softmax();
    let n = student_logits.pixels();
    let c = student_logits.classes;
    let s = &student_logits.data;
    let mut value = 0.0;
    for i in 0..n {
        let max = (0..c)
            .map(|k| s[k * n + i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..c).map(|k| (s[k * n + i] - max).exp()).sum::<f64>().ln();
        for k in 0..c {
            value -= q.at(k, i) * (s[k * n + i] - lse);
        }
    }
    let grad = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(pk, qk)| (pk - qk) / n as f64)
        .collect();
    Ok((
        value / n as f64,
        ClassMap::new(c, student_logits.height, student_logits.width, grad)?,
    ))
}

/// One target image's inputs to the adaptation objective.
pub struct TargetTerms<'a> {
    pub probs: &'a ProbMap,
    pub labels: &'a LabelMap,
    /// Pixel discriminator output on this image's prediction.
    pub d_tgt: &'a SpatialMap,
}

/// Adaptation-phase segmenter objective: mean source focal loss + mean target
/// focal loss + `lambda_adv` × mean weighted pixel-wise adversarial loss.
pub fn phase2_total_loss(
    source: &[(&ProbMap, &LabelMap)],
    target: &[TargetTerms<'_>],
    weighting: AdvWeighting,
    focal: FocalParams,
    lambda_adv: f64,
) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::SelectionExhausted);
    }
    if target.is_empty() {
        return Err(Error::EmptyDataset("target batch".into()));
    }
    let mut src = 0.0;
    for (p, l) in source {
        src += focal_loss(p, l, focal)?;
    }
    let (mut tgt, mut adv) = (0.0, 0.0);
    for t in target {
        tgt += focal_loss(t.probs, t.labels, focal)?;
        if lambda_adv != 0.0 {
            let w = weighting.weight_maps(t.probs, t.labels)?;
            adv += pixadv_loss(t.d_tgt, &w)?;
        }
    }
    let nt = target.len() as f64;
    Ok(src / source.len() as f64 + tgt / nt + lambda_adv * adv / nt)
}

/// One target image's inputs to the fine-tuning objective.
pub struct DistillTerms<'a> {
    pub labels: &'a LabelMap,
    pub teacher_logits: &'a ClassMap,
    pub student_logits: &'a ClassMap,
}

/// Fine-tuning objective: mean target focal loss of the student +
/// `lambda_kd` × mean distillation loss against the frozen teacher.
pub fn finetune_total_loss(
    batch: &[DistillTerms<'_>],
    focal: FocalParams,
    lambda_kd: f64,
    tau: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("target batch".into()));
    }
    let mut total = 0.0;
    for t in batch {
        total += focal_loss(&t.student_logits.softmax(), t.labels, focal)?;
        if lambda_kd != 0.0 {
            total += lambda_kd * kd_loss(t.teacher_logits, t.student_logits, tau)?;
        }
    }
    Ok(total / batch.len() as f64)
}
