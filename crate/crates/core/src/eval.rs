//! Confusion-matrix accumulation and IoU reporting.
//!
//! Means are computed in exact rational arithmetic and rounded to `f64` once,
//! so a report is independent of class order and summation order.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::losses::LabelMap;
use crate::models::Segmenter;

/// `C × C` pixel counts, rows indexed by truth, columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(Self {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "{} vs {} classes",
                self.classes, other.classes
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `(tp, fp, fn)` of class `c`.
    fn counts_of(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        (tp, col - tp, row - tp)
    }
}

/// Adds one image to `confusion`. Pixels whose truth is the ignore label are
/// skipped; a prediction may never contain the ignore label.
pub fn accumulate(
    confusion: &mut Confusion,
    prediction: &LabelMap,
    truth: &LabelMap,
) -> Result<()> {
    if (prediction.height(), prediction.width()) != (truth.height(), truth.width()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            prediction.height(),
            prediction.width(),
            truth.height(),
            truth.width()
        )));
    }
    let c = confusion.classes;
    if prediction.data().contains(&truth.ignore_index()) {
        return Err(Error::IgnoreInPrediction(truth.ignore_index()));
    }
    prediction.check_classes(c)?;
    truth.check_classes(c)?;
    for (p, t) in prediction.data().iter().zip(truth.data()) {
        if *t != truth.ignore_index() {
            confusion.counts[*t as usize * c + *p as usize] += 1;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPartition {
    pub well: Vec<usize>,
    pub under: Vec<usize>,
}

/// How classes with an empty union (never present, never predicted) enter
/// the means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroUnion {
    /// Left out of every mean.
    #[default]
    Exclude,
    /// Counted as IoU 0, as published full-dataset tables do.
    ReportZero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    /// `None` marks a class with an empty union.
    pub per_class_iou: Vec<Option<f64>>,
    /// `None` when no class qualifies for the mean.
    pub miou: Option<f64>,
    pub miou_well: Option<f64>,
    pub miou_under: Option<f64>,
    pub class_partition: ClassPartition,
    pub zero_union: ZeroUnion,
}

fn class_iou(conf: &Confusion, c: usize) -> Option<BigRational> {
    let (tp, fp, fn_) = conf.counts_of(c);
    let union = tp + fp + fn_;
    (union > 0).then(|| BigRational::new(BigInt::from(tp), BigInt::from(union)))
}

fn mean_of(
    ious: &[Option<BigRational>],
    classes: impl Iterator<Item = usize>,
    policy: ZeroUnion,
) -> Option<f64> {
    let mut sum = BigRational::zero();
    let mut n = 0u64;
    for c in classes {
        match (&ious[c], policy) {
            (Some(v), _) => {
                sum += v;
                n += 1;
            }
            (None, ZeroUnion::ReportZero) => n += 1,
            (None, ZeroUnion::Exclude) => {}
        }
    }
    (n > 0).then(|| {
        (sum / BigRational::from_integer(BigInt::from(n)))
            .to_f64()
            .expect("finite mean")
    })
}

pub fn report(
    confusion: &Confusion,
    partition: &ClassPartition,
    policy: ZeroUnion,
) -> Result<MetricsReport> {
    let c = confusion.classes;
    if let Some(bad) = partition
        .well
        .iter()
        .chain(&partition.under)
        .find(|k| **k >= c)
    {
        return Err(Error::invalid(
            "class_partition",
            format!("class {bad} with {c} classes"),
        ));
    }
    let ious: Vec<Option<BigRational>> = (0..c).map(|k| class_iou(confusion, k)).collect();
    Ok(MetricsReport {
        confusion: confusion.rows(),
        per_class_iou: ious
            .iter()
            .map(|v| v.as_ref().map(|r| r.to_f64().expect("finite iou")))
            .collect(),
        miou: mean_of(&ious, 0..c, policy),
        miou_well: mean_of(&ious, partition.well.iter().copied(), policy),
        miou_under: mean_of(&ious, partition.under.iter().copied(), policy),
        class_partition: partition.clone(),
        zero_union: policy,
    })
}

/// Nearest-neighbour resize of a label map.
pub fn resize_nearest(labels: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            out.push(labels[sy * w + x * w / out_w]);
        }
    }
    out
}

/// Argmax prediction at the resolution of the item's labels.
pub fn predict(seg: &Segmenter, item: &LabeledImage) -> Result<LabelMap> {
    let logits = seg.segment(&item.image.data, item.image.height, item.image.width)?;
    let (h, w) = (item.labels.height(), item.labels.width());
    let arg = logits.argmax();
    let data = if (logits.height(), logits.width()) == (h, w) {
        arg
    } else {
        resize_nearest(&arg, logits.height(), logits.width(), h, w)
    };
    LabelMap::new(h, w, data, item.labels.ignore_index())
}

/// Confusion matrix of `seg` over `items`.
pub fn confusion_of(seg: &Segmenter, items: &[LabeledImage]) -> Result<Confusion> {
    if items.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let mut conf = Confusion::new(seg.class_count());
    for item in items {
        accumulate(&mut conf, &predict(seg, item)?, &item.labels)?;
    }
    Ok(conf)
}

pub fn evaluate(
    seg: &Segmenter,
    items: &[LabeledImage],
    partition: &ClassPartition,
    policy: ZeroUnion,
) -> Result<MetricsReport> {
    report(&confusion_of(seg, items)?, partition, policy)
}

/// Horizontal bar chart of per-class IoU as a standalone SVG document.
pub fn iou_chart_svg(report: &MetricsReport, class_names: Option<&[String]>) -> String {
    let n = report.per_class_iou.len();
    let (bar_h, gap, left, width) = (18usize, 6usize, 110usize, 300.0f64);
    let height = 30 + n * (bar_h + gap);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"monospace\" font-size=\"12\">\n",
        left + width as usize + 70
    );
    let title = match report.miou {
        Some(m) => format!("mIoU {:.2}", m * 100.0),
        None => "mIoU n/a".to_string(),
    };
    svg += &format!("<text x=\"4\" y=\"16\">{title}</text>\n");
    for (c, iou) in report.per_class_iou.iter().enumerate() {
        let y = 26 + c * (bar_h + gap);
        let name = class_names
            .and_then(|names| names.get(c).cloned())
            .unwrap_or_else(|| format!("class {c}"));
        let under = report.class_partition.under.contains(&c);
        let fill = if under { "#d9822b" } else { "#3a7bd5" };
        svg += &format!(
            "<text x=\"4\" y=\"{}\">{}</text>\n",
            y + 13,
            xml_escape(&name)
        );
        match iou {
            Some(v) => {
                svg += &format!(
                    "<rect x=\"{left}\" y=\"{y}\" width=\"{:.1}\" height=\"{bar_h}\" fill=\"{fill}\"/>\n",
                    v * width
                );
                svg += &format!(
                    "<text x=\"{:.1}\" y=\"{}\">{:.2}</text>\n",
                    left as f64 + v * width + 4.0,
                    y + 13,
                    v * 100.0
                );
            }
            None => svg += &format!("<text x=\"{left}\" y=\"{}\">absent</text>\n", y + 13),
        }
    }
    svg + "</svg>\n"
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
