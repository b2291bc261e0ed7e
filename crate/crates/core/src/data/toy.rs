//! Procedural stand-in for a synthetic-to-real domain pair.
//!
//! Frequent classes fill wavy horizontal bands stacked top to bottom in class
//! order; rare classes are small square objects scattered without overlap.
//! Every class has its own hue and an oriented stripe texture. The target
//! domain rotates hues, adds noise and moves the band boundaries; each target
//! city draws its own style on top of that shift.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Image, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::{LabelMap, DEFAULT_IGNORE};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    /// Hue rotation of every class colour, in turns.
    pub hue_shift: f64,
    /// Extra per-pixel Gaussian noise on top of the source noise level.
    pub noise_sigma: f64,
    /// Tilt of the band boundaries as a fraction of the height: they sit
    /// `horizon_tilt / 2` lower at the left edge than in the middle and as
    /// much higher at the right edge. Class shares are unaffected.
    pub horizon_tilt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySceneSpec {
    pub class_count: usize,
    /// Relative pixel share per class; normalized internally.
    pub class_frequency_targets: Vec<f64>,
    pub rare_object_classes: Vec<usize>,
    pub domain_shift: DomainShift,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    pub seed: u64,
    /// Side length of the square rare-class objects, in pixels.
    #[serde(default = "default_object_size")]
    pub rare_object_size: usize,
    /// Share of source images rendered in a style pushed away from the
    /// target domain.
    #[serde(default)]
    pub source_outlier_fraction: f64,
}

fn default_object_size() -> usize {
    4
}

/// At most this share of an image may be covered by rare objects; beyond it
/// non-overlapping placement stops being reliable.
const MAX_OBJECT_COVER: f64 = 0.4;
const SOURCE_NOISE: f64 = 0.02;
const WAVE_AMPLITUDE: f64 = 0.06;
const LAYOUT_JITTER: f64 = 0.08;
const TEXTURE_AMPLITUDE: f64 = 0.08;
const TEXTURE_FREQUENCY: f64 = 0.25;

impl ToySceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.class_count > 255 {
            return Err(Error::invalid("class_count", "must be in 1..=255"));
        }
        if self.class_frequency_targets.len() != self.class_count {
            return Err(Error::invalid(
                "class_frequency_targets",
                format!(
                    "{} weights for {} classes",
                    self.class_frequency_targets.len(),
                    self.class_count
                ),
            ));
        }
        if let Some(w) = self
            .class_frequency_targets
            .iter()
            .find(|w| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::invalid(
                "class_frequency_targets",
                format!("weight {w} is not positive"),
            ));
        }
        let mut rare = self.rare_object_classes.clone();
        rare.sort_unstable();
        rare.dedup();
        if rare.len() != self.rare_object_classes.len() {
            return Err(Error::invalid("rare_object_classes", "duplicate class"));
        }
        if let Some(c) = rare.iter().find(|c| **c >= self.class_count) {
            return Err(Error::invalid(
                "rare_object_classes",
                format!("class {c} out of range"),
            ));
        }
        if rare.len() == self.class_count {
            return Err(Error::InfeasibleSpec(
                "at least one class must be a background band".into(),
            ));
        }
        let [h, w] = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::invalid("image_size", "must be non-empty"));
        }
        let s = self.rare_object_size;
        if s == 0 || s > h.min(w) {
            return Err(Error::invalid(
                "rare_object_size",
                format!("{s} does not fit a {h}x{w} image"),
            ));
        }
        let ds = &self.domain_shift;
        if !(ds.noise_sigma >= 0.0) || !ds.hue_shift.is_finite() || !ds.horizon_tilt.is_finite() {
            return Err(Error::invalid(
                "domain_shift",
                "noise_sigma must be >= 0 and all values finite",
            ));
        }
        if !(0.0..=1.0).contains(&self.source_outlier_fraction) {
            return Err(Error::invalid(
                "source_outlier_fraction",
                "must be in [0, 1]",
            ));
        }
        let cover: f64 = rare.iter().map(|c| self.normalized_weights()[*c]).sum();
        if cover > MAX_OBJECT_COVER {
            return Err(Error::InfeasibleSpec(format!(
                "rare classes request {:.0}% of each image; {s}x{s} objects can cover at most {:.0}%",
                cover * 100.0,
                MAX_OBJECT_COVER * 100.0
            )));
        }
        Ok(())
    }

    pub fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.class_frequency_targets.iter().sum();
        self.class_frequency_targets
            .iter()
            .map(|w| w / total)
            .collect()
    }

    fn band_classes(&self) -> Vec<usize> {
        (0..self.class_count)
            .filter(|c| !self.rare_object_classes.contains(c))
            .collect()
    }
}

/// Appearance parameters for one rendered image.
#[derive(Clone, Copy, Debug)]
struct Style {
    hue: f64,
    brightness: f64,
    contrast: f64,
    noise: f64,
    /// Vertical displacement of every boundary.
    shift: f64,
    tilt: f64,
}

impl Style {
    fn source(rng: &mut ChaCha8Rng) -> Self {
        Self {
            hue: rng.random_range(-0.02..=0.02),
            brightness: rng.random_range(0.9..=1.1),
            contrast: 1.0,
            noise: SOURCE_NOISE,
            shift: 0.0,
            tilt: 0.0,
        }
    }

    /// Source image styled away from the target: hue rotated the opposite
    /// way, darker and flatter.
    fn outlier(rng: &mut ChaCha8Rng, shift: &DomainShift) -> Self {
        Self {
            hue: -shift.hue_shift + rng.random_range(-0.05..=0.05),
            brightness: rng.random_range(0.5..=0.7),
            contrast: 0.6,
            noise: SOURCE_NOISE,
            shift: 0.0,
            tilt: -shift.horizon_tilt,
        }
    }

    fn city(rng: &mut ChaCha8Rng, shift: &DomainShift) -> Self {
        Self {
            hue: shift.hue_shift + rng.random_range(-0.04..=0.04),
            brightness: rng.random_range(0.8..=1.1),
            contrast: rng.random_range(0.8..=1.2),
            noise: SOURCE_NOISE + shift.noise_sigma,
            shift: rng.random_range(-0.03..=0.03),
            tilt: shift.horizon_tilt,
        }
    }

    fn jittered(self, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hue: self.hue + rng.random_range(-0.01..=0.01),
            brightness: self.brightness + rng.random_range(-0.03..=0.03),
            ..self
        }
    }
}

/// HSV to RGB, all components in `[0, 1]`, hue in turns.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Renderer<'a> {
    spec: &'a ToySceneSpec,
    weights: Vec<f64>,
    bands: Vec<usize>,
    /// Cumulative band fractions; boundary `j` separates band `j` and `j+1`.
    boundaries: Vec<f64>,
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a ToySceneSpec) -> Self {
        let weights = spec.normalized_weights();
        let bands = spec.band_classes();
        let band_total: f64 = bands.iter().map(|c| weights[*c]).sum();
        let mut acc = 0.0;
        let boundaries = bands[..bands.len() - 1]
            .iter()
            .map(|c| {
                acc += weights[*c] / band_total;
                acc
            })
            .collect();
        Self {
            spec,
            weights,
            bands,
            boundaries,
        }
    }

    fn layout(&self, rng: &mut ChaCha8Rng, style: Style) -> Vec<u8> {
        let [h, w] = self.spec.image_size;
        let jitter = rng.random_range(-LAYOUT_JITTER..=LAYOUT_JITTER);
        let cycles = rng.random_range(1..=2) as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut labels = vec![0u8; h * w];
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let wave = WAVE_AMPLITUDE * (std::f64::consts::TAU * cycles * u + phase).sin();
            let offset = jitter + style.shift + style.tilt * (0.5 - u) + wave;
            let cuts: Vec<f64> = self
                .boundaries
                .iter()
                .map(|b| (b + offset) * h as f64)
                .collect();
            for y in 0..h {
                let centre = y as f64 + 0.5;
                let band = cuts.iter().filter(|c| **c <= centre).count();
                labels[y * w + x] = self.bands[band] as u8;
            }
        }
        let s = self.spec.rare_object_size;
        let area = (s * s) as f64;
        let mut placed: Vec<(usize, usize)> = Vec::new();
        for &class in &self.spec.rare_object_classes {
            let expected = self.weights[class] * (h * w) as f64 / area;
            let mut count = expected.floor() as usize;
            if rng.random::<f64>() < expected.fract() {
                count += 1;
            }
            for _ in 0..count {
                for _attempt in 0..64 {
                    let y0 = rng.random_range(0..=h - s);
                    let x0 = rng.random_range(0..=w - s);
                    let overlaps = placed
                        .iter()
                        .any(|(py, px)| py.abs_diff(y0) < s && px.abs_diff(x0) < s);
                    if overlaps {
                        continue;
                    }
                    placed.push((y0, x0));
                    for y in y0..y0 + s {
                        labels[y * w + x0..y * w + x0 + s].fill(class as u8);
                    }
                    break;
                }
            }
        }
        labels
    }

    fn paint(&self, labels: &[u8], style: Style, rng: &mut ChaCha8Rng) -> Image {
        let [h, w] = self.spec.image_size;
        let c_count = self.spec.class_count as f64;
        let noise = Normal::new(0.0, style.noise).expect("finite noise level");
        let texture_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let c = labels[y * w + x] as usize;
                let rare = self.spec.rare_object_classes.contains(&c);
                let (sat, val) = if rare { (0.8, 0.85) } else { (0.55, 0.7) };
                let rgb = hsv_to_rgb(c as f64 / c_count + style.hue, sat, val);
                let angle = std::f64::consts::PI * c as f64 / c_count;
                let t = TEXTURE_AMPLITUDE
                    * (std::f64::consts::TAU
                        * TEXTURE_FREQUENCY
                        * (x as f64 * angle.cos() + y as f64 * angle.sin())
                        + texture_phase)
                        .sin();
                for (ch, base) in rgb.iter().enumerate() {
                    let v = ((base + t) * style.brightness - 0.5) * style.contrast
                        + 0.5
                        + noise.sample(rng);
                    data[ch * h * w + y * w + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        Image {
            height: h,
            width: w,
            data,
        }
        .quantized()
    }

    fn render(&self, rng: &mut ChaCha8Rng, style: Style) -> (Image, LabelMap) {
        let [h, w] = self.spec.image_size;
        let labels = self.layout(rng, style);
        let image = self.paint(&labels, style, rng);
        (
            image,
            LabelMap::new(h, w, labels, DEFAULT_IGNORE).expect("sized labels"),
        )
    }
}

/// Spreads `count` outliers evenly through a list of `n` source images.
fn is_outlier(i: usize, n: usize, count: usize) -> bool {
    (i * count) / n != ((i + 1) * count) / n
}

/// Renders `n_source` source scenes and `n_target` target scenes split evenly
/// over `n_cities` cities. Target image `i` belongs to city `i % n_cities`.
/// The output is a pure function of the arguments.
pub fn generate_toy_pair(
    spec: &ToySceneSpec,
    n_source: usize,
    n_target: usize,
    n_cities: usize,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    spec.validate()?;
    if n_cities == 0 || !n_target.is_multiple_of(n_cities) {
        return Err(Error::invalid(
            "n_target",
            format!("{n_target} target images cannot be split over {n_cities} cities"),
        ));
    }
    let renderer = Renderer::new(spec);
    let mut src_rng = stream(spec.seed, Stream::Scenes);
    let n_outliers = (spec.source_outlier_fraction * n_source as f64).round() as usize;
    let mut source = Vec::with_capacity(n_source);
    for i in 0..n_source {
        let style = if is_outlier(i, n_source, n_outliers) {
            Style::outlier(&mut src_rng, &spec.domain_shift)
        } else {
            Style::source(&mut src_rng)
        };
        let (image, labels) = renderer.render(&mut src_rng, style);
        source.push(LabeledImage::new(
            format!("src_{i:06}"),
            image,
            labels,
            None,
        )?);
    }
    let mut tgt_rng = stream(spec.seed, Stream::TargetScenes);
    let cities: Vec<Style> = (0..n_cities)
        .map(|_| Style::city(&mut tgt_rng, &spec.domain_shift))
        .collect();
    let mut target = Vec::with_capacity(n_target);
    for i in 0..n_target {
        let city = i % n_cities;
        let style = cities[city].jittered(&mut tgt_rng);
        let (image, labels) = renderer.render(&mut tgt_rng, style);
        let name = format!("city{city}");
        target.push(LabeledImage::new(
            format!("{name}_{i:06}_000019"),
            image,
            labels,
            Some(name),
        )?);
    }
    Ok((source, target))
}
