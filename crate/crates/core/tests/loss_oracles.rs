//! Every loss against a scalar brute-force oracle written directly from the
//! defining formula, over random small instances.

use pixalign::losses::*;
use proptest::prelude::*;

const TOL: f64 = 1e-5;
const IGNORE: u8 = 255;

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= TOL * want.abs().max(1e-12)
}

#[derive(Clone, Debug)]
struct Instance {
    classes: usize,
    h: usize,
    w: usize,
    /// Channel-major logits.
    logits: Vec<f64>,
    labels: Vec<u8>,
}

impl Instance {
    fn n(&self) -> usize {
        self.h * self.w
    }

    fn logit(&self, k: usize, i: usize) -> f64 {
        self.logits[k * self.n() + i]
    }

    /// Softmax probability of class `k` at pixel `i`, computed from scratch.
    fn prob(&self, k: usize, i: usize, tau: f64) -> f64 {
        let denom: f64 = (0..self.classes)
            .map(|j| (self.logit(j, i) / tau).exp())
            .sum();
        (self.logit(k, i) / tau).exp() / denom
    }

    fn class_map(&self) -> ClassMap {
        ClassMap::new(self.classes, self.h, self.w, self.logits.clone()).unwrap()
    }

    fn label_map(&self) -> LabelMap {
        LabelMap::new(self.h, self.w, self.labels.clone(), IGNORE).unwrap()
    }

    fn valid(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.labels[i] != IGNORE)
            .collect()
    }
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=5, 1usize..=4, 1usize..=4).prop_flat_map(|(classes, h, w)| {
        let n = h * w;
        let label = prop_oneof![9 => 0..classes as u8, 1 => Just(IGNORE)];
        (
            prop::collection::vec(-4.0f64..4.0, classes * n),
            prop::collection::vec(label, n),
            0..n,
        )
            .prop_map(move |(logits, mut labels, keep)| {
                if labels[keep] == IGNORE {
                    labels[keep] = (keep % classes) as u8;
                }
                Instance {
                    classes,
                    h,
                    w,
                    logits,
                    labels,
                }
            })
    })
}

fn disc_map(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, len)
}

fn s_oracle(x: &Instance, i: usize) -> f64 {
    if x.labels[i] == IGNORE {
        return 0.0;
    }
    -x.prob(x.labels[i] as usize, i, 1.0).ln()
}

fn b_oracle(x: &Instance, i: usize) -> f64 {
    if x.labels[i] == IGNORE {
        return 0.0;
    }
    let valid = x.valid();
    let same = valid
        .iter()
        .filter(|&&j| x.labels[j] == x.labels[i])
        .count();
    1.0 - same as f64 / valid.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn focal_matches_oracle(x in instance(), alpha in 0.25f64..2.0, gamma in 0.0f64..3.0) {
        let got = focal_loss(&x.class_map().softmax(), &x.label_map(), FocalParams::new(alpha, gamma).unwrap()).unwrap();
        let valid = x.valid();
        let want = valid
            .iter()
            .map(|&i| {
                let p = x.prob(x.labels[i] as usize, i, 1.0);
                -alpha * (1.0 - p).powf(gamma) * p.ln()
            })
            .sum::<f64>()
            / valid.len() as f64;
        prop_assert!(close(got, want), "{got} vs {want}");
    }

    #[test]
    fn s_map_matches_oracle(x in instance()) {
        let s = s_map(&x.class_map().softmax(), &x.label_map()).unwrap();
        for i in 0..x.n() {
            prop_assert!(close(s.data()[i], s_oracle(&x, i)));
        }
    }

    #[test]
    fn b_map_matches_oracle(x in instance()) {
        let b = b_map(&x.label_map()).unwrap();
        for i in 0..x.n() {
            prop_assert!(close(b.data()[i], b_oracle(&x, i)));
        }
    }

    #[test]
    fn pixel_discriminator_matches_oracle(
        (h, w, ds, dt) in (1usize..5, 1usize..5).prop_flat_map(|(h, w)| (Just(h), Just(w), disc_map(h * w), disc_map(h * w)))
    ) {
        let src = SpatialMap::new(h, w, ds.clone()).unwrap();
        let tgt = SpatialMap::new(h, w, dt.clone()).unwrap();
        let n = (h * w) as f64;
        let want = -ds.iter().map(|d| d.ln()).sum::<f64>() / n - dt.iter().map(|d| (1.0 - d).ln()).sum::<f64>() / n;
        prop_assert!(close(pixel_discriminator_loss(&src, &tgt), want));
        let zs = src.map(|d| (d / (1.0 - d)).ln());
        let zt = tgt.map(|d| (d / (1.0 - d)).ln());
        prop_assert!(close(pixel_discriminator_loss_logits_grad(&zs, &zt).0, want));
    }

    #[test]
    fn pixadv_matches_oracle(
        (x, d) in instance().prop_flat_map(|x| { let n = x.n(); (Just(x), disc_map(n)) }),
        use_s in any::<bool>(),
        use_b in any::<bool>(),
    ) {
        let probs = x.class_map().softmax();
        let weighting = AdvWeighting { use_s, use_b };
        let weights = weighting.weight_maps(&probs, &x.label_map()).unwrap();
        let dmap = SpatialMap::new(x.h, x.w, d.clone()).unwrap();
        let mask = |i: usize| if x.labels[i] == IGNORE { 0.0 } else { 1.0 };
        let want = -(0..x.n())
            .map(|i| {
                let s = if use_s { s_oracle(&x, i) } else { mask(i) };
                let b = if use_b { b_oracle(&x, i) } else { mask(i) };
                s * b * d[i].ln()
            })
            .sum::<f64>()
            / x.n() as f64;
        prop_assert!(close(pixadv_loss(&dmap, &weights).unwrap(), want));
        let z = dmap.map(|v| (v / (1.0 - v)).ln());
        prop_assert!(close(pixadv_loss_logits_grad(&z, &weights).unwrap().0, want));
    }

    #[test]
    fn global_discriminator_matches_oracle(ds in 0.01f64..0.99, dt in 0.01f64..0.99) {
        let want = -ds.ln() - (1.0 - dt).ln();
        prop_assert!(close(global_discriminator_loss(ds, dt), want));
        let logit = |d: f64| (d / (1.0 - d)).ln();
        prop_assert!(close(global_discriminator_loss_logits_grad(logit(ds), logit(dt)).0, want));
        prop_assert!(close(image_adv_loss_logits_grad(logit(dt)).0, -dt.ln()));
    }

    #[test]
    fn kd_matches_oracle(
        (x, t) in instance().prop_flat_map(|x| { let len = x.logits.len(); (Just(x), prop::collection::vec(-4.0f64..4.0, len)) }),
        tau in 0.2f64..3.0,
    ) {
        let teacher = Instance { logits: t, ..x.clone() };
        let got = kd_loss(&teacher.class_map(), &x.class_map(), tau).unwrap();
        let want = -(0..x.n())
            .map(|i| (0..x.classes).map(|k| teacher.prob(k, i, tau) * x.prob(k, i, 1.0).ln()).sum::<f64>())
            .sum::<f64>()
            / x.n() as f64;
        prop_assert!(close(got, want), "{got} vs {want}");
    }
}

#[test]
fn focal_with_zero_gamma_is_cross_entropy() {
    let logits = ClassMap::new(2, 1, 2, vec![0.3, -1.0, 1.2, 0.4]).unwrap();
    let labels = LabelMap::new(1, 2, vec![0, 1], IGNORE).unwrap();
    let got = focal_loss(&logits.softmax(), &labels, FocalParams::CROSS_ENTROPY).unwrap();
    let p0 = 0.3f64.exp() / (0.3f64.exp() + 1.2f64.exp());
    let p1 = 0.4f64.exp() / ((-1.0f64).exp() + 0.4f64.exp());
    assert!(close(got, -(p0.ln() + p1.ln()) / 2.0));
}

#[test]
fn all_ignored_labels_are_rejected() {
    let logits = ClassMap::new(2, 1, 2, vec![0.0; 4]).unwrap();
    let labels = LabelMap::new(1, 2, vec![IGNORE; 2], IGNORE).unwrap();
    assert!(focal_loss(&logits.softmax(), &labels, FocalParams::default()).is_err());
    assert!(b_map(&labels).is_err());
}
