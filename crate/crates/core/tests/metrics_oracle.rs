//! IoU reports against an exact big-integer oracle. A reported `f64` passes
//! only if it is the correctly rounded value of the exact rational.

use num::bigint::BigInt;
use num::Signed;
use pixalign::eval::{accumulate, report, ClassPartition, Confusion, ZeroUnion};
use pixalign::losses::LabelMap;
use proptest::prelude::*;

/// Exact fraction as (numerator, denominator).
type Frac = (BigInt, BigInt);

/// True when `x` is the nearest `f64` to `num / den`.
fn correctly_rounded(x: f64, (num, den): &Frac) -> bool {
    if x == 0.0 {
        return num == &BigInt::from(0);
    }
    // x = m / 2^s exactly, with s = 1074 + 52 - biased exponent.
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if biased == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    assert!(e <= 0, "IoU values lie in [0, 1]");
    let s = (-e) as usize;
    let lhs = (BigInt::from(m) * den - num * (BigInt::from(1) << s)).abs() * 2;
    lhs <= *den
}

fn iou_of(rows: &[Vec<u64>], c: usize) -> Option<Frac> {
    let tp = rows[c][c];
    let row: u64 = rows[c].iter().sum();
    let col: u64 = rows.iter().map(|r| r[c]).sum();
    let union = row + col - tp;
    (union > 0).then(|| (BigInt::from(tp), BigInt::from(union)))
}

fn mean_of(rows: &[Vec<u64>], classes: &[usize], policy: ZeroUnion) -> Option<Frac> {
    let mut acc: Frac = (BigInt::from(0), BigInt::from(1));
    let mut n = 0u64;
    for &c in classes {
        match iou_of(rows, c) {
            Some((a, b)) => {
                acc = (&acc.0 * &b + a * &acc.1, acc.1 * b);
                n += 1;
            }
            None if policy == ZeroUnion::ReportZero => n += 1,
            None => {}
        }
    }
    (n > 0).then(|| (acc.0, acc.1 * BigInt::from(n)))
}

fn matrix() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<bool>)> {
    (1usize..=6).prop_flat_map(|c| {
        (
            prop::collection::vec(
                prop::collection::vec(prop_oneof![1 => Just(0u64), 3 => 0u64..500], c),
                c,
            ),
            prop::collection::vec(any::<bool>(), c),
        )
    })
}

fn check(got: Option<f64>, want: Option<Frac>) -> bool {
    match (got, want) {
        (None, None) => true,
        (Some(x), Some(f)) => correctly_rounded(x, &f),
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn report_matches_rational_oracle((rows, is_under) in matrix(), report_zero in any::<bool>()) {
        let c = rows.len();
        let policy = if report_zero { ZeroUnion::ReportZero } else { ZeroUnion::Exclude };
        let partition = ClassPartition {
            well: (0..c).filter(|k| !is_under[*k]).collect(),
            under: (0..c).filter(|k| is_under[*k]).collect(),
        };
        let r = report(&Confusion::from_rows(&rows).unwrap(), &partition, policy).unwrap();
        for k in 0..c {
            prop_assert!(check(r.per_class_iou[k], iou_of(&rows, k)), "class {k}");
        }
        let all: Vec<usize> = (0..c).collect();
        prop_assert!(check(r.miou, mean_of(&rows, &all, policy)));
        prop_assert!(check(r.miou_well, mean_of(&rows, &partition.well, policy)));
        prop_assert!(check(r.miou_under, mean_of(&rows, &partition.under, policy)));
    }

    #[test]
    fn accumulation_is_order_independent(
        images in prop::collection::vec((prop::collection::vec(0u8..3, 6), prop::collection::vec(prop_oneof![0u8..3, Just(255u8)], 6)), 1..6)
    ) {
        let build = |order: &mut dyn Iterator<Item = &(Vec<u8>, Vec<u8>)>| {
            let mut conf = Confusion::new(3);
            for (p, t) in order {
                let p = LabelMap::new(2, 3, p.clone(), 255).unwrap();
                let t = LabelMap::new(2, 3, t.clone(), 255).unwrap();
                accumulate(&mut conf, &p, &t).unwrap();
            }
            conf
        };
        let forward = build(&mut images.iter());
        let backward = build(&mut images.iter().rev());
        prop_assert_eq!(&forward, &backward);
        let valid = images.iter().flat_map(|(_, t)| t).filter(|t| **t != 255).count() as u64;
        prop_assert_eq!(forward.total(), valid);
    }
}

#[test]
fn oracle_rejects_a_neighbouring_float() {
    let third: Frac = (BigInt::from(1), BigInt::from(3));
    assert!(correctly_rounded(1.0 / 3.0, &third));
    assert!(!correctly_rounded(
        f64::from_bits((1.0f64 / 3.0).to_bits() + 1),
        &third
    ));
}

#[test]
fn two_by_two_hand_count() {
    // truth [0, 0, 1, 1], prediction [0, 1, 1, 1]
    let mut conf = Confusion::new(2);
    let p = LabelMap::new(1, 4, vec![0, 1, 1, 1], 255).unwrap();
    let t = LabelMap::new(1, 4, vec![0, 0, 1, 1], 255).unwrap();
    accumulate(&mut conf, &p, &t).unwrap();
    assert_eq!(conf.rows(), vec![vec![1, 1], vec![0, 2]]);
    let r = report(
        &conf,
        &ClassPartition {
            well: vec![0, 1],
            under: vec![],
        },
        ZeroUnion::Exclude,
    )
    .unwrap();
    assert_eq!(r.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
    assert_eq!(r.miou, Some(7.0 / 12.0));
    assert_eq!(r.miou_under, None);
}

#[test]
fn ignore_label_in_prediction_is_an_error() {
    let mut conf = Confusion::new(2);
    let p = LabelMap::new(1, 2, vec![0, 255], 255).unwrap();
    let t = LabelMap::new(1, 2, vec![0, 1], 255).unwrap();
    assert!(accumulate(&mut conf, &p, &t).is_err());
}
