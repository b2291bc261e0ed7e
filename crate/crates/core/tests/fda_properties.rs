use pixalign::data::Image;
use pixalign::style_transfer::{fda_translate, fft2, in_window, FdaParams};
use proptest::prelude::*;

fn image_strategy(h: usize, w: usize, lo: f32, hi: f32) -> impl Strategy<Value = Image> {
    prop::collection::vec(lo..hi, 3 * h * w).prop_map(move |data| Image::new(h, w, data).unwrap())
}

fn pair() -> impl Strategy<Value = (Image, Image, f64)> {
    (4usize..=16, 4usize..=16, 0.0f64..0.3).prop_flat_map(|(h, w, beta)| {
        (
            image_strategy(h, w, 0.3, 0.7),
            image_strategy(h, w, 0.3, 0.7),
            Just(beta),
        )
    })
}

/// True when no output value sits on a clamp bound, so the spectrum
/// relations hold without clipping artefacts.
fn unclipped(img: &Image) -> bool {
    img.data.iter().all(|v| *v > 0.0 && *v < 1.0)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_translation_is_identity((src, _, beta) in pair()) {
        let out = fda_translate(&src, &src, FdaParams::new(beta).unwrap()).unwrap();
        for (a, b) in out.data.iter().zip(&src.data) {
            prop_assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn phase_and_exterior_amplitude_are_kept((src, style, beta) in pair()) {
        let params = FdaParams::new(beta).unwrap();
        let out = fda_translate(&src, &style, params).unwrap();
        prop_assume!(unclipped(&out));
        let (h, w) = (src.height, src.width);
        let half = params.half_window(h, w);
        let scale = (h * w) as f64;
        for c in 0..3 {
            let s = fft2(src.channel(c), h, w);
            let t = fft2(style.channel(c), h, w);
            let o = fft2(out.channel(c), h, w);
            for ky in 0..h {
                for kx in 0..w {
                    let i = ky * w + kx;
                    if in_window(ky, kx, h, w, half) {
                        prop_assert!((o[i].norm() - t[i].norm()).abs() / scale <= 1e-4);
                    } else {
                        prop_assert!((o[i].norm() - s[i].norm()).abs() / scale <= 1e-4, "bin ({ky}, {kx})");
                    }
                    // Phase is only defined where the amplitude is not tiny.
                    if s[i].norm() / scale > 1e-3 && o[i].norm() / scale > 1e-3 {
                        prop_assert!(angle_diff(o[i].arg(), s[i].arg()) <= 1e-4, "bin ({ky}, {kx})");
                    }
                }
            }
        }
    }

    /// With a zero-width window only the DC bin is swapped, which shifts each
    /// channel by the difference of means.
    #[test]
    fn dc_swap_shifts_channel_means((src, style, _) in pair()) {
        let out = fda_translate(&src, &style, FdaParams::new(0.0).unwrap()).unwrap();
        prop_assume!(unclipped(&out));
        let n = (src.height * src.width) as f64;
        for c in 0..3 {
            let mean = |img: &Image| img.channel(c).iter().map(|v| *v as f64).sum::<f64>() / n;
            let shift = mean(&style) - mean(&src);
            for (o, s) in out.channel(c).iter().zip(src.channel(c)) {
                prop_assert!((*o as f64 - (*s as f64 + shift)).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn window_mean_transfer_on_32x32() {
    let (h, w) = (32, 32);
    let plane = |c: usize, phase: f32, base: f32| -> Vec<f32> {
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f32, (i % w) as f32);
                base + 0.05 * c as f32 + 0.1 * ((x * 0.7 + y * 0.3 + phase).sin())
            })
            .collect()
    };
    let img = |phase: f32, base: f32| {
        Image::new(h, w, (0..3).flat_map(|c| plane(c, phase, base)).collect()).unwrap()
    };
    let (src, style) = (img(0.0, 0.35), img(1.3, 0.55));
    let out = fda_translate(&src, &style, FdaParams::new(0.1).unwrap()).unwrap();
    assert!(unclipped(&out));
    let n = (h * w) as f64;
    for c in 0..3 {
        let mean = |img: &Image| img.channel(c).iter().map(|v| *v as f64).sum::<f64>() / n;
        assert!((mean(&out) - mean(&style)).abs() < 1e-5, "channel {c}");
    }
}

#[test]
fn beta_outside_range_is_rejected() {
    assert!(FdaParams::new(-0.01).is_err());
    assert!(FdaParams::new(0.6).is_err());
}
