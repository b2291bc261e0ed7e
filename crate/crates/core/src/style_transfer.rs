//! Fourier amplitude swap: gives a source image the low-frequency amplitude
//! spectrum (global colour and brightness) of a target-domain image while
//! keeping the source phase, which carries the scene structure.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdaParams {
    /// Half-width of the swapped low-frequency window as a fraction of the
    /// image side. The window is `(2⌊βH⌋+1) × (2⌊βW⌋+1)` around DC.
    pub beta: f64,
}

impl Default for FdaParams {
    fn default() -> Self {
        Self { beta: 0.01 }
    }
}

impl FdaParams {
    pub fn new(beta: f64) -> Result<Self> {
        let p = Self { beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(Error::invalid(
                "fda.beta",
                format!("{} outside [0, 0.5]", self.beta),
            ));
        }
        Ok(())
    }

    /// Window half-widths `(⌊βH⌋, ⌊βW⌋)` in frequency bins.
    pub fn half_window(&self, height: usize, width: usize) -> (usize, usize) {
        (
            (self.beta * height as f64).floor() as usize,
            (self.beta * width as f64).floor() as usize,
        )
    }
}

/// True when FFT bin `(ky, kx)` lies inside the centred window.
pub fn in_window(ky: usize, kx: usize, height: usize, width: usize, half: (usize, usize)) -> bool {
    ky.min(height - ky) <= half.0 && kx.min(width - kx) <= half.1
}

/// 2-D DFT of a real plane (row-major), unnormalized.
pub fn fft2(plane: &[f32], height: usize, width: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|v| Complex::new(*v as f64, 0.0)).collect();
    transform2(&mut buf, height, width, false);
    buf
}

/// Inverse of [`fft2`], normalized by `1/(HW)`, keeping the real part.
pub fn ifft2_real(spectrum: &[Complex<f64>], height: usize, width: usize) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    transform2(&mut buf, height, width, true);
    let norm = (height * width) as f64;
    buf.iter().map(|c| c.re / norm).collect()
}

fn transform2(buf: &mut [Complex<f64>], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (
            planner.plan_fft_inverse(width),
            planner.plan_fft_inverse(height),
        )
    } else {
        (
            planner.plan_fft_forward(width),
            planner.plan_fft_forward(height),
        )
    };
    for r in buf.chunks_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Per channel: replaces the amplitude of `src` inside the low-frequency
/// window with the amplitude of `style`, keeps the phase of `src`, inverts,
/// and clamps to `[0, 1]`.
pub fn fda_translate(src: &Image, style: &Image, params: FdaParams) -> Result<Image> {
    params.validate()?;
    if (src.height, src.width) != (style.height, style.width) {
        return Err(Error::ShapeMismatch(format!(
            "source {}x{} vs style {}x{}",
            src.height, src.width, style.height, style.width
        )));
    }
    let (h, w) = (src.height, src.width);
    let half = params.half_window(h, w);
    let mut out = Vec::with_capacity(src.data.len());
    for c in 0..3 {
        let mut s = fft2(src.channel(c), h, w);
        let t = fft2(style.channel(c), h, w);
        for ky in 0..h {
            for kx in 0..w {
                if !in_window(ky, kx, h, w, half) {
                    continue;
                }
                let i = ky * w + kx;
                s[i] = Complex::from_polar(t[i].norm(), s[i].arg());
            }
        }
        out.extend(
            ifft2_real(&s, h, w)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0) as f32),
        );
    }
    Image::new(h, w, out)
}
