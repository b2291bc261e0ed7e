use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::param::{Module, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2-D convolution over NCHW batches, lowered to im2col + sgemm.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Param,
}

/// Saved im2col buffers, one per batch sample.
pub struct ConvCache {
    in_shape: [usize; 4],
    cols: Vec<Vec<f32>>,
}

impl Conv2d {
    /// Weights drawn from `N(0, std^2)`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        std: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let k = in_channels * kernel * kernel;
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let w: Vec<f32> = (0..out_channels * k).map(|_| normal.sample(rng)).collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                w,
            ),
            bias: Param::new(
                format!("{name}.bias"),
                vec![out_channels],
                vec![0.0; out_channels],
            ),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.padding;
        let wp = w + 2 * self.padding;
        if hp < self.kernel || wp < self.kernel {
            return None;
        }
        Some((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        self.run(x, true)
    }

    fn run(&self, x: &Tensor, keep: bool) -> Result<(Tensor, ConvCache)> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let (ho, wo) = self.output_size(h, w).ok_or_else(|| {
            Error::ShapeMismatch(format!("{h}x{w} input too small for {}", self.weight.name))
        })?;
        let k = self.fan_in();
        let hw = ho * wo;
        let mut y = Tensor::zeros([n, self.out_channels, ho, wo]);
        let mut cache = ConvCache {
            in_shape: x.shape(),
            cols: Vec::with_capacity(if keep { n } else { 0 }),
        };
        let mut cols = vec![0.0f32; k * hw];
        for i in 0..n {
            im2col(
                x.sample(i),
                c,
                h,
                w,
                self.kernel,
                self.stride,
                self.padding,
                ho,
                wo,
                &mut cols,
            );
            let out = y.sample_mut(i);
            // SAFETY: all pointers reference buffers sized for the stated strides.
            unsafe {
                matrixmultiply::sgemm(
                    self.out_channels,
                    k,
                    hw,
                    1.0,
                    self.weight.value.as_ptr(),
                    k as isize,
                    1,
                    cols.as_ptr(),
                    hw as isize,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    hw as isize,
                    1,
                );
            }
            for (o, chunk) in out.chunks_mut(hw).enumerate() {
                let b = self.bias.value[o];
                chunk.iter_mut().for_each(|v| *v += b);
            }
            if keep {
                cache.cols.push(cols.clone());
            }
        }
        Ok((y, cache))
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor, input_grad: bool) -> Option<Tensor> {
        let [n, c, h, w] = cache.in_shape;
        let [_, co, ho, wo] = dy.shape();
        debug_assert_eq!(co, self.out_channels);
        let k = self.fan_in();
        let hw = ho * wo;
        let mut dx = input_grad.then(|| Tensor::zeros(cache.in_shape));
        let mut dcols = vec![0.0f32; if input_grad { k * hw } else { 0 }];
        for i in 0..n {
            let g = dy.sample(i);
            let cols = &cache.cols[i];
            // dW += dY · colsᵀ
            unsafe {
                matrixmultiply::sgemm(
                    co,
                    hw,
                    k,
                    1.0,
                    g.as_ptr(),
                    hw as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    hw as isize,
                    1.0,
                    self.weight.grad.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            for (o, chunk) in g.chunks(hw).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f32>();
            }
            if let Some(dx) = dx.as_mut() {
                // dcols = Wᵀ · dY
                unsafe {
                    matrixmultiply::sgemm(
                        k,
                        co,
                        hw,
                        1.0,
                        self.weight.value.as_ptr(),
                        1,
                        k as isize,
                        g.as_ptr(),
                        hw as isize,
                        1,
                        0.0,
                        dcols.as_mut_ptr(),
                        hw as isize,
                        1,
                    );
                }
                col2im(
                    &dcols,
                    c,
                    h,
                    w,
                    self.kernel,
                    self.stride,
                    self.padding,
                    ho,
                    wo,
                    dx.sample_mut(i),
                );
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [f32],
) {
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [f32],
) {
    let hw = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution for one sample, in f64.
    fn naive(conv: &Conv2d, x: &Tensor) -> Vec<f64> {
        let [_, c, h, w] = x.shape();
        let (ho, wo) = conv.output_size(h, w).unwrap();
        let k = conv.kernel;
        let mut out = vec![0.0; conv.out_channels * ho * wo];
        for o in 0..conv.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias.value[o] as f64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.value[((o * c + ci) * k + ky) * k + kx] as f64;
                                let xv =
                                    x.sample(0)[(ci * h + iy as usize) * w + ix as usize] as f64;
                                acc += wv * xv;
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 1)] {
            let mut conv = Conv2d::new("t", 2, 3, k, s, p, 0.5, &mut rng);
            conv.bias.value = vec![0.1, -0.2, 0.3];
            let x = random_input(&mut rng, [1, 2, 7, 6]);
            let y = conv.forward(&x).unwrap();
            for (a, b) in y.data().iter().zip(naive(&conv, &x)) {
                assert!((*a as f64 - b).abs() < 1e-5, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv2d::new("t", 2, 2, 3, 2, 1, 0.5, &mut rng);
        let x = random_input(&mut rng, [2, 2, 5, 5]);
        let (y, cache) = conv.forward_train(&x).unwrap();
        // Loss = Σ r ⊙ y with fixed random r, so dL/dy = r.
        let r = random_input(&mut rng, y.shape());
        let loss = |conv: &Conv2d, x: &Tensor| -> f64 {
            let y = conv.forward(x).unwrap();
            y.data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let dx = conv.backward(&cache, &r, true).unwrap();
        let h = 1e-2f32;
        for idx in [0, 7, 13, 31, 49] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 1e-3, "dx[{idx}]");
        }
        for idx in [0, 5, 17, 35] {
            let mut cp = conv.clone();
            cp.weight.value[idx] += h;
            let mut cm = conv.clone();
            cm.weight.value[idx] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h as f64);
            assert!(
                (fd - conv.weight.grad[idx] as f64).abs() < 1e-3,
                "dW[{idx}]"
            );
        }
        let fd_bias: f64 = r.data()[..9]
            .iter()
            .chain(&r.data()[18..27])
            .map(|v| *v as f64)
            .sum();
        assert!((fd_bias - conv.bias.grad[0] as f64).abs() < 1e-4);
    }
}
