use crate::tensor::Tensor;

/// Leaky rectifier; `slope = 0` gives a plain ReLU.
pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    y
}

/// Backward through [`leaky_relu`], given the layer's *output*.
///
/// The output has the same sign as the input for any non-negative slope, so
/// callers can drop the pre-activation.
pub fn leaky_relu_backward(y: &Tensor, dy: &Tensor, slope: f32) -> Tensor {
    let mut dx = dy.clone();
    for (g, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if *v <= 0.0 {
            *g *= slope;
        }
    }
    dx
}

/// Nearest-neighbour upsampling by a factor of two.
pub fn upsample2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let (src, dst) = (x.data(), y.data_mut());
    for p in 0..n * c {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[(p * 2 * h + yy) * 2 * w + xx] = src[(p * h + yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let (src, dst) = (dy.data(), dx.data_mut());
    for p in 0..n * c {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[(p * h + yy / 2) * w + xx / 2] += src[(p * h2 + yy) * w2 + xx];
            }
        }
    }
    dx
}

/// Mean over the spatial axes; output is `(N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let data = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f32>() / hw as f32)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let hw = in_shape[2] * in_shape[3];
    let mut dx = Tensor::zeros(in_shape);
    for (plane, g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        plane.fill(g / hw as f32);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2(&x);
        assert_eq!(y.data()[..4], [1.0, 1.0, 2.0, 2.0]);
        let dy = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        // <up(x), dy> == <x, up^T(dy)>
        let lhs: f32 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x
            .data()
            .iter()
            .zip(upsample2_backward(&dy).data())
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn leaky_relu_gradient_uses_slope_on_negative_side() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-2.0, 0.5, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.2);
        assert_eq!(y.data(), &[-0.4, 0.5, 3.0]);
        let dy = Tensor::from_vec([1, 1, 1, 3], vec![1.0; 3]).unwrap();
        assert_eq!(leaky_relu_backward(&y, &dy, 0.2).data(), &[0.2, 1.0, 1.0]);
    }

    #[test]
    fn pool_spreads_gradient_evenly() {
        let x = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.0, 6.0]);
        let dy = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 4.0]).unwrap();
        assert_eq!(
            global_avg_pool_backward(&dy, [1, 2, 1, 2]).data(),
            &[0.5, 0.5, 2.0, 2.0]
        );
    }
}
