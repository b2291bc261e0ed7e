//! Dense NCHW `f32` tensor used by the network layers.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    /// Stacks equally sized `(C, H, W)` samples into a batch.
    pub fn stack(samples: &[&[f32]], c: usize, h: usize, w: usize) -> Result<Self> {
        let per = c * h * w;
        let mut data = Vec::with_capacity(per * samples.len());
        for s in samples {
            if s.len() != per {
                return Err(Error::ShapeMismatch(format!(
                    "sample of {} values in a ({c}, {h}, {w}) batch",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Ok(Self {
            shape: [samples.len(), c, h, w],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }
    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates two batches along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch(format!(
                "cannot concat {:?} with {:?}",
                a.shape, b.shape
            )));
        }
        let mut out = Tensor::zeros([n, ca + cb, h, w]);
        for i in 0..n {
            let dst = out.sample_mut(i);
            dst[..ca * h * w].copy_from_slice(a.sample(i));
            dst[ca * h * w..].copy_from_slice(b.sample(i));
        }
        Ok(out)
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        let mut a = Tensor::zeros([n, first, h, w]);
        let mut b = Tensor::zeros([n, c - first, h, w]);
        for i in 0..n {
            let src = self.sample(i);
            a.sample_mut(i).copy_from_slice(&src[..first * h * w]);
            b.sample_mut(i).copy_from_slice(&src[first * h * w..]);
        }
        (a, b)
    }
}
