use std::hash::{DefaultHasher, Hash, Hasher};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns trainable parameters.
///
/// Visitation order is fixed per type; optimizers rely on it to line up their
/// state with parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    /// Hash over the exact bit patterns of every parameter value.
    fn param_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.visit(&mut |p| {
            p.name.hash(&mut h);
            for v in &p.value {
                v.to_bits().hash(&mut h);
            }
        });
        h.finish()
    }

    /// True when every gradient buffer is exactly zero.
    fn grads_are_zero(&self) -> bool {
        let mut zero = true;
        self.visit(&mut |p| zero &= p.grad.iter().all(|g| *g == 0.0));
        zero
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0f64;
        self.visit(&mut |p| s += p.grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>());
        s.sqrt()
    }
}
