//! Dense layers, parameter traversal and the Adam optimiser.
//!
//! Activations are row-major in the usual sense: one row per node (or per
//! graph), one column per feature.

use nalgebra::DMatrix;
use rand::Rng;

/// Affine map `y = x·W + b`, `W` is `in × out`, `b` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl Linear {
    /// Uniform `±1/√fan_in` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
            bias: DMatrix::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: DMatrix::zeros(fan_in, fan_out),
            bias: DMatrix::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        add_row(&mut y, &self.bias);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Linear) -> DMatrix<f64> {
        grad.weight += x.transpose() * dy;
        for (g, col) in grad.bias.iter_mut().zip(dy.column_iter()) {
            *g += col.sum();
        }
        dy * self.weight.transpose()
    }

    /// Like [`Linear::backward`] without the input gradient.
    pub fn backward_params(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Linear) {
        grad.weight += x.transpose() * dy;
        for (g, col) in grad.bias.iter_mut().zip(dy.column_iter()) {
            *g += col.sum();
        }
    }
}

/// Adds the `1 × c` row `b` to every row of `y`.
pub fn add_row(y: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for (mut col, &bj) in y.column_iter_mut().zip(b.iter()) {
        col.add_scalar_mut(bj);
    }
}

pub fn relu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(pre, |g, p| if p > 0.0 { g } else { 0.0 })
}

pub fn elu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| if v > 0.0 { v } else { v.exp_m1() })
}

pub fn elu_backward(pre: &DMatrix<f64>, dy: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(pre, |g, p| if p > 0.0 { g } else { g * p.exp() })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform traversal over the named tensors of a parameter set. Gradients
/// use the same type as the parameters, so `tensors_mut` of a gradient lines
/// up one-to-one with the parameters it belongs to.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &DMatrix<f64>)>;
    fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Adam with L2-style weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        let params = params.tensors_mut();
        assert_eq!(grads.len(), params.len(), "gradient/parameter layout mismatch");
        if self.first.is_empty() {
            self.first = grads
                .iter()
                .map(|(_, g)| DMatrix::zeros(g.nrows(), g.ncols()))
                .collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
        for (((p, (_, g)), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + wd * *pi;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
