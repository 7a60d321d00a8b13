//! Dense layers with hand-written backward passes and an Adam optimizer.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Affine layer `y = x W + b` with `W` stored as (inputs, outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Gaussian init with standard deviation `scale / sqrt(inputs)`, zero bias.
    pub fn init(rng: &mut impl Rng, inputs: usize, outputs: usize, scale: f64) -> Self {
        let n = Normal::new(0.0, scale / (inputs as f64).sqrt()).unwrap();
        Dense { w: Array2::from_shape_fn((inputs, outputs), |_| n.sample(rng)), b: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Parameter gradients and input gradient for upstream gradient `dy`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let g = DenseGrad { w: x.t().dot(dy), b: dy.sum_axis(Axis(0)) };
        (g, dy.dot(&self.w.t()))
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|x| x.is_finite())
    }
}

impl DenseGrad {
    pub fn add_assign(&mut self, other: &DenseGrad) {
        self.w += &other.w;
        self.b += &other.b;
    }

    pub fn scale(&mut self, k: f64) {
        self.w *= k;
        self.b *= k;
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Zeroes `dy` where the pre-activation was not positive.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut d = dy.clone();
    d.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    d
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<DenseGrad>,
    v: Vec<DenseGrad>,
}

impl Adam {
    pub fn new(layers: &[Dense], lr: f64) -> Self {
        let zeros: Vec<DenseGrad> = layers.iter().map(Dense::zero_grad).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, layers: &mut [Dense], grads: &[DenseGrad]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for ((layer, g), (m, v)) in layers.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            update(&mut layer.w, &g.w, &mut m.w, &mut v.w, b1, b2, step, eps);
            update(&mut layer.b, &g.b, &mut m.b, &mut v.b, b1, b2, step, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    b1: f64,
    b2: f64,
    step: f64,
    eps: f64,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    });
}
