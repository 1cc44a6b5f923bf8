use serde::{Deserialize, Serialize};

use super::Param;

/// Momentum SGD on a single parameter: `v ← μv + g; θ ← θ − lr·v`.
pub fn sgd_step(param: &mut Param, velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((theta, v), g) in param
        .value
        .iter_mut()
        .zip(velocity.iter_mut())
        .zip(&param.grad)
    {
        *v = momentum * *v + g;
        *theta -= lr * *v;
    }
}

pub fn grad_norm(params: &[&mut Param]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Param], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

pub trait Optimizer {
    /// Applies one update from the accumulated gradients. The parameter list
    /// must come in the same order on every call.
    fn step(&mut self, params: &mut [&mut Param]);
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    #[serde(skip)]
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            sgd_step(p, v, self.lr, self.momentum);
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    t: u64,
    #[serde(skip)]
    m: Vec<Vec<f64>>,
    #[serde(skip)]
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.value.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.value[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
