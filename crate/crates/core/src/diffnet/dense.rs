use rand::Rng;

use super::{axpy, dot, LayerSpec, Param, Parameterized};

/// Fully connected layer `y = W x + b`, with `W` stored row-major `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            w: Param::init_uniform(&[out_dim, in_dim], in_dim, rng),
            b: Param::init_uniform(&[out_dim], in_dim, rng),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Param::zeros(&[out_dim, in_dim]),
            b: Param::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            in_dim: self.in_dim(),
            out_dim: self.out_dim(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.in_dim();
        debug_assert_eq!(x.len(), n);
        self.w
            .value
            .chunks_exact(n)
            .zip(&self.b.value)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let n = self.in_dim();
        let mut dx = vec![0.0; n];
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.b.grad[r] += g;
            axpy(g, x, &mut self.w.grad[r * n..(r + 1) * n]);
            axpy(g, &self.w.value[r * n..(r + 1) * n], &mut dx);
        }
        dx
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
