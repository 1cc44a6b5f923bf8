use rand::Rng;

use super::{axpy, LayerSpec, Param, Parameterized};

/// 1-D convolution over time with stride 1 and no padding.
///
/// Input is a row-major `[len, in_dim]` sequence; output is
/// `[len - kernel + 1, out_dim]`. Weights are `[out_dim, kernel * in_dim]`,
/// so each output row is a dense map of a flattened window.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub w: Param,
    pub b: Param,
    kernel: usize,
    in_dim: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, kernel: usize, rng: &mut R) -> Self {
        let fan_in = kernel * in_dim;
        Self {
            w: Param::init_uniform(&[out_dim, fan_in], fan_in, rng),
            b: Param::init_uniform(&[out_dim], fan_in, rng),
            kernel,
            in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            in_dim: self.in_dim,
            out_dim: self.out_dim(),
            kernel: self.kernel,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len + 1 - self.kernel
    }

    pub fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        assert!(len >= self.kernel, "sequence shorter than kernel");
        debug_assert_eq!(x.len(), len * self.in_dim);
        let win = self.kernel * self.in_dim;
        let out_len = self.out_len(len);
        let out_dim = self.out_dim();
        let mut y = vec![0.0; out_len * out_dim];
        for t in 0..out_len {
            let window = &x[t * self.in_dim..t * self.in_dim + win];
            for (o, (row, b)) in self
                .w
                .value
                .chunks_exact(win)
                .zip(&self.b.value)
                .enumerate()
            {
                y[t * out_dim + o] = super::dot(row, window) + b;
            }
        }
        y
    }

    pub fn backward(&mut self, x: &[f64], len: usize, dy: &[f64]) -> Vec<f64> {
        let win = self.kernel * self.in_dim;
        let out_len = self.out_len(len);
        let out_dim = self.out_dim();
        let mut dx = vec![0.0; x.len()];
        for t in 0..out_len {
            let lo = t * self.in_dim;
            for o in 0..out_dim {
                let g = dy[t * out_dim + o];
                if g == 0.0 {
                    continue;
                }
                self.b.grad[o] += g;
                axpy(
                    g,
                    &x[lo..lo + win],
                    &mut self.w.grad[o * win..(o + 1) * win],
                );
                axpy(
                    g,
                    &self.w.value[o * win..(o + 1) * win],
                    &mut dx[lo..lo + win],
                );
            }
        }
        dx
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
