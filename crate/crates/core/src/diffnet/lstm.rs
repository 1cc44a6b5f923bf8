use rand::Rng;

use super::{axpy, dot, sigmoid, LayerSpec, Param, Parameterized};

/// Single-layer LSTM. Gate blocks are stacked `[input, forget, cell, output]`
/// in a `[4H, in + H]` weight acting on `concat(x_t, h_{t-1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w: Param,
    pub b: Param,
    in_dim: usize,
    hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one step.
#[derive(Clone, Debug)]
pub struct LstmStepCache {
    xh: Vec<f64>,
    gates: Vec<f64>, // activated i, f, g, o
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Forward pass over a whole sequence.
#[derive(Clone, Debug, Default)]
pub struct LstmTrace {
    pub steps: Vec<LstmStepCache>,
    pub hs: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn last_hidden(&self) -> Option<&[f64]> {
        self.hs.last().map(|h| h.as_slice())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, cache: LstmStepCache, h: Vec<f64>) {
        self.steps.push(cache);
        self.hs.push(h);
    }
}

impl Lstm {
    pub fn new<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let cols = in_dim + hidden;
        Self {
            w: Param::init_uniform(&[4 * hidden, cols], hidden, rng),
            b: Param::init_uniform(&[4 * hidden], hidden, rng),
            in_dim,
            hidden,
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w: Param::zeros(&[4 * hidden, in_dim + hidden]),
            b: Param::zeros(&[4 * hidden]),
            in_dim,
            hidden,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::Lstm {
            in_dim: self.in_dim,
            hidden_dim: self.hidden,
        }
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.hidden)
    }

    /// One step without keeping a cache.
    pub fn step(&self, x: &[f64], state: &LstmState) -> LstmState {
        self.step_cached(x, state).0
    }

    pub fn step_cached(&self, x: &[f64], state: &LstmState) -> (LstmState, LstmStepCache) {
        debug_assert_eq!(x.len(), self.in_dim);
        let h = self.hidden;
        let cols = self.in_dim + h;
        let mut xh = Vec::with_capacity(cols);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&state.h);

        let mut gates: Vec<f64> = self
            .w
            .value
            .chunks_exact(cols)
            .zip(&self.b.value)
            .map(|(row, b)| dot(row, &xh) + b)
            .collect();
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * h..3 * h).contains(&k) {
                z.tanh()
            } else {
                sigmoid(*z)
            };
        }

        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            c[j] = f * state.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            hn[j] = o * tanh_c[j];
        }
        let cache = LstmStepCache {
            xh,
            gates,
            c_prev: state.c.clone(),
            tanh_c,
        };
        (LstmState { h: hn, c }, cache)
    }

    /// Runs the sequence from a zero state.
    pub fn forward_seq(&self, xs: &[&[f64]]) -> LstmTrace {
        let mut state = self.initial_state();
        let mut trace = LstmTrace::default();
        for x in xs {
            let (next, cache) = self.step_cached(x, &state);
            trace.push(cache, next.h.clone());
            state = next;
        }
        trace
    }

    /// Final hidden vector of a sequence from a zero state.
    pub fn encode(&self, xs: &[&[f64]]) -> Vec<f64> {
        let mut state = self.initial_state();
        for x in xs {
            state = self.step(x, &state);
        }
        state.h
    }

    /// Backpropagation through time. `dh[t]` is the external gradient on the
    /// hidden output of step `t` (zeros where the output is unused). Returns
    /// `dL/dx_t` for each step.
    pub fn backward_seq(&mut self, trace: &LstmTrace, dh: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(trace.len(), dh.len());
        let h = self.hidden;
        let cols = self.in_dim + h;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![Vec::new(); trace.len()];
        let mut da = vec![0.0; 4 * h];

        for t in (0..trace.len()).rev() {
            let cache = &trace.steps[t];
            let g = &cache.gates;
            for j in 0..h {
                let dht = dh[t][j] + dh_next[j];
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = cache.tanh_c[j];
                let d_o = dht * tc;
                let dc = dc_next[j] + dht * o * (1.0 - tc * tc);
                let di = dc * gg;
                let dg = dc * i;
                let df = dc * cache.c_prev[j];
                dc_next[j] = dc * f;
                da[j] = di * i * (1.0 - i);
                da[h + j] = df * f * (1.0 - f);
                da[2 * h + j] = dg * (1.0 - gg * gg);
                da[3 * h + j] = d_o * o * (1.0 - o);
            }
            let mut dxh = vec![0.0; cols];
            for (r, &gr) in da.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                self.b.grad[r] += gr;
                axpy(gr, &cache.xh, &mut self.w.grad[r * cols..(r + 1) * cols]);
                axpy(gr, &self.w.value[r * cols..(r + 1) * cols], &mut dxh);
            }
            dh_next.copy_from_slice(&dxh[self.in_dim..]);
            dxh.truncate(self.in_dim);
            dxs[t] = dxh;
        }
        dxs
    }

    /// BPTT when only the final hidden vector feeds the loss.
    pub fn backward_last(&mut self, trace: &LstmTrace, dh_last: &[f64]) -> Vec<Vec<f64>> {
        let n = trace.len();
        let mut dh = vec![vec![0.0; self.hidden]; n];
        if n > 0 {
            dh[n - 1].copy_from_slice(dh_last);
        }
        self.backward_seq(trace, &dh)
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}
