//! Shared-trunk actor-critic MLP with manual backpropagation.
//!
//! Parameters live in one flat vector so the optimizer and the checkpoint
//! writer can treat them uniformly. Each dense layer stores its weight as an
//! `out × in` row-major block followed by its bias.

use nalgebra::DMatrix;

use crate::dynamics::N_ACTIONS;
use crate::env::OBS_DIM;
use crate::rng::RngHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[obs → hidden… ]` tanh trunk with a linear policy head (action logits)
/// and a linear value head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l + 1]` the tanh output of trunk layer l.
    acts: Vec<Vec<f64>>,
}

fn layout(dims: &[usize]) -> Vec<LayerSpec> {
    let trunk = &dims[..dims.len() - 1];
    let n_actions = dims[dims.len() - 1];
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |fan_in, fan_out| {
        let spec = LayerSpec {
            fan_in,
            fan_out,
            offset,
        };
        offset += spec.len();
        layers.push(spec);
    };
    for w in trunk.windows(2) {
        push(w[0], w[1]);
    }
    let last = *trunk.last().unwrap();
    push(last, n_actions);
    push(last, 1);
    layers
}

impl Mlp {
    /// Zero-filled network. `hidden` lists the trunk widths.
    pub fn zeros(obs_dim: usize, hidden: &[usize], n_actions: usize) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_actions);
        Self::from_layer_dims(&dims, None).expect("valid dims")
    }

    /// Build from the dimension table `[obs, hidden…, n_actions]`.
    pub fn from_layer_dims(dims: &[usize], params: Option<Vec<f64>>) -> Option<Self> {
        if dims.len() < 3 || dims.contains(&0) {
            return None;
        }
        let layers = layout(dims);
        let total = layers.last().map(|l| l.offset + l.len()).unwrap_or(0);
        let params = match params {
            Some(p) if p.len() == total => p,
            Some(_) => return None,
            None => vec![0.0; total],
        };
        Some(Mlp { layers, params })
    }

    /// Orthogonal initialization: trunk gain √2, policy head 0.01, value
    /// head 1, zero biases.
    pub fn init(hidden: &[usize], rng: &mut RngHandle) -> Self {
        let mut net = Self::zeros(OBS_DIM, hidden, N_ACTIONS);
        let n_trunk = net.n_trunk();
        let specs = net.layers.clone();
        for (i, spec) in specs.iter().enumerate() {
            let gain = if i < n_trunk {
                std::f64::consts::SQRT_2
            } else if i == n_trunk {
                0.01
            } else {
                1.0
            };
            let w = orthogonal(spec.fan_out, spec.fan_in, gain, rng);
            net.params[spec.offset..spec.offset + spec.weight_len()].copy_from_slice(&w);
        }
        net
    }

    /// `[obs, hidden…, n_actions]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].fan_in];
        for l in &self.layers[..self.n_trunk()] {
            dims.push(l.fan_out);
        }
        dims.push(self.n_actions());
        dims
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_actions(&self) -> usize {
        self.layers[self.layers.len() - 2].fan_out
    }

    pub fn obs_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    fn n_trunk(&self) -> usize {
        self.layers.len() - 2
    }

    fn dense(&self, spec: &LayerSpec, x: &[f64], out: &mut Vec<f64>) {
        let w = &self.params[spec.offset..spec.offset + spec.weight_len()];
        let b = &self.params[spec.bias_offset()..spec.bias_offset() + spec.fan_out];
        out.clear();
        out.extend(w.chunks_exact(spec.fan_in).zip(b).map(|(row, bias)| {
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        }));
    }

    /// Logits and state value.
    pub fn forward(&self, obs: &[f64]) -> (Vec<f64>, f64) {
        let (logits, value, _) = self.forward_cached(obs);
        (logits, value)
    }

    pub fn forward_cached(&self, obs: &[f64]) -> (Vec<f64>, f64, ForwardCache) {
        debug_assert_eq!(obs.len(), self.obs_dim());
        let mut acts = Vec::with_capacity(self.n_trunk() + 1);
        acts.push(obs.to_vec());
        for spec in &self.layers[..self.n_trunk()] {
            let mut z = Vec::with_capacity(spec.fan_out);
            self.dense(spec, acts.last().unwrap(), &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(z);
        }
        let h = acts.last().unwrap();
        let mut logits = Vec::with_capacity(self.n_actions());
        self.dense(&self.layers[self.n_trunk()], h, &mut logits);
        let mut value = Vec::with_capacity(1);
        self.dense(&self.layers[self.n_trunk() + 1], h, &mut value);
        (logits, value[0], ForwardCache { acts })
    }

    /// Accumulate `∂L/∂params` into `grad` given `∂L/∂logits` and `∂L/∂value`.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        let n_trunk = self.n_trunk();
        let h = &cache.acts[n_trunk];
        let mut dh = vec![0.0; h.len()];

        let heads = [
            (&self.layers[n_trunk], d_logits),
            (&self.layers[n_trunk + 1], std::slice::from_ref(&d_value)),
        ];
        for (spec, dout) in heads {
            self.accumulate_layer(spec, h, dout, grad, Some(&mut dh));
        }

        for l in (0..n_trunk).rev() {
            let out = &cache.acts[l + 1];
            let dz: Vec<f64> = dh.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let input = &cache.acts[l];
            if l > 0 {
                let mut d_in = vec![0.0; input.len()];
                self.accumulate_layer(&self.layers[l], input, &dz, grad, Some(&mut d_in));
                dh = d_in;
            } else {
                self.accumulate_layer(&self.layers[l], input, &dz, grad, None);
            }
        }
    }

    fn accumulate_layer(
        &self,
        spec: &LayerSpec,
        input: &[f64],
        dout: &[f64],
        grad: &mut [f64],
        d_input: Option<&mut Vec<f64>>,
    ) {
        let wlen = spec.weight_len();
        let (gw, gb) = grad[spec.offset..spec.offset + spec.len()].split_at_mut(wlen);
        for ((row, gbias), &d) in gw.chunks_exact_mut(spec.fan_in).zip(gb.iter_mut()).zip(dout) {
            *gbias += d;
            if d != 0.0 {
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        if let Some(d_in) = d_input {
            let w = &self.params[spec.offset..spec.offset + wlen];
            for (row, &d) in w.chunks_exact(spec.fan_in).zip(dout) {
                if d != 0.0 {
                    for (acc, wv) in d_in.iter_mut().zip(row) {
                        *acc += d * wv;
                    }
                }
            }
        }
    }

    /// Zero both heads so the policy is uniform and the value is 0.
    pub fn zero_heads(&mut self) {
        let n = self.n_trunk();
        for spec in self.layers[n..].to_vec() {
            self.params[spec.offset..spec.offset + spec.len()].fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`, flattened row-major.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut RngHandle) -> Vec<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::from_fn(big, small, |_, _| rng.normal());
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * m[(i, j)]);
        }
    }
    out
}
