//! Dense tanh networks over flat parameter vectors, with exact reverse-mode
//! gradients and the Adam optimizer.
//!
//! Parameters live in one `Vec<f64>` per network so that optimizers, polyak
//! averaging and checkpoints all operate on plain slices. Layout, per layer in
//! order: weight (out × in, row-major) followed by bias (out).

mod heads;

pub use heads::{
    Actor, ActorEval, GaussianHead, MultiDiscreteHead, PolicyAction, PolicyHead, HIDDEN_GAIN, INITIAL_LOG_STD,
    POLICY_OUTPUT_GAIN,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LearnError, Result};

/// Row-major dense matrix; rows are batch entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LearnError::Shape(format!("{} values for a {rows}×{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LearnError::Shape(format!("ragged rows: {} vs {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Shape of a fully connected network: tanh between layers, identity output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    dims: Vec<usize>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
}

impl Mlp {
    /// `dims` = [input, hidden…, output]; at least one layer.
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LearnError::Shape(format!("bad layer dims {dims:?}")));
        }
        Ok(Self { dims: dims.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Offsets of (weight, bias) for layer `l` within the flat vector.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.dims.windows(2).take(l).map(|w| w[1] * (w[0] + 1)).sum();
        (start, start + self.dims[l + 1] * self.dims[l])
    }

    /// Orthogonal-like initialization: hidden layers scaled by `hidden_gain`,
    /// the output layer by `output_gain`; biases zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, hidden_gain: f64, output_gain: f64) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for l in 0..self.num_layers() {
            let (w, _) = self.layer_offsets(l);
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let gain = if l + 1 == self.num_layers() { output_gain } else { hidden_gain };
            let q = orthogonal(fan_out, fan_in, rng);
            for (dst, src) in params[w..w + fan_in * fan_out].iter_mut().zip(q) {
                *dst = gain * src;
            }
        }
        params
    }

    fn check(&self, params: &[f64], input: &Matrix) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(LearnError::Shape(format!("{} params, expected {}", params.len(), self.num_params())));
        }
        if input.cols != self.input_dim() {
            return Err(LearnError::Shape(format!("input has {} cols, expected {}", input.cols, self.input_dim())));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check(params, input)?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut x = input.clone();
        for l in 0..self.num_layers() {
            let mut y = affine(params, self.layer_offsets(l), self.dims[l], self.dims[l + 1], &x);
            if l + 1 < self.num_layers() {
                y.data.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(x);
            x = y;
        }
        Ok((x, MlpCache { inputs }))
    }

    /// Output only, without keeping a cache.
    pub fn predict(&self, params: &[f64], input: &Matrix) -> Result<Matrix> {
        self.forward(params, input).map(|(y, _)| y)
    }

    /// Gradients of Σ upstream ⊙ output with respect to the parameters and the input.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let batch = cache.inputs[0].rows;
        if upstream.rows != batch || upstream.cols != self.output_dim() {
            return Err(LearnError::Shape(format!(
                "upstream {}×{}, expected {batch}×{}",
                upstream.rows,
                upstream.cols,
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.num_params()];
        let mut delta = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let (w_off, b_off) = self.layer_offsets(l);
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &cache.inputs[l];
            for b in 0..batch {
                let d = delta.row(b);
                let xb = x.row(b);
                for o in 0..n_out {
                    let g = d[o];
                    if g == 0.0 {
                        continue;
                    }
                    grads[b_off + o] += g;
                    let gw = &mut grads[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (gw, &xi) in gw.iter_mut().zip(xb) {
                        *gw += g * xi;
                    }
                }
            }
            let mut prev = Matrix::zeros(batch, n_in);
            for b in 0..batch {
                let d = delta.row(b);
                let p = prev.row_mut(b);
                for o in 0..n_out {
                    let g = d[o];
                    if g == 0.0 {
                        continue;
                    }
                    let w = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (pi, &wi) in p.iter_mut().zip(w) {
                        *pi += g * wi;
                    }
                }
            }
            if l > 0 {
                // x is tanh output of the previous layer: d tanh = 1 − tanh²
                for (p, &xi) in prev.data.iter_mut().zip(&x.data) {
                    *p *= 1.0 - xi * xi;
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }
}

fn affine(params: &[f64], (w_off, b_off): (usize, usize), n_in: usize, n_out: usize, x: &Matrix) -> Matrix {
    let mut y = Matrix::zeros(x.rows, n_out);
    let bias = &params[b_off..b_off + n_out];
    for b in 0..x.rows {
        let xb = x.row(b);
        let yb = y.row_mut(b);
        for o in 0..n_out {
            let w = &params[w_off + o * n_in..w_off + (o + 1) * n_in];
            yb[o] = bias[o] + w.iter().zip(xb).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    y
}

/// Row-major `rows × cols` matrix with orthonormal rows (or columns, whichever
/// are fewer), from Gram–Schmidt on a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let transpose = rows > cols;
    let (n, len) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (i, v) in vecs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            if transpose {
                out[j * cols + i] = x;
            } else {
                out[i * cols + j] = x;
            }
        }
    }
    out
}

/// Mean squared error of a scalar-output network against `targets`, with its
/// parameter gradient.
pub fn mse_loss(net: &Mlp, params: &[f64], inputs: &Matrix, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if net.output_dim() != 1 || targets.len() != inputs.rows {
        return Err(LearnError::Shape("mse_loss needs a scalar network and one target per row".into()));
    }
    let (out, cache) = net.forward(params, inputs)?;
    let n = inputs.rows as f64;
    let mut upstream = Matrix::zeros(inputs.rows, 1);
    let mut loss = 0.0;
    for b in 0..inputs.rows {
        let e = out.data[b] - targets[b];
        loss += e * e / n;
        upstream.data[b] = 2.0 * e / n;
    }
    let (grads, _) = net.backward(params, &cache, &upstream)?;
    Ok((loss, grads))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Flattened as `[t, m…, v…]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * self.m.len());
        out.push(self.t as f64);
        out.extend_from_slice(&self.m);
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_slice(values: &[f64], n: usize) -> Result<Self> {
        if values.len() != 1 + 2 * n {
            return Err(LearnError::Snapshot(format!("adam state of {} values for {n} params", values.len())));
        }
        Ok(Self { t: values[0] as u64, m: values[1..=n].to_vec(), v: values[n + 1..].to_vec() })
    }
}

/// One bias-corrected Adam step with the standard β1 = 0.9, β2 = 0.999, ε = 1e−8.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    adam_step_with(params, grads, state, lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
}

pub fn adam_step_with(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grads.len(), "adam: params/grads length");
    assert_eq!(params.len(), state.m.len(), "adam: params/state length");
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` to at most `max_norm`; returns the pre-clip norm.
pub fn global_norm_clip(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// target ← τ·online + (1 − τ)·target
pub fn polyak(target: &mut [f64], online: &[f64], tau: f64) {
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = orthogonal(4, 9, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = (0..9).map(|k| q[i * 9 + k] * q[j * 9 + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let q = orthogonal(9, 4, &mut rng);
        for i in 0..4 {
            let d: f64 = (0..9).map(|k| q[k * 4 + i] * q[k * 4 + i]).sum();
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn param_count_and_offsets() {
        let mlp = Mlp::new(&[3, 5, 2]).unwrap();
        assert_eq!(mlp.num_params(), 5 * 4 + 2 * 6);
        assert_eq!(mlp.layer_offsets(1), (20, 30));
        assert!(Mlp::new(&[3]).is_err());
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mlp = Mlp::new(&[3, 4, 2]).unwrap();
        let mut p = vec![0.0; mlp.num_params()];
        let n = p.len();
        p[n - 2] = 0.7;
        p[n - 1] = -1.1;
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]]).unwrap();
        let y = mlp.predict(&p, &x).unwrap();
        assert_eq!(y.data, vec![0.7, -1.1, 0.7, -1.1]);
    }

    #[test]
    fn single_layer_weight_grad_is_outer_product() {
        let mlp = Mlp::new(&[2, 1]).unwrap();
        let p = vec![0.3, -0.2, 0.1];
        let x = Matrix::from_rows(&[[1.5, -2.0]]).unwrap();
        let (_, cache) = mlp.forward(&p, &x).unwrap();
        let (g, gx) = mlp.backward(&p, &cache, &Matrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(g, vec![3.0, -4.0, 2.0]);
        assert_eq!(gx.data, vec![0.6, -0.4]);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut p = vec![1.0, -1.0, 0.0];
        let g = vec![0.5, -2.0, 0.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, 0.1);
        // m̂ = g, v̂ = g² ⇒ step = lr·g/(|g| + ε)
        assert!((p[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-1.0 + 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
        assert_eq!(s.t, 1);
        let before = p.clone();
        adam_step(&mut p, &g, &mut s, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn clip_scales_and_reports_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(global_norm_clip(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        assert_eq!(global_norm_clip(&mut g, 2.5), 5.0);
        assert_eq!(g, vec![1.5, 2.0]);
    }

    #[test]
    fn polyak_full_copy_and_contraction() {
        let mut t = vec![0.0, 10.0];
        polyak(&mut t, &[1.0, 2.0], 1.0);
        assert_eq!(t, vec![1.0, 2.0]);
        let mut t = vec![0.0];
        polyak(&mut t, &[1.0], 0.25);
        assert_eq!(t, vec![0.25]);
    }
}
