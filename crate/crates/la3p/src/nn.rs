//! Minimal feed-forward approximator with hand-derived backpropagation and
//! an Adam optimizer, sized for CPU-scale experiments.
//!
//! Hidden layers use ReLU; the output head is either linear (critic) or
//! tanh scaled by the action bound (actor). All passes are batched: inputs
//! are row-major matrices with one sample per row, and the inner loops run
//! over contiguous slices.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch("Matrix::from_rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Dot product over lane-wise accumulator arrays; the fixed-width chunks
/// lower to packed FMA with independent chains.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const W: usize = 8;
    let n = a.len().min(b.len());
    let chunks = n / (2 * W);
    let mut acc0 = [0.0f64; W];
    let mut acc1 = [0.0f64; W];
    for k in 0..chunks {
        let i = 2 * W * k;
        let (a0, b0) = (&a[i..i + W], &b[i..i + W]);
        let (a1, b1) = (&a[i + W..i + 2 * W], &b[i + W..i + 2 * W]);
        for j in 0..W {
            acc0[j] += a0[j] * b0[j];
            acc1[j] += a1[j] * b1[j];
        }
    }
    let mut tail = 0.0;
    for i in 2 * W * chunks..n {
        tail += a[i] * b[i];
    }
    for j in 0..W {
        tail += acc0[j] + acc1[j];
    }
    tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Output head of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Linear,
    /// `scale * tanh(z)`, bounding outputs to `[-scale, scale]`.
    Tanh { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    head: Head,
    /// Bumped on every parameter mutation; forward caches record it so a
    /// backward pass against outdated activations is rejected.
    version: u64,
}

/// Activations recorded by a forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// `acts[0]` is the input batch; `acts[l+1]` the output of layer `l`
    /// (post-ReLU, or post-head for the last layer).
    acts: Vec<Matrix>,
    version: u64,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for v in &mut w.data {
                *v *= factor;
            }
        }
        for b in &mut self.biases {
            for v in b {
                *v *= factor;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Flattened copy, layer by layer (weights then bias), for norm
    /// computations in the diagnostics probes.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Builds a network with uniform `±1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch("Mlp::new dims"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in &mut w.data {
                *v = rng.random_range(-bound..bound);
            }
            let mut b = vec![0.0; fan_out];
            for v in &mut b {
                *v = rng.random_range(-bound..bound);
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            head,
            version: 0,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols != self.dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.dims[0],
                got: input.cols,
            });
        }
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.clone());
        for l in 0..layers {
            let x = &acts[l];
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = Matrix::zeros(x.rows, w.rows);
            for r in 0..x.rows {
                let xr = x.row(r);
                let zr = z.row_mut(r);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot(xr, w.row(o)) + b[o];
                }
            }
            if l + 1 < layers {
                for v in &mut z.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            } else if let Head::Tanh { scale } = self.head {
                for v in &mut z.data {
                    *v = scale * v.tanh();
                }
            }
            acts.push(z);
        }
        let output = acts.last().unwrap().clone();
        Ok((
            output,
            ForwardCache {
                acts,
                version: self.version,
            },
        ))
    }

    /// Convenience single-sample forward.
    pub fn forward_single(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_rows(std::slice::from_ref(&input.to_vec()))?;
        Ok(self.forward(&m)?.0.data)
    }

    /// Reverse-mode pass: returns parameter gradients and the gradient with
    /// respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_impl(cache, out_grad, Some(&mut grads))?;
        Ok((grads, input_grad))
    }

    /// Input-gradient-only pass, used where this network's parameters are
    /// frozen (the critic inside an actor update).
    pub fn backward_input(&self, cache: &ForwardCache, out_grad: &Matrix) -> Result<Matrix> {
        self.backward_impl(cache, out_grad, None)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        out_grad: &Matrix,
        mut grads: Option<&mut Gradients>,
    ) -> Result<Matrix> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let layers = self.weights.len();
        let output = &cache.acts[layers];
        if out_grad.rows != output.rows || out_grad.cols != output.cols {
            return Err(Error::ShapeMismatch("backward out_grad"));
        }

        // Gradient at the last layer's pre-activation.
        let mut dz = out_grad.clone();
        if let Head::Tanh { scale } = self.head {
            for (g, &o) in dz.data.iter_mut().zip(&output.data) {
                *g *= scale - o * o / scale;
            }
        }

        for l in (0..layers).rev() {
            let x = &cache.acts[l];
            let w = &self.weights[l];
            if let Some(g) = grads.as_deref_mut() {
                let dw = &mut g.weights[l];
                let db = &mut g.biases[l];
                for r in 0..x.rows {
                    let dzr = dz.row(r);
                    let xr = x.row(r);
                    for (o, &d) in dzr.iter().enumerate() {
                        if d != 0.0 {
                            axpy(dw.row_mut(o), d, xr);
                            db[o] += d;
                        }
                    }
                }
            }
            let mut dx = Matrix::zeros(x.rows, x.cols);
            for r in 0..x.rows {
                let dzr = dz.row(r);
                let dxr = dx.row_mut(r);
                for (o, &d) in dzr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(dxr, d, w.row(o));
                    }
                }
            }
            if l > 0 {
                // ReLU mask of the layer below.
                for (g, &a) in dx.data.iter_mut().zip(&cache.acts[l].data) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dz = dx;
        }
        Ok(dz)
    }

    /// Polyak blend `self = zeta * src + (1 - zeta) * self`.
    pub fn polyak_from(&mut self, src: &Mlp, zeta: f64) -> Result<()> {
        if self.dims != src.dims {
            return Err(Error::ShapeMismatch("polyak_from"));
        }
        for (wt, ws) in self.weights.iter_mut().zip(&src.weights) {
            for (t, &s) in wt.data.iter_mut().zip(&ws.data) {
                *t = zeta * s + (1.0 - zeta) * *t;
            }
        }
        for (bt, bs) in self.biases.iter_mut().zip(&src.biases) {
            for (t, &s) in bt.iter_mut().zip(bs) {
                *t = zeta * s + (1.0 - zeta) * *t;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Linear index over all parameters (per layer: weights row-major, then
    /// bias). Used by the finite-difference tests.
    pub fn param(&self, mut idx: usize) -> Option<f64> {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if idx < w.data.len() {
                return Some(w.data[idx]);
            }
            idx -= w.data.len();
            if idx < b.len() {
                return Some(b[idx]);
            }
            idx -= b.len();
        }
        None
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) -> Result<()> {
        self.version += 1;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            if idx < w.data.len() {
                w.data[idx] = value;
                return Ok(());
            }
            idx -= w.data.len();
            if idx < b.len() {
                b[idx] = value;
                return Ok(());
            }
            idx -= b.len();
        }
        Err(Error::ShapeMismatch("set_param index"))
    }

    /// Gradient value at the same linear index used by `param`.
    pub fn grad_at(grads: &Gradients, mut idx: usize) -> Option<f64> {
        for (w, b) in grads.weights.iter().zip(&grads.biases) {
            if idx < w.data.len() {
                return Some(w.data[idx]);
            }
            idx -= w.data.len();
            if idx < b.len() {
                return Some(b[idx]);
            }
            idx -= b.len();
        }
        None
    }

    pub fn params_equal(&self, other: &Mlp) -> bool {
        self.dims == other.dims
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.data == b.data)
            && self.biases == other.biases
    }

    /// Writes the snapshot: a one-line JSON shape header followed by the raw
    /// parameters as little-endian 64-bit floats.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SnapshotHeader {
            dims: self.dims.clone(),
            head: match self.head {
                Head::Linear => "linear".into(),
                Head::Tanh { .. } => "tanh".into(),
            },
            scale: match self.head {
                Head::Linear => None,
                Head::Tanh { scale } => Some(scale),
            },
            count: self.param_count(),
        };
        let mut line = serde_json::to_string(&header)
            .map_err(|e| Error::InvalidSnapshot(e.to_string()))?;
        line.push('\n');
        w.write_all(line.as_bytes())?;
        for (wm, b) in self.weights.iter().zip(&self.biases) {
            for v in &wm.data {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in b {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::InvalidSnapshot("missing header line".into()))?;
        let header: SnapshotHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::InvalidSnapshot(e.to_string()))?;
        let head = match header.head.as_str() {
            "linear" => Head::Linear,
            "tanh" => Head::Tanh {
                scale: header
                    .scale
                    .ok_or_else(|| Error::InvalidSnapshot("tanh head without scale".into()))?,
            },
            other => return Err(Error::InvalidSnapshot(format!("unknown head '{other}'"))),
        };
        let payload = &bytes[newline + 1..];
        if payload.len() != header.count * 8 {
            return Err(Error::InvalidSnapshot(format!(
                "expected {} parameter bytes, got {}",
                header.count * 8,
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..header.dims.len() - 1 {
            let (fan_in, fan_out) = (header.dims[l], header.dims[l + 1]);
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in &mut w.data {
                *v = values.next().unwrap();
            }
            let mut b = vec![0.0; fan_out];
            for v in &mut b {
                *v = values.next().unwrap();
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            dims: header.dims,
            weights,
            biases,
            head,
            version: 0,
        })
    }

    pub fn save_snapshot<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_snapshot(std::fs::File::create(path)?)
    }

    pub fn load_snapshot<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_snapshot(std::fs::File::open(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    dims: Vec<usize>,
    head: String,
    scale: Option<f64>,
    count: usize,
}

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Mlp {
    /// One Adam update with the given loss gradients.
    pub fn adam_step(&mut self, state: &mut AdamState, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != self.weights.len() {
            return Err(Error::ShapeMismatch("adam_step"));
        }
        for (gw, w) in grads.weights.iter().zip(&self.weights) {
            if gw.rows != w.rows || gw.cols != w.cols {
                return Err(Error::ShapeMismatch("adam_step weights"));
            }
            if gw.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("adam gradients"));
            }
        }
        for gb in &grads.biases {
            if gb.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("adam gradients"));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - state.beta1.powi(t);
        let bc2 = 1.0 - state.beta2.powi(t);
        let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for l in 0..self.weights.len() {
            apply(
                &mut self.weights[l].data,
                &grads.weights[l].data,
                &mut state.m.weights[l].data,
                &mut state.v.weights[l].data,
            );
            apply(
                &mut self.biases[l],
                &grads.biases[l],
                &mut state.m.biases[l],
                &mut state.v.biases[l],
            );
        }
        self.version += 1;
        Ok(())
    }
}
