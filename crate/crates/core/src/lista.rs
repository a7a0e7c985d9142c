//! The unfolded network. Layer `i` maps the previous estimate to
//! `soft(V_i y + W_i x_{i-1}, theta_i)`; every function here works on whole
//! batches stored column-wise (signals N x S, measurements M x S).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, SensingMatrix};
use crate::error::{Error, Result};
use crate::ista::{default_step, shrink};
use crate::linalg::{matmul, matmul_into};
use crate::rng::stream_rng;
use crate::textio::{self, Lines};

/// Threshold given to randomly initialized layers.
pub const RANDOM_INIT_THETA: f64 = 0.05;

/// Trainables of one layer: `V` is N x M, `W` is N x N, `theta >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub v: Array2<f64>,
    pub w: Array2<f64>,
    pub theta: f64,
}

impl LayerParams {
    pub fn zeros(m: usize, n: usize) -> Self {
        LayerParams {
            v: Array2::zeros((n, m)),
            w: Array2::zeros((n, n)),
            theta: 0.0,
        }
    }

    /// `(M, N)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.v.ncols(), self.v.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = self.dims();
        if self.w.dim() != (n, n) {
            return Err(Error::mismatch(format!("W of shape {n}x{n}"), format!("{:?}", self.w.dim())));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::param("theta", format!("{} is negative", self.theta)));
        }
        let finite = self.theta.is_finite()
            && self.v.iter().all(|v| v.is_finite())
            && self.w.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("layer", "non-finite parameter"));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimensions(format!("layer with M={m}, N={n}")));
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.v.len() + self.w.len() + 1
    }

    /// Serialized as a one-layer checkpoint; this is the wire payload a
    /// client sends to the server.
    pub fn to_payload(&self) -> Vec<u8> {
        let (m, n) = self.dims();
        let mut out = format!("1 {m} {n}\n");
        push_layer(&mut out, self);
        out.into_bytes()
    }

    pub fn from_payload(bytes: &[u8]) -> Result<LayerParams> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        let net = NetworkParams::from_checkpoint(text)?;
        if net.depth() != 1 {
            return Err(Error::mismatch("one layer", net.depth()));
        }
        Ok(net.layers.into_iter().next().unwrap())
    }

    fn hash_into(&self, h: &mut DefaultHasher) {
        self.theta.to_bits().hash(h);
        for v in self.v.iter().chain(self.w.iter()) {
            v.to_bits().hash(h);
        }
    }

    /// Multiplies every weight, including the threshold, by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.v.mapv_inplace(|v| v * factor);
        self.w.mapv_inplace(|v| v * factor);
        self.theta *= factor;
    }
}

fn push_layer(out: &mut String, layer: &LayerParams) {
    out.push_str(&format!("{:e}\n", layer.theta));
    textio::push_matrix(out, layer.v.view());
    textio::push_matrix(out, layer.w.view());
}

/// Ordered layers `1..=l` sharing one `(M, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<LayerParams>,
    m: usize,
    n: usize,
}

impl NetworkParams {
    pub fn empty(m: usize, n: usize) -> Self {
        NetworkParams {
            layers: Vec::new(),
            m,
            n,
        }
    }

    pub fn from_layers(m: usize, n: usize, layers: Vec<LayerParams>) -> Result<Self> {
        let mut net = NetworkParams::empty(m, n);
        for layer in layers {
            net.push(layer)?;
        }
        Ok(net)
    }

    pub fn push(&mut self, layer: LayerParams) -> Result<()> {
        layer.validate()?;
        if layer.dims() != (self.m, self.n) {
            return Err(Error::mismatch(
                format!("layer with (M, N) = ({}, {})", self.m, self.n),
                format!("{:?}", layer.dims()),
            ));
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<LayerParams> {
        self.layers.pop()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// First `depth` layers.
    pub fn prefix(&self, depth: usize) -> NetworkParams {
        NetworkParams {
            layers: self.layers[..depth.min(self.depth())].to_vec(),
            m: self.m,
            n: self.n,
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(LayerParams::num_values).sum()
    }

    /// Hash over the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.depth(), self.m, self.n).hash(&mut h);
        for layer in &self.layers {
            layer.hash_into(&mut h);
        }
        h.finish()
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.scale(factor);
        }
    }

    /// In-place `theta_i -= lrs[i] * grad_i`, then clamps every threshold at
    /// zero. Returns how many thresholds were clamped.
    pub fn descend(&mut self, grads: &GradientBundle, lrs: &[f64]) -> Result<usize> {
        self.check_congruent(grads)?;
        if lrs.len() != self.depth() {
            return Err(Error::mismatch(format!("{} learning rates", self.depth()), lrs.len()));
        }
        let mut clamped = 0;
        for ((layer, g), &lr) in self.layers.iter_mut().zip(&grads.layers).zip(lrs) {
            if lr == 0.0 {
                continue;
            }
            layer.v.scaled_add(-lr, &g.v);
            layer.w.scaled_add(-lr, &g.w);
            layer.theta -= lr * g.theta;
            if layer.theta < 0.0 {
                layer.theta = 0.0;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::debug!("clamped {clamped} negative threshold(s) to zero");
        }
        Ok(clamped)
    }

    fn check_congruent(&self, grads: &GradientBundle) -> Result<()> {
        if grads.layers.len() != self.depth() {
            return Err(Error::mismatch(format!("{} layer gradients", self.depth()), grads.layers.len()));
        }
        for (p, g) in self.layers.iter().zip(&grads.layers) {
            if p.v.dim() != g.v.dim() || p.w.dim() != g.w.dim() {
                return Err(Error::mismatch("gradient congruent with parameters", "other shape"));
            }
        }
        Ok(())
    }

    /// Text checkpoint: `L M N`, then per layer the threshold line, the
    /// N rows of `V` and the N rows of `W`.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{} {} {}\n", self.depth(), self.m, self.n);
        for layer in &self.layers {
            push_layer(&mut out, layer);
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<NetworkParams> {
        let mut lines = Lines::new(text);
        let header = lines.usizes(3)?;
        let (depth, m, n) = (header[0], header[1], header[2]);
        let mut net = NetworkParams::empty(m, n);
        for _ in 0..depth {
            let theta = lines.floats(1)?[0];
            let v = lines.matrix(n, m)?;
            let w = lines.matrix(n, n)?;
            net.push(LayerParams { v, w, theta })?;
        }
        lines.expect_end()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_file(path, self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<NetworkParams> {
        NetworkParams::from_checkpoint(&textio::read_file(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    /// `V = t A^T`, `W = I - t A^T A`, `theta = lambda t`, plus optional
    /// Gaussian jitter of standard deviation `noise` on `V` and `W`.
    Ista {
        lambda: f64,
        step: Option<f64>,
        #[serde(default)]
        noise: f64,
    },
    /// Gaussian entries with standard deviation `scale / sqrt(M)`.
    Random { scale: f64 },
}

pub fn init_layer(
    m: usize,
    n: usize,
    a: Option<&SensingMatrix>,
    mode: &InitMode,
    seed: u64,
) -> Result<LayerParams> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions(format!("M={m}, N={n}")));
    }
    let mut rng = stream_rng(seed, 0);
    let layer = match *mode {
        InitMode::Ista { lambda, step, noise } => {
            let a = a.ok_or_else(|| Error::param("A", "ISTA initialization needs the sensing matrix"))?;
            if (a.rows(), a.cols()) != (m, n) {
                return Err(Error::mismatch(format!("{m}x{n} sensing matrix"), format!("{}x{}", a.rows(), a.cols())));
            }
            if !(lambda >= 0.0) {
                return Err(Error::param("lambda", format!("{lambda} is negative")));
            }
            let a = a.entries();
            let t = step.unwrap_or_else(|| default_step(a.view()));
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("step", format!("{t} is not positive")));
            }
            let mut v = a.t().mapv(|x| t * x);
            let mut w = Array2::eye(n) - a.t().dot(a) * t;
            if noise > 0.0 {
                let jitter = Normal::new(0.0, noise).map_err(|e| Error::param("noise", e.to_string()))?;
                v.mapv_inplace(|x| x + jitter.sample(&mut rng));
                w.mapv_inplace(|x| x + jitter.sample(&mut rng));
            }
            LayerParams { v, w, theta: lambda * t }
        }
        InitMode::Random { scale } => {
            let normal = Normal::new(0.0, scale / (m as f64).sqrt())
                .map_err(|e| Error::param("scale", e.to_string()))?;
            let v = Array2::from_shape_simple_fn((n, m), || normal.sample(&mut rng));
            let w = Array2::from_shape_simple_fn((n, n), || normal.sample(&mut rng));
            LayerParams { v, w, theta: RANDOM_INIT_THETA }
        }
    };
    layer.validate()?;
    Ok(layer)
}

/// Training or evaluation batch with samples stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Ground-truth signals, N x S.
    pub x: Array2<f64>,
    /// Measurements, M x S.
    pub y: Array2<f64>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Batch {
            x: ds.signals(),
            y: ds.measurements(),
        }
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        Ok(Batch::from_dataset(&Dataset::new(samples.to_vec())?))
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    pub fn select(&self, cols: &[usize]) -> Batch {
        Batch {
            x: self.x.select(ndarray::Axis(1), cols),
            y: self.y.select(ndarray::Axis(1), cols),
        }
    }
}

/// Pre-activations `z_i` and estimates `x_i` of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x0: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.post.len()
    }

    /// Estimate after the last layer, or `x0` for an empty network.
    pub fn final_estimate(&self) -> &Array2<f64> {
        self.post.last().unwrap_or(&self.x0)
    }

    /// Input of layer `i` (0-based).
    fn input(&self, i: usize) -> &Array2<f64> {
        if i == 0 {
            &self.x0
        } else {
            &self.post[i - 1]
        }
    }
}

fn check_batch_dims(net: &NetworkParams, y: ArrayView2<'_, f64>, x0: ArrayView2<'_, f64>) -> Result<()> {
    let (m, n) = net.dims();
    if y.nrows() != m {
        return Err(Error::mismatch(format!("measurements with {m} rows"), y.nrows()));
    }
    if x0.dim() != (n, y.ncols()) {
        return Err(Error::mismatch(format!("initial estimate of shape {n}x{}", y.ncols()), format!("{:?}", x0.dim())));
    }
    Ok(())
}

fn is_zero(a: ArrayView2<'_, f64>) -> bool {
    a.iter().all(|v| *v == 0.0)
}

/// Batched forward pass from initial estimates `x0` (N x S).
pub fn forward_batch(
    net: &NetworkParams,
    y: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
) -> Result<ForwardTrace> {
    check_batch_dims(net, y, x0)?;
    let mut pre = Vec::with_capacity(net.depth());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let input = post.last().map_or(x0, |x| x.view());
        let mut z = matmul(layer.v.view(), y);
        if !is_zero(input) {
            matmul_into(layer.w.view(), input, z.view_mut(), true);
        }
        let theta = layer.theta;
        post.push(z.mapv(|v| shrink(v, theta)));
        pre.push(z);
    }
    Ok(ForwardTrace {
        x0: x0.to_owned(),
        pre,
        post,
    })
}

/// Single-sample forward pass; `x0` defaults to zero.
pub fn forward(
    net: &NetworkParams,
    y: ArrayView1<'_, f64>,
    x0: Option<ArrayView1<'_, f64>>,
) -> Result<ForwardTrace> {
    let x0 = match x0 {
        Some(x0) => x0.to_owned(),
        None => Array1::zeros(net.dims().1),
    };
    let y = y.to_owned().insert_axis(ndarray::Axis(1));
    forward_batch(net, y.view(), x0.insert_axis(ndarray::Axis(1)).view())
}

/// Which layers contribute a squared-error term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Sum of every layer's squared error.
    #[default]
    AllLayers,
    /// Only the deepest layer's squared error.
    LastLayer,
}

impl LossScope {
    fn includes(self, layer: usize, depth: usize) -> bool {
        match self {
            LossScope::AllLayers => true,
            LossScope::LastLayer => layer + 1 == depth,
        }
    }
}

fn sq_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

fn trace_loss(trace: &ForwardTrace, target: &Array2<f64>, scope: LossScope) -> f64 {
    let depth = trace.depth();
    trace
        .post
        .iter()
        .enumerate()
        .filter(|(i, _)| scope.includes(*i, depth))
        .map(|(_, est)| sq_norm(&(est - target)))
        .sum()
}

/// Sum over samples and layers of `||x - x_hat_i||^2`, from zero initial
/// estimates.
pub fn loss(net: &NetworkParams, batch: &Batch, scope: LossScope) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let x0 = Array2::zeros(batch.x.dim());
    let trace = forward_batch(net, batch.y.view(), x0.view())?;
    Ok(trace_loss(&trace, &batch.x, scope))
}

/// Per-layer gradient of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub v: Array2<f64>,
    pub w: Array2<f64>,
    pub theta: f64,
}

/// Gradients shaped like the `NetworkParams` they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
}

impl GradientBundle {
    pub fn zeros_like(net: &NetworkParams) -> Self {
        let (m, n) = net.dims();
        GradientBundle {
            layers: (0..net.depth())
                .map(|_| LayerGrad {
                    v: Array2::zeros((n, m)),
                    w: Array2::zeros((n, n)),
                    theta: 0.0,
                })
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.v.iter().chain(g.w.iter()).chain(std::iter::once(&g.theta)))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Loss and exact reverse-mode gradient for initial estimates `x0`.
///
/// The shrinkage derivative is 1 on the active set `|z| > theta` and 0
/// elsewhere, including the kink itself; the threshold derivative is
/// `-sign(z)` on the active set.
pub fn loss_and_grad_from(
    net: &NetworkParams,
    y: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
    scope: LossScope,
) -> Result<(f64, GradientBundle)> {
    if y.ncols() == 0 {
        return Err(Error::Empty("batch"));
    }
    if target.dim() != x0.dim() {
        return Err(Error::mismatch(format!("targets of shape {:?}", x0.dim()), format!("{:?}", target.dim())));
    }
    let trace = forward_batch(net, y, x0)?;
    let depth = net.depth();
    let n = net.dims().1;
    let mut grads = Vec::with_capacity(depth);
    let mut loss = 0.0;
    let mut upstream: Option<Array2<f64>> = None;
    for i in (0..depth).rev() {
        let layer = &net.layers()[i];
        let mut g_x = upstream.take().unwrap_or_else(|| Array2::zeros(x0.dim()));
        if scope.includes(i, depth) {
            let residual = &trace.post[i] - &target;
            loss += sq_norm(&residual);
            g_x.scaled_add(2.0, &residual);
        }
        let theta = layer.theta;
        let mut g_theta = 0.0;
        Zip::from(&mut g_x).and(&trace.pre[i]).for_each(|g, &z| {
            let sign = f64::from(u8::from(z > theta)) - f64::from(u8::from(z < -theta));
            g_theta -= sign * *g;
            *g = if sign == 0.0 { 0.0 } else { *g };
        });
        let g_z = g_x;
        let g_v = matmul(g_z.view(), y.t());
        let input = trace.input(i);
        let g_w = if is_zero(input.view()) {
            Array2::zeros((n, n))
        } else {
            matmul(g_z.view(), input.t())
        };
        if i > 0 {
            upstream = Some(matmul(layer.w.t(), g_z.view()));
        }
        grads.push(LayerGrad {
            v: g_v,
            w: g_w,
            theta: g_theta,
        });
    }
    grads.reverse();
    Ok((loss, GradientBundle { layers: grads }))
}

/// Gradient of [`loss`] from zero initial estimates.
pub fn backward(net: &NetworkParams, batch: &Batch, scope: LossScope) -> Result<GradientBundle> {
    let x0 = Array2::zeros(batch.x.dim());
    loss_and_grad_from(net, batch.y.view(), x0.view(), batch.x.view(), scope).map(|(_, g)| g)
}

/// `params - lr * grads` with thresholds clamped at zero.
pub fn sgd_step(net: &NetworkParams, grads: &GradientBundle, lr: f64) -> Result<NetworkParams> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::param("lr", format!("{lr} is not a non-negative number")));
    }
    let mut out = net.clone();
    out.descend(grads, &vec![lr; net.depth()])?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, generate_sensing_matrix, MagnitudeDist};
    use crate::ista::ista_step;
    use ndarray::array;

    fn random_net(m: usize, n: usize, depth: usize, seed: u64) -> NetworkParams {
        let layers = (0..depth)
            .map(|i| {
                let mut l = init_layer(m, n, None, &InitMode::Random { scale: 1.0 }, seed + i as u64).unwrap();
                l.theta = 0.1;
                l
            })
            .collect();
        NetworkParams::from_layers(m, n, layers).unwrap()
    }

    fn batch(m: usize, n: usize, s: usize, seed: u64) -> Batch {
        let a = generate_sensing_matrix(m, n, seed).unwrap();
        Batch::from_dataset(&build_dataset(&a, s, 0.4, &MagnitudeDist::default(), seed + 1).unwrap())
    }

    #[test]
    fn empty_network_returns_initial_estimate() {
        let net = NetworkParams::empty(2, 3);
        let x0 = array![1.0, 2.0, 3.0];
        let trace = forward(&net, array![0.5, 0.5].view(), Some(x0.view())).unwrap();
        assert_eq!(trace.final_estimate().column(0), x0);
    }

    #[test]
    fn zero_layer_outputs_zero() {
        let mut layer = LayerParams::zeros(2, 3);
        layer.theta = 0.7;
        let net = NetworkParams::from_layers(2, 3, vec![layer]).unwrap();
        let trace = forward(&net, array![4.0, -1.0].view(), None).unwrap();
        assert_eq!(trace.final_estimate(), &Array2::<f64>::zeros((3, 1)));
    }

    #[test]
    fn ista_layer_matches_ista_step() {
        let a = generate_sensing_matrix(5, 10, 3).unwrap();
        let (lambda, t) = (0.05, 0.2);
        let mode = InitMode::Ista { lambda, step: Some(t), noise: 0.0 };
        let layer = init_layer(5, 10, Some(&a), &mode, 0).unwrap();
        assert_eq!(layer.theta, lambda * t);
        let net = NetworkParams::from_layers(5, 10, vec![layer]).unwrap();
        let y = array![0.3, -0.2, 1.0, 0.0, 0.4];
        let x0 = Array1::from_shape_fn(10, |i| (i as f64 - 4.0) * 0.1);
        let got = forward(&net, y.view(), Some(x0.view())).unwrap();
        let want = ista_step(a.entries().view(), y.view(), x0.view(), lambda, t).unwrap();
        for (g, w) in got.final_estimate().column(0).iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn ista_init_on_orthonormal_rows() {
        // Rows of A are orthonormal, so with t = 1, W = I - A^T A is the
        // projector onto the orthogonal complement of range(A^T).
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = array![[s, s, 0.0, 0.0], [0.0, 0.0, s, s]];
        // Columns have norm 1/sqrt(2); scale to satisfy the unit-column type
        // and compensate through t = 2.
        let unit = SensingMatrix::from_unnormalized(a.clone()).unwrap();
        let layer = init_layer(2, 4, Some(&unit), &InitMode::Ista { lambda: 0.0, step: Some(0.5), noise: 0.0 }, 0).unwrap();
        let w = &layer.w;
        let proj = Array2::<f64>::eye(4) - a.t().dot(&a);
        for (g, e) in w.iter().zip(proj.iter()) {
            assert!((g - e).abs() < 1e-15);
        }
        // W annihilates range(A^T) and fixes its complement.
        for row in a.rows() {
            assert!(w.dot(&row).iter().all(|v| v.abs() < 1e-15));
        }
        let comp = array![s, -s, 0.0, 0.0];
        assert!((w.dot(&comp) - &comp).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn init_modes() {
        let a = generate_sensing_matrix(3, 6, 1).unwrap();
        let mode = InitMode::Ista { lambda: 0.1, step: None, noise: 0.0 };
        assert!(init_layer(3, 6, None, &mode, 0).is_err());
        assert!(init_layer(4, 6, Some(&a), &mode, 0).is_err());
        let r = InitMode::Random { scale: 0.1 };
        let l1 = init_layer(3, 6, None, &r, 9).unwrap();
        assert_eq!(l1, init_layer(3, 6, None, &r, 9).unwrap());
        assert_ne!(l1, init_layer(3, 6, None, &r, 10).unwrap());
        assert_eq!(l1.theta, RANDOM_INIT_THETA);
        let noisy = InitMode::Ista { lambda: 0.1, step: Some(0.2), noise: 1e-3 };
        let clean = InitMode::Ista { lambda: 0.1, step: Some(0.2), noise: 0.0 };
        let n1 = init_layer(3, 6, Some(&a), &noisy, 1).unwrap();
        let c = init_layer(3, 6, Some(&a), &clean, 1).unwrap();
        assert_ne!(n1, c);
        assert!((&n1.v - &c.v).iter().all(|d| d.abs() < 1e-2));
    }

    #[test]
    fn loss_examples() {
        let b = batch(3, 6, 3, 5);
        let zero = NetworkParams::from_layers(3, 6, vec![LayerParams::zeros(3, 6)]).unwrap();
        let power: f64 = b.x.iter().map(|v| v * v).sum();
        assert_eq!(loss(&zero, &b, LossScope::AllLayers).unwrap(), power);

        let net = random_net(3, 6, 2, 40);
        let total = loss(&net, &b, LossScope::AllLayers).unwrap();
        let mut naive = 0.0;
        for s in 0..b.len() {
            let trace = forward(&net, b.y.column(s), None).unwrap();
            for est in &trace.post {
                let d = &est.column(0) - &b.x.column(s);
                naive += d.dot(&d);
            }
        }
        assert!((total - naive).abs() <= 1e-12 * naive.max(1.0));
        let empty = Batch { x: Array2::zeros((6, 0)), y: Array2::zeros((3, 0)) };
        assert!(loss(&net, &empty, LossScope::AllLayers).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        // V = 0, W = I, theta = 0 maps x0 to itself; start at the target.
        let layer = LayerParams { v: Array2::zeros((3, 2)), w: Array2::eye(3), theta: 0.0 };
        let net = NetworkParams::from_layers(2, 3, vec![layer.clone(), layer]).unwrap();
        let x = array![[1.0, -2.0], [0.5, 0.0], [-3.0, 1.0]];
        let y = Array2::zeros((2, 2));
        let (l, g) = loss_and_grad_from(&net, y.view(), x.view(), x.view(), LossScope::AllLayers).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_layer_v_gradient_matches_hand_formula() {
        // 2x3 instance: M = 2, N = 3.
        let layer = LayerParams {
            v: array![[0.5, -0.2], [0.1, 0.3], [-0.4, 0.6]],
            w: array![[0.9, 0.0, 0.1], [0.0, 0.8, 0.0], [0.2, 0.0, 0.7]],
            theta: 0.1,
        };
        let net = NetworkParams::from_layers(2, 3, vec![layer.clone()]).unwrap();
        let y = array![[1.0], [-0.5]];
        let x0 = array![[0.2], [0.0], [-0.1]];
        let x = array![[1.0], [0.0], [-1.0]];
        let (_, g) = loss_and_grad_from(&net, y.view(), x0.view(), x.view(), LossScope::AllLayers).unwrap();
        let z = layer.v.dot(&y) + layer.w.dot(&x0);
        let est = z.mapv(|v| shrink(v, 0.1));
        let r = &x - &est;
        let mask = z.mapv(|v| if v.abs() > 0.1 { 1.0 } else { 0.0 });
        let expected = (&mask * &r).dot(&y.t()) * -2.0;
        for (a, b) in g.layers[0].v.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_edge_cases() {
        let b = batch(3, 6, 4, 2);
        let net = random_net(3, 6, 1, 3);
        let g = backward(&net, &b, LossScope::AllLayers).unwrap();
        assert_eq!(sgd_step(&net, &g, 0.0).unwrap(), net);
        assert_eq!(sgd_step(&net, &GradientBundle::zeros_like(&net), 0.5).unwrap(), net);
        let before = loss(&net, &b, LossScope::AllLayers).unwrap();
        let after = loss(&sgd_step(&net, &g, 1e-6).unwrap(), &b, LossScope::AllLayers).unwrap();
        assert!(after < before);
        assert!(sgd_step(&net, &g, -1.0).is_err());
        assert!(sgd_step(&random_net(3, 6, 2, 3), &g, 0.1).is_err());
    }

    #[test]
    fn thresholds_are_clamped() {
        let mut net = random_net(2, 3, 1, 1);
        let mut g = GradientBundle::zeros_like(&net);
        g.layers[0].theta = 100.0;
        let clamped = net.descend(&g, &[1.0]).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(net.layers()[0].theta, 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let net = random_net(3, 5, 2, 77);
        let text = net.to_checkpoint();
        assert!(text.starts_with("2 3 5\n"));
        let back = NetworkParams::from_checkpoint(&text).unwrap();
        assert_eq!(back.fingerprint(), net.fingerprint());
        let payload = net.layers()[1].to_payload();
        assert_eq!(LayerParams::from_payload(&payload).unwrap(), net.layers()[1]);
        assert!(NetworkParams::from_checkpoint("1 3 5\n0.1\n").is_err());
        assert!(LayerParams::from_payload(text.as_bytes()).is_err());
    }

    #[test]
    fn push_rejects_inconsistent_layers() {
        let mut net = NetworkParams::empty(3, 5);
        assert!(net.push(LayerParams::zeros(2, 5)).is_err());
        let mut neg = LayerParams::zeros(3, 5);
        neg.theta = -0.1;
        assert!(net.push(neg).is_err());
        let mut nan = LayerParams::zeros(3, 5);
        nan.v[[0, 0]] = f64::NAN;
        assert!(net.push(nan).is_err());
    }
}
