//! Minimal f64 layers with explicit forward caches and backward passes.
//!
//! Activations are row-major `rows x dim` buffers. Gradients are accumulated into a
//! structurally identical parameter container, so `grads.visit_mut` and
//! `params.visit` walk tensors in the same order.

use crate::rng::Cursor;

/// Named view of one parameter tensor.
#[derive(Debug, Clone)]
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// A container of parameter tensors with a fixed traversal order.
pub trait Module {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>);
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn named_tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        self.tensors("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    fn zero(&mut self) {
        let mut ts = Vec::new();
        self.tensors_mut(&mut ts);
        for t in ts {
            t.fill(0.0);
        }
    }

    /// `self += scale * other` for a structurally identical module.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.named_tensors();
        let mut dst = Vec::new();
        self.tensors_mut(&mut dst);
        assert_eq!(src.len(), dst.len());
        for (d, s) in dst.into_iter().zip(src) {
            for (a, b) in d.iter_mut().zip(s.data) {
                *a += scale * b;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `d_out x d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            w: vec![0.0; d_in * d_out],
            b: vec![0.0; d_out],
        }
    }

    /// Uniform `(-1/sqrt(d_in), 1/sqrt(d_in))` for weights and bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut Cursor) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut l = Self::zeros(d_in, d_out);
        for v in l.w.iter_mut().chain(l.b.iter_mut()) {
            *v = rng.uniform_range(-bound, bound);
        }
        l
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.d_in);
        let mut y = vec![0.0; rows * self.d_out];
        for (xr, yr) in x.chunks_exact(self.d_in).zip(y.chunks_exact_mut(self.d_out)) {
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = self.b[o] + dot(xr, &self.w[o * self.d_in..(o + 1) * self.d_in]);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; rows * self.d_in];
        self.backward_into(x, dy, grad, Some(&mut dx));
        dx
    }

    /// Like [`Linear::backward`], skipping `dL/dx` when `dx` is `None`.
    pub fn backward_into(&self, x: &[f64], dy: &[f64], grad: &mut Linear, mut dx: Option<&mut [f64]>) {
        for (r, (xr, dyr)) in x
            .chunks_exact(self.d_in)
            .zip(dy.chunks_exact(self.d_out))
            .enumerate()
        {
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.b[o] += g;
                axpy(&mut grad.w[o * self.d_in..(o + 1) * self.d_in], g, xr);
                if let Some(dx) = dx.as_deref_mut() {
                    axpy(
                        &mut dx[r * self.d_in..(r + 1) * self.d_in],
                        g,
                        &self.w[o * self.d_in..(o + 1) * self.d_in],
                    );
                }
            }
        }
    }
}

impl Module for Linear {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor {
            name: join(prefix, "weight"),
            shape: vec![self.d_out, self.d_in],
            data: &self.w,
        });
        out.push(Tensor {
            name: join(prefix, "bias"),
            shape: vec![self.d_out],
            data: &self.b,
        });
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Normalized activations and inverse std per row.
#[derive(Debug, Clone, Default)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let rows = x.len() / self.dim;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = Vec::with_capacity(rows);
        for ((xr, yr), hr) in x
            .chunks_exact(self.dim)
            .zip(y.chunks_exact_mut(self.dim))
            .zip(xhat.chunks_exact_mut(self.dim))
        {
            let mean = xr.iter().sum::<f64>() / self.dim as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.dim as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            for i in 0..self.dim {
                hr[i] = (xr[i] - mean) * rs;
                yr[i] = hr[i] * self.gamma[i] + self.beta[i];
            }
            rstd.push(rs);
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
        let d = self.dim;
        let mut dx = vec![0.0; dy.len()];
        let mut dxhat = vec![0.0; d];
        for (r, (dyr, dxr)) in dy.chunks_exact(d).zip(dx.chunks_exact_mut(d)).enumerate() {
            let hr = &cache.xhat[r * d..(r + 1) * d];
            let mut mean_g = 0.0;
            let mut mean_gh = 0.0;
            for i in 0..d {
                grad.gamma[i] += dyr[i] * hr[i];
                grad.beta[i] += dyr[i];
                dxhat[i] = dyr[i] * self.gamma[i];
                mean_g += dxhat[i];
                mean_gh += dxhat[i] * hr[i];
            }
            mean_g /= d as f64;
            mean_gh /= d as f64;
            let rs = cache.rstd[r];
            for i in 0..d {
                dxr[i] = rs * (dxhat[i] - mean_g - hr[i] * mean_gh);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor {
            name: join(prefix, "gamma"),
            shape: vec![self.dim],
            data: &self.gamma,
        });
        out.push(Tensor {
            name: join(prefix, "beta"),
            shape: vec![self.dim],
            data: &self.beta,
        });
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

/// Rotates interleaved pairs `(x[2k], x[2k+1])` by `angles[k]`.
#[inline]
pub fn rotate_pairs(x: &mut [f64], angles: &[f64]) {
    debug_assert_eq!(x.len(), 2 * angles.len());
    for (pair, &a) in x.chunks_exact_mut(2).zip(angles) {
        let (s, c) = a.sin_cos();
        let (re, im) = (pair[0], pair[1]);
        pair[0] = re * c - im * s;
        pair[1] = re * s + im * c;
    }
}

/// Multi-head self-attention over `batch` independent sequences of length `seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub dim: usize,
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct AttentionCache {
    batch: usize,
    seq: usize,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    merged: Vec<f64>,
}

impl Attention {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        assert_eq!(dim % heads, 0);
        Self {
            dim,
            heads,
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
        }
    }

    pub fn init(dim: usize, heads: usize, rng: &mut Cursor) -> Self {
        assert_eq!(dim % heads, 0);
        Self {
            dim,
            heads,
            q: Linear::init(dim, dim, rng),
            k: Linear::init(dim, dim, rng),
            v: Linear::init(dim, dim, rng),
            o: Linear::init(dim, dim, rng),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `x` is `batch * seq` rows. `angles`, when given, holds `head_dim / 2` rotation
    /// angles per row, applied to queries and keys of every head.
    pub fn forward(
        &self,
        x: &[f64],
        batch: usize,
        seq: usize,
        angles: Option<&[f64]>,
    ) -> (Vec<f64>, AttentionCache) {
        let rows = batch * seq;
        let hd = self.head_dim();
        let half = hd / 2;
        let mut q = self.q.forward(x, rows);
        let mut k = self.k.forward(x, rows);
        let v = self.v.forward(x, rows);
        if let Some(a) = angles {
            debug_assert_eq!(a.len(), rows * half);
            for r in 0..rows {
                let ang = &a[r * half..(r + 1) * half];
                for h in 0..self.heads {
                    let span = r * self.dim + h * hd..r * self.dim + (h + 1) * hd;
                    rotate_pairs(&mut q[span.clone()], ang);
                    rotate_pairs(&mut k[span], ang);
                }
            }
        }
        let scale = 1.0 / (hd as f64).sqrt();
        let mut probs = vec![0.0; batch * self.heads * seq * seq];
        let mut merged = vec![0.0; rows * self.dim];
        for b in 0..batch {
            for h in 0..self.heads {
                let pbase = (b * self.heads + h) * seq * seq;
                for i in 0..seq {
                    let qi = &q[(b * seq + i) * self.dim + h * hd..][..hd];
                    let row = &mut probs[pbase + i * seq..pbase + (i + 1) * seq];
                    for (j, p) in row.iter_mut().enumerate() {
                        let kj = &k[(b * seq + j) * self.dim + h * hd..][..hd];
                        *p = dot(qi, kj) * scale;
                    }
                    softmax_in_place(row);
                    let out = &mut merged[(b * seq + i) * self.dim + h * hd..][..hd];
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v[(b * seq + j) * self.dim + h * hd..][..hd];
                        axpy(out, p, vj);
                    }
                }
            }
        }
        let y = self.o.forward(&merged, rows);
        (
            y,
            AttentionCache {
                batch,
                seq,
                x: x.to_vec(),
                q,
                k,
                v,
                probs,
                merged,
            },
        )
    }

    /// Returns `dL/dx` and, when angles were used, `dL/dangles`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &[f64],
        angles: Option<&[f64]>,
        grad: &mut Attention,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let (batch, seq) = (cache.batch, cache.seq);
        let rows = batch * seq;
        let hd = self.head_dim();
        let half = hd / 2;
        let scale = 1.0 / (hd as f64).sqrt();
        let dmerged = self.o.backward(&cache.merged, dy, rows, &mut grad.o);

        let mut dq = vec![0.0; rows * self.dim];
        let mut dk = vec![0.0; rows * self.dim];
        let mut dv = vec![0.0; rows * self.dim];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..self.heads {
                let pbase = (b * self.heads + h) * seq * seq;
                for i in 0..seq {
                    let ri = (b * seq + i) * self.dim + h * hd;
                    let dout = &dmerged[ri..ri + hd];
                    let prow = &cache.probs[pbase + i * seq..pbase + (i + 1) * seq];
                    let mut inner = 0.0;
                    for j in 0..seq {
                        let rj = (b * seq + j) * self.dim + h * hd;
                        dp[j] = dot(dout, &cache.v[rj..rj + hd]);
                        inner += dp[j] * prow[j];
                        axpy(&mut dv[rj..rj + hd], prow[j], dout);
                    }
                    for j in 0..seq {
                        let ds = prow[j] * (dp[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let rj = (b * seq + j) * self.dim + h * hd;
                        axpy(&mut dq[ri..ri + hd], ds, &cache.k[rj..rj + hd]);
                        axpy(&mut dk[rj..rj + hd], ds, &cache.q[ri..ri + hd]);
                    }
                }
            }
        }

        let dangles = angles.map(|a| {
            let mut da = vec![0.0; rows * half];
            for r in 0..rows {
                let ang = &a[r * half..(r + 1) * half];
                for h in 0..self.heads {
                    let span = r * self.dim + h * hd..r * self.dim + (h + 1) * hd;
                    // d(theta) from rotated outputs (a', b'): -da' b' + db' a'
                    for (t, pair) in (0..half).zip(span.clone().step_by(2)) {
                        let (qa, qb) = (cache.q[pair], cache.q[pair + 1]);
                        let (ka, kb) = (cache.k[pair], cache.k[pair + 1]);
                        da[r * half + t] += -dq[pair] * qb + dq[pair + 1] * qa
                            - dk[pair] * kb
                            + dk[pair + 1] * ka;
                    }
                    let neg: Vec<f64> = ang.iter().map(|v| -v).collect();
                    rotate_pairs(&mut dq[span.clone()], &neg);
                    rotate_pairs(&mut dk[span], &neg);
                }
            }
            da
        });

        let mut dx = self.q.backward(&cache.x, &dq, rows, &mut grad.q);
        self.k.backward_into(&cache.x, &dk, &mut grad.k, Some(&mut dx));
        self.v.backward_into(&cache.x, &dv, &mut grad.v, Some(&mut dx));
        (dx, dangles)
    }
}

impl Module for Attention {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.q.tensors(&join(prefix, "q"), out);
        self.k.tensors(&join(prefix, "k"), out);
        self.v.tensors(&join(prefix, "v"), out);
        self.o.tensors(&join(prefix, "o"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.q.tensors_mut(out);
        self.k.tensors_mut(out);
        self.v.tensors_mut(out);
        self.o.tensors_mut(out);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place. `frozen(name)` excludes tensors by name.
    pub fn step<M: Module>(&mut self, params: &mut M, grads: &M, frozen: impl Fn(&str) -> bool) {
        let names: Vec<String> = grads.named_tensors().iter().map(|t| t.name.clone()).collect();
        let g = grads.named_tensors();
        if self.m.is_empty() {
            let n: usize = g.iter().map(|t| t.data.len()).sum();
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut ps = Vec::new();
        params.tensors_mut(&mut ps);
        let mut offset = 0;
        for ((p, gt), name) in ps.into_iter().zip(&g).zip(&names) {
            let n = gt.data.len();
            if !frozen(name) {
                for i in 0..n {
                    let gi = gt.data[i];
                    let m = &mut self.m[offset + i];
                    let v = &mut self.v[offset + i];
                    *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                    p[i] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                }
            }
            offset += n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn numeric(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn gelu_values_and_grad() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * (1 + erf(1/sqrt 2)) = Phi(1) = 0.841344746
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let n = numeric(&mut |t| gelu(t), x, 1e-5);
            assert!(rel(gelu_grad(x), n) < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = vec![1000.0, 1001.0, 999.0];
        softmax_in_place(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x[1] > x[0] && x[0] > x[2]);
    }

    #[test]
    fn rotation_quarter_turn() {
        let mut x = vec![1.0, 0.0];
        rotate_pairs(&mut x, &[std::f64::consts::FRAC_PI_2]);
        assert!(x[0].abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    /// Scalar probe `sum(c * y)` with fixed random coefficients.
    fn probe(y: &[f64], seed: u64) -> f64 {
        let r = Rng::new(seed, 99);
        y.iter().enumerate().map(|(i, v)| v * r.normal(0, i as u64)).sum()
    }

    fn probe_grad(n: usize, seed: u64) -> Vec<f64> {
        let r = Rng::new(seed, 99);
        (0..n).map(|i| r.normal(0, i as u64)).collect()
    }

    #[test]
    fn linear_and_layernorm_gradients() {
        let mut c = Rng::new(1, 1).cursor();
        let lin = Linear::init(5, 4, &mut c);
        let ln = LayerNorm {
            dim: 4,
            gamma: (0..4).map(|_| 1.0 + 0.3 * c.normal()).collect(),
            beta: (0..4).map(|_| 0.3 * c.normal()).collect(),
        };
        let x: Vec<f64> = (0..15).map(|_| c.normal()).collect();
        let f = |lin: &Linear, ln: &LayerNorm, x: &[f64]| {
            let y = lin.forward(x, 3);
            let (z, _) = ln.forward(&y);
            probe(&z, 5)
        };
        let y = lin.forward(&x, 3);
        let (z, cache) = ln.forward(&y);
        let dz = probe_grad(z.len(), 5);
        let mut gln = LayerNorm { dim: 4, gamma: vec![0.0; 4], beta: vec![0.0; 4] };
        let dy = ln.backward(&cache, &dz, &mut gln);
        let mut glin = Linear::zeros(5, 4);
        let dx = lin.backward(&x, &dy, 3, &mut glin);

        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let n = (f(&lin, &ln, &xp) - f(&lin, &ln, &xm)) / (2.0 * h);
            assert!(rel(dx[i], n) < 1e-6, "dx[{i}]");
        }
        for i in 0..lin.w.len() {
            let mut lp = lin.clone();
            lp.w[i] += h;
            let mut lm = lin.clone();
            lm.w[i] -= h;
            let n = (f(&lp, &ln, &x) - f(&lm, &ln, &x)) / (2.0 * h);
            assert!(rel(glin.w[i], n) < 1e-6, "w[{i}]");
        }
        for i in 0..4 {
            let mut lp = ln.clone();
            lp.gamma[i] += h;
            let mut lm = ln.clone();
            lm.gamma[i] -= h;
            let n = (f(&lin, &lp, &x) - f(&lin, &lm, &x)) / (2.0 * h);
            assert!(rel(gln.gamma[i], n) < 1e-6, "gamma[{i}]");
        }
    }

    #[test]
    fn attention_gradients_with_angles() {
        let mut c = Rng::new(2, 2).cursor();
        let att = Attention::init(8, 2, &mut c);
        let (batch, seq) = (2, 3);
        let x: Vec<f64> = (0..batch * seq * 8).map(|_| c.normal()).collect();
        let angles: Vec<f64> = (0..batch * seq * 2).map(|_| c.normal()).collect();
        let f = |att: &Attention, x: &[f64], a: &[f64]| {
            let (y, _) = att.forward(x, batch, seq, Some(a));
            probe(&y, 7)
        };
        let (y, cache) = att.forward(&x, batch, seq, Some(&angles));
        let dy = probe_grad(y.len(), 7);
        let mut g = Attention::zeros(8, 2);
        let (dx, da) = att.backward(&cache, &dy, Some(&angles), &mut g);
        let da = da.unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let n = (f(&att, &p, &angles) - f(&att, &m, &angles)) / (2.0 * h);
            assert!(rel(dx[i], n) < 1e-6, "dx[{i}] {} vs {n}", dx[i]);
        }
        for i in 0..angles.len() {
            let mut p = angles.clone();
            p[i] += h;
            let mut m = angles.clone();
            m[i] -= h;
            let n = (f(&att, &x, &p) - f(&att, &x, &m)) / (2.0 * h);
            assert!(rel(da[i], n) < 1e-6, "da[{i}] {} vs {n}", da[i]);
        }
        let flat_g = g.flatten();
        let base = att.flatten();
        for i in (0..base.len()).step_by(7) {
            let bump = |d: f64| {
                let mut a = att.clone();
                let mut ts = Vec::new();
                a.tensors_mut(&mut ts);
                let mut idx = i;
                for t in ts {
                    if idx < t.len() {
                        t[idx] += d;
                        break;
                    }
                    idx -= t.len();
                }
                f(&a, &x, &angles)
            };
            let n = (bump(h) - bump(-h)) / (2.0 * h);
            assert!(rel(flat_g[i], n) < 1e-6, "param {i}");
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Linear::zeros(1, 1);
        p.w[0] = 3.0;
        p.b[0] = -2.0;
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let mut g = Linear::zeros(1, 1);
            g.w[0] = 2.0 * p.w[0];
            g.b[0] = 2.0 * p.b[0];
            opt.step(&mut p, &g, |_| false);
        }
        assert!(p.w[0].abs() < 1e-3 && p.b[0].abs() < 1e-3);

        let mut q = Linear::zeros(1, 1);
        let mut g = Linear::zeros(1, 1);
        g.w[0] = 1.0;
        g.b[0] = 1.0;
        let mut opt = Adam::new(0.1);
        opt.step(&mut q, &g, |n| n == "bias");
        assert!(q.w[0] < 0.0);
        assert_eq!(q.b[0], 0.0);
    }
}
