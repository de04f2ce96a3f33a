//! Transformer building blocks with explicit forward caches and backward
//! passes.
//!
//! Activations are row-major token matrices. Attention is computed inside
//! [`Segment`]s so that many independent sequences (tracks, clips, queries)
//! share one projection matmul while attending only within their own group.

use crate::linalg::{gemm_into, matmul, Mat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const NORM_EPS: f64 = 1e-6;

/// Visits every learnable tensor under a hierarchical name.
pub trait Visit {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>));
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>));
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Visit for Mat {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        f(name.to_string(), &self.data, vec![self.rows, self.cols]);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        let shape = vec![self.rows, self.cols];
        f(name.to_string(), &mut self.data, shape);
    }
}

impl Visit for Vec<f64> {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        f(name.to_string(), self, vec![self.len()]);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        let shape = vec![self.len()];
        f(name.to_string(), self, shape);
    }
}

/// Truncated normal (±2σ) initializer.
pub fn trunc_normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Self {
        Self {
            w: Mat::from_vec(d_in, d_out, trunc_normal(rng, d_in * d_out, INIT_STD)),
            b: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows
    }

    pub fn d_out(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = Mat::zeros(x.rows, self.w.cols);
        for r in 0..x.rows {
            y.row_mut(r).copy_from_slice(&self.b);
        }
        gemm_into(1.0, x, false, &self.w, false, 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: &Mat, dy: &Mat, g: &mut Linear) -> Mat {
        self.backward_params(x, dy, g);
        matmul(dy, false, &self.w, true)
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&self, x: &Mat, dy: &Mat, g: &mut Linear) {
        gemm_into(1.0, x, true, dy, false, 1.0, &mut g.w);
        for r in 0..dy.rows {
            for (gb, d) in g.b.iter_mut().zip(dy.row(r)) {
                *gb += d;
            }
        }
    }
}

impl Visit for Linear {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.w.visit(&join(name, "w"), f);
        self.b.visit(&join(name, "b"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.w.visit_mut(&join(name, "w"), f);
        self.b.visit_mut(&join(name, "b"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct NormCache {
    xhat: Mat,
    inv: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gain: vec![1.0; d],
            bias: vec![0.0; d],
        }
    }

    pub fn forward(&self, x: &Mat) -> (Mat, NormCache) {
        let d = x.cols;
        let mut xhat = Mat::zeros(x.rows, d);
        let mut y = Mat::zeros(x.rows, d);
        let mut inv = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + NORM_EPS).sqrt();
            inv.push(s);
            let xh = xhat.row_mut(r);
            for c in 0..d {
                xh[c] = (row[c] - mean) * s;
            }
            let yr = y.row_mut(r);
            for c in 0..d {
                yr[c] = xhat[(r, c)] * self.gain[c] + self.bias[c];
            }
        }
        (y, NormCache { xhat, inv })
    }

    pub fn backward(&self, cache: &NormCache, dy: &Mat, g: &mut LayerNorm) -> Mat {
        let d = dy.cols;
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dxh = vec![0.0; d];
        for r in 0..dy.rows {
            let xh = cache.xhat.row(r);
            let dyr = dy.row(r);
            for c in 0..d {
                g.gain[c] += dyr[c] * xh[c];
                g.bias[c] += dyr[c];
                dxh[c] = dyr[c] * self.gain[c];
            }
            let mean_d = dxh.iter().sum::<f64>() / d as f64;
            let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let s = cache.inv[r];
            let out = dx.row_mut(r);
            for c in 0..d {
                out[c] = s * (dxh[c] - mean_d - xh[c] * mean_dx);
            }
        }
        dx
    }
}

impl Visit for LayerNorm {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.gain.visit(&join(name, "gain"), f);
        self.bias.visit(&join(name, "bias"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.gain.visit_mut(&join(name, "gain"), f);
        self.bias.visit_mut(&join(name, "bias"), f);
    }
}

/// A group of query rows attending to a contiguous range of key rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q0: usize,
    pub qn: usize,
    pub k0: usize,
    pub kn: usize,
}

/// Hyper-parameters of one transformer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub qkv_per_head: usize,
    pub mlp_dim: usize,
}

/// Multi-head attention with RMS-normalised queries and keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub head_dim: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub q_norm: Vec<f64>,
    pub k_norm: Vec<f64>,
}

pub struct AttnCache {
    q: Mat,
    k: Mat,
    v: Mat,
    qn: Mat,
    kn: Mat,
    q_inv: Vec<f64>,
    k_inv: Vec<f64>,
    /// Per segment, `heads × qn × kn` probabilities.
    probs: Vec<Vec<f64>>,
    o: Mat,
}

fn rms_forward(x: &Mat, heads: usize, hd: usize, gain: &[f64]) -> (Mat, Vec<f64>) {
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut inv = Vec::with_capacity(x.rows * heads);
    for r in 0..x.rows {
        for h in 0..heads {
            let seg = &x.row(r)[h * hd..(h + 1) * hd];
            let ms = seg.iter().map(|v| v * v).sum::<f64>() / hd as f64;
            let s = 1.0 / (ms + NORM_EPS).sqrt();
            inv.push(s);
            let out = &mut y.row_mut(r)[h * hd..(h + 1) * hd];
            for i in 0..hd {
                out[i] = seg[i] * s * gain[i];
            }
        }
    }
    (y, inv)
}

fn rms_backward(x: &Mat, inv: &[f64], heads: usize, hd: usize, gain: &[f64], dy: &Mat, dgain: &mut [f64]) -> Mat {
    let mut dx = Mat::zeros(x.rows, x.cols);
    let mut u = vec![0.0; hd];
    for r in 0..x.rows {
        for h in 0..heads {
            let s = inv[r * heads + h];
            let xs = &x.row(r)[h * hd..(h + 1) * hd];
            let dys = &dy.row(r)[h * hd..(h + 1) * hd];
            let mut dot = 0.0;
            for i in 0..hd {
                let xh = xs[i] * s;
                dgain[i] += dys[i] * xh;
                u[i] = dys[i] * gain[i];
                dot += u[i] * xh;
            }
            dot /= hd as f64;
            let out = &mut dx.row_mut(r)[h * hd..(h + 1) * hd];
            for i in 0..hd {
                out[i] = s * (u[i] - xs[i] * s * dot);
            }
        }
    }
    dx
}

impl Attention {
    pub fn new(rng: &mut impl Rng, d_model: usize, d_ctx: usize, heads: usize, head_dim: usize) -> Self {
        let inner = heads * head_dim;
        Self {
            heads,
            head_dim,
            q: Linear::new(rng, d_model, inner),
            k: Linear::new(rng, d_ctx, inner),
            v: Linear::new(rng, d_ctx, inner),
            o: Linear::new(rng, inner, d_model),
            q_norm: vec![1.0; head_dim],
            k_norm: vec![1.0; head_dim],
        }
    }

    /// `key_mask[i] == false` removes context row `i` from every softmax.
    pub fn forward(&self, hq: &Mat, hc: &Mat, segs: &[Segment], key_mask: Option<&[bool]>) -> (Mat, AttnCache) {
        let (nh, hd) = (self.heads, self.head_dim);
        let q = self.q.forward(hq);
        let k = self.k.forward(hc);
        let v = self.v.forward(hc);
        let (qn, q_inv) = rms_forward(&q, nh, hd, &self.q_norm);
        let (kn, k_inv) = rms_forward(&k, nh, hd, &self.k_norm);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut o = Mat::zeros(hq.rows, nh * hd);
        let mut probs = Vec::with_capacity(segs.len());
        for seg in segs {
            let mut p = vec![0.0; nh * seg.qn * seg.kn];
            for h in 0..nh {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..seg.qn {
                    let qi = &qn.row(seg.q0 + i)[cols.clone()];
                    let prow = &mut p[(h * seg.qn + i) * seg.kn..(h * seg.qn + i + 1) * seg.kn];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seg.kn {
                        let kr = seg.k0 + j;
                        if key_mask.is_some_and(|m| !m[kr]) {
                            prow[j] = f64::NEG_INFINITY;
                            continue;
                        }
                        let kj = &kn.row(kr)[cols.clone()];
                        let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    if max == f64::NEG_INFINITY {
                        prow.fill(0.0);
                        continue;
                    }
                    let mut sum = 0.0;
                    for s in prow.iter_mut() {
                        *s = if *s == f64::NEG_INFINITY { 0.0 } else { (*s - max).exp() };
                        sum += *s;
                    }
                    for s in prow.iter_mut() {
                        *s /= sum;
                    }
                    let orow = &mut o.row_mut(seg.q0 + i)[cols.clone()];
                    for j in 0..seg.kn {
                        let pij = prow[j];
                        if pij == 0.0 {
                            continue;
                        }
                        let vj = &v.row(seg.k0 + j)[cols.clone()];
                        for c in 0..hd {
                            orow[c] += pij * vj[c];
                        }
                    }
                }
            }
            probs.push(p);
        }
        let out = self.o.forward(&o);
        (
            out,
            AttnCache {
                q,
                k,
                v,
                qn,
                kn,
                q_inv,
                k_inv,
                probs,
                o,
            },
        )
    }

    /// Returns `(dL/dhq, dL/dhc)`.
    pub fn backward(
        &self,
        hq: &Mat,
        hc: &Mat,
        segs: &[Segment],
        cache: &AttnCache,
        dout: &Mat,
        g: &mut Attention,
    ) -> (Mat, Mat) {
        let (nh, hd) = (self.heads, self.head_dim);
        let scale = 1.0 / (hd as f64).sqrt();
        let d_o = self.o.backward(&cache.o, dout, &mut g.o);
        let mut dqn = Mat::zeros(cache.qn.rows, cache.qn.cols);
        let mut dkn = Mat::zeros(cache.kn.rows, cache.kn.cols);
        let mut dv = Mat::zeros(cache.v.rows, cache.v.cols);
        let mut dp = Vec::new();
        for (seg, p) in segs.iter().zip(&cache.probs) {
            dp.resize(seg.kn, 0.0);
            for h in 0..nh {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..seg.qn {
                    let prow = &p[(h * seg.qn + i) * seg.kn..(h * seg.qn + i + 1) * seg.kn];
                    let doi = &d_o.row(seg.q0 + i)[cols.clone()];
                    let mut dot = 0.0;
                    for j in 0..seg.kn {
                        let pij = prow[j];
                        if pij == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = &cache.v.row(seg.k0 + j)[cols.clone()];
                        let d: f64 = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                        dp[j] = d;
                        dot += pij * d;
                        let dvj = &mut dv.row_mut(seg.k0 + j)[cols.clone()];
                        for c in 0..hd {
                            dvj[c] += pij * doi[c];
                        }
                    }
                    for j in 0..seg.kn {
                        let pij = prow[j];
                        if pij == 0.0 {
                            continue;
                        }
                        let ds = pij * (dp[j] - dot) * scale;
                        let kr = seg.k0 + j;
                        let qr = seg.q0 + i;
                        for c in cols.clone() {
                            dqn.data[qr * dqn.cols + c] += ds * cache.kn.data[kr * dkn.cols + c];
                            dkn.data[kr * dkn.cols + c] += ds * cache.qn.data[qr * dqn.cols + c];
                        }
                    }
                }
            }
        }
        let dq = rms_backward(&cache.q, &cache.q_inv, nh, hd, &self.q_norm, &dqn, &mut g.q_norm);
        let dk = rms_backward(&cache.k, &cache.k_inv, nh, hd, &self.k_norm, &dkn, &mut g.k_norm);
        let dhq = self.q.backward(hq, &dq, &mut g.q);
        let mut dhc = self.k.backward(hc, &dk, &mut g.k);
        dhc.add_assign(&self.v.backward(hc, &dv, &mut g.v));
        (dhq, dhc)
    }
}

impl Visit for Attention {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.q.visit(&join(name, "q"), f);
        self.k.visit(&join(name, "k"), f);
        self.v.visit(&join(name, "v"), f);
        self.o.visit(&join(name, "o"), f);
        self.q_norm.visit(&join(name, "q_norm"), f);
        self.k_norm.visit(&join(name, "k_norm"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.q.visit_mut(&join(name, "q"), f);
        self.k.visit_mut(&join(name, "k"), f);
        self.v.visit_mut(&join(name, "v"), f);
        self.o.visit_mut(&join(name, "o"), f);
        self.q_norm.visit_mut(&join(name, "q_norm"), f);
        self.k_norm.visit_mut(&join(name, "k_norm"), f);
    }
}

/// tanh-approximated GELU and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    const A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const B: f64 = 0.044_715;
    let u = A * (x + B * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * A * (1.0 + 3.0 * B * x * x);
    (y, dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache {
    hidden: Mat,
    dact: Mat,
}

impl Mlp {
    fn forward(&self, x: &Mat) -> (Mat, MlpCache) {
        let mut a = self.fc1.forward(x);
        let mut dact = Mat::zeros(a.rows, a.cols);
        for (v, d) in a.data.iter_mut().zip(dact.data.iter_mut()) {
            let (y, dy) = gelu(*v);
            *v = y;
            *d = dy;
        }
        let out = self.fc2.forward(&a);
        (out, MlpCache { hidden: a, dact })
    }

    fn backward(&self, x: &Mat, cache: &MlpCache, dy: &Mat, g: &mut Mlp) -> Mat {
        let mut dh = self.fc2.backward(&cache.hidden, dy, &mut g.fc2);
        for (d, s) in dh.data.iter_mut().zip(&cache.dact.data) {
            *d *= s;
        }
        self.fc1.backward(x, &dh, &mut g.fc1)
    }
}

impl Visit for Mlp {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.fc1.visit(&join(name, "fc1"), f);
        self.fc2.visit(&join(name, "fc2"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.fc1.visit_mut(&join(name, "fc1"), f);
        self.fc2.visit_mut(&join(name, "fc2"), f);
    }
}

/// Cross-attention path with its own normalisation of the context.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPath {
    pub ctx_norm: LayerNorm,
    pub attn: Attention,
}

/// Pre-LN block: self- and cross-attention run in parallel on the same
/// normalised input, then a residual MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub self_attn: Option<Attention>,
    pub cross: Option<CrossPath>,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

/// Attention routing for one forward pass.
#[derive(Clone, Copy)]
pub struct Routing<'a> {
    pub self_segs: &'a [Segment],
    pub self_mask: Option<&'a [bool]>,
    pub cross_segs: &'a [Segment],
    pub cross_mask: Option<&'a [bool]>,
}

pub struct BlockCache {
    h: Mat,
    n1: NormCache,
    sa: Option<AttnCache>,
    ctx: Option<(Mat, NormCache, AttnCache)>,
    g: Mat,
    n2: NormCache,
    mlp: MlpCache,
}

impl Block {
    pub fn new(rng: &mut impl Rng, d: usize, d_ctx: Option<usize>, with_self: bool, cfg: &TransformerConfig) -> Self {
        Self {
            norm1: LayerNorm::new(d),
            self_attn: with_self.then(|| Attention::new(rng, d, d, cfg.heads, cfg.qkv_per_head)),
            cross: d_ctx.map(|dc| CrossPath {
                ctx_norm: LayerNorm::new(dc),
                attn: Attention::new(rng, d, dc, cfg.heads, cfg.qkv_per_head),
            }),
            norm2: LayerNorm::new(d),
            mlp: Mlp {
                fc1: Linear::new(rng, d, cfg.mlp_dim),
                fc2: Linear::new(rng, cfg.mlp_dim, d),
            },
        }
    }

    pub fn forward(&self, x: &Mat, ctx: Option<&Mat>, route: Routing<'_>) -> (Mat, BlockCache) {
        let (h, n1) = self.norm1.forward(x);
        let mut y = x.clone();
        let sa = self.self_attn.as_ref().map(|a| {
            let (out, c) = a.forward(&h, &h, route.self_segs, route.self_mask);
            y.add_assign(&out);
            c
        });
        let ctx_cache = match (&self.cross, ctx) {
            (Some(cp), Some(ctx)) => {
                let (c, nc) = cp.ctx_norm.forward(ctx);
                let (out, ac) = cp.attn.forward(&h, &c, route.cross_segs, route.cross_mask);
                y.add_assign(&out);
                Some((c, nc, ac))
            }
            (Some(_), None) => panic!("cross-attention block called without context"),
            _ => None,
        };
        let (g, n2) = self.norm2.forward(&y);
        let (m, mlp) = self.mlp.forward(&g);
        let mut z = y;
        z.add_assign(&m);
        (
            z,
            BlockCache {
                h,
                n1,
                sa,
                ctx: ctx_cache,
                g,
                n2,
                mlp,
            },
        )
    }

    /// Returns `dL/dx` and, when the block has a cross path, `dL/dctx`.
    pub fn backward(&self, cache: &BlockCache, dz: &Mat, route: Routing<'_>, grads: &mut Block) -> (Mat, Option<Mat>) {
        let dg = self.mlp.backward(&cache.g, &cache.mlp, dz, &mut grads.mlp);
        let mut dy = dz.clone();
        dy.add_assign(&self.norm2.backward(&cache.n2, &dg, &mut grads.norm2));
        let mut dh = Mat::zeros(cache.h.rows, cache.h.cols);
        if let (Some(a), Some(ac)) = (&self.self_attn, &cache.sa) {
            let ga = grads.self_attn.as_mut().expect("gradient tree mirrors params");
            let (dq, dc) = a.backward(&cache.h, &cache.h, route.self_segs, ac, &dy, ga);
            dh.add_assign(&dq);
            dh.add_assign(&dc);
        }
        let mut dctx = None;
        if let (Some(cp), Some((c, nc, ac))) = (&self.cross, &cache.ctx) {
            let gc = grads.cross.as_mut().expect("gradient tree mirrors params");
            let (dq, dc) = cp.attn.backward(&cache.h, c, route.cross_segs, ac, &dy, &mut gc.attn);
            dh.add_assign(&dq);
            dctx = Some(cp.ctx_norm.backward(nc, &dc, &mut gc.ctx_norm));
        }
        let mut dx = dy;
        dx.add_assign(&self.norm1.backward(&cache.n1, &dh, &mut grads.norm1));
        (dx, dctx)
    }
}

impl Visit for Block {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.norm1.visit(&join(name, "norm1"), f);
        if let Some(a) = &self.self_attn {
            a.visit(&join(name, "self_attn"), f);
        }
        if let Some(c) = &self.cross {
            c.ctx_norm.visit(&join(name, "cross.ctx_norm"), f);
            c.attn.visit(&join(name, "cross.attn"), f);
        }
        self.norm2.visit(&join(name, "norm2"), f);
        self.mlp.visit(&join(name, "mlp"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.norm1.visit_mut(&join(name, "norm1"), f);
        if let Some(a) = &mut self.self_attn {
            a.visit_mut(&join(name, "self_attn"), f);
        }
        if let Some(c) = &mut self.cross {
            c.ctx_norm.visit_mut(&join(name, "cross.ctx_norm"), f);
            c.attn.visit_mut(&join(name, "cross.attn"), f);
        }
        self.norm2.visit_mut(&join(name, "norm2"), f);
        self.mlp.visit_mut(&join(name, "mlp"), f);
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

pub struct TransformerCache {
    blocks: Vec<BlockCache>,
    fin: NormCache,
}

impl Transformer {
    pub fn new(rng: &mut impl Rng, d: usize, d_ctx: Option<usize>, with_self: bool, cfg: &TransformerConfig) -> Self {
        Self {
            blocks: (0..cfg.layers)
                .map(|_| Block::new(rng, d, d_ctx, with_self, cfg))
                .collect(),
            final_norm: LayerNorm::new(d),
        }
    }

    pub fn forward(&self, x: &Mat, ctx: Option<&Mat>, route: Routing<'_>) -> (Mat, TransformerCache) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for b in &self.blocks {
            let (next, c) = b.forward(&cur, ctx, route);
            cur = next;
            caches.push(c);
        }
        let (out, fin) = self.final_norm.forward(&cur);
        (
            out,
            TransformerCache {
                blocks: caches,
                fin,
            },
        )
    }

    /// Forward pass without keeping intermediate activations.
    pub fn infer(&self, x: &Mat, ctx: Option<&Mat>, route: Routing<'_>) -> Mat {
        let mut cur = x.clone();
        for b in &self.blocks {
            cur = b.forward(&cur, ctx, route).0;
        }
        self.final_norm.forward(&cur).0
    }

    /// Returns `dL/dx` and the accumulated `dL/dctx` (zeros when unused).
    pub fn backward(
        &self,
        cache: &TransformerCache,
        dout: &Mat,
        ctx_shape: Option<(usize, usize)>,
        route: Routing<'_>,
        grads: &mut Transformer,
    ) -> (Mat, Option<Mat>) {
        let mut d = self.final_norm.backward(&cache.fin, dout, &mut grads.final_norm);
        let mut dctx = ctx_shape.map(|(r, c)| Mat::zeros(r, c));
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let (dx, dc) = b.backward(&cache.blocks[i], &d, route, &mut grads.blocks[i]);
            if let (Some(acc), Some(dc)) = (dctx.as_mut(), dc) {
                acc.add_assign(&dc);
            }
            d = dx;
        }
        (d, dctx)
    }
}

impl Visit for Transformer {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(name, &format!("block{i}")), f);
        }
        self.final_norm.visit(&join(name, "final_norm"), f);
    }
    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(name, &format!("block{i}")), f);
        }
        self.final_norm.visit_mut(&join(name, "final_norm"), f);
    }
}
