//! Comparisons between motion latents: Fréchet distance of fitted
//! Gaussians, unbiased polynomial-kernel MMD and pairwise L2 distance.

use crate::io::{dim_to_u32, put_f32s, put_u32, ByteReader};
use crate::linalg::{matmul, psd_sqrt, symmetric_eigen, Mat};
use crate::model::MotionLatent;
use crate::{Error, Result};
use std::str::FromStr;

pub const LATENT_MAGIC: &[u8; 4] = b"LAT1";

/// Labelled embedding vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Mat,
    labels: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(vectors: Mat, labels: Vec<String>) -> Result<Self> {
        if vectors.rows == 0 || vectors.cols == 0 {
            return Err(Error::EmptyInput("embedding set needs at least one non-empty vector".into()));
        }
        if labels.len() != vectors.rows {
            return Err(Error::contract(format!("{} labels for {} vectors", labels.len(), vectors.rows)));
        }
        if let Some(l) = labels.iter().find(|l| l.contains('\n')) {
            return Err(Error::validation(format!("label {l:?} contains a newline")));
        }
        if vectors.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding contains a non-finite entry"));
        }
        Ok(Self { vectors, labels })
    }

    /// Builds a set from equal-length rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::contract("embedding rows differ in length"));
        }
        let n = rows.len();
        Self::new(Mat::from_vec(n, d, rows.concat()), labels)
    }

    pub fn len(&self) -> usize {
        self.vectors.rows
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Mat {
        &self.vectors
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// `LAT1` layout: magic, `u32` N, `u32` D, N·D `f32`, then N labels each
/// terminated by `\n`.
pub fn write_embeddings(es: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut out = LATENT_MAGIC.to_vec();
    put_u32(&mut out, dim_to_u32(es.len(), "vector count")?);
    put_u32(&mut out, dim_to_u32(es.dim(), "dimension")?);
    put_f32s(&mut out, es.vectors.data.iter().map(|&v| v as f32));
    for l in &es.labels {
        out.extend_from_slice(l.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(LATENT_MAGIC)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::Format("latent store dimensions overflow".into()))?;
    let data = r.f32s(count)?.into_iter().map(f64::from).collect();
    let rest = r.take(r.remaining())?;
    let text = std::str::from_utf8(rest).map_err(|_| Error::Format("labels are not UTF-8".into()))?;
    if n > 0 && !text.ends_with('\n') || n == 0 && !text.is_empty() {
        return Err(Error::Format("labels must be newline-terminated".into()));
    }
    let labels: Vec<String> = text.split_terminator('\n').map(str::to_string).collect();
    if labels.len() != n {
        return Err(Error::Format(format!("{} labels for {n} vectors", labels.len())));
    }
    EmbeddingSet::new(Mat::from_vec(n, d, data), labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Mat,
}

/// Sample mean and unbiased (N−1) covariance, symmetrised.
pub fn fit_gaussian(es: &EmbeddingSet) -> Result<GaussianStats> {
    let (n, d) = (es.len(), es.dim());
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(es.vector(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centred = es.vectors.clone();
    for i in 0..n {
        for (v, m) in centred.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = matmul(&centred, true, &centred, false);
    for i in 0..d {
        for j in i..d {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]) / (n - 1) as f64;
            cov.data[i * d + j] = s;
            cov.data[j * d + i] = s;
        }
    }
    Ok(GaussianStats { mean, cov })
}

/// `|μa − μb|² + Tr(Σa + Σb − 2 (Σa Σb)^½)`, with the trace of the root
/// taken from the eigenvalues of `Σa^½ Σb Σa^½`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.rows != d || a.cov.cols != d || b.cov.rows != d || b.cov.cols != d {
        return Err(Error::contract("Gaussian statistics have mismatched dimensions"));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = psd_sqrt(&a.cov)?;
    let mut m = matmul(&matmul(&sa, false, &b.cov, false), false, &sa, false);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m.data[i * d + j] = s;
            m.data[j * d + i] = s;
        }
    }
    let (eig, _) = symmetric_eigen(&m)?;
    let tr_root: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let dist = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_root;
    if !dist.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(dist.max(0.0))
}

/// `(aᵀb + 1)³`
pub fn poly_kernel(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot + 1.0).powi(3)
}

pub const MMD_CLAMP: f64 = 1e-6;

/// Unbiased squared MMD with the cubic polynomial kernel. Negative
/// estimates are replaced by `clamp`.
pub fn mmd2_unbiased(x: &EmbeddingSet, y: &EmbeddingSet, clamp: f64) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if x.dim() != y.dim() {
        return Err(Error::contract(format!("dimensions {} and {} differ", x.dim(), y.dim())));
    }
    let within = |s: &EmbeddingSet| {
        let k = s.len();
        let mut acc = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                acc += poly_kernel(s.vector(i), s.vector(j));
            }
        }
        2.0 * acc / (k * (k - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += poly_kernel(x.vector(i), y.vector(j));
        }
    }
    let v = within(x) - 2.0 * cross / (m * n) as f64 + within(y);
    if !v.is_finite() {
        return Err(Error::Numerical("MMD estimate is not finite".into()));
    }
    Ok(if v < 0.0 { clamp } else { v })
}

/// Euclidean norm of the flattened difference of two latents.
pub fn pair_distance(a: &MotionLatent, b: &MotionLatent) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!("latent shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(a.tokens
        .data
        .iter()
        .zip(&b.tokens.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    /// Average over tokens: one `latent_dim` vector.
    #[default]
    MeanTokens,
    /// All tokens concatenated.
    Flatten,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_tokens" => Ok(Self::MeanTokens),
            "flatten" => Ok(Self::Flatten),
            other => Err(Error::Config(format!("unknown pooling mode {other:?}"))),
        }
    }
}

pub fn pool_latent(latent: &MotionLatent, mode: PoolMode) -> Vec<f64> {
    let t = &latent.tokens;
    match mode {
        PoolMode::Flatten => t.data.clone(),
        PoolMode::MeanTokens => {
            let mut out = vec![0.0; t.cols];
            for r in 0..t.rows {
                for (o, v) in out.iter_mut().zip(t.row(r)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= t.rows as f64);
            out
        }
    }
}
