//! Losses, reverse-mode gradients, Adam with a warmup-cosine schedule and
//! the training loop of the trajectory autoencoder.

use crate::linalg::Mat;
use crate::model::nn::Visit;
use crate::model::{self, ClipInput, DecodeQuery, ModelConfig, ModelParams};
use crate::trackdata::{QueryPoint, TrackSet};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Weights of the two loss terms and the Huber transition point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_pos: f64,
    pub w_occ: f64,
    /// In normalised coordinates; 1/256 is about one pixel at 256².
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_pos: 5000.0,
            w_occ: 1e-8,
            huber_delta: 1.0 / 256.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_pos >= 0.0 && self.w_occ >= 0.0 && self.huber_delta >= 0.0) {
            return Err(Error::Config("loss weights and Huber delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Encoder input plus held-out query tracks from the same clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub support: TrackSet,
    pub queries: TrackSet,
    /// One visible point per query track.
    pub query_points: Vec<QueryPoint>,
    /// Loss is applied to frames `< effective_len` only.
    pub effective_len: usize,
    /// Whether the variable-length draw fired for this batch.
    pub truncated: bool,
}

/// Splits a clip into disjoint support and query tracks.
///
/// With `variable_len`, half of the draws pick an end frame uniformly in
/// `[2, T]`; support samples from that frame on are marked occluded and the
/// loss is restricted to earlier frames.
pub fn make_batch(ts: &TrackSet, n_support: usize, n_query: usize, seed: u64, variable_len: bool) -> Result<TrainBatch> {
    let j = ts.num_tracks();
    if n_support == 0 || n_query == 0 || n_support + n_query > j {
        return Err(Error::validation(format!(
            "need {n_support} support + {n_query} query tracks (both ≥ 1), clip has {j}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..j).collect();
    order.shuffle(&mut rng);
    let support_idx = &order[..n_support];
    let query_idx = &order[n_support..n_support + n_query];
    let t_len = ts.clip_len();

    let truncated = variable_len && rng.random_bool(0.5);
    let mut effective_len = if truncated { rng.random_range(2..=t_len) } else { t_len };

    let support = if effective_len < t_len {
        let mut pos = Vec::new();
        let mut occ = Vec::new();
        let keep: Vec<usize> = support_idx
            .iter()
            .copied()
            .filter(|&jj| (0..effective_len).any(|t| !ts.is_occluded(t, jj)))
            .collect();
        if keep.is_empty() {
            effective_len = t_len;
            ts.select(support_idx)?
        } else {
            for t in 0..t_len {
                for &jj in &keep {
                    pos.push(ts.position(t, jj));
                    occ.push(t >= effective_len || ts.is_occluded(t, jj));
                }
            }
            TrackSet::new(t_len, keep.len(), ts.width(), ts.height(), pos, occ)?
        }
    } else {
        ts.select(support_idx)?
    };
    let queries = ts.select(query_idx)?;
    let query_points = (0..n_query)
        .map(|qi| {
            let early: Vec<usize> = (0..effective_len).filter(|&t| !queries.is_occluded(t, qi)).collect();
            let frames = if early.is_empty() {
                (0..t_len).filter(|&t| !queries.is_occluded(t, qi)).collect()
            } else {
                early
            };
            let t = frames[rng.random_range(0..frames.len())];
            let p = queries.position(t, qi);
            QueryPoint {
                x: f64::from(p[0]),
                y: f64::from(p[1]),
                t,
            }
        })
        .collect();
    Ok(TrainBatch {
        support,
        queries,
        query_points,
        effective_len,
        truncated,
    })
}

/// Huber penalty and its derivative.
pub fn huber(d: f64, delta: f64) -> (f64, f64) {
    if d.abs() <= delta {
        (0.5 * d * d, d)
    } else {
        (delta * (d.abs() - 0.5 * delta), delta * d.signum())
    }
}

/// Sigmoid cross-entropy of a logit against a 0/1 label, and its derivative.
pub fn sigmoid_xent(logit: f64, label: f64) -> (f64, f64) {
    let loss = logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p();
    let p = 1.0 / (1.0 + (-logit).exp());
    (loss, p - label)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Weighted position term.
    pub position: f64,
    /// Weighted occlusion term.
    pub occlusion: f64,
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.position += o.position;
        self.occlusion += o.occlusion;
    }
}

/// Loss of decoder outputs for one batch.
///
/// `pred` has one row per query with `(x, y, logit)` per frame in normalised
/// coordinates. The position term averages Huber over frames before
/// `effective_len` where the target is visible; the occlusion term averages
/// cross-entropy over all frames before `effective_len`. Returns the loss
/// and `dL/dpred`, both multiplied by `scale`.
pub fn loss_from_predictions(pred: &Mat, batch: &TrainBatch, weights: &LossWeights, scale: f64) -> (LossBreakdown, Mat) {
    let q = &batch.queries;
    let (w, h) = (f64::from(q.width()), f64::from(q.height()));
    let n_q = q.num_tracks();
    let eff = batch.effective_len;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let n_pos = (0..eff)
        .flat_map(|t| (0..n_q).map(move |i| (t, i)))
        .filter(|&(t, i)| !q.is_occluded(t, i))
        .count();
    let n_occ = eff * n_q;
    let (mut pos_sum, mut occ_sum) = (0.0, 0.0);
    let pos_scale = if n_pos > 0 { weights.w_pos * scale / n_pos as f64 } else { 0.0 };
    let occ_scale = if n_occ > 0 { weights.w_occ * scale / n_occ as f64 } else { 0.0 };
    for i in 0..n_q {
        let row = pred.row(i);
        let g = grad.row_mut(i);
        for t in 0..eff {
            let occluded = q.is_occluded(t, i);
            if !occluded {
                let gt = q.position(t, i);
                let (lx, dx) = huber(row[3 * t] - f64::from(gt[0]) / w, weights.huber_delta);
                let (ly, dy) = huber(row[3 * t + 1] - f64::from(gt[1]) / h, weights.huber_delta);
                pos_sum += lx + ly;
                g[3 * t] = dx * pos_scale;
                g[3 * t + 1] = dy * pos_scale;
            }
            let (lo, dlo) = sigmoid_xent(row[3 * t + 2], if occluded { 1.0 } else { 0.0 });
            occ_sum += lo;
            g[3 * t + 2] = dlo * occ_scale;
        }
    }
    let position = if n_pos > 0 { weights.w_pos * pos_sum / n_pos as f64 * scale } else { 0.0 };
    let occlusion = if n_occ > 0 { weights.w_occ * occ_sum / n_occ as f64 * scale } else { 0.0 };
    (
        LossBreakdown {
            total: position + occlusion,
            position,
            occlusion,
        },
        grad,
    )
}

/// Objective selector. `LatentNorm` is a diagnostic that only touches the
/// encoder: half the mean squared latent entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Reconstruction,
    LatentNorm,
}

fn batch_inputs(batches: &[TrainBatch]) -> Result<(Vec<ClipInput>, Vec<DecodeQuery>)> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("no batches".into()));
    }
    let clips = batches.iter().map(|b| ClipInput::from_trackset(&b.support)).collect();
    let mut queries = Vec::new();
    for (ci, b) in batches.iter().enumerate() {
        if b.query_points.is_empty() || b.query_points.len() != b.queries.num_tracks() {
            return Err(Error::validation("batch needs one query point per query track"));
        }
        let (w, h) = (f64::from(b.queries.width()), f64::from(b.queries.height()));
        for qp in &b.query_points {
            queries.push(DecodeQuery {
                clip: ci,
                x: qp.x / w,
                y: qp.y / h,
                frame: qp.t,
            });
        }
    }
    Ok((clips, queries))
}

fn check_batches(cfg: &ModelConfig, batches: &[TrainBatch]) -> Result<()> {
    for b in batches {
        if b.support.clip_len() > cfg.max_clip_len || b.queries.clip_len() != b.support.clip_len() {
            return Err(Error::validation("support/query clip lengths disagree or exceed max_clip_len"));
        }
        if b.effective_len > b.queries.clip_len() {
            return Err(Error::validation("effective_len exceeds clip length"));
        }
    }
    Ok(())
}

/// Mean loss over `batches`.
pub fn loss(params: &ModelParams, cfg: &ModelConfig, batches: &[TrainBatch], weights: &LossWeights, mode: LossMode) -> Result<LossBreakdown> {
    evaluate(params, cfg, batches, weights, mode, false).map(|(l, _)| l)
}

/// Mean loss and its gradient with respect to every parameter.
pub fn grad(params: &ModelParams, cfg: &ModelConfig, batches: &[TrainBatch], weights: &LossWeights, mode: LossMode) -> Result<(LossBreakdown, ModelParams)> {
    evaluate(params, cfg, batches, weights, mode, true).map(|(l, g)| (l, g.expect("gradients requested")))
}

fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    batches: &[TrainBatch],
    weights: &LossWeights,
    mode: LossMode,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ModelParams>)> {
    weights.validate()?;
    check_batches(cfg, batches)?;
    let (clips, queries) = batch_inputs(batches)?;
    let (latents, enc_cache) = model::encode_forward(params, cfg, &clips, want_grad);
    let scale = 1.0 / batches.len() as f64;
    let (breakdown, dlatents, mut grads) = match mode {
        LossMode::LatentNorm => {
            let n = (latents.rows / batches.len() * latents.cols) as f64;
            let total = 0.5 * latents.data.iter().map(|v| v * v).sum::<f64>() / n * scale;
            let mut d = latents.clone();
            for v in &mut d.data {
                *v *= scale / n;
            }
            let lb = LossBreakdown {
                total,
                position: 0.0,
                occlusion: 0.0,
            };
            (lb, d, want_grad.then(|| params.zeros_like()))
        }
        LossMode::Reconstruction => {
            let (pred, dec_cache) = model::decode_forward(params, cfg, &latents, &queries, want_grad);
            let mut total = LossBreakdown::default();
            let mut dpred = Mat::zeros(pred.rows, pred.cols);
            let mut row0 = 0;
            for b in batches {
                let n = b.query_points.len();
                let slice = Mat::from_vec(n, pred.cols, pred.data[row0 * pred.cols..(row0 + n) * pred.cols].to_vec());
                let (lb, g) = loss_from_predictions(&slice, b, weights, scale);
                total += lb;
                dpred.data[row0 * pred.cols..(row0 + n) * pred.cols].copy_from_slice(&g.data);
                row0 += n;
            }
            match dec_cache {
                Some(dc) => {
                    let mut g = params.zeros_like();
                    let dl = model::decode_backward(params, cfg, &latents, &dc, &dpred, &mut g);
                    (total, dl, Some(g))
                }
                None => (total, Mat::zeros(0, 0), None),
            }
        }
    };
    if let (Some(g), Some(ec)) = (grads.as_mut(), enc_cache.as_ref()) {
        model::encode_backward(params, cfg, ec, &dlatents, g);
    }
    Ok((breakdown, grads))
}

/// Warmup-cosine learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub total_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_steps: 1000,
            peak_lr: 2e-4,
            total_steps: 1_000_000,
        }
    }
}

/// Linear ramp from 0 to `peak` over the warmup, then cosine decay to 0 at
/// `total`. Steps past `total` give 0.
pub fn lr_schedule(step: u64, s: &Schedule) -> f64 {
    if step > s.total_steps {
        return 0.0;
    }
    if step < s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    let span = s.total_steps.saturating_sub(s.warmup_steps);
    if span == 0 {
        return s.peak_lr;
    }
    let progress = (step - s.warmup_steps) as f64 / span as f64;
    s.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(lens: impl IntoIterator<Item = usize>, schedule: Schedule) -> Self {
        let lens: Vec<usize> = lens.into_iter().collect();
        Self {
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &ModelParams, schedule: Schedule) -> Self {
        Self::new(params.tensors().iter().map(|t| t.len()), schedule)
    }
}

/// One bias-corrected Adam update; the learning rate is
/// `lr_schedule(step + 1)`.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "{} parameter tensors, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::contract(format!("tensor {i}: shape mismatch")));
        }
    }
    let t = state.step + 1;
    let lr = lr_schedule(t, &state.schedule);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}

/// Adam update of a whole parameter tree.
pub fn adam_step_params(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimState) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    adam_step(&mut p, &g, state)
}

/// Training-loop settings (the CLI exposes these as `key=value`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub n_support: usize,
    pub n_query: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub weights: LossWeights,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub variable_len: bool,
    /// Train clip `i` on one support/query split only, the one
    /// `make_batch` draws with seed `i`. Without it every step draws a
    /// fresh split.
    pub fixed_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            n_support: 256,
            n_query: 256,
            peak_lr: 2e-4,
            warmup_steps: 1000,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            variable_len: true,
            fixed_split: false,
        }
    }
}

pub const TRAIN_KEYS: [&str; 13] = [
    "steps",
    "batch_size",
    "n_support",
    "n_query",
    "peak_lr",
    "warmup_steps",
    "huber_delta",
    "w_pos",
    "w_occ",
    "seed",
    "checkpoint_every",
    "variable_len",
    "fixed_split",
];

impl TrainConfig {
    /// Settings that overfit [`ModelConfig::toy`] to a few dozen synthetic
    /// clips. The occlusion term carries real weight here; at the default
    /// 1e-8 the small model never learns to predict occlusion.
    ///
    /// Each clip keeps one support/query split. With a fresh split every
    /// step the small model settles on ignoring the latent and predicts
    /// static tracks. The latent only starts to carry motion after each clip
    /// has been seen several hundred times, so the batch is wide and the
    /// query set small.
    pub fn toy_overfit() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            n_support: 32,
            n_query: 16,
            peak_lr: 1e-3,
            warmup_steps: 100,
            weights: LossWeights {
                w_occ: 1.0,
                ..LossWeights::default()
            },
            seed: 1,
            checkpoint_every: 0,
            variable_len: false,
            fixed_split: true,
        }
    }

    /// Applies `key=value` overrides; unknown keys are rejected.
    pub fn with_pairs<'a>(mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
        }
        for (k, v) in pairs {
            match k {
                "steps" => self.steps = num(k, v)?,
                "batch_size" => self.batch_size = num(k, v)?,
                "n_support" => self.n_support = num(k, v)?,
                "n_query" => self.n_query = num(k, v)?,
                "peak_lr" => self.peak_lr = num(k, v)?,
                "warmup_steps" => self.warmup_steps = num(k, v)?,
                "huber_delta" => self.weights.huber_delta = num(k, v)?,
                "w_pos" => self.weights.w_pos = num(k, v)?,
                "w_occ" => self.weights.w_occ = num(k, v)?,
                "seed" => self.seed = num(k, v)?,
                "checkpoint_every" => self.checkpoint_every = num(k, v)?,
                "variable_len" => self.variable_len = num(k, v)?,
                "fixed_split" => self.fixed_split = num(k, v)?,
                other => return Err(Error::Config(format!("unknown training key {other:?}"))),
            }
        }
        Ok(self)
    }

    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let vals = [
            self.steps.to_string(),
            self.batch_size.to_string(),
            self.n_support.to_string(),
            self.n_query.to_string(),
            self.peak_lr.to_string(),
            self.warmup_steps.to_string(),
            self.weights.huber_delta.to_string(),
            self.weights.w_pos.to_string(),
            self.weights.w_occ.to_string(),
            self.seed.to_string(),
            self.checkpoint_every.to_string(),
            self.variable_len.to_string(),
            self.fixed_split.to_string(),
        ];
        TRAIN_KEYS.iter().copied().zip(vals).collect()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            warmup_steps: self.warmup_steps,
            peak_lr: self.peak_lr,
            total_steps: self.steps,
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean total loss of every step, in order.
    pub losses: Vec<f64>,
}

/// Trains from a seeded initialisation.
pub fn train(dataset: &[TrackSet], cfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = ModelParams::init(cfg, tcfg.seed)?;
    train_from(dataset, cfg, tcfg, init, &mut |_, _, _| Ok(()))
}

/// Trains starting at `params`; `on_step(step, params, loss)` runs after
/// every update (checkpointing, logging).
pub fn train_from(
    dataset: &[TrackSet],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut params: ModelParams,
    on_step: &mut dyn FnMut(u64, &ModelParams, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set has no clips".into()));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    tcfg.weights.validate()?;
    let mut state = OptimState::for_params(&params, tcfg.schedule());
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut losses = Vec::with_capacity(tcfg.steps as usize);
    for step in 0..tcfg.steps {
        let batches = (0..tcfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..dataset.len());
                let split_seed = if tcfg.fixed_split { i as u64 } else { rng.random() };
                make_batch(&dataset[i], tcfg.n_support, tcfg.n_query, split_seed, tcfg.variable_len)
            })
            .collect::<Result<Vec<_>>>()?;
        let (lb, g) = grad(&params, cfg, &batches, &tcfg.weights, LossMode::Reconstruction)?;
        if !lb.total.is_finite() {
            return Err(Error::Diverged {
                step: step as usize,
                loss: lb.total,
            });
        }
        adam_step_params(&mut params, &g, &mut state)?;
        losses.push(lb.total);
        on_step(step + 1, &params, lb.total)?;
    }
    Ok(TrainOutcome { params, losses })
}

/// Visits parameter tensors of `a` and `b` pairwise (same structure).
pub fn zip_tensors(a: &ModelParams, b: &ModelParams, mut f: impl FnMut(&str, &[f64], &[f64])) {
    let bs = b.tensors();
    let mut i = 0;
    a.visit("", &mut |name, s, _| {
        f(&name, s, bs[i]);
        i += 1;
    });
}
