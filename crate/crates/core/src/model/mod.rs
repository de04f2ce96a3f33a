//! Trajectory autoencoder: tracks → fixed-size motion latent → tracks.
//!
//! The encoder embeds every `(x, y, t)` sample of a track sinusoidally, runs
//! a per-track transformer whose attention ignores occluded samples, keeps a
//! readout token per track, and lets a fixed set of learned latent tokens
//! cross-attend to the track readouts. The decoder up-projects the latent,
//! specialises it to the query time by extracting a strided window, and reads
//! out a full track for the query point.

mod checkpoint;
mod config;
mod graph;
pub mod nn;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind, CHECKPOINT_MAGIC};
pub use config::{parse_pairs, ModelConfig};
pub use graph::{ClipInput, DecodeQuery, DecoderCache, EncoderCache};
pub(crate) use graph::{decode_backward, decode_forward, encode_backward, encode_forward};

use crate::linalg::Mat;
use crate::trackdata::{QueryPoint, TrackSet};
use crate::{Error, Result};
use nn::{Linear, Transformer, Visit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of raw sinusoid features per `(x, y, t)` sample.
pub fn raw_embedding_len(num_freqs: usize) -> usize {
    2 * num_freqs * 3
}

/// Geometrically spaced frequencies (cycles per unit) from 1/4 to 128.
///
/// At a quarter cycle the sine is monotone over the unit square, so a
/// displacement moves it the same way wherever the point sits and survives
/// averaging over many tracks. Every higher frequency cancels out there.
pub fn embedding_frequencies(num_freqs: usize) -> Vec<f64> {
    const MIN_FREQ: f64 = 0.25;
    const MAX_FREQ: f64 = 128.0;
    if num_freqs == 1 {
        return vec![MIN_FREQ];
    }
    (0..num_freqs)
        .map(|k| MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(k as f64 / (num_freqs - 1) as f64))
        .collect()
}

/// Writes the unprojected sinusoidal features of one normalised sample.
///
/// Layout: for each of `x`, `y`, `t`, for each frequency, `sin` then `cos`.
pub fn sinusoid_features(x: f64, y: f64, t: f64, freqs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), 6 * freqs.len());
    let mut i = 0;
    for v in [x, y, t] {
        for &f in freqs {
            let a = std::f64::consts::TAU * f * v;
            out[i] = a.sin();
            out[i + 1] = a.cos();
            i += 2;
        }
    }
}

/// Embeds one normalised `(x, y, t)` sample and projects it to `C` channels.
pub fn embed_position(params: &ModelParams, cfg: &ModelConfig, x: f64, y: f64, t: f64) -> Vec<f64> {
    let freqs = embedding_frequencies(cfg.num_freqs);
    let mut feats = Mat::zeros(1, raw_embedding_len(cfg.num_freqs));
    sinusoid_features(x, y, t, &freqs, &mut feats.data);
    params.track_embed.forward(&feats).data
}

/// All learnable tensors of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Sinusoid features → `C` channels.
    pub track_embed: Linear,
    /// Learned per-track readout token, length `C`.
    pub track_readout: Vec<f64>,
    pub track_tf: Transformer,
    /// Learned latent array `[num_latents, C]`.
    pub latents: Mat,
    pub perceiver: Transformer,
    /// `C → latent_dim`.
    pub down_proj: Linear,
    /// The linear up-projection `f`: `latent_dim → upproj_dim`.
    pub up_proj: Linear,
    /// `upproj_dim + window → query_enc_dim`.
    pub up_in: Linear,
    /// Query-point encoder: sinusoid features → `query_enc_dim`.
    pub query_embed: Linear,
    pub latent_tf: Transformer,
    pub readout_tf: Transformer,
    /// Readout token → `(x, y, occlusion logit)` for each of `max_clip_len` frames.
    pub head: Linear,
}

impl ModelParams {
    /// Seeded initialisation: truncated normal (σ = 0.02) weights, zero
    /// biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let dd = cfg.query_enc_dim;
        let raw = raw_embedding_len(cfg.num_freqs);
        Ok(Self {
            track_embed: Linear::new(&mut rng, raw, c),
            track_readout: nn::trunc_normal(&mut rng, c, nn::INIT_STD),
            track_tf: Transformer::new(&mut rng, c, None, true, &cfg.track_tf),
            latents: Mat::from_vec(
                cfg.num_latents,
                c,
                nn::trunc_normal(&mut rng, cfg.num_latents * c, nn::INIT_STD),
            ),
            perceiver: Transformer::new(&mut rng, c, Some(c), true, &cfg.perceiver_tf),
            down_proj: Linear::new(&mut rng, c, cfg.latent_dim),
            up_proj: Linear::new(&mut rng, cfg.latent_dim, cfg.upproj_dim),
            up_in: Linear::new(&mut rng, cfg.upproj_dim + cfg.window, dd),
            query_embed: Linear::new(&mut rng, raw, dd),
            latent_tf: Transformer::new(&mut rng, dd, Some(dd), true, &cfg.latent_tf),
            readout_tf: Transformer::new(&mut rng, dd, Some(dd), true, &cfg.readout_tf),
            head: Linear::new(&mut rng, dd, 3 * cfg.max_clip_len),
        })
    }

    /// Same structure with every entry set to zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, s, _| s.fill(0.0));
        z
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s, _| n += s.len());
        n
    }

    /// `(name, shape)` of every tensor in visiting order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, _, shape| out.push((name, shape)));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.visit("", &mut |_, s, _| out.push(s));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |_, s, _| out.push(s));
        out
    }
}

impl Visit for ModelParams {
    fn visit<'a>(&'a self, _name: &str, f: &mut dyn FnMut(String, &'a [f64], Vec<usize>)) {
        self.track_embed.visit("track_embed", f);
        self.track_readout.visit("track_readout", f);
        self.track_tf.visit("track_tf", f);
        self.latents.visit("latents", f);
        self.perceiver.visit("perceiver", f);
        self.down_proj.visit("down_proj", f);
        self.up_proj.visit("up_proj", f);
        self.up_in.visit("up_in", f);
        self.query_embed.visit("query_embed", f);
        self.latent_tf.visit("latent_tf", f);
        self.readout_tf.visit("readout_tf", f);
        self.head.visit("head", f);
    }

    fn visit_mut<'a>(&'a mut self, _name: &str, f: &mut dyn FnMut(String, &'a mut [f64], Vec<usize>)) {
        self.track_embed.visit_mut("track_embed", f);
        self.track_readout.visit_mut("track_readout", f);
        self.track_tf.visit_mut("track_tf", f);
        self.latents.visit_mut("latents", f);
        self.perceiver.visit_mut("perceiver", f);
        self.down_proj.visit_mut("down_proj", f);
        self.up_proj.visit_mut("up_proj", f);
        self.up_in.visit_mut("up_in", f);
        self.query_embed.visit_mut("query_embed", f);
        self.latent_tf.visit_mut("latent_tf", f);
        self.readout_tf.visit_mut("readout_tf", f);
        self.head.visit_mut("head", f);
    }
}

/// The fixed-size motion representation of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionLatent {
    /// `[num_latents, latent_dim]`
    pub tokens: Mat,
}

impl MotionLatent {
    pub fn shape(&self) -> (usize, usize) {
        (self.tokens.rows, self.tokens.cols)
    }
}

/// A decoded track in pixel units of the requested resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedTrack {
    pub positions: Vec<[f64; 2]>,
    pub occlusion_logits: Vec<f64>,
}

impl ReconstructedTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Encodes a track set into its motion latent.
pub fn encode(params: &ModelParams, cfg: &ModelConfig, ts: &TrackSet) -> Result<MotionLatent> {
    encode_clip(params, cfg, &ClipInput::from_trackset(ts))
}

/// Encodes normalised track arrays; fails on an empty track set.
pub fn encode_clip(params: &ModelParams, cfg: &ModelConfig, clip: &ClipInput) -> Result<MotionLatent> {
    clip.check(cfg)?;
    let tokens = graph::encode_forward(params, cfg, std::slice::from_ref(clip), false).0;
    Ok(MotionLatent { tokens })
}

/// Decodes the track through `q` for a clip of `clip_len` frames at the
/// given resolution.
pub fn decode(
    params: &ModelParams,
    cfg: &ModelConfig,
    latent: &MotionLatent,
    q: &QueryPoint,
    clip_len: usize,
    width: u32,
    height: u32,
) -> Result<ReconstructedTrack> {
    Ok(decode_many(params, cfg, latent, std::slice::from_ref(q), clip_len, width, height)?
        .pop()
        .expect("one query in, one track out"))
}

/// Decodes several queries against one latent in a single batched pass.
pub fn decode_many(
    params: &ModelParams,
    cfg: &ModelConfig,
    latent: &MotionLatent,
    queries: &[QueryPoint],
    clip_len: usize,
    width: u32,
    height: u32,
) -> Result<Vec<ReconstructedTrack>> {
    if latent.shape() != (cfg.num_latents, cfg.latent_dim) {
        return Err(Error::contract(format!(
            "latent shape {:?} does not match config ({}, {})",
            latent.shape(),
            cfg.num_latents,
            cfg.latent_dim
        )));
    }
    if clip_len > cfg.max_clip_len {
        return Err(Error::Bounds {
            index: clip_len,
            limit: cfg.max_clip_len + 1,
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::validation("resolution must be positive"));
    }
    let (w, h) = (f64::from(width), f64::from(height));
    let dq = queries
        .iter()
        .map(|q| {
            if q.t >= clip_len {
                return Err(Error::Bounds {
                    index: q.t,
                    limit: clip_len,
                });
            }
            Ok(DecodeQuery {
                clip: 0,
                x: q.x / w,
                y: q.y / h,
                frame: q.t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = graph::decode_forward(params, cfg, &latent.tokens, &dq, false).0;
    Ok((0..queries.len())
        .map(|i| {
            let row = out.row(i);
            ReconstructedTrack {
                positions: (0..clip_len)
                    .map(|t| [row[3 * t] * w, row[3 * t + 1] * h])
                    .collect(),
                occlusion_logits: (0..clip_len).map(|t| row[3 * t + 2]).collect(),
            }
        })
        .collect())
}

/// Parameters bundled with the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajan {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Trajan {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn encode(&self, ts: &TrackSet) -> Result<MotionLatent> {
        encode(&self.params, &self.config, ts)
    }

    pub fn decode(&self, latent: &MotionLatent, q: &QueryPoint, clip_len: usize, width: u32, height: u32) -> Result<ReconstructedTrack> {
        decode(&self.params, &self.config, latent, q, clip_len, width, height)
    }
}
