//! Batched forward graph of the autoencoder and its reverse pass.

use super::nn::{Routing, Segment, Transformer, TransformerCache};
use super::{embedding_frequencies, raw_embedding_len, sinusoid_features, ModelConfig, ModelParams};
use crate::linalg::Mat;
use crate::trackdata::TrackSet;
use crate::{Error, Result};

/// Track arrays in normalised coordinates (`x/width`, `y/height`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInput {
    pub clip_len: usize,
    pub num_tracks: usize,
    /// Frame-major, `t * num_tracks + j`.
    pub positions: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl ClipInput {
    pub fn from_trackset(ts: &TrackSet) -> Self {
        let (w, h) = (f64::from(ts.width()), f64::from(ts.height()));
        Self {
            clip_len: ts.clip_len(),
            num_tracks: ts.num_tracks(),
            positions: ts
                .positions()
                .iter()
                .map(|p| [f64::from(p[0]) / w, f64::from(p[1]) / h])
                .collect(),
            visible: ts.occluded().iter().map(|o| !o).collect(),
        }
    }

    pub(crate) fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.num_tracks == 0 {
            return Err(Error::EmptyInput("encoder needs at least one track".into()));
        }
        if self.clip_len == 0 || self.clip_len > cfg.max_clip_len {
            return Err(Error::Bounds {
                index: self.clip_len,
                limit: cfg.max_clip_len + 1,
            });
        }
        let cells = self.clip_len * self.num_tracks;
        if self.positions.len() != cells || self.visible.len() != cells {
            return Err(Error::contract("clip arrays do not match clip_len × num_tracks"));
        }
        Ok(())
    }
}

/// One decoder query: which clip's latent, normalised position, frame index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeQuery {
    pub clip: usize,
    pub x: f64,
    pub y: f64,
    pub frame: usize,
}

fn self_segments(starts: impl Iterator<Item = (usize, usize)>) -> Vec<Segment> {
    starts
        .map(|(s, n)| Segment {
            q0: s,
            qn: n,
            k0: s,
            kn: n,
        })
        .collect()
}

pub struct EncoderCache {
    feats: Mat,
    track_segs: Vec<Segment>,
    mask: Vec<bool>,
    readout_rows: Vec<usize>,
    frame_rows: Vec<usize>,
    track_cache: TransformerCache,
    readouts: Mat,
    lat_self: Vec<Segment>,
    lat_cross: Vec<Segment>,
    perc_cache: TransformerCache,
    perc_out: Mat,
    n_clips: usize,
}

/// Encodes a batch of clips. Returns `[n_clips · num_latents, latent_dim]`.
pub fn encode_forward(p: &ModelParams, cfg: &ModelConfig, clips: &[ClipInput], keep: bool) -> (Mat, Option<EncoderCache>) {
    let c = cfg.channels;
    let freqs = embedding_frequencies(cfg.num_freqs);
    let raw = raw_embedding_len(cfg.num_freqs);
    let total_tracks: usize = clips.iter().map(|cl| cl.num_tracks).sum();
    let total_samples: usize = clips.iter().map(|cl| cl.num_tracks * cl.clip_len).sum();

    // Rows are ordered clip, track, frame.
    let mut feats = Mat::zeros(total_samples, raw);
    let mut row = 0;
    for cl in clips {
        for j in 0..cl.num_tracks {
            for t in 0..cl.clip_len {
                let pos = cl.positions[t * cl.num_tracks + j];
                let tn = t as f64 / cfg.max_clip_len as f64;
                sinusoid_features(pos[0], pos[1], tn, &freqs, feats.row_mut(row));
                row += 1;
            }
        }
    }
    let emb = p.track_embed.forward(&feats);

    let n_tok = total_samples + total_tracks;
    let mut x = Mat::zeros(n_tok, c);
    let mut mask = Vec::with_capacity(n_tok);
    let mut segs = Vec::with_capacity(total_tracks);
    let mut readout_rows = Vec::with_capacity(total_tracks);
    let mut frame_rows = Vec::with_capacity(total_samples);
    let mut tok = 0;
    let mut src = 0;
    for cl in clips {
        for j in 0..cl.num_tracks {
            segs.push((tok, cl.clip_len + 1));
            x.row_mut(tok).copy_from_slice(&p.track_readout);
            readout_rows.push(tok);
            mask.push(true);
            tok += 1;
            for t in 0..cl.clip_len {
                x.row_mut(tok).copy_from_slice(emb.row(src));
                frame_rows.push(tok);
                mask.push(cl.visible[t * cl.num_tracks + j]);
                tok += 1;
                src += 1;
            }
        }
    }
    let track_segs = self_segments(segs.into_iter());
    let route = Routing {
        self_segs: &track_segs,
        self_mask: Some(&mask),
        cross_segs: &[],
        cross_mask: None,
    };
    let (y, track_cache) = forward_tf(&p.track_tf, &x, None, route, keep);
    let mut readouts = Mat::zeros(total_tracks, c);
    for (i, &r) in readout_rows.iter().enumerate() {
        readouts.row_mut(i).copy_from_slice(y.row(r));
    }

    let nl = cfg.num_latents;
    let mut lat = Mat::zeros(clips.len() * nl, c);
    for ci in 0..clips.len() {
        lat.data[ci * nl * c..(ci + 1) * nl * c].copy_from_slice(&p.latents.data);
    }
    let lat_self = self_segments((0..clips.len()).map(|ci| (ci * nl, nl)));
    let mut lat_cross = Vec::with_capacity(clips.len());
    let mut k0 = 0;
    for (ci, cl) in clips.iter().enumerate() {
        lat_cross.push(Segment {
            q0: ci * nl,
            qn: nl,
            k0,
            kn: cl.num_tracks,
        });
        k0 += cl.num_tracks;
    }
    let route = Routing {
        self_segs: &lat_self,
        self_mask: None,
        cross_segs: &lat_cross,
        cross_mask: None,
    };
    let (perc_out, perc_cache) = forward_tf(&p.perceiver, &lat, Some(&readouts), route, keep);
    let out = p.down_proj.forward(&perc_out);
    let cache = match (track_cache, perc_cache) {
        (Some(track_cache), Some(perc_cache)) => Some(EncoderCache {
            feats,
            track_segs,
            mask,
            readout_rows,
            frame_rows,
            track_cache,
            readouts,
            lat_self,
            lat_cross,
            perc_cache,
            perc_out,
            n_clips: clips.len(),
        }),
        _ => None,
    };
    (out, cache)
}

fn forward_tf(tf: &Transformer, x: &Mat, ctx: Option<&Mat>, route: Routing<'_>, keep: bool) -> (Mat, Option<TransformerCache>) {
    if keep {
        let (y, c) = tf.forward(x, ctx, route);
        (y, Some(c))
    } else {
        (tf.infer(x, ctx, route), None)
    }
}

/// Accumulates encoder gradients from `dL/d latent`.
pub fn encode_backward(p: &ModelParams, cfg: &ModelConfig, cache: &EncoderCache, dout: &Mat, g: &mut ModelParams) {
    let c = cfg.channels;
    let nl = cfg.num_latents;
    let dperc = p.down_proj.backward(&cache.perc_out, dout, &mut g.down_proj);
    let route = Routing {
        self_segs: &cache.lat_self,
        self_mask: None,
        cross_segs: &cache.lat_cross,
        cross_mask: None,
    };
    let (dlat, dreadouts) = p.perceiver.backward(
        &cache.perc_cache,
        &dperc,
        Some((cache.readouts.rows, cache.readouts.cols)),
        route,
        &mut g.perceiver,
    );
    for ci in 0..cache.n_clips {
        for (gl, d) in g.latents.data.iter_mut().zip(&dlat.data[ci * nl * c..(ci + 1) * nl * c]) {
            *gl += d;
        }
    }
    let dreadouts = dreadouts.expect("perceiver has a cross path");
    let n_tok = cache.mask.len();
    let mut dy = Mat::zeros(n_tok, c);
    for (i, &r) in cache.readout_rows.iter().enumerate() {
        dy.row_mut(r).copy_from_slice(dreadouts.row(i));
    }
    let route = Routing {
        self_segs: &cache.track_segs,
        self_mask: Some(&cache.mask),
        cross_segs: &[],
        cross_mask: None,
    };
    let (dx, _) = p.track_tf.backward(&cache.track_cache, &dy, None, route, &mut g.track_tf);
    for &r in &cache.readout_rows {
        for (gr, d) in g.track_readout.iter_mut().zip(dx.row(r)) {
            *gr += d;
        }
    }
    let mut demb = Mat::zeros(cache.frame_rows.len(), c);
    for (i, &r) in cache.frame_rows.iter().enumerate() {
        demb.row_mut(i).copy_from_slice(dx.row(r));
    }
    p.track_embed.backward_params(&cache.feats, &demb, &mut g.track_embed);
}

pub struct DecoderCache {
    up: Mat,
    ucat: Mat,
    qfeats: Mat,
    z0: Mat,
    r0: Mat,
    lat_self: Vec<Segment>,
    lat_cross: Vec<Segment>,
    lat_cache: TransformerCache,
    z: Mat,
    rd_self: Vec<Segment>,
    rd_cross: Vec<Segment>,
    rd_cache: TransformerCache,
    rf: Mat,
    starts: Vec<(usize, usize)>,
}

/// Decodes queries against per-clip latents `[n_clips · num_latents,
/// latent_dim]`. Returns `[n_queries, 3 · max_clip_len]` rows of
/// `(x, y, logit)` per frame in normalised coordinates.
pub fn decode_forward(p: &ModelParams, cfg: &ModelConfig, latents: &Mat, queries: &[DecodeQuery], keep: bool) -> (Mat, Option<DecoderCache>) {
    let nl = cfg.num_latents;
    let up_w = cfg.upproj_dim;
    let win = cfg.window;
    let stride = cfg.stride();
    let nq = queries.len();
    let up = p.up_proj.forward(latents);

    let mut ucat = Mat::zeros(nq * nl, up_w + win);
    let mut starts = Vec::with_capacity(nq);
    for (qi, q) in queries.iter().enumerate() {
        let s = stride * q.frame;
        starts.push((q.clip, s));
        for l in 0..nl {
            let src = up.row(q.clip * nl + l);
            let dst = ucat.row_mut(qi * nl + l);
            dst[..up_w].copy_from_slice(src);
            dst[up_w..].copy_from_slice(&src[s..s + win]);
        }
    }
    let z0 = p.up_in.forward(&ucat);

    let freqs = embedding_frequencies(cfg.num_freqs);
    let mut qfeats = Mat::zeros(nq, raw_embedding_len(cfg.num_freqs));
    for (qi, q) in queries.iter().enumerate() {
        let tn = q.frame as f64 / cfg.max_clip_len as f64;
        sinusoid_features(q.x, q.y, tn, &freqs, qfeats.row_mut(qi));
    }
    let r0 = p.query_embed.forward(&qfeats);

    let lat_self = self_segments((0..nq).map(|qi| (qi * nl, nl)));
    let lat_cross: Vec<Segment> = (0..nq)
        .map(|qi| Segment {
            q0: qi * nl,
            qn: nl,
            k0: qi,
            kn: 1,
        })
        .collect();
    let route = Routing {
        self_segs: &lat_self,
        self_mask: None,
        cross_segs: &lat_cross,
        cross_mask: None,
    };
    let (z, lat_cache) = forward_tf(&p.latent_tf, &z0, Some(&r0), route, keep);

    let rd_self = self_segments((0..nq).map(|qi| (qi, 1)));
    let rd_cross: Vec<Segment> = (0..nq)
        .map(|qi| Segment {
            q0: qi,
            qn: 1,
            k0: qi * nl,
            kn: nl,
        })
        .collect();
    let route = Routing {
        self_segs: &rd_self,
        self_mask: None,
        cross_segs: &rd_cross,
        cross_mask: None,
    };
    let (rf, rd_cache) = forward_tf(&p.readout_tf, &r0, Some(&z), route, keep);
    // The head predicts each frame's offset from the query point.
    let mut out = p.head.forward(&rf);
    for (qi, q) in queries.iter().enumerate() {
        for f in out.row_mut(qi).chunks_exact_mut(3) {
            f[0] += q.x;
            f[1] += q.y;
        }
    }
    let cache = match (lat_cache, rd_cache) {
        (Some(lat_cache), Some(rd_cache)) => Some(DecoderCache {
            up,
            ucat,
            qfeats,
            z0,
            r0,
            lat_self,
            lat_cross,
            lat_cache,
            z,
            rd_self,
            rd_cross,
            rd_cache,
            rf,
            starts,
        }),
        _ => None,
    };
    (out, cache)
}

/// Accumulates decoder gradients and returns `dL/d latents`.
pub fn decode_backward(p: &ModelParams, cfg: &ModelConfig, latents: &Mat, cache: &DecoderCache, dout: &Mat, g: &mut ModelParams) -> Mat {
    let nl = cfg.num_latents;
    let up_w = cfg.upproj_dim;
    let win = cfg.window;
    let drf = p.head.backward(&cache.rf, dout, &mut g.head);
    let route = Routing {
        self_segs: &cache.rd_self,
        self_mask: None,
        cross_segs: &cache.rd_cross,
        cross_mask: None,
    };
    let (mut dr0, dz) = p.readout_tf.backward(
        &cache.rd_cache,
        &drf,
        Some((cache.z.rows, cache.z.cols)),
        route,
        &mut g.readout_tf,
    );
    let dz = dz.expect("readout transformer has a cross path");
    let route = Routing {
        self_segs: &cache.lat_self,
        self_mask: None,
        cross_segs: &cache.lat_cross,
        cross_mask: None,
    };
    let (dz0, dr0_lat) = p.latent_tf.backward(
        &cache.lat_cache,
        &dz,
        Some((cache.r0.rows, cache.r0.cols)),
        route,
        &mut g.latent_tf,
    );
    dr0.add_assign(&dr0_lat.expect("latent transformer has a cross path"));
    p.query_embed.backward_params(&cache.qfeats, &dr0, &mut g.query_embed);
    debug_assert_eq!(cache.z0.rows, dz0.rows);
    let ducat = p.up_in.backward(&cache.ucat, &dz0, &mut g.up_in);
    let mut dup = Mat::zeros(cache.up.rows, cache.up.cols);
    for (qi, &(clip, s)) in cache.starts.iter().enumerate() {
        for l in 0..nl {
            let src = ducat.row(qi * nl + l);
            let dst = dup.row_mut(clip * nl + l);
            for (d, v) in dst.iter_mut().zip(&src[..up_w]) {
                *d += v;
            }
            for (d, v) in dst[s..s + win].iter_mut().zip(&src[up_w..]) {
                *d += v;
            }
        }
    }
    p.up_proj.backward(latents, &dup, &mut g.up_proj)
}
