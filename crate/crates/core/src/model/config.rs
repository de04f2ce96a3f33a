use super::nn::TransformerConfig;
use super::raw_embedding_len;
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Architecture hyper-parameters of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_freqs: usize,
    /// Track token width `C`.
    pub channels: usize,
    pub num_latents: usize,
    pub latent_dim: usize,
    pub upproj_dim: usize,
    /// Width of the time-specific window cut out of the up-projection.
    pub window: usize,
    /// Width of the query encoder and of both decoder transformers.
    pub query_enc_dim: usize,
    pub track_tf: TransformerConfig,
    pub perceiver_tf: TransformerConfig,
    pub latent_tf: TransformerConfig,
    pub readout_tf: TransformerConfig,
    pub max_clip_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let tf = |layers, mlp_dim| TransformerConfig {
            layers,
            heads: 8,
            qkv_per_head: 64,
            mlp_dim,
        };
        Self {
            num_freqs: 32,
            channels: 256,
            num_latents: 128,
            latent_dim: 64,
            upproj_dim: 1024,
            window: 128,
            query_enc_dim: 1024,
            track_tf: tf(2, 1024),
            perceiver_tf: tf(3, 2048),
            latent_tf: tf(3, 2048),
            readout_tf: tf(4, 1024),
            max_clip_len: 150,
        }
    }
}

const TF_KEYS: [&str; 4] = ["layers", "heads", "qkv_per_head", "mlp_dim"];
const TF_NAMES: [&str; 4] = ["track_tf", "perceiver_tf", "latent_tf", "readout_tf"];

impl ModelConfig {
    /// A small configuration for 16-frame clips that trains in minutes on a
    /// CPU.
    pub fn toy() -> Self {
        let tf = TransformerConfig {
            layers: 1,
            heads: 2,
            qkv_per_head: 16,
            mlp_dim: 64,
        };
        Self {
            num_freqs: 4,
            channels: 32,
            num_latents: 8,
            latent_dim: 16,
            upproj_dim: 48,
            window: 16,
            query_enc_dim: 32,
            track_tf: tf,
            perceiver_tf: tf,
            latent_tf: tf,
            readout_tf: TransformerConfig { layers: 2, ..tf },
            max_clip_len: 16,
        }
    }

    /// Step between window starts of consecutive frames, chosen so the window
    /// of the last frame still fits inside the up-projection.
    pub fn stride(&self) -> usize {
        if self.max_clip_len <= 1 {
            return 0;
        }
        self.upproj_dim.saturating_sub(self.window) / (self.max_clip_len - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_freqs", self.num_freqs),
            ("channels", self.channels),
            ("num_latents", self.num_latents),
            ("latent_dim", self.latent_dim),
            ("upproj_dim", self.upproj_dim),
            ("window", self.window),
            ("query_enc_dim", self.query_enc_dim),
            ("max_clip_len", self.max_clip_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, tf) in TF_NAMES.iter().zip(self.transformers()) {
            if tf.layers == 0 || tf.heads == 0 || tf.qkv_per_head == 0 || tf.mlp_dim == 0 {
                return Err(Error::Config(format!("{name}: all settings must be positive")));
            }
        }
        if self.window > self.upproj_dim {
            return Err(Error::Config(format!(
                "window {} exceeds up-projection width {}",
                self.window, self.upproj_dim
            )));
        }
        let last_start = self.stride() * (self.max_clip_len - 1);
        if last_start + self.window > self.upproj_dim {
            return Err(Error::Config(format!(
                "window for the last frame ({last_start}..{}) leaves the up-projection",
                last_start + self.window
            )));
        }
        Ok(())
    }

    fn transformers(&self) -> [TransformerConfig; 4] {
        [self.track_tf, self.perceiver_tf, self.latent_tf, self.readout_tf]
    }

    fn transformers_mut(&mut self) -> [&mut TransformerConfig; 4] {
        [
            &mut self.track_tf,
            &mut self.perceiver_tf,
            &mut self.latent_tf,
            &mut self.readout_tf,
        ]
    }

    /// Number of learnable scalars, computed from the configuration alone.
    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize| i * o + o;
        let attn = |d: usize, dc: usize, tf: &TransformerConfig| {
            let inner = tf.heads * tf.qkv_per_head;
            linear(d, inner) + 2 * linear(dc, inner) + linear(inner, d) + 2 * tf.qkv_per_head
        };
        let tfm = |d: usize, dc: Option<usize>, tf: &TransformerConfig| {
            let block = 4 * d
                + attn(d, d, tf)
                + dc.map_or(0, |dc| 2 * dc + attn(d, dc, tf))
                + linear(d, tf.mlp_dim)
                + linear(tf.mlp_dim, d);
            tf.layers * block + 2 * d
        };
        let c = self.channels;
        let dd = self.query_enc_dim;
        let raw = raw_embedding_len(self.num_freqs);
        linear(raw, c)
            + c
            + tfm(c, None, &self.track_tf)
            + self.num_latents * c
            + tfm(c, Some(c), &self.perceiver_tf)
            + linear(c, self.latent_dim)
            + linear(self.latent_dim, self.upproj_dim)
            + linear(self.upproj_dim + self.window, dd)
            + linear(raw, dd)
            + tfm(dd, Some(dd), &self.latent_tf)
            + tfm(dd, Some(dd), &self.readout_tf)
            + linear(dd, 3 * self.max_clip_len)
    }

    /// `key=value` pairs in a stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("num_freqs".to_string(), self.num_freqs.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("num_latents".into(), self.num_latents.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("upproj_dim".into(), self.upproj_dim.to_string()),
            ("window".into(), self.window.to_string()),
            ("query_enc_dim".into(), self.query_enc_dim.to_string()),
            ("max_clip_len".into(), self.max_clip_len.to_string()),
        ];
        for (name, tf) in TF_NAMES.iter().zip(self.transformers()) {
            let vals = [tf.layers, tf.heads, tf.qkv_per_head, tf.mlp_dim];
            for (k, v) in TF_KEYS.iter().zip(vals) {
                out.push((format!("{name}.{k}"), v.to_string()));
            }
        }
        out
    }

    /// Applies overrides on top of `self`. Unknown keys are rejected.
    pub fn with_pairs<'a>(mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        for (key, value) in pairs {
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {value:?}")))?;
            match key {
                "num_freqs" => self.num_freqs = v,
                "channels" => self.channels = v,
                "num_latents" => self.num_latents = v,
                "latent_dim" => self.latent_dim = v,
                "upproj_dim" => self.upproj_dim = v,
                "window" => self.window = v,
                "query_enc_dim" => self.query_enc_dim = v,
                "max_clip_len" => self.max_clip_len = v,
                other => {
                    let (tf_name, field) = other
                        .split_once('.')
                        .ok_or_else(|| Error::Config(format!("unknown model key {other:?}")))?;
                    let idx = TF_NAMES
                        .iter()
                        .position(|n| *n == tf_name)
                        .ok_or_else(|| Error::Config(format!("unknown model key {other:?}")))?;
                    let tf = &mut *self.transformers_mut()[idx];
                    match field {
                        "layers" => tf.layers = v,
                        "heads" => tf.heads = v,
                        "qkv_per_head" => tf.qkv_per_head = v,
                        "mlp_dim" => tf.mlp_dim = v,
                        _ => return Err(Error::Config(format!("unknown model key {other:?}"))),
                    }
                }
            }
        }
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_pairs(text)?;
        let cfg = Self::default().with_pairs(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines into an ordered map, rejecting duplicates.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {:?}", k.trim())));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_table() {
        let c = ModelConfig::default();
        assert_eq!(c.num_freqs, 32);
        assert_eq!((c.channels, c.num_latents, c.latent_dim), (256, 128, 64));
        assert_eq!((c.upproj_dim, c.window, c.query_enc_dim), (1024, 128, 1024));
        assert_eq!((c.track_tf.layers, c.track_tf.mlp_dim), (2, 1024));
        assert_eq!((c.perceiver_tf.layers, c.perceiver_tf.mlp_dim), (3, 2048));
        assert_eq!((c.latent_tf.layers, c.latent_tf.mlp_dim), (3, 2048));
        assert_eq!((c.readout_tf.layers, c.readout_tf.mlp_dim), (4, 1024));
        for tf in c.transformers() {
            assert_eq!((tf.heads, tf.qkv_per_head), (8, 64));
        }
        assert_eq!(c.stride(), 6);
        c.validate().unwrap();
    }

    #[test]
    fn window_always_in_range() {
        for max_len in [2usize, 16, 150] {
            for (up, w) in [(1024, 128), (64, 16), (20, 20)] {
                let c = ModelConfig {
                    max_clip_len: max_len,
                    upproj_dim: up,
                    window: w,
                    ..ModelConfig::default()
                };
                c.validate().unwrap();
                assert!(c.stride() * (max_len - 1) + w <= up);
            }
        }
        let bad = ModelConfig {
            window: 2000,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = ModelConfig {
            channels: 32,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        assert!(ModelConfig::from_text("bogus=1").is_err());
        assert!(ModelConfig::from_text("track_tf.depth=1").is_err());
    }
}
