use motionbench::dist::PoolMode;
use motionbench::model::{parse_pairs, ModelConfig};
use motionbench::recon::AJConfig;
use motionbench::train::TrainConfig;
use motionbench::{Error, Result};
use std::path::{Component, Path, PathBuf};

pub const CONFIG_ENV: &str = "MOTIONBENCH_CONFIG";

/// Every tunable of a run, resolved from defaults, the config file and
/// `--set` overrides (in that order).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub aj: AJConfig,
    pub n_support: usize,
    pub n_query: usize,
    pub pool: PoolMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("."),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            aj: AJConfig::default(),
            n_support: 256,
            n_query: 256,
            pool: PoolMode::MeanTokens,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("model.") {
            self.model = self.model.with_pairs([(k, value)])?;
            return Ok(());
        }
        if let Some(k) = key.strip_prefix("train.") {
            self.train = self.train.with_pairs([(k, value)])?;
            return Ok(());
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "aj.thresholds" => {
                self.aj.thresholds = value
                    .split(',')
                    .map(|t| parse(key, t))
                    .collect::<Result<Vec<f64>>>()?
            }
            "aj.eval_width" => self.aj.eval_width = parse(key, value)?,
            "aj.eval_height" => self.aj.eval_height = parse(key, value)?,
            "aj.occl_logit_cutoff" => self.aj.occl_logit_cutoff = parse(key, value)?,
            "score.n_support" => self.n_support = parse(key, value)?,
            "score.n_query" => self.n_query = parse(key, value)?,
            "embed.pool" => self.pool = value.trim().parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.apply(&k, &v)?;
        }
        Ok(())
    }

    /// Loads `file` (or the file named by the environment) and then the
    /// `key=value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        if let Some(path) = file.map(Path::to_path_buf).or(env_path) {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::from(e).with_context(path.display()))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            cfg.apply(k.trim(), v)?;
        }
        cfg.model.validate()?;
        cfg.aj.validate()?;
        cfg.train.weights.validate()?;
        Ok(cfg)
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("out_dir".to_string(), self.out_dir.display().to_string())];
        out.extend(self.model.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        out.extend(self.train.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        let th: Vec<String> = self.aj.thresholds.iter().map(|t| t.to_string()).collect();
        out.push(("aj.thresholds".into(), th.join(",")));
        out.push(("aj.eval_width".into(), self.aj.eval_width.to_string()));
        out.push(("aj.eval_height".into(), self.aj.eval_height.to_string()));
        out.push(("aj.occl_logit_cutoff".into(), self.aj.occl_logit_cutoff.to_string()));
        out.push(("score.n_support".into(), self.n_support.to_string()));
        out.push(("score.n_query".into(), self.n_query.to_string()));
        let pool = match self.pool {
            PoolMode::MeanTokens => "mean_tokens",
            PoolMode::Flatten => "flatten",
        };
        out.push(("embed.pool".into(), pool.into()));
        out
    }

    /// Resolves an output name inside `out_dir`. Absolute paths and `..`
    /// are refused so nothing is written elsewhere.
    pub fn output_path(&self, name: &Path) -> Result<PathBuf> {
        let confined = name
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
        if !confined || name.as_os_str().is_empty() {
            return Err(Error::validation(format!(
                "output {:?} must be a relative path inside out_dir",
                name.display()
            )));
        }
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::from(e).with_context(parent.display()))?;
        }
        Ok(path)
    }
}
