//! Pipeline hyperparameters and their flat `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the per-neck semantic centers handed to the video module are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterMode {
    /// Averaged K-means centroid.
    Center,
    /// One random member of each cluster.
    Sample,
    /// Random vectors, no clustering.
    Random,
}

impl FromStr for CenterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Self::Center),
            "sample" => Ok(Self::Sample),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!(
                "center_mode must be center|sample|random, got {other}"
            ))),
        }
    }
}

impl CenterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Center => "center",
            Self::Sample => "sample",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// N_e
    pub necks: usize,
    /// N_c
    pub clusters: usize,
    /// d_e
    pub neck_dim: usize,
    /// Hidden width of the per-neck two-layer perceptrons.
    pub mlp_hidden: usize,
    /// d_e'
    pub joint_dim: usize,
    /// d_r, also the LSTM hidden size.
    pub sentence_dim: usize,
    pub attention_heads: usize,
    pub max_query_len: usize,

    pub lambda: f64,
    pub alpha_w: f64,
    pub beta_w: f64,
    pub alpha_v: f64,
    pub beta_v: f64,
    pub theta: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub threshold: f64,

    /// J
    pub centers_per_batch: usize,
    /// Z
    pub videos_per_batch: usize,
    /// L (outer iterations of the video module)
    pub iterations: usize,
    pub language_epochs: usize,
    pub language_batch: usize,
    pub lr_language: f64,
    pub lr_video: f64,
    /// Gaussian kernel bandwidth; `None` picks the median pairwise distance.
    pub ncut_sigma: Option<f64>,
    pub center_mode: CenterMode,
    /// Candidates kept per query at inference.
    pub top_n: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            necks: 4,
            clusters: 16,
            neck_dim: 64,
            mlp_hidden: 64,
            joint_dim: 1024,
            sentence_dim: 512,
            attention_heads: 4,
            max_query_len: 10,
            lambda: 0.5,
            alpha_w: 0.5,
            beta_w: 0.5,
            alpha_v: 0.5,
            beta_v: 0.5,
            theta: 1.0,
            tau1: 1e-4,
            tau2: 1e-4,
            tau3: 0.5,
            threshold: 0.9,
            centers_per_batch: 4,
            videos_per_batch: 8,
            iterations: 5,
            language_epochs: 30,
            language_batch: 32,
            lr_language: 1e-4,
            lr_video: 5e-4,
            ncut_sigma: None,
            center_mode: CenterMode::Center,
            top_n: 5,
            kmeans_restarts: 8,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value}")))
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if self.clusters < 2 {
            return bad("clusters must be at least 2");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]");
        }
        for (name, m) in [("tau1", self.tau1), ("tau2", self.tau2), ("tau3", self.tau3)] {
            if !(m >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        for (name, w) in [
            ("alpha_w", self.alpha_w),
            ("beta_w", self.beta_w),
            ("alpha_v", self.alpha_v),
            ("beta_v", self.beta_v),
            ("theta", self.theta),
        ] {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if self.necks == 0 || self.neck_dim == 0 || self.joint_dim == 0 || self.sentence_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.attention_heads == 0 || self.joint_dim % self.attention_heads != 0 {
            return bad("joint_dim must be divisible by attention_heads");
        }
        if self.max_query_len == 0 {
            return bad("max_query_len must be positive");
        }
        if self.videos_per_batch < 2 {
            return bad("videos_per_batch must be at least 2");
        }
        if self.centers_per_batch == 0 || self.centers_per_batch > self.clusters {
            return bad("centers_per_batch must lie in [1, clusters]");
        }
        if let Some(s) = self.ncut_sigma {
            if !(s > 0.0) {
                return bad("ncut_sigma must be positive");
            }
        }
        if !(self.lr_language >= 0.0 && self.lr_video >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.top_n == 0 || self.kmeans_restarts == 0 {
            return bad("top_n and kmeans_restarts must be positive");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "necks" => self.necks = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "neck_dim" => self.neck_dim = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "joint_dim" => self.joint_dim = parse(key, value)?,
            "sentence_dim" => self.sentence_dim = parse(key, value)?,
            "attention_heads" => self.attention_heads = parse(key, value)?,
            "max_query_len" => self.max_query_len = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "alpha_w" => self.alpha_w = parse(key, value)?,
            "beta_w" => self.beta_w = parse(key, value)?,
            "alpha_v" => self.alpha_v = parse(key, value)?,
            "beta_v" => self.beta_v = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "tau1" => self.tau1 = parse(key, value)?,
            "tau2" => self.tau2 = parse(key, value)?,
            "tau3" => self.tau3 = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "centers_per_batch" => self.centers_per_batch = parse(key, value)?,
            "videos_per_batch" => self.videos_per_batch = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "language_epochs" => self.language_epochs = parse(key, value)?,
            "language_batch" => self.language_batch = parse(key, value)?,
            "lr_language" => self.lr_language = parse(key, value)?,
            "lr_video" => self.lr_video = parse(key, value)?,
            "ncut_sigma" => {
                self.ncut_sigma = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "center_mode" => self.center_mode = value.parse()?,
            "top_n" => self.top_n = parse(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("necks", self.necks.to_string());
        kv("clusters", self.clusters.to_string());
        kv("neck_dim", self.neck_dim.to_string());
        kv("mlp_hidden", self.mlp_hidden.to_string());
        kv("joint_dim", self.joint_dim.to_string());
        kv("sentence_dim", self.sentence_dim.to_string());
        kv("attention_heads", self.attention_heads.to_string());
        kv("max_query_len", self.max_query_len.to_string());
        kv("lambda", format!("{:?}", self.lambda));
        kv("alpha_w", format!("{:?}", self.alpha_w));
        kv("beta_w", format!("{:?}", self.beta_w));
        kv("alpha_v", format!("{:?}", self.alpha_v));
        kv("beta_v", format!("{:?}", self.beta_v));
        kv("theta", format!("{:?}", self.theta));
        kv("tau1", format!("{:?}", self.tau1));
        kv("tau2", format!("{:?}", self.tau2));
        kv("tau3", format!("{:?}", self.tau3));
        kv("threshold", format!("{:?}", self.threshold));
        kv("centers_per_batch", self.centers_per_batch.to_string());
        kv("videos_per_batch", self.videos_per_batch.to_string());
        kv("iterations", self.iterations.to_string());
        kv("language_epochs", self.language_epochs.to_string());
        kv("language_batch", self.language_batch.to_string());
        kv("lr_language", format!("{:?}", self.lr_language));
        kv("lr_video", format!("{:?}", self.lr_video));
        kv(
            "ncut_sigma",
            self.ncut_sigma
                .map_or_else(|| "auto".to_string(), |s| format!("{s:?}")),
        );
        kv("center_mode", self.center_mode.as_str().to_string());
        kv("top_n", self.top_n.to_string());
        kv("kmeans_restarts", self.kmeans_restarts.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    /// Short stable digest of the canonical text form, for run logs.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = Config::default();
        assert_eq!(c.clusters, 16);
        assert_eq!(c.joint_dim, 1024);
        assert_eq!(c.sentence_dim, 512);
        assert_eq!((c.lambda, c.alpha_w, c.beta_w, c.alpha_v, c.beta_v), (0.5, 0.5, 0.5, 0.5, 0.5));
        assert_eq!((c.theta, c.tau1, c.tau2, c.tau3), (1.0, 1e-4, 1e-4, 0.5));
        assert_eq!((c.lr_language, c.lr_video), (1e-4, 5e-4));
        assert_eq!(c.iterations, 5);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.ncut_sigma = Some(0.75);
        c.center_mode = CenterMode::Sample;
        c.tau1 = 0.1 + 0.2;
        let back = Config::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_text("lambda = 0").is_err());
        assert!(Config::from_text("lambda = 1.5").is_err());
        assert!(Config::from_text("clusters = 1").is_err());
        assert!(Config::from_text("tau3 = -1").is_err());
        assert!(Config::from_text("threshold = 0").is_err());
        assert!(Config::from_text("bogus = 3").is_err());
        assert!(Config::from_text("necks 4").is_err());
        let c = Config::from_text("# comment\nnecks = 2 # trailing\n\nthreshold = 1.0").unwrap();
        assert_eq!(c.necks, 2);
        assert_eq!(c.threshold, 1.0);
    }
}
