//! Run configuration and its flat `key = value` file format.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::DEFAULT_CANDIDATE_CAP;
use crate::dedup::DEFAULT_SIGMA;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_TOPICS;
use crate::logmodel::DEFAULT_SESSION_GAP;
use crate::propagation::{Variant, DEFAULT_K};
use crate::retrieval::DEFAULT_M;
use crate::selection::DEFAULT_N;

/// Result depth of the original query when measuring coverage. Desk-scale
/// corpora hold hundreds of documents, so this is far below web scale.
pub const DEFAULT_COVERAGE_N: usize = 50;
pub const DEFAULT_COVERAGE_K: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Class-to-instance edge weight.
    pub k: f64,
    /// Dedup threshold.
    pub sigma: f64,
    /// Documents retrieved per aspect.
    pub m: usize,
    /// Aspects reported per query.
    pub n: usize,
    pub coverage_n: usize,
    pub coverage_k: usize,
    pub candidate_cap: usize,
    pub session_gap_seconds: i64,
    pub variant: Variant,
    pub topic_t: usize,
    pub grouping: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k: DEFAULT_K,
            sigma: DEFAULT_SIGMA,
            m: DEFAULT_M,
            n: DEFAULT_N,
            coverage_n: DEFAULT_COVERAGE_N,
            coverage_k: DEFAULT_COVERAGE_K,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            session_gap_seconds: DEFAULT_SESSION_GAP,
            variant: Variant::default(),
            topic_t: DEFAULT_TOPICS,
            grouping: true,
        }
    }
}

/// Recognized keys. `n` (aspects shown) and `N` (coverage depth) differ only
/// in case, so keys are case-sensitive.
pub const KEYS: &[&str] = &[
    "K",
    "sigma",
    "m",
    "n",
    "N",
    "coverage_k",
    "candidate_cap",
    "session_gap_seconds",
    "variant",
    "topic_T",
    "grouping",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl Config {
    /// Set one key from its textual value. Bounds are checked by
    /// [`Config::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "K" => self.k = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "N" => self.coverage_n = parse_num(key, value)?,
            "coverage_k" => self.coverage_k = parse_num(key, value)?,
            "candidate_cap" => self.candidate_cap = parse_num(key, value)?,
            "session_gap_seconds" => self.session_gap_seconds = parse_num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "topic_T" => self.topic_t = parse_num(key, value)?,
            "grouping" => self.grouping = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return bad(format!("K must be a finite value >= 0, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad(format!("sigma must lie in [0, 1], got {}", self.sigma));
        }
        for (name, v) in [
            ("m", self.m),
            ("n", self.n),
            ("N", self.coverage_n),
            ("coverage_k", self.coverage_k),
            ("candidate_cap", self.candidate_cap),
            ("topic_T", self.topic_t),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.session_gap_seconds <= 0 {
            return bad(format!("session_gap_seconds must be positive, got {}", self.session_gap_seconds));
        }
        Ok(())
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, idx + 1, "expected key = value"))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults overlaid with a config file.
    pub fn from_file(path: &Path) -> Result<Config> {
        let mut config = Config::default();
        config.apply_file(path)?;
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for Config {
    /// The file format, every key present.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "K = {}", self.k)?;
        writeln!(f, "sigma = {}", self.sigma)?;
        writeln!(f, "m = {}", self.m)?;
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "N = {}", self.coverage_n)?;
        writeln!(f, "coverage_k = {}", self.coverage_k)?;
        writeln!(f, "candidate_cap = {}", self.candidate_cap)?;
        writeln!(f, "session_gap_seconds = {}", self.session_gap_seconds)?;
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "topic_T = {}", self.topic_t)?;
        writeln!(f, "grouping = {}", self.grouping)
    }
}
