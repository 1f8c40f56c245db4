//! Run configuration and its flat `key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! seed = 7                 # sets data.seed and model.seed
//! optim.algorithm = adam   # also resets optim.eta to the preset rate
//! data.d = 1000
//! run.T = 10000
//! ```
//!
//! `optim.algorithm` is applied before every other key regardless of its
//! position, so an explicit `optim.eta` always wins. Unknown keys are errors.
//! Keys under `summary.` are ignored, which lets a run summary be fed back
//! in as a configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DataConfig;
use crate::error::{invalid, Error, Result};
use crate::model::ModelConfig;
use crate::optim::{Algorithm, OptimConfig, ProbeSchedule, TrainOptions};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "FEATLAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";
pub const PRESETS: &[&str] = &["paper-sec6"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    /// Iterations `T`.
    pub steps: usize,
    pub test_size: usize,
    pub probe_every: usize,
    pub test_every: usize,
    pub best_after: f64,
    pub output_dir: PathBuf,
    /// Empty means "derive from algorithm and seed".
    pub run_id: String,
}

/// Preset learning rate for each optimizer.
pub fn preset_eta(algorithm: Algorithm) -> f64 {
    match algorithm {
        Algorithm::Gd => 0.02,
        Algorithm::Adam | Algorithm::SignGd => 5e-5,
    }
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

impl RunConfig {
    /// The headline synthetic setting with `algorithm`'s preset rate.
    pub fn standard(algorithm: Algorithm) -> Self {
        Self {
            data: DataConfig::standard(),
            model: ModelConfig::standard(),
            optim: OptimConfig::new(algorithm, preset_eta(algorithm)),
            steps: 10_000,
            test_size: 10_000,
            probe_every: 10,
            test_every: 500,
            best_after: 0.5,
            output_dir: default_output_dir(),
            run_id: String::new(),
        }
    }

    pub fn preset(name: &str, algorithm: Algorithm) -> Result<Self> {
        match name {
            "paper-sec6" => Ok(Self::standard(algorithm)),
            other => Err(invalid(format!(
                "unknown preset {other:?} (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.optim.validate()?;
        if !(0.0..=1.0).contains(&self.best_after) {
            return Err(invalid(format!(
                "run.best_after must lie in [0, 1], got {}",
                self.best_after
            )));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            schedule: ProbeSchedule {
                probe_every: self.probe_every,
                test_every: self.test_every,
            },
            best_after: self.best_after,
        }
    }

    pub fn resolved_run_id(&self) -> String {
        if self.run_id.is_empty() {
            format!("{}-seed{}", self.optim.algorithm, self.data.seed)
        } else {
            self.run_id.clone()
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.resolved_run_id())
    }

    /// Set one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "seed" => {
                let seed = parse(key, value)?;
                self.data.seed = seed;
                self.model.seed = seed;
            }
            "data.d" => self.data.d = parse(key, value)?,
            "data.n" => self.data.n = parse(key, value)?,
            "data.s" => self.data.s = parse(key, value)?,
            "data.sigma_p" => self.data.sigma_p = parse(key, value)?,
            "data.alpha" => self.data.alpha = parse(key, value)?,
            "data.balanced" => self.data.balanced = parse(key, value)?,
            "data.seed" => self.data.seed = parse(key, value)?,
            "model.m" => self.model.m = parse(key, value)?,
            "model.q" => self.model.q = parse(key, value)?,
            "model.sigma_0" => self.model.sigma_0 = parse(key, value)?,
            "model.lambda" => self.model.lambda = parse(key, value)?,
            "model.seed" => self.model.seed = parse(key, value)?,
            "optim.algorithm" => {
                let algorithm: Algorithm = value.parse()?;
                self.optim.algorithm = algorithm;
                self.optim.eta = preset_eta(algorithm);
            }
            "optim.eta" => self.optim.eta = parse(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse(key, value)?,
            "optim.epsilon" => self.optim.epsilon = parse(key, value)?,
            "optim.bias_correction" => self.optim.bias_correction = parse(key, value)?,
            "T" | "run.T" | "run.steps" => self.steps = parse(key, value)?,
            "run.test_size" => self.test_size = parse(key, value)?,
            "run.probe_every" => self.probe_every = parse(key, value)?,
            "run.test_every" => self.test_every = parse(key, value)?,
            "run.best_after" => self.best_after = parse(key, value)?,
            "run.output_dir" => self.output_dir = PathBuf::from(value),
            "run.run_id" => self.run_id = value.to_string(),
            k if k.starts_with("summary.") => {}
            other => return Err(invalid(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `(key, value)` pairs, algorithm first.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let (first, rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| k.trim() == "optim.algorithm");
        for (k, v) in first.into_iter().chain(rest) {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Apply a configuration text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let pairs = parse_key_values(text)?;
        self.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// Every key with its value; feeding this back through
    /// [`RunConfig::apply_text`] reproduces `self` exactly.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data.d", self.data.d.to_string()),
            ("data.n", self.data.n.to_string()),
            ("data.s", self.data.s.to_string()),
            ("data.sigma_p", self.data.sigma_p.to_string()),
            ("data.alpha", self.data.alpha.to_string()),
            ("data.balanced", self.data.balanced.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("model.m", self.model.m.to_string()),
            ("model.q", self.model.q.to_string()),
            ("model.sigma_0", self.model.sigma_0.to_string()),
            ("model.lambda", self.model.lambda.to_string()),
            ("model.seed", self.model.seed.to_string()),
            ("optim.algorithm", self.optim.algorithm.to_string()),
            ("optim.eta", self.optim.eta.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.epsilon", self.optim.epsilon.to_string()),
            ("optim.bias_correction", self.optim.bias_correction.to_string()),
            ("run.T", self.steps.to_string()),
            ("run.test_size", self.test_size.to_string()),
            ("run.probe_every", self.probe_every.to_string()),
            ("run.test_every", self.test_every.to_string()),
            ("run.best_after", self.best_after.to_string()),
            ("run.output_dir", self.output_dir.display().to_string()),
            ("run.run_id", self.run_id.clone()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.key_values() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| invalid(format!("bad value {value:?} for {}: {e}", key.trim())))
}

/// Split `key = value` lines, dropping blank lines and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let c = RunConfig::standard(Algorithm::Adam);
        assert_eq!((c.data.d, c.data.n, c.data.s), (1000, 200, 100));
        assert_eq!((c.data.sigma_p, c.data.alpha), (0.1, 0.2));
        assert_eq!(
            (c.model.m, c.model.q, c.model.sigma_0, c.model.lambda),
            (20, 3, 0.01, 1e-5)
        );
        assert_eq!((c.steps, c.test_size, c.optim.eta), (10_000, 10_000, 5e-5));
        assert_eq!(RunConfig::standard(Algorithm::Gd).optim.eta, 0.02);
        assert!(RunConfig::preset("nope", Algorithm::Gd).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::standard(Algorithm::SignGd).with_seed(42);
        c.model.lambda = 1.0 / 3.0;
        c.run_id = "x".into();
        let mut back = RunConfig::standard(Algorithm::Gd);
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn algorithm_applies_before_eta() {
        let mut c = RunConfig::standard(Algorithm::Adam);
        c.apply_text("optim.eta = 0.5\noptim.algorithm = gd\n").unwrap();
        assert_eq!(c.optim.algorithm, Algorithm::Gd);
        assert_eq!(c.optim.eta, 0.5);
        c.apply_text("optim.algorithm = adam").unwrap();
        assert_eq!(c.optim.eta, 5e-5);
    }

    #[test]
    fn comments_aliases_and_errors() {
        let mut c = RunConfig::standard(Algorithm::Adam);
        c.apply_text("# header\n\nT = 5  # trailing\nseed = 9\nsummary.wall_time = 3\n")
            .unwrap();
        assert_eq!((c.steps, c.data.seed, c.model.seed), (5, 9, 9));
        assert!(c.apply_text("data.nope = 1").is_err());
        assert!(c.apply_text("data.d = ten").is_err());
        assert!(matches!(c.apply_text("just words"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn validate_checks_nested_configs() {
        let mut c = RunConfig::standard(Algorithm::Adam);
        c.data.s = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::standard(Algorithm::Adam);
        c.best_after = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn run_id_defaults_to_algorithm_and_seed() {
        let c = RunConfig::standard(Algorithm::Adam).with_seed(3);
        assert_eq!(c.resolved_run_id(), "adam-seed3");
    }
}
