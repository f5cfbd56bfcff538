//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! [`RunConfig::to_text`] writes every key with its effective value, and that
//! output parses back to the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::HyperParams;
use crate::error::{Error, Result};
use crate::mcd::McdConfig;
use crate::model::{ModelKind, ModelSpec};
use crate::train_eval::{ExperimentConfig, Protocol, TrainConfig};
use crate::vi::ViConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub hp: HyperParams,
    pub mcd: McdConfig,
    pub vi: ViConfig,
    pub train: TrainConfig,
    pub min_freq: usize,
    pub protocol: Protocol,
    pub runs: usize,
    pub models: Vec<ModelKind>,
    pub jobs: usize,
    /// Raw post file (`text,urgency[,course_id]`).
    pub data: Option<PathBuf>,
    /// Directory written by `prepare`.
    pub prepared: Option<PathBuf>,
    /// Pretrained vectors in whitespace-separated text form.
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Base,
            hp: HyperParams::default(),
            mcd: McdConfig::default(),
            vi: ViConfig::default(),
            train: TrainConfig::default(),
            min_freq: 2,
            protocol: Protocol::Split40_60,
            runs: 10,
            models: ModelKind::ALL.to_vec(),
            jobs: 1,
            data: None,
            prepared: None,
            embeddings: None,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

pub fn parse_models(value: &str) -> Result<Vec<ModelKind>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl RunConfig {
    pub const KEYS: [&'static str; 32] = [
        "model",
        "seed",
        "max_len",
        "embed_dim",
        "hidden",
        "z_dim",
        "attention",
        "dropout_rate",
        "mcd_samples",
        "vi_train_samples",
        "vi_test_samples",
        "kl_weight",
        "kl_warmup_epochs",
        "log_sigma_min",
        "log_sigma_max",
        "learning_rate",
        "batch_size",
        "epochs",
        "optimizer",
        "gradient_clip_norm",
        "class_weighting",
        "track_train_accuracy",
        "stop_at_perfect_train_accuracy",
        "min_freq",
        "protocol",
        "runs",
        "models",
        "jobs",
        "data",
        "prepared",
        "embeddings",
        "out",
    ];

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = v.parse()?,
            "seed" => self.train.seed = parse(key, v)?,
            "max_len" => self.hp.max_len = parse(key, v)?,
            "embed_dim" => self.hp.embed_dim = parse(key, v)?,
            "hidden" => self.hp.hidden = parse(key, v)?,
            "z_dim" => self.hp.z_dim = parse(key, v)?,
            "attention" => self.hp.attention = v.parse()?,
            "dropout_rate" => self.mcd.dropout_rate = parse(key, v)?,
            "mcd_samples" => self.mcd.num_samples = parse(key, v)?,
            "vi_train_samples" => self.vi.train_samples = parse(key, v)?,
            "vi_test_samples" => self.vi.test_samples = parse(key, v)?,
            "kl_weight" => self.vi.kl_weight = parse(key, v)?,
            "kl_warmup_epochs" => self.vi.kl_warmup_epochs = parse(key, v)?,
            "log_sigma_min" => self.vi.log_sigma_min = parse(key, v)?,
            "log_sigma_max" => self.vi.log_sigma_max = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "optimizer" => self.train.optimizer = v.parse()?,
            "gradient_clip_norm" => {
                self.train.gradient_clip_norm = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "class_weighting" => self.train.class_weighting = parse_bool(key, v)?,
            "track_train_accuracy" => self.train.track_train_accuracy = parse_bool(key, v)?,
            "stop_at_perfect_train_accuracy" => self.train.stop_at_perfect_train_accuracy = parse_bool(key, v)?,
            "min_freq" => self.min_freq = parse(key, v)?,
            "protocol" => self.protocol = v.parse()?,
            "runs" => self.runs = parse(key, v)?,
            "models" => self.models = parse_models(v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "data" => self.data = parse_path(v),
            "prepared" => self.prepared = parse_path(v),
            "embeddings" => self.embeddings = parse_path(v),
            "out" => self.out = parse_path(v),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `text` on top of the defaults. Relative paths stay as written.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`, found {line:?}", n + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.train.validate()?;
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        self.experiment().validate()
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            hp: self.hp.clone(),
            mcd: self.mcd.clone(),
            vi: self.vi.clone(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            protocol: self.protocol,
            runs: self.runs,
            models: self.models.clone(),
            hp: self.hp.clone(),
            mcd: self.mcd.clone(),
            vi: self.vi.clone(),
            train: self.train.clone(),
            jobs: self.jobs,
        }
    }

    /// Every setting with its effective value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("model", self.model.to_string());
        line("seed", t.seed.to_string());
        line("max_len", self.hp.max_len.to_string());
        line("embed_dim", self.hp.embed_dim.to_string());
        line("hidden", self.hp.hidden.to_string());
        line("z_dim", self.hp.z_dim.to_string());
        line("attention", self.hp.attention.to_string());
        line("dropout_rate", self.mcd.dropout_rate.to_string());
        line("mcd_samples", self.mcd.num_samples.to_string());
        line("vi_train_samples", self.vi.train_samples.to_string());
        line("vi_test_samples", self.vi.test_samples.to_string());
        line("kl_weight", self.vi.kl_weight.to_string());
        line("kl_warmup_epochs", self.vi.kl_warmup_epochs.to_string());
        line("log_sigma_min", self.vi.log_sigma_min.to_string());
        line("log_sigma_max", self.vi.log_sigma_max.to_string());
        line("learning_rate", t.learning_rate.to_string());
        line("batch_size", t.batch_size.to_string());
        line("epochs", t.epochs.to_string());
        line("optimizer", t.optimizer.to_string());
        line(
            "gradient_clip_norm",
            t.gradient_clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
        );
        line("class_weighting", t.class_weighting.to_string());
        line("track_train_accuracy", t.track_train_accuracy.to_string());
        line(
            "stop_at_perfect_train_accuracy",
            t.stop_at_perfect_train_accuracy.to_string(),
        );
        line("min_freq", self.min_freq.to_string());
        line("protocol", self.protocol.to_string());
        line("runs", self.runs.to_string());
        line(
            "models",
            self.models.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        );
        line("jobs", self.jobs.to_string());
        line("data", show_path(&self.data));
        line("prepared", show_path(&self.prepared));
        line("embeddings", show_path(&self.embeddings));
        line("out", show_path(&self.out));
        s
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        let path = dir.join("effective_config.txt");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::AttentionMode;

    #[test]
    fn parses_comments_and_values() {
        let text = "# desk run\nmodel = vi\nhidden = 32   # small\nattention = ratio\n\ngradient_clip_norm = none\nmodels = base, vi\n";
        let c = RunConfig::parse_str(text, "test").unwrap();
        assert_eq!(c.model, ModelKind::Vi);
        assert_eq!(c.hp.hidden, 32);
        assert_eq!(c.hp.attention, AttentionMode::Ratio);
        assert_eq!(c.train.gradient_clip_norm, None);
        assert_eq!(c.models, vec![ModelKind::Base, ModelKind::Vi]);
        assert_eq!(c.train.learning_rate, 1e-3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let e = RunConfig::parse_str("hiden = 3\n", "cfg").unwrap_err();
        assert!(
            e.to_string().contains("cfg:1") && e.to_string().contains("hiden"),
            "{e}"
        );
        assert_eq!(e.exit_code(), 1);
        assert!(RunConfig::parse_str("hidden = many\n", "cfg").is_err());
        assert!(RunConfig::parse_str("just words\n", "cfg").is_err());
        assert!(RunConfig::parse_str("dropout_rate = 1.5\n", "cfg").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("kl_weight", "0.25").unwrap();
        c.set("learning_rate", "0.0003").unwrap();
        c.set("data", "posts.csv").unwrap();
        let back = RunConfig::parse_str(&c.to_text(), "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(
            RunConfig::parse_str(&RunConfig::default().to_text(), "echo").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let text = RunConfig::default().to_text();
        for key in RunConfig::KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key}");
        }
    }
}
