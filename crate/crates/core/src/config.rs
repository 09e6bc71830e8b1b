//! `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected. The same format stores model
//! hyperparameters inside checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{FlockError, Result};
use crate::model::ModelConfig;
use crate::record::RecordingScheme;
use crate::train::TrainConfig;

/// Splits a config text into `(key, value)` pairs.
pub fn parse_pairs(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(FlockError::Config(format!(
                "{source}:{}: expected `key = value`",
                i + 1
            )));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(FlockError::Config(format!("{source}:{}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| FlockError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(FlockError::Config(format!("invalid value {value:?} for {key}"))),
    }
}

fn scheme_name(s: RecordingScheme) -> &'static str {
    match s {
        RecordingScheme::Anonymous => "anonymous",
        RecordingScheme::RawIds => "raw_ids",
    }
}

/// Sets a model field; returns `Ok(false)` if `key` is not a model key.
fn set_model(m: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "task" => m.task = value.parse()?,
        "heads" => m.heads = parse(key, value)?,
        "head_dim" => m.head_dim = parse(key, value)?,
        "update_steps" => m.update_steps = parse(key, value)?,
        "walk_length" => m.walk_length = parse(key, value)?,
        "base_walks" => m.base_walks = parse(key, value)?,
        "ensemble" => m.ensemble = parse(key, value)?,
        "tie_weights" => m.tie_weights = parse_bool(key, value)?,
        "reuse_walks" => m.reuse_walks = parse_bool(key, value)?,
        "scheme" => {
            m.scheme = match value {
                "anonymous" => RecordingScheme::Anonymous,
                "raw_ids" => RecordingScheme::RawIds,
                _ => return Err(FlockError::Config(format!("invalid value {value:?} for scheme"))),
            }
        }
        "rms_eps" => m.rms_eps = parse(key, value)?,
        "init_std" => m.init_std = parse(key, value)?,
        "train_entities" => m.train_entities = parse(key, value)?,
        "train_triples" => m.train_triples = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_to_text(m: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task = {}", m.task);
    let _ = writeln!(s, "heads = {}", m.heads);
    let _ = writeln!(s, "head_dim = {}", m.head_dim);
    let _ = writeln!(s, "update_steps = {}", m.update_steps);
    let _ = writeln!(s, "walk_length = {}", m.walk_length);
    let _ = writeln!(s, "base_walks = {}", m.base_walks);
    let _ = writeln!(s, "ensemble = {}", m.ensemble);
    let _ = writeln!(s, "tie_weights = {}", m.tie_weights);
    let _ = writeln!(s, "reuse_walks = {}", m.reuse_walks);
    let _ = writeln!(s, "scheme = {}", scheme_name(m.scheme));
    let _ = writeln!(s, "rms_eps = {:e}", m.rms_eps);
    let _ = writeln!(s, "init_std = {:e}", m.init_std);
    let _ = writeln!(s, "train_entities = {}", m.train_entities);
    let _ = writeln!(s, "train_triples = {}", m.train_triples);
    s
}

pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let mut m = ModelConfig::default();
    for (k, v) in parse_pairs(text, "checkpoint")? {
        if !set_model(&mut m, &k, &v)? {
            return Err(FlockError::Config(format!("unknown model key {k:?}")));
        }
    }
    m.validate()?;
    Ok(m)
}

/// Everything `flock train` needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Validation queries per evaluation (0 = all).
    pub val_queries: usize,
    /// Ensemble passes used during validation.
    pub val_passes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dataset_dir: None,
            out_dir: PathBuf::from("runs"),
            val_queries: 200,
            val_passes: 1,
        }
    }
}

/// Keys accepted by [`RunConfig::set`], with a short description.
pub const RUN_KEYS: &[(&str, &str)] = &[
    ("task", "entity or relation"),
    ("walk_length", "steps per walk"),
    ("base_walks", "walks per scenario"),
    ("update_steps", "number of update steps"),
    ("heads", "attention heads"),
    ("head_dim", "width per head"),
    ("ensemble", "forward passes averaged at prediction time"),
    ("tie_weights", "share one update network across steps"),
    ("reuse_walks", "reuse one walk batch for every step"),
    ("scheme", "anonymous or raw_ids"),
    ("rms_eps", "RMSNorm epsilon"),
    ("init_std", "standard deviation of embedding init"),
    ("lr", "learning rate"),
    ("negatives", "negatives per positive"),
    ("batch_size", "positives per optimizer step"),
    ("adv_temp", "adversarial temperature"),
    ("weight_decay", "AdamW decay, or auto"),
    ("adv_grad", "backpropagate through adversarial weights"),
    ("filter_negatives", "reject known triples as negatives"),
    ("steps", "optimizer steps"),
    ("val_every", "validation period, or auto"),
    ("val_queries", "validation queries per evaluation, 0 for all"),
    ("val_passes", "ensemble passes during validation"),
    ("seed", "master seed"),
    ("threads", "worker threads"),
    ("dataset_dir", "dataset directory"),
    ("out_dir", "output directory"),
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if set_model(&mut self.model, key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        match key {
            "lr" => t.lr = parse(key, value)?,
            "negatives" => t.negatives = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "adv_temp" => t.adv_temp = parse(key, value)?,
            "weight_decay" => {
                t.weight_decay = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "adv_grad" => t.adv_grad = parse_bool(key, value)?,
            "filter_negatives" => t.filter_negatives = parse_bool(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "val_every" => {
                t.val_every = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "seed" => t.seed = parse(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "val_queries" => self.val_queries = parse(key, value)?,
            "val_passes" => self.val_passes = parse(key, value)?,
            "dataset_dir" => self.dataset_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(FlockError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as command-line `--set` flags.
    pub fn apply<'s>(&mut self, pairs: impl IntoIterator<Item = (&'s str, &'s str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_pairs(text, source)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.val_passes == 0 {
            return Err(FlockError::Config("val_passes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = model_to_text(&self.model);
        let _ = writeln!(s, "lr = {:e}", t.lr);
        let _ = writeln!(s, "negatives = {}", t.negatives);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "adv_temp = {}", t.adv_temp);
        match t.weight_decay {
            Some(w) => writeln!(s, "weight_decay = {w}"),
            None => writeln!(s, "weight_decay = auto"),
        }
        .ok();
        let _ = writeln!(s, "adv_grad = {}", t.adv_grad);
        let _ = writeln!(s, "filter_negatives = {}", t.filter_negatives);
        let _ = writeln!(s, "steps = {}", t.steps);
        match t.val_every {
            Some(v) => writeln!(s, "val_every = {v}"),
            None => writeln!(s, "val_every = auto"),
        }
        .ok();
        let _ = writeln!(s, "val_queries = {}", self.val_queries);
        let _ = writeln!(s, "val_passes = {}", self.val_passes);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "threads = {}", t.threads);
        if let Some(d) = &self.dataset_dir {
            let _ = writeln!(s, "dataset_dir = {}", d.display());
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;

    #[test]
    fn comments_and_overrides() {
        let text = "# run\nlr = 0.001  # faster\n\nsteps=10\ntask = relation\n";
        let mut c = RunConfig::from_text(text, "t").unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.model.task, Task::Relation);
        c.apply([("steps", "20")]).unwrap();
        assert_eq!(c.train.steps, 20);
    }

    #[test]
    fn unknown_and_malformed() {
        let e = RunConfig::from_text("learning_rate = 1", "t").unwrap_err();
        assert!(e.to_string().contains("learning_rate"));
        let e = RunConfig::from_text("a\n", "x.cfg").unwrap_err();
        assert!(e.to_string().contains("x.cfg:1"));
        assert!(RunConfig::from_text("steps = ten", "t").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply([
            ("heads", "2"),
            ("weight_decay", "0.5"),
            ("scheme", "raw_ids"),
            ("dataset_dir", "d"),
        ])
        .unwrap();
        let back = RunConfig::from_text(&c.to_text(), "t").unwrap();
        assert_eq!(back, c);
        let m = model_from_text(&model_to_text(&c.model)).unwrap();
        assert_eq!(m, c.model);
    }
}
