//! Run configuration and its `key = value` text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tasks::seven_task_blueprints;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got `{s}`"))),
        }
    }
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegistryChoice {
    Three,
    Seven,
}

impl FromStr for RegistryChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three" => Ok(RegistryChoice::Three),
            "seven" => Ok(RegistryChoice::Seven),
            _ => Err(Error::Config(format!("tasks must be `three` or `seven`, got `{s}`"))),
        }
    }
}

/// Which parameters the pruning rounds rewind to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewindTarget {
    /// The random initialization the dense model was trained from.
    Init,
    /// The trained dense model.
    Dense,
}

impl FromStr for RewindTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(RewindTarget::Init),
            "dense" => Ok(RewindTarget::Dense),
            _ => Err(Error::Config(format!("rewind must be `init` or `dense`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContinualData {
    /// New shard mixed with the task's original training data.
    Augment,
    /// New shard alone.
    Replace,
}

impl FromStr for ContinualData {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augment" => Ok(ContinualData::Augment),
            "replace" => Ok(ContinualData::Replace),
            _ => Err(Error::Config(format!("continual_data must be `augment` or `replace`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: RegistryChoice,
    pub precision: Precision,
    pub hidden_dim: usize,
    pub num_trunk_layers: usize,
    pub batch_size: usize,

    pub dense_steps: u64,
    pub lr_dense: f64,
    pub warmup_dense: u64,
    pub eval_interval: u64,

    /// Per-round prune rate.
    pub p: f64,
    /// Prune rounds.
    pub q: u32,
    /// Training iterations per task per round while identifying masks.
    pub n1: u64,
    pub n1_override: BTreeMap<String, u64>,
    /// Iterations per task visit while updating parameters.
    pub n2: u64,
    /// Outer repeats while updating parameters.
    pub r: u64,
    pub lr_identify: f64,
    pub warmup_identify: u64,
    pub lr_update: f64,
    pub warmup_update: u64,
    pub rewind: RewindTarget,

    pub continual_steps: u64,
    pub lr_continual: f64,
    pub warmup_continual: u64,
    pub continual_data: ContinualData,
    pub continual_shift: bool,

    pub upsample: BTreeMap<String, usize>,
    /// Generator noise per task; defaults to the built-in task noise.
    pub noise: BTreeMap<String, f64>,
    /// Per-task overrides of the training split size.
    pub train_size: BTreeMap<String, usize>,
    /// Prune-round counts evaluated by the report.
    pub report_rounds: Vec<u32>,
    /// Round count of the pruned model that continual learning starts from;
    /// must be one of `report_rounds`.
    pub continual_rounds: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tasks: RegistryChoice::Three,
            precision: Precision::F64,
            hidden_dim: 128,
            num_trunk_layers: 2,
            batch_size: 16,
            dense_steps: 3000,
            lr_dense: 2.0e-3,
            warmup_dense: 200,
            eval_interval: 500,
            p: 0.2,
            q: 2,
            n1: 300,
            n1_override: BTreeMap::new(),
            n2: 20,
            r: 20,
            lr_identify: 2.0e-3,
            warmup_identify: 50,
            lr_update: 1.0e-3,
            warmup_update: 50,
            rewind: RewindTarget::Init,
            continual_steps: 1500,
            lr_continual: 3.0e-3,
            warmup_continual: 50,
            continual_data: ContinualData::Augment,
            continual_shift: false,
            upsample: BTreeMap::from([("CLS-A".to_string(), 10), ("SEQ".to_string(), 5)]),
            noise: seven_task_blueprints().iter().map(|b| (b.id.to_string(), b.noise)).collect(),
            train_size: BTreeMap::new(),
            report_rounds: vec![2, 5],
            continual_rounds: 5,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |e: Error| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            };
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(at_line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "tasks" => self.tasks = v.parse()?,
            "precision" => self.precision = v.parse()?,
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "num_trunk_layers" => self.num_trunk_layers = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "dense_steps" => self.dense_steps = parse_value(key, v)?,
            "lr_dense" => self.lr_dense = parse_value(key, v)?,
            "warmup_dense" => self.warmup_dense = parse_value(key, v)?,
            "eval_interval" => self.eval_interval = parse_value(key, v)?,
            "p" => self.p = parse_value(key, v)?,
            "q" => self.q = parse_value(key, v)?,
            "n1" => self.n1 = parse_value(key, v)?,
            "n2" => self.n2 = parse_value(key, v)?,
            "r" => self.r = parse_value(key, v)?,
            "lr_identify" => self.lr_identify = parse_value(key, v)?,
            "warmup_identify" => self.warmup_identify = parse_value(key, v)?,
            "lr_update" => self.lr_update = parse_value(key, v)?,
            "warmup_update" => self.warmup_update = parse_value(key, v)?,
            "rewind" => self.rewind = v.parse()?,
            "continual_steps" => self.continual_steps = parse_value(key, v)?,
            "lr_continual" => self.lr_continual = parse_value(key, v)?,
            "warmup_continual" => self.warmup_continual = parse_value(key, v)?,
            "continual_data" => self.continual_data = v.parse()?,
            "continual_shift" => self.continual_shift = parse_bool(key, v)?,
            "report_rounds" => {
                self.report_rounds = v
                    .split(',')
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "continual_rounds" => self.continual_rounds = parse_value(key, v)?,
            _ => {
                if let Some(task) = key.strip_prefix("upsample.").filter(|t| !t.is_empty()) {
                    // A factor of 1 is no upsampling; storing it as absent keeps
                    // a cleared default representable in text.
                    match parse_value(key, v)? {
                        1 => self.upsample.remove(task),
                        f => self.upsample.insert(task.to_string(), f),
                    };
                } else if let Some(task) = key.strip_prefix("n1.").filter(|t| !t.is_empty()) {
                    self.n1_override.insert(task.to_string(), parse_value(key, v)?);
                } else if let Some(task) = key.strip_prefix("noise.").filter(|t| !t.is_empty()) {
                    self.noise.insert(task.to_string(), parse_value(key, v)?);
                } else if let Some(task) = key.strip_prefix("train_size.").filter(|t| !t.is_empty()) {
                    self.train_size.insert(task.to_string(), parse_value(key, v)?);
                } else {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.p > 0.0 && self.p < 1.0) {
            return fail(format!("p = {} must lie in (0, 1)", self.p));
        }
        let counts = [
            ("n1", self.n1),
            ("n2", self.n2),
            ("r", self.r),
            ("dense_steps", self.dense_steps),
            ("continual_steps", self.continual_steps),
            ("eval_interval", self.eval_interval),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return fail(format!("`{k}` must be positive"));
        }
        if self.q == 0 || self.hidden_dim == 0 || self.num_trunk_layers == 0 || self.batch_size == 0 {
            return fail("q, hidden_dim, num_trunk_layers and batch_size must be positive".into());
        }
        let n1s = std::iter::once(("default", self.n1)).chain(self.n1_override.iter().map(|(t, &v)| (t.as_str(), v)));
        for (task, n1) in n1s {
            if n1 < 10 * self.n2 {
                return fail(format!("n1 = {n1} ({task}) must be at least 10 x n2 = {}", 10 * self.n2));
            }
        }
        if let Some((t, _)) = self.upsample.iter().find(|(_, &f)| f == 0) {
            return fail(format!("upsample factor for `{t}` must be at least 1"));
        }
        if let Some((t, _)) = self.noise.iter().find(|(_, &n)| !(n.is_finite() && n >= 0.0)) {
            return fail(format!("noise for `{t}` must be finite and non-negative"));
        }
        if let Some((t, _)) = self.train_size.iter().find(|(_, &n)| n == 0) {
            return fail(format!("train_size for `{t}` must be positive"));
        }
        let lrs = [self.lr_dense, self.lr_identify, self.lr_update, self.lr_continual];
        if lrs.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
            return fail("learning rates must be positive and finite".into());
        }
        if self.report_rounds.is_empty() || self.report_rounds.contains(&0) {
            return fail("report_rounds must list positive round counts".into());
        }
        if !self.report_rounds.contains(&self.continual_rounds) {
            return fail(format!("continual_rounds = {} is not in report_rounds", self.continual_rounds));
        }
        Ok(())
    }

    pub fn n1_for(&self, task: &str) -> u64 {
        self.n1_override.get(task).copied().unwrap_or(self.n1)
    }

    pub fn upsample_for(&self, task: &str) -> usize {
        self.upsample.get(task).copied().unwrap_or(1)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv(
            "tasks",
            match self.tasks {
                RegistryChoice::Three => "three",
                RegistryChoice::Seven => "seven",
            }
            .into(),
        );
        kv("precision", self.precision.as_str().into());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("num_trunk_layers", self.num_trunk_layers.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("dense_steps", self.dense_steps.to_string());
        kv("lr_dense", format!("{:?}", self.lr_dense));
        kv("warmup_dense", self.warmup_dense.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("p", format!("{:?}", self.p));
        kv("q", self.q.to_string());
        kv("n1", self.n1.to_string());
        for (t, v) in &self.n1_override {
            kv(&format!("n1.{t}"), v.to_string());
        }
        kv("n2", self.n2.to_string());
        kv("r", self.r.to_string());
        kv("lr_identify", format!("{:?}", self.lr_identify));
        kv("warmup_identify", self.warmup_identify.to_string());
        kv("lr_update", format!("{:?}", self.lr_update));
        kv("warmup_update", self.warmup_update.to_string());
        kv(
            "rewind",
            match self.rewind {
                RewindTarget::Init => "init",
                RewindTarget::Dense => "dense",
            }
            .into(),
        );
        kv("continual_steps", self.continual_steps.to_string());
        kv("lr_continual", format!("{:?}", self.lr_continual));
        kv("warmup_continual", self.warmup_continual.to_string());
        kv(
            "continual_data",
            match self.continual_data {
                ContinualData::Augment => "augment",
                ContinualData::Replace => "replace",
            }
            .into(),
        );
        kv("continual_shift", self.continual_shift.to_string());
        let mut upsampled: Vec<&String> = self.upsample.keys().collect();
        let defaults = Self::default().upsample;
        upsampled.extend(defaults.keys().filter(|t| !self.upsample.contains_key(*t)));
        upsampled.sort();
        for t in upsampled {
            kv(&format!("upsample.{t}"), self.upsample_for(t).to_string());
        }
        for (t, v) in &self.noise {
            kv(&format!("noise.{t}"), format!("{v:?}"));
        }
        for (t, v) in &self.train_size {
            kv(&format!("train_size.{t}"), v.to_string());
        }
        let rounds: Vec<String> = self.report_rounds.iter().map(u32::to_string).collect();
        kv("report_rounds", rounds.join(","));
        kv("continual_rounds", self.continual_rounds.to_string());
        s
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn parses_comments_and_per_task_keys() {
        let c = RunConfig::parse("# desk run\np = 0.3   # rate\nq=5\nupsample.CLS-B = 2\nn1.SEQ = 900\nnoise.SEQ = 0.5\ntrain_size.SEQ = 10\n\n").unwrap();
        assert_eq!(c.p, 0.3);
        assert_eq!(c.q, 5);
        assert_eq!(c.upsample_for("CLS-B"), 2);
        assert_eq!(c.upsample_for("CLS-D"), 1);
        assert_eq!(c.noise["SEQ"], 0.5);
        assert_eq!(c.train_size["SEQ"], 10);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(c.n1_for("SEQ"), 900);
        assert_eq!(c.n1_for("CLS-A"), c.n1);
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn cleared_upsampling_round_trips() {
        let mut c = RunConfig::default();
        c.upsample.clear();
        assert!(c.to_text().contains("upsample.CLS-A = 1"));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let c = RunConfig::parse("upsample.CLS-A = 1\nupsample.SEQ = 1").unwrap();
        assert!(c.upsample.is_empty());
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = RunConfig::parse("p = 0.2\nlearnig_rate = 1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.is_config());
    }

    #[test]
    fn interleaving_contract_enforced() {
        assert!(RunConfig::parse("n1 = 100\nn2 = 20").is_err());
        assert!(RunConfig::parse("n1 = 200\nn2 = 20").is_ok());
        assert!(RunConfig::parse("n1 = 200\nn2 = 20\nn1.SEQ = 50").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in ["p = 1.0", "p = 0", "q = 0", "r = 0", "precision = f16", "upsample.CLS-A = 0", "noise.SEQ = -0.1", "train_size.SEQ = 0", "nonsense", "seed = -1"] {
            assert!(RunConfig::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
