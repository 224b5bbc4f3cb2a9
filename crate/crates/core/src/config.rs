//! Declarative run configuration.
//!
//! The format is flat `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Keys before the first header belong to `[train]`.
//! Unknown sections and keys are fatal.
//!
//! ```text
//! [train]
//! method = pi
//! lambda = 10
//!
//! [sweep]
//! axis = epsilon
//! values = 0.03, 0.3, 1.0
//! seeds = 1..5
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{FluidLimitConfig, GradcheckConfig, HarmonicConfig, HmmConfig, SweepAxis, SweepSpec};
use crate::manifold::AugmentMode;
use crate::objectives::{ConsistencyOutput, LossKind, RegularizerKind};
use crate::training::{Method, TrainConfig};

/// Sweep axis and grid. The base run comes from `[train]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Lambda,
            values: vec![0.5, 1.0, 5.0, 10.0, 50.0],
            seeds: (1..=5).collect(),
        }
    }
}

/// Every resolved setting for every subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: HmmConfig,
    pub train: TrainConfig,
    pub sweep: SweepSettings,
    pub harmonic: HarmonicConfig,
    pub fluid: FluidLimitConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for Config {
    fn default() -> Self {
        let task = HmmConfig::default();
        let mut train = TrainConfig::default();
        train.augmentation.k = task.latent_dim;
        Self {
            task,
            train,
            sweep: SweepSettings::default(),
            harmonic: HarmonicConfig::default(),
            fluid: FluidLimitConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| format!("cannot parse {s:?}: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64, usize, u64, Method, AugmentMode, LossKind, ConsistencyOutput, RegularizerKind, SweepAxis);

impl Value for Vec<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        split_list(s)?.into_iter().map(f64::parse).collect()
    }
    fn render(&self) -> String {
        join(self)
    }
}

/// Seeds accept a comma list and inclusive ranges, e.g. `1..5, 9`.
impl Value for Vec<u64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut out = Vec::new();
        for item in split_list(s)? {
            match item.split_once("..") {
                Some((a, b)) => {
                    let (a, b) = (u64::parse(a.trim())?, u64::parse(b.trim())?);
                    if a > b {
                        return Err(format!("empty range {item:?}"));
                    }
                    out.extend(a..=b);
                }
                None => out.push(u64::parse(item)?),
            }
        }
        Ok(out)
    }
    fn render(&self) -> String {
        join(self)
    }
}

/// Parses a seed list such as `1..5, 9`.
pub fn parse_seed_list(s: &str) -> std::result::Result<Vec<u64>, String> {
    <Vec<u64> as Value>::parse(s)
}

fn split_list(s: &str) -> std::result::Result<Vec<&str>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    if items.iter().any(|i| i.is_empty()) {
        return Err(format!("malformed list {s:?}"));
    }
    Ok(items)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// One documented key: where it lives, how to read and write it.
pub struct Key {
    pub section: &'static str,
    pub name: &'static str,
    pub help: &'static str,
    get: fn(&Config) -> String,
    set: fn(&mut Config, &str) -> std::result::Result<(), String>,
}

impl Key {
    pub fn qualified(&self) -> String {
        format!("{}.{}", self.section, self.name)
    }

    pub fn default_value(&self) -> String {
        (self.get)(&Config::default())
    }
}

macro_rules! key {
    ($section:literal, $name:literal, $help:literal, $($path:ident).+ : $t:ty) => {
        Key {
            section: $section,
            name: $name,
            help: $help,
            get: |c: &Config| <$t as Value>::render(&c.$($path).+),
            set: |c: &mut Config, s: &str| {
                c.$($path).+ = <$t as Value>::parse(s)?;
                Ok(())
            },
        }
    };
}

pub const SECTIONS: [&str; 6] = ["task", "train", "sweep", "harmonic", "fluid", "gradcheck"];

pub static KEYS: &[Key] = &[
    key!("task", "latent_dim", "latent dimension d", task.latent_dim: usize),
    key!("task", "hidden_dim", "hidden width H of the generator", task.hidden_dim: usize),
    key!("task", "ambient_dim", "ambient dimension D", task.ambient_dim: usize),
    key!("task", "separation", "distance between the class means in latent space", task.separation: f64),
    key!("task", "n_labelled", "labelled sample count", task.n_labelled: usize),
    key!("task", "n_unlabelled", "unlabelled sample count", task.n_unlabelled: usize),
    key!("task", "n_test", "test sample count", task.n_test: usize),
    key!("task", "task_seed", "seed of the generator map and class means", task.task_seed: u64),
    key!("train", "method", "supervised | pi | mt", train.method: Method),
    key!("train", "epochs", "training epochs", train.epochs: usize),
    key!("train", "warmup_epochs", "supervised-only epochs before the consistency term", train.warmup_epochs: usize),
    key!("train", "lambda", "consistency weight", train.lambda: f64),
    key!("train", "epsilon", "augmentation scale", train.augmentation.epsilon: f64),
    key!("train", "k", "latent coordinates explored by augmentation (default: latent_dim)", train.augmentation.k: usize),
    key!("train", "augmentation", "manifold | ambient", train.augmentation.mode: AugmentMode),
    key!("train", "learning_rate", "SGD step size", train.learning_rate: f64),
    key!("train", "momentum", "heavy-ball momentum", train.momentum: f64),
    key!("train", "beta_mt", "Mean-Teacher averaging coefficient", train.beta_mt: f64),
    key!("train", "batch_labelled", "labelled batch size", train.batch_labelled: usize),
    key!("train", "batch_unlabelled", "unlabelled batch size", train.batch_unlabelled: usize),
    key!("train", "draws_per_sample", "augmentation draws per sample", train.draws_per_sample: usize),
    key!("train", "width", "hidden units of the learner", train.width: usize),
    key!("train", "loss", "logistic | squared", train.loss: LossKind),
    key!("train", "consistency_output", "probability | logit", train.consistency_output: ConsistencyOutput),
    key!("train", "regularizer", "balanced | pooled", train.regularizer: RegularizerKind),
    key!("train", "seed", "run seed", train.seed: u64),
    key!("sweep", "axis", "lambda | epsilon | k | beta_mt | eta", sweep.axis: SweepAxis),
    key!("sweep", "values", "axis values", sweep.values: Vec<f64>),
    key!("sweep", "seeds", "run seeds", sweep.seeds: Vec<u64>),
    key!("harmonic", "boundary_per_side", "labelled points on each of u=0 and u=1", harmonic.boundary_per_side: usize),
    key!("harmonic", "n_unlabelled", "uniform interior points", harmonic.n_unlabelled: usize),
    key!("harmonic", "width", "hidden units", harmonic.width: usize),
    key!("harmonic", "lambda", "consistency weight", harmonic.lambda: f64),
    key!("harmonic", "epsilon", "augmentation scale", harmonic.epsilon: f64),
    key!("harmonic", "epochs", "training epochs", harmonic.epochs: usize),
    key!("harmonic", "warmup_epochs", "supervised-only epochs", harmonic.warmup_epochs: usize),
    key!("harmonic", "learning_rate", "SGD step size", harmonic.learning_rate: f64),
    key!("harmonic", "momentum", "heavy-ball momentum", harmonic.momentum: f64),
    key!("harmonic", "batch_unlabelled", "unlabelled batch size", harmonic.batch_unlabelled: usize),
    key!("harmonic", "draws_per_sample", "augmentation draws per sample", harmonic.draws_per_sample: usize),
    key!("harmonic", "grid", "evaluation grid points per side", harmonic.grid: usize),
    key!("harmonic", "seed", "run seed", harmonic.seed: u64),
    key!("fluid", "n_labelled", "labelled sample count", fluid.task.n_labelled: usize),
    key!("fluid", "n_unlabelled", "unlabelled sample count", fluid.task.n_unlabelled: usize),
    key!("fluid", "etas", "SGD step sizes (integer multiples of dt)", fluid.etas: Vec<f64>),
    key!("fluid", "dt", "RK4 step", fluid.dt: f64),
    key!("fluid", "horizon", "time horizon T", fluid.horizon: f64),
    key!("fluid", "lambda", "consistency weight", fluid.lambda: f64),
    key!("fluid", "epsilon", "augmentation scale", fluid.epsilon: f64),
    key!("fluid", "draws_per_sample", "frozen draws per sample", fluid.draws_per_sample: usize),
    key!("fluid", "width", "hidden units", fluid.width: usize),
    key!("fluid", "output", "probability | logit", fluid.output: ConsistencyOutput),
    key!("fluid", "seeds", "seeds averaged over", fluid.seeds: Vec<u64>),
    key!("gradcheck", "instances", "random instances per objective", gradcheck.instances: usize),
    key!("gradcheck", "max_d_in", "largest input dimension", gradcheck.max_d_in: usize),
    key!("gradcheck", "max_width", "largest hidden width", gradcheck.max_width: usize),
    key!("gradcheck", "h", "central-difference step", gradcheck.h: f64),
    key!("gradcheck", "tolerance", "pass threshold on relative error", gradcheck.tolerance: f64),
    key!("gradcheck", "seed", "instance seed", gradcheck.seed: u64),
];

fn config_err(line: Option<usize>, field: Option<String>, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        field,
        message: message.into(),
    }
}

fn suggestion(name: &str, candidates: impl Iterator<Item = &'static str>) -> Option<&'static str> {
    candidates
        .map(|c| (strsim::jaro_winkler(name, c), c))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section = "train";
        let mut seen = BTreeSet::new();
        let mut k_set = false;

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(Some(lineno), None, format!("malformed section header {line:?}")))?
                    .trim();
                section = SECTIONS.iter().copied().find(|s| *s == name).ok_or_else(|| {
                    let hint = suggestion(name, SECTIONS.iter().copied())
                        .map(|s| format!("; did you mean [{s}]?"))
                        .unwrap_or_default();
                    config_err(Some(lineno), None, format!("unknown section [{name}]{hint}"))
                })?;
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(Some(lineno), None, format!("expected `key = value`, got {line:?}")))?;
            let (name, value) = (name.trim(), value.trim());
            let key = KEYS.iter().find(|k| k.section == section && k.name == name).ok_or_else(|| {
                let hint = suggestion(name, KEYS.iter().filter(|k| k.section == section).map(|k| k.name))
                    .map(|s| format!("; did you mean {s:?}?"))
                    .unwrap_or_default();
                config_err(
                    Some(lineno),
                    Some(format!("{section}.{name}")),
                    format!("unknown key {name:?} in [{section}]{hint}"),
                )
            })?;
            if !seen.insert(key.qualified()) {
                return Err(config_err(Some(lineno), Some(key.qualified()), "key set twice"));
            }
            (key.set)(&mut cfg, value).map_err(|m| config_err(Some(lineno), Some(key.qualified()), m))?;
            if key.section == "train" && key.name == "k" {
                k_set = true;
            }
            check_key(&cfg, key).map_err(|m| config_err(Some(lineno), Some(key.qualified()), m))?;
        }

        if !k_set {
            cfg.train.augmentation.k = cfg.task.latent_dim;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(None, None, format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Cross-field checks, run after every key has been applied.
    pub fn validate(&self) -> Result<()> {
        let whole = |m: Error| config_err(None, None, m.to_string());
        if self.task.latent_dim == 0 || self.task.hidden_dim == 0 || self.task.ambient_dim == 0 {
            return Err(config_err(None, Some("task".into()), "dimensions must be >= 1"));
        }
        if self.train.augmentation.k > self.task.latent_dim {
            return Err(config_err(
                None,
                Some("train.k".into()),
                format!("k = {} exceeds latent_dim = {}", self.train.augmentation.k, self.task.latent_dim),
            ));
        }
        self.train.validate().map_err(whole)?;
        self.sweep_spec().validate().map_err(whole)?;
        self.harmonic.validate().map_err(whole)?;
        if self.fluid.etas.is_empty() || self.fluid.seeds.is_empty() {
            return Err(config_err(None, Some("fluid".into()), "etas and seeds must be nonempty"));
        }
        Ok(())
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            base: self.train.clone(),
            axis: self.sweep.axis,
            values: self.sweep.values.clone(),
            seeds: self.sweep.seeds.clone(),
        }
    }

    /// The fluid study shares the generator with `[task]`.
    pub fn fluid_config(&self) -> FluidLimitConfig {
        let mut f = self.fluid.clone();
        f.task = HmmConfig {
            n_labelled: f.task.n_labelled,
            n_unlabelled: f.task.n_unlabelled,
            ..self.task.clone()
        };
        f
    }

    /// Canonical text form; parses back to an identical `Config`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, section) in SECTIONS.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for key in KEYS.iter().filter(|k| k.section == *section) {
                let _ = writeln!(out, "{} = {}", key.name, (key.get)(self));
            }
        }
        out
    }
}

/// Single-field range checks, reported against the offending line.
fn check_key(cfg: &Config, key: &Key) -> std::result::Result<(), String> {
    let v = (key.get)(cfg);
    let nonneg = ["lambda", "epsilon", "separation"];
    let positive = ["learning_rate", "dt", "horizon", "h", "tolerance"];
    let unit = ["momentum", "beta_mt"];
    if nonneg.contains(&key.name) || positive.contains(&key.name) || unit.contains(&key.name) {
        let x: f64 = v.parse().map_err(|_| format!("not a number: {v}"))?;
        if !x.is_finite() {
            return Err(format!("{} must be finite, got {x}", key.name));
        }
        if nonneg.contains(&key.name) && x < 0.0 {
            return Err(format!("{} must be >= 0, got {x}", key.name));
        }
        if positive.contains(&key.name) && x <= 0.0 {
            return Err(format!("{} must be > 0, got {x}", key.name));
        }
        if unit.contains(&key.name) && !(0.0..1.0).contains(&x) {
            return Err(format!("{} must lie in [0, 1), got {x}", key.name));
        }
    }
    Ok(())
}

/// `--help` appendix: every key with its default.
pub fn key_reference() -> String {
    let mut out = String::from("Config keys (section.key = default):\n");
    for key in KEYS {
        let _ = writeln!(out, "  {:<30} = {:<24} {}", key.qualified(), key.default_value(), key.help);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_documented_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.train.lambda, 10.0);
        assert_eq!(c.train.augmentation.epsilon, 0.3);
        assert_eq!(c.train.augmentation.k, c.task.latent_dim);
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.sweep.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(c, Config::default());
    }

    #[test]
    fn k_follows_latent_dim_unless_set() {
        let c = Config::parse("[task]\nlatent_dim = 6\n").unwrap();
        assert_eq!(c.train.augmentation.k, 6);
        let c = Config::parse("[task]\nlatent_dim = 6\n[train]\nk = 3\n").unwrap();
        assert_eq!(c.train.augmentation.k, 3);
        assert!(Config::parse("k = 11").is_err());
    }

    #[test]
    fn negative_lambda_names_the_field() {
        let err = Config::parse("\n[train]\nlambda = -1\n").unwrap_err();
        match &err {
            Error::Config { line, field, .. } => {
                assert_eq!(*line, Some(3));
                assert_eq!(field.as_deref(), Some("train.lambda"));
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn typo_is_rejected_with_suggestion() {
        let err = Config::parse("epsilonn = 0.3").unwrap_err().to_string();
        assert!(err.contains("unknown key \"epsilonn\""), "{err}");
        assert!(err.contains("did you mean \"epsilon\""), "{err}");
        let err = Config::parse("[swep]").unwrap_err().to_string();
        assert!(err.contains("[sweep]"), "{err}");
    }

    #[test]
    fn malformed_lines_are_located() {
        for (text, line) in [("lambda", 1), ("# c\n\nepochs = ten", 3), ("[train\n", 1), ("seed = 1\nseed = 2", 2)] {
            match Config::parse(text).unwrap_err() {
                Error::Config { line: l, .. } => assert_eq!(l, Some(line), "{text:?}"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn lists_and_ranges() {
        let c = Config::parse("[sweep]\naxis = epsilon\nvalues = 0.03, 0.3,1.0\nseeds = 1..3, 7 # tail\n").unwrap();
        assert_eq!(c.sweep.axis, SweepAxis::Epsilon);
        assert_eq!(c.sweep.values, vec![0.03, 0.3, 1.0]);
        assert_eq!(c.sweep.seeds, vec![1, 2, 3, 7]);
        assert!(Config::parse("[sweep]\nseeds = 3..1").is_err());
        assert!(Config::parse("[sweep]\nvalues = 1,,2").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "method = mt\nlambda = 0.5\nlearning_rate = 0.003\n[harmonic]\nepsilon = 0.1\n[fluid]\netas = 0.04, 0.02\n";
        let c = Config::parse(text).unwrap();
        let again = Config::parse(&c.render()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.render(), again.render());
    }

    #[test]
    fn key_reference_lists_every_key() {
        let r = key_reference();
        for k in KEYS {
            assert!(r.contains(&k.qualified()), "{}", k.qualified());
        }
        assert_eq!(KEYS.iter().map(Key::qualified).collect::<BTreeSet<_>>().len(), KEYS.len());
    }
}
