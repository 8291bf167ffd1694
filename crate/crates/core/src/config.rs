//! Run configuration: a flat `key=value` file, the `DERWENT_SEED`
//! environment variable and command-line overrides, applied in that order
//! over the defaults.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{datasets_from_instances, gen_synthetic_chain, read_dataset, ChainSpec, Datasets};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "DERWENT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Baseline,
    Eval,
    Paths,
    Sweep,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Command::Train,
            "baseline" => Command::Baseline,
            "eval" => Command::Eval,
            "paths" => Command::Paths,
            "sweep" => Command::Sweep,
            other => return Err(Error::Config(format!("unknown command {other:?}"))),
        })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Train => "train",
            Command::Baseline => "baseline",
            Command::Eval => "eval",
            Command::Paths => "paths",
            Command::Sweep => "sweep",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(ChainSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            train: TrainConfig::default(),
            data: DataSource::Synthetic(ChainSpec::default()),
            out_dir: PathBuf::from("derwent-out"),
            checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "command",
    "lr_feature",
    "lr_classifier",
    "momentum",
    "batch_source",
    "batch_target",
    "batch_auxiliary",
    "theta",
    "alpha",
    "lambda1",
    "lambda2",
    "eta0",
    "epochs",
    "seed",
    "ablate_lstm",
    "labeled_target_per_class",
    "embed_dim",
    "lstm_hidden",
    "data",
    "n_domains",
    "per_domain",
    "d_in",
    "radius",
    "class_offset",
    "noise",
    "out_dir",
    "checkpoint",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value {value:?} for {key}"))),
    }
}

struct Builder {
    run: RunConfig,
    spec: ChainSpec,
    data_file: Option<PathBuf>,
    lr_classifier_set: bool,
}

impl Builder {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.run.train;
        let s = &mut self.spec;
        match key {
            "command" => {
                let c: Command = value.trim().parse()?;
                if let Some(prev) = self.run.command {
                    if prev != c {
                        return Err(Error::Config(format!("conflicting commands {prev} and {c}")));
                    }
                }
                self.run.command = Some(c);
            }
            "lr_feature" => t.lr_feature = parse(key, value)?,
            "lr_classifier" => {
                t.lr_classifier = parse(key, value)?;
                self.lr_classifier_set = true;
            }
            "momentum" => t.momentum = parse(key, value)?,
            "batch_source" => t.batch.source = parse(key, value)?,
            "batch_target" => t.batch.target = parse(key, value)?,
            "batch_auxiliary" => t.batch.auxiliary = parse(key, value)?,
            "theta" => t.theta = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "lambda1" => t.lambda1 = parse(key, value)?,
            "lambda2" => t.lambda2 = parse(key, value)?,
            "eta0" => t.eta_base = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "ablate_lstm" => t.ablate_lstm = parse_bool(key, value)?,
            "labeled_target_per_class" => t.labeled_target_per_class = parse(key, value)?,
            "embed_dim" => t.embed_dim = parse(key, value)?,
            "lstm_hidden" => t.lstm_hidden = parse(key, value)?,
            "data" => {
                let v = value.trim();
                self.data_file = (!v.is_empty() && v != "synthetic").then(|| PathBuf::from(v));
            }
            "n_domains" => s.n_domains = parse(key, value)?,
            "per_domain" => s.per_domain = parse(key, value)?,
            "d_in" => s.d_in = parse(key, value)?,
            "radius" => s.radius = parse(key, value)?,
            "class_offset" => s.class_offset = parse(key, value)?,
            "noise" => s.noise = parse(key, value)?,
            "out_dir" => self.run.out_dir = PathBuf::from(value.trim()),
            "checkpoint" => {
                let v = value.trim();
                self.run.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v));
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunConfig> {
        if !self.lr_classifier_set {
            self.run.train.lr_classifier = 10.0 * self.run.train.lr_feature;
        }
        self.spec.labeled_target_per_class = self.run.train.labeled_target_per_class;
        self.run.data = match self.data_file {
            Some(path) => DataSource::File(path),
            None => DataSource::Synthetic(self.spec),
        };
        self.run.train.validate()?;
        Ok(self.run)
    }
}

/// Splits a `key=value` file into pairs, skipping blank lines and `#`
/// comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the run configuration from the file text, the seed environment
/// value and the flag overrides, later sources winning.
pub fn parse_config(text: &str, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut b = Builder {
        run: RunConfig::default(),
        spec: ChainSpec::default(),
        data_file: None,
        lr_classifier_set: false,
    };
    let file_pairs = parse_pairs(text)?;
    let mut seen = std::collections::BTreeSet::new();
    for (k, v) in &file_pairs {
        if !seen.insert(k.as_str()) && k != "command" {
            return Err(Error::Config(format!("key {k:?} given twice")));
        }
        b.set(k, v)?;
    }
    if let Some(seed) = env_seed {
        b.set("seed", seed).map_err(|_| Error::Config(format!("invalid {SEED_ENV} value {seed:?}")))?;
    }
    for (k, v) in overrides {
        b.set(k, v)?;
    }
    b.finish()
}

impl RunConfig {
    /// Key=value text that parses back to this configuration apart from
    /// the command, which is recorded as a comment so the snapshot can be
    /// reused with any command.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut lines = Vec::new();
        if let Some(c) = self.command {
            lines.push(format!("# command: {c}"));
        }
        lines.extend([
            format!("lr_feature={}", t.lr_feature),
            format!("lr_classifier={}", t.lr_classifier),
            format!("momentum={}", t.momentum),
            format!("batch_source={}", t.batch.source),
            format!("batch_target={}", t.batch.target),
            format!("batch_auxiliary={}", t.batch.auxiliary),
            format!("theta={}", t.theta),
            format!("alpha={}", t.alpha),
            format!("lambda1={}", t.lambda1),
            format!("lambda2={}", t.lambda2),
            format!("eta0={}", t.eta_base),
            format!("epochs={}", t.epochs),
            format!("seed={}", t.seed),
            format!("ablate_lstm={}", t.ablate_lstm),
            format!("labeled_target_per_class={}", t.labeled_target_per_class),
            format!("embed_dim={}", t.embed_dim),
            format!("lstm_hidden={}", t.lstm_hidden),
        ]);
        match &self.data {
            DataSource::Synthetic(s) => lines.extend([
                "data=synthetic".to_string(),
                format!("n_domains={}", s.n_domains),
                format!("per_domain={}", s.per_domain),
                format!("d_in={}", s.d_in),
                format!("radius={}", s.radius),
                format!("class_offset={}", s.class_offset),
                format!("noise={}", s.noise),
            ]),
            DataSource::File(p) => lines.push(format!("data={}", p.display())),
        }
        lines.push(format!("out_dir={}", self.out_dir.display()));
        if let Some(p) = &self.checkpoint {
            lines.push(format!("checkpoint={}", p.display()));
        }
        lines.join("\n") + "\n"
    }

    /// Loads or generates the datasets for `self.train`.
    pub fn datasets(&self) -> Result<Datasets> {
        let t = &self.train;
        match &self.data {
            DataSource::Synthetic(spec) => {
                let spec = ChainSpec { labeled_target_per_class: t.labeled_target_per_class, ..*spec };
                gen_synthetic_chain(&spec, t.seed)
            }
            DataSource::File(path) => {
                let file = fs::File::open(path)
                    .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
                let (d_in, instances) = read_dataset(BufReader::new(file))?;
                datasets_from_instances(d_in, instances, t.labeled_target_per_class, t.seed)
            }
        }
    }
}
