//! Instances, datasets, the synthetic domain-chain generator and the
//! dataset file format.
//!
//! File format: a header line `d_in,n`, then one row per instance
//! `id,domain,label,f_1,...,f_{d_in}` with `domain` one of `source`,
//! `auxiliary`, `target` and `label` empty for auxiliary rows. Target rows
//! hold the whole target domain; the labeled/test split is made at load
//! time from the seed.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Auxiliary,
    Target,
}

impl Domain {
    /// One-letter tag used in figures.
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Source => "S",
            Domain::Auxiliary => "A",
            Domain::Target => "T",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Auxiliary => "auxiliary",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" | "s" => Ok(Domain::Source),
            "auxiliary" | "a" => Ok(Domain::Auxiliary),
            "target" | "t" => Ok(Domain::Target),
            other => Err(Error::Data(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub features: Vec<f64>,
    pub domain: Domain,
    /// Binary label; always present for source and target, never for
    /// auxiliary instances.
    pub label: Option<u8>,
    /// Diagnostic value, e.g. the rotation angle of the generating domain.
    pub meta: Option<f64>,
}

impl Instance {
    pub fn new(id: u64, features: Vec<f64>, domain: Domain, label: Option<u8>) -> Result<Self> {
        match (domain, label) {
            (Domain::Auxiliary, Some(_)) => {
                return Err(Error::Data(format!("auxiliary instance {id} carries a label")))
            }
            (Domain::Source | Domain::Target, None) => {
                return Err(Error::Data(format!("{domain} instance {id} has no label")))
            }
            (_, Some(l)) if l > 1 => return Err(Error::Data(format!("label {l} is not binary"))),
            _ => {}
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Data(format!("instance {id} has non-finite features")));
        }
        Ok(Self { id, features, domain, label, meta: None })
    }

    pub fn with_meta(mut self, meta: f64) -> Self {
        self.meta = Some(meta);
        self
    }
}

/// Training pools and the held-out target test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub d_in: usize,
    pub source: Vec<Instance>,
    pub auxiliary: Vec<Instance>,
    pub target_train: Vec<Instance>,
    pub target_test: Vec<Instance>,
}

impl Datasets {
    pub fn test_ids(&self) -> BTreeSet<u64> {
        self.target_test.iter().map(|i| i.id).collect()
    }

    pub fn all(&self) -> impl Iterator<Item = &Instance> {
        self.source
            .iter()
            .chain(&self.auxiliary)
            .chain(&self.target_train)
            .chain(&self.target_test)
    }
}

/// Parameters of the rotated domain chain.
///
/// Domain `k` of `n_domains` is rotated by `k * pi / (n_domains - 1)` in the
/// plane of the first two coordinates, so the first (source) and last
/// (target) domains are antipodal. The class is encoded along the third
/// coordinate with the same sign in every domain, so adjacent domains
/// overlap while the endpoints share nothing but the labeling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub n_domains: usize,
    pub per_domain: usize,
    pub d_in: usize,
    /// Labeled target instances kept for training, per class.
    pub labeled_target_per_class: usize,
    /// Distance of each domain center from the origin.
    pub radius: f64,
    /// Offset of each class center from its domain center.
    pub class_offset: f64,
    /// Standard deviation of the isotropic noise.
    pub noise: f64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            n_domains: 5,
            per_domain: 200,
            d_in: 16,
            labeled_target_per_class: 10,
            radius: 3.0,
            class_offset: 1.0,
            noise: 1.0,
        }
    }
}

impl ChainSpec {
    fn validate(&self) -> Result<()> {
        if self.n_domains < 3 {
            return Err(Error::Invalid(format!("need at least 3 domains, got {}", self.n_domains)));
        }
        if self.d_in < 3 {
            return Err(Error::Invalid(format!("need d_in >= 3, got {}", self.d_in)));
        }
        if self.per_domain < 2 * self.labeled_target_per_class + 2 {
            return Err(Error::Invalid(format!(
                "per_domain {} too small for {} labeled targets per class plus a test set",
                self.per_domain, self.labeled_target_per_class
            )));
        }
        if !(self.radius > 0.0 && self.class_offset > 0.0 && self.noise >= 0.0) {
            return Err(Error::Invalid("radius and class_offset must be positive, noise non-negative".into()));
        }
        Ok(())
    }

    pub fn angle(&self, k: usize) -> f64 {
        k as f64 * PI / (self.n_domains - 1) as f64
    }

    /// Center of class `label` in domain `k`.
    pub fn class_mean(&self, k: usize, label: u8) -> Vec<f64> {
        let mut m = vec![0.0; self.d_in];
        let a = self.angle(k);
        m[0] = self.radius * a.cos();
        m[1] = self.radius * a.sin();
        m[2] = if label == 1 { self.class_offset } else { -self.class_offset };
        m
    }
}

/// Generates the chain and splits the target domain.
pub fn gen_synthetic_chain(spec: &ChainSpec, seed: u64) -> Result<Datasets> {
    spec.validate()?;
    let mut rng = rng::stream(seed, rng::DATA_STREAM);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let last = spec.n_domains - 1;
    let mut source = Vec::new();
    let mut auxiliary = Vec::new();
    let mut target = Vec::new();
    let mut next_id = 0u64;
    for k in 0..spec.n_domains {
        let domain = match k {
            0 => Domain::Source,
            k if k == last => Domain::Target,
            _ => Domain::Auxiliary,
        };
        for i in 0..spec.per_domain {
            let label = (i % 2) as u8;
            let features: Vec<f64> = spec
                .class_mean(k, label)
                .into_iter()
                .map(|m| m + normal.sample(&mut rng))
                .collect();
            let label = (domain != Domain::Auxiliary).then_some(label);
            let inst = Instance::new(next_id, features, domain, label)?.with_meta(spec.angle(k));
            next_id += 1;
            match domain {
                Domain::Source => source.push(inst),
                Domain::Auxiliary => auxiliary.push(inst),
                Domain::Target => target.push(inst),
            }
        }
    }
    let (target_train, target_test) = split_target(target, spec.labeled_target_per_class, seed)?;
    Ok(Datasets { d_in: spec.d_in, source, auxiliary, target_train, target_test })
}

/// Randomly keeps `per_class` instances of each class for training; the
/// rest become the test set. The result does not depend on input order.
pub fn split_target(mut target: Vec<Instance>, per_class: usize, seed: u64) -> Result<(Vec<Instance>, Vec<Instance>)> {
    target.sort_by_key(|i| i.id);
    let mut rng = rng::stream(seed, rng::SPLIT_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<Instance> =
            target.iter().filter(|i| i.label == Some(class)).cloned().collect();
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} target instances, fewer than {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        test.extend(members.split_off(per_class));
        train.extend(members);
    }
    train.sort_by_key(|i| i.id);
    test.sort_by_key(|i| i.id);
    Ok((train, test))
}

/// Writes instances in the dataset file format.
pub fn write_dataset<'a, W: Write>(mut out: W, d_in: usize, instances: impl IntoIterator<Item = &'a Instance>) -> Result<()> {
    let instances: Vec<&Instance> = instances.into_iter().collect();
    writeln!(out, "{d_in},{}", instances.len())?;
    for inst in instances {
        write!(out, "{},{},", inst.id, inst.domain)?;
        if let Some(l) = inst.label {
            write!(out, "{l}")?;
        }
        for f in &inst.features {
            write!(out, ",{f}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a dataset file. Returns `d_in` and the instances in file order.
pub fn read_dataset<R: BufRead>(input: R) -> Result<(usize, Vec<Instance>)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Data("empty dataset file".into()))??;
    let (d_in, n) = header
        .split_once(',')
        .and_then(|(d, n)| Some((d.trim().parse::<usize>().ok()?, n.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| Error::Data(format!("bad header {header:?}, expected `d_in,n`")))?;
    let mut out = Vec::with_capacity(n);
    let mut ids = BTreeSet::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("line {}: {what}", lineno + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + d_in {
            return Err(bad(&format!("expected {} fields, got {}", 3 + d_in, fields.len())));
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| bad("bad id"))?;
        let domain: Domain = fields[1].parse()?;
        let label = match fields[2].trim() {
            "" => None,
            l => Some(l.parse::<u8>().map_err(|_| bad("bad label"))?),
        };
        let features = fields[3..]
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad("bad feature")))
            .collect::<Result<Vec<_>>>()?;
        if !ids.insert(id) {
            return Err(bad(&format!("duplicate id {id}")));
        }
        out.push(Instance::new(id, features, domain, label)?);
    }
    if out.len() != n {
        return Err(Error::Data(format!("header says {n} instances, found {}", out.len())));
    }
    Ok((d_in, out))
}

/// Groups file instances into datasets, splitting the target domain.
pub fn datasets_from_instances(d_in: usize, instances: Vec<Instance>, labeled_per_class: usize, seed: u64) -> Result<Datasets> {
    let mut source = Vec::new();
    let mut auxiliary = Vec::new();
    let mut target = Vec::new();
    for inst in instances {
        match inst.domain {
            Domain::Source => source.push(inst),
            Domain::Auxiliary => auxiliary.push(inst),
            Domain::Target => target.push(inst),
        }
    }
    let (target_train, target_test) = split_target(target, labeled_per_class, seed)?;
    Ok(Datasets { d_in, source, auxiliary, target_train, target_test })
}
