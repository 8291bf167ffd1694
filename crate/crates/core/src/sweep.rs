//! One-at-a-time hyperparameter sensitivity sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::{evaluate, train};

/// Seeds per sweep value, starting at the configured seed.
pub const SWEEP_SEEDS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Theta,
    Alpha,
    LabeledTarget,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(SweepAxis::Theta),
            "alpha" => Ok(SweepAxis::Alpha),
            "labeled_target" => Ok(SweepAxis::LabeledTarget),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Theta => "theta",
            SweepAxis::Alpha => "alpha",
            SweepAxis::LabeledTarget => "labeled_target",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Final target test accuracy for each seed.
    pub accuracies: Vec<f64>,
}

impl SweepPoint {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    pub fn median(&self) -> f64 {
        let mut v = self.accuracies.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}

fn integer(axis: SweepAxis, value: f64) -> Result<usize> {
    if value.fract() != 0.0 || value < 0.0 {
        return Err(Error::Config(format!("{axis} takes non-negative integers, got {value}")));
    }
    Ok(value as usize)
}

/// The configuration for one sweep value and seed.
pub fn configure(base: &RunConfig, axis: SweepAxis, value: f64, seed: u64) -> Result<RunConfig> {
    let mut run = base.clone();
    run.train.seed = seed;
    match axis {
        SweepAxis::Theta => run.train.theta = integer(axis, value)?,
        SweepAxis::Alpha => run.train.alpha = value,
        SweepAxis::LabeledTarget => run.train.labeled_target_per_class = integer(axis, value)?,
    }
    run.train.validate()?;
    Ok(run)
}

/// Trains and evaluates once per value and seed.
pub fn sweep(base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.len() < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 values, got {}", values.len())));
    }
    values
        .iter()
        .map(|&value| {
            let accuracies = (0..SWEEP_SEEDS)
                .map(|k| {
                    let run = configure(base, axis, value, base.train.seed + k)?;
                    let ds = run.datasets()?;
                    let out = train(&run.train, &ds)?;
                    evaluate(&out.state.params, &ds.target_test)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepPoint { value, accuracies })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(mut out: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(out, "value,mean_accuracy")?;
    for p in points {
        writeln!(out, "{},{}", p.value, p.mean())?;
    }
    Ok(())
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("invalid sweep value {v:?}")))
        })
        .collect()
}
