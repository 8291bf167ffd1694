use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use derwent::checkpoint;
use derwent::config::{parse_config, Command, RunConfig, SEED_ENV};
use derwent::data::write_dataset;
use derwent::paths::{export_paths, ExportStatus};
use derwent::sweep::{parse_values, sweep, write_sweep_csv, SweepAxis};
use derwent::trainer::{baseline_dnn, evaluate, first_batch_graph, sample_paths, train, write_metrics_csv};
use derwent::{Error, Result};

#[derive(Parser)]
#[command(name = "derwent", version, about = "Distant transfer learning by deep random walks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured data and write metrics, checkpoint and paths.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the first batch's edge weights as CSV.
        #[arg(long)]
        dump_graph: bool,
    },
    /// Train the target-only network and report its test accuracy.
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Report the target test accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sample and render transfer paths with a checkpoint's parameters.
    Paths {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train once per value and seed along one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// theta, alpha or labeled_target.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
}

#[derive(Args)]
struct Common {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dataset file; the synthetic chain is used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_feature: Option<f64>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    labeled_target: Option<usize>,
    #[arg(long)]
    ablate_lstm: bool,
    /// Any configuration key, as key=value; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self, command: Command, checkpoint: Option<&Path>) -> Result<Vec<(String, String)>> {
        let mut o: Vec<(String, String)> = vec![("command".into(), command.to_string())];
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        push("out_dir", self.out_dir.as_ref().map(|p| p.display().to_string()));
        push("data", self.data.as_ref().map(|p| p.display().to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("lr_feature", self.lr_feature.map(|v| v.to_string()));
        push("lr_classifier", self.lr_classifier.map(|v| v.to_string()));
        push("momentum", self.momentum.map(|v| v.to_string()));
        push("theta", self.theta.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("lambda1", self.lambda1.map(|v| v.to_string()));
        push("lambda2", self.lambda2.map(|v| v.to_string()));
        push("eta0", self.eta0.map(|v| v.to_string()));
        push("labeled_target_per_class", self.labeled_target.map(|v| v.to_string()));
        push("ablate_lstm", self.ablate_lstm.then(|| "true".to_string()));
        push("checkpoint", checkpoint.map(|p| p.display().to_string()));
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(o)
    }

    fn resolve(&self, command: Command, checkpoint: Option<&Path>) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        parse_config(&text, env_seed.as_deref(), &self.overrides(command, checkpoint)?)
    }
}

fn prepare_out_dir(run: &RunConfig) -> Result<()> {
    fs::create_dir_all(&run.out_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", run.out_dir.display())))?;
    fs::write(run.out_dir.join("config.txt"), run.to_text())?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_paths(run: &RunConfig, records: &[derwent::paths::PathRecord]) -> Result<()> {
    let status = export_paths(records, &run.out_dir.join("paths.json"), &run.out_dir.join("paths.svg"))?;
    if status == ExportStatus::NoReachedWalks {
        eprintln!("warning: no walk reached its destination; paths.json is empty");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { common, dump_graph } => {
            let run = common.resolve(Command::Train, None)?;
            prepare_out_dir(&run)?;
            let ds = run.datasets()?;
            write_dataset(BufWriter::new(fs::File::create(run.out_dir.join("dataset.csv"))?), ds.d_in, ds.all())?;
            let out = train(&run.train, &ds)?;
            write_metrics_csv(BufWriter::new(fs::File::create(run.out_dir.join("metrics.csv"))?), &out.history)?;
            checkpoint::save(&out.state, &run.out_dir.join("checkpoint.bin"))?;
            write_paths(&run, &out.paths)?;
            if dump_graph {
                let epoch = out.state.epoch.saturating_sub(1);
                let g = first_batch_graph(&run.train, &ds, &out.state.params, epoch)?;
                g.write_weights_csv(BufWriter::new(fs::File::create(run.out_dir.join("graph.csv"))?))?;
            }
            let accuracy = evaluate(&out.state.params, &ds.target_test)?;
            write_json(&run.out_dir.join("summary.json"), &json!({ "target_test_accuracy": accuracy, "epochs": out.state.epoch }))?;
            println!("target test accuracy {accuracy:.4}");
        }
        Cmd::Baseline { common } => {
            let run = common.resolve(Command::Baseline, None)?;
            prepare_out_dir(&run)?;
            let ds = run.datasets()?;
            let report = baseline_dnn(&run.train, &ds)?;
            write_json(
                &run.out_dir.join("baseline.json"),
                &json!({
                    "target_test_accuracy": report.accuracy,
                    "target_train_accuracy": report.train_accuracy,
                    "source_used": report.source_used,
                    "auxiliary_used": report.auxiliary_used,
                    "target_used": report.target_used,
                }),
            )?;
            println!("baseline target test accuracy {:.4}", report.accuracy);
        }
        Cmd::Eval { common, checkpoint } => {
            let run = common.resolve(Command::Eval, Some(&checkpoint))?;
            let state = checkpoint::load(&checkpoint)?;
            let ds = run.datasets()?;
            let accuracy = evaluate(&state.params, &ds.target_test)?;
            println!("{}", json!({ "target_test_accuracy": accuracy, "epoch": state.epoch }));
        }
        Cmd::Paths { common, checkpoint } => {
            let run = common.resolve(Command::Paths, Some(&checkpoint))?;
            prepare_out_dir(&run)?;
            let state = checkpoint::load(&checkpoint)?;
            let ds = run.datasets()?;
            let epoch = state.epoch.saturating_sub(1);
            write_paths(&run, &sample_paths(&run.train, &ds, &state.params, epoch)?)?;
        }
        Cmd::Sweep { common, axis, values } => {
            let run = common.resolve(Command::Sweep, None)?;
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            prepare_out_dir(&run)?;
            let points = sweep(&run, axis, &values)?;
            write_sweep_csv(BufWriter::new(fs::File::create(run.out_dir.join(format!("sweep_{axis}.csv")))?), &points)?;
            for p in &points {
                println!("{axis}={} mean {:.4} median {:.4}", p.value, p.mean(), p.median());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match &e {
                Error::Config(_) => 2,
                e if e.is_numeric() => 3,
                _ => 1,
            })
        }
    }
}
