//! Command-line driver behind the `manifold-ssl` binary.
//!
//! Every invocation resolves a [`Config`], writes a [`RunManifest`] into a
//! fresh results directory and only then starts work. The directory name is
//! `{subcommand}-seed{seed}-{hash8}` where the hash covers the subcommand and
//! the resolved config, so a manifest alone is enough to regenerate its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{key_reference, parse_seed_list, Config};
use crate::error::{Error, Result};
use crate::experiments::fluid::fluid_csv;
use crate::experiments::gradcheck::gradcheck_csv;
use crate::experiments::{fluid_limit_experiment, gradcheck_suite, harmonic_experiment, run_sweep, SweepAxis};
use crate::manifold::{write_dataset, Augmentation, DatasetHeader};
use crate::network::write_checkpoint;
use crate::training::{self, records_to_csv, relative_gap, Method, TrainRecord};

/// Overrides the default output root `./results`.
pub const OUTPUT_ENV: &str = "MANIFOLD_SSL_OUTPUT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "manifold-ssl-manifest";

#[derive(Parser, Debug)]
#[command(
    name = "manifold-ssl",
    version,
    about = "Consistency-regularized semi-supervised learning on the Hidden Manifold Model",
    after_help = key_reference(),
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Config file of `key = value` lines under [section] headers.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Regenerate the outputs recorded by a manifest.json.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "config")]
    pub manifest: Option<PathBuf>,

    /// Output root. Falls back to $MANIFOLD_SSL_OUTPUT, then ./results.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Upper bound on runs executed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Sample an HMM dataset and write it as CSV.
    Generate {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One training run.
    Train {
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full factorial sweep over one axis and several seeds.
    Sweep {
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma list with optional inclusive ranges, e.g. `1..5`.
        #[arg(long, value_parser = parse_seed_list)]
        seeds: Option<::std::vec::Vec<u64>>,
    },
    /// Unit-square experiment with labels on u=0 and u=1.
    Harmonic {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// SGD paths against the RK4 gradient flow for several step sizes.
    Fluidlimit {
        #[arg(long, value_parser = parse_seed_list)]
        seeds: Option<::std::vec::Vec<u64>>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Sweep { .. } => "sweep",
            Command::Harmonic { .. } => "harmonic",
            Command::Fluidlimit { .. } => "fluidlimit",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }

    /// Folds command-line flags into the config.
    pub fn apply(&self, cfg: &mut Config) {
        match self.clone() {
            Command::Generate { seed } => {
                if let Some(s) = seed {
                    cfg.train.seed = s;
                }
            }
            Command::Train { method, seed } => {
                if let Some(m) = method {
                    cfg.train.method = m;
                }
                if let Some(s) = seed {
                    cfg.train.seed = s;
                }
            }
            Command::Sweep {
                method,
                axis,
                values,
                seeds,
            } => {
                if let Some(m) = method {
                    cfg.train.method = m;
                }
                if let Some(a) = axis {
                    cfg.sweep.axis = a;
                }
                if let Some(v) = values {
                    cfg.sweep.values = v;
                }
                if let Some(s) = seeds {
                    cfg.sweep.seeds = s;
                }
            }
            Command::Harmonic { seed } => {
                if let Some(s) = seed {
                    cfg.harmonic.seed = s;
                }
            }
            Command::Fluidlimit { seeds } => {
                if let Some(s) = seeds {
                    cfg.fluid.seeds = s;
                }
            }
            Command::Gradcheck { seed } => {
                if let Some(s) = seed {
                    cfg.gradcheck.seed = s;
                }
            }
        }
    }

    /// Seed used in the directory name.
    fn primary_seed(&self, cfg: &Config) -> u64 {
        self.seeds(cfg)[0]
    }

    fn seeds(&self, cfg: &Config) -> Vec<u64> {
        match self {
            Command::Generate { .. } | Command::Train { .. } => vec![cfg.train.seed],
            Command::Sweep { .. } => cfg.sweep.seeds.clone(),
            Command::Harmonic { .. } => vec![cfg.harmonic.seed],
            Command::Fluidlimit { .. } => cfg.fluid.seeds.clone(),
            Command::Gradcheck { .. } => vec![cfg.gradcheck.seed],
        }
    }

    fn from_name(name: &str) -> Result<Command> {
        Ok(match name {
            "generate" => Command::Generate { seed: None },
            "train" => Command::Train { method: None, seed: None },
            "sweep" => Command::Sweep {
                method: None,
                axis: None,
                values: None,
                seeds: None,
            },
            "harmonic" => Command::Harmonic { seed: None },
            "fluidlimit" => Command::Fluidlimit { seeds: None },
            "gradcheck" => Command::Gradcheck { seed: None },
            other => return Err(Error::invalid(format!("unknown subcommand {other:?}"))),
        })
    }
}

/// Everything needed to reproduce one results directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub code_version: String,
    pub subcommand: String,
    pub seeds: Vec<u64>,
    /// Canonical text of the resolved config.
    pub config: String,
    pub config_hash: String,
    pub output_dir: String,
    pub outputs: Vec<String>,
    pub status: String,
    /// Wall-clock seconds per phase; empty until the run finishes.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest> {
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("not a manifest (format {:?})", m.format),
            });
        }
        Ok(m)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn config_hash(subcommand: &str, config_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(subcommand.as_bytes());
    h.update(b"\n");
    h.update(config_text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_dir_name(subcommand: &str, seed: u64, hash: &str) -> String {
    format!("{subcommand}-seed{seed}-{}", &hash[..8])
}

fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn planned_outputs(cmd: &Command, cfg: &Config) -> Vec<String> {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    match cmd {
        Command::Generate { .. } => v(&["header.json", "labelled.csv", "unlabelled.csv", "test.csv"]),
        Command::Train { .. } => {
            let mut o: Vec<String> = v(&["records.csv", "params.json"]);
            if cfg.train.method == Method::MeanTeacher {
                o.push("teacher.json".into());
            }
            o
        }
        Command::Sweep { .. } => v(&["runs.csv", "summary.csv"]),
        Command::Harmonic { .. } => v(&["grid.csv", "grid_init.csv", "energy.csv", "records.csv", "params.json"]),
        Command::Fluidlimit { .. } => v(&["fluid.csv"]),
        Command::Gradcheck { .. } => v(&["gradcheck.csv"]),
    }
}

/// Parses arguments, runs, and returns the process exit status.
pub fn main_with(cli: Cli) -> i32 {
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let (cmd, cfg, dir) = if let Some(path) = &cli.manifest {
        let m = RunManifest::read(path)?;
        let cmd = Command::from_name(&m.subcommand)?;
        let cfg = Config::parse(&m.config)?;
        let dir = match (&cli.out, std::env::var_os(OUTPUT_ENV)) {
            (None, None) => path.parent().map(Path::to_path_buf).unwrap_or_default(),
            _ => output_root(cli.out.as_deref()).join(Path::new(&m.output_dir).file_name().unwrap_or_default()),
        };
        (cmd, cfg, Some(dir))
    } else {
        let cmd = cli
            .command
            .clone()
            .ok_or_else(|| Error::invalid("a subcommand or --manifest is required"))?;
        let mut cfg = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cmd.apply(&mut cfg);
        cfg.validate()?;
        (cmd, cfg, None)
    };

    let text = cfg.render();
    if cli.print_config {
        print!("{text}");
        return Ok(0);
    }
    eprintln!("resolved config:\n{text}");

    let hash = config_hash(cmd.name(), &text);
    let dir = dir.unwrap_or_else(|| {
        output_root(cli.out.as_deref()).join(run_dir_name(cmd.name(), cmd.primary_seed(&cfg), &hash))
    });
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: cmd.name().to_string(),
        seeds: cmd.seeds(&cfg),
        config: text,
        config_hash: hash,
        output_dir: dir.display().to_string(),
        outputs: planned_outputs(&cmd, &cfg),
        status: "running".to_string(),
        timings: BTreeMap::new(),
    };
    manifest.write(&dir)?;

    let start = Instant::now();
    let result = execute(&cmd, &cfg, &dir, cli.jobs);
    manifest.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    manifest.status = match &result {
        Ok(0) => "ok".into(),
        Ok(_) => "completed_with_failures".into(),
        Err(e) => format!("error: {e}"),
    };
    manifest.write(&dir)?;
    println!("results: {}", dir.display());
    result
}

fn execute(cmd: &Command, cfg: &Config, dir: &Path, jobs: usize) -> Result<i32> {
    match cmd {
        Command::Generate { .. } => {
            let task = cfg.task.build()?;
            let data = task.dataset(cfg.train.seed)?;
            let header = DatasetHeader {
                hidden_dim: Some(cfg.task.hidden_dim),
                task_seed: Some(cfg.task.task_seed),
                data_seed: Some(cfg.train.seed),
                task: Some(task.task.clone()),
                ..DatasetHeader::for_dataset(&data)
            };
            write_dataset(dir, &header, &data)?;
            println!(
                "wrote {} labelled, {} unlabelled, {} test samples",
                data.labelled.len(),
                data.unlabelled.len(),
                data.test.len()
            );
            Ok(0)
        }
        Command::Train { .. } => {
            let task = cfg.task.build()?;
            let data = task.dataset(cfg.train.seed)?;
            let augmenter = Augmentation::new(&task.map, cfg.train.augmentation);
            let out = training::train(&cfg.train, &data, &augmenter)?;
            let run_id = format!("{}-seed{}", cfg.train.method, cfg.train.seed);
            let records: Vec<TrainRecord> = out
                .records
                .iter()
                .map(|r| TrainRecord {
                    run_id: run_id.clone(),
                    ..r.clone()
                })
                .collect();
            fs::write(dir.join("records.csv"), records_to_csv(&records))?;
            write_checkpoint(&dir.join("params.json"), &out.params)?;
            if let Some(ema) = &out.ema {
                write_checkpoint(&dir.join("teacher.json"), ema)?;
                println!("teacher gap {:.3e}", relative_gap(ema, &out.params));
            }
            let last = out.final_record();
            println!(
                "{run_id}: final test_nll {:.4} test_acc {:.4}",
                last.test_nll, last.test_acc
            );
            Ok(0)
        }
        Command::Sweep { .. } => {
            let task = cfg.task.build()?;
            let out = run_sweep(&cfg.sweep_spec(), &task, jobs)?;
            fs::write(dir.join("runs.csv"), out.runs_csv())?;
            fs::write(dir.join("summary.csv"), out.summary_csv())?;
            print!("{}", out.summary_csv());
            let failures: Vec<_> = out.failures().collect();
            for (id, msg) in &failures {
                eprintln!("run {id} failed: {msg}");
            }
            Ok(if failures.is_empty() { 0 } else { 1 })
        }
        Command::Harmonic { .. } => {
            let report = harmonic_experiment(&cfg.harmonic)?;
            fs::write(dir.join("grid.csv"), report.trained.to_csv())?;
            fs::write(dir.join("grid_init.csv"), report.initial.to_csv())?;
            fs::write(dir.join("energy.csv"), report.energy_csv())?;
            fs::write(dir.join("records.csv"), records_to_csv(&report.records))?;
            write_checkpoint(&dir.join("params.json"), &report.params)?;
            println!(
                "rms error {:.4} (init {:.4}); mean |laplacian| {:.4} (init {:.4})",
                report.trained.rms_error,
                report.initial.rms_error,
                report.trained.mean_abs_laplacian,
                report.initial.mean_abs_laplacian
            );
            Ok(0)
        }
        Command::Fluidlimit { .. } => {
            let rows = fluid_limit_experiment(&cfg.fluid_config())?;
            let csv = fluid_csv(&rows);
            fs::write(dir.join("fluid.csv"), &csv)?;
            print!("{csv}");
            Ok(0)
        }
        Command::Gradcheck { .. } => {
            let rows = gradcheck_suite(&cfg.gradcheck)?;
            fs::write(dir.join("gradcheck.csv"), gradcheck_csv(&rows))?;
            let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            for r in &rows {
                println!(
                    "{:<26} {:>4} instances  max rel err {:.2e}  {}",
                    r.objective,
                    r.instances,
                    r.max_rel_error,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            println!("max relative error {worst:.3e} (tolerance {:.0e})", cfg.gradcheck.tolerance);
            Ok(if rows.iter().all(|r| r.passed) { 0 } else { 1 })
        }
    }
}
