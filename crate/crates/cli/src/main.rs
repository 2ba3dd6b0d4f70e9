//! `ikmeta`: generate data, train, adapt and evaluate controllers, and run
//! the end-to-end pipelines. Every flag can also be set through an
//! `IKMETA_`-prefixed environment variable (`IKMETA_SEED=3`).
//!
//! Failures print one JSON object on stderr and exit with a code that
//! identifies the error kind (see [`exit_code`]).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ikmeta::config::ExperimentConfig;
use ikmeta::datagen::{Dataset, Normalizer};
use ikmeta::eval::{curve_csv, plant_label};
use ikmeta::mlp::MlpParams;
use ikmeta::pipeline::{self as pl, Outputs};
use ikmeta::plant::Actuation;
use ikmeta::{Error, Exec, Result};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "ikmeta", version, about = "Meta-learned inverse kinematics for continuum manipulators")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true, env = "IKMETA_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "IKMETA_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, env = "IKMETA_SEED")]
    seed: Option<u64>,
    /// Adaptation gradient steps.
    #[arg(long, global = true, env = "IKMETA_STEPS")]
    steps: Option<usize>,
    /// External load in kilograms.
    #[arg(long, global = true, env = "IKMETA_LOAD")]
    load: Option<f64>,
    /// Worker threads for multi-seed sweeps.
    #[arg(long, global = true, env = "IKMETA_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Random-walk simulation dataset.
    GenSim,
    /// Waypoint protocol dataset from the virtual-real plant.
    GenReal,
    /// MAML on a dataset (generated from the config when --data is absent).
    TrainMaml {
        #[arg(long, env = "IKMETA_DATA")]
        data: Option<PathBuf>,
    },
    /// Supervised baseline of the same architecture.
    TrainBpnn {
        #[arg(long, env = "IKMETA_DATA")]
        data: Option<PathBuf>,
    },
    /// Few-step adaptation on the virtual-real plant.
    Adapt {
        #[arg(long, env = "IKMETA_MODEL")]
        model: PathBuf,
    },
    /// Random-point test on the virtual-real plant.
    EvalRandom {
        #[arg(long, env = "IKMETA_MODEL")]
        model: PathBuf,
    },
    /// Line and semicircle tracking on the virtual-real plant.
    EvalTraj {
        #[arg(long, env = "IKMETA_MODEL")]
        model: PathBuf,
    },
    /// Jitter augmentation of a real dataset.
    Augment {
        #[arg(long, env = "IKMETA_DATA")]
        data: PathBuf,
    },
    /// Conditional GAN on a dataset.
    TrainCgan {
        #[arg(long, env = "IKMETA_DATA")]
        data: PathBuf,
    },
    /// Samples from a trained conditional GAN.
    GenFake {
        #[arg(long, env = "IKMETA_MODEL")]
        model: PathBuf,
    },
    /// End-to-end experiment.
    Pipeline {
        kind: PipelineKind,
        /// Run this many consecutive seeds, each under <out>/seed-<n>.
        #[arg(long, default_value_t = 1)]
        sweep: u64,
    },
    /// Plant utilities.
    Plant {
        #[command(subcommand)]
        command: PlantCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineKind {
    Sim2real,
    Cgan,
}

#[derive(Subcommand)]
enum PlantCommand {
    /// Print the tip position for one actuation as CSV.
    Probe {
        /// Four tendon displacements in metres, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        a: Vec<f64>,
        /// Probe the virtual-real plant (noise-free) instead of the simulator.
        #[arg(long)]
        virtual_real: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        Error::Json(_) => 5,
        Error::Domain(_) => 6,
        Error::Dimension { .. } => 7,
        Error::State(_) => 8,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.steps {
        cfg.adapt.steps = s;
    }
    if let Some(w) = c.load {
        cfg.adapt.load = w;
        cfg.eval.loads = vec![w];
        cfg.eval.trajectory_load = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> PathBuf {
    match &cfg.out_dir {
        Some(o) if c.out.as_os_str() == "out" => o.clone(),
        _ => c.out.clone(),
    }
}

fn read_model(path: &Path) -> Result<MlpParams> {
    MlpParams::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn dataset_or(path: &Option<PathBuf>, cfg: &ExperimentConfig) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p),
        None => pl::stage_gen_sim(cfg, Exec::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    let dir = out_dir(c, &cfg);
    match &cli.command {
        Command::Pipeline { kind, sweep } => pipeline(&cfg, &dir, *kind, *sweep, c.jobs),
        Command::Plant { command: PlantCommand::Probe { a, virtual_real } } => {
            let plant = if *virtual_real { pl::virtual_real(&cfg)? } else { cfg.plant.clone() };
            let act: Actuation = a
                .as_slice()
                .try_into()
                .map_err(|_| Error::domain(format!("--a needs 4 values, got {}", a.len())))?;
            let w = c.load.unwrap_or(0.0);
            let p = plant.forward(&act, w)?.p;
            println!("plant,a0,a1,a2,a3,load,x,y,z");
            println!("{},{},{},{},{},{},{},{},{}", plant_label(&plant), a[0], a[1], a[2], a[3], w, p[0], p[1], p[2]);
            Ok(())
        }
        _ => stage(&cli.command, &cfg, &dir),
    }
}

/// Single-stage commands; each writes its artifacts and a manifest.
fn stage(command: &Command, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let exec = Exec::default();
    let stats = Normalizer::default();
    let cfg = cfg.clone();
    let name;
    let mut out = Outputs::create(dir)?;
    match command {
        Command::GenSim => {
            name = "gen-sim";
            out.dataset("sim.jsonl", &pl::stage_gen_sim(&cfg, exec)?)?;
        }
        Command::GenReal => {
            name = "gen-real";
            out.dataset("real.jsonl", &pl::stage_gen_real(&cfg, exec)?)?;
        }
        Command::TrainMaml { data } => {
            name = "train-maml";
            let ds = dataset_or(data, &cfg)?;
            let (p, log) = pl::stage_train_maml(&cfg, &ds, exec)?;
            out.text("maml.json", &(p.to_json()? + "\n"))?;
            out.log("maml_log.csv", &log.to_csv())?;
        }
        Command::TrainBpnn { data } => {
            name = "train-bpnn";
            let ds = dataset_or(data, &cfg)?;
            let (p, log) = pl::stage_train_bpnn(&cfg, &ds)?;
            out.text("bpnn.json", &(p.to_json()? + "\n"))?;
            let mut csv = String::from("epoch,train_loss,val_loss\n");
            for r in &log {
                csv.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
            }
            out.text("bpnn_log.csv", &csv)?;
        }
        Command::Adapt { model } => {
            name = "adapt";
            let a = pl::stage_adapt(&cfg, &read_model(model)?, &stats)?;
            out.text("adapt_curve.csv", &curve_csv(&a.curve))?;
            out.report("adapt_report", &a.report)?;
            let last = a.models.last().expect("adaptation keeps the initial model");
            out.text("adapted.json", &(last.to_json()? + "\n"))?;
        }
        Command::EvalRandom { model } => {
            name = "eval-random";
            for r in pl::stage_eval_random(&cfg, &read_model(model)?, &stats)? {
                out.report(&format!("random_load_{:.2}", r.load), &r)?;
            }
        }
        Command::EvalTraj { model } => {
            name = "eval-traj";
            let reports = pl::stage_eval_traj(&cfg, &read_model(model)?, &stats)?;
            for (kind, r) in ["line", "semicircle"].iter().zip(&reports) {
                out.report(&format!("traj_{kind}"), r)?;
            }
        }
        Command::Augment { data } => {
            name = "augment";
            out.dataset("augmented.jsonl", &pl::stage_augment(&cfg, &Dataset::load(data)?)?)?;
        }
        Command::TrainCgan { data } => {
            name = "train-cgan";
            let (pair, log) = pl::stage_train_cgan(&cfg, &Dataset::load(data)?)?;
            out.text("cgan.json", &(pair.to_json()? + "\n"))?;
            out.text("cgan_log.csv", &log.to_csv())?;
        }
        Command::GenFake { model } => {
            name = "gen-fake";
            let s = std::fs::read_to_string(model).map_err(|e| Error::io(model, e))?;
            let pair = ikmeta::cgan::GanPair::from_json(&s)?;
            out.dataset("fake.jsonl", &pl::stage_gen_fake(&cfg, &pair, &cfg.real.loads(), exec)?)?;
        }
        Command::Pipeline { .. } | Command::Plant { .. } => unreachable!("handled in run"),
    }
    out.text("config.json", &(cfg.to_json()? + "\n"))?;
    out.finish(name, &cfg)?;
    Ok(())
}

fn pipeline(cfg: &ExperimentConfig, dir: &Path, kind: PipelineKind, sweep: u64, jobs: usize) -> Result<()> {
    let run_one = |cfg: &ExperimentConfig, dir: &Path, exec: Exec| match kind {
        PipelineKind::Sim2real => pl::run_sim2real(cfg, dir, exec),
        PipelineKind::Cgan => pl::run_cgan(cfg, dir, exec),
    };
    if sweep <= 1 {
        run_one(cfg, dir, Exec::default())?;
        return Ok(());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..sweep).into_par_iter().try_for_each(|k| {
            let seeded = ExperimentConfig {
                seed: cfg.seed + k,
                ..cfg.clone()
            };
            run_one(&seeded, &dir.join(format!("seed-{}", seeded.seed)), Exec::Sequential).map(|_| ())
        })
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let doc = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code }
            });
            eprintln!("{doc}");
            ExitCode::from(code)
        }
    }
}
