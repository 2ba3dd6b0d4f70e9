//! Experiment stages and the two end-to-end pipelines.
//!
//! Each stage is a pure function of the config (and its inputs); the
//! pipelines write every artifact under one directory together with a
//! manifest listing the config hash, the derived seeds and a SHA-256 of each
//! deterministic artifact. Training logs carry wall-clock times and are
//! written but left out of the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgan::{augment, gan_generate, gan_train, GanLog, GanPair};
use crate::config::{sha256_hex, ExperimentConfig, StageSeeds};
use crate::datagen::{gen_protocol_real, gen_sim, split, Dataset, Normalizer, Provenance, DEFAULT_SPLIT};
use crate::error::{Error, Result};
use crate::eval::{adapt, follow_trajectory, make_specs, random_point_test, Adaptation, EvalReport, MlpController};
use crate::exec::Exec;
use crate::meta::{meta_train, train_bpnn, BpnnLogRow, TrainingLog};
use crate::mlp::MlpParams;
use crate::plant::{apply_perturbation, PlantConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn virtual_real(cfg: &ExperimentConfig) -> Result<PlantConfig> {
    apply_perturbation(&cfg.plant, cfg.perturbation.clone())
}

pub fn stage_gen_sim(cfg: &ExperimentConfig, exec: Exec) -> Result<Dataset> {
    let s = &cfg.sim;
    gen_sim(&cfg.plant, s.n_per_load, &s.loads(), s.constraint_fraction, cfg.seeds().data, exec)
}

pub fn stage_gen_real(cfg: &ExperimentConfig, exec: Exec) -> Result<Dataset> {
    let r = &cfg.real;
    gen_protocol_real(&virtual_real(cfg)?, r.waypoints, r.interp_points, &r.loads(), cfg.seeds().data, exec)
}

pub fn stage_train_maml(cfg: &ExperimentConfig, data: &Dataset, exec: Exec) -> Result<(MlpParams, TrainingLog)> {
    let seeds = cfg.seeds();
    let maml = crate::meta::MamlConfig {
        seed: seeds.train,
        exec,
        ..cfg.maml.clone()
    };
    meta_train(data, &maml, MlpParams::controller(seeds.init))
}

/// BPNN on the 70 % training split, validated on the next 15 %.
pub fn stage_train_bpnn(cfg: &ExperimentConfig, data: &Dataset) -> Result<(MlpParams, Vec<BpnnLogRow>)> {
    let seeds = cfg.seeds();
    let (train, val, _) = split(data, DEFAULT_SPLIT, seeds.data)?;
    let bpnn = crate::meta::BpnnConfig {
        seed: seeds.init,
        ..cfg.bpnn.clone()
    };
    train_bpnn(&train, &val, &bpnn)
}

pub fn stage_adapt(cfg: &ExperimentConfig, params: &MlpParams, stats: &Normalizer) -> Result<Adaptation> {
    let acfg = crate::eval::AdaptConfig {
        seed: cfg.seeds().adapt,
        ..cfg.adapt.clone()
    };
    adapt(params, stats, &virtual_real(cfg)?, &acfg)
}

/// Random-point reports on the virtual-real plant, one per configured load.
pub fn stage_eval_random(cfg: &ExperimentConfig, params: &MlpParams, stats: &Normalizer) -> Result<Vec<EvalReport>> {
    let plant = virtual_real(cfg)?;
    let ctrl = MlpController::new(params, *stats);
    cfg.eval
        .loads
        .iter()
        .map(|&load| random_point_test(&ctrl, &plant, cfg.eval.random_points, load, cfg.seeds().eval))
        .collect()
}

/// Line and semicircle reports on the virtual-real plant.
pub fn stage_eval_traj(cfg: &ExperimentConfig, params: &MlpParams, stats: &Normalizer) -> Result<Vec<EvalReport>> {
    let plant = virtual_real(cfg)?;
    let ctrl = MlpController::new(params, *stats);
    make_specs(cfg.eval.trajectory_load)
        .iter()
        .map(|spec| follow_trajectory(&ctrl, &plant, spec, cfg.seeds().eval))
        .collect()
}

pub fn stage_augment(cfg: &ExperimentConfig, real: &Dataset) -> Result<Dataset> {
    augment(real, &cfg.jitter, cfg.seeds().augment)
}

pub fn stage_train_cgan(cfg: &ExperimentConfig, data: &Dataset) -> Result<(GanPair, GanLog)> {
    let gan = crate::cgan::GanConfig {
        seed: cfg.seeds().gan,
        ..cfg.gan.clone()
    };
    gan_train(data, &gan)
}

pub fn stage_gen_fake(cfg: &ExperimentConfig, pair: &GanPair, loads: &[f64], exec: Exec) -> Result<Dataset> {
    gan_generate(pair, cfg.fake_samples, loads, cfg.seeds().gan, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pipeline: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: StageSeeds,
    pub artifacts: Vec<Artifact>,
}

/// Collects artifacts written under one output directory.
pub struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        self.record(name)
    }

    /// Written but not hashed: contents include wall-clock times.
    pub fn log(&self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }

    pub fn dataset(&mut self, name: &str, ds: &Dataset) -> Result<()> {
        let p = self.path(name);
        ds.save(&p)?;
        self.record(name)?;
        let header = crate::datagen::header_path(&p);
        let hname = header.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        self.record(&hname)
    }

    pub fn report(&mut self, stem: &str, r: &EvalReport) -> Result<()> {
        self.text(&format!("{stem}.csv"), &r.to_csv())?;
        self.text(&format!("{stem}.json"), &(r.summary_json()? + "\n"))
    }

    pub fn finish(self, pipeline: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        let m = Manifest {
            pipeline: pipeline.to_string(),
            version: VERSION.to_string(),
            config_sha256: cfg.hash()?,
            seed: cfg.seed,
            seeds: cfg.seeds(),
            artifacts: self.artifacts,
        };
        let p = self.dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))?;
        Ok(m)
    }
}

fn load_or<F: FnOnce() -> Result<Dataset>>(path: &Option<PathBuf>, make: F) -> Result<Dataset> {
    match path {
        Some(p) => Dataset::load(p),
        None => make(),
    }
}

/// Adaptation on the virtual-real plant followed by random-point and
/// trajectory evaluation of the adapted model.
fn adapt_and_evaluate(cfg: &ExperimentConfig, out: &mut Outputs, params: &MlpParams, stats: &Normalizer) -> Result<()> {
    let adapted = stage_adapt(cfg, params, stats)?;
    out.text("adapt_curve.csv", &crate::eval::curve_csv(&adapted.curve))?;
    let last = adapted.models.last().expect("adaptation keeps the initial model");
    out.text("adapted.json", &(last.to_json()? + "\n"))?;
    for r in stage_eval_random(cfg, last, stats)? {
        out.report(&format!("random_load_{:.2}", r.load), &r)?;
    }
    for (kind, r) in ["line", "semicircle"].iter().zip(stage_eval_traj(cfg, last, stats)?) {
        out.report(&format!("traj_{kind}"), &r)?;
    }
    Ok(())
}

/// Simulation data, MAML training, adaptation on the virtual-real plant,
/// evaluation.
pub fn run_sim2real(cfg: &ExperimentConfig, dir: &Path, exec: Exec) -> Result<Manifest> {
    cfg.validate()?;
    let mut out = Outputs::create(dir)?;
    out.text("config.json", &(cfg.to_json()? + "\n"))?;
    let sim = load_or(&cfg.sim_data, || stage_gen_sim(cfg, exec))?;
    out.dataset("sim.jsonl", &sim)?;
    let (params, log) = stage_train_maml(cfg, &sim, exec)?;
    out.text("maml.json", &(params.to_json()? + "\n"))?;
    out.log("maml_log.csv", &log.to_csv())?;
    adapt_and_evaluate(cfg, &mut out, &params, &sim.normalization)?;
    out.finish("sim2real", cfg)
}

/// Protocol data on the virtual-real plant, augmentation, CGAN training and
/// sampling, MAML on real plus generated data, adaptation, evaluation.
pub fn run_cgan(cfg: &ExperimentConfig, dir: &Path, exec: Exec) -> Result<Manifest> {
    cfg.validate()?;
    let mut out = Outputs::create(dir)?;
    out.text("config.json", &(cfg.to_json()? + "\n"))?;
    let real = load_or(&cfg.real_data, || stage_gen_real(cfg, exec))?;
    out.dataset("real.jsonl", &real)?;
    let aug = stage_augment(cfg, &real)?;
    out.dataset("augmented.jsonl", &aug)?;
    let (pair, gan_log) = stage_train_cgan(cfg, &aug)?;
    out.text("cgan.json", &(pair.to_json()? + "\n"))?;
    out.text("cgan_log.csv", &gan_log.to_csv())?;
    let fake = stage_gen_fake(cfg, &pair, &real.loads(), exec)?;
    out.dataset("fake.jsonl", &fake)?;
    let mut merged = real.clone();
    merged.samples.extend_from_slice(&fake.samples);
    merged.provenance = Provenance::Cgan;
    let (params, log) = stage_train_maml(cfg, &merged, exec)?;
    out.text("maml.json", &(params.to_json()? + "\n"))?;
    out.log("maml_log.csv", &log.to_csv())?;
    adapt_and_evaluate(cfg, &mut out, &params, &real.normalization)?;
    out.finish("cgan", cfg)
}
