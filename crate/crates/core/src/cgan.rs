//! Conditional GAN over transition samples, the encoder/tip jitter
//! augmentation used on real data, and a plant check for synthetic samples.
//!
//! The adversarial trainer works on plain rows plus one condition scalar, so
//! it can be exercised on toy distributions. For controller data a row is a
//! normalized [`Sample`] without its load, `(p_next, a_curr, p_curr, a_next)`,
//! and the condition is the normalized load.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Normalizer, Provenance, Sample};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::grad::{backward, forward, predict};
use crate::linalg::Mat;
use crate::mlp::{bce_loss, Activation, AdamState, MlpParams};
use crate::plant::{counts_to_meters, encoder_counts, Actuation, PlantConfig, COUNTS_PER_METER};

/// Width of one sample row: `3 + 4 + 3 + 4`.
pub const SAMPLE_WIDTH: usize = 14;

const GEN_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub latent_dim: usize,
    /// Hidden ReLU widths, shared by both networks.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub batch_size: usize,
    pub d_steps: usize,
    pub g_steps: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 50,
            hidden: vec![256, 256],
            epochs: 200,
            lr: 2e-4,
            adam_beta1: 0.5,
            batch_size: 64,
            d_steps: 1,
            g_steps: 1,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("latent_dim", self.latent_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("d_steps", self.d_steps),
            ("g_steps", self.g_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("gan {name} must be >= 1")));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("gan hidden widths must be nonempty and >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("gan lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(Error::Config("gan adam_beta1 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator and discriminator. The condition is appended as the last input
/// column of both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanPair {
    pub config: GanConfig,
    pub generator: MlpParams,
    pub discriminator: MlpParams,
    pub trained: bool,
    /// Smallest and largest condition value seen in training.
    pub condition_range: Option<[f64; 2]>,
    pub normalization: Normalizer,
    /// Largest tip distance from the base in the training samples; generated
    /// positions are pulled back inside it.
    #[serde(default)]
    pub max_radius: Option<f64>,
}

impl GanPair {
    pub fn new(sample_width: usize, output: Activation, config: GanConfig) -> Result<Self> {
        config.validate()?;
        let mut gw = vec![config.latent_dim + 1];
        gw.extend(&config.hidden);
        gw.push(sample_width);
        let mut dw = vec![sample_width + 1];
        dw.extend(&config.hidden);
        dw.push(1);
        Ok(GanPair {
            generator: MlpParams::init(&gw, output, config.seed)?,
            discriminator: MlpParams::init(&dw, Activation::Sigmoid, !config.seed)?,
            config,
            trained: false,
            condition_range: None,
            normalization: Normalizer::default(),
            max_radius: None,
        })
    }

    /// Pair shaped for controller samples: tanh generator output in
    /// normalized units.
    pub fn for_samples(config: GanConfig) -> Result<Self> {
        Self::new(SAMPLE_WIDTH, Activation::Tanh, config)
    }

    pub fn sample_width(&self) -> usize {
        self.generator.output_width()
    }

    /// One generated row per condition value.
    pub fn generate_rows(&self, cond: &[f64], seed: u64) -> Result<Mat> {
        self.require_trained()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        predict(&self.generator, &self.latent_input(cond, &mut rng))
    }

    /// Discriminator probabilities that `rows` are real under `cond`.
    pub fn discriminate(&self, rows: &Mat, cond: &[f64]) -> Result<Vec<f64>> {
        check_dim("discriminator rows", self.sample_width(), rows.cols())?;
        Ok(predict(&self.discriminator, &append_column(rows, cond)?)?.into_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let pair: GanPair = serde_json::from_str(s)?;
        pair.config.validate()?;
        check_dim("generator input", pair.config.latent_dim + 1, pair.generator.input_width())?;
        check_dim("discriminator input", pair.sample_width() + 1, pair.discriminator.input_width())?;
        check_dim("discriminator output", 1, pair.discriminator.output_width())?;
        Ok(pair)
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State("gan pair has not been trained".into()))
        }
    }

    fn latent_input(&self, cond: &[f64], rng: &mut ChaCha8Rng) -> Mat {
        let k = self.config.latent_dim;
        Mat::from_fn(cond.len(), k + 1, |r, c| {
            if c == k {
                cond[r]
            } else {
                rng.sample(StandardNormal)
            }
        })
    }
}

fn append_column(rows: &Mat, col: &[f64]) -> Result<Mat> {
    check_dim("condition column", rows.rows(), col.len())?;
    let w = rows.cols();
    Ok(Mat::from_fn(rows.rows(), w + 1, |r, c| {
        if c == w {
            col[r]
        } else {
            rows.get(r, c)
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GanLogRow {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanLog {
    pub rows: Vec<GanLogRow>,
}

impl GanLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,d_loss,g_loss,d_real,d_fake\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.d_loss, r.g_loss, r.d_real, r.d_fake
            ));
        }
        out
    }
}

/// Adversarial training on raw rows with one condition value per row.
///
/// Each minibatch takes `d_steps` discriminator updates on the balanced
/// real/fake BCE, then `g_steps` generator updates on the non-saturating
/// loss `−log D(G(z, c), c)`. Fakes reuse the real rows' conditions.
pub fn gan_train_rows(rows: &Mat, cond: &[f64], mut pair: GanPair) -> Result<(GanPair, GanLog)> {
    let n = rows.rows();
    if n == 0 {
        return Err(Error::domain("gan training needs at least one row"));
    }
    check_dim("gan rows", pair.sample_width(), rows.cols())?;
    check_dim("gan conditions", n, cond.len())?;
    let cfg = pair.config.clone();
    cfg.validate()?;
    let width = pair.sample_width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam_g = AdamState::new(&pair.generator, cfg.lr);
    let mut adam_d = AdamState::new(&pair.discriminator, cfg.lr);
    adam_g.beta1 = cfg.adam_beta1;
    adam_d.beta1 = cfg.adam_beta1;
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = GanLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 4];
        let mut seen = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let real = Mat::from_fn(chunk.len(), width + 1, |r, c| {
                if c == width {
                    cond[chunk[r]]
                } else {
                    rows.get(chunk[r], c)
                }
            });
            let c: Vec<f64> = chunk.iter().map(|&i| cond[i]).collect();
            let w = chunk.len() as f64;

            for _ in 0..cfg.d_steps {
                let fake = predict(&pair.generator, &pair.latent_input(&c, &mut rng))?;
                let (pr, tape_r) = forward(&pair.discriminator, &real)?;
                let (pf, tape_f) = forward(&pair.discriminator, &append_column(&fake, &c)?)?;
                let (lr_, mut cot_r) = bce_loss(&pr, 1.0);
                let (lf, mut cot_f) = bce_loss(&pf, 0.0);
                cot_r.scale(0.5);
                cot_f.scale(0.5);
                let (mut grad, _) = backward(&pair.discriminator, &tape_r, &cot_r)?;
                grad.axpy(1.0, &backward(&pair.discriminator, &tape_f, &cot_f)?.0)?;
                adam_d.step_in_place(&mut pair.discriminator, &grad)?;
                acc[0] += w * 0.5 * (lr_ + lf) / cfg.d_steps as f64;
                acc[2] += w * mean(pr.as_slice()) / cfg.d_steps as f64;
                acc[3] += w * mean(pf.as_slice()) / cfg.d_steps as f64;
            }

            for _ in 0..cfg.g_steps {
                let (fake, tape_g) = forward(&pair.generator, &pair.latent_input(&c, &mut rng))?;
                let (pf, tape_f) = forward(&pair.discriminator, &append_column(&fake, &c)?)?;
                let (lg, cot) = bce_loss(&pf, 1.0);
                let (_, dx) = backward(&pair.discriminator, &tape_f, &cot)?;
                let d_fake = Mat::from_fn(dx.rows(), width, |r, c| dx.get(r, c));
                let (grad, _) = backward(&pair.generator, &tape_g, &d_fake)?;
                adam_g.step_in_place(&mut pair.generator, &grad)?;
                acc[1] += w * lg / cfg.g_steps as f64;
            }
            seen += w;
        }
        log.rows.push(GanLogRow {
            epoch,
            d_loss: acc[0] / seen,
            g_loss: acc[1] / seen,
            d_real: acc[2] / seen,
            d_fake: acc[3] / seen,
        });
    }

    let (lo, hi) = cond
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    pair.condition_range = Some(match pair.condition_range {
        Some([a, b]) => [a.min(lo), b.max(hi)],
        None => [lo, hi],
    });
    pair.trained = true;
    Ok((pair, log))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Normalized sample rows and normalized load conditions.
pub fn sample_rows(samples: &[Sample], stats: &Normalizer) -> Result<(Mat, Vec<f64>)> {
    let mut data = Vec::with_capacity(samples.len() * SAMPLE_WIDTH);
    let mut cond = Vec::with_capacity(samples.len());
    for s in samples {
        let (x, y) = stats.encode_sample(s)?;
        data.extend_from_slice(&x[..10]);
        data.extend_from_slice(&y);
        cond.push(x[10]);
    }
    Ok((Mat::from_vec(samples.len(), SAMPLE_WIDTH, data)?, cond))
}

/// Trains a fresh sample-shaped pair on `data`.
pub fn gan_train(data: &Dataset, cfg: &GanConfig) -> Result<(GanPair, GanLog)> {
    let mut pair = GanPair::for_samples(cfg.clone())?;
    pair.normalization = data.normalization;
    pair.max_radius = data
        .samples
        .iter()
        .flat_map(|s| [norm3(&s.p_next), norm3(&s.p_curr)])
        .reduce(f64::max);
    let (rows, cond) = sample_rows(&data.samples, &data.normalization)?;
    gan_train_rows(&rows, &cond, pair)
}

/// Draws `n` synthetic samples, cycling through `loads`.
///
/// Rows are produced in chunks with one RNG stream per chunk, so the result
/// depends only on `(pair, n, loads, seed)`.
pub fn gan_generate(pair: &GanPair, n: usize, loads: &[f64], seed: u64, exec: Exec) -> Result<Dataset> {
    pair.require_trained()?;
    check_dim("generator output", SAMPLE_WIDTH, pair.sample_width())?;
    if n == 0 {
        return Ok(Dataset::new(Vec::new(), Provenance::Cgan, seed));
    }
    if loads.is_empty() {
        return Err(Error::domain("gan_generate needs at least one load"));
    }
    let stats = pair.normalization;
    let max_radius = pair.max_radius.unwrap_or(f64::INFINITY);
    let range = pair.condition_range.unwrap_or([-1.0, 1.0]);
    let mut cond_of = Vec::with_capacity(loads.len());
    for &load in loads {
        let c = stats.encode_load(load)?;
        if c < range[0] - 1e-12 || c > range[1] + 1e-12 {
            return Err(Error::domain(format!(
                "load {load} outside the trained condition range [{}, {}]",
                stats.decode_load(range[0]),
                stats.decode_load(range[1])
            )));
        }
        cond_of.push(c);
    }
    let chunks = n.div_ceil(GEN_CHUNK);
    let parts = exec.map_indexed(chunks, |k| -> Result<Vec<Sample>> {
        let start = k * GEN_CHUNK;
        let idx: Vec<usize> = (start..n.min(start + GEN_CHUNK)).collect();
        let cond: Vec<f64> = idx.iter().map(|&i| cond_of[i % loads.len()]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let rows = predict(&pair.generator, &pair.latent_input(&cond, &mut rng))?;
        Ok(idx
            .iter()
            .enumerate()
            .map(|(r, &i)| decode_row(&stats, max_radius, rows.row(r), loads[i % loads.len()]))
            .collect())
    });
    let mut samples = Vec::with_capacity(n);
    for part in parts {
        samples.extend(part?);
    }
    let mut ds = Dataset::new(samples, Provenance::Cgan, seed);
    ds.normalization = stats;
    Ok(ds)
}

fn norm3(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn clamp_radius(p: [f64; 3], max_radius: f64) -> [f64; 3] {
    let r = norm3(&p);
    if r > max_radius {
        p.map(|v| v * max_radius / r)
    } else {
        p
    }
}

/// Physical sample from a generated row, clamped into the normalization box
/// and the training workspace.
fn decode_row(stats: &Normalizer, max_radius: f64, row: &[f64], load: f64) -> Sample {
    let u: Vec<f64> = row.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Sample {
        p_next: clamp_radius(stats.decode_position(&u[0..3]), max_radius),
        a_curr: stats.decode_actuation(&u[3..7]),
        p_curr: clamp_radius(stats.decode_position(&u[7..10]), max_radius),
        load,
        a_next: stats.decode_actuation(&u[10..14]),
    }
}

/// Jitter augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    /// Output size as a multiple of the input, original included.
    pub factor: usize,
    /// Half-width of the uniform encoder jitter, in counts.
    pub encoder_counts: i64,
    /// Half-width of the uniform per-axis tip jitter, in metres.
    pub tip: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            factor: 6,
            encoder_counts: 50_000,
            tip: 0.01,
        }
    }
}

/// Emits every sample followed by `factor − 1` jittered copies. Actuations
/// are jittered in encoder counts and clamped to the stroke; positions are
/// jittered per axis and clamped to the normalization box.
pub fn augment(real: &Dataset, jitter: &Jitter, seed: u64) -> Result<Dataset> {
    if jitter.factor == 0 {
        return Err(Error::domain("augmentation factor must be >= 1"));
    }
    if jitter.encoder_counts < 0 || !(jitter.tip >= 0.0) {
        return Err(Error::domain("jitter widths must be >= 0"));
    }
    let stats = real.normalization;
    let a_max = stats.actuation.hi;
    let max_counts = (a_max * COUNTS_PER_METER).round() as i64;
    let pos = stats.position;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter_a = |a: &Actuation, rng: &mut ChaCha8Rng| -> Result<Actuation> {
        let mut counts = encoder_counts(a, a_max)?;
        for c in &mut counts {
            *c = (*c + rng.gen_range(-jitter.encoder_counts..=jitter.encoder_counts))
                .clamp(0, max_counts);
        }
        Ok(counts_to_meters(&counts).map(|v| v.min(a_max)))
    };
    let jitter_p = |p: &[f64; 3], rng: &mut ChaCha8Rng| -> [f64; 3] {
        p.map(|v| (v + rng.gen_range(-jitter.tip..=jitter.tip)).clamp(pos.lo, pos.hi))
    };
    let mut out = Vec::with_capacity(real.len() * jitter.factor);
    for s in &real.samples {
        out.push(*s);
        for _ in 1..jitter.factor {
            out.push(Sample {
                p_next: jitter_p(&s.p_next, &mut rng),
                a_curr: jitter_a(&s.a_curr, &mut rng)?,
                p_curr: jitter_p(&s.p_curr, &mut rng),
                load: s.load,
                a_next: jitter_a(&s.a_next, &mut rng)?,
            });
        }
    }
    let mut ds = Dataset::new(out, Provenance::Augmented, seed);
    ds.normalization = stats;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub mean: f64,
    pub std: f64,
    pub probes: usize,
}

/// Executes `a_next` of `n_probe` evenly strided samples on the noise-free
/// plant and compares the reached tip with the claimed `p_next`.
pub fn fidelity_score(fake: &Dataset, plant: &PlantConfig, n_probe: usize) -> Result<Fidelity> {
    if n_probe == 0 || n_probe > fake.len() {
        return Err(Error::domain(format!(
            "n_probe = {n_probe} must lie in [1, {}]",
            fake.len()
        )));
    }
    let mut errs = Vec::with_capacity(n_probe);
    for i in 0..n_probe {
        let s = &fake.samples[i * fake.len() / n_probe];
        let reached = plant.forward(&s.a_next, s.load)?;
        errs.push(crate::plant::dist3(&reached.p, &s.p_next));
    }
    let m = mean(&errs);
    let var = errs.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / errs.len() as f64;
    Ok(Fidelity {
        mean: m,
        std: var.sqrt(),
        probes: n_probe,
    })
}
