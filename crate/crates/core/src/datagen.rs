//! Controller training data: generation on a plant, normalization, splits
//! and the JSON Lines on-disk format.
//!
//! A [`Sample`] is one transition `(p_next, a_curr, p_curr, load) → a_next`
//! in physical units. Networks see it through [`Normalizer`], which maps
//! every field onto `[-1, 1]` using fixed physical bounds rather than data
//! statistics, so simulated, measured and synthetic datasets share one input
//! space.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Mat;
use crate::plant::{Actuation, PlantConfig};

pub const INPUT_WIDTH: usize = 11;
pub const OUTPUT_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub p_next: [f64; 3],
    pub a_curr: Actuation,
    pub p_curr: [f64; 3],
    pub load: f64,
    pub a_next: Actuation,
}

impl Sample {
    /// Bit-exact identity of the sample, for leakage checks.
    pub fn key(&self) -> [u64; 15] {
        let mut k = [0u64; 15];
        let vals = self
            .p_next
            .iter()
            .chain(&self.a_curr)
            .chain(&self.p_curr)
            .chain(std::iter::once(&self.load))
            .chain(&self.a_next);
        for (slot, v) in k.iter_mut().zip(vals) {
            *slot = v.to_bits();
        }
        k
    }

    /// Checks stroke, load and workspace invariants.
    pub fn validate(&self, max_stroke: f64, workspace: f64) -> Result<()> {
        for (name, a) in [("a_curr", &self.a_curr), ("a_next", &self.a_next)] {
            if let Some(i) = a.iter().position(|v| !(0.0..=max_stroke).contains(v)) {
                return Err(Error::domain(format!(
                    "{name}[{i}] = {} outside [0, {max_stroke}]",
                    a[i]
                )));
            }
        }
        if !(self.load >= 0.0) {
            return Err(Error::domain(format!("load {} must be >= 0", self.load)));
        }
        for (name, p) in [("p_next", &self.p_next), ("p_curr", &self.p_curr)] {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if !(r <= workspace) {
                return Err(Error::domain(format!(
                    "{name} at distance {r} exceeds workspace bound {workspace}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Sim,
    VirtualReal,
    Cgan,
    Augmented,
}

/// Closed interval mapped affinely onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    fn encode(&self, field: &str, v: f64) -> Result<f64> {
        if !(self.lo..=self.hi).contains(&v) {
            return Err(Error::domain(format!(
                "{field} = {v} outside normalization bounds [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(self.encode_unchecked(v))
    }

    fn encode_unchecked(&self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    fn decode(&self, u: f64) -> f64 {
        self.lo + (u + 1.0) * 0.5 * (self.hi - self.lo)
    }
}

/// Fixed physical normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub position: Bounds,
    pub actuation: Bounds,
    pub load: Bounds,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            position: Bounds { lo: -0.8, hi: 0.8 },
            actuation: Bounds { lo: 0.0, hi: 0.25 },
            load: Bounds { lo: 0.0, hi: 1.0 },
        }
    }
}

impl Normalizer {
    /// Network input `(p_next, a_curr, p_curr, load)` in normalized units.
    pub fn encode_input(
        &self,
        p_next: &[f64; 3],
        a_curr: &Actuation,
        p_curr: &[f64; 3],
        load: f64,
    ) -> Result<[f64; INPUT_WIDTH]> {
        let mut x = [0.0; INPUT_WIDTH];
        for i in 0..3 {
            x[i] = self.position.encode("p_next", p_next[i])?;
            x[7 + i] = self.position.encode("p_curr", p_curr[i])?;
        }
        for i in 0..4 {
            x[3 + i] = self.actuation.encode("a_curr", a_curr[i])?;
        }
        x[10] = self.load.encode("load", load)?;
        Ok(x)
    }

    pub fn encode_actuation(&self, field: &str, a: &Actuation) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = self.actuation.encode(field, a[i])?;
        }
        Ok(out)
    }

    pub fn decode_actuation(&self, u: &[f64]) -> Actuation {
        std::array::from_fn(|i| self.actuation.decode(u[i]))
    }

    pub fn encode_position(&self, field: &str, p: &[f64; 3]) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.position.encode(field, p[i])?;
        }
        Ok(out)
    }

    pub fn decode_position(&self, u: &[f64]) -> [f64; 3] {
        std::array::from_fn(|i| self.position.decode(u[i]))
    }

    pub fn encode_load(&self, load: f64) -> Result<f64> {
        self.load.encode("load", load)
    }

    /// Maps a load onto the normalized axis without a range check.
    pub fn encode_load_unchecked(&self, load: f64) -> f64 {
        self.load.encode_unchecked(load)
    }

    pub fn decode_load(&self, u: f64) -> f64 {
        self.load.decode(u)
    }

    pub fn encode_sample(&self, s: &Sample) -> Result<([f64; INPUT_WIDTH], [f64; OUTPUT_WIDTH])> {
        Ok((
            self.encode_input(&s.p_next, &s.a_curr, &s.p_curr, s.load)?,
            self.encode_actuation("a_next", &s.a_next)?,
        ))
    }

    pub fn decode_sample(&self, x: &[f64], y: &[f64]) -> Sample {
        Sample {
            p_next: self.decode_position(&x[0..3]),
            a_curr: self.decode_actuation(&x[3..7]),
            p_curr: self.decode_position(&x[7..10]),
            load: self.load.decode(x[10]),
            a_next: self.decode_actuation(y),
        }
    }
}

/// Normalized design matrices ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub x: Mat,
    pub y: Mat,
    pub stats: Normalizer,
}

/// Split ratios (train, validation, test).
pub type Ratios = [f64; 3];

pub const DEFAULT_SPLIT: Ratios = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub normalization: Normalizer,
    pub provenance: Provenance,
    pub rng_seed: u64,
    pub split_ratios: Option<Ratios>,
}

/// Sidecar metadata written next to a JSONL dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub provenance: Provenance,
    pub rng_seed: u64,
    pub count: usize,
    pub normalization: Normalizer,
    pub split_ratios: Option<Ratios>,
    pub loads: Vec<f64>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, provenance: Provenance, rng_seed: u64) -> Self {
        Dataset {
            samples,
            normalization: Normalizer::default(),
            provenance,
            rng_seed,
            split_ratios: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct load values in first-seen order.
    pub fn loads(&self) -> Vec<f64> {
        let mut seen: Vec<f64> = Vec::new();
        for s in &self.samples {
            if !seen.iter().any(|&l| l == s.load) {
                seen.push(s.load);
            }
        }
        seen
    }

    pub fn at_load(&self, load: f64) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.load == load)
            .copied()
            .collect()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            provenance: self.provenance,
            rng_seed: self.rng_seed,
            count: self.samples.len(),
            normalization: self.normalization,
            split_ratios: self.split_ratios,
            loads: self.loads(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::with_capacity(self.samples.len() * 200);
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `path` (JSONL) and its sidecar header (see [`header_path`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let hp = header_path(path);
        let header = serde_json::to_string_pretty(&self.header())?;
        std::fs::write(&hp, header + "\n").map_err(|e| Error::io(&hp, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let header: DatasetHeader = {
            let s = std::fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
            serde_json::from_str(&s)?
        };
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::with_capacity(header.count);
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line)?);
        }
        if samples.len() != header.count {
            return Err(Error::domain(format!(
                "{}: header declares {} samples, file has {}",
                path.display(),
                header.count,
                samples.len()
            )));
        }
        Ok(Dataset {
            samples,
            normalization: header.normalization,
            provenance: header.provenance,
            rng_seed: header.rng_seed,
            split_ratios: header.split_ratios,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "p_next_x,p_next_y,p_next_z,a_curr_0,a_curr_1,a_curr_2,a_curr_3,\
             p_curr_x,p_curr_y,p_curr_z,load,a_next_0,a_next_1,a_next_2,a_next_3\n",
        );
        for s in &self.samples {
            let vals: Vec<String> = s
                .p_next
                .iter()
                .chain(&s.a_curr)
                .chain(&s.p_curr)
                .chain(std::iter::once(&s.load))
                .chain(&s.a_next)
                .map(|v| v.to_string())
                .collect();
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }
}

/// `data.jsonl` → `data.header.json`
pub fn header_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.header.json"))
}

/// Normalizes every sample; fails on the first field outside its bounds.
pub fn normalize(ds: &Dataset) -> Result<Normalized> {
    normalize_samples(&ds.samples, &ds.normalization)
}

pub fn normalize_samples(samples: &[Sample], stats: &Normalizer) -> Result<Normalized> {
    if samples.is_empty() {
        return Err(Error::domain("cannot normalize an empty dataset"));
    }
    let mut x = Mat::zeros(samples.len(), INPUT_WIDTH);
    let mut y = Mat::zeros(samples.len(), OUTPUT_WIDTH);
    for (i, s) in samples.iter().enumerate() {
        let (xi, yi) = stats.encode_sample(s)?;
        x.row_mut(i).copy_from_slice(&xi);
        y.row_mut(i).copy_from_slice(&yi);
    }
    Ok(Normalized {
        x,
        y,
        stats: *stats,
    })
}

pub fn denormalize(n: &Normalized) -> Vec<Sample> {
    (0..n.x.rows())
        .map(|i| n.stats.decode_sample(n.x.row(i), n.y.row(i)))
        .collect()
}

/// Seeds an independent stream per load index.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn random_actuation<R: Rng + ?Sized>(rng: &mut R, a_max: f64) -> Actuation {
    std::array::from_fn(|_| rng.gen_range(0.0..=a_max))
}

/// Loads `0, step, 2 step, …, max` computed without accumulating rounding.
pub fn load_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

/// Random-walk sampling on a simulated plant.
///
/// For every load an actuation sequence is drawn; during the first
/// `constraint_fraction` of each load's samples every channel moves by less
/// than 10% of the stroke per step, afterwards each step is uniform over the
/// whole stroke.
pub fn gen_sim(
    config: &PlantConfig,
    n_per_load: usize,
    loads: &[f64],
    constraint_fraction: f64,
    seed: u64,
    exec: Exec,
) -> Result<Dataset> {
    if loads.is_empty() || n_per_load == 0 {
        return Err(Error::domain("gen_sim needs at least one load and sample"));
    }
    if !(0.0..=1.0).contains(&constraint_fraction) {
        return Err(Error::domain("constraint_fraction must lie in [0, 1]"));
    }
    config.validate()?;
    let a_max = config.max_stroke();
    let constrained = (constraint_fraction * n_per_load as f64).ceil() as usize;
    let per_load = exec.map_indexed(loads.len(), |li| -> Result<Vec<Sample>> {
        let load = loads[li];
        let mut rng = stream_rng(seed, li as u64);
        let mut a_curr = random_actuation(&mut rng, a_max);
        let mut p_curr = config.measure(&a_curr, load, &mut rng)?.p;
        let max_step = 0.1 * a_max;
        let mut out = Vec::with_capacity(n_per_load);
        for j in 0..n_per_load {
            let a_next: Actuation = if j < constrained {
                std::array::from_fn(|i| {
                    (a_curr[i] + rng.gen_range(-max_step..max_step)).clamp(0.0, a_max)
                })
            } else {
                random_actuation(&mut rng, a_max)
            };
            let p_next = config
                .measure(&a_next, load, &mut rng)
                .map_err(|e| Error::domain(format!("load {load}, sample {j}: {e}")))?
                .p;
            out.push(Sample {
                p_next,
                a_curr,
                p_curr,
                load,
                a_next,
            });
            a_curr = a_next;
            p_curr = p_next;
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(n_per_load * loads.len());
    for chunk in per_load {
        samples.extend(chunk?);
    }
    let provenance = if config.perturbation.is_some() {
        Provenance::VirtualReal
    } else {
        Provenance::Sim
    };
    Ok(Dataset::new(samples, provenance, seed))
}

/// Prototype collection protocol: random waypoints per load, with
/// `interp_points` evenly spaced actuations executed between consecutive
/// waypoints (the segment start excluded).
pub fn gen_protocol_real(
    config: &PlantConfig,
    waypoints_per_load: usize,
    interp_points: usize,
    loads: &[f64],
    seed: u64,
    exec: Exec,
) -> Result<Dataset> {
    if waypoints_per_load < 2 || interp_points < 1 {
        return Err(Error::domain(
            "protocol needs at least 2 waypoints and 1 interpolation point",
        ));
    }
    if loads.is_empty() {
        return Err(Error::domain("protocol needs at least one load"));
    }
    config.validate()?;
    let a_max = config.max_stroke();
    let per_load = exec.map_indexed(loads.len(), |li| -> Result<Vec<Sample>> {
        let load = loads[li];
        let mut rng = stream_rng(seed, li as u64);
        let waypoints: Vec<Actuation> = (0..waypoints_per_load)
            .map(|_| random_actuation(&mut rng, a_max))
            .collect();
        let mut a_curr = waypoints[0];
        let mut p_curr = config.measure(&a_curr, load, &mut rng)?.p;
        let mut out = Vec::with_capacity((waypoints_per_load - 1) * interp_points);
        for seg in waypoints.windows(2) {
            for s in 1..=interp_points {
                let t = s as f64 / interp_points as f64;
                let a_next: Actuation = if s == interp_points {
                    seg[1]
                } else {
                    std::array::from_fn(|i| seg[0][i] + (seg[1][i] - seg[0][i]) * t)
                };
                let p_next = config.measure(&a_next, load, &mut rng)?.p;
                out.push(Sample {
                    p_next,
                    a_curr,
                    p_curr,
                    load,
                    a_next,
                });
                a_curr = a_next;
                p_curr = p_next;
            }
        }
        Ok(out)
    });
    let mut samples = Vec::new();
    for chunk in per_load {
        samples.extend(chunk?);
    }
    Ok(Dataset::new(samples, Provenance::VirtualReal, seed))
}

/// Subset sizes by the largest-remainder method. Ties in the fractional
/// part go to the later subset.
pub fn split_sizes(n: usize, ratios: &Ratios) -> Result<[usize; 3]> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::domain(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let ideal = ratios.map(|r| r * n as f64);
    let mut sizes = ideal.map(|v| (v + 1e-9).floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| ideal[i] - sizes[i] as f64;
    // stable sort by descending fraction, later index first on ties
    order.sort_by(|&a, &b| {
        frac(b)
            .partial_cmp(&frac(a))
            .unwrap()
            .then(b.cmp(&a))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Deterministic shuffled split into (train, validation, test).
pub fn split(ds: &Dataset, ratios: Ratios, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let sizes = split_sizes(ds.len(), &ratios)?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| Dataset {
        samples: idx[range].iter().map(|&i| ds.samples[i]).collect(),
        split_ratios: Some(ratios),
        ..ds.clone()
    };
    let (a, b) = (sizes[0], sizes[0] + sizes[1]);
    Ok((take(0..a), take(a..b), take(b..ds.len())))
}

/// True when no sample appears in more than one of the given sets.
pub fn pairwise_disjoint(sets: &[&Dataset]) -> bool {
    let mut seen = HashSet::new();
    for set in sets {
        let keys: HashSet<_> = set.samples.iter().map(Sample::key).collect();
        if keys.iter().any(|k| seen.contains(k)) {
            return false;
        }
        seen.extend(keys);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_sim() -> Dataset {
        gen_sim(
            &PlantConfig::single_section(),
            50,
            &[0.0, 0.5],
            0.1,
            3,
            Exec::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn sim_counts_and_constraint_phase() {
        let loads = load_grid(1.0, 0.1);
        assert_eq!(loads.len(), 11);
        assert_eq!(loads[3], 0.3);
        let ds = gen_sim(&PlantConfig::single_section(), 100, &loads, 0.1, 1, Exec::default()).unwrap();
        assert_eq!(ds.len(), 1100);
        assert_eq!(ds.provenance, Provenance::Sim);
        for chunk in ds.samples.chunks(100) {
            for s in &chunk[..10] {
                for i in 0..4 {
                    assert!((s.a_next[i] - s.a_curr[i]).abs() <= 0.025);
                }
            }
            // constraint lifted afterwards: some big jumps appear
            assert!(chunk[10..]
                .iter()
                .any(|s| (0..4).any(|i| (s.a_next[i] - s.a_curr[i]).abs() > 0.05)));
        }
    }

    #[test]
    fn sim_labels_replay_exactly() {
        let plant = PlantConfig::single_section();
        let ds = small_sim();
        for s in &ds.samples {
            assert_eq!(plant.forward(&s.a_next, s.load).unwrap().p, s.p_next);
            s.validate(0.25, plant.workspace_bound()).unwrap();
        }
        // chained: each sample starts where the previous ended
        for w in ds.samples[..50].windows(2) {
            assert_eq!(w[1].a_curr, w[0].a_next);
            assert_eq!(w[1].p_curr, w[0].p_next);
        }
    }

    #[test]
    fn generation_is_policy_independent() {
        let plant = PlantConfig::single_section();
        let a = gen_sim(&plant, 40, &[0.0, 0.1, 0.2], 0.1, 9, Exec::Sequential).unwrap();
        let b = gen_sim(&plant, 40, &[0.0, 0.1, 0.2], 0.1, 9, Exec::Parallel).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    }

    #[test]
    fn protocol_counts() {
        let vr = crate::plant::make_virtual_real(&PlantConfig::single_section()).unwrap();
        let loads = load_grid(0.5, 0.05);
        assert_eq!(loads.len(), 11);
        let ds = gen_protocol_real(&vr, 101, 20, &loads[..2], 4, Exec::default()).unwrap();
        assert_eq!(ds.len(), 4000);
        assert_eq!(ds.provenance, Provenance::VirtualReal);
        assert!(gen_protocol_real(&vr, 1, 20, &loads, 4, Exec::default()).is_err());
        assert!(gen_protocol_real(&vr, 5, 0, &loads, 4, Exec::default()).is_err());
    }

    #[test]
    fn protocol_single_interp_visits_waypoints() {
        let plant = PlantConfig::single_section();
        let ds = gen_protocol_real(&plant, 6, 1, &[0.0], 2, Exec::Sequential).unwrap();
        assert_eq!(ds.len(), 5);
        let ds3 = gen_protocol_real(&plant, 6, 3, &[0.0], 2, Exec::Sequential).unwrap();
        // every third interpolated sample lands on the same waypoint
        for (i, s) in ds.samples.iter().enumerate() {
            assert_eq!(s.a_next, ds3.samples[3 * i + 2].a_next);
        }
        // intermediate points are evenly spaced
        let s0 = ds3.samples[0];
        let s1 = ds3.samples[1];
        for c in 0..4 {
            let d1 = s0.a_next[c] - s0.a_curr[c];
            let d2 = s1.a_next[c] - s1.a_curr[c];
            assert!((d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes_follow_largest_remainder() {
        assert_eq!(split_sizes(10_000, &DEFAULT_SPLIT).unwrap(), [7000, 1500, 1500]);
        assert_eq!(split_sizes(10, &DEFAULT_SPLIT).unwrap(), [7, 1, 2]);
        assert_eq!(split_sizes(0, &DEFAULT_SPLIT).unwrap(), [0, 0, 0]);
        assert!(split_sizes(10, &[0.5, 0.5, 0.5]).is_err());
        assert!(split_sizes(10, &[1.2, -0.1, -0.1]).is_err());
    }

    #[test]
    fn split_is_a_disjoint_partition() {
        let ds = small_sim();
        let (tr, va, te) = split(&ds, DEFAULT_SPLIT, 5).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
        assert!(pairwise_disjoint(&[&tr, &va, &te]));
        let mut all: Vec<_> = tr
            .samples
            .iter()
            .chain(&va.samples)
            .chain(&te.samples)
            .map(Sample::key)
            .collect();
        let mut orig: Vec<_> = ds.samples.iter().map(Sample::key).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(split(&ds, DEFAULT_SPLIT, 5).unwrap().0, tr);
        assert_eq!(tr.split_ratios, Some(DEFAULT_SPLIT));
    }

    #[test]
    fn normalization_bounds_and_round_trip() {
        let n = Normalizer::default();
        assert_eq!(n.encode_actuation("a", &[0.25, 0.0, 0.125, 0.25]).unwrap(), [1.0, -1.0, 0.0, 1.0]);
        assert_eq!(n.encode_load(0.0).unwrap(), -1.0);
        let ds = small_sim();
        let norm = normalize(&ds).unwrap();
        assert!(norm.x.max_abs() <= 1.0 && norm.y.max_abs() <= 1.0);
        for (a, b) in denormalize(&norm).iter().zip(&ds.samples) {
            for (u, v) in a.key().iter().zip(b.key()) {
                assert!((f64::from_bits(*u) - f64::from_bits(v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_rejects_out_of_bounds_field() {
        let mut ds = small_sim();
        ds.samples[3].load = 1.5;
        let err = normalize(&ds).unwrap_err();
        assert!(err.to_string().contains("load"), "{err}");
        let mut ds = small_sim();
        ds.samples[0].p_curr[0] = 0.9;
        assert!(normalize(&ds).unwrap_err().to_string().contains("p_curr"));
        assert!(normalize(&Dataset::new(vec![], Provenance::Sim, 0)).is_err());
    }

    #[test]
    fn jsonl_schema_and_round_trip() {
        let ds = small_sim();
        let line = ds.to_jsonl().unwrap().lines().next().unwrap().to_string();
        let keys: Vec<&str> = ["\"p_next\"", "\"a_curr\"", "\"p_curr\"", "\"load\"", "\"a_next\""].to_vec();
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.jsonl");
        ds.save(&path).unwrap();
        assert!(header_path(&path).exists());
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
        assert!(ds.to_csv().lines().count() == ds.len() + 1);
    }
}
