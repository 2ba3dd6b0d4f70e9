//! Closed-loop experiments on a plant: single controller steps, few-shot
//! adaptation, random-point reaching and trajectory tracking.
//!
//! Every run threads `(a_curr, p_curr)` forward from a mid-stroke start pose.
//! `p_curr` is the sensed tip, so noisy plants feed noisy positions back into
//! the controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{random_actuation, Normalizer, Sample};
use crate::error::{Error, Result};
use crate::grad::{mlp_forward, mse_value_and_grad};
use crate::meta::Batch;
use crate::mlp::MlpParams;
use crate::plant::{dist3, Actuation, PlantConfig};

/// Length that relative errors are reported against.
pub const REFERENCE_LENGTH: f64 = 0.77;

/// Actuation commanded before the first target.
pub const START_ACTUATION: Actuation = [0.125; 4];

/// Depth of the plane both canonical trajectories lie in.
pub const TRAJECTORY_Z: f64 = 0.65;

pub const LINE_SPACING: f64 = 0.03;
pub const LINE_POINTS: usize = 20;
pub const SEMICIRCLE_RADIUS: f64 = 0.3;
pub const SEMICIRCLE_POINTS: usize = 19;

/// Anything that proposes the next actuation from
/// `(p_target, a_curr, p_curr, load)`. The output may leave the stroke
/// range; [`step_controller`] clamps it.
pub trait Controller: Sync {
    fn command(&self, target: &[f64; 3], a_curr: &Actuation, p_curr: &[f64; 3], load: f64) -> Result<Actuation>;
}

/// Network controller working in normalized units.
#[derive(Debug, Clone)]
pub struct MlpController<'a> {
    pub params: &'a MlpParams,
    pub stats: Normalizer,
}

impl<'a> MlpController<'a> {
    pub fn new(params: &'a MlpParams, stats: Normalizer) -> Self {
        MlpController { params, stats }
    }
}

impl Controller for MlpController<'_> {
    fn command(&self, target: &[f64; 3], a_curr: &Actuation, p_curr: &[f64; 3], load: f64) -> Result<Actuation> {
        let x = self.stats.encode_input(target, a_curr, p_curr, load)?;
        let (y, _) = mlp_forward(self.params, &x)?;
        Ok(self.stats.decode_actuation(&y))
    }
}

/// Always commands the same actuation.
#[derive(Debug, Clone, Copy)]
pub struct ConstantController(pub Actuation);

impl Controller for ConstantController {
    fn command(&self, _: &[f64; 3], _: &Actuation, _: &[f64; 3], _: f64) -> Result<Actuation> {
        Ok(self.0)
    }
}

/// Numeric inverse of a plant's noise-free kinematics.
///
/// From each of several starts, box-projected Levenberg-Marquardt steps on a
/// finite-difference Jacobian get close, then a pattern search polishes.
/// Besides the coordinate axes the pattern probes the antagonistic
/// differences and the common modes of each tendon pair.
#[derive(Debug, Clone)]
pub struct InverseOracle {
    plant: PlantConfig,
}

const ORACLE_DIRS: [[f64; 4]; 8] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0, -1.0],
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
];

impl InverseOracle {
    pub fn new(plant: &PlantConfig) -> Self {
        InverseOracle {
            plant: plant.clone(),
        }
    }

    /// Best actuation found and its tip distance to `target`.
    pub fn solve(&self, target: &[f64; 3], load: f64, hint: &Actuation) -> Result<(Actuation, f64)> {
        let a_max = self.plant.max_stroke();
        // the hint, mid-stroke, then the 16 points of {¼, ¾}⁴
        let grid = (0..16).map(|m: usize| std::array::from_fn(|i| if m >> i & 1 == 1 { 0.75 * a_max } else { 0.25 * a_max }));
        let starts = [*hint, [0.5 * a_max; 4]].into_iter().chain(grid);
        let mut best: Option<(Actuation, f64)> = None;
        for start in starts {
            let found = self.search(target, load, start.map(|v| v.clamp(0.0, a_max)))?;
            if best.map_or(true, |b| found.1 < b.1) {
                best = Some(found);
            }
            if found.1 < 1e-20 {
                break;
            }
        }
        let (a, sq) = best.expect("at least one start");
        Ok((a, sq.sqrt()))
    }

    fn search(&self, target: &[f64; 3], load: f64, start: Actuation) -> Result<(Actuation, f64)> {
        let a_max = self.plant.max_stroke();
        let residual = |a: &Actuation| -> Result<[f64; 3]> {
            let p = self.plant.forward(a, load)?.p;
            Ok([target[0] - p[0], target[1] - p[1], target[2] - p[2]])
        };
        let cost = |a: &Actuation| -> Result<f64> { Ok(residual(a)?.iter().map(|r| r * r).sum()) };
        let mut a = start;
        let mut fa = cost(&a)?;

        let mut lambda = 1e-3;
        for _ in 0..200 {
            if fa < 1e-20 || lambda > 1e8 {
                break;
            }
            let r = residual(&a)?;
            // columns dp/da_i, one-sided away from the nearer bound
            let mut jac = [[0.0; 4]; 3];
            for i in 0..4 {
                let h = if a[i] + 1e-7 <= a_max { 1e-7 } else { -1e-7 };
                let mut b = a;
                b[i] += h;
                let rb = residual(&b)?;
                for k in 0..3 {
                    jac[k][i] = (r[k] - rb[k]) / h;
                }
            }
            // minimum-norm damped step J^T (J J^T + λ I)^{-1} r
            let mut m = [[0.0; 3]; 3];
            for (k, row) in m.iter_mut().enumerate() {
                for (l, v) in row.iter_mut().enumerate() {
                    *v = (0..4).map(|i| jac[k][i] * jac[l][i]).sum::<f64>() + if k == l { lambda } else { 0.0 };
                }
            }
            let Some(y) = solve3(m, r) else {
                lambda *= 10.0;
                continue;
            };
            let cand: Actuation =
                std::array::from_fn(|i| (a[i] + (0..3).map(|k| jac[k][i] * y[k]).sum::<f64>()).clamp(0.0, a_max));
            let fc = cost(&cand)?;
            if fc < fa {
                a = cand;
                fa = fc;
                lambda = (lambda * 0.3).max(1e-12);
            } else {
                lambda *= 10.0;
            }
        }

        let mut step = 0.25 * a_max;
        while step > 1e-11 && fa > 1e-20 {
            let mut moved = false;
            'dirs: for dir in &ORACLE_DIRS {
                for sign in [1.0, -1.0] {
                    let cand: Actuation =
                        std::array::from_fn(|i| (a[i] + sign * step * dir[i]).clamp(0.0, a_max));
                    let fc = cost(&cand)?;
                    if fc < fa {
                        a = cand;
                        fa = fc;
                        moved = true;
                        break 'dirs;
                    }
                }
            }
            step = if moved { (2.0 * step).min(0.25 * a_max) } else { 0.5 * step };
        }
        Ok((a, fa))
    }
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[piv][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, piv);
        r.swap(c, piv);
        for i in c + 1..3 {
            let f = m[i][c] / m[c][c];
            for j in c..3 {
                m[i][j] -= f * m[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        x[i] = (r[i] - (i + 1..3).map(|j| m[i][j] * x[j]).sum::<f64>()) / m[i][i];
    }
    Some(x)
}

impl Controller for InverseOracle {
    fn command(&self, target: &[f64; 3], a_curr: &Actuation, _: &[f64; 3], load: f64) -> Result<Actuation> {
        Ok(self.solve(target, load, a_curr)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub a_next: Actuation,
    pub p_achieved: [f64; 3],
    pub error: f64,
}

/// Commands one target: the controller output is clamped to the stroke,
/// executed on the (possibly noisy) plant, and scored against the target.
pub fn step_controller<C: Controller + ?Sized, R: Rng + ?Sized>(
    ctrl: &C,
    plant: &PlantConfig,
    target: &[f64; 3],
    a_curr: &Actuation,
    p_curr: &[f64; 3],
    load: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let raw = ctrl.command(target, a_curr, p_curr, load)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("controller produced a non-finite actuation"));
    }
    let a_max = plant.max_stroke();
    let a_next = raw.map(|v| v.clamp(0.0, a_max));
    let p_achieved = plant.measure(&a_next, load, rng)?.p;
    Ok(StepOutcome {
        a_next,
        p_achieved,
        error: dist3(target, &p_achieved),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub index: usize,
    pub target: [f64; 3],
    pub achieved: [f64; 3],
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub plant: String,
    pub load: f64,
    pub rows: Vec<TargetRow>,
    pub mean: f64,
    pub std: f64,
    /// `mean / 0.77`
    pub relative_pct: f64,
    pub curve: Vec<CurveRow>,
}

/// JSON summary: the report without its per-target rows.
#[derive(Serialize)]
struct Summary<'a> {
    model: &'a str,
    plant: &'a str,
    load: f64,
    targets: usize,
    mean: f64,
    std: f64,
    relative_pct: f64,
    curve: &'a [CurveRow],
}

impl EvalReport {
    pub fn from_rows(model: &str, plant: &str, load: f64, rows: Vec<TargetRow>) -> Self {
        let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let (mean, std) = mean_std(&errs);
        EvalReport {
            model: model.to_string(),
            plant: plant.to_string(),
            load,
            rows,
            mean,
            std,
            relative_pct: mean / REFERENCE_LENGTH,
            curve: Vec::new(),
        }
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,target_x,target_y,target_z,achieved_x,achieved_y,achieved_z,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.index, r.target[0], r.target[1], r.target[2], r.achieved[0], r.achieved[1], r.achieved[2], r.error
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Summary {
            model: &self.model,
            plant: &self.plant,
            load: self.load,
            targets: self.rows.len(),
            mean: self.mean,
            std: self.std,
            relative_pct: self.relative_pct,
            curve: &self.curve,
        })?)
    }
}

pub fn curve_csv(curve: &[CurveRow]) -> String {
    let mut out = String::from("step,mean,std\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.step, r.mean, r.std));
    }
    out
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Commands `targets` in order from the start pose.
pub fn run_targets<C: Controller + ?Sized>(
    ctrl: &C,
    plant: &PlantConfig,
    targets: &[[f64; 3]],
    load: f64,
    seed: u64,
) -> Result<Vec<TargetRow>> {
    let mut noise = seeded(seed, 1);
    let mut a_curr = START_ACTUATION.map(|v| v.min(plant.max_stroke()));
    let mut p_curr = plant.measure(&a_curr, load, &mut noise)?.p;
    let mut rows = Vec::with_capacity(targets.len());
    for (index, target) in targets.iter().enumerate() {
        let out = step_controller(ctrl, plant, target, &a_curr, &p_curr, load, &mut noise)?;
        rows.push(TargetRow {
            index,
            target: *target,
            achieved: out.p_achieved,
            error: out.error,
        });
        a_curr = out.a_next;
        p_curr = out.p_achieved;
    }
    Ok(rows)
}

/// Reachable targets: noise-free tips of uniformly random actuations.
pub fn random_targets(plant: &PlantConfig, n: usize, load: f64, seed: u64) -> Result<Vec<[f64; 3]>> {
    let mut rng = seeded(seed, 0);
    (0..n)
        .map(|_| Ok(plant.forward(&random_actuation(&mut rng, plant.max_stroke()), load)?.p))
        .collect()
}

/// Reaching test on `n_points` random reachable targets. Targets and sensor
/// noise depend only on `seed`, so different controllers face the same test.
pub fn random_point_test<C: Controller + ?Sized>(
    ctrl: &C,
    plant: &PlantConfig,
    n_points: usize,
    load: f64,
    seed: u64,
) -> Result<EvalReport> {
    if n_points == 0 {
        return Err(Error::domain("random_point_test needs at least one point"));
    }
    let targets = random_targets(plant, n_points, load, seed)?;
    let rows = run_targets(ctrl, plant, &targets, load, seed)?;
    Ok(EvalReport::from_rows("controller", &plant_label(plant), load, rows))
}

pub fn plant_label(plant: &PlantConfig) -> String {
    let kind = if plant.sections.len() == 1 { "single-section" } else { "two-section" };
    match plant.perturbation {
        Some(_) => format!("{kind}/virtual-real"),
        None => format!("{kind}/sim"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub steps: usize,
    pub samples_per_step: usize,
    /// SGD step size on the summed squared error.
    pub alpha: f64,
    pub load: f64,
    /// Random targets scored after each step.
    pub eval_points: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            steps: 5,
            samples_per_step: 50,
            alpha: 0.01,
            load: 0.0,
            eval_points: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adaptation {
    /// `steps + 1` models, the unadapted one first.
    pub models: Vec<MlpParams>,
    pub curve: Vec<CurveRow>,
    /// Random-point report of the last model, carrying the whole curve.
    pub report: EvalReport,
}

/// Transitions from uniformly random actuations on `plant`, as a controller
/// would record them while exploring.
pub fn collect_transitions(plant: &PlantConfig, n: usize, load: f64, seed: u64, stream: u64) -> Result<Vec<Sample>> {
    let mut rng = seeded(seed, stream);
    let a_max = plant.max_stroke();
    let mut a_curr = START_ACTUATION.map(|v| v.min(a_max));
    let mut p_curr = plant.measure(&a_curr, load, &mut rng)?.p;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a_next = random_actuation(&mut rng, a_max);
        let p_next = plant.measure(&a_next, load, &mut rng)?.p;
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
}

/// Few-shot adaptation on the plant: each step gathers fresh transitions
/// and takes one plain gradient step on them. The random-point error is
/// measured before the first step and after every step on one fixed test.
pub fn adapt(params: &MlpParams, stats: &Normalizer, plant: &PlantConfig, cfg: &AdaptConfig) -> Result<Adaptation> {
    if !(cfg.alpha >= 0.0) || cfg.samples_per_step == 0 || cfg.eval_points == 0 {
        return Err(Error::Config(
            "adaptation needs alpha >= 0, samples_per_step >= 1 and eval_points >= 1".into(),
        ));
    }
    let eval_seed = cfg.seed ^ 0x5eed_0f_e7a1;
    let mut models = vec![params.clone()];
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    let mut last = random_point_test(&MlpController::new(params, *stats), plant, cfg.eval_points, cfg.load, eval_seed)?;
    curve.push(CurveRow {
        step: 0,
        mean: last.mean,
        std: last.std,
    });
    let mut p = params.clone();
    for step in 1..=cfg.steps {
        let samples = collect_transitions(plant, cfg.samples_per_step, cfg.load, cfg.seed, step as u64)?;
        let batch = Batch::from_samples(&samples, stats)?;
        let (_, g) = mse_value_and_grad(&p, &batch.x, &batch.y)?;
        p.axpy(-cfg.alpha, &g)?;
        last = random_point_test(&MlpController::new(&p, *stats), plant, cfg.eval_points, cfg.load, eval_seed)?;
        curve.push(CurveRow {
            step,
            mean: last.mean,
            std: last.std,
        });
        models.push(p.clone());
    }
    last.model = format!("adapted-{}", cfg.steps);
    last.curve = curve.clone();
    Ok(Adaptation {
        models,
        curve,
        report: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Line,
    Semicircle,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub points: Vec<[f64; 3]>,
    pub load: f64,
}

impl TrajectorySpec {
    pub fn validate(&self, plant: &PlantConfig) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::domain("trajectory needs at least two points"));
        }
        let bound = plant.workspace_bound();
        if let Some(i) = self.points.iter().position(|p| !(dist3(p, &[0.0; 3]) <= bound)) {
            return Err(Error::domain(format!(
                "trajectory point {i} lies outside the workspace bound {bound}"
            )));
        }
        if !(self.load >= 0.0) {
            return Err(Error::domain("trajectory load must be >= 0"));
        }
        Ok(())
    }
}

/// The canonical line and semicircle, both in the plane `z = 0.65`.
///
/// The line runs along x through the backbone axis, 19 intervals of 3 cm
/// centred on the axis. The semicircle has radius 0.3 m about the axis and
/// is sampled every 10° from +x to −x through +y.
pub fn make_specs(load: f64) -> [TrajectorySpec; 2] {
    let half = 0.5 * LINE_SPACING * (LINE_POINTS - 1) as f64;
    let line = (0..LINE_POINTS)
        .map(|i| [-half + LINE_SPACING * i as f64, 0.0, TRAJECTORY_Z])
        .collect();
    let arc = (0..SEMICIRCLE_POINTS)
        .map(|i| {
            let t = (10.0 * i as f64).to_radians();
            [SEMICIRCLE_RADIUS * t.cos(), SEMICIRCLE_RADIUS * t.sin(), TRAJECTORY_Z]
        })
        .collect();
    [
        TrajectorySpec {
            kind: TrajectoryKind::Line,
            points: line,
            load,
        },
        TrajectorySpec {
            kind: TrajectoryKind::Semicircle,
            points: arc,
            load,
        },
    ]
}

/// Tracks the control points in order; the rows double as the achieved path.
pub fn follow_trajectory<C: Controller + ?Sized>(
    ctrl: &C,
    plant: &PlantConfig,
    spec: &TrajectorySpec,
    seed: u64,
) -> Result<EvalReport> {
    spec.validate(plant)?;
    let rows = run_targets(ctrl, plant, &spec.points, spec.load, seed)?;
    Ok(EvalReport::from_rows("controller", &plant_label(plant), spec.load, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, Layer};
    use crate::linalg::Mat;
    use crate::plant::make_virtual_real;

    #[test]
    fn constant_controller_error_is_distance_to_fixed_tip() {
        let plant = PlantConfig::single_section();
        let a = [0.1, 0.0, 0.02, 0.05];
        let tip = plant.forward(&a, 0.3).unwrap().p;
        let target = [0.1, -0.2, 0.5];
        let mut rng = seeded(0, 0);
        let out = step_controller(&ConstantController(a), &plant, &target, &[0.0; 4], &[0.0; 3], 0.3, &mut rng).unwrap();
        assert_eq!(out.error, dist3(&tip, &target));
    }

    #[test]
    fn outputs_are_clamped_to_the_stroke() {
        let plant = PlantConfig::single_section();
        let mut rng = seeded(0, 0);
        let out = step_controller(
            &ConstantController([0.30, -0.1, 0.1, 0.25]),
            &plant,
            &[0.0, 0.0, 0.7],
            &[0.0; 4],
            &[0.0; 3],
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.a_next, [0.25, 0.0, 0.1, 0.25]);
    }

    #[test]
    fn network_controller_rejects_out_of_bound_inputs() {
        let p = MlpParams::controller(0);
        let c = MlpController::new(&p, Normalizer::default());
        let err = c.command(&[0.0, 0.0, 0.9], &[0.0; 4], &[0.0; 3], 0.0).unwrap_err();
        assert!(err.to_string().contains("p_next"));
    }

    #[test]
    fn oracle_inverts_noise_free_plant() {
        let plant = make_virtual_real(&PlantConfig::single_section()).unwrap();
        let oracle = InverseOracle::new(&plant);
        for (i, t) in random_targets(&plant, 10, 0.2, 3).unwrap().iter().enumerate() {
            let (_, err) = oracle.solve(t, 0.2, &START_ACTUATION).unwrap();
            assert!(err < 1e-6, "target {i}: {err}");
        }
    }

    #[test]
    fn canonical_specs() {
        let [line, arc] = make_specs(0.2);
        assert_eq!(line.points.len(), 20);
        assert_eq!(arc.points.len(), 19);
        for w in line.points.windows(2) {
            assert!((dist3(&w[0], &w[1]) - 0.03).abs() < 1e-12);
        }
        for w in arc.points.windows(2) {
            let chord = 2.0 * 0.3 * (5.0f64).to_radians().sin();
            assert!((dist3(&w[0], &w[1]) - chord).abs() < 1e-12);
        }
        assert!(line.validate(&PlantConfig::single_section()).is_ok());
        let short = TrajectorySpec {
            points: vec![[0.0, 0.0, 0.7]],
            ..line
        };
        assert!(short.validate(&PlantConfig::single_section()).is_err());
    }

    #[test]
    fn repeated_point_gets_repeated_command() {
        let plant = PlantConfig::single_section();
        let oracle = InverseOracle::new(&plant);
        let spec = TrajectorySpec {
            kind: TrajectoryKind::Custom,
            points: vec![[0.1, 0.05, 0.7]; 2],
            load: 0.0,
        };
        let rep = follow_trajectory(&oracle, &plant, &spec, 1).unwrap();
        assert_eq!(rep.rows[0].achieved, rep.rows[1].achieved);
    }

    #[test]
    fn report_relative_error_and_csv() {
        let plant = PlantConfig::single_section();
        let rep = random_point_test(&ConstantController([0.1; 4]), &plant, 7, 0.0, 2).unwrap();
        assert_eq!(rep.relative_pct, rep.mean / 0.77);
        assert_eq!(rep.to_csv().lines().count(), 8);
        assert!(rep.rows.iter().all(|r| r.error >= 0.0));
        let json: serde_json::Value = serde_json::from_str(&rep.summary_json().unwrap()).unwrap();
        assert_eq!(json["targets"], 7);
    }

    #[test]
    fn zero_step_adaptation_keeps_the_model() {
        let p = MlpParams::controller(1);
        let plant = PlantConfig::single_section();
        let cfg = AdaptConfig {
            steps: 0,
            ..AdaptConfig::default()
        };
        let a = adapt(&p, &Normalizer::default(), &plant, &cfg).unwrap();
        assert_eq!(a.models, vec![p]);
        assert_eq!(a.curve.len(), 1);
    }

    #[test]
    fn adaptation_curve_has_one_row_per_step() {
        let widths = [11, 4];
        let layer = Layer {
            weight: Mat::zeros(4, 11),
            bias: vec![0.0; 4],
        };
        let p = MlpParams::from_layers(vec![layer], Activation::Linear).unwrap();
        assert_eq!(p.widths(), &widths);
        let plant = make_virtual_real(&PlantConfig::single_section()).unwrap();
        let cfg = AdaptConfig {
            steps: 5,
            eval_points: 5,
            ..AdaptConfig::default()
        };
        let a = adapt(&p, &Normalizer::default(), &plant, &cfg).unwrap();
        assert_eq!(a.curve.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(a.models.len(), 6);
        assert_ne!(a.models[0], a.models[5]);
    }
}
