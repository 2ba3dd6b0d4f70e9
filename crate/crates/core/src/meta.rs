//! Model-agnostic meta-learning over loading-condition tasks, and the plain
//! supervised (BPNN) baseline.
//!
//! The inner update is `φ' = φ − α ∇L_support(φ)`; the meta objective is the
//! summed query loss at `φ'` over a batch of tasks, optimized with Adam or
//! plain SGD. Losses are summed squared errors. The first-order variant
//! uses the query gradient at `φ'` directly; the exact variant
//! back-propagates it through every inner step with Hessian-vector products,
//! `g ← g − α H_support(φ_s) g`.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{normalize_samples, Dataset, Normalizer, Sample};
use crate::error::{check_dim, Error, Result};
use crate::exec::Exec;
use crate::grad::{mse_hvp, mse_value, mse_value_and_grad};
use crate::linalg::Mat;
use crate::mlp::{AdamState, Activation, MlpParams};

/// Normalized inputs and targets, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Mat,
    pub y: Mat,
}

impl Batch {
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        check_dim("Batch rows", x.rows(), y.rows())?;
        Ok(Batch { x, y })
    }

    pub fn from_samples(samples: &[Sample], stats: &Normalizer) -> Result<Self> {
        let n = normalize_samples(samples, stats)?;
        Ok(Batch { x: n.x, y: n.y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    /// Rows at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> Batch {
        let pick = |m: &Mat| {
            let mut out = Mat::zeros(idx.len(), m.cols());
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(m.row(i));
            }
            out
        };
        Batch {
            x: pick(&self.x),
            y: pick(&self.y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OuterOptimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamlConfig {
    /// Inner (adaptation) step size α.
    pub inner_lr: f64,
    /// Meta step size β.
    pub meta_lr: f64,
    /// Support-set size; the query set has the same size.
    pub k: usize,
    pub meta_batch: usize,
    pub epochs: usize,
    pub inner_steps: usize,
    pub second_order: bool,
    pub outer_optimizer: OuterOptimizer,
    /// Meta updates per epoch. `None` sizes an epoch so that it draws about as
    /// many samples as the task pool holds.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for MamlConfig {
    fn default() -> Self {
        MamlConfig {
            inner_lr: 0.01,
            meta_lr: 0.01,
            k: 10,
            meta_batch: 20,
            epochs: 200,
            inner_steps: 1,
            second_order: false,
            outer_optimizer: OuterOptimizer::Adam,
            steps_per_epoch: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_lr >= 0.0) || !(self.meta_lr > 0.0) {
            return Err(Error::Config(
                "inner_lr must be >= 0 and meta_lr > 0".into(),
            ));
        }
        if self.k == 0 || self.meta_batch == 0 || self.epochs == 0 || self.inner_steps == 0 {
            return Err(Error::Config(
                "k, meta_batch, epochs and inner_steps must be >= 1".into(),
            ));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Support and query sets drawn from one loading condition.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub load: f64,
    pub support: Vec<Sample>,
    pub query: Vec<Sample>,
}

/// Draws `2k` distinct samples at `load`: the first `k` form the support set,
/// the rest the query set.
pub fn sample_task(ds: &Dataset, load: f64, k: usize, seed: u64) -> Result<TaskBatch> {
    let pool = ds.at_load(load);
    if pool.len() < 2 * k {
        return Err(Error::domain(format!(
            "load {load} has {} samples, a task needs {}",
            pool.len(),
            2 * k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = index::sample(&mut rng, pool.len(), 2 * k).into_vec();
    Ok(TaskBatch {
        load,
        support: idx[..k].iter().map(|&i| pool[i]).collect(),
        query: idx[k..].iter().map(|&i| pool[i]).collect(),
    })
}

/// `steps` plain gradient steps of size `alpha` on the support loss.
pub fn inner_adapt(params: &MlpParams, support: &Batch, alpha: f64, steps: usize) -> Result<MlpParams> {
    let mut p = params.clone();
    for _ in 0..steps {
        let (_, g) = mse_value_and_grad(&p, &support.x, &support.y)?;
        p.axpy(-alpha, &g)?;
    }
    Ok(p)
}

/// Query loss after adaptation and the meta-gradient of that loss with
/// respect to the pre-adaptation parameters.
pub fn task_meta_grad(
    params: &MlpParams,
    support: &Batch,
    query: &Batch,
    alpha: f64,
    steps: usize,
    second_order: bool,
) -> Result<(f64, MlpParams)> {
    let mut trail = Vec::with_capacity(if second_order { steps } else { 0 });
    let mut p = params.clone();
    for _ in 0..steps {
        let (_, g) = mse_value_and_grad(&p, &support.x, &support.y)?;
        if second_order {
            trail.push(p.clone());
        }
        p.axpy(-alpha, &g)?;
    }
    let (loss, mut g) = mse_value_and_grad(&p, &query.x, &query.y)?;
    for p_s in trail.iter().rev() {
        let hg = mse_hvp(p_s, &support.x, &support.y, &g)?;
        g.axpy(-alpha, &hg)?;
    }
    Ok((loss, g))
}

/// Summed meta-gradient over a batch of `(support, query)` tasks and the mean
/// query loss. Tasks are processed under `exec`; the reduction is ordered.
pub fn meta_gradient(
    params: &MlpParams,
    tasks: &[(Batch, Batch)],
    alpha: f64,
    steps: usize,
    second_order: bool,
    exec: Exec,
) -> Result<(f64, MlpParams)> {
    let per_task = exec.try_map(tasks, |(s, q)| {
        task_meta_grad(params, s, q, alpha, steps, second_order)
    })?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_task {
        total.axpy(1.0, g)?;
        loss += l;
    }
    Ok((loss / tasks.len().max(1) as f64, total))
}

/// Outer-loop state: the meta-parameters and their optimizer.
#[derive(Debug, Clone)]
pub struct MetaLearner {
    pub params: MlpParams,
    adam: Option<AdamState>,
    meta_lr: f64,
}

impl MetaLearner {
    pub fn new(params: MlpParams, optimizer: OuterOptimizer, meta_lr: f64) -> Self {
        let adam = match optimizer {
            OuterOptimizer::Adam => Some(AdamState::new(&params, meta_lr)),
            OuterOptimizer::Sgd => None,
        };
        MetaLearner {
            params,
            adam,
            meta_lr,
        }
    }

    pub fn apply(&mut self, grad: &MlpParams) -> Result<()> {
        match &mut self.adam {
            Some(state) => state.step_in_place(&mut self.params, grad),
            None => self.params.axpy(-self.meta_lr, grad),
        }
    }

    /// One meta update from a batch of tasks; returns the mean query loss.
    pub fn step(
        &mut self,
        tasks: &[(Batch, Batch)],
        alpha: f64,
        steps: usize,
        second_order: bool,
        exec: Exec,
    ) -> Result<f64> {
        let (loss, g) = meta_gradient(&self.params, tasks, alpha, steps, second_order, exec)?;
        self.apply(&g)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub mean_query_loss: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_query_loss,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.mean_query_loss, r.wall_ms));
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_query_loss).collect()
    }
}

/// Normalized per-load task pools.
struct TaskPool {
    pools: Vec<Batch>,
}

impl TaskPool {
    fn from_dataset(ds: &Dataset, k: usize) -> Result<Self> {
        let mut pools = Vec::new();
        for load in ds.loads() {
            let samples = ds.at_load(load);
            if samples.len() >= 2 * k {
                pools.push(Batch::from_samples(&samples, &ds.normalization)?);
            }
        }
        if pools.is_empty() {
            return Err(Error::domain(format!(
                "no load has the {} samples a task needs",
                2 * k
            )));
        }
        Ok(TaskPool { pools })
    }

    fn total(&self) -> usize {
        self.pools.iter().map(Batch::len).sum()
    }

    /// Load index uniform with replacement, then `2k` rows without
    /// replacement.
    fn draw<R: Rng>(&self, rng: &mut R, k: usize) -> (Batch, Batch) {
        let pool = &self.pools[rng.gen_range(0..self.pools.len())];
        let idx = index::sample(rng, pool.len(), 2 * k).into_vec();
        (pool.gather(&idx[..k]), pool.gather(&idx[k..]))
    }
}

/// MAML over loading-condition tasks.
pub fn meta_train(ds: &Dataset, cfg: &MamlConfig, init: MlpParams) -> Result<(MlpParams, TrainingLog)> {
    cfg.validate()?;
    let pool = TaskPool::from_dataset(ds, cfg.k)?;
    let steps_per_epoch = cfg.steps_per_epoch.unwrap_or_else(|| {
        let per_step = cfg.meta_batch * 2 * cfg.k;
        ((pool.total() as f64 / per_step as f64).round() as usize).max(1)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = MetaLearner::new(init, cfg.outer_optimizer, cfg.meta_lr);
    let mut log = TrainingLog::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let tasks: Vec<(Batch, Batch)> =
                (0..cfg.meta_batch).map(|_| pool.draw(&mut rng, cfg.k)).collect();
            epoch_loss += learner.step(&tasks, cfg.inner_lr, cfg.inner_steps, cfg.second_order, cfg.exec)?;
        }
        if !learner.params.is_finite() {
            return Err(Error::domain(format!("meta-training diverged in epoch {epoch}")));
        }
        log.rows.push(LogRow {
            epoch,
            mean_query_loss: epoch_loss / steps_per_epoch as f64,
            wall_ms: start.elapsed().as_millis(),
        });
    }
    Ok((learner.params, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpnnConfig {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BpnnConfig {
    fn default() -> Self {
        BpnnConfig {
            widths: crate::mlp::CONTROLLER_WIDTHS.to_vec(),
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpnnLogRow {
    pub epoch: usize,
    /// Mean per-sample squared error over the epoch's minibatches.
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Plain supervised Adam training on pooled data; returns the parameters
/// with the lowest validation loss seen (the initialization included).
pub fn train_bpnn(
    train: &Dataset,
    val: &Dataset,
    cfg: &BpnnConfig,
) -> Result<(MlpParams, Vec<BpnnLogRow>)> {
    if train.is_empty() {
        return Err(Error::domain("train_bpnn needs a nonempty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let init = MlpParams::init(&cfg.widths, Activation::Linear, cfg.seed)?;
    let train_b = Batch::from_samples(&train.samples, &train.normalization)?;
    let val_b = if val.is_empty() {
        train_b.clone()
    } else {
        Batch::from_samples(&val.samples, &val.normalization)?
    };
    fit_supervised(init, &train_b, &val_b, cfg)
}

/// Minibatch Adam on summed squared error, keeping the best-validation
/// parameters.
pub fn fit_supervised(
    init: MlpParams,
    train: &Batch,
    val: &Batch,
    cfg: &BpnnConfig,
) -> Result<(MlpParams, Vec<BpnnLogRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut params = init;
    let mut adam = AdamState::new(&params, cfg.lr);
    let per_val = |p: &MlpParams| -> Result<f64> { Ok(mse_value(p, &val.x, &val.y)? / val.len().max(1) as f64) };
    let mut best = (per_val(&params)?, params.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = train.gather(chunk);
            let (l, g) = mse_value_and_grad(&params, &b.x, &b.y)?;
            total += l;
            adam.step_in_place(&mut params, &g)?;
        }
        let v = per_val(&params)?;
        if v < best.0 {
            best = (v, params.clone());
        }
        log.push(BpnnLogRow {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: v,
        });
    }
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_sim, load_grid};
    use crate::linalg::Mat;
    use crate::mlp::Layer;
    use crate::plant::PlantConfig;

    fn scalar_net(w: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Layer {
                weight: Mat::from_vec(1, 1, vec![w]).unwrap(),
                bias: vec![0.0],
            }],
            Activation::Linear,
        )
        .unwrap()
    }

    fn sim_ds() -> Dataset {
        gen_sim(
            &PlantConfig::single_section(),
            60,
            &load_grid(0.3, 0.1),
            0.1,
            2,
            Exec::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn task_sampling() {
        let ds = sim_ds();
        let t = sample_task(&ds, 0.2, 10, 4).unwrap();
        assert_eq!((t.support.len(), t.query.len()), (10, 10));
        assert!(t.support.iter().chain(&t.query).all(|s| s.load == 0.2));
        assert_eq!(t, sample_task(&ds, 0.2, 10, 4).unwrap());
        let sk: std::collections::HashSet<_> = t.support.iter().map(Sample::key).collect();
        assert!(t.query.iter().all(|s| !sk.contains(&s.key())));
        let err = sample_task(&ds, 0.2, 31, 4).unwrap_err();
        assert!(err.to_string().contains("60"), "{err}");
    }

    #[test]
    fn inner_step_closed_form() {
        // L(φ) = (φ·1 − 3)^2 → ∇ = −4 at φ = 1
        let support = Batch::new(Mat::row_vector(&[1.0]), Mat::row_vector(&[3.0])).unwrap();
        let p = inner_adapt(&scalar_net(1.0), &support, 0.01, 1).unwrap();
        assert!((p.layers()[0].weight.get(0, 0) - 1.04).abs() < 1e-15);
        // already exact → unchanged
        let exact = Batch::new(Mat::row_vector(&[1.0]), Mat::row_vector(&[1.0])).unwrap();
        assert_eq!(inner_adapt(&scalar_net(1.0), &exact, 0.01, 3).unwrap(), scalar_net(1.0));
    }

    #[test]
    fn two_inner_steps_compose() {
        let p = MlpParams::init(&[11, 16, 4], Activation::Linear, 3).unwrap();
        let ds = sim_ds();
        let b = Batch::from_samples(&ds.samples[..10], &ds.normalization).unwrap();
        let twice = inner_adapt(&inner_adapt(&p, &b, 0.01, 1).unwrap(), &b, 0.01, 1).unwrap();
        assert_eq!(inner_adapt(&p, &b, 0.01, 2).unwrap(), twice);
    }

    #[test]
    fn first_and_second_order_agree_as_alpha_vanishes() {
        let p = MlpParams::controller(8);
        let ds = sim_ds();
        let s = Batch::from_samples(&ds.samples[..10], &ds.normalization).unwrap();
        let q = Batch::from_samples(&ds.samples[10..20], &ds.normalization).unwrap();
        let gap = |alpha: f64| {
            let (_, g1) = task_meta_grad(&p, &s, &q, alpha, 1, false).unwrap();
            let (_, g2) = task_meta_grad(&p, &s, &q, alpha, 1, true).unwrap();
            let mut d = g2.clone();
            d.axpy(-1.0, &g1).unwrap();
            (d, g1)
        };
        // The gap is exactly alpha * H_support * g_query, so it shrinks linearly.
        let r = |alpha: f64| {
            let (d, g) = gap(alpha);
            d.norm() / g.norm()
        };
        let (r5, r6, r7) = (r(1e-5), r(1e-6), r(1e-7));
        assert!((r6 / r5 - 0.1).abs() < 1e-3, "{r5} {r6}");
        assert!((r7 / r6 - 0.1).abs() < 1e-3, "{r6} {r7}");
        assert!(r7 < 1e-3, "{r7}");

        // and the correction itself agrees with a difference of support gradients
        let alpha = 1e-5;
        let (d, g1) = gap(alpha);
        let h = 1e-6 / g1.norm();
        let support_grad = |sign: f64| {
            let mut t = p.clone();
            t.axpy(sign * h, &g1).unwrap();
            mse_value_and_grad(&t, &s.x, &s.y).unwrap().1
        };
        let mut fd = support_grad(1.0);
        fd.axpy(-1.0, &support_grad(-1.0)).unwrap();
        fd.scale(-alpha / (2.0 * h));
        let mut err = fd.clone();
        err.axpy(-1.0, &d).unwrap();
        assert!(err.norm() / fd.norm() < 1e-3, "{}", err.norm() / fd.norm());

        // and they differ measurably at a realistic step size
        let (h1, _) = gap(0.01);
        assert!(h1.norm() > 0.0);
    }

    #[test]
    fn zero_alpha_is_pooled_query_training() {
        let p = MlpParams::init(&[11, 8, 4], Activation::Linear, 1).unwrap();
        let ds = sim_ds();
        let s = Batch::from_samples(&ds.samples[..10], &ds.normalization).unwrap();
        let q = Batch::from_samples(&ds.samples[10..20], &ds.normalization).unwrap();
        let (l, g) = task_meta_grad(&p, &s, &q, 0.0, 1, true).unwrap();
        let (l2, g2) = mse_value_and_grad(&p, &q.x, &q.y).unwrap();
        assert_eq!((l, g), (l2, g2));
    }

    #[test]
    fn meta_train_is_deterministic_across_policies() {
        let ds = sim_ds();
        let mut cfg = MamlConfig {
            epochs: 2,
            steps_per_epoch: Some(3),
            meta_batch: 4,
            exec: Exec::Sequential,
            ..MamlConfig::default()
        };
        let init = MlpParams::init(&[11, 16, 4], Activation::Linear, 0).unwrap();
        let (a, la) = meta_train(&ds, &cfg, init.clone()).unwrap();
        cfg.exec = Exec::Parallel;
        let (b, lb) = meta_train(&ds, &cfg, init.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.losses(), lb.losses());
        assert_eq!(la.rows.len(), 2);
        assert!(la.to_csv().starts_with("epoch,mean_query_loss,wall_ms\n"));
    }

    #[test]
    fn meta_train_rejects_empty_pool() {
        let ds = sim_ds();
        let cfg = MamlConfig {
            k: 100,
            ..MamlConfig::default()
        };
        assert!(meta_train(&ds, &cfg, MlpParams::controller(0)).is_err());
        let bad = MamlConfig {
            meta_batch: 0,
            ..MamlConfig::default()
        };
        assert!(meta_train(&ds, &bad, MlpParams::controller(0)).is_err());
    }

    #[test]
    fn sgd_outer_optimizer_moves_by_beta_times_gradient() {
        let ds = sim_ds();
        let init = MlpParams::init(&[11, 8, 4], Activation::Linear, 0).unwrap();
        let pool = TaskPool::from_dataset(&ds, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tasks: Vec<_> = (0..3).map(|_| pool.draw(&mut rng, 10)).collect();
        let (_, g) = meta_gradient(&init, &tasks, 0.01, 1, false, Exec::Sequential).unwrap();
        let mut learner = MetaLearner::new(init.clone(), OuterOptimizer::Sgd, 0.01);
        learner.step(&tasks, 0.01, 1, false, Exec::Sequential).unwrap();
        let mut expected = init;
        expected.axpy(-0.01, &g).unwrap();
        assert_eq!(learner.params, expected);
    }

    #[test]
    fn bpnn_with_zero_lr_keeps_init() {
        let ds = sim_ds();
        let cfg = BpnnConfig {
            widths: vec![11, 8, 4],
            epochs: 1,
            lr: 0.0,
            ..BpnnConfig::default()
        };
        let (p, log) = train_bpnn(&ds, &ds, &cfg).unwrap();
        assert_eq!(p, MlpParams::init(&[11, 8, 4], Activation::Linear, 0).unwrap());
        assert_eq!(log.len(), 1);
        assert!(train_bpnn(&Dataset::new(vec![], ds.provenance, 0), &ds, &cfg).is_err());
    }
}
