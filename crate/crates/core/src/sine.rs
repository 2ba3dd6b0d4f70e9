//! The standard few-shot sine-regression benchmark, used as a sanity check of
//! the meta-learning machinery on a problem with known behaviour.
//!
//! Tasks are `y = A sin(x + φ)` with `A ∈ [0.1, 5]`, `φ ∈ [0, π]` and inputs
//! drawn from `[-5, 5]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::exec::Exec;
use crate::grad::mse_value;
use crate::linalg::Mat;
use crate::meta::{inner_adapt, Batch, MetaLearner, OuterOptimizer};
use crate::mlp::{Activation, MlpParams};

pub const SINE_WIDTHS: [usize; 4] = [1, 40, 40, 1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SineTask {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SineTask {
            amplitude: rng.gen_range(0.1..5.0),
            phase: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }

    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Batch {
        let x = Mat::from_fn(n, 1, |_, _| rng.gen_range(-5.0..5.0));
        let y = Mat::from_fn(n, 1, |i, _| self.eval(x.get(i, 0)));
        Batch { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SineConfig {
    pub k: usize,
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub meta_batch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SineConfig {
    fn default() -> Self {
        SineConfig {
            k: 10,
            // 0.01 on the per-sample mean, expressed for the summed loss
            inner_lr: 0.001,
            meta_lr: 1e-3,
            meta_batch: 10,
            iterations: 10_000,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

pub fn sine_net(seed: u64) -> MlpParams {
    MlpParams::init(&SINE_WIDTHS, Activation::Linear, seed).expect("fixed widths are valid")
}

/// First-order MAML over freshly drawn sine tasks.
pub fn meta_train_sine(cfg: &SineConfig) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut learner = MetaLearner::new(sine_net(cfg.seed), OuterOptimizer::Adam, cfg.meta_lr);
    for _ in 0..cfg.iterations {
        let tasks: Vec<(Batch, Batch)> = (0..cfg.meta_batch)
            .map(|_| {
                let t = SineTask::draw(&mut rng);
                (t.batch(&mut rng, cfg.k), t.batch(&mut rng, cfg.k))
            })
            .collect();
        learner.step(&tasks, cfg.inner_lr, 1, false, cfg.exec)?;
    }
    Ok(learner.params)
}

/// Mean squared error on a dense query grid after `steps` gradient steps on
/// `support`.
pub fn adapted_mse(params: &MlpParams, task: &SineTask, support: &Batch, alpha: f64, steps: usize) -> Result<f64> {
    let adapted = inner_adapt(params, support, alpha, steps)?;
    let n = 100;
    let x = Mat::from_fn(n, 1, |i, _| -5.0 + 10.0 * i as f64 / (n - 1) as f64);
    let y = Mat::from_fn(n, 1, |i, _| task.eval(x.get(i, 0)));
    Ok(mse_value(&adapted, &x, &y)? / n as f64)
}
