//! Fully-connected ReLU networks: parameters, initialization, losses and
//! optimizers.
//!
//! Gradients, Hessian-vector products and search directions are all
//! represented as [`MlpParams`] of the same shape as the network they belong
//! to, so the vector-space helpers here (`axpy`, `dot`, ...) serve all three.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;

/// Width list of the inverse-kinematics controller.
pub const CONTROLLER_WIDTHS: [usize; 5] = [11, 128, 128, 128, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative expressed through the activation's output `y`.
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    /// Second derivative expressed through the activation's output `y`.
    pub fn second_derivative(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 0.0,
            Activation::Sigmoid => y * (1.0 - y) * (1.0 - 2.0 * y),
            Activation::Tanh => -2.0 * y * (1.0 - y * y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Dense network with ReLU hidden layers and a tagged output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Checkpoint", try_from = "Checkpoint")]
pub struct MlpParams {
    widths: Vec<usize>,
    output: Activation,
    layers: Vec<Layer>,
}

/// On-disk form: architecture descriptor plus one flat row-major weight array
/// and one bias array per layer.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    widths: Vec<usize>,
    output_activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<MlpParams> for Checkpoint {
    fn from(p: MlpParams) -> Self {
        let (weights, biases) = p
            .layers
            .into_iter()
            .map(|l| (l.weight.into_vec(), l.bias))
            .unzip();
        Checkpoint {
            widths: p.widths,
            output_activation: p.output,
            weights,
            biases,
        }
    }
}

impl TryFrom<Checkpoint> for MlpParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.widths.len() < 2 {
            return Err(Error::domain("checkpoint needs at least two widths"));
        }
        check_dim("checkpoint weights", c.widths.len() - 1, c.weights.len())?;
        check_dim("checkpoint biases", c.widths.len() - 1, c.biases.len())?;
        let layers = c
            .weights
            .into_iter()
            .zip(c.biases)
            .zip(c.widths.windows(2))
            .map(|((w, b), pair)| {
                check_dim("checkpoint bias length", pair[1], b.len())?;
                Ok(Layer {
                    weight: Mat::from_vec(pair[1], pair[0], w)?,
                    bias: b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MlpParams {
            widths: c.widths,
            output: c.output_activation,
            layers,
        })
    }
}

impl MlpParams {
    pub fn zeros(widths: &[usize], output: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::domain(format!(
                "network widths must list at least two positive sizes, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|p| Layer {
                weight: Mat::zeros(p[1], p[0]),
                bias: vec![0.0; p[1]],
            })
            .collect();
        Ok(MlpParams {
            widths: widths.to_vec(),
            output,
            layers,
        })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn init(widths: &[usize], output: Activation, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(widths, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.layers {
            let bound = (6.0 / layer.weight.cols() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// The 11→128→128→128→4 linear-output controller.
    pub fn controller(seed: u64) -> Self {
        Self::init(&CONTROLLER_WIDTHS, Activation::Linear, seed).expect("static widths are valid")
    }

    pub fn from_layers(layers: Vec<Layer>, output: Activation) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::domain("network needs at least one layer"))?;
        let mut widths = vec![first.weight.cols()];
        for l in &layers {
            check_dim("layer input width", *widths.last().unwrap(), l.weight.cols())?;
            check_dim("layer bias length", l.weight.rows(), l.bias.len())?;
            widths.push(l.weight.rows());
        }
        Ok(MlpParams {
            widths,
            output,
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths, self.output).expect("existing shape is valid")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bias.len() * (l.weight.cols() + 1))
            .sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.widths == other.widths
    }

    pub fn check_shape(&self, context: &'static str, other: &MlpParams) -> Result<()> {
        if self.widths != other.widths {
            return Err(Error::Dimension {
                context,
                expected: self.num_params(),
                got: other.num_params(),
            });
        }
        Ok(())
    }

    /// All parameters in a fixed order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("MlpParams::set_flat", self.num_params(), flat.len())?;
        for (p, &v) in self.iter_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &MlpParams) -> Result<()> {
        self.check_shape("MlpParams::axpy", other)?;
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn dot(&self, other: &MlpParams) -> Result<f64> {
        self.check_shape("MlpParams::dot", other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Summed squared error over a batch and its cotangent `2 (pred - target)`.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    check_dim("mse_loss rows", target.rows(), pred.rows())?;
    check_dim("mse_loss cols", target.cols(), pred.cols())?;
    let cot = pred.zip_map(target, |p, t| 2.0 * (p - t))?;
    let loss = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((loss, cot))
}

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against a constant label, with
/// the cotangent with respect to the probabilities.
pub fn bce_loss(prob: &Mat, label: f64) -> (f64, Mat) {
    let n = prob.rows().max(1) as f64;
    let mut loss = 0.0;
    let cot = prob.map(|p| {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        -(label / p - (1.0 - label) / (1.0 - p)) / n
    });
    for &p in prob.as_slice() {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= label * p.ln() + (1.0 - label) * (1.0 - p).ln();
    }
    (loss / n, cot)
}

/// `params - lr * grad`
pub fn sgd_step(params: &MlpParams, grad: &MlpParams, lr: f64) -> Result<MlpParams> {
    let mut out = params.clone();
    out.axpy(-lr, grad)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &MlpParams, lr: f64) -> Self {
        AdamState {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Pure bias-corrected Adam update.
    pub fn step(&self, params: &MlpParams, grad: &MlpParams) -> Result<(MlpParams, AdamState)> {
        let mut p = params.clone();
        let mut s = self.clone();
        s.step_in_place(&mut p, grad)?;
        Ok((p, s))
    }

    pub fn step_in_place(&mut self, params: &mut MlpParams, grad: &MlpParams) -> Result<()> {
        self.m.check_shape("adam first moment", grad)?;
        params.check_shape("adam params", grad)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, m), v), &g) in params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad.iter())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &AdamState,
    params: &MlpParams,
    grad: &MlpParams,
) -> Result<(MlpParams, AdamState)> {
    state.step(params, grad)
}
