//! Exact first- and second-order derivatives of [`MlpParams`] networks.
//!
//! All passes are batched: inputs are `batch × width` matrices. The
//! second-order pass propagates a parameter-space tangent through both the
//! forward and the backward sweep (forward-over-reverse), which yields the
//! Hessian-vector product of the loss without forming the Hessian. The ReLU
//! derivative at exactly zero is taken as zero and its second derivative is
//! zero everywhere.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{gemm_into, matmul, Mat, Op};
use crate::mlp::{Activation, MlpParams};

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct GradTape {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Mat>,
    /// Post-activation output of the last layer.
    output: Mat,
    widths: Vec<usize>,
}

impl GradTape {
    pub fn output(&self) -> &Mat {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.output.rows()
    }
}

fn relu_mask(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn affine(params_w: &Mat, bias: &[f64], x: &Mat) -> Result<Mat> {
    let mut z = matmul(x, Op::N, params_w, Op::T)?;
    z.add_row_broadcast(bias)?;
    Ok(z)
}

/// Batched forward pass keeping the tape needed by [`backward`].
pub fn forward(params: &MlpParams, x: &Mat) -> Result<(Mat, GradTape)> {
    check_dim("mlp_forward input width", params.input_width(), x.cols())?;
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        let z = affine(&layer.weight, &layer.bias, &h)?;
        inputs.push(h);
        h = if i == last {
            let act = params.output_activation();
            z.map(|v| act.apply(v))
        } else {
            z.map(|v| v.max(0.0))
        };
    }
    let tape = GradTape {
        inputs,
        output: h.clone(),
        widths: params.widths().to_vec(),
    };
    Ok((h, tape))
}

/// Forward pass without keeping a tape.
pub fn predict(params: &MlpParams, x: &Mat) -> Result<Mat> {
    check_dim("mlp_forward input width", params.input_width(), x.cols())?;
    let layers = params.layers();
    let last = layers.len() - 1;
    let mut h = affine(&layers[0].weight, &layers[0].bias, x)?;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            h = affine(&layer.weight, &layer.bias, &h)?;
        }
        if i == last {
            let act = params.output_activation();
            h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        } else {
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(h)
}

/// Single-input forward pass.
pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, GradTape)> {
    let (y, tape) = forward(params, &Mat::row_vector(x))?;
    Ok((y.into_vec(), tape))
}

/// Reverse sweep: gradient of `<dl_dy, y>` with respect to the parameters and
/// the network input.
pub fn backward(params: &MlpParams, tape: &GradTape, dl_dy: &Mat) -> Result<(MlpParams, Mat)> {
    if tape.widths != params.widths() {
        return Err(Error::Dimension {
            context: "mlp_backward tape/params",
            expected: params.widths().len(),
            got: tape.widths.len(),
        });
    }
    check_dim("mlp_backward cotangent rows", tape.batch(), dl_dy.rows())?;
    check_dim("mlp_backward cotangent cols", params.output_width(), dl_dy.cols())?;

    let act = params.output_activation();
    let mut g_z = dl_dy.zip_map(&tape.output, |g, y| g * act.derivative(y))?;
    let mut grad = params.zeros_like();
    let layers = params.layers();
    for i in (0..layers.len()).rev() {
        let h_in = &tape.inputs[i];
        let g_layer = &mut grad.layers_mut()[i];
        gemm_into(1.0, &g_z, Op::T, h_in, Op::N, 0.0, &mut g_layer.weight)?;
        g_layer.bias = g_z.column_sums();
        let g_h = matmul(&g_z, Op::N, &layers[i].weight, Op::N)?;
        g_z = if i > 0 {
            // h_in = relu(z), so h_in > 0 exactly where z > 0
            g_h.zip_map(h_in, |g, h| g * relu_mask(h))?
        } else {
            g_h
        };
    }
    Ok((grad, g_z))
}

/// Single-input reverse sweep, returning only the parameter gradient.
pub fn mlp_backward(params: &MlpParams, tape: &GradTape, dl_dy: &[f64]) -> Result<MlpParams> {
    Ok(backward(params, tape, &Mat::row_vector(dl_dy))?.0)
}

/// Summed squared error of the network over a batch and its parameter
/// gradient.
pub fn mse_value_and_grad(params: &MlpParams, x: &Mat, y: &Mat) -> Result<(f64, MlpParams)> {
    let (pred, tape) = forward(params, x)?;
    let (loss, cot) = crate::mlp::mse_loss(&pred, y)?;
    let (grad, _) = backward(params, &tape, &cot)?;
    Ok((loss, grad))
}

pub fn mse_value(params: &MlpParams, x: &Mat, y: &Mat) -> Result<f64> {
    let pred = predict(params, x)?;
    Ok(crate::mlp::mse_loss(&pred, y)?.0)
}

/// Output cotangent used by the second-order sweep.
#[derive(Debug, Clone, Copy)]
pub enum Cotangent<'a> {
    /// Fixed `dL/dy`, i.e. a loss linear in the output.
    Fixed(&'a Mat),
    /// Summed squared error against the given targets.
    Mse(&'a Mat),
}

/// Forward-over-reverse pass: returns the loss gradient at `params` and its
/// directional derivative along `direction`, i.e. the Hessian-vector product.
pub fn grad_and_hvp(
    params: &MlpParams,
    x: &Mat,
    cotangent: Cotangent<'_>,
    direction: &MlpParams,
) -> Result<(MlpParams, MlpParams)> {
    params.check_shape("mlp_jvp_grad direction", direction)?;
    check_dim("mlp_jvp_grad input width", params.input_width(), x.cols())?;
    let layers = params.layers();
    let dirs = direction.layers();
    let last = layers.len() - 1;
    let act = params.output_activation();

    // forward, carrying tangents
    let mut hs = Vec::with_capacity(layers.len() + 1);
    let mut dhs = Vec::with_capacity(layers.len() + 1);
    let mut pre_out = None;
    hs.push(x.clone());
    dhs.push(Mat::zeros(x.rows(), x.cols()));
    for i in 0..layers.len() {
        let h = &hs[i];
        let dh = &dhs[i];
        let z = affine(&layers[i].weight, &layers[i].bias, h)?;
        let mut dz = affine(&dirs[i].weight, &dirs[i].bias, h)?;
        gemm_into(1.0, dh, Op::N, &layers[i].weight, Op::T, 1.0, &mut dz)?;
        if i == last {
            let y = z.map(|v| act.apply(v));
            let dy = dz.zip_map(&y, |d, yv| d * act.derivative(yv))?;
            pre_out = Some(dz);
            hs.push(y);
            dhs.push(dy);
        } else {
            let mask = z.map(relu_mask);
            dhs.push(dz.zip_map(&mask, |d, m| d * m)?);
            hs.push(z.map(|v| v.max(0.0)));
        }
    }
    let y = &hs[layers.len()];
    let dy = &dhs[layers.len()];
    let dz_out = pre_out.expect("at least one layer");

    let (g_y, dg_y) = match cotangent {
        Cotangent::Fixed(g) => {
            check_dim("mlp_jvp_grad cotangent rows", y.rows(), g.rows())?;
            check_dim("mlp_jvp_grad cotangent cols", y.cols(), g.cols())?;
            (g.clone(), Mat::zeros(g.rows(), g.cols()))
        }
        Cotangent::Mse(t) => {
            let (_, g) = crate::mlp::mse_loss(y, t)?;
            (g, dy.map(|d| 2.0 * d))
        }
    };

    // backward through the output activation
    let mut g_z = g_y.zip_map(y, |g, yv| g * act.derivative(yv))?;
    let mut dg_z = dg_y.zip_map(y, |g, yv| g * act.derivative(yv))?;
    if act != Activation::Linear {
        let curv = g_y.zip_map(y, |g, yv| g * act.second_derivative(yv))?;
        dg_z.axpy(1.0, &curv.zip_map(&dz_out, |c, d| c * d)?)?;
    }

    let mut grad = params.zeros_like();
    let mut hvp = params.zeros_like();
    for i in (0..layers.len()).rev() {
        let h = &hs[i];
        let dh = &dhs[i];
        {
            let gl = &mut grad.layers_mut()[i];
            gemm_into(1.0, &g_z, Op::T, h, Op::N, 0.0, &mut gl.weight)?;
            gl.bias = g_z.column_sums();
        }
        {
            let hl = &mut hvp.layers_mut()[i];
            gemm_into(1.0, &dg_z, Op::T, h, Op::N, 0.0, &mut hl.weight)?;
            gemm_into(1.0, &g_z, Op::T, dh, Op::N, 1.0, &mut hl.weight)?;
            hl.bias = dg_z.column_sums();
        }
        if i == 0 {
            break;
        }
        let g_h = matmul(&g_z, Op::N, &layers[i].weight, Op::N)?;
        let mut dg_h = matmul(&dg_z, Op::N, &layers[i].weight, Op::N)?;
        gemm_into(1.0, &g_z, Op::N, &dirs[i].weight, Op::N, 1.0, &mut dg_h)?;
        let mask = h.map(relu_mask);
        g_z = g_h.zip_map(&mask, |g, m| g * m)?;
        dg_z = dg_h.zip_map(&mask, |g, m| g * m)?;
    }
    Ok((grad, hvp))
}

/// Directional derivative of the gradient of `<dl_dy, y(params)>` along
/// `direction` for a single input.
pub fn mlp_jvp_grad(
    params: &MlpParams,
    x: &[f64],
    dl_dy: &[f64],
    direction: &MlpParams,
) -> Result<MlpParams> {
    let g = Mat::row_vector(dl_dy);
    Ok(grad_and_hvp(params, &Mat::row_vector(x), Cotangent::Fixed(&g), direction)?.1)
}

/// Hessian-vector product of the summed squared error over a batch.
pub fn mse_hvp(params: &MlpParams, x: &Mat, y: &Mat, direction: &MlpParams) -> Result<MlpParams> {
    Ok(grad_and_hvp(params, x, Cotangent::Mse(y), direction)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Layer;

    fn scalar_net(w: f64, b: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Layer {
                weight: Mat::from_vec(1, 1, vec![w]).unwrap(),
                bias: vec![b],
            }],
            Activation::Linear,
        )
        .unwrap()
    }

    #[test]
    fn zero_net_outputs_zero() {
        let p = MlpParams::zeros(&[11, 128, 128, 128, 4], Activation::Linear).unwrap();
        let (y, _) = mlp_forward(&p, &[0.3; 11]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn identity_net_passes_positive_inputs() {
        let eye = || Mat::from_fn(2, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let p = MlpParams::from_layers(
            vec![
                Layer {
                    weight: eye(),
                    bias: vec![0.0; 2],
                },
                Layer {
                    weight: eye(),
                    bias: vec![0.0; 2],
                },
            ],
            Activation::Linear,
        )
        .unwrap();
        let (y, _) = mlp_forward(&p, &[0.4, 2.5]).unwrap();
        assert_eq!(y, vec![0.4, 2.5]);
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let p = MlpParams::controller(0);
        assert!(matches!(
            mlp_forward(&p, &[0.0; 10]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn tape_from_other_network_is_rejected() {
        let p = MlpParams::controller(0);
        let q = MlpParams::init(&[11, 8, 4], Activation::Linear, 0).unwrap();
        let (_, tape) = mlp_forward(&q, &[0.1; 11]).unwrap();
        assert!(mlp_backward(&p, &tape, &[1.0; 4]).is_err());
        let (_, tape) = mlp_forward(&p, &[0.1; 11]).unwrap();
        assert!(mlp_backward(&p, &tape, &[1.0; 3]).is_err());
    }

    #[test]
    fn scalar_gradient_is_the_input() {
        let p = scalar_net(0.7, 0.0);
        let (_, tape) = mlp_forward(&p, &[1.9]).unwrap();
        let g = mlp_backward(&p, &tape, &[1.0]).unwrap();
        assert_eq!(g.layers()[0].weight.get(0, 0), 1.9);
        assert_eq!(g.layers()[0].bias[0], 1.0);
        let (_, dx) = backward(&p, &tape, &Mat::row_vector(&[1.0])).unwrap();
        assert_eq!(dx.get(0, 0), 0.7);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let p = MlpParams::controller(5);
        let (_, tape) = mlp_forward(&p, &[0.2; 11]).unwrap();
        let g = mlp_backward(&p, &tape, &[0.0; 4]).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn scalar_quadratic_hvp_is_closed_form() {
        // L(w, b) = (w x + b - t)^2, H = 2 [[x^2, x], [x, 1]]
        let (w, b, x, t) = (0.3, -0.2, 1.7, 0.5);
        let p = scalar_net(w, b);
        let dir = scalar_net(0.4, -1.1);
        let xm = Mat::row_vector(&[x]);
        let tm = Mat::row_vector(&[t]);
        let h = mse_hvp(&p, &xm, &tm, &dir).unwrap();
        let hw = 2.0 * (x * x * 0.4 + x * -1.1);
        let hb = 2.0 * (x * 0.4 + -1.1);
        assert!((h.layers()[0].weight.get(0, 0) - hw).abs() < 1e-14);
        assert!((h.layers()[0].bias[0] - hb).abs() < 1e-14);
    }

    #[test]
    fn zero_direction_gives_zero_hvp() {
        let p = MlpParams::init(&[3, 5, 2], Activation::Linear, 1).unwrap();
        let h = mlp_jvp_grad(&p, &[0.1, 0.2, 0.3], &[1.0, -1.0], &p.zeros_like()).unwrap();
        assert_eq!(h.norm(), 0.0);
        let bad = MlpParams::init(&[3, 4, 2], Activation::Linear, 1).unwrap();
        assert!(mlp_jvp_grad(&p, &[0.1, 0.2, 0.3], &[1.0, -1.0], &bad).is_err());
    }

    #[test]
    fn predict_agrees_with_forward() {
        let p = MlpParams::init(&[4, 6, 6, 3], Activation::Sigmoid, 2).unwrap();
        let x = Mat::from_fn(5, 4, |r, c| (r as f64 - c as f64) * 0.3);
        let (y, _) = forward(&p, &x).unwrap();
        assert_eq!(predict(&p, &x).unwrap(), y);
    }
}
