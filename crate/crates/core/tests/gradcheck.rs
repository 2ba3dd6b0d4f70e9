//! Analytic derivatives against central finite differences and an
//! independent straight-loop forward pass.

use ikmeta::grad::{backward, forward, grad_and_hvp, mlp_backward, mlp_forward, mlp_jvp_grad, mse_hvp, Cotangent};
use ikmeta::linalg::Mat;
use ikmeta::mlp::{Activation, MlpParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{random_like, random_vec, reference_forward};

fn linear_objective(p: &MlpParams, x: &[f64], cot: &[f64]) -> f64 {
    reference_forward(p, x).iter().zip(cot).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn controller_forward_matches_straight_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for seed in 0..5 {
        let p = MlpParams::controller(seed);
        let x = random_vec(&mut rng, 11);
        let (y, _) = mlp_forward(&p, &x).unwrap();
        for (a, b) in y.iter().zip(reference_forward(&p, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_match_central_differences_over_twenty_seeds() {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = [Activation::Linear, Activation::Sigmoid, Activation::Tanh][seed as usize % 3];
        let widths = [5, 9, 7, 3];
        let p = MlpParams::init(&widths, act, seed).unwrap();
        let x = random_vec(&mut rng, 5);
        let cot = random_vec(&mut rng, 3);
        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let g = mlp_backward(&p, &tape, &cot).unwrap().to_flat();
        let base = p.to_flat();
        for i in 0..base.len() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            let mut v = base.clone();
            v[i] += h;
            plus.set_flat(&v).unwrap();
            v[i] -= 2.0 * h;
            minus.set_flat(&v).unwrap();
            let fd = (linear_objective(&plus, &x, &cot) - linear_objective(&minus, &x, &cot)) / (2.0 * h);
            // a ReLU kink inside the stencil shows up as a difference that
            // changes when the step is halved
            let mut half = base.clone();
            half[i] += 0.5 * h;
            plus.set_flat(&half).unwrap();
            half[i] -= h;
            minus.set_flat(&half).unwrap();
            let fd_half = (linear_objective(&plus, &x, &cot) - linear_objective(&minus, &x, &cot)) / h;
            if (fd - fd_half).abs() > 1e-6 * (1.0 + fd.abs()) {
                continue;
            }
            worst = worst.max(rel_err(fd, g[i]));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = MlpParams::init(&[4, 6, 2], Activation::Tanh, 7).unwrap();
    let x = random_vec(&mut rng, 4);
    let cot = [0.3, -1.2];
    let (_, tape) = forward(&p, &Mat::row_vector(&x)).unwrap();
    let (_, dx) = backward(&p, &tape, &Mat::row_vector(&cot)).unwrap();
    for i in 0..4 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        let fd = (linear_objective(&p, &xp, &cot) - linear_objective(&p, &xm, &cot)) / 2e-6;
        assert!(rel_err(fd, dx.get(0, i)) < 1e-5);
    }
}

fn mse_grad_flat(p: &MlpParams, x: &Mat, y: &Mat) -> Vec<f64> {
    ikmeta::grad::mse_value_and_grad(p, x, y).unwrap().1.to_flat()
}

#[test]
fn hvp_matches_difference_of_gradients() {
    let h = 1e-5;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let act = [Activation::Linear, Activation::Tanh][seed as usize % 2];
        let p = MlpParams::init(&[3, 8, 8, 2], act, seed).unwrap();
        let x = Mat::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = Mat::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = random_like(&p, &mut rng);
        let hv = mse_hvp(&p, &x, &y, &v).unwrap().to_flat();
        let mut plus = p.clone();
        plus.axpy(h, &v).unwrap();
        let mut minus = p.clone();
        minus.axpy(-h, &v).unwrap();
        let fd: Vec<f64> = mse_grad_flat(&plus, &x, &y)
            .iter()
            .zip(mse_grad_flat(&minus, &x, &y))
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let num: f64 = fd.iter().zip(&hv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den < 1e-3, "seed {seed}: relative error {}", num / den);
    }
}

#[test]
fn fixed_cotangent_hvp_matches_difference_of_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p = MlpParams::init(&[4, 10, 3], Activation::Sigmoid, 77).unwrap();
    let x = random_vec(&mut rng, 4);
    let cot = random_vec(&mut rng, 3);
    let v = random_like(&p, &mut rng);
    let hv = mlp_jvp_grad(&p, &x, &cot, &v).unwrap().to_flat();
    let grad_at = |q: &MlpParams| {
        let (_, tape) = mlp_forward(q, &x).unwrap();
        mlp_backward(q, &tape, &cot).unwrap().to_flat()
    };
    let h = 1e-5;
    let mut plus = p.clone();
    plus.axpy(h, &v).unwrap();
    let mut minus = p.clone();
    minus.axpy(-h, &v).unwrap();
    let (gp, gm) = (grad_at(&plus), grad_at(&minus));
    for i in 0..hv.len() {
        let fd = (gp[i] - gm[i]) / (2.0 * h);
        assert!((fd - hv[i]).abs() < 1e-6 + 1e-3 * fd.abs(), "component {i}: {fd} vs {}", hv[i]);
    }
}

#[test]
fn grad_from_second_order_pass_equals_first_order_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = MlpParams::controller(3);
    let x = Mat::from_fn(5, 11, |_, _| rng.gen_range(-1.0..1.0));
    let y = Mat::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0));
    let (g, _) = grad_and_hvp(&p, &x, Cotangent::Mse(&y), &p.zeros_like()).unwrap();
    let g1 = ikmeta::grad::mse_value_and_grad(&p, &x, &y).unwrap().1;
    let mut d = g.clone();
    d.axpy(-1.0, &g1).unwrap();
    assert!(d.norm() < 1e-12 * g1.norm().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear_in_cotangent(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MlpParams::init(&[4, 8, 3], Activation::Linear, seed).unwrap();
        let x = random_vec(&mut rng, 4);
        let c1 = random_vec(&mut rng, 3);
        let c2 = random_vec(&mut rng, 3);
        let (_, tape) = mlp_forward(&p, &x).unwrap();
        let g1 = mlp_backward(&p, &tape, &c1).unwrap();
        let g2 = mlp_backward(&p, &tape, &c2).unwrap();
        let mix: Vec<f64> = c1.iter().zip(&c2).map(|(u, v)| a * u + b * v).collect();
        let gm = mlp_backward(&p, &tape, &mix).unwrap();
        let mut expect = g1.clone();
        expect.scale(a);
        expect.axpy(b, &g2).unwrap();
        for (u, v) in gm.iter().zip(expect.iter()) {
            prop_assert!((u - v).abs() < 1e-10 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn hessian_is_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MlpParams::init(&[3, 6, 6, 2], Activation::Linear, seed).unwrap();
        let x = Mat::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
        let y = Mat::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let u = random_like(&p, &mut rng);
        let v = random_like(&p, &mut rng);
        let hu = mse_hvp(&p, &x, &y, &u).unwrap();
        let hv = mse_hvp(&p, &x, &y, &v).unwrap();
        let (a, b) = (v.dot(&hu).unwrap(), u.dot(&hv).unwrap());
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{} vs {}", a, b);
    }
}
