//! Independent oracles shared by the integration targets.

#![allow(dead_code)]

use ikmeta::linalg::Mat;
use ikmeta::mlp::MlpParams;
use ikmeta::plant::{Actuation, PlantConfig, SectionParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M3 = [[f64; 3]; 3];

const IDENTITY: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn mat_vec(a: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

/// Rotation by `angle` about the unit axis `k` (axis-angle to matrix).
fn axis_angle(k: [f64; 3], angle: f64) -> M3 {
    let (c, s) = (angle.cos(), angle.sin());
    let t = 1.0 - c;
    [
        [c + k[0] * k[0] * t, k[0] * k[1] * t - k[2] * s, k[0] * k[2] * t + k[1] * s],
        [k[1] * k[0] * t + k[2] * s, c + k[1] * k[1] * t, k[1] * k[2] * t - k[0] * s],
        [k[2] * k[0] * t - k[1] * s, k[2] * k[1] * t + k[0] * s, c + k[2] * k[2] * t],
    ]
}

/// Bend components and arc length of one section, straight from the tendon model.
fn section_arc(cfg: &PlantConfig, s: &SectionParams, a: &Actuation, w: f64) -> (f64, f64, f64) {
    let (ds, ls, lens) = cfg
        .perturbation
        .as_ref()
        .map_or((1.0, 1.0, 1.0), |p| (p.tendon_radius_scale, p.load_coeff_scale, p.rest_length_scale));
    let q: Vec<f64> = a
        .iter()
        .map(|&ai| (ai - cfg.backlash).max(0.0) + s.load_coeff * ls * w / 4.0)
        .collect();
    let d = s.tendon_radius * ds;
    let mean = q.iter().sum::<f64>() / 4.0;
    ((q[0] - q[2]) / (2.0 * d), (q[1] - q[3]) / (2.0 * d), s.rest_length * lens - s.axial_share * mean)
}

/// Tip of a chain of `links` rigid links per section. Each link is laid
/// along the body z axis after turning through half of its bend, then the
/// frame turns through the other half.
pub fn rigid_chain(cfg: &PlantConfig, a: &Actuation, w: f64, links: usize) -> [f64; 3] {
    let mut frame = IDENTITY;
    let mut p = [0.0; 3];
    let n = cfg.sections.len();
    for (i, s) in cfg.sections.iter().enumerate() {
        let act = if i + 1 == n { *a } else { cfg.proximal_hold };
        let (tx, ty, len) = section_arc(cfg, s, &act, w);
        let theta = tx.hypot(ty);
        let ds = len / links as f64;
        let half = if theta > 0.0 {
            axis_angle([-ty / theta, tx / theta, 0.0], 0.5 * theta / links as f64)
        } else {
            IDENTITY
        };
        for _ in 0..links {
            frame = mat_mul(&frame, &half);
            let step = mat_vec(&frame, [0.0, 0.0, ds]);
            for k in 0..3 {
                p[k] += step[k];
            }
            frame = mat_mul(&frame, &half);
        }
    }
    p
}

/// Straight-loop forward pass, independent of the GEMM path.
pub fn reference_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = p.layers().len();
    for (li, layer) in p.layers().iter().enumerate() {
        let w = &layer.weight;
        let z: Vec<f64> = (0..w.rows())
            .map(|r| layer.bias[r] + h.iter().enumerate().map(|(c, hc)| w.get(r, c) * hc).sum::<f64>())
            .collect();
        h = if li + 1 == n {
            z.iter().map(|&v| p.output_activation().apply(v)).collect()
        } else {
            z.iter().map(|&v| v.max(0.0)).collect()
        };
    }
    h
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_like(p: &MlpParams, rng: &mut ChaCha8Rng) -> MlpParams {
    let mut d = p.zeros_like();
    d.set_flat(&random_vec(rng, p.num_params())).unwrap();
    d
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
