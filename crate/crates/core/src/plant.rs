//! Forward kinematics of a tendon-driven continuum manipulator.
//!
//! Each section is modelled as a piecewise-constant-curvature (PCC) arc
//! driven by four tendons seated at 0°, 90°, 180° and 270° around the
//! backbone. A tendon displacement `q_i` is the commanded actuation minus
//! backlash, plus a load-dependent offset: an external load `w` raises every
//! tendon tension by `w / 4`, which the model realizes as a displacement of
//! `load_coeff · w / 4` on each tendon.
//!
//! Per section:
//!
//! ```text
//! θx = (q0 − q2) / 2d      θy = (q1 − q3) / 2d
//! θ  = hypot(θx, θy)        φ = atan2(θy, θx)
//! L  = L0 − c_ax · mean(q)
//! tip = ( (L/θ)(1 − cos θ) cos φ, (L/θ)(1 − cos θ) sin φ, (L/θ) sin θ )
//! ```
//!
//! A second (distal) section is attached to the end frame of the proximal
//! one: its tip is rotated by θ about `(−sin φ, cos φ, 0)` and offset by the
//! proximal tip. Only the distal section is commanded; the proximal one is
//! held at [`PlantConfig::proximal_hold`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Actuation = [f64; 4];

/// Below this bend angle the arc is evaluated through its Taylor series.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Encoder resolution.
pub const COUNTS_PER_METER: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionParams {
    pub rest_length: f64,
    pub tendon_radius: f64,
    pub tendon_count: u32,
    pub axial_share: f64,
    pub load_coeff: f64,
    pub max_stroke: f64,
}

impl SectionParams {
    pub fn with_length(rest_length: f64) -> Self {
        SectionParams {
            rest_length,
            tendon_radius: 0.02,
            tendon_count: 4,
            axial_share: 0.5,
            load_coeff: 0.05,
            max_stroke: 0.25,
        }
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("section {idx}: {what}")));
        if !(self.rest_length > 0.0) {
            return bad("rest_length must be > 0");
        }
        if !(self.tendon_radius > 0.0) {
            return bad("tendon_radius must be > 0");
        }
        if self.tendon_count != 4 {
            return bad("tendon_count must be 4");
        }
        if !(0.0..=1.0).contains(&self.axial_share) {
            return bad("axial_share must lie in [0, 1]");
        }
        if !(self.load_coeff >= 0.0) {
            return bad("load_coeff must be >= 0");
        }
        if !(self.max_stroke > 0.0) {
            return bad("max_stroke must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub tendon_radius_scale: f64,
    pub load_coeff_scale: f64,
    pub rest_length_scale: f64,
    pub backlash: f64,
    pub sensor_noise_sigma: f64,
}

impl PerturbationSpec {
    /// Default stand-in for the physical prototype.
    pub fn virtual_real() -> Self {
        PerturbationSpec {
            tendon_radius_scale: 1.10,
            load_coeff_scale: 0.85,
            rest_length_scale: 0.98,
            backlash: 0.003,
            sensor_noise_sigma: 0.001,
        }
    }

    pub fn identity() -> Self {
        PerturbationSpec {
            tendon_radius_scale: 1.0,
            load_coeff_scale: 1.0,
            rest_length_scale: 1.0,
            backlash: 0.0,
            sensor_noise_sigma: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let scales = [
            self.tendon_radius_scale,
            self.load_coeff_scale,
            self.rest_length_scale,
        ];
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("perturbation scale factors must be > 0".into()));
        }
        if !(self.backlash >= 0.0) || !(self.sensor_noise_sigma >= 0.0) {
            return Err(Error::Config(
                "perturbation backlash and noise must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Proximal first; the last section is the commanded one.
    pub sections: Vec<SectionParams>,
    pub proximal_hold: Actuation,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    pub sensor_noise_sigma: f64,
    pub backlash: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipPose {
    pub p: [f64; 3],
}

impl TipPose {
    pub fn distance(&self, other: &TipPose) -> f64 {
        dist3(&self.p, &other.p)
    }
}

pub fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::single_section()
    }
}

/// Arc geometry of one section after applying loads and perturbations.
#[derive(Debug, Clone, Copy)]
struct ArcState {
    theta_x: f64,
    theta_y: f64,
    length: f64,
}

impl PlantConfig {
    pub fn single_section() -> Self {
        PlantConfig {
            sections: vec![SectionParams::with_length(0.77)],
            proximal_hold: [0.0; 4],
            perturbation: None,
            sensor_noise_sigma: 0.0,
            backlash: 0.0,
            rng_seed: 0,
        }
    }

    pub fn two_section() -> Self {
        PlantConfig {
            sections: vec![SectionParams::with_length(0.38), SectionParams::with_length(0.38)],
            ..Self::single_section()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sections.is_empty() || self.sections.len() > 2 {
            return Err(Error::Config(format!(
                "plant needs 1 or 2 sections, got {}",
                self.sections.len()
            )));
        }
        for (i, s) in self.sections.iter().enumerate() {
            s.validate(i)?;
        }
        if !(self.sensor_noise_sigma >= 0.0) {
            return Err(Error::Config("sensor_noise_sigma must be >= 0".into()));
        }
        if !(self.backlash >= 0.0) {
            return Err(Error::Config("backlash must be >= 0".into()));
        }
        if self.sections.len() == 2 {
            let a_max = self.sections[0].max_stroke;
            if let Some(i) = self
                .proximal_hold
                .iter()
                .position(|&v| !(0.0..=a_max).contains(&v))
            {
                return Err(Error::Config(format!(
                    "proximal_hold[{i}] = {} outside [0, {a_max}]",
                    self.proximal_hold[i]
                )));
            }
        }
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: PlantConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stroke limit of the commanded section.
    pub fn max_stroke(&self) -> f64 {
        self.sections.last().map_or(0.0, |s| s.max_stroke)
    }

    /// Radius of a ball around the base that contains every reachable tip.
    pub fn workspace_bound(&self) -> f64 {
        self.sections.iter().map(|s| s.rest_length).sum::<f64>() + self.max_stroke()
    }

    pub fn is_noisy(&self) -> bool {
        self.sensor_noise_sigma > 0.0
    }

    pub fn check_actuation(&self, a: &Actuation) -> Result<()> {
        let a_max = self.max_stroke();
        for (i, &v) in a.iter().enumerate() {
            if !(0.0..=a_max).contains(&v) {
                return Err(Error::domain(format!(
                    "actuation channel {i} = {v} outside [0, {a_max}]"
                )));
            }
        }
        Ok(())
    }

    fn arc(&self, section: &SectionParams, a: &Actuation, load: f64) -> ArcState {
        let (d_scale, load_scale, len_scale) = match &self.perturbation {
            Some(p) => (p.tendon_radius_scale, p.load_coeff_scale, p.rest_length_scale),
            None => (1.0, 1.0, 1.0),
        };
        let d = section.tendon_radius * d_scale;
        let offset = section.load_coeff * load_scale * load / 4.0;
        let q = a.map(|ai| (ai - self.backlash).max(0.0) + offset);
        // grouped so that seat rotations and mirrors leave the sum bit-identical
        let mean = ((q[0] + q[2]) + (q[1] + q[3])) / 4.0;
        ArcState {
            theta_x: (q[0] - q[2]) / (2.0 * d),
            theta_y: (q[1] - q[3]) / (2.0 * d),
            length: section.rest_length * len_scale - section.axial_share * mean,
        }
    }

    /// Noise-free tip position.
    pub fn forward(&self, a: &Actuation, load: f64) -> Result<TipPose> {
        self.check_actuation(a)?;
        if !(load >= 0.0) || !load.is_finite() {
            return Err(Error::domain(format!("load {load} must be finite and >= 0")));
        }
        let distal = self.sections.last().expect("validated plant");
        let tip = match self.sections.len() {
            1 => arc_tip(self.arc(distal, a, load)),
            _ => {
                let prox = self.arc(&self.sections[0], &self.proximal_hold, load);
                let base = arc_tip(prox);
                let tip = rotate_by_arc(prox, arc_tip(self.arc(distal, a, load)));
                [base[0] + tip[0], base[1] + tip[1], base[2] + tip[2]]
            }
        };
        Ok(TipPose { p: tip })
    }

    /// Tip position as seen by the (possibly noisy) tip sensor.
    pub fn measure<R: Rng + ?Sized>(&self, a: &Actuation, load: f64, rng: &mut R) -> Result<TipPose> {
        let mut tip = self.forward(a, load)?;
        if self.sensor_noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.sensor_noise_sigma)
                .map_err(|e| Error::domain(e.to_string()))?;
            for c in &mut tip.p {
                *c += n.sample(rng);
            }
        }
        Ok(tip)
    }

    /// `forward` with an explicit noise switch.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        a: &Actuation,
        load: f64,
        noisy: bool,
        rng: &mut R,
    ) -> Result<TipPose> {
        if noisy {
            self.measure(a, load, rng)
        } else {
            self.forward(a, load)
        }
    }
}

/// Applies the virtual-real perturbation preset and enables noisy sensing.
pub fn make_virtual_real(base: &PlantConfig) -> Result<PlantConfig> {
    apply_perturbation(base, PerturbationSpec::virtual_real())
}

pub fn apply_perturbation(base: &PlantConfig, spec: PerturbationSpec) -> Result<PlantConfig> {
    if base.perturbation.is_some() {
        return Err(Error::State("plant already carries a perturbation".into()));
    }
    spec.validate()?;
    let mut out = base.clone();
    out.backlash = spec.backlash;
    out.sensor_noise_sigma = spec.sensor_noise_sigma;
    out.perturbation = Some(spec);
    Ok(out)
}

fn arc_tip(arc: ArcState) -> [f64; 3] {
    let theta = arc.theta_x.hypot(arc.theta_y);
    if theta < SMALL_ANGLE {
        arc_tip_series(arc.theta_x, arc.theta_y, arc.length)
    } else {
        arc_tip_exact(arc.theta_x, arc.theta_y, arc.length)
    }
}

/// Closed-form arc endpoint. `1 − cos θ` is evaluated as `2 sin²(θ/2)`.
pub(crate) fn arc_tip_exact(theta_x: f64, theta_y: f64, length: f64) -> [f64; 3] {
    let theta = theta_x.hypot(theta_y);
    let half = (0.5 * theta).sin();
    // (L/θ)(1 − cos θ) · (cos φ, sin φ), with cos φ = θx/θ, sin φ = θy/θ
    let radial = length * 2.0 * half * half / (theta * theta);
    [radial * theta_x, radial * theta_y, length * theta.sin() / theta]
}

/// Third-order Taylor expansion of [`arc_tip_exact`] around θ = 0.
pub(crate) fn arc_tip_series(theta_x: f64, theta_y: f64, length: f64) -> [f64; 3] {
    let t2 = theta_x * theta_x + theta_y * theta_y;
    let radial = length * (0.5 - t2 / 24.0);
    [radial * theta_x, radial * theta_y, length * (1.0 - t2 / 6.0)]
}

/// Rotates `v` into the end frame of `arc`.
fn rotate_by_arc(arc: ArcState, v: [f64; 3]) -> [f64; 3] {
    let theta = arc.theta_x.hypot(arc.theta_y);
    if theta == 0.0 {
        return v;
    }
    let (c, s) = (theta.cos(), theta.sin());
    // bending axis k = (−sin φ, cos φ, 0)
    let k = [-arc.theta_y / theta, arc.theta_x / theta, 0.0];
    let kv = k[0] * v[0] + k[1] * v[1];
    let cross = [k[1] * v[2], -k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    [
        v[0] * c + cross[0] * s + k[0] * kv * (1.0 - c),
        v[1] * c + cross[1] * s + k[1] * kv * (1.0 - c),
        v[2] * c + cross[2] * s,
    ]
}

pub fn encoder_counts(a: &Actuation, max_stroke: f64) -> Result<[i64; 4]> {
    let mut out = [0i64; 4];
    for (i, &v) in a.iter().enumerate() {
        if !(0.0..=max_stroke).contains(&v) {
            return Err(Error::domain(format!(
                "actuation channel {i} = {v} outside [0, {max_stroke}]"
            )));
        }
        out[i] = (v * COUNTS_PER_METER).round() as i64;
    }
    Ok(out)
}

pub fn counts_to_meters(counts: &[i64; 4]) -> Actuation {
    counts.map(|c| c as f64 / COUNTS_PER_METER)
}
