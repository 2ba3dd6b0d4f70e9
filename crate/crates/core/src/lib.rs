//! Inverse-kinematics learning for tendon-driven continuum manipulators:
//! a PCC plant simulator, a small exact-gradient MLP core, MAML training and
//! few-step adaptation, conditional-GAN data synthesis, and the evaluation
//! harness tying them together.

pub mod cgan;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod exec;
pub mod grad;
pub mod linalg;
pub mod meta;
pub mod mlp;
pub mod pipeline;
pub mod plant;
pub mod sine;

pub use error::{Error, Result};
pub use exec::Exec;
