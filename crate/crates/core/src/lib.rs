//! Type I adversarial attack toolkit.
//!
//! Generates adversarial examples that are *significantly changed* from the
//! original input yet keep the attacked classifier's output fixed, in contrast
//! to the familiar small-perturbation (Type II) attacks. The generator is a
//! supervised variational autoencoder whose latent code is steered by gradient
//! descent; the toolkit also ships the concentric-spheres toy experiment, an
//! FGSM baseline, and the feature-squeezing / adversarial-training /
//! logit-pairing defense harness used to compare the two attack families.

pub mod attack;
pub mod backbone;
pub mod data;
pub mod defense;
pub mod error;
pub mod models;
pub mod oracles;
pub mod sphere;
pub mod svae;

pub use error::{Error, Result};
