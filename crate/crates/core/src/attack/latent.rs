use serde::{Deserialize, Serialize};

use super::AttackTarget;
use crate::backbone::gradcheck::bind_params;
use crate::backbone::{adam_step, AdamState, ParamSet, Scalar, Tape, Tensor};
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::models::SvaeBundle;

/// Hyperparameters of the latent-space Type I attack
/// L(z′) = k·J₁(G(z′), ·) + max{ε − ‖z′ − z‖₂², 0}.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentAttackConfig {
    /// Fixed trade-off weight; never adapted during the run.
    pub k: f64,
    /// Required squared displacement in latent space.
    pub epsilon: f64,
    pub lr: f64,
    pub max_iterations: usize,
    /// Steer the generator's auxiliary latent classifier toward this class.
    pub target_class: Option<usize>,
    /// Weight of the auxiliary targeting term.
    pub aux_weight: f64,
    pub convergence_window: usize,
    pub convergence_rel_change: f64,
}

impl Default for LatentAttackConfig {
    fn default() -> Self {
        // the stated classifier-attack setting: k = 10⁻², ε = 0.1, Adam lr 0.01
        LatentAttackConfig {
            k: 1e-2,
            epsilon: 0.1,
            lr: 0.01,
            max_iterations: 300,
            target_class: None,
            aux_weight: 1.0,
            convergence_window: 20,
            convergence_rel_change: 1e-4,
        }
    }
}

impl LatentAttackConfig {
    /// The stated recognizer-attack setting: k = 10⁻³, ε = 0.35.
    pub fn recognition() -> Self {
        LatentAttackConfig {
            k: 1e-3,
            epsilon: 0.35,
            ..LatentAttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Contract("latent attack k must be positive".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Contract(
                "latent attack epsilon must be non-negative".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Contract("latent attack lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LatentAttackResult<F: Scalar> {
    pub z_prime: Vec<F>,
    pub image: Vec<F>,
    pub displacement_sq: f64,
    /// ‖z′−z‖₂² ≥ ε and the attacked classifier's criterion held.
    pub success: bool,
    pub f1_criterion_held: bool,
    pub iterations: usize,
    /// Per-iteration (L, J₁, ‖z′−z‖²).
    pub trace: Vec<(f64, f64, f64)>,
}

/// Minimize L(z′) = k·J₁(G(z′), ·) + max{ε − ‖z′−z‖₂², 0} by Adam, keeping k
/// fixed. The generator G is the bundle's decoder; when `target_class` is
/// set, the bundle's latent classifier acts as the generator's auxiliary
/// classifier and a cross-entropy term steers toward that class.
pub fn latent_space_attack<F: Scalar>(
    z: &[F],
    target: &impl AttackTarget<F>,
    generator: &SvaeBundle<F>,
    cfg: &LatentAttackConfig,
) -> Result<LatentAttackResult<F>> {
    cfg.validate()?;
    if z.len() != generator.latent {
        return Err(Error::ShapeMismatch {
            name: "latent attack input".into(),
            expected: vec![generator.latent],
            got: vec![z.len()],
        });
    }

    let mut params = ParamSet::new();
    params.insert("z", Tensor::new(z.to_vec(), vec![1, generator.latent]));
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut trace: Vec<(f64, f64, f64)> = Vec::new();
    let mut iterations = 0usize;

    for t in 0..cfg.max_iterations {
        let mut tape = Tape::new();
        let dec = bind_params(&mut tape, &generator.decoder, false);
        let z_node = tape.leaf(params.get("z").clone(), true);
        let z0 = tape.constant(Tensor::new(z.to_vec(), vec![1, generator.latent]));

        let image = generator.decode_into(&mut tape, z_node, &dec);
        let j1 = target.j1_into(&mut tape, image);
        let weighted_j1 = tape.scale_shift(j1, cfg.k, 0.0);

        let diff = tape.sub(z_node, z0);
        let sq = tape.square(diff);
        let ssq = tape.sum_rows(sq);
        let dsq = tape.mean_all(ssq);
        let deficit = tape.scale_shift(dsq, -1.0, cfg.epsilon);
        let hinge = tape.relu(deficit);

        let mut loss = tape.add(weighted_j1, hinge);
        if let Some(class) = cfg.target_class {
            let cls = bind_params(&mut tape, &generator.classifier, false);
            let logits = generator.classify_into(&mut tape, z_node, &cls);
            let y = tape.constant(one_hot(&[class as u8], generator.classes));
            let ce = tape.softmax_cross_entropy(logits, y);
            let aux = tape.mean_all(ce);
            let aux_w = tape.scale_shift(aux, cfg.aux_weight, 0.0);
            loss = tape.add(loss, aux_w);
        }

        let l_val = tape.value(loss).item().to_f64();
        let j1_val = tape.value(j1).item().to_f64();
        let dsq_val = tape.value(dsq).item().to_f64();
        if !l_val.is_finite() {
            return Err(Error::Diverged {
                step: t,
                what: "latent attack loss is non-finite".into(),
            });
        }

        let grads = tape.backward(loss);
        let mut gset = ParamSet::new();
        gset.insert("z", grads.of(z_node, &[1, generator.latent]));
        let (next, next_adam) = adam_step(&params, &gset, &adam)?;
        params = next;
        adam = next_adam;
        iterations = t + 1;
        trace.push((l_val, j1_val, dsq_val));

        let w = cfg.convergence_window;
        if w > 1 && trace.len() >= w {
            let tail = &trace[trace.len() - w..];
            let max = tail.iter().map(|s| s.0).fold(f64::MIN, f64::max);
            let min = tail.iter().map(|s| s.0).fold(f64::MAX, f64::min);
            let scale = tail.last().unwrap().0.abs().max(1e-12);
            if (max - min) / scale < cfg.convergence_rel_change {
                break;
            }
        }
    }

    let z_prime = params.get("z").data.clone();
    let image = generator.decode(&z_prime, 1).data;
    let displacement_sq: f64 = z_prime
        .iter()
        .zip(z)
        .map(|(a, b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum();
    let f1_criterion_held = target.criterion_met(&image);
    let success = displacement_sq >= cfg.epsilon && f1_criterion_held;

    Ok(LatentAttackResult {
        z_prime,
        image,
        displacement_sq,
        success,
        f1_criterion_held,
        iterations,
        trace,
    })
}
