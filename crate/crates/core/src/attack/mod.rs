//! The Type I attack engine: image-transition loss, the full attack
//! objective with its adaptive equilibrium weight, the latent-space attack,
//! and the FGSM Type II baseline.
//!
//! A Type I attack steers the SVAE latent code until the oracle (the latent
//! classifier f₂) assigns the target class while the attacked classifier f₁
//! keeps its original output on the decoded image.

pub mod fgsm;
pub mod latent;

use serde::{Deserialize, Serialize};

use crate::backbone::gradcheck::{bind_params, BoundParams};
use crate::backbone::tensor::argmax;
use crate::backbone::{adam_step, AdamState, NodeId, ParamSet, Scalar, Tape, Tensor};
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::models::embedding::embedding_distance;
use crate::models::{EmbeddingNet, ImageClassifier, SvaeBundle};

pub use fgsm::{fgsm, fgsm_embedding};
pub use latent::{latent_space_attack, LatentAttackConfig, LatentAttackResult};

/// How the equilibrium hyperparameter β is chosen per step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaMode {
    /// The stated constant (default 0.001).
    Fixed { value: f64 },
    /// β = J₂/J₁ recomputed each step; the βJ₁ − J₂ term then cancels and
    /// only the hinge drives k. Falls back to the fixed default when J₁ = 0.
    Adaptive,
}

pub const DEFAULT_FIXED_BETA: f64 = 0.001;

/// Hyperparameters of the iterative Type I attack.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Weight on the discriminator term of the transition loss.
    pub alpha: f64,
    /// Weight on the latent-norm regularizer.
    pub gamma: f64,
    /// Update rate of the equilibrium weight k.
    pub eta: f64,
    pub beta: BetaMode,
    /// Target loss Ĵ₁ for the attacked classifier (0.01 cross-entropy for
    /// classification, 1.00 distance for recognition).
    pub j1_target: f64,
    /// Upper clip of k.
    pub k_clip: f64,
    /// Adam learning rate on the latent.
    pub lr: f64,
    pub max_iterations: usize,
    pub convergence_window: usize,
    pub convergence_rel_change: f64,
    /// Use ‖z‖₂² instead of the literal unsquared norm.
    pub squared_latent_norm: bool,
    /// Record a decoded snapshot every n iterations (for image strips).
    pub snapshot_every: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 0.01,
            gamma: 1e-4,
            eta: 0.01,
            beta: BetaMode::Fixed {
                value: DEFAULT_FIXED_BETA,
            },
            j1_target: 0.01,
            k_clip: 0.005,
            lr: 0.005,
            max_iterations: 500,
            convergence_window: 20,
            convergence_rel_change: 1e-4,
            squared_latent_norm: false,
            snapshot_every: None,
        }
    }
}

impl AttackConfig {
    pub fn recognition() -> Self {
        AttackConfig {
            j1_target: 1.0,
            ..AttackConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("j1_target", self.j1_target),
            ("k_clip", self.k_clip),
            ("lr", self.lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Contract(format!(
                    "attack config field `{name}` must be positive, got {v}"
                )));
            }
        }
        if let BetaMode::Fixed { value } = self.beta {
            if !(value > 0.0) {
                return Err(Error::Contract("fixed beta must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One recorded iteration of an attack.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceStep {
    pub j1: f64,
    pub j2: f64,
    pub f_dis: f64,
    pub k: f64,
    /// Classification: f₁'s probability of the original class on x′.
    /// Recognition: embedding distance to the reference.
    pub f1_confidence: f64,
    pub j_sa: f64,
}

/// Full outcome of one attack run.
#[derive(Clone, Debug)]
pub struct AttackResult<F: Scalar> {
    pub final_z: Vec<F>,
    pub final_image: Vec<F>,
    pub trace: Vec<TraceStep>,
    pub success: bool,
    pub f2_reached_target: bool,
    pub f1_criterion_held: bool,
    pub iterations: usize,
    /// Attack aborted on a non-finite loss; trace holds the prefix.
    pub diverged: bool,
    /// (iteration, decoded image) pairs when snapshots were requested.
    pub snapshots: Vec<(usize, Vec<F>)>,
}

/// The frozen classifier under attack, reduced to what the engine needs:
/// a J₁ builder, the success criterion, and a trace statistic.
pub trait AttackTarget<F: Scalar>: Sync {
    /// Scalar J₁ node for a decoded-image node `[1, pixels]`.
    fn j1_into(&self, tape: &mut Tape<F>, x_prime: NodeId) -> NodeId;
    /// Whether f₁ still gives x′ the original's output.
    fn criterion_met(&self, x_prime: &[F]) -> bool;
    /// Trace statistic (class confidence or embedding distance).
    fn trace_confidence(&self, x_prime: &[F]) -> f64;
    /// Digest of the frozen parameters, for the no-mutation contract.
    fn params_digest(&self) -> String;
}

/// Classification-task target: J₁ = −y·log f₁(x′) against the original label.
pub struct ClassificationTarget<'a, F: Scalar, C: ImageClassifier<F>> {
    pub f1: &'a C,
    pub original_label: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<'a, F: Scalar, C: ImageClassifier<F>> ClassificationTarget<'a, F, C> {
    pub fn new(f1: &'a C, original_label: usize) -> Self {
        ClassificationTarget {
            f1,
            original_label,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<F: Scalar, C: ImageClassifier<F>> AttackTarget<F> for ClassificationTarget<'_, F, C> {
    fn j1_into(&self, tape: &mut Tape<F>, x_prime: NodeId) -> NodeId {
        let bound = bind_params(tape, self.f1.params(), false);
        let logits = self.f1.logits_into(tape, x_prime, &bound);
        let mut y = Tensor::zeros(vec![1, self.f1.class_count()]);
        y.data[self.original_label] = F::ONE;
        let yi = tape.constant(y);
        let ce = tape.softmax_cross_entropy(logits, yi);
        tape.mean_all(ce)
    }

    fn criterion_met(&self, x_prime: &[F]) -> bool {
        let probs = crate::models::probabilities_batch(self.f1, x_prime, 1);
        argmax(&probs.data) == self.original_label
    }

    fn trace_confidence(&self, x_prime: &[F]) -> f64 {
        let probs = crate::models::probabilities_batch(self.f1, x_prime, 1);
        probs.data[self.original_label].to_f64()
    }

    fn params_digest(&self) -> String {
        self.f1.params().digest()
    }
}

/// Recognition-task target: J₁ = ‖f₁(x′) − f₁(x_ref)‖₂ on unit embeddings.
pub struct RecognitionTarget<'a, F: Scalar> {
    pub net: &'a EmbeddingNet<F>,
    pub reference_embedding: Vec<F>,
    pub threshold: f64,
}

impl<'a, F: Scalar> RecognitionTarget<'a, F> {
    pub fn new(net: &'a EmbeddingNet<F>, reference_image: &[F], threshold: f64) -> Self {
        RecognitionTarget {
            net,
            reference_embedding: net.embed_one(reference_image),
            threshold,
        }
    }
}

impl<F: Scalar> AttackTarget<F> for RecognitionTarget<'_, F> {
    fn j1_into(&self, tape: &mut Tape<F>, x_prime: NodeId) -> NodeId {
        let bound = bind_params(tape, &self.net.params, false);
        let e = self.net.embed_into(tape, x_prime, &bound);
        let r = tape.constant(Tensor::new(
            self.reference_embedding.clone(),
            vec![1, self.net.embed_dim],
        ));
        let diff = tape.sub(e, r);
        let sq = tape.square(diff);
        let ssq = tape.sum_rows(sq);
        let d = tape.sqrt(ssq);
        tape.mean_all(d)
    }

    fn criterion_met(&self, x_prime: &[F]) -> bool {
        self.trace_confidence(x_prime) < self.threshold
    }

    fn trace_confidence(&self, x_prime: &[F]) -> f64 {
        let e = self.net.embed_one(x_prime);
        embedding_distance(&e, &self.reference_embedding)
    }

    fn params_digest(&self) -> String {
        self.net.params.digest()
    }
}

/// J₁ for classification tasks: cross-entropy of f₁(x′) against the original
/// label (low means f₁ still believes the original class).
pub fn j1_classification<F: Scalar, C: ImageClassifier<F>>(
    x_prime: &[F],
    y: usize,
    f1: &C,
) -> f64 {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(x_prime.to_vec(), vec![1, x_prime.len()]));
    let target = ClassificationTarget::new(f1, y);
    let j1 = target.j1_into(&mut tape, x);
    tape.value(j1).item().to_f64()
}

/// J₁ for recognition tasks: embedding distance to the reference image.
pub fn j1_recognition<F: Scalar>(x_prime: &[F], x_ref: &[F], net: &EmbeddingNet<F>) -> f64 {
    net.distance(x_prime, x_ref)
}

/// Node ids of the transition-loss terms.
pub struct TransitionNodes {
    pub j2: NodeId,
    pub dis_term: NodeId,
    pub norm_term: NodeId,
    pub total: NodeId,
    pub f_dis: NodeId,
}

/// Image-transition loss J_IT = −y′·log f₂(z) + α(1 − f_dis(z)) + γ‖z‖₂
/// for a latent node `[1, L]`. The norm is the literal unsquared L2 unless
/// `squared_latent_norm` is set.
pub fn transition_loss_into<F: Scalar>(
    tape: &mut Tape<F>,
    bundle: &SvaeBundle<F>,
    cls: &BoundParams,
    dis: &BoundParams,
    z: NodeId,
    y_target: usize,
    cfg: &AttackConfig,
) -> TransitionNodes {
    let logits = bundle.classify_into(tape, z, cls);
    let y = tape.constant(one_hot(&[y_target as u8], bundle.classes));
    let ce = tape.softmax_cross_entropy(logits, y);
    let j2 = tape.mean_all(ce);

    let f_dis = bundle.discriminate_into(tape, z, dis);
    let f_dis_mean = tape.mean_all(f_dis);
    let dis_term = tape.scale_shift(f_dis_mean, -cfg.alpha, cfg.alpha);

    let sq = tape.square(z);
    let ssq = tape.sum_rows(sq);
    let ssq = tape.mean_all(ssq);
    let norm = if cfg.squared_latent_norm {
        ssq
    } else {
        tape.sqrt(ssq)
    };
    let norm_term = tape.scale_shift(norm, cfg.gamma, 0.0);

    let partial = tape.add(j2, dis_term);
    let total = tape.add(partial, norm_term);
    TransitionNodes {
        j2,
        dis_term,
        norm_term,
        total,
        f_dis: f_dis_mean,
    }
}

/// Forward-only transition-loss value.
pub fn transition_loss<F: Scalar>(
    z: &[F],
    y_target: usize,
    bundle: &SvaeBundle<F>,
    cfg: &AttackConfig,
) -> f64 {
    let mut tape = Tape::new();
    let cls = bind_params(&mut tape, &bundle.classifier, false);
    let dis = bind_params(&mut tape, &bundle.discriminator, false);
    let zi = tape.constant(Tensor::new(z.to_vec(), vec![1, bundle.latent]));
    let nodes = transition_loss_into(&mut tape, bundle, &cls, &dis, zi, y_target, cfg);
    tape.value(nodes.total).item().to_f64()
}

/// Node ids of the full attack objective.
pub struct SaNodes {
    pub transition: TransitionNodes,
    pub j1: NodeId,
    pub total: NodeId,
    pub x_prime: NodeId,
}

/// Full attack objective J_SA = J_IT + k·J₁(f_dec(z), ·) built on one tape.
#[allow(clippy::too_many_arguments)]
pub fn sa_loss_into<F: Scalar>(
    tape: &mut Tape<F>,
    bundle: &SvaeBundle<F>,
    cls: &BoundParams,
    dis: &BoundParams,
    dec: &BoundParams,
    z: NodeId,
    y_target: usize,
    k: f64,
    target: &impl AttackTarget<F>,
    cfg: &AttackConfig,
) -> SaNodes {
    let transition = transition_loss_into(tape, bundle, cls, dis, z, y_target, cfg);
    let x_prime = bundle.decode_into(tape, z, dec);
    let j1 = target.j1_into(tape, x_prime);
    let weighted = tape.scale_shift(j1, k, 0.0);
    let total = tape.add(transition.total, weighted);
    SaNodes {
        transition,
        j1,
        total,
        x_prime,
    }
}

/// Forward-only J_SA value and its components `(total, j1, j2, f_dis)`.
pub fn sa_loss<F: Scalar>(
    z: &[F],
    y_target: usize,
    k: f64,
    bundle: &SvaeBundle<F>,
    target: &impl AttackTarget<F>,
    cfg: &AttackConfig,
) -> (f64, f64, f64, f64) {
    let mut tape = Tape::new();
    let cls = bind_params(&mut tape, &bundle.classifier, false);
    let dis = bind_params(&mut tape, &bundle.discriminator, false);
    let dec = bind_params(&mut tape, &bundle.decoder, false);
    let zi = tape.constant(Tensor::new(z.to_vec(), vec![1, bundle.latent]));
    let nodes = sa_loss_into(&mut tape, bundle, &cls, &dis, &dec, zi, y_target, k, target, cfg);
    (
        tape.value(nodes.total).item().to_f64(),
        tape.value(nodes.j1).item().to_f64(),
        tape.value(nodes.transition.j2).item().to_f64(),
        tape.value(nodes.transition.f_dis).item().to_f64(),
    )
}

/// Self-adaptive equilibrium-weight update:
/// k ← clamp(k + η(β·J₁ − J₂ + max{J₁ − Ĵ₁, 0}), 0, clip).
pub fn update_equilibrium_weight(k: f64, j1: f64, j2: f64, cfg: &AttackConfig) -> f64 {
    let beta = match cfg.beta {
        BetaMode::Fixed { value } => value,
        BetaMode::Adaptive => {
            if j1 == 0.0 {
                DEFAULT_FIXED_BETA
            } else {
                j2 / j1
            }
        }
    };
    let hinge = (j1 - cfg.j1_target).max(0.0);
    (k + cfg.eta * (beta * j1 - j2 + hinge)).clamp(0.0, cfg.k_clip)
}

/// Run the iterative Type I attack from input `x` with original label `y`
/// toward oracle label `y_target`.
///
/// Starts at z₀ = μ(x), performs Adam steps on z against J_SA, decodes x′
/// and updates k each iteration, and stops on the relative-change window or
/// the iteration cap. Success requires f₂(z) = y_target *and* the target's
/// f₁ criterion. A non-finite loss aborts with the partial trace and
/// `diverged` set.
pub fn type1_attack<F: Scalar>(
    x: &[F],
    y: usize,
    y_target: usize,
    target: &impl AttackTarget<F>,
    bundle: &SvaeBundle<F>,
    cfg: &AttackConfig,
) -> Result<AttackResult<F>> {
    cfg.validate()?;
    if x.len() != bundle.pixels() {
        return Err(Error::ShapeMismatch {
            name: "attack input".into(),
            expected: vec![bundle.pixels()],
            got: vec![x.len()],
        });
    }
    let digest_before = target.params_digest();

    let z0 = bundle.encode_mu(x, 1).data;
    let mut z_params = ParamSet::new();
    z_params.insert("z", Tensor::new(z0, vec![1, bundle.latent]));
    let mut adam = AdamState::new(&z_params, cfg.lr);
    let mut k = 0.0f64;
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut snapshots = Vec::new();
    let mut diverged = false;
    let mut iterations = 0usize;

    for t in 0..cfg.max_iterations {
        // one Adam step on z against J_SA at the current k
        let mut tape = Tape::new();
        let cls = bind_params(&mut tape, &bundle.classifier, false);
        let dis = bind_params(&mut tape, &bundle.discriminator, false);
        let dec = bind_params(&mut tape, &bundle.decoder, false);
        let z_node = tape.leaf(z_params.get("z").clone(), true);
        let nodes = sa_loss_into(
            &mut tape, bundle, &cls, &dis, &dec, z_node, y_target, k, target, cfg,
        );
        let loss_now = tape.value(nodes.total).item();
        if !loss_now.is_finite() {
            diverged = true;
            break;
        }
        let grads = tape.backward(nodes.total);
        let mut gset = ParamSet::new();
        gset.insert("z", grads.of(z_node, &[1, bundle.latent]));
        let (next_z, next_adam) = adam_step(&z_params, &gset, &adam)?;
        z_params = next_z;
        adam = next_adam;
        iterations = t + 1;

        // evaluate the new iterate, update k, record the trace
        let z_now = &z_params.get("z").data;
        let mut eval = Tape::new();
        let cls = bind_params(&mut eval, &bundle.classifier, false);
        let dis = bind_params(&mut eval, &bundle.discriminator, false);
        let dec = bind_params(&mut eval, &bundle.decoder, false);
        let zi = eval.constant(Tensor::new(z_now.clone(), vec![1, bundle.latent]));
        let nodes =
            sa_loss_into(&mut eval, bundle, &cls, &dis, &dec, zi, y_target, k, target, cfg);
        let j1 = eval.value(nodes.j1).item().to_f64();
        let j2 = eval.value(nodes.transition.j2).item().to_f64();
        let f_dis = eval.value(nodes.transition.f_dis).item().to_f64();
        let j_sa = eval.value(nodes.total).item().to_f64();
        let x_prime_now = eval.value(nodes.x_prime).data.clone();
        if !j_sa.is_finite() {
            diverged = true;
            break;
        }
        k = update_equilibrium_weight(k, j1, j2, cfg);
        trace.push(TraceStep {
            j1,
            j2,
            f_dis,
            k,
            f1_confidence: target.trace_confidence(&x_prime_now),
            j_sa,
        });
        if let Some(every) = cfg.snapshot_every {
            if every > 0 && t % every == 0 {
                snapshots.push((t, x_prime_now));
            }
        }

        // relative-change convergence over the trailing window
        let w = cfg.convergence_window;
        if w > 1 && trace.len() >= w {
            let tail = &trace[trace.len() - w..];
            let max = tail.iter().map(|s| s.j_sa).fold(f64::MIN, f64::max);
            let min = tail.iter().map(|s| s.j_sa).fold(f64::MAX, f64::min);
            let scale = trace.last().unwrap().j_sa.abs().max(1e-12);
            if (max - min) / scale < cfg.convergence_rel_change {
                break;
            }
        }
    }

    let final_z = z_params.get("z").data.clone();
    let final_image = bundle.decode(&final_z, 1).data;
    let f2_label = bundle.classify_labels(&final_z, 1)[0];
    let f2_reached_target = f2_label == y_target;
    let f1_criterion_held = target.criterion_met(&final_image);
    let success = !diverged && f2_reached_target && f1_criterion_held && y_target != y;

    assert_eq!(
        target.params_digest(),
        digest_before,
        "attacked classifier parameters must stay frozen"
    );

    Ok(AttackResult {
        final_z,
        final_image,
        trace,
        success,
        f2_reached_target,
        f1_criterion_held,
        iterations,
        diverged,
        snapshots,
    })
}

/// One (original, adversarial) pair with its labels.
pub struct AttackPair<'a, F: Scalar> {
    pub x: &'a [F],
    pub x_prime: &'a [F],
    pub y: usize,
    pub y_target: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SuccessCriteria {
    /// Require f₂(x′) = y′ exactly (otherwise any change away from y counts).
    pub f2_must_hit_target: bool,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria {
            f2_must_hit_target: true,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuccessMetrics {
    pub count: usize,
    /// Condition (i): f₁'s label on x′ equals its label on x.
    pub f1_unchanged_rate: f64,
    /// Condition (ii): the oracle's label on x′ moved to the target.
    pub f2_changed_rate: f64,
    pub overall_rate: f64,
    pub per_pair: Vec<(bool, bool)>,
}

/// Re-evaluate attack outcomes from the images alone: f₁ compared between
/// x and x′, the oracle read as f₂ of the re-encoded x′.
pub fn evaluate_attack_success<F: Scalar, C: ImageClassifier<F>>(
    pairs: &[AttackPair<'_, F>],
    f1: &C,
    bundle: &SvaeBundle<F>,
    criteria: SuccessCriteria,
) -> SuccessMetrics {
    if pairs.is_empty() {
        return SuccessMetrics::default();
    }
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut both = 0usize;
    for p in pairs {
        let orig_pred = crate::models::predict(f1, p.x, 1)[0];
        let adv_pred = crate::models::predict(f1, p.x_prime, 1)[0];
        let cond_i = orig_pred == adv_pred;
        let mu = bundle.encode_mu(p.x_prime, 1).data;
        let f2_label = bundle.classify_labels(&mu, 1)[0];
        let cond_ii = if criteria.f2_must_hit_target {
            f2_label == p.y_target
        } else {
            f2_label != p.y
        };
        if cond_i && cond_ii {
            both += 1;
        }
        per_pair.push((cond_i, cond_ii));
    }
    let n = pairs.len() as f64;
    SuccessMetrics {
        count: pairs.len(),
        f1_unchanged_rate: per_pair.iter().filter(|(a, _)| *a).count() as f64 / n,
        f2_changed_rate: per_pair.iter().filter(|(_, b)| *b).count() as f64 / n,
        overall_rate: both as f64 / n,
        per_pair,
    }
}

#[cfg(test)]
mod tests;
