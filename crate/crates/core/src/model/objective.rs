//! One batch of the training objective: mine and mix in `z`-space, run both
//! heads on originals and generated features, combine the losses, backprop.

use rand::Rng;

use super::{backward, forward, forward_generated, GeneratedTrace, Gradients, MlpParams, Upstream};
use crate::data::SoftLabel;
use crate::error::Result;
use crate::losses::{focal_contrastive, mixed_ce, soft_cross_entropy, supervised_contrastive, total_objective, LossOutput};
use crate::numkernel::{FeatureMatrix, Matrix};
use crate::pairing::{
    augment_pair_sets, build_base_pairs, generate_hard_pairs, generate_random_mixes, GeneratedPair, MixConfig,
    PairSets,
};

/// How generated samples are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixupKind {
    /// Hard positives and hard negatives per anchor.
    Hard,
    /// Anchor mixed with a random partner; classifier only.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSettings {
    pub tau: f64,
    pub eta: f64,
    pub mix: MixConfig,
    pub mixup: MixupKind,
    pub use_contrastive: bool,
    pub use_focal: bool,
    pub use_generation: bool,
    pub use_mixed_ce: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub total: f64,
    pub ce: f64,
    pub con: f64,
    pub grads: Gradients,
    pub generated: Vec<GeneratedPair>,
    /// Pair sets over the pool `[originals; generated]`.
    pub pairs: PairSets,
    /// Contrastive features of the pool.
    pub pool_v: FeatureMatrix,
}

fn zero_loss(rows: usize, cols: usize) -> LossOutput {
    LossOutput {
        value: 0.0,
        grad: Matrix::zeros(rows, cols),
    }
}

/// Evaluates `L_ce^m + η·L_con^f` (or the ablated variant the flags select) on
/// one batch and its exact parameter gradient. `rng` is the mixing stream; its
/// draws depend on the labels only.
pub fn batch_objective<R: Rng + ?Sized>(
    params: &MlpParams,
    x: &FeatureMatrix,
    labels: &[SoftLabel],
    settings: &ObjectiveSettings,
    rng: &mut R,
) -> Result<StepOutput> {
    let fwd = forward(params, x)?;
    let n = x.rows();

    let generated = if settings.use_generation {
        match settings.mixup {
            MixupKind::Hard => generate_hard_pairs(&fwd.z, labels, &settings.mix, rng)?,
            MixupKind::Random => generate_random_mixes(&fwd.z, labels, settings.mix.alpha, rng)?,
        }
    } else {
        Vec::new()
    };
    let z_gen = if generated.is_empty() {
        Matrix::zeros(0, params.feature_dim())
    } else {
        Matrix::from_rows(&generated.iter().map(|g| g.feature.as_slice()).collect::<Vec<_>>())?
    };
    let gen_fwd = forward_generated(params, &z_gen)?;
    let gen_labels: Vec<SoftLabel> = generated.iter().map(|g| g.label.clone()).collect();
    let m = generated.len();
    let k = params.classes();

    let ce = if settings.use_mixed_ce {
        mixed_ce(&fwd.logits, labels, &gen_fwd.logits, &gen_labels)?
    } else {
        let plain = soft_cross_entropy(&fwd.logits, labels)?;
        LossOutput {
            value: plain.value,
            grad: plain.grad.vstack(&Matrix::zeros(m, k))?,
        }
    };

    let pool_v = fwd.v.vstack(&gen_fwd.v)?;
    let pairs = augment_pair_sets(&build_base_pairs(labels)?, &generated);
    let con = if settings.use_contrastive {
        if settings.use_focal {
            focal_contrastive(&pool_v, &pairs, settings.tau)?
        } else {
            supervised_contrastive(&pool_v, &pairs, settings.tau)?
        }
    } else {
        zero_loss(pool_v.rows(), pool_v.cols())
    };

    let total = total_objective(&ce, &con, settings.eta)?;
    let d_logits = total.grad_logits.slice_rows(0, n);
    let d_logits_gen = total.grad_logits.slice_rows(n, n + m);
    let d_v = total.grad_v.slice_rows(0, n);
    let d_v_gen = total.grad_v.slice_rows(n, n + m);
    let up = Upstream {
        d_logits: &d_logits,
        d_v: &d_v,
        d_logits_gen: &d_logits_gen,
        d_v_gen: &d_v_gen,
    };
    let grads = backward(
        params,
        &fwd,
        Some(GeneratedTrace {
            forward: &gen_fwd,
            pairs: &generated,
        }),
        up,
    )?;

    Ok(StepOutput {
        total: total.value,
        ce: total.ce_value,
        con: total.con_value,
        grads,
        generated,
        pairs,
        pool_v,
    })
}
