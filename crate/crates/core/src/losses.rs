//! Contrastive, focal contrastive and soft-label cross-entropy losses with
//! analytic gradients.
//!
//! Contrastive losses average over anchors that have at least one positive;
//! anchors with an empty `P_i` are left out of both the sum and the divisor.
//! If no anchor has a positive the loss is 0 with a zero gradient.

use crate::data::SoftLabel;
use crate::error::{Error, Result};
use crate::numkernel::{dot, log_sum_exp, FeatureMatrix, Matrix};
use crate::pairing::PairSets;

/// Loss value and its gradient with respect to the differentiated input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

/// `p[i][k]` for each candidate `A_i[k]` of anchor `i`; `None` for anchors
/// without candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: Vec<Option<Vec<f64>>>,
}

impl ProbMatrix {
    /// Probabilities aligned with `PairSets::candidates(i)`.
    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows[i].as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn check_inputs(v: &FeatureMatrix, pairs: &PairSets, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if v.rows() != pairs.pool_size() {
        return Err(Error::Shape(format!(
            "{} feature rows for a pool of {}",
            v.rows(),
            pairs.pool_size()
        )));
    }
    Ok(())
}

/// Scaled similarities `v_i·v_k/τ` over `A_i` and their log-softmax.
fn anchor_log_probs(v: &FeatureMatrix, pairs: &PairSets, tau: f64, i: usize) -> Result<Vec<f64>> {
    let logits: Vec<f64> = pairs
        .candidates(i)
        .iter()
        .map(|&k| dot(v.row(i), v.row(k)) / tau)
        .collect();
    let lse = log_sum_exp(&logits)?;
    Ok(logits.into_iter().map(|s| s - lse).collect())
}

/// Row-wise softmax over each anchor's candidates.
pub fn contrast_prob_matrix(v: &FeatureMatrix, pairs: &PairSets, tau: f64) -> Result<ProbMatrix> {
    check_inputs(v, pairs, tau)?;
    let mut rows = Vec::with_capacity(pairs.anchor_count());
    for i in 0..pairs.anchor_count() {
        if pairs.candidates(i).is_empty() {
            rows.push(None);
        } else {
            let lp = anchor_log_probs(v, pairs, tau, i)?;
            rows.push(Some(lp.into_iter().map(f64::exp).collect()));
        }
    }
    Ok(ProbMatrix { rows })
}

fn contrastive(v: &FeatureMatrix, pairs: &PairSets, tau: f64, focal: bool) -> Result<LossOutput> {
    check_inputs(v, pairs, tau)?;
    let mut grad = Matrix::zeros(v.rows(), v.cols());
    let active: Vec<usize> = (0..pairs.anchor_count())
        .filter(|&i| !pairs.positives(i).is_empty())
        .collect();
    if active.is_empty() {
        return Ok(LossOutput { value: 0.0, grad });
    }
    let inv_anchors = 1.0 / active.len() as f64;

    let mut value = 0.0;
    for &i in &active {
        let cand = pairs.candidates(i);
        let pos = pairs.positives(i);
        let inv_pos = 1.0 / pos.len() as f64;
        let log_p = anchor_log_probs(v, pairs, tau, i)?;
        let p: Vec<f64> = log_p.iter().map(|x| x.exp()).collect();
        let slot: Vec<usize> = pos
            .iter()
            .map(|j| cand.iter().position(|k| k == j).expect("positive outside candidates"))
            .collect();

        // dL_i/ds_k for every candidate slot k
        let mut d_logit = vec![0.0; cand.len()];
        let mut term = 0.0;
        if focal {
            let mut w_sum = 0.0;
            for &s in &slot {
                term += (1.0 - p[s]) * log_p[s];
                let w = (1.0 - p[s]) - p[s] * log_p[s];
                d_logit[s] -= inv_pos * w;
                w_sum += w;
            }
            for (d, pk) in d_logit.iter_mut().zip(&p) {
                *d += inv_pos * pk * w_sum;
            }
        } else {
            for &s in &slot {
                term += log_p[s];
                d_logit[s] -= inv_pos;
            }
            for (d, pk) in d_logit.iter_mut().zip(&p) {
                *d += pk;
            }
        }
        value -= inv_anchors * inv_pos * term;

        for (&k, d) in cand.iter().zip(&d_logit) {
            let c = inv_anchors * d / tau;
            for t in 0..v.cols() {
                let (vi, vk) = (v[(i, t)], v[(k, t)]);
                grad[(i, t)] += c * vk;
                grad[(k, t)] += c * vi;
            }
        }
    }
    Ok(LossOutput { value, grad })
}

/// Supervised contrastive loss `−1/n' Σ_i 1/|P_i| Σ_{j∈P_i} log p_ij`.
pub fn supervised_contrastive(v: &FeatureMatrix, pairs: &PairSets, tau: f64) -> Result<LossOutput> {
    contrastive(v, pairs, tau, false)
}

/// Focal contrastive loss: each `log p_ij` term weighted by `(1 − p_ij)`,
/// differentiated through the weight.
pub fn focal_contrastive(v: &FeatureMatrix, pairs: &PairSets, tau: f64) -> Result<LossOutput> {
    contrastive(v, pairs, tau, true)
}

/// Mean over rows of `−Σ_k t_k log softmax(l)_k`. Empty input gives 0.
pub fn soft_cross_entropy(logits: &Matrix, targets: &[SoftLabel]) -> Result<LossOutput> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if targets.is_empty() {
        return Ok(LossOutput { value: 0.0, grad });
    }
    let inv_n = 1.0 / targets.len() as f64;
    let mut value = 0.0;
    for (i, t) in targets.iter().enumerate() {
        if t.class_count() != logits.cols() {
            return Err(Error::Shape(format!(
                "target {i} has {} classes, logits have {}",
                t.class_count(),
                logits.cols()
            )));
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row)?;
        let mass: f64 = t.probs().iter().sum();
        let mut loss = 0.0;
        for (k, (&l, &tk)) in row.iter().zip(t.probs()).enumerate() {
            loss -= tk * (l - lse);
            grad[(i, k)] = inv_n * (mass * (l - lse).exp() - tk);
        }
        value += inv_n * loss;
    }
    Ok(LossOutput { value, grad })
}

/// `CE(originals) + CE(generated)`, each term a mean over its own rows. The
/// gradient stacks original rows above generated rows.
pub fn mixed_ce(
    logits_orig: &Matrix,
    labels_orig: &[SoftLabel],
    logits_gen: &Matrix,
    labels_gen: &[SoftLabel],
) -> Result<LossOutput> {
    let orig = soft_cross_entropy(logits_orig, labels_orig)?;
    let gen = soft_cross_entropy(logits_gen, labels_gen)?;
    Ok(LossOutput {
        value: orig.value + gen.value,
        grad: orig.grad.vstack(&gen.grad)?,
    })
}

/// `ce + η·con`, keeping the two gradients on their own inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalObjective {
    pub value: f64,
    pub ce_value: f64,
    pub con_value: f64,
    /// dLoss/dlogits for the stacked original and generated rows.
    pub grad_logits: Matrix,
    /// dLoss/dv for the contrastive feature pool.
    pub grad_v: Matrix,
}

pub fn total_objective(ce: &LossOutput, con: &LossOutput, eta: f64) -> Result<TotalObjective> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("eta must be >= 0, got {eta}")));
    }
    let mut grad_v = con.grad.clone();
    grad_v.scale(eta);
    Ok(TotalObjective {
        value: ce.value + eta * con.value,
        ce_value: ce.value,
        con_value: con.value,
        grad_logits: ce.grad.clone(),
        grad_v,
    })
}
