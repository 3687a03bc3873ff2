//! Pair sets, hard-pair mining and hardness-directed mixup.
//!
//! Mining and mixing work on encoder features `z` of the original batch. Each
//! anchor gets at most one generated hard positive and one generated hard
//! negative; they are appended to the feature pool after the `n` originals
//! and only enter the pair sets of their own anchor.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::SoftLabel;
use crate::error::{Error, Result};
use crate::numkernel::{cosine_sim_matrix, FeatureMatrix, SimMatrix};

/// Per-anchor positive (`P_i`) and candidate (`A_i`) index lists over a pool of
/// `pool_size` features. Only the first `anchor_count()` pool rows are anchors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    positives: Vec<Vec<usize>>,
    candidates: Vec<Vec<usize>>,
    pool_size: usize,
}

impl PairSets {
    pub fn new(positives: Vec<Vec<usize>>, candidates: Vec<Vec<usize>>, pool_size: usize) -> Result<Self> {
        if positives.len() != candidates.len() {
            return Err(Error::Shape("positive and candidate lists differ in length".into()));
        }
        for (i, (p, a)) in positives.iter().zip(&candidates).enumerate() {
            if p.contains(&i) || a.contains(&i) {
                return Err(Error::InvalidArgument(format!("anchor {i} pairs with itself")));
            }
            if let Some(j) = p.iter().find(|j| !a.contains(j)) {
                return Err(Error::InvalidArgument(format!("positive {j} of anchor {i} is not a candidate")));
            }
            if a.iter().any(|&j| j >= pool_size) {
                return Err(Error::InvalidArgument(format!("anchor {i} indexes past the pool")));
            }
        }
        Ok(Self {
            positives,
            candidates,
            pool_size,
        })
    }

    #[inline]
    pub fn anchor_count(&self) -> usize {
        self.positives.len()
    }

    #[inline]
    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    #[inline]
    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    #[inline]
    pub fn pool_size(&self) -> usize {
        self.pool_size
    }
}

/// `P_i` = other samples of the same class, `A_i` = every other sample.
pub fn build_base_pairs(labels: &[SoftLabel]) -> Result<PairSets> {
    if let Some(i) = labels.iter().position(|l| !l.is_one_hot()) {
        return Err(Error::InvalidArgument(format!(
            "label {i} is not one-hot; positives are defined for original samples only"
        )));
    }
    let n = labels.len();
    let classes: Vec<usize> = labels.iter().map(SoftLabel::class).collect();
    let mut positives = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    for i in 0..n {
        positives.push((0..n).filter(|&j| j != i && classes[j] == classes[i]).collect());
        candidates.push((0..n).filter(|&j| j != i).collect());
    }
    Ok(PairSets {
        positives,
        candidates,
        pool_size: n,
    })
}

/// Same-class sample least similar to anchor `i`; ties to the smallest index.
pub fn hardest_positive(sim: &SimMatrix, labels: &[SoftLabel], i: usize) -> Option<usize> {
    let class = labels[i].class();
    let mut best: Option<usize> = None;
    for j in (0..labels.len()).filter(|&j| j != i && labels[j].class() == class) {
        if best.is_none_or(|b| sim.get(i, j) < sim.get(i, b)) {
            best = Some(j);
        }
    }
    best
}

/// Other-class sample most similar to anchor `i`; ties to the smallest index.
pub fn hardest_negative(sim: &SimMatrix, labels: &[SoftLabel], i: usize) -> Option<usize> {
    let class = labels[i].class();
    let mut best: Option<usize> = None;
    for j in (0..labels.len()).filter(|&j| labels[j].class() != class) {
        if best.is_none_or(|b| sim.get(i, j) > sim.get(i, b)) {
            best = Some(j);
        }
    }
    best
}

/// `max(u, clip_min)` with `u = g1 / (g1 + g2)`, `g1, g2 ~ Gamma(alpha, 1)`,
/// i.e. a clipped `Beta(alpha, alpha)` draw.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, clip_min: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    loop {
        let g1 = gamma.sample(rng);
        let g2 = gamma.sample(rng);
        // both can underflow to zero for very small alpha
        if g1 + g2 > 0.0 {
            return Ok((g1 / (g1 + g2)).max(clip_min));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    HardPositive,
    HardNegative,
    /// Plain mixup of an anchor with a random batch partner; classifier only.
    RandomMix,
}

/// One original sample used as a mixing ingredient.
#[derive(Debug, Clone, Copy)]
pub struct Constituent<'a> {
    pub index: usize,
    pub feature: &'a [f64],
    pub label: &'a SoftLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPair {
    pub feature: Vec<f64>,
    pub label: SoftLabel,
    pub kind: PairKind,
    pub anchor: usize,
    pub lambda: f64,
    /// Original batch rows mixed into `feature`, in the order of [`Self::weights`].
    pub constituents: (usize, usize),
}

impl GeneratedPair {
    /// `(row, weight)` for both constituents; `feature = Σ weight · z[row]`.
    pub fn weights(&self) -> [(usize, f64); 2] {
        let (a, b) = self.constituents;
        match self.kind {
            PairKind::HardPositive | PairKind::RandomMix => [(a, self.lambda), (b, 1.0 - self.lambda)],
            PairKind::HardNegative => [(a, 1.0 - self.lambda), (b, self.lambda)],
        }
    }
}

fn mix(a: &Constituent, wa: f64, b: &Constituent, wb: f64) -> Result<(Vec<f64>, SoftLabel)> {
    if a.feature.len() != b.feature.len() {
        return Err(Error::Shape(format!(
            "mixing features of length {} and {}",
            a.feature.len(),
            b.feature.len()
        )));
    }
    let feature = a.feature.iter().zip(b.feature).map(|(x, y)| wa * x + wb * y).collect();
    Ok((feature, SoftLabel::mix(a.label, wa, b.label, wb)?))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `λ·hp + (1−λ)·hn` for features and labels.
pub fn gen_hard_positive(anchor: usize, hp: Constituent, hn: Constituent, lambda: f64) -> Result<GeneratedPair> {
    check_lambda(lambda)?;
    let (feature, label) = mix(&hp, lambda, &hn, 1.0 - lambda)?;
    Ok(GeneratedPair {
        feature,
        label,
        kind: PairKind::HardPositive,
        anchor,
        lambda,
        constituents: (hp.index, hn.index),
    })
}

/// `(1−λ)·anchor + λ·negative` for features and labels.
pub fn gen_hard_negative(anchor: Constituent, negative: Constituent, lambda: f64) -> Result<GeneratedPair> {
    check_lambda(lambda)?;
    let (feature, label) = mix(&anchor, 1.0 - lambda, &negative, lambda)?;
    Ok(GeneratedPair {
        feature,
        label,
        kind: PairKind::HardNegative,
        anchor: anchor.index,
        lambda,
        constituents: (anchor.index, negative.index),
    })
}

/// Appends `generated` to the pool after the base originals. A hard positive
/// joins its anchor's `P_i` and `A_i`, a hard negative only `A_i`.
pub fn augment_pair_sets(base: &PairSets, generated: &[GeneratedPair]) -> PairSets {
    let mut out = base.clone();
    let n = base.pool_size;
    for (g, pair) in generated.iter().enumerate() {
        let idx = n + g;
        match pair.kind {
            PairKind::HardPositive => {
                out.positives[pair.anchor].push(idx);
                out.candidates[pair.anchor].push(idx);
            }
            PairKind::HardNegative => out.candidates[pair.anchor].push(idx),
            PairKind::RandomMix => {}
        }
    }
    out.pool_size = n + generated.len();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixConfig {
    pub alpha: f64,
    /// Lower clip for hard-negative λ.
    pub lambda_n: f64,
    /// Lower clip for hard-positive λ.
    pub lambda_p: f64,
}

fn constituent<'a>(z: &'a FeatureMatrix, labels: &'a [SoftLabel], index: usize) -> Constituent<'a> {
    Constituent {
        index,
        feature: z.row(index),
        label: &labels[index],
    }
}

/// Generates hard pairs for every anchor of the batch, in anchor order.
///
/// Per anchor: a hard positive from its hardest positive and hardest negative
/// when both exist, then a hard negative from a uniformly chosen negative when
/// one exists. RNG draws depend on the labels only, never on `z`.
pub fn generate_hard_pairs<R: Rng + ?Sized>(
    z: &FeatureMatrix,
    labels: &[SoftLabel],
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<Vec<GeneratedPair>> {
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!("{} features but {} labels", z.rows(), labels.len())));
    }
    let sim = cosine_sim_matrix(z)?;
    let mut out = Vec::with_capacity(2 * z.rows());
    for i in 0..z.rows() {
        let hp = hardest_positive(&sim, labels, i);
        let hn = hardest_negative(&sim, labels, i);
        if let (Some(hp), Some(hn)) = (hp, hn) {
            let lambda = sample_lambda(cfg.alpha, cfg.lambda_p, rng)?;
            out.push(gen_hard_positive(
                i,
                constituent(z, labels, hp),
                constituent(z, labels, hn),
                lambda,
            )?);
        }
        let class = labels[i].class();
        let negatives: Vec<usize> = (0..z.rows()).filter(|&j| labels[j].class() != class).collect();
        if !negatives.is_empty() {
            let pick = negatives[rng.random_range(0..negatives.len())];
            let lambda = sample_lambda(cfg.alpha, cfg.lambda_n, rng)?;
            out.push(gen_hard_negative(constituent(z, labels, i), constituent(z, labels, pick), lambda)?);
        }
    }
    Ok(out)
}

/// Manifold-mixup baseline: each anchor mixed with a uniformly drawn other
/// sample, `λ ~ Beta(alpha, alpha)` unclipped.
pub fn generate_random_mixes<R: Rng + ?Sized>(
    z: &FeatureMatrix,
    labels: &[SoftLabel],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<GeneratedPair>> {
    let n = z.rows();
    let mut out = Vec::with_capacity(n);
    if n < 2 {
        return Ok(out);
    }
    for i in 0..n {
        let mut partner = rng.random_range(0..n - 1);
        if partner >= i {
            partner += 1;
        }
        let lambda = sample_lambda(alpha, 0.0, rng)?;
        let (feature, label) = mix(&constituent(z, labels, i), lambda, &constituent(z, labels, partner), 1.0 - lambda)?;
        out.push(GeneratedPair {
            feature,
            label,
            kind: PairKind::RandomMix,
            anchor: i,
            lambda,
            constituents: (i, partner),
        });
    }
    Ok(out)
}
