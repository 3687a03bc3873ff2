//! Feature-space diagnostics, accuracy, and the finite-difference oracle.
//!
//! `tightness` is the center-loss term (mean squared distance to the class
//! mean) and `feature_entropy_estimate` the pairwise log-distance entropy
//! estimator. Lower tightness with higher entropy is the direction a
//! contrastive regularizer should push a feature space.

use serde::{Deserialize, Serialize};

use crate::data::SoftLabel;
use crate::error::{Error, Result};
use crate::numkernel::{argmax, squared_distance, FeatureMatrix, Matrix};

/// Squared distances below this are clamped before taking the log.
pub const ENTROPY_DIST_FLOOR: f64 = 1e-12;

/// One line of `metrics.jsonl`. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_ce_mixed: f64,
    pub loss_con_focal: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub tightness: f64,
    pub feature_entropy: f64,
    pub lr: f64,
}

impl MetricsRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.loss_total,
            self.loss_ce_mixed,
            self.loss_con_focal,
            self.train_acc,
            self.test_acc,
            self.tightness,
            self.feature_entropy,
            self.lr,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

fn class_means(z: &FeatureMatrix, labels: &[SoftLabel]) -> Result<Vec<Option<Vec<f64>>>> {
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!("{} features but {} labels", z.rows(), labels.len())));
    }
    let k = labels.iter().map(SoftLabel::class).max().map_or(0, |c| c + 1);
    let mut sums = vec![vec![0.0; z.cols()]; k];
    let mut counts = vec![0usize; k];
    for (row, l) in z.iter_rows().zip(labels) {
        let c = l.class();
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(row) {
            *s += x;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|x| x / c as f64).collect()))
        .collect())
}

/// `(1/n) Σ_i ‖z_i − c_{y_i}‖²` with `c_k` the mean of class `k`.
pub fn tightness(z: &FeatureMatrix, labels: &[SoftLabel]) -> Result<f64> {
    if z.rows() == 0 {
        return Err(Error::InvalidArgument("tightness of an empty feature set".into()));
    }
    let means = class_means(z, labels)?;
    let mut acc = 0.0;
    for (row, l) in z.iter_rows().zip(labels) {
        let c = means[l.class()].as_ref().expect("class of a sample is present");
        acc += squared_distance(row, c);
    }
    Ok(acc / z.rows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Ordered pairs whose squared distance hit [`ENTROPY_DIST_FLOOR`].
    pub floored_pairs: usize,
}

/// `d/(n(n−1)) Σ_{i≠k} log max(‖z_i − z_k‖², floor)`.
pub fn feature_entropy_details(z: &FeatureMatrix) -> Result<EntropyEstimate> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("entropy estimate needs n >= 2, got {n}")));
    }
    let mut acc = 0.0;
    let mut floored_pairs = 0;
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let d2 = squared_distance(z.row(i), z.row(k));
            if d2 < ENTROPY_DIST_FLOOR {
                floored_pairs += 1;
            }
            acc += d2.max(ENTROPY_DIST_FLOOR).ln();
        }
    }
    Ok(EntropyEstimate {
        value: z.cols() as f64 * acc / (n * (n - 1)) as f64,
        floored_pairs,
    })
}

pub fn feature_entropy_estimate(z: &FeatureMatrix) -> Result<f64> {
    feature_entropy_details(z).map(|e| e.value)
}

/// Smallest distance between two class means.
pub fn class_separation(z: &FeatureMatrix, labels: &[SoftLabel]) -> Result<f64> {
    let means: Vec<Vec<f64>> = class_means(z, labels)?.into_iter().flatten().collect();
    if means.len() < 2 {
        return Err(Error::InvalidArgument("class separation needs at least two classes".into()));
    }
    let mut best = f64::INFINITY;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            best = best.min(squared_distance(&means[a], &means[b]).sqrt());
        }
    }
    Ok(best)
}

/// Fraction of rows whose logit argmax equals the label argmax.
pub fn accuracy(logits: &Matrix, labels: &[SoftLabel]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = logits
        .iter_rows()
        .zip(labels)
        .filter(|(row, l)| argmax(row) == l.class())
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Central differences `(f(p + h e_i) − f(p − h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = f(&p);
        p[i] = orig - h;
        let minus = f(&p);
        p[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Magnitudes below this are compared absolutely in [`max_relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, REL_ERR_FLOOR)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

/// Final-epoch comparison of runs with and without the contrastive term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub mean_tightness_con: f64,
    pub mean_tightness_ce: f64,
    pub mean_entropy_con: f64,
    pub mean_entropy_ce: f64,
    /// Contrastive runs end strictly tighter.
    pub tighter_with_con: bool,
    /// Contrastive runs end with strictly higher feature entropy.
    pub higher_entropy_with_con: bool,
}

pub fn theorem1_trend_report(runs_con: &[Vec<MetricsRecord>], runs_ce: &[Vec<MetricsRecord>]) -> Result<TrendReport> {
    if runs_con.is_empty() || runs_ce.is_empty() {
        return Err(Error::InvalidArgument("both run groups must be non-empty".into()));
    }
    if runs_con.len() != runs_ce.len() {
        return Err(Error::Shape(format!("{} vs {} runs", runs_con.len(), runs_ce.len())));
    }
    let epochs = runs_con[0].len();
    if epochs == 0 || runs_con.iter().chain(runs_ce).any(|r| r.len() != epochs) {
        return Err(Error::Shape("runs differ in epoch count".into()));
    }
    let mean = |runs: &[Vec<MetricsRecord>], f: fn(&MetricsRecord) -> f64| {
        runs.iter().map(|r| f(r.last().unwrap())).sum::<f64>() / runs.len() as f64
    };
    let mean_tightness_con = mean(runs_con, |m| m.tightness);
    let mean_tightness_ce = mean(runs_ce, |m| m.tightness);
    let mean_entropy_con = mean(runs_con, |m| m.feature_entropy);
    let mean_entropy_ce = mean(runs_ce, |m| m.feature_entropy);
    Ok(TrendReport {
        mean_tightness_con,
        mean_tightness_ce,
        mean_entropy_con,
        mean_entropy_ce,
        tighter_with_con: mean_tightness_con < mean_tightness_ce,
        higher_entropy_with_con: mean_entropy_con > mean_entropy_ce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn labels(classes: &[usize], k: usize) -> Vec<SoftLabel> {
        classes.iter().map(|&c| SoftLabel::one_hot(k, c)).collect()
    }

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = stream(seed, Stream::GradCheck);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn tightness_examples() {
        let same = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(tightness(&same, &labels(&[0, 1, 0], 2)).unwrap(), 0.0);
        let z = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        assert_eq!(tightness(&z, &labels(&[0, 0], 1)).unwrap(), 1.0);
        assert!(tightness(&Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn tightness_matches_two_pass_and_ignores_translation() {
        let z = random(12, 3, 1);
        let l = labels(&[0, 1, 2, 0, 1, 2, 0, 0, 1, 2, 2, 2], 3);
        // naive: per-class center-loss sums, then divide by n
        let mut total = 0.0;
        for c in 0..3 {
            let members: Vec<&[f64]> = z.iter_rows().zip(&l).filter(|(_, y)| y.class() == c).map(|(r, _)| r).collect();
            let mut mean = [0.0; 3];
            for r in &members {
                for j in 0..3 {
                    mean[j] += r[j];
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            for r in &members {
                for j in 0..3 {
                    total += (r[j] - mean[j]).powi(2);
                }
            }
        }
        let t = tightness(&z, &l).unwrap();
        assert!((t - total / 12.0).abs() < 1e-12);
        let shifted = z.map(|x| x + 7.5);
        assert!((tightness(&shifted, &l).unwrap() - t).abs() < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let z = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert_eq!(feature_entropy_estimate(&z).unwrap(), 0.0);
        let z = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        assert!((feature_entropy_estimate(&z).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(feature_entropy_estimate(&Matrix::zeros(1, 2)).is_err());

        let dup = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let e = feature_entropy_details(&dup).unwrap();
        assert_eq!(e.floored_pairs, 2);
        assert!(e.value.is_finite());
    }

    #[test]
    fn entropy_scaling_adds_log_term() {
        let z = random(7, 4, 2);
        let s = 3.5;
        let base = feature_entropy_estimate(&z).unwrap();
        let scaled = feature_entropy_estimate(&z.map(|x| s * x)).unwrap();
        assert!((scaled - base - 2.0 * 4.0 * s.ln()).abs() < 1e-10);
    }

    #[test]
    fn entropy_permutation_invariant() {
        let z = random(6, 3, 3);
        let perm = z.select_rows(&[4, 2, 0, 5, 1, 3]);
        let (a, b) = (feature_entropy_estimate(&z).unwrap(), feature_entropy_estimate(&perm).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn separation_examples() {
        let z = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(class_separation(&z, &labels(&[0, 1], 2)).unwrap(), 5.0);
        let same = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(class_separation(&same, &labels(&[0, 1], 2)).unwrap(), 0.0);
        assert!(class_separation(&z, &labels(&[1, 1], 2)).is_err());

        let z = random(15, 2, 4);
        let classes = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 0, 1];
        let l = labels(&classes, 4);
        let mut means = [[0.0; 2]; 4];
        let mut counts = [0.0; 4];
        for (r, &c) in z.iter_rows().zip(&classes) {
            means[c][0] += r[0];
            means[c][1] += r[1];
            counts[c] += 1.0;
        }
        let mut best = f64::INFINITY;
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    let d = ((means[a][0] / counts[a] - means[b][0] / counts[b]).powi(2)
                        + (means[a][1] / counts[a] - means[b][1] / counts[b]).powi(2))
                    .sqrt();
                    best = best.min(d);
                }
            }
        }
        assert!((class_separation(&z, &l).unwrap() - best).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let l = labels(&[0, 1, 1, 0], 2);
        let logits = Matrix::from_rows(&l.iter().map(|y| y.probs().to_vec()).collect::<Vec<_>>()).unwrap();
        assert_eq!(accuracy(&logits, &l).unwrap(), 1.0);
        assert_eq!(accuracy(&logits.map(|x| -x), &l).unwrap(), 0.0);

        let mut rng = stream(5, Stream::GradCheck);
        let logits = random(100, 3, 6);
        let classes: Vec<usize> = (0..100).map(|_| rng.random_range(0..3)).collect();
        let l = labels(&classes, 3);
        let mut hits = 0;
        for i in 0..100 {
            let r = logits.row(i);
            let mut best = 0;
            for k in 1..3 {
                if r[k] > r[best] {
                    best = k;
                }
            }
            if best == classes[i] {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&logits, &l).unwrap(), hits as f64 / 100.0);
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff_grad(|p| p.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 3.0, &[1.0, -4.0, 0.5], 1e-5);
        assert!(g.iter().all(|x| x.abs() < 1e-9));
    }

    fn record(tightness: f64, entropy: f64) -> MetricsRecord {
        MetricsRecord {
            epoch: 1,
            loss_total: 1.0,
            loss_ce_mixed: 1.0,
            loss_con_focal: 0.0,
            train_acc: 0.5,
            test_acc: 0.5,
            tightness,
            feature_entropy: entropy,
            lr: 0.1,
        }
    }

    #[test]
    fn trend_report() {
        let runs = vec![vec![record(1.0, 1.0)], vec![record(2.0, 0.0)]];
        let r = theorem1_trend_report(&runs, &runs).unwrap();
        assert!(!r.tighter_with_con && !r.higher_entropy_with_con);

        let con = vec![vec![record(1.0, 2.0)]];
        let ce = vec![vec![record(2.0, 1.0)]];
        let r = theorem1_trend_report(&con, &ce).unwrap();
        assert!(r.tighter_with_con && r.higher_entropy_with_con);
        let r = theorem1_trend_report(&ce, &con).unwrap();
        assert!(!r.tighter_with_con && !r.higher_entropy_with_con);

        assert!(theorem1_trend_report(&con, &runs).is_err());
        assert!(theorem1_trend_report(&con, &[vec![record(1.0, 1.0), record(1.0, 1.0)]]).is_err());
        assert!(theorem1_trend_report(&[], &ce).is_err());
    }

    #[test]
    fn record_serializes_in_schema_order() {
        let s = serde_json::to_string(&record(1.0, 2.0)).unwrap();
        let keys = [
            "epoch",
            "loss_total",
            "loss_ce_mixed",
            "loss_con_focal",
            "train_acc",
            "test_acc",
            "tightness",
            "feature_entropy",
            "lr",
        ];
        let mut last = 0;
        for k in keys {
            let pos = s.find(&format!("\"{k}\"")).unwrap();
            assert!(pos >= last);
            last = pos;
        }
    }
}
