//! Datasets: synthetic generators, CSV embedding files, and seeded batching.
//!
//! CSV layout is `label,f0,f1,...,f{d-1}` with one integer label and `d`
//! features per row. The loader accepts any feature-column prefix as long as
//! the indices run `0..d`, so files written by the feature dump reload as-is.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkernel::{argmax, FeatureMatrix, Matrix};
use crate::rng::{self, Stream, StreamRng};

const SIMPLEX_TOL: f64 = 1e-9;

/// Probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn one_hot(class_count: usize, class: usize) -> Self {
        let mut p = vec![0.0; class_count];
        p[class] = 1.0;
        SoftLabel(p)
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("label has no classes".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "label entries must lie in [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!("label sums to {sum}")));
        }
        Ok(SoftLabel(probs))
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    /// Most probable class, ties to the smallest index.
    #[inline]
    pub fn class(&self) -> usize {
        argmax(&self.0)
    }

    pub fn is_one_hot(&self) -> bool {
        self.0.iter().filter(|&&p| p == 1.0).count() == 1
            && self.0.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// `wa * a + wb * b`; callers pass convex weights.
    pub fn mix(a: &SoftLabel, wa: f64, b: &SoftLabel, wb: f64) -> Result<SoftLabel> {
        if a.0.len() != b.0.len() {
            return Err(Error::Shape(format!(
                "labels over {} and {} classes",
                a.0.len(),
                b.0.len()
            )));
        }
        Ok(SoftLabel(
            a.0.iter().zip(&b.0).map(|(x, y)| wa * x + wb * y).collect(),
        ))
    }

    pub fn on_simplex(&self) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|p| (0.0..=1.0).contains(p)) && (sum - 1.0).abs() <= SIMPLEX_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Features with one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Vec<SoftLabel>,
    class_count: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<SoftLabel>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() < 1 {
            return Err(Error::InvalidArgument("features need at least one column".into()));
        }
        features.check_finite()?;
        for (i, l) in labels.iter().enumerate() {
            if l.class_count() != class_count || !l.on_simplex() {
                return Err(Error::InvalidArgument(format!(
                    "label {i} is not a distribution over {class_count} classes"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
            split,
        })
    }

    fn from_classes(features: FeatureMatrix, classes: &[usize], k: usize, split: Split) -> Result<Self> {
        let labels = classes.iter().map(|&c| SoftLabel::one_hot(k, c)).collect();
        Self::new(features, labels, k, split)
    }

    #[inline]
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[SoftLabel] {
        &self.labels
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[inline]
    pub fn split(&self) -> Split {
        self.split
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().map(SoftLabel::class).collect()
    }

    /// Re-encodes labels over `k ≥ class_count` classes.
    pub fn with_class_count(self, k: usize) -> Result<Self> {
        if k < self.class_count {
            return Err(Error::InvalidArgument(format!(
                "cannot shrink {} classes to {k}",
                self.class_count
            )));
        }
        let classes = self.classes();
        Self::from_classes(self.features, &classes, k, self.split)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// Isotropic Gaussian clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    pub classes: usize,
    pub n_per_class: usize,
    /// Distance between class centers (exact when `classes <= dim`).
    pub separation: f64,
    /// Per-coordinate standard deviation.
    pub noise: f64,
    pub dim: usize,
}

impl BlobParams {
    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::InvalidArgument("blob dimension must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("blobs need at least 2 classes".into()));
        }
        if self.n_per_class < 1 {
            return Err(Error::InvalidArgument("blobs need at least 1 sample per class".into()));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::InvalidArgument("separation must be finite and >= 0".into()));
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidArgument("blob noise must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Centers sit on scaled coordinate axes when they fit, so every pair is
    /// exactly `separation` apart; otherwise on random directions at radius
    /// `separation / √2`.
    fn centers(&self, seed: u64) -> Matrix {
        let radius = self.separation / std::f64::consts::SQRT_2;
        let mut c = Matrix::zeros(self.classes, self.dim);
        if self.classes <= self.dim {
            for k in 0..self.classes {
                c[(k, k)] = radius;
            }
        } else {
            let mut rng = rng::stream(seed, Stream::DataCenters);
            for k in 0..self.classes {
                let dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let len = crate::numkernel::norm(&dir).max(1e-12);
                for (j, x) in dir.iter().enumerate() {
                    c[(k, j)] = radius * x / len;
                }
            }
        }
        c
    }

    fn sample(&self, centers: &Matrix, per_class: usize, rng: &mut StreamRng, split: Split) -> Result<Dataset> {
        let n = self.classes * per_class;
        let mut features = Matrix::zeros(n, self.dim);
        let mut classes = Vec::with_capacity(n);
        for k in 0..self.classes {
            for s in 0..per_class {
                let row = features.row_mut(k * per_class + s);
                for (j, x) in row.iter_mut().enumerate() {
                    let eps: f64 = rng.sample(StandardNormal);
                    *x = centers[(k, j)] + self.noise * eps;
                }
                classes.push(k);
            }
        }
        Dataset::from_classes(features, &classes, self.classes, split)
    }
}

/// Balanced Gaussian blobs, deterministic per seed.
pub fn gen_blobs(params: &BlobParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let centers = params.centers(seed);
    let mut rng = rng::stream(seed, Stream::DataTrain);
    params.sample(&centers, params.n_per_class, &mut rng, Split::Train)
}

/// Train split as [`gen_blobs`] plus a held-out split drawn around the same
/// centers from an independent stream.
pub fn gen_blobs_split(params: &BlobParams, test_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = gen_blobs(params, seed)?;
    let centers = params.centers(seed);
    let mut rng = rng::stream(seed, Stream::DataTest);
    let test = params.sample(&centers, test_per_class, &mut rng, Split::Test)?;
    Ok((train, test))
}

fn moons_sample(n_per_class: usize, noise: f64, rng: &mut StreamRng, split: Split) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::InvalidArgument("moons need at least 1 sample per class".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::InvalidArgument("moons noise must be finite and >= 0".into()));
    }
    let mut features = Matrix::zeros(2 * n_per_class, 2);
    let mut classes = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for s in 0..n_per_class {
            let t = rng.random_range(0.0..=std::f64::consts::PI);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let ex: f64 = rng.sample(StandardNormal);
            let ey: f64 = rng.sample(StandardNormal);
            let row = features.row_mut(class * n_per_class + s);
            row[0] = x + noise * ex;
            row[1] = y + noise * ey;
            classes.push(class);
        }
    }
    Dataset::from_classes(features, &classes, 2, split)
}

/// Two interleaved unit half-circles in 2-D.
pub fn gen_two_moons(n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    moons_sample(n_per_class, noise, &mut rng::stream(seed, Stream::DataTrain), Split::Train)
}

pub fn gen_two_moons_split(
    n_per_class: usize,
    test_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = gen_two_moons(n_per_class, noise, seed)?;
    let test = moons_sample(test_per_class, noise, &mut rng::stream(seed, Stream::DataTest), Split::Test)?;
    Ok((train, test))
}

/// Parses `label,<p>0,...,<p>{d-1}` text. `path` only labels error messages.
pub fn parse_embeddings_csv(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"label") {
        return Err(err(1, "first header column must be `label`".into()));
    }
    let d = columns.len() - 1;
    if d < 1 {
        return Err(err(1, "header names no feature columns".into()));
    }
    for (j, name) in columns[1..].iter().enumerate() {
        let digits = name.trim_start_matches(|c: char| !c.is_ascii_digit());
        if digits.parse::<usize>().ok() != Some(j) || digits.len() == name.len() {
            return Err(err(1, format!("feature column {} is `{name}`, expected a name ending in {j}", j + 1)));
        }
    }

    let mut values = Vec::new();
    let mut classes = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(err(line_no, format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        let label: i64 = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("label `{}` is not an integer", fields[0])))?;
        if label < 0 {
            return Err(err(line_no, format!("negative label {label}")));
        }
        classes.push(label as usize);
        for f in &fields[1..] {
            let x: f64 = f
                .parse()
                .map_err(|_| err(line_no, format!("`{f}` is not a number")))?;
            if !x.is_finite() {
                return Err(err(line_no, format!("non-finite value `{f}`")));
            }
            values.push(x);
        }
    }
    if classes.is_empty() {
        return Err(err(1, "no samples".into()));
    }
    let k = classes.iter().max().copied().unwrap_or(0) + 1;
    let features = Matrix::from_vec(classes.len(), d, values)?;
    Dataset::from_classes(features, &classes, k, Split::Train)
}

pub fn load_embeddings_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_embeddings_csv(&text, path)
}

/// CSV text for `features` with integer `classes`, columns named `prefix0..`.
/// Values use the shortest representation that parses back to the same `f64`.
pub fn embeddings_csv(features: &FeatureMatrix, classes: &[usize], prefix: &str) -> String {
    let mut out = String::from("label");
    for j in 0..features.cols() {
        write!(out, ",{prefix}{j}").unwrap();
    }
    out.push('\n');
    for (row, class) in features.iter_rows().zip(classes) {
        write!(out, "{class}").unwrap();
        for x in row {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, embeddings_csv(ds.features(), &ds.classes(), "f"))?;
    Ok(())
}

/// A shuffled subset of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: FeatureMatrix,
    pub labels: Vec<SoftLabel>,
}

/// Cursor over one epoch of batches. The permutation comes from the shuffle
/// stream keyed by `seed ^ epoch`; a trailing batch of one sample is dropped.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.pos;
        if remaining < 2 {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let indices = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        Some(Batch {
            features: self.ds.features().select_rows(&indices),
            labels: indices.iter().map(|&i| self.ds.labels()[i].clone()).collect(),
            indices,
        })
    }
}

pub fn batch_iter(ds: &Dataset, batch_size: usize, epoch: u64, seed: u64) -> Result<BatchIter<'_>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!("batch size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::stream(seed ^ epoch, Stream::Shuffle));
    Ok(BatchIter {
        ds,
        order,
        batch_size,
        pos: 0,
    })
}
