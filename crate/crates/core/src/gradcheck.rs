//! Finite-difference check of every analytic gradient path.
//!
//! Each path is exercised on small random instances: the two contrastive
//! losses with respect to the feature pool, mixed cross-entropy with respect
//! to the stacked logits, and the full objective with respect to every
//! network parameter (mining and mixing included, with the mixing stream
//! replayed identically for each evaluation).

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::SoftLabel;
use crate::diagnostics::{finite_diff_grad, max_relative_error};
use crate::error::Result;
use crate::losses::{focal_contrastive, mixed_ce, supervised_contrastive, LossOutput};
use crate::model::{batch_objective, init_params, Architecture, ObjectiveSettings};
use crate::numkernel::{l2_normalize, FeatureMatrix, Matrix, NORM_EPS};
use crate::pairing::{augment_pair_sets, build_base_pairs, generate_hard_pairs, MixConfig, PairSets};
use crate::rng::{self, Stream, StreamRng};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const DEFAULT_INSTANCES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossPath {
    Contrastive,
    FocalContrastive,
    MixedCe,
    FullObjective,
}

impl LossPath {
    pub const ALL: [LossPath; 4] = [
        LossPath::Contrastive,
        LossPath::FocalContrastive,
        LossPath::MixedCe,
        LossPath::FullObjective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossPath::Contrastive => "contrastive",
            LossPath::FocalContrastive => "focal_contrastive",
            LossPath::MixedCe => "mixed_ce",
            LossPath::FullObjective => "full_objective",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub h: f64,
    /// Test hook: perturb one analytic gradient entry per instance so the
    /// check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: DEFAULT_INSTANCES,
            h: FD_STEP,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub path: LossPath,
    pub instances: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub results: Vec<PathResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<18} instances={:<3} max_rel_err={:.3e}",
                r.path.name(),
                r.instances,
                r.max_rel_error
            )?;
        }
        write!(
            f,
            "overall max_rel_err={:.3e} tolerance={:.0e} {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut StreamRng) -> FeatureMatrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// Random labels over `k` classes with at least two samples in class 0 and
/// one sample in class 1, so positives and negatives both exist.
fn labels(n: usize, k: usize, rng: &mut StreamRng) -> Vec<SoftLabel> {
    (0..n)
        .map(|i| {
            let c = match i {
                0 | 1 => 0,
                2 => 1,
                _ => rng.random_range(0..k),
            };
            SoftLabel::one_hot(k, c)
        })
        .collect()
}

/// A contrastive instance: unit features for the augmented pool of a batch.
fn contrastive_instance(rng: &mut StreamRng, mix: &MixConfig) -> Result<(FeatureMatrix, PairSets)> {
    let n = rng.random_range(3..=8);
    let d = rng.random_range(2..=6);
    let y = labels(n, rng.random_range(2..=3), rng);
    let z = gaussian(n, d, rng);
    let generated = generate_hard_pairs(&z, &y, mix, rng)?;
    let pairs = augment_pair_sets(&build_base_pairs(&y)?, &generated);
    let v = l2_normalize(&gaussian(pairs.pool_size(), d, rng), NORM_EPS)?;
    Ok((v, pairs))
}

fn corrupt(grad: &mut [f64], on: bool) {
    if on {
        if let Some(g) = grad.first_mut() {
            *g += 1e-3 * (1.0 + g.abs());
        }
    }
}

fn check_matrix_input(
    x: &Matrix,
    f: impl Fn(&Matrix) -> Result<LossOutput>,
    opts: &GradcheckOptions,
) -> Result<f64> {
    let mut analytic = f(x)?.grad.as_slice().to_vec();
    corrupt(&mut analytic, opts.corrupt);
    let numeric = finite_diff_grad(
        |p| {
            let m = Matrix::from_vec(x.rows(), x.cols(), p.to_vec()).expect("same shape");
            f(&m).map(|o| o.value).unwrap_or(f64::NAN)
        },
        x.as_slice(),
        opts.h,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

fn check_contrastive(focal: bool, cfg: &RunConfig, rng: &mut StreamRng, opts: &GradcheckOptions) -> Result<f64> {
    let (v, pairs) = contrastive_instance(rng, &cfg.objective_settings().mix)?;
    let tau = cfg.tau;
    check_matrix_input(
        &v,
        |m| {
            if focal {
                focal_contrastive(m, &pairs, tau)
            } else {
                supervised_contrastive(m, &pairs, tau)
            }
        },
        opts,
    )
}

fn check_mixed_ce(cfg: &RunConfig, rng: &mut StreamRng, opts: &GradcheckOptions) -> Result<f64> {
    let n = rng.random_range(3..=8);
    let k = rng.random_range(2..=4);
    let y = labels(n, k, rng);
    let z = gaussian(n, k, rng);
    let generated = generate_hard_pairs(&z, &y, &cfg.objective_settings().mix, rng)?;
    let y_gen: Vec<SoftLabel> = generated.iter().map(|g| g.label.clone()).collect();
    let mut logits = gaussian(n + y_gen.len(), k, rng);
    logits.scale(3.0);
    check_matrix_input(
        &logits,
        |m| mixed_ce(&m.slice_rows(0, n), &y, &m.slice_rows(n, m.rows()), &y_gen),
        opts,
    )
}

fn check_full(cfg: &RunConfig, rng: &mut StreamRng, opts: &GradcheckOptions) -> Result<f64> {
    let n = rng.random_range(4..=8);
    let d_in = rng.random_range(2..=6);
    let k = rng.random_range(2..=3);
    let d_z = rng.random_range(2..=5);
    let arch = Architecture {
        input_dim: d_in,
        encoder_widths: vec![rng.random_range(2..=6)],
        feature_dim: d_z,
        classes: k,
        proj_hidden: d_z,
        proj_dim: rng.random_range(2..=5),
        activation: cfg.activation,
    };
    let mut params = init_params(&arch, rng.random())?;
    // larger weights than init so every path carries a sizeable gradient
    for t in params.tensors_mut() {
        for w in t {
            *w += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = gaussian(n, d_in, rng);
    let y = labels(n, k, rng);
    let settings = ObjectiveSettings {
        use_contrastive: true,
        use_focal: true,
        use_generation: true,
        use_mixed_ce: true,
        eta: cfg.eta.max(0.1),
        ..cfg.objective_settings()
    };
    let mix_rng = rng::stream(rng.random(), Stream::Mixing);

    let out = batch_objective(&params, &x, &y, &settings, &mut mix_rng.clone())?;
    let mut analytic = out.grads.flatten();
    corrupt(&mut analytic, opts.corrupt);
    let flat = params.flatten();
    let numeric = finite_diff_grad(
        |p| {
            params.set_flat(p).expect("same length");
            batch_objective(&params, &x, &y, &settings, &mut mix_rng.clone())
                .map(|o| o.total)
                .unwrap_or(f64::NAN)
        },
        &flat,
        opts.h,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// Runs every loss path on `opts.instances` random instances seeded from the
/// config seed; numerical settings (τ, η, α, clips, activation) come from
/// the config.
pub fn run_gradcheck(cfg: &RunConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut results = Vec::with_capacity(LossPath::ALL.len());
    for (p, path) in LossPath::ALL.into_iter().enumerate() {
        let mut rng = rng::stream(cfg.seed.wrapping_add(p as u64), Stream::GradCheck);
        let mut worst: f64 = 0.0;
        for _ in 0..opts.instances {
            let err = match path {
                LossPath::Contrastive => check_contrastive(false, cfg, &mut rng, opts)?,
                LossPath::FocalContrastive => check_contrastive(true, cfg, &mut rng, opts)?,
                LossPath::MixedCe => check_mixed_ce(cfg, &mut rng, opts)?,
                LossPath::FullObjective => check_full(cfg, &mut rng, opts)?,
            };
            // NaN must fail the check, so it cannot be lost in a max
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        results.push(PathResult {
            path,
            instances: opts.instances,
            max_rel_error: worst,
        });
    }
    Ok(GradcheckReport {
        results,
        tolerance: TOLERANCE,
    })
}
