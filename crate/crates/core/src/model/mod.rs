//! Dense encoder, linear classifier and two-layer projection head with
//! hand-written reverse-mode gradients.
//!
//! ```text
//! x ─ encoder ─ z ─┬─ classifier ─ logits
//!                  └─ proj₁ ─ act ─ proj₂ ─ u ─ u/‖u‖ ─ v
//! ```
//!
//! Generated mixup features live in `z`-space: they enter at the heads and
//! their gradients are handed back to the original rows they were mixed from.

mod objective;
mod optim;
mod train;

pub use objective::{batch_objective, MixupKind, ObjectiveSettings, StepOutput};
pub use optim::{lr_at, sgd_momentum_step, Schedule, ScheduleKind};
pub use train::{evaluate, train, Evaluation, TrainRun};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkernel::{dot, norm, FeatureMatrix, Matrix, NORM_EPS};
use crate::pairing::GeneratedPair;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the pre-activation and the activation value.
    #[inline]
    fn derivative(self, pre: f64, act: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - act * act,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weight.as_mut_slice() {
            *w = rng.random_range(-bound..=bound);
        }
        layer
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.affine(&self.weight, &self.bias)
    }

    /// Accumulates `dW += d_outᵀ x`, `db += Σ_rows d_out` into `grad` and
    /// returns `d_out W`.
    fn backward(&self, x: &Matrix, d_out: &Matrix, grad: &mut Dense) -> Matrix {
        let (input, output) = (self.input_dim(), self.output_dim());
        for r in 0..x.rows() {
            let (xr, dr) = (x.row(r), d_out.row(r));
            for o in 0..output {
                let d = dr[o];
                grad.bias[o] += d;
                let gw = grad.weight.row_mut(o);
                for i in 0..input {
                    gw[i] += d * xr[i];
                }
            }
        }
        let mut d_in = Matrix::zeros(x.rows(), input);
        for r in 0..x.rows() {
            let dr = d_out.row(r);
            let out = d_in.row_mut(r);
            for o in 0..output {
                let w = self.weight.row(o);
                for i in 0..input {
                    out[i] += dr[o] * w[i];
                }
            }
        }
        d_in
    }
}

/// Layer sizes of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths of the encoder; the encoder ends with a linear map to `feature_dim`.
    pub encoder_widths: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub activation: Activation,
}

/// All trainable tensors. The same type doubles as a gradient set and as
/// momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub encoder: Vec<Dense>,
    pub classifier: Dense,
    pub projection: [Dense; 2],
    pub activation: Activation,
}

pub type Gradients = MlpParams;

/// Glorot-uniform weights from the init stream of `seed`, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<MlpParams> {
    let dims = [arch.input_dim, arch.feature_dim, arch.classes, arch.proj_hidden, arch.proj_dim];
    if dims.contains(&0) || arch.encoder_widths.contains(&0) {
        return Err(Error::InvalidArgument(format!("all layer sizes must be >= 1: {arch:?}")));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let mut widths = vec![arch.input_dim];
    widths.extend(&arch.encoder_widths);
    widths.push(arch.feature_dim);
    let encoder = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], &mut rng)).collect();
    let classifier = Dense::glorot(arch.feature_dim, arch.classes, &mut rng);
    let projection = [
        Dense::glorot(arch.feature_dim, arch.proj_hidden, &mut rng),
        Dense::glorot(arch.proj_hidden, arch.proj_dim, &mut rng),
    ];
    Ok(MlpParams {
        encoder,
        classifier,
        projection,
        activation: arch.activation,
    })
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        let z = |d: &Dense| Dense::zeros(d.input_dim(), d.output_dim());
        Self {
            encoder: self.encoder.iter().map(z).collect(),
            classifier: z(&self.classifier),
            projection: [z(&self.projection[0]), z(&self.projection[1])],
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .chain(self.projection.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .chain(self.projection.iter_mut())
    }

    /// Every tensor in a fixed order: encoder layers, classifier, projection;
    /// weight before bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Cached intermediates of the classifier and projection heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub z: Matrix,
    pub proj_pre: Matrix,
    pub proj_act: Matrix,
    /// Projection output before normalization.
    pub u: Matrix,
    pub v: Matrix,
}

/// Cached intermediates of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input to each encoder layer.
    pub encoder_inputs: Vec<Matrix>,
    /// Pre-activation output of each encoder layer.
    pub encoder_pre: Vec<Matrix>,
    pub head: HeadTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub z: FeatureMatrix,
    pub logits: Matrix,
    pub v: FeatureMatrix,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadForward {
    pub logits: Matrix,
    pub v: FeatureMatrix,
    pub trace: HeadTrace,
}

fn heads(params: &MlpParams, z: &Matrix) -> Result<HeadForward> {
    if z.rows() > 0 && z.cols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, heads expect {}",
            z.cols(),
            params.feature_dim()
        )));
    }
    let z = if z.rows() == 0 {
        Matrix::zeros(0, params.feature_dim())
    } else {
        z.clone()
    };
    let logits = params.classifier.forward(&z)?;
    let proj_pre = params.projection[0].forward(&z)?;
    let act = params.activation;
    let proj_act = proj_pre.map(|x| act.apply(x));
    let u = params.projection[1].forward(&proj_act)?;
    let v = crate::numkernel::l2_normalize(&u, NORM_EPS)?;
    Ok(HeadForward {
        logits,
        v: v.clone(),
        trace: HeadTrace {
            z,
            proj_pre,
            proj_act,
            u,
            v,
        },
    })
}

/// Encoder then both heads. Hidden encoder layers apply the activation; the
/// last encoder layer is linear.
pub fn forward(params: &MlpParams, x: &FeatureMatrix) -> Result<Forward> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let last = params.encoder.len() - 1;
    let mut encoder_inputs = Vec::with_capacity(params.encoder.len());
    let mut encoder_pre = Vec::with_capacity(params.encoder.len());
    let mut h = x.clone();
    for (l, layer) in params.encoder.iter().enumerate() {
        let pre = layer.forward(&h)?;
        encoder_inputs.push(h);
        h = if l == last {
            pre.clone()
        } else {
            let act = params.activation;
            pre.map(|x| act.apply(x))
        };
        encoder_pre.push(pre);
    }
    let head = heads(params, &h)?;
    Ok(Forward {
        z: h,
        logits: head.logits,
        v: head.v,
        trace: ForwardTrace {
            encoder_inputs,
            encoder_pre,
            head: head.trace,
        },
    })
}

/// Heads only, for features already in encoder space.
pub fn forward_generated(params: &MlpParams, z_gen: &FeatureMatrix) -> Result<HeadForward> {
    heads(params, z_gen)
}

/// `dL/du` for `v = u / max(‖u‖, eps)`: `(dv − v (v·dv)) / ‖u‖` per row.
fn normalize_backward(u: &Matrix, v: &Matrix, dv: &Matrix) -> Matrix {
    let mut du = Matrix::zeros(u.rows(), u.cols());
    for r in 0..u.rows() {
        let len = norm(u.row(r));
        let out = du.row_mut(r);
        if len > NORM_EPS {
            let proj = dot(v.row(r), dv.row(r));
            for ((o, &g), &vr) in out.iter_mut().zip(dv.row(r)).zip(v.row(r)) {
                *o = (g - vr * proj) / len;
            }
        } else {
            for (o, &g) in out.iter_mut().zip(dv.row(r)) {
                *o = g / NORM_EPS;
            }
        }
    }
    du
}

fn check_upstream(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || (rows > 0 && m.cols() != cols) {
        return Err(Error::Shape(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Returns `dL/dz` for the head inputs and accumulates head gradients.
fn heads_backward(
    params: &MlpParams,
    trace: &HeadTrace,
    d_logits: &Matrix,
    d_v: &Matrix,
    grads: &mut Gradients,
) -> Result<Matrix> {
    let n = trace.z.rows();
    check_upstream("dL/dlogits", d_logits, n, params.classes())?;
    check_upstream("dL/dv", d_v, n, trace.v.cols())?;
    if n == 0 {
        return Ok(Matrix::zeros(0, params.feature_dim()));
    }
    let mut dz = params.classifier.backward(&trace.z, d_logits, &mut grads.classifier);

    let du = normalize_backward(&trace.u, &trace.v, d_v);
    let [g0, g1] = &mut grads.projection;
    let d_act = params.projection[1].backward(&trace.proj_act, &du, g1);
    let act = params.activation;
    let mut d_pre = d_act;
    for r in 0..n {
        let (pre, a) = (trace.proj_pre.row(r), trace.proj_act.row(r));
        for (c, d) in d_pre.row_mut(r).iter_mut().enumerate() {
            *d *= act.derivative(pre[c], a[c]);
        }
    }
    let dz_proj = params.projection[0].backward(&trace.z, &d_pre, g0);
    dz.add_scaled(&dz_proj, 1.0);
    Ok(dz)
}

/// Upstream gradients flowing into the network outputs.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a> {
    pub d_logits: &'a Matrix,
    pub d_v: &'a Matrix,
    /// Gradients on generated-sample outputs; empty matrices when none exist.
    pub d_logits_gen: &'a Matrix,
    pub d_v_gen: &'a Matrix,
}

/// Generated features with their head trace.
#[derive(Debug, Clone, Copy)]
pub struct GeneratedTrace<'a> {
    pub forward: &'a HeadForward,
    pub pairs: &'a [GeneratedPair],
}

/// Exact parameter gradients. Gradients on a generated feature are sent back
/// to its two constituent rows of `z` with the mixing weights.
pub fn backward(
    params: &MlpParams,
    fwd: &Forward,
    generated: Option<GeneratedTrace>,
    up: Upstream,
) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let mut dz = heads_backward(params, &fwd.trace.head, up.d_logits, up.d_v, &mut grads)?;

    match generated {
        Some(gen) => {
            if gen.pairs.len() != gen.forward.trace.z.rows() {
                return Err(Error::Shape(format!(
                    "{} generated pairs for {} traced rows",
                    gen.pairs.len(),
                    gen.forward.trace.z.rows()
                )));
            }
            let dz_gen = heads_backward(params, &gen.forward.trace, up.d_logits_gen, up.d_v_gen, &mut grads)?;
            for (g, pair) in gen.pairs.iter().enumerate() {
                for (row, w) in pair.weights() {
                    for (d, &s) in dz.row_mut(row).iter_mut().zip(dz_gen.row(g)) {
                        *d += w * s;
                    }
                }
            }
        }
        None => {
            if up.d_logits_gen.rows() > 0 || up.d_v_gen.rows() > 0 {
                return Err(Error::MissingTrace("gradients given for generated samples"));
            }
        }
    }

    let act = params.activation;
    let last = params.encoder.len() - 1;
    let mut d_out = dz;
    for l in (0..params.encoder.len()).rev() {
        if l != last {
            // encoder_inputs[l + 1] is the activation output of layer l
            let (pre, a) = (&fwd.trace.encoder_pre[l], &fwd.trace.encoder_inputs[l + 1]);
            for r in 0..d_out.rows() {
                let (pr, ar) = (pre.row(r), a.row(r));
                for (c, d) in d_out.row_mut(r).iter_mut().enumerate() {
                    *d *= act.derivative(pr[c], ar[c]);
                }
            }
        }
        d_out = params.encoder[l].backward(&fwd.trace.encoder_inputs[l], &d_out, &mut grads.encoder[l]);
    }
    Ok(grads)
}
