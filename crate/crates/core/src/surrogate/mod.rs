//! Neural surrogate `ĝ = F_φ ∘ E_ψ`: a tanh encoder to a latent space
//! followed by a tanh prediction head with a linear output.

mod dataset;
mod gemm;

use alloc::vec;
use alloc::vec::Vec;

use libm::{sqrt, tanh};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, PointSet, Result};
use gemm::{gemm, View};

pub use dataset::{Dataset, Provenance};

/// Layer widths. `encoder` starts at the input dimension and ends at the
/// latent width, which is also `head[0]`; `head` ends at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<usize>,
    pub head: Vec<usize>,
}

impl Architecture {
    /// `[d, 40, 10]` encoder and `[10, 20, 20, 1]` head.
    pub fn standard(dim: usize) -> Self {
        Architecture {
            encoder: vec![dim, 40, 10],
            head: vec![10, 20, 20, 1],
        }
    }

    /// A plain `[2, 20, 20, 1]` network whose second hidden layer is the latent space.
    pub fn four_mode() -> Self {
        Architecture {
            encoder: vec![2, 20, 20],
            head: vec![20, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.encoder.len() >= 2
            && self.head.len() >= 2
            && self.encoder.last() == self.head.first()
            && self.head.last() == Some(&1)
            && self.encoder.iter().chain(&self.head).all(|&w| w > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("surrogate layer widths do not chain to a scalar output"))
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder.last().expect("validated")
    }

    fn n_encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }

    fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut offset = 0;
        let n_enc = self.n_encoder_layers();
        let widths = self.encoder.windows(2).chain(self.head.windows(2));
        let total = self.encoder.len() + self.head.len() - 2;
        for (i, w) in widths.enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            out.push(Layer {
                n_in,
                n_out,
                w: offset,
                b: offset + n_in * n_out,
                tanh: i + 1 < total,
                encoder: i < n_enc,
            });
            offset += n_in * n_out + n_out;
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_in * l.n_out + l.n_out).sum()
    }

    /// Parameter index range of the last encoder layer (weights and bias).
    pub fn last_encoder_range(&self) -> core::ops::Range<usize> {
        let l = &self.layers()[self.n_encoder_layers() - 1];
        l.w..l.b + l.n_out
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Offset of the `n_out x n_in` row-major weight matrix.
    w: usize,
    b: usize,
    tanh: bool,
    encoder: bool,
}

/// Smoothed gradient-balancing rule for the regularization weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaRule {
    pub ratio: f64,
    pub smoothing: f64,
    pub max: f64,
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule {
            ratio: 0.05,
            smoothing: 0.05,
            max: 1e3,
        }
    }
}

impl LambdaRule {
    /// `λ ← (1-α) λ + α · ratio · ‖∇data‖ / max(‖∇R‖, 1e-12)`, clamped.
    pub fn update(&self, lambda: f64, data_norm: f64, reg_norm: f64) -> f64 {
        let target = self.ratio * data_norm / reg_norm.max(1e-12);
        ((1.0 - self.smoothing) * lambda + self.smoothing * target).clamp(0.0, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub freeze_last_encoder: bool,
    pub lambda: LambdaRule,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iters: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            freeze_last_encoder: false,
            lambda: LambdaRule::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Regularized loss before each step.
    pub losses: Vec<f64>,
    /// Data misfit (scaled units) after the last step.
    pub final_mse: f64,
    pub final_lambda: f64,
}

/// Value and gradient of the training objective.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub mse: f64,
    /// Gradient of the full objective, MSE plus `λ‖θ‖²`.
    pub grad: Vec<f64>,
    pub data_grad_norm: f64,
    /// `‖∇‖θ‖²‖ = 2‖θ‖`.
    pub reg_grad_norm: f64,
}

/// Network parameters, the current regularization weight and a fixed affine
/// output map `ĝ = shift + scale · net(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    arch: Architecture,
    params: Vec<f64>,
    lambda: f64,
    shift: f64,
    scale: f64,
}

impl Surrogate {
    /// Weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases, `λ = 0`.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut s = Surrogate::zeros(arch)?;
        for l in s.arch.layers() {
            let bound = 1.0 / sqrt(l.n_in as f64);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut s.params[l.w..l.b] {
                *w = dist.sample(rng);
            }
        }
        Ok(s)
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let n = arch.n_params();
        Ok(Surrogate {
            arch,
            params: vec![0.0; n],
            lambda: 0.0,
            shift: 0.0,
            scale: 1.0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn output_map(&self) -> (f64, f64) {
        (self.shift, self.scale)
    }

    /// Sets `ĝ = shift + scale · net(x)`; training targets are mapped back accordingly.
    pub fn set_output_map(&mut self, shift: f64, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite() && shift.is_finite()) {
            return Err(Error::invalid("output scale must be positive and finite"));
        }
        self.shift = shift;
        self.scale = scale;
        Ok(())
    }

    /// Latent vector and prediction for one input.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(x.len(), self.arch.input_dim(), "surrogate input dimension");
        let mut a = x.to_vec();
        let mut latent = Vec::new();
        for l in self.arch.layers() {
            let mut z = self.params[l.b..l.b + l.n_out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.params[l.w + o * l.n_in..l.w + (o + 1) * l.n_in];
                *zo += row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>();
                if l.tanh {
                    *zo = tanh(*zo);
                }
            }
            a = z;
            if l.encoder {
                latent = a.clone();
            }
        }
        (latent, self.shift + self.scale * a[0])
    }

    /// Batched forward pass; returns the activations of every layer, input first.
    fn activations(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let layers = self.arch.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for l in &layers {
            let mut z = vec![0.0; n * l.n_out];
            for row in z.chunks_exact_mut(l.n_out) {
                row.copy_from_slice(&self.params[l.b..l.b + l.n_out]);
            }
            let prev = acts.last().expect("input pushed");
            let w = View::row_major(&self.params[l.w..l.b], l.n_out, l.n_in);
            gemm(1.0, View::row_major(prev, n, l.n_in), w.t(), 1.0, &mut z);
            if l.tanh {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(z);
        }
        acts
    }

    /// Predictions `ĝ` at every point.
    pub fn predict(&self, points: &PointSet) -> Vec<f64> {
        self.predict_with_latent(points).0
    }

    /// Latent codes `E_ψ(x)` at every point.
    pub fn encode(&self, points: &PointSet) -> PointSet {
        self.predict_with_latent(points).1
    }

    pub fn predict_with_latent(&self, points: &PointSet) -> (Vec<f64>, PointSet) {
        assert_eq!(points.dim(), self.arch.input_dim(), "surrogate input dimension");
        let n = points.len();
        if n == 0 {
            return (Vec::new(), PointSet::new(self.arch.latent_dim()));
        }
        let mut acts = self.activations(points.as_flat(), n);
        let out = acts.pop().expect("output layer");
        let latent = acts.swap_remove(self.arch.n_encoder_layers());
        let preds = out.iter().map(|v| self.shift + self.scale * v).collect();
        (preds, PointSet::from_flat(self.arch.latent_dim(), latent))
    }

    /// Objective `mean((net(x) - t)²) + λ‖θ‖²` with `t = (y - shift) / scale`,
    /// and its gradient by reverse-mode differentiation.
    pub fn loss_and_grad(&self, inputs: &PointSet, labels: &[f64]) -> LossGrad {
        let n = inputs.len();
        assert!(n > 0, "empty batch");
        assert_eq!(labels.len(), n);
        let layers = self.arch.layers();
        let acts = self.activations(inputs.as_flat(), n);
        let out = acts.last().expect("output");
        let mut delta: Vec<f64> = Vec::with_capacity(n);
        let mut mse = 0.0;
        for (o, y) in out.iter().zip(labels) {
            let r = o - (y - self.shift) / self.scale;
            mse += r * r;
            delta.push(2.0 * r / n as f64);
        }
        mse /= n as f64;

        let mut grad = vec![0.0; self.params.len()];
        for (li, l) in layers.iter().enumerate().rev() {
            let a_out = &acts[li + 1];
            if l.tanh {
                delta.iter_mut().zip(a_out).for_each(|(d, a)| *d *= 1.0 - a * a);
            }
            let a_in = &acts[li];
            let dv = View::row_major(&delta, n, l.n_out);
            gemm(1.0, dv.t(), View::row_major(a_in, n, l.n_in), 0.0, &mut grad[l.w..l.b]);
            for row in delta.chunks_exact(l.n_out) {
                grad[l.b..l.b + l.n_out].iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            if li > 0 {
                let mut next = vec![0.0; n * l.n_in];
                gemm(1.0, dv, View::row_major(&self.params[l.w..l.b], l.n_out, l.n_in), 0.0, &mut next);
                delta = next;
            }
        }

        let data_grad_norm = sqrt(grad.iter().map(|g| g * g).sum());
        let sq: f64 = self.params.iter().map(|p| p * p).sum();
        for (g, p) in grad.iter_mut().zip(&self.params) {
            *g += 2.0 * self.lambda * p;
        }
        LossGrad {
            loss: mse + self.lambda * sq,
            mse,
            grad,
            data_grad_norm,
            reg_grad_norm: 2.0 * sqrt(sq),
        }
    }

    /// Full-batch Adam on the dataset. The regularization weight follows
    /// [`LambdaRule`] after every step and persists across calls.
    pub fn train(&mut self, data: &Dataset, opts: &TrainOptions) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::invalid("cannot train on an empty dataset"));
        }
        if data.dim() != self.arch.input_dim() {
            return Err(Error::invalid("dataset dimension does not match the surrogate"));
        }
        let frozen = if opts.freeze_last_encoder {
            self.arch.last_encoder_range()
        } else {
            0..0
        };
        let np = self.params.len();
        let (mut m, mut v) = (vec![0.0; np], vec![0.0; np]);
        let (mut b1t, mut b2t) = (1.0, 1.0);
        let mut losses = Vec::with_capacity(opts.iters);
        for step in 0..opts.iters {
            let lg = self.loss_and_grad(data.inputs(), data.labels());
            if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::SurrogateDivergence { step });
            }
            losses.push(lg.loss);
            b1t *= opts.beta1;
            b2t *= opts.beta2;
            let step_size = opts.learning_rate * sqrt(1.0 - b2t) / (1.0 - b1t);
            for i in 0..np {
                if frozen.contains(&i) {
                    continue;
                }
                let g = lg.grad[i];
                m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g;
                v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g * g;
                self.params[i] -= step_size * m[i] / (sqrt(v[i]) + opts.epsilon * sqrt(1.0 - b2t));
            }
            self.lambda = opts.lambda.update(self.lambda, lg.data_grad_norm, lg.reg_grad_norm);
        }
        let last = self.loss_and_grad(data.inputs(), data.labels());
        if !last.loss.is_finite() {
            return Err(Error::SurrogateDivergence { step: opts.iters });
        }
        Ok(TrainReport {
            losses,
            final_mse: last.mse,
            final_lambda: self.lambda,
        })
    }
}
