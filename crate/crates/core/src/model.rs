//! Two-layer CNN with a truncated polynomial activation.
//!
//! `F_j(W, x) = sum_r [ sigma(<w_{j,r}, x1>) + sigma(<w_{j,r}, x2>) ]` with
//! `sigma(z) = max(0, z)^q`, one output per label `j`. The objective is the
//! mean softmax cross-entropy plus `(lambda / 2) * ||W||_F^2`.

use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Example, Label};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub m: usize,
    pub q: u32,
    pub sigma_0: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn standard() -> Self {
        Self {
            m: 20,
            q: 3,
            sigma_0: 0.01,
            lambda: 1e-5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("width m must be positive"));
        }
        if self.q < 3 {
            return Err(invalid(format!(
                "activation degree q must be at least 3, got {}",
                self.q
            )));
        }
        if !(self.sigma_0 > 0.0 && self.sigma_0.is_finite()) {
            return Err(invalid(format!("sigma_0 must be positive, got {}", self.sigma_0)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// The `2 * m` neuron weights, stored as one dense buffer: the `j = +1`
/// block (rows `r = 0..m`) followed by the `j = -1` block.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    d: usize,
    m: usize,
    data: Vec<f64>,
}

/// Gradients share the weight layout.
pub type Gradient = Weights;

impl Weights {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            data: vec![0.0; 2 * m * d],
        }
    }

    pub fn from_vec(d: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * m * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * m * d,
                found: data.len(),
            });
        }
        Ok(Self { d, m, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn width(&self) -> usize {
        self.m
    }

    fn offset(&self, j: Label, r: usize) -> usize {
        debug_assert!(r < self.m);
        (j.index() * self.m + r) * self.d
    }

    pub fn row(&self, j: Label, r: usize) -> &[f64] {
        let o = self.offset(j, r);
        &self.data[o..o + self.d]
    }

    pub fn row_mut(&mut self, j: Label, r: usize) -> &mut [f64] {
        let o = self.offset(j, r);
        &mut self.data[o..o + self.d]
    }

    /// Rows in checkpoint order: `j = +1` then `j = -1`, `r` ascending.
    pub fn rows(&self) -> impl Iterator<Item = (Label, usize, &[f64])> {
        let (m, d) = (self.m, self.d);
        self.data
            .chunks_exact(d)
            .enumerate()
            .map(move |(idx, row)| (if idx < m { Label::Pos } else { Label::Neg }, idx % m, row))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            d: self.d,
            m: self.m,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: dataset.dim(),
            });
        }
        Ok(())
    }
}

/// Every coordinate i.i.d. `N(0, sigma_0^2)`, drawn from the init stream of
/// `config.seed`.
pub fn init_weights(config: &ModelConfig, d: usize) -> Result<Weights> {
    config.validate()?;
    let normal = Normal::new(0.0, config.sigma_0).map_err(|e| invalid(e.to_string()))?;
    let mut rng = stream_rng(config.seed, Stream::Init);
    let data = (0..2 * config.m * d).map(|_| normal.sample(&mut rng)).collect();
    Weights::from_vec(d, config.m, data)
}

pub fn activation(z: f64, q: u32) -> f64 {
    if z > 0.0 {
        z.powi(q as i32)
    } else {
        0.0
    }
}

/// Derivative of [`activation`], taken as 0 at the kink.
pub fn activation_prime(z: f64, q: u32) -> f64 {
    if z > 0.0 {
        q as f64 * z.powi(q as i32 - 1)
    } else {
        0.0
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-z})` without overflow.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Outputs, softmax probabilities and residuals for one example, indexed by
/// [`Label::index`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardRecord {
    pub outputs: [f64; 2],
    pub logits: [f64; 2],
    pub residuals: [f64; 2],
}

impl ForwardRecord {
    fn from_outputs(outputs: [f64; 2], y: Label) -> Self {
        let logits = [sigmoid(outputs[0] - outputs[1]), sigmoid(outputs[1] - outputs[0])];
        // l_{y} = 1 - logit_y = logit_{-y}; writing both residuals through
        // logit_{-y} keeps them exact negatives.
        let wrong = logits[y.opposite().index()];
        let mut residuals = [0.0; 2];
        residuals[y.index()] = wrong;
        residuals[y.opposite().index()] = -wrong;
        Self {
            outputs,
            logits,
            residuals,
        }
    }

    pub fn output(&self, j: Label) -> f64 {
        self.outputs[j.index()]
    }

    pub fn logit(&self, j: Label) -> f64 {
        self.logits[j.index()]
    }

    pub fn residual(&self, j: Label) -> f64 {
        self.residuals[j.index()]
    }
}

pub fn forward(w: &Weights, example: &Example, q: u32) -> Result<ForwardRecord> {
    if example.max_index() >= w.d {
        return Err(Error::DimensionMismatch {
            expected: w.d,
            found: example.max_index() + 1,
        });
    }
    let mut outputs = [0.0; 2];
    for j in Label::BOTH {
        outputs[j.index()] = (0..w.m)
            .map(|r| {
                let row = w.row(j, r);
                activation(example.feature_dot(row), q) + activation(example.noise_dot(row), q)
            })
            .sum();
    }
    Ok(ForwardRecord::from_outputs(outputs, example.label))
}

/// One pass of the network over a dataset: noise-patch pre-activations for
/// every `(j, r, i)` and both outputs for every example. Loss, gradient and
/// the probes all derive from it.
#[derive(Clone, Debug)]
pub struct Evaluation {
    m: usize,
    n: usize,
    q: u32,
    noise_pre: Vec<f64>,
    records: Vec<ForwardRecord>,
}

impl Evaluation {
    pub fn new(w: &Weights, dataset: &Dataset, q: u32) -> Result<Self> {
        w.check_dataset(dataset)?;
        let (m, n) = (w.m, dataset.len());
        let mut noise_pre = vec![0.0; 2 * m * n];
        let mut outputs = vec![[0.0f64; 2]; n];
        for j in Label::BOTH {
            for r in 0..m {
                let row = w.row(j, r);
                let base = (j.index() * m + r) * n;
                for (i, ex) in dataset.examples.iter().enumerate() {
                    let b = ex.noise_dot(row);
                    noise_pre[base + i] = b;
                    outputs[i][j.index()] += activation(ex.feature_dot(row), q) + activation(b, q);
                }
            }
        }
        let records = outputs
            .into_iter()
            .zip(&dataset.examples)
            .map(|(o, ex)| ForwardRecord::from_outputs(o, ex.label))
            .collect();
        Ok(Self {
            m,
            n,
            q,
            noise_pre,
            records,
        })
    }

    pub fn records(&self) -> &[ForwardRecord] {
        &self.records
    }

    /// `<w_{j,r}, xi_i>`.
    pub fn noise_preactivation(&self, j: Label, r: usize, i: usize) -> f64 {
        self.noise_pre[(j.index() * self.m + r) * self.n + i]
    }

    /// Mean cross-entropy, without the weight-decay term.
    pub fn data_loss(&self, dataset: &Dataset) -> f64 {
        let total: f64 = self
            .records
            .iter()
            .zip(&dataset.examples)
            .map(|(rec, ex)| softplus(rec.output(ex.label.opposite()) - rec.output(ex.label)))
            .sum();
        total / self.n as f64
    }

    /// Fraction of examples with `F_y <= F_{-y}`; ties count as errors.
    pub fn error_rate(&self, dataset: &Dataset) -> f64 {
        let wrong = self
            .records
            .iter()
            .zip(&dataset.examples)
            .filter(|(rec, ex)| rec.output(ex.label) <= rec.output(ex.label.opposite()))
            .count();
        wrong as f64 / self.n as f64
    }

    /// Gradient of the regularized objective at the weights this pass was
    /// computed from. Costs `O(n m s)` plus the dense `lambda * W` term.
    pub fn gradient(&self, w: &Weights, dataset: &Dataset, lambda: f64) -> Gradient {
        let q = self.q;
        let inv_n = 1.0 / self.n as f64;
        let mut grad = w.scaled(lambda);
        for j in Label::BOTH {
            for r in 0..self.m {
                let w0 = w.row(j, r)[0];
                let g = grad.row_mut(j, r);
                for (i, (ex, rec)) in dataset.examples.iter().zip(&self.records).enumerate() {
                    let resid = rec.residual(j);
                    let y = ex.label.sign();
                    let feature = y * resid * activation_prime(y * w0, q);
                    let noise = resid * activation_prime(self.noise_preactivation(j, r, i), q);
                    g[0] -= inv_n * (feature + noise * ex.noise_first);
                    if noise != 0.0 {
                        let c = inv_n * noise;
                        for (&k, &val) in ex.support.iter().zip(&ex.values) {
                            g[k as usize] -= c * val;
                        }
                    }
                }
            }
        }
        grad
    }
}

/// `(lambda / 2) * ||W||_F^2`.
pub fn regularizer(w: &Weights, lambda: f64) -> f64 {
    0.5 * lambda * w.frobenius_sq()
}

pub fn loss(w: &Weights, dataset: &Dataset, q: u32, lambda: f64) -> Result<f64> {
    let eval = Evaluation::new(w, dataset, q)?;
    Ok(eval.data_loss(dataset) + regularizer(w, lambda))
}

pub fn gradient(w: &Weights, dataset: &Dataset, q: u32, lambda: f64) -> Result<Gradient> {
    let eval = Evaluation::new(w, dataset, q)?;
    Ok(eval.gradient(w, dataset, lambda))
}
