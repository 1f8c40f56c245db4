//! Feature-learning and noise-memorization statistics.
//!
//! * feature learning `Lambda_j = max_r <w_{j,r}, j v>`
//! * noise memorization `Gamma_{j,i} = max_r <w_{j,r}, xi_i>`, aggregated over
//!   the examples with `y_i = j` by max (`Gamma_j`) or by min (the curve that
//!   is usually plotted next to `Lambda_1`).

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::model::{Evaluation, Weights};

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub loss: f64,
    pub reg_term: f64,
    pub grad_l1: f64,
    pub grad_fro: f64,
    pub train_error: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub gamma_max_plus: f64,
    pub gamma_max_minus: f64,
    pub gamma_min_plus: f64,
    pub gamma_min_minus: f64,
    pub first_coord_plus: f64,
    pub first_coord_minus: f64,
    pub test_error: Option<f64>,
}

impl TrajectoryRecord {
    pub fn feature(&self, j: Label) -> f64 {
        match j {
            Label::Pos => self.lambda_plus,
            Label::Neg => self.lambda_minus,
        }
    }

    pub fn noise(&self, j: Label, mode: Aggregate) -> f64 {
        match (j, mode) {
            (Label::Pos, Aggregate::Max) => self.gamma_max_plus,
            (Label::Neg, Aggregate::Max) => self.gamma_max_minus,
            (Label::Pos, Aggregate::Min) => self.gamma_min_plus,
            (Label::Neg, Aggregate::Min) => self.gamma_min_minus,
        }
    }
}

/// How `Gamma_{j,i}` is reduced over the examples of label `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Max,
    Min,
}

/// `Lambda_j = max_r j * w_{j,r}[1]`.
pub fn feature_alignment(w: &Weights, j: Label) -> f64 {
    (0..w.width())
        .map(|r| j.sign() * w.row(j, r)[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_r j * w_{j,r}[1]`, read off the raw first coordinate. Because the
/// feature direction is `e_1` this coincides with [`feature_alignment`]; it
/// is kept as its own column so sign flips of the coordinate itself can be
/// tracked independently of how the feature vector is represented.
pub fn first_coordinate(w: &Weights, j: Label) -> f64 {
    (0..w.width())
        .map(|r| j.sign() * w.as_slice()[(j.index() * w.width() + r) * w.dim()])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn noise_memorization(w: &Weights, dataset: &Dataset, j: Label, mode: Aggregate) -> Result<f64> {
    let per_example = dataset.examples.iter().filter(|ex| ex.label == j).map(|ex| {
        (0..w.width())
            .map(|r| ex.noise_dot(w.row(j, r)))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    reduce(per_example, mode).ok_or(Error::EmptyLabel(j))
}

/// [`noise_memorization`] from the pre-activations of an existing pass.
pub fn noise_memorization_from(
    eval: &Evaluation,
    dataset: &Dataset,
    m: usize,
    j: Label,
    mode: Aggregate,
) -> Result<f64> {
    let per_example = dataset
        .examples
        .iter()
        .enumerate()
        .filter(|(_, ex)| ex.label == j)
        .map(|(i, _)| {
            (0..m)
                .map(|r| eval.noise_preactivation(j, r, i))
                .fold(f64::NEG_INFINITY, f64::max)
        });
    reduce(per_example, mode).ok_or(Error::EmptyLabel(j))
}

fn reduce(values: impl Iterator<Item = f64>, mode: Aggregate) -> Option<f64> {
    values.reduce(match mode {
        Aggregate::Max => f64::max,
        Aggregate::Min => f64::min,
    })
}

/// Fraction of examples with `F_y <= F_{-y}`.
pub fn classification_error(w: &Weights, dataset: &Dataset, q: u32) -> Result<f64> {
    Ok(Evaluation::new(w, dataset, q)?.error_rate(dataset))
}

/// Quantities computed alongside a gradient pass that a record needs.
#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub iter: usize,
    pub loss: f64,
    pub reg_term: f64,
    pub grad_l1: f64,
    pub grad_fro: f64,
}

/// Assemble a record from an existing pass over the training set.
pub fn record(
    w: &Weights,
    eval: &Evaluation,
    dataset: &Dataset,
    metrics: StepMetrics,
    test_error: Option<f64>,
) -> Result<TrajectoryRecord> {
    let m = w.width();
    let gamma = |j, mode| noise_memorization_from(eval, dataset, m, j, mode);
    Ok(TrajectoryRecord {
        iter: metrics.iter,
        loss: metrics.loss,
        reg_term: metrics.reg_term,
        grad_l1: metrics.grad_l1,
        grad_fro: metrics.grad_fro,
        train_error: eval.error_rate(dataset),
        lambda_plus: feature_alignment(w, Label::Pos),
        lambda_minus: feature_alignment(w, Label::Neg),
        gamma_max_plus: gamma(Label::Pos, Aggregate::Max)?,
        gamma_max_minus: gamma(Label::Neg, Aggregate::Max)?,
        gamma_min_plus: gamma(Label::Pos, Aggregate::Min)?,
        gamma_min_minus: gamma(Label::Neg, Aggregate::Min)?,
        first_coord_plus: first_coordinate(w, Label::Pos),
        first_coord_minus: first_coordinate(w, Label::Neg),
        test_error,
    })
}

/// Default number of consecutive decreases that counts as a flip.
pub const DEFAULT_FLIP_RUN: usize = 5;

/// First iteration at which `Lambda_j` starts a run of `run` consecutive
/// strict decreases between probe points. `None` if no such run exists.
pub fn detect_flip(records: &[TrajectoryRecord], j: Label, run: usize) -> Option<usize> {
    let run = run.max(1);
    let mut streak = 0;
    for k in 1..records.len() {
        if records[k].feature(j) < records[k - 1].feature(j) {
            streak += 1;
            if streak == run {
                return Some(records[k + 1 - run].iter);
            }
        } else {
            streak = 0;
        }
    }
    None
}
