//! Synthetic two-patch data.
//!
//! Each input is `x = [x1, x2]` with two length-`d` patches. One patch is the
//! label-aligned feature `y * v` with `v = e_1`; the other is a noise patch
//! `xi` whose coordinate 1 carries the feature noise `-alpha * y` and which is
//! Gaussian on `s` coordinates drawn uniformly from `{2, ..., d}`.
//!
//! Indices inside the crate are 0-based, so "coordinate 1" is index 0. Only
//! the file format in [`crate::io`] uses 1-based indices.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Pos, Label::Neg];

    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    /// Position of this label's block in weight and output arrays.
    pub fn index(self) -> usize {
        match self {
            Label::Pos => 0,
            Label::Neg => 1,
        }
    }

    pub fn opposite(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    pub fn from_sign(value: i64) -> Option<Label> {
        match value {
            1 => Some(Label::Pos),
            -1 => Some(Label::Neg),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Pos => "+1",
            Label::Neg => "-1",
        })
    }
}

/// Which physical patch carries the feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchOrder {
    FeatureFirst,
    NoiseFirst,
}

impl PatchOrder {
    /// 1 if the feature sits in `x1`, 2 if it sits in `x2`.
    pub fn feature_slot(self) -> u8 {
        match self {
            PatchOrder::FeatureFirst => 1,
            PatchOrder::NoiseFirst => 2,
        }
    }

    pub fn from_feature_slot(slot: u8) -> Option<PatchOrder> {
        match slot {
            1 => Some(PatchOrder::FeatureFirst),
            2 => Some(PatchOrder::NoiseFirst),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub sigma_p: f64,
    pub alpha: f64,
    /// Force exactly `n / 2` examples per label.
    pub balanced: bool,
    pub seed: u64,
}

impl DataConfig {
    /// The synthetic setting used for the headline experiments.
    pub fn standard() -> Self {
        Self {
            d: 1000,
            n: 200,
            s: 100,
            sigma_p: 0.1,
            alpha: 0.2,
            balanced: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(invalid(format!("d must be at least 2, got {}", self.d)));
        }
        if self.n == 0 {
            return Err(invalid("n must be positive"));
        }
        if self.balanced && !self.n.is_multiple_of(2) {
            return Err(invalid(format!("balanced datasets need an even n, got {}", self.n)));
        }
        if self.s == 0 || self.s > self.d - 1 {
            return Err(invalid(format!(
                "s must lie in [1, d-1] = [1, {}], got {}",
                self.d - 1,
                self.s
            )));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(invalid(format!("sigma_p must be positive, got {}", self.sigma_p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One labeled input. The feature patch is implied by `label` and
/// `patch_order`; the noise patch is stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub label: Label,
    pub patch_order: PatchOrder,
    /// Coordinate 1 of the noise patch, always `-alpha * y`.
    pub noise_first: f64,
    /// Sorted 0-based indices of the Gaussian support, all in `1..d`.
    pub support: Vec<u32>,
    /// Gaussian values aligned with `support`.
    pub values: Vec<f64>,
}

impl Example {
    /// `<w, xi>` for a dense length-`d` vector `w`.
    pub fn noise_dot(&self, w: &[f64]) -> f64 {
        let mut acc = w[0] * self.noise_first;
        for (&k, &val) in self.support.iter().zip(&self.values) {
            acc += w[k as usize] * val;
        }
        acc
    }

    /// `<w, y v>`.
    pub fn feature_dot(&self, w: &[f64]) -> f64 {
        self.label.sign() * w[0]
    }

    pub fn noise_norm_sq(&self) -> f64 {
        self.noise_first * self.noise_first + self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn feature_patch(&self, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        x[0] = self.label.sign();
        x
    }

    pub fn noise_patch(&self, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        x[0] = self.noise_first;
        for (&k, &val) in self.support.iter().zip(&self.values) {
            x[k as usize] = val;
        }
        x
    }

    /// The physical patches `(x1, x2)`.
    pub fn patches(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let (f, xi) = (self.feature_patch(d), self.noise_patch(d));
        match self.patch_order {
            PatchOrder::FeatureFirst => (f, xi),
            PatchOrder::NoiseFirst => (xi, f),
        }
    }

    /// Largest 0-based index touched by this example.
    pub fn max_index(&self) -> usize {
        self.support.last().map_or(0, |&k| k as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.config.d
    }

    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }
}

/// Draw one example with a uniformly random label.
pub fn sample_example<R: Rng + ?Sized>(config: &DataConfig, rng: &mut R) -> Result<Example> {
    config.validate()?;
    let label = if rng.random::<bool>() { Label::Pos } else { Label::Neg };
    Ok(draw_example(config, label, rng))
}

/// Draw one example with a prescribed label.
pub fn sample_example_with_label<R: Rng + ?Sized>(config: &DataConfig, label: Label, rng: &mut R) -> Result<Example> {
    config.validate()?;
    Ok(draw_example(config, label, rng))
}

fn draw_example<R: Rng + ?Sized>(config: &DataConfig, label: Label, rng: &mut R) -> Example {
    let mut support: Vec<u32> = index::sample(rng, config.d - 1, config.s)
        .into_iter()
        .map(|k| (k + 1) as u32)
        .collect();
    support.sort_unstable();
    let normal = Normal::new(0.0, config.sigma_p).expect("sigma_p validated");
    let values = support.iter().map(|_| normal.sample(rng)).collect();
    let patch_order = if rng.random::<bool>() {
        PatchOrder::FeatureFirst
    } else {
        PatchOrder::NoiseFirst
    };
    Example {
        label,
        patch_order,
        noise_first: -config.alpha * label.sign(),
        support,
        values,
    }
}

/// Draw `config.n` examples from `rng`.
pub fn sample_dataset_with<R: Rng + ?Sized>(config: &DataConfig, rng: &mut R) -> Result<Dataset> {
    config.validate()?;
    let examples = if config.balanced {
        let mut labels: Vec<Label> = std::iter::repeat_n(Label::Pos, config.n / 2)
            .chain(std::iter::repeat_n(Label::Neg, config.n / 2))
            .collect();
        labels.shuffle(rng);
        labels
            .into_iter()
            .map(|label| draw_example(config, label, rng))
            .collect()
    } else {
        (0..config.n)
            .map(|_| {
                let label = if rng.random::<bool>() { Label::Pos } else { Label::Neg };
                draw_example(config, label, rng)
            })
            .collect()
    };
    Ok(Dataset {
        config: config.clone(),
        examples,
    })
}

/// The training set: the dataset stream of `config.seed`.
pub fn sample_dataset(config: &DataConfig) -> Result<Dataset> {
    sample_dataset_with(config, &mut stream_rng(config.seed, Stream::Dataset))
}

/// A fresh i.i.d. test set of `size` examples drawn from the test-set stream
/// of `config.seed`, independent of the training draw.
pub fn sample_test_set(config: &DataConfig, size: usize) -> Result<Dataset> {
    let test_config = DataConfig {
        n: size,
        balanced: false,
        ..config.clone()
    };
    sample_dataset_with(&test_config, &mut stream_rng(config.seed, Stream::TestSet))
}

/// Advisory comparison of `lambda` against the scale `d^{-(q-1)/4} / n`
/// below which training is expected to leave the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizationAdvice {
    pub lambda: f64,
    pub scale: f64,
    pub below_scale: bool,
    pub warnings: Vec<String>,
}

pub fn check_regularization_scale(config: &DataConfig, lambda: f64, q: u32) -> RegularizationAdvice {
    let scale = (config.d as f64).powf(-(q as f64 - 1.0) / 4.0) / config.n as f64;
    let mut warnings = Vec::new();
    if lambda < 0.0 {
        warnings.push(format!(
            "lambda = {lambda} is negative; weight decay must be nonnegative"
        ));
    } else if lambda == 0.0 {
        warnings.push("lambda = 0: the objective has no weight decay, so there is no regularization stage".to_string());
    }
    let below_scale = lambda < scale;
    if !below_scale {
        warnings.push(format!(
            "lambda = {lambda} is not below the scale d^(-(q-1)/4)/n = {scale:.3e}; \
             training may stall at the origin"
        ));
    }
    RegularizationAdvice {
        lambda,
        scale,
        below_scale,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn small() -> DataConfig {
        DataConfig {
            d: 50,
            n: 10,
            s: 7,
            sigma_p: 0.3,
            alpha: 0.2,
            balanced: false,
            seed: 3,
        }
    }

    #[test]
    fn preset_examples_have_exact_structure() {
        let cfg = DataConfig::standard();
        let ds = sample_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 200);
        for ex in &ds.examples {
            assert_eq!(ex.support.len(), 100);
            assert!(ex.support.iter().all(|&k| k >= 1 && (k as usize) < cfg.d));
            assert!(ex.support.windows(2).all(|w| w[0] < w[1]));
            assert!(ex.values.iter().all(|v| *v != 0.0));
            assert_eq!(ex.noise_first, -0.2 * ex.label.sign());
            let f = ex.feature_patch(cfg.d);
            assert_eq!(f.iter().filter(|v| **v != 0.0).count(), 1);
            assert_eq!(f[0], ex.label.sign());
        }
    }

    #[test]
    fn tiny_alpha_is_carried_exactly() {
        let cfg = DataConfig { alpha: 1e-9, ..small() };
        let mut rng = stream_rng(1, Stream::Dataset);
        for _ in 0..20 {
            let ex = sample_example(&cfg, &mut rng).unwrap();
            assert_eq!(ex.noise_first, -1e-9 * ex.label.sign());
        }
    }

    #[test]
    fn noise_variance_matches_sigma_p() {
        // 1e5 examples at s = 1 give 1e5 independent N(0, sigma_p^2) draws.
        let cfg = DataConfig {
            d: 20,
            s: 1,
            sigma_p: 0.1,
            ..small()
        };
        let mut rng = stream_rng(11, Stream::Oracle);
        let mut sum_sq = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let ex = sample_example(&cfg, &mut rng).unwrap();
            sum_sq += ex.values[0] * ex.values[0];
        }
        let var = sum_sq / draws as f64;
        assert!((var - 0.01).abs() <= 0.02 * 0.01, "empirical variance {var}");
    }

    #[test]
    fn balanced_sets_split_evenly() {
        let ds = sample_dataset(&DataConfig::standard()).unwrap();
        assert_eq!(ds.count(Label::Pos), 100);
        assert_eq!(ds.count(Label::Neg), 100);

        let two = DataConfig {
            n: 2,
            balanced: true,
            ..small()
        };
        let ds = sample_dataset(&two).unwrap();
        assert_eq!(ds.count(Label::Pos), 1);
        assert_eq!(ds.count(Label::Neg), 1);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let cfg = DataConfig::standard();
        assert_eq!(sample_dataset(&cfg).unwrap(), sample_dataset(&cfg).unwrap());
        let other = DataConfig { seed: 1, ..cfg.clone() };
        assert_ne!(sample_dataset(&cfg).unwrap(), sample_dataset(&other).unwrap());
    }

    #[test]
    fn test_set_is_independent_of_training_draw() {
        let cfg = small();
        let train = sample_dataset(&cfg).unwrap();
        let test = sample_test_set(&cfg, cfg.n).unwrap();
        assert_ne!(train.examples, test.examples);
        assert_eq!(test, sample_test_set(&cfg, cfg.n).unwrap());
    }

    #[test]
    fn both_patch_orders_occur() {
        let ds = sample_dataset(&DataConfig::standard()).unwrap();
        let first = ds
            .examples
            .iter()
            .filter(|e| e.patch_order == PatchOrder::FeatureFirst)
            .count();
        assert!(first > 60 && first < 140, "{first} feature-first examples");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            DataConfig { s: 50, ..small() },
            DataConfig { s: 0, ..small() },
            DataConfig { alpha: 0.0, ..small() },
            DataConfig { alpha: 1.0, ..small() },
            DataConfig {
                sigma_p: 0.0,
                ..small()
            },
            DataConfig {
                n: 3,
                balanced: true,
                ..small()
            },
        ];
        for cfg in bad {
            assert!(sample_dataset(&cfg).is_err(), "{cfg:?} accepted");
        }
        assert!(sample_dataset(&DataConfig { s: 49, ..small() }).is_ok());
    }

    #[test]
    fn regularization_scale_advice() {
        let cfg = DataConfig::standard();
        let advice = check_regularization_scale(&cfg, 1e-5, 3);
        assert!((advice.scale - 1000f64.powf(-0.5) / 200.0).abs() < 1e-15);
        assert!((advice.scale - 1.58e-4).abs() < 1e-6);
        assert!(advice.below_scale);
        assert!(advice.warnings.is_empty());

        let zero = check_regularization_scale(&cfg, 0.0, 3);
        assert_eq!(zero.warnings.len(), 1);
        assert!(zero.warnings[0].contains("no regularization stage"));

        let big = check_regularization_scale(&cfg, 1.0, 3);
        assert!(!big.below_scale);
        assert!(!big.warnings.is_empty());
    }

    #[test]
    fn dense_patches_agree_with_sparse_products() {
        let cfg = small();
        let ds = sample_dataset(&cfg).unwrap();
        let w: Vec<f64> = (0..cfg.d).map(|k| (k as f64 * 0.37).sin()).collect();
        for ex in &ds.examples {
            let xi = ex.noise_patch(cfg.d);
            let dense: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((dense - ex.noise_dot(&w)).abs() < 1e-12);
            let (x1, x2) = ex.patches(cfg.d);
            match ex.patch_order {
                PatchOrder::FeatureFirst => assert_eq!((x1[0], &x2), (ex.label.sign(), &xi)),
                PatchOrder::NoiseFirst => assert_eq!((x2[0], &x1), (ex.label.sign(), &xi)),
            }
        }
    }
}
