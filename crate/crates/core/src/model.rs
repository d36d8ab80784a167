//! Prediction models over flat parameter vectors.
//!
//! Two families are supported: logistic regression and a one-hidden-layer
//! perceptron with `tanh` activations. Both produce a single logit and are
//! trained with mini-batch SGD on a (weighted) negative log-likelihood.
//!
//! Parameter layout:
//!
//! * logistic: `[w_0, .., w_{d-1}, b]`
//! * mlp1: for each hidden unit `h`, `[W_h0, .., W_h(d-1), b_h]`, followed by
//!   the output weights `[v_0, .., v_{H-1}]` and the output bias.

use std::ops::{Deref, Index};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Decision threshold on the predicted probability. Ties go to the positive class.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Logistic,
    Mlp1 {
        hidden_dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    family: ModelFamily,
    input_dim: usize,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if let ModelFamily::Mlp1 { hidden_dim: 0 } = family {
            return Err(Error::config("hidden_dim", "must be positive"));
        }
        Ok(Self { family, input_dim })
    }

    pub fn logistic(input_dim: usize) -> Self {
        Self::new(ModelFamily::Logistic, input_dim).expect("input_dim must be positive")
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize) -> Self {
        Self::new(ModelFamily::Mlp1 { hidden_dim }, input_dim)
            .expect("input_dim and hidden_dim must be positive")
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn param_count(&self) -> usize {
        match self.family {
            ModelFamily::Logistic => self.input_dim + 1,
            ModelFamily::Mlp1 { hidden_dim } => (self.input_dim + 1) * hidden_dim + hidden_dim + 1,
        }
    }

    /// Initial parameters. Logistic models start at zero; the perceptron's
    /// hidden layer is drawn uniformly in `±1/sqrt(d+1)` to break symmetry.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        match self.family {
            ModelFamily::Logistic => ParamVector::zeros(self.param_count()),
            ModelFamily::Mlp1 { hidden_dim } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let bound = 1.0 / ((self.input_dim + 1) as f64).sqrt();
                let hidden = (self.input_dim + 1) * hidden_dim;
                let mut values = vec![0.0; self.param_count()];
                for v in values.iter_mut().take(hidden) {
                    *v = rng.random_range(-bound..bound);
                }
                ParamVector(values)
            }
        }
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "feature vector",
                expected: self.input_dim,
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Raw logit. Dimensions are assumed checked.
    pub(crate) fn logit(&self, params: &[f64], x: &[f64]) -> f64 {
        let d = self.input_dim;
        match self.family {
            ModelFamily::Logistic => dot(&params[..d], x) + params[d],
            ModelFamily::Mlp1 { hidden_dim } => {
                let out = (d + 1) * hidden_dim;
                let mut z = params[out + hidden_dim];
                for h in 0..hidden_dim {
                    let row = &params[h * (d + 1)..(h + 1) * (d + 1)];
                    let a = (dot(&row[..d], x) + row[d]).tanh();
                    z += params[out + h] * a;
                }
                z
            }
        }
    }

    /// Adds `scale * d(logit)/d(params)` into `grad`.
    pub(crate) fn accumulate_logit_grad(
        &self,
        params: &[f64],
        x: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let d = self.input_dim;
        match self.family {
            ModelFamily::Logistic => {
                for (g, xj) in grad[..d].iter_mut().zip(x) {
                    *g += scale * xj;
                }
                grad[d] += scale;
            }
            ModelFamily::Mlp1 { hidden_dim } => {
                let out = (d + 1) * hidden_dim;
                for h in 0..hidden_dim {
                    let row = &params[h * (d + 1)..(h + 1) * (d + 1)];
                    let a = (dot(&row[..d], x) + row[d]).tanh();
                    let v = params[out + h];
                    grad[out + h] += scale * a;
                    let back = scale * v * (1.0 - a * a);
                    let grow = &mut grad[h * (d + 1)..(h + 1) * (d + 1)];
                    for (g, xj) in grow[..d].iter_mut().zip(x) {
                        *g += back * xj;
                    }
                    grow[d] += back;
                }
                grad[out + hidden_dim] += scale;
            }
        }
    }
}

/// Flat model parameters. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// Element-wise `self - other`.
    pub fn delta(&self, other: &ParamVector) -> Result<Vec<f64>> {
        check_same_len(self, other, "parameter delta")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `max_j |self_j - other_j|`.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        Ok(self.delta(other)?.iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn squared_distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

pub(crate) fn check_same_len(a: &[f64], b: &[f64], context: &'static str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                "must be a positive finite number",
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// One term of a weighted batch.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    pub features: &'a [f64],
    pub label: u8,
    pub weight: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln p(y | z)` for a Bernoulli with logit `z`, computed without overflow.
pub(crate) fn nll_from_logit(z: f64, y: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if y == 1 { z } else { 0.0 }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_proba(spec: &ModelSpec, params: &ParamVector, features: &[f64]) -> Result<f64> {
    spec.check_params(params)?;
    spec.check_features(features)?;
    Ok(sigmoid(spec.logit(params, features)))
}

/// Hard decision: `true` iff the predicted probability is at least 0.5.
pub fn predict_label(spec: &ModelSpec, params: &ParamVector, features: &[f64]) -> Result<bool> {
    Ok(predict_proba(spec, params, features)? >= DECISION_THRESHOLD)
}

/// Normalized weighted negative log-likelihood and its exact gradient:
/// `sum_k w_k nll_k / sum_k w_k`.
pub fn weighted_nll_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &[WeightedSample<'_>],
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total_weight = 0.0;
    for s in batch {
        spec.check_features(s.features)?;
        if !(s.weight.is_finite() && s.weight >= 0.0) {
            return Err(Error::Precondition(format!(
                "sample weight must be finite and non-negative, got {}",
                s.weight
            )));
        }
        total_weight += s.weight;
    }
    if total_weight <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let mut grad = vec![0.0; spec.param_count()];
    let mut loss = 0.0;
    for s in batch {
        if s.weight == 0.0 {
            continue;
        }
        let z = spec.logit(params, s.features);
        loss += s.weight * nll_from_logit(z, s.label);
        let residual = sigmoid(z) - f64::from(s.label);
        spec.accumulate_logit_grad(params, s.features, s.weight * residual, &mut grad);
    }
    loss /= total_weight;
    for g in &mut grad {
        *g /= total_weight;
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("weighted nll gradient"));
    }
    Ok((loss, ParamVector(grad)))
}

/// Accumulates the unnormalized weighted NLL gradient of the indexed samples
/// into `grad` and returns the total weight.
pub(crate) fn accumulate_weighted_nll(
    spec: &ModelSpec,
    params: &[f64],
    data: &Dataset,
    weights: Option<&[f64]>,
    indices: &[usize],
    grad: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for &i in indices {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let sample = &data.samples()[i];
        let z = spec.logit(params, &sample.features);
        let residual = sigmoid(z) - f64::from(sample.label);
        spec.accumulate_logit_grad(params, &sample.features, w * residual, grad);
        total += w;
    }
    total
}

/// Shared mini-batch loop. Each epoch shuffles the sample order with the
/// config's seeded generator and calls `batch_grad` once per batch; the
/// closure writes the (already normalized) descent direction into the zeroed
/// buffer and returns `false` to skip the step.
pub(crate) fn minibatch_descent<F>(
    spec: &ModelSpec,
    init: &ParamVector,
    n: usize,
    cfg: &SgdConfig,
    mut batch_grad: F,
) -> Result<ParamVector>
where
    F: FnMut(&[f64], &[usize], &mut [f64]) -> Result<bool>,
{
    cfg.validate()?;
    spec.check_params(init)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = init.clone();
    let mut grad = vec![0.0; spec.param_count()];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            if !batch_grad(&params, batch, &mut grad)? {
                continue;
            }
            for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("sgd parameters"));
        }
    }
    Ok(params)
}

/// Shuffled mini-batch SGD on the normalized weighted NLL. Batches whose
/// weights are all zero are skipped.
pub fn sgd_train(
    spec: &ModelSpec,
    init: &ParamVector,
    data: &Dataset,
    weights: &[f64],
    cfg: &SgdConfig,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset features",
            expected: spec.input_dim(),
            actual: data.input_dim(),
        });
    }
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            context: "sample weights",
            expected: data.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Precondition(
            "sample weights must be finite and non-negative".into(),
        ));
    }
    minibatch_descent(spec, init, data.len(), cfg, |params, batch, grad| {
        let total = accumulate_weighted_nll(spec, params, data, Some(weights), batch, grad);
        if total <= 0.0 {
            return Ok(false);
        }
        grad.iter_mut().for_each(|g| *g /= total);
        Ok(true)
    })
}

/// Mean NLL over a dataset (unit weights).
pub fn mean_nll(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    spec.check_params(params)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = data
        .samples()
        .iter()
        .map(|s| nll_from_logit(spec.logit(params, &s.features), s.label))
        .sum();
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[j] += h;
                dn[j] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn param_count_matches_layout() {
        assert_eq!(ModelSpec::logistic(5).param_count(), 6);
        assert_eq!(ModelSpec::mlp1(5, 3).param_count(), 6 * 3 + 3 + 1);
    }

    #[test]
    fn zero_params_predict_half_and_positive() {
        let spec = ModelSpec::logistic(3);
        let p = ParamVector::zeros(4);
        assert_eq!(predict_proba(&spec, &p, &[0.3, -2.0, 7.0]).unwrap(), 0.5);
        assert!(predict_label(&spec, &p, &[0.3, -2.0, 7.0]).unwrap());
    }

    #[test]
    fn zero_dot_product_gives_half() {
        let spec = ModelSpec::logistic(3);
        let p = ParamVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(predict_proba(&spec, &p, &[0.0, 0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn known_logit_value() {
        let spec = ModelSpec::logistic(1);
        let p = ParamVector::new(vec![2.0, -1.0]).unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((predict_proba(&spec, &p, &[1.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_names_lengths() {
        let spec = ModelSpec::logistic(2);
        let err = predict_proba(&spec, &ParamVector::zeros(3), &[1.0]).unwrap_err();
        match err {
            Error::DimensionMismatch {
                expected, actual, ..
            } => assert_eq!((expected, actual), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(predict_proba(&spec, &ParamVector::zeros(2), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_sample_loss_is_ln2() {
        let spec = ModelSpec::logistic(2);
        let x = [0.4, -1.0];
        let batch = [WeightedSample {
            features: &x,
            label: 1,
            weight: 1.0,
        }];
        let (loss, _) = weighted_nll_gradient(&spec, &ParamVector::zeros(3), &batch).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_sample_is_inert() {
        let spec = ModelSpec::logistic(2);
        let params = ParamVector::new(vec![0.3, -0.2, 0.1]).unwrap();
        let x = [0.4, -1.0];
        let single = [WeightedSample {
            features: &x,
            label: 1,
            weight: 1.0,
        }];
        let dup = [
            WeightedSample {
                features: &x,
                label: 1,
                weight: 2.0,
            },
            WeightedSample {
                features: &x,
                label: 1,
                weight: 0.0,
            },
        ];
        let a = weighted_nll_gradient(&spec, &params, &single).unwrap();
        let b = weighted_nll_gradient(&spec, &params, &dup).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let spec = ModelSpec::logistic(1);
        let x = [1.0];
        let batch = [WeightedSample {
            features: &x,
            label: 0,
            weight: 0.0,
        }];
        assert!(matches!(
            weighted_nll_gradient(&spec, &ParamVector::zeros(2), &batch),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ModelSpec::mlp1(3, 4);
        let params = spec.init_params(7);
        let xs = [[0.5, -1.0, 2.0], [1.5, 0.2, -0.3], [-0.7, 0.9, 0.1]];
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| WeightedSample {
                features: x,
                label: (i % 2) as u8,
                weight: 0.5 + i as f64,
            })
            .collect();
        let (_, grad) = weighted_nll_gradient(&spec, &params, &batch).unwrap();
        let fd = finite_diff(
            |p| {
                weighted_nll_gradient(&spec, &ParamVector(p.to_vec()), &batch)
                    .unwrap()
                    .0
            },
            &params,
            1e-6,
        );
        for (a, b) in grad.iter().zip(&fd) {
            if b.abs() > 1e-8 {
                assert!((a - b).abs() / b.abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn tiny_learning_rate_barely_moves() {
        let spec = ModelSpec::logistic(1);
        let data = Dataset::new(vec![
            LabeledSample::new(vec![1.0], 0, 1).unwrap(),
            LabeledSample::new(vec![-1.0], 1, 0).unwrap(),
        ])
        .unwrap();
        let init = ParamVector::new(vec![0.2, 0.1]).unwrap();
        let cfg = SgdConfig {
            learning_rate: 1e-9,
            epochs: 1,
            batch_size: 1,
            seed: 3,
        };
        let out = sgd_train(&spec, &init, &data, &[1.0, 1.0], &cfg).unwrap();
        assert!(out.max_abs_diff(&init).unwrap() < 1e-6);
    }

    #[test]
    fn empty_dataset_and_bad_config_rejected() {
        let spec = ModelSpec::logistic(1);
        let init = ParamVector::zeros(2);
        let data = Dataset::new(vec![LabeledSample::new(vec![1.0], 0, 1).unwrap()]).unwrap();
        let cfg = SgdConfig {
            epochs: 0,
            ..SgdConfig::default()
        };
        assert!(sgd_train(&spec, &init, &data, &[1.0], &cfg).is_err());
        assert!(sgd_train(&spec, &init, &data, &[], &SgdConfig::default()).is_err());
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(serde_json::from_str::<ParamVector>("[1.0, 2.0]").is_ok());
    }
}
