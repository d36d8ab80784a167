//! Demographic parity, accuracy, and the per-stratum statistics that clients
//! report to the server.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{sigmoid, ModelSpec, ParamVector, DECISION_THRESHOLD};

/// Evaluation of a model's hard decisions on a set of samples.
///
/// `counts[s][y]` is the number of samples with sensitive value `s` and label
/// `y`; `positives[s][y]` how many of those were predicted positive. Every
/// other field is derived from these two tables, which is what makes pooling
/// across clients exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub counts: [[u64; 2]; 2],
    pub positives: [[u64; 2]; 2],
    /// `P(Y'=1 | S=s)`, `None` when the group is empty.
    pub pos_rate_by_group: [Option<f64>; 2],
    /// `P(Y'=1|S=0) - P(Y'=1|S=1)`; `None` marks DP as undefined.
    pub dp_signed: Option<f64>,
    pub dp_abs: Option<f64>,
    pub accuracy: f64,
}

impl FairnessReport {
    pub fn from_counts(counts: [[u64; 2]; 2], positives: [[u64; 2]; 2]) -> Result<Self> {
        for s in 0..2 {
            for y in 0..2 {
                if positives[s][y] > counts[s][y] {
                    return Err(Error::Precondition(format!(
                        "stratum ({s},{y}) has {} positives out of {}",
                        positives[s][y], counts[s][y]
                    )));
                }
            }
        }
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let pos_rate_by_group = [0, 1].map(|s| {
            let n = counts[s][0] + counts[s][1];
            (n > 0).then(|| (positives[s][0] + positives[s][1]) as f64 / n as f64)
        });
        let dp_signed = match pos_rate_by_group {
            [Some(r0), Some(r1)] => Some(r0 - r1),
            _ => None,
        };
        let correct: u64 = (0..2)
            .map(|s| positives[s][1] + (counts[s][0] - positives[s][0]))
            .sum();
        Ok(Self {
            counts,
            positives,
            pos_rate_by_group,
            dp_signed,
            dp_abs: dp_signed.map(f64::abs),
            accuracy: correct as f64 / total as f64,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn dp_undefined(&self) -> bool {
        self.dp_signed.is_none()
    }
}

/// Hard-decision evaluation at threshold 0.5.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<FairnessReport> {
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    if data.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset features",
            expected: spec.input_dim(),
            actual: data.input_dim(),
        });
    }
    let mut counts = [[0u64; 2]; 2];
    let mut positives = [[0u64; 2]; 2];
    for sample in data.samples() {
        let (s, y) = (sample.sensitive as usize, sample.label as usize);
        counts[s][y] += 1;
        if sigmoid(spec.logit(params, &sample.features)) >= DECISION_THRESHOLD {
            positives[s][y] += 1;
        }
    }
    FairnessReport::from_counts(counts, positives)
}

/// Pools client reports into the report of their union. `sizes[i]` must be
/// the number of samples behind `reports[i]`.
pub fn global_fairness(reports: &[FairnessReport], sizes: &[usize]) -> Result<FairnessReport> {
    if reports.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if reports.len() != sizes.len() {
        return Err(Error::DimensionMismatch {
            context: "report sizes",
            expected: reports.len(),
            actual: sizes.len(),
        });
    }
    let mut counts = [[0u64; 2]; 2];
    let mut positives = [[0u64; 2]; 2];
    for (r, &size) in reports.iter().zip(sizes) {
        if r.total() != size as u64 {
            return Err(Error::Precondition(format!(
                "report covers {} samples but size {size} was given",
                r.total()
            )));
        }
        for s in 0..2 {
            for y in 0..2 {
                counts[s][y] += r.counts[s][y];
                positives[s][y] += r.positives[s][y];
            }
        }
    }
    FairnessReport::from_counts(counts, positives)
}

/// Differentiable DP surrogate over the indexed samples: the gap of mean
/// sigmoid outputs `mean_{S=0} p - mean_{S=1} p`, with its gradient written
/// into `grad` (which is overwritten). Returns `None` if either group is absent.
pub(crate) fn output_gap_into(
    spec: &ModelSpec,
    params: &[f64],
    data: &Dataset,
    indices: &[usize],
    grad: &mut [f64],
) -> Option<f64> {
    let mut n = [0usize; 2];
    for &i in indices {
        n[data.samples()[i].sensitive as usize] += 1;
    }
    if n[0] == 0 || n[1] == 0 {
        return None;
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut gap = 0.0;
    for &i in indices {
        let sample = &data.samples()[i];
        let p = sigmoid(spec.logit(params, &sample.features));
        let sign = if sample.sensitive == 0 { 1.0 } else { -1.0 };
        let scale = sign / n[sample.sensitive as usize] as f64;
        gap += scale * p;
        spec.accumulate_logit_grad(params, &sample.features, scale * p * (1.0 - p), grad);
    }
    Some(gap)
}

/// Mean-output gap over a whole dataset and its exact gradient.
pub fn output_gap(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
) -> Result<(f64, ParamVector)> {
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; spec.param_count()];
    let gap = output_gap_into(spec, params, data, &idx, &mut grad)
        .ok_or_else(|| Error::Precondition("both sensitive groups must be present".into()))?;
    Ok((gap, ParamVector::new(grad)?))
}
