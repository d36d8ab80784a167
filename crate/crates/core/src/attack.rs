//! The fairness-targeted poisoning adversary.
//!
//! An insider client builds a biased but accurate target model by
//! inverse-debiasing fine-tuning: it measures how much the (debiased) global
//! model shifted each group's positive rate relative to a model trained
//! without fairness constraints, then fine-tunes the global model with
//! per-stratum loss weights that undo that shift. The target is implanted by
//! model replacement, with the attacker's aggregation weight inferred from
//! the global model's response to a first probe upload.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::fairness::{evaluate, output_gap_into, FairnessReport};
use crate::local::train_plain;
use crate::model::{
    check_same_len, minibatch_descent, sgd_train, ModelSpec, ParamVector, SgdConfig,
};

/// Lower clamp on every λ entry before normalization.
pub const LAMBDA_FLOOR: f64 = 1e-4;
/// Local positive rates below this are treated as zero.
pub const RATE_EPSILON: f64 = 1e-6;
/// Magnitude substituted for a relative increment whose denominator vanished.
pub const INCREMENT_CAP: f64 = 10.0;
/// Coordinates whose target delta is at most this are ignored by the weight
/// estimator.
pub const ESTIMATE_TOLERANCE: f64 = 1e-8;
/// Smallest weight the estimator reports.
pub const MIN_ESTIMATED_WEIGHT: f64 = 1e-6;

/// Per-stratum loss weights, indexed `[sensitive][label]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTable {
    /// Normalized weights: positive, summing to one.
    pub values: [[f64; 2]; 2],
    /// Clamped weights before normalization.
    pub raw: [[f64; 2]; 2],
    /// Relative positive-rate increment `d_s` of the global model over the
    /// unconstrained local model.
    pub increments: [f64; 2],
    /// Groups whose local positive rate was too small to divide by.
    pub capped: [bool; 2],
}

impl LambdaTable {
    pub fn uniform() -> Self {
        Self {
            values: [[0.25; 2]; 2],
            raw: [[0.25; 2]; 2],
            increments: [0.0; 2],
            capped: [false; 2],
        }
    }

    pub fn weight(&self, sensitive: u8, label: u8) -> f64 {
        self.values[sensitive as usize][label as usize]
    }

    pub fn sample_weights(&self, data: &Dataset) -> Vec<f64> {
        data.samples()
            .iter()
            .map(|s| self.weight(s.sensitive, s.label))
            .collect()
    }
}

/// Adaptive λ: for each group `s`,
/// `d_s = (P_global(Y'=1|s) - P_local(Y'=1|s)) / |P_local(Y'=1|s)|`,
/// `λ_{s,1} = 1/4 - γ d_s`, `λ_{s,0} = 1/4 + γ d_s`, each clamped below at
/// [`LAMBDA_FLOOR`], then normalized to sum to one.
pub fn compute_lambda(
    global: &FairnessReport,
    local: &FairnessReport,
    gamma: f64,
) -> Result<LambdaTable> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::config("gamma", "must be a positive finite number"));
    }
    let mut raw = [[0.0; 2]; 2];
    let mut increments = [0.0; 2];
    let mut capped = [false; 2];
    for s in 0..2 {
        let (Some(pg), Some(pl)) = (global.pos_rate_by_group[s], local.pos_rate_by_group[s]) else {
            return Err(Error::Precondition(format!(
                "positive rate of group {s} is undefined"
            )));
        };
        let numerator = pg - pl;
        let d = if pl.abs() < RATE_EPSILON {
            capped[s] = true;
            if numerator == 0.0 {
                0.0
            } else {
                numerator.signum() * INCREMENT_CAP
            }
        } else {
            numerator / pl.abs()
        };
        increments[s] = d;
        raw[s][1] = (0.25 - gamma * d).max(LAMBDA_FLOOR);
        raw[s][0] = (0.25 + gamma * d).max(LAMBDA_FLOOR);
    }
    let total: f64 = raw.iter().flatten().sum();
    let values = raw.map(|row| row.map(|v| v / total));
    Ok(LambdaTable {
        values,
        raw,
        increments,
        capped,
    })
}

/// Output of inverse-debiasing fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuned {
    /// The target model θ_goal.
    pub params: ParamVector,
    pub lambda: LambdaTable,
    /// The unconstrained reference model trained on the attacker's shard.
    pub local_params: ParamVector,
}

/// Inverse-debiasing fine-tuning with one SGD configuration for both the
/// reference model and the weighted fine-tune.
pub fn id_finetune(
    spec: &ModelSpec,
    global: &ParamVector,
    shard: &Dataset,
    gamma: f64,
    cfg: &SgdConfig,
) -> Result<FineTuned> {
    id_finetune_with(spec, global, shard, gamma, cfg, cfg)
}

/// Inverse-debiasing fine-tuning:
///
/// 1. train an unconstrained reference model from `global` on the shard,
/// 2. evaluate both models' group positive rates on the shard,
/// 3. derive the λ table,
/// 4. fine-tune `global` on the shard with per-sample weight `λ_{s,y}`.
pub fn id_finetune_with(
    spec: &ModelSpec,
    global: &ParamVector,
    shard: &Dataset,
    gamma: f64,
    local_cfg: &SgdConfig,
    finetune_cfg: &SgdConfig,
) -> Result<FineTuned> {
    require_both_groups(shard)?;
    let local_params = train_plain(spec, global, shard, local_cfg)?;
    let global_report = evaluate(spec, global, shard)?;
    let local_report = evaluate(spec, &local_params, shard)?;
    let lambda = compute_lambda(&global_report, &local_report, gamma)?;
    let params = sgd_train(
        spec,
        global,
        shard,
        &lambda.sample_weights(shard),
        finetune_cfg,
    )?;
    Ok(FineTuned {
        params,
        lambda,
        local_params,
    })
}

fn require_both_groups(shard: &Dataset) -> Result<()> {
    if shard.has_both_groups() {
        Ok(())
    } else {
        Err(Error::Precondition(
            "attacker shard must contain both sensitive groups".into(),
        ))
    }
}

/// Baseline that maximizes bias directly: gradient ascent on the squared gap
/// of mean outputs between groups, over shuffled mini-batches. Batches that
/// hold a single group are skipped. `epochs = 0` returns `global` unchanged.
pub fn naive_finetune(
    spec: &ModelSpec,
    global: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
) -> Result<ParamVector> {
    require_both_groups(shard)?;
    if cfg.epochs == 0 {
        return Ok(global.clone());
    }
    minibatch_descent(
        spec,
        global,
        shard.len(),
        cfg,
        |params, batch, grad| match output_gap_into(spec, params, shard, batch, grad) {
            Some(gap) => {
                grad.iter_mut().for_each(|g| *g *= -2.0 * gap);
                Ok(true)
            }
            None => Ok(false),
        },
    )
}

/// Objective minimized by [`naive_finetune`]: `-gap^2` over the whole shard,
/// with its exact gradient.
pub fn naive_objective(
    spec: &ModelSpec,
    params: &ParamVector,
    shard: &Dataset,
) -> Result<(f64, ParamVector)> {
    let idx: Vec<usize> = (0..shard.len()).collect();
    let mut grad = vec![0.0; spec.param_count()];
    let gap = output_gap_into(spec, params, shard, &idx, &mut grad)
        .ok_or_else(|| Error::Precondition("both sensitive groups must be present".into()))?;
    grad.iter_mut().for_each(|g| *g *= -2.0 * gap);
    Ok((-gap * gap, ParamVector::new(grad)?))
}

/// Accuracy-targeted baseline: plain fine-tuning of `global` on the shard
/// with every label flipped.
pub fn label_flip_finetune(
    spec: &ModelSpec,
    global: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
) -> Result<ParamVector> {
    let flipped = Dataset::new(
        shard
            .samples()
            .iter()
            .map(|s| LabeledSample {
                features: s.features.clone(),
                sensitive: s.sensitive,
                label: 1 - s.label,
            })
            .collect(),
    )?;
    train_plain(spec, global, &flipped, cfg)
}

/// Poisoned upload `θ_atk = (θ_goal - θ) / w' + θ`, with
/// `w' = max(w, 1 / scale_cap)` when a cap is given.
pub fn craft_replacement(
    theta_goal: &ParamVector,
    theta_global: &ParamVector,
    w: f64,
    scale_cap: Option<f64>,
) -> Result<ParamVector> {
    check_same_len(theta_goal, theta_global, "replacement target")?;
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::Precondition(format!(
            "replacement weight must be positive, got {w}"
        )));
    }
    let effective = match scale_cap {
        Some(cap) if !(cap.is_finite() && cap > 0.0) => {
            return Err(Error::config(
                "scale_cap",
                "must be a positive finite number",
            ));
        }
        Some(cap) => w.max(1.0 / cap),
        None => w,
    };
    let out: Vec<f64> = theta_goal
        .iter()
        .zip(theta_global.iter())
        .map(|(g, t)| (g - t) / effective + t)
        .collect();
    ParamVector::new(out).map_err(|_| Error::NonFinite("poisoned update"))
}

/// Infers the weight the server gave a replacement upload crafted with
/// `w_init`: the median over coordinates of
/// `w_init * (θ^(t+1) - θ^(t)) / (θ_goal - θ^(t))`, skipping coordinates whose
/// target delta is within [`ESTIMATE_TOLERANCE`], clamped into
/// `[MIN_ESTIMATED_WEIGHT, 1]`.
pub fn estimate_weight(
    w_init: f64,
    theta_goal: &ParamVector,
    theta_t: &ParamVector,
    theta_t1: &ParamVector,
) -> Result<f64> {
    check_same_len(theta_goal, theta_t, "estimation target")?;
    check_same_len(theta_t1, theta_t, "estimation response")?;
    if !(w_init.is_finite() && w_init > 0.0) {
        return Err(Error::Precondition(format!(
            "initial weight must be positive, got {w_init}"
        )));
    }
    let mut ratios: Vec<f64> = theta_goal
        .iter()
        .zip(theta_t.iter())
        .zip(theta_t1.iter())
        .filter_map(|((goal, before), after)| {
            let target = goal - before;
            (target.abs() > ESTIMATE_TOLERANCE).then(|| w_init * (after - before) / target)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::Precondition(
            "target equals the global model; nothing to estimate".into(),
        ));
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        (ratios[n / 2 - 1] + ratios[n / 2]) / 2.0
    };
    Ok(median.clamp(MIN_ESTIMATED_WEIGHT, 1.0))
}

/// `‖θ_goal - θ‖∞ / ‖θ‖∞` (the absolute drift when θ is zero).
pub fn relative_drift(theta_goal: &ParamVector, theta: &ParamVector) -> Result<f64> {
    let drift = theta_goal.max_abs_diff(theta)?;
    let scale = theta.max_abs();
    Ok(if scale > 0.0 { drift / scale } else { drift })
}
