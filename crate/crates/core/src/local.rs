//! Client-side trainers: plain SGD and the two local debiasing mechanisms
//! (FairBatch-style stratum resampling and a fairness-regularized loss).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{evaluate, output_gap_into};
use crate::model::{
    accumulate_weighted_nll, minibatch_descent, nll_from_logit, sgd_train, ModelSpec, ParamVector,
    SgdConfig,
};

pub const DEFAULT_FAIRBATCH_STEP: f64 = 0.0075;
pub const DEFAULT_FAIRREG_MU: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum DebiasConfig {
    #[default]
    None,
    Fairbatch {
        #[serde(default = "default_step")]
        step: f64,
    },
    Fairreg {
        #[serde(default = "default_mu")]
        mu: f64,
    },
}

fn default_step() -> f64 {
    DEFAULT_FAIRBATCH_STEP
}

fn default_mu() -> f64 {
    DEFAULT_FAIRREG_MU
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DebiasConfig::None => Ok(()),
            DebiasConfig::Fairbatch { step }
                if !(step.is_finite() && (0.0..=1.0).contains(&step)) =>
            {
                Err(Error::config("debias.step", "must lie in [0, 1]"))
            }
            DebiasConfig::Fairreg { mu } if !(mu.is_finite() && mu >= 0.0) => Err(Error::config(
                "debias.mu",
                "must be finite and non-negative",
            )),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DebiasConfig::None => "none",
            DebiasConfig::Fairbatch { .. } => "fairbatch",
            DebiasConfig::Fairreg { .. } => "fairreg",
        }
    }
}

/// Result of a local training call.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: ParamVector,
    /// The requested debiasing mechanism could not run on this shard and
    /// plain training was used instead.
    pub fell_back: bool,
}

impl Trained {
    fn plain(params: ParamVector) -> Self {
        Self {
            params,
            fell_back: false,
        }
    }
}

/// Plain local SGD: `sgd_train` with unit weights.
pub fn train_plain(
    spec: &ModelSpec,
    init: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
) -> Result<ParamVector> {
    sgd_train(spec, init, shard, &vec![1.0; shard.len()], cfg)
}

/// Dispatches on the debiasing mechanism.
pub fn train_local(
    spec: &ModelSpec,
    init: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
    debias: &DebiasConfig,
) -> Result<Trained> {
    match *debias {
        DebiasConfig::None => train_plain(spec, init, shard, cfg).map(Trained::plain),
        DebiasConfig::Fairbatch { step } => train_fairbatch(spec, init, shard, cfg, step),
        DebiasConfig::Fairreg { mu } => train_fairreg(spec, init, shard, cfg, mu),
    }
}

/// Per-stratum sampling distribution, indexed `[sensitive][label]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSampler {
    weights: [[f64; 2]; 2],
    members: [[Vec<usize>; 2]; 2],
}

impl StratumSampler {
    /// Starts from the empirical stratum frequencies. Requires all four strata.
    pub fn new(shard: &Dataset) -> Option<Self> {
        let mut members: [[Vec<usize>; 2]; 2] = Default::default();
        for (i, s) in shard.samples().iter().enumerate() {
            members[s.sensitive as usize][s.label as usize].push(i);
        }
        if members.iter().flatten().any(Vec::is_empty) {
            return None;
        }
        let n = shard.len() as f64;
        let weights = [0, 1].map(|s| [0, 1].map(|y| members[s][y].len() as f64 / n));
        Some(Self { weights, members })
    }

    pub fn weights(&self) -> [[f64; 2]; 2] {
        self.weights
    }

    /// Draws a stratum by weight, then a member uniformly.
    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        let mut u: f64 = rng.random::<f64>();
        let mut chosen = (1, 1);
        'outer: for s in 0..2 {
            for y in 0..2 {
                if u < self.weights[s][y] {
                    chosen = (s, y);
                    break 'outer;
                }
                u -= self.weights[s][y];
            }
        }
        let pool = &self.members[chosen.0][chosen.1];
        pool[rng.random_range(0..pool.len())]
    }

    /// Moves up to `step` of sampling mass away from the strata that widen the
    /// positive-rate gap, (favored, 1) and (disfavored, 0), onto (disfavored, 1)
    /// and (favored, 0). Half of `step` goes through each pair, so group
    /// totals are preserved.
    pub fn rebalance(&mut self, dp_signed: f64, step: f64) {
        if dp_signed == 0.0 || step == 0.0 {
            return;
        }
        let favored = if dp_signed > 0.0 { 0 } else { 1 };
        let other = 1 - favored;
        let half = step / 2.0;
        let a = half.min(self.weights[favored][1]);
        self.weights[favored][1] -= a;
        self.weights[other][1] += a;
        let b = half.min(self.weights[other][0]);
        self.weights[other][0] -= b;
        self.weights[favored][0] += b;
        // Guard the unit sum against drift from repeated updates.
        let total: f64 = self.weights.iter().flatten().sum();
        for w in self.weights.iter_mut().flatten() {
            *w = (*w / total).max(0.0);
        }
    }
}

/// FairBatch-style training. Mini-batches are drawn with replacement from the
/// stratum sampler; after every epoch the sampler is rebalanced against the
/// shard's current signed DP. Falls back to plain training when a stratum is
/// missing.
pub fn train_fairbatch(
    spec: &ModelSpec,
    init: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
    step: f64,
) -> Result<Trained> {
    train_fairbatch_traced(spec, init, shard, cfg, step).map(|(t, _)| t)
}

/// As [`train_fairbatch`], also returning the sampler weights at every epoch
/// boundary (starting with the initial weights).
pub fn train_fairbatch_traced(
    spec: &ModelSpec,
    init: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
    step: f64,
) -> Result<(Trained, Vec<[[f64; 2]; 2]>)> {
    cfg.validate()?;
    DebiasConfig::Fairbatch { step }.validate()?;
    let Some(mut sampler) = StratumSampler::new(shard) else {
        let params = train_plain(spec, init, shard, cfg)?;
        return Ok((
            Trained {
                params,
                fell_back: true,
            },
            Vec::new(),
        ));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.clone();
    let mut grad = vec![0.0; spec.param_count()];
    let mut batch = vec![0usize; cfg.batch_size];
    let batches_per_epoch = shard.len().div_ceil(cfg.batch_size);
    let mut trace = vec![sampler.weights()];
    for _ in 0..cfg.epochs {
        for _ in 0..batches_per_epoch {
            for slot in batch.iter_mut() {
                *slot = sampler.draw(&mut rng);
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let total = accumulate_weighted_nll(spec, &params, shard, None, &batch, &mut grad);
            for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g / total;
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("fairbatch parameters"));
        }
        if let Some(dp) = evaluate(spec, &params, shard)?.dp_signed {
            sampler.rebalance(dp, step);
        }
        trace.push(sampler.weights());
    }
    Ok((Trained::plain(params), trace))
}

/// Minimizes `NLL + mu * gap^2`, where `gap` is the difference of mean sigmoid
/// outputs between the two sensitive groups, using the same shuffled batches
/// as [`train_plain`]. A batch holding a single group contributes only its NLL.
/// Falls back to plain training when the shard has a single group.
pub fn train_fairreg(
    spec: &ModelSpec,
    init: &ParamVector,
    shard: &Dataset,
    cfg: &SgdConfig,
    mu: f64,
) -> Result<Trained> {
    DebiasConfig::Fairreg { mu }.validate()?;
    if !shard.has_both_groups() {
        let params = train_plain(spec, init, shard, cfg)?;
        return Ok(Trained {
            params,
            fell_back: true,
        });
    }
    let mut gap_grad = vec![0.0; spec.param_count()];
    let params = minibatch_descent(spec, init, shard.len(), cfg, |params, batch, grad| {
        let total = accumulate_weighted_nll(spec, params, shard, None, batch, grad);
        grad.iter_mut().for_each(|g| *g /= total);
        if mu > 0.0 {
            if let Some(gap) = output_gap_into(spec, params, shard, batch, &mut gap_grad) {
                for (g, dg) in grad.iter_mut().zip(&gap_grad) {
                    *g += 2.0 * mu * gap * dg;
                }
            }
        }
        Ok(true)
    })?;
    Ok(Trained::plain(params))
}

/// Full-shard FairReg objective and its exact gradient.
pub fn fairreg_objective(
    spec: &ModelSpec,
    params: &ParamVector,
    shard: &Dataset,
    mu: f64,
) -> Result<(f64, ParamVector)> {
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected: spec.param_count(),
            actual: params.len(),
        });
    }
    let idx: Vec<usize> = (0..shard.len()).collect();
    let mut grad = vec![0.0; spec.param_count()];
    let n = accumulate_weighted_nll(spec, params, shard, None, &idx, &mut grad);
    grad.iter_mut().for_each(|g| *g /= n);
    let nll: f64 = shard
        .samples()
        .iter()
        .map(|s| nll_from_logit(spec.logit(params, &s.features), s.label))
        .sum::<f64>()
        / n;
    let mut gap_grad = vec![0.0; spec.param_count()];
    let gap = output_gap_into(spec, params, shard, &idx, &mut gap_grad)
        .ok_or_else(|| Error::Precondition("both sensitive groups must be present".into()))?;
    for (g, dg) in grad.iter_mut().zip(&gap_grad) {
        *g += 2.0 * mu * gap * dg;
    }
    Ok((nll + mu * gap * gap, ParamVector::new(grad)?))
}
