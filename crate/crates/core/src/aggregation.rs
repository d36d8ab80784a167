//! Server-side aggregation: size-weighted FedAvg, the FairFed and f-qFedAvg
//! weight dynamics, and the Byzantine-resilient aggregators (coordinate-wise
//! trimmed mean and median, Krum).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;

pub type ClientId = usize;

/// Upper clamp applied to local DP before the f-qFedAvg factor `(1 - f)^(q+1)`.
pub const FQ_MAX_FAIRNESS: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum AggregatorConfig {
    Fedavg,
    Fairfed {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    #[serde(rename = "f_qfedavg")]
    FQFedavg {
        #[serde(default = "default_q")]
        q: f64,
    },
    TrimmedMean {
        #[serde(default = "default_trim")]
        k: usize,
    },
    TrimmedMedian,
    Krum {
        #[serde(default = "default_krum_f")]
        f: usize,
    },
}

fn default_beta() -> f64 {
    1.5
}

fn default_q() -> f64 {
    2.0
}

fn default_trim() -> usize {
    1
}

fn default_krum_f() -> usize {
    1
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig::Fairfed { beta: 1.5 }
    }
}

impl AggregatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorConfig::Fedavg => "fedavg",
            AggregatorConfig::Fairfed { .. } => "fairfed",
            AggregatorConfig::FQFedavg { .. } => "f_qfedavg",
            AggregatorConfig::TrimmedMean { .. } => "trimmed_mean",
            AggregatorConfig::TrimmedMedian => "trimmed_median",
            AggregatorConfig::Krum { .. } => "krum",
        }
    }

    /// Whether the mechanism aggregates with per-client weights (as opposed to
    /// an unweighted robust consensus).
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            AggregatorConfig::Fedavg
                | AggregatorConfig::Fairfed { .. }
                | AggregatorConfig::FQFedavg { .. }
        )
    }

    /// Checks mechanism parameters against the number of uploads per round.
    pub fn validate(&self, n_selected: usize) -> Result<()> {
        match *self {
            AggregatorConfig::Fairfed { beta } if !(beta.is_finite() && beta >= 0.0) => Err(
                Error::config("aggregator.beta", "must be finite and non-negative"),
            ),
            AggregatorConfig::FQFedavg { q } if !(q.is_finite() && q > 0.0) => {
                Err(Error::config("aggregator.q", "must be positive"))
            }
            AggregatorConfig::TrimmedMean { k } if n_selected <= 2 * k => Err(Error::config(
                "aggregator.k",
                format!("needs 2k < selected clients ({n_selected})"),
            )),
            AggregatorConfig::Krum { f } if n_selected <= 2 * f + 2 => Err(Error::config(
                "aggregator.f",
                format!("needs selected clients ({n_selected}) > 2f + 2"),
            )),
            _ => Ok(()),
        }
    }
}

/// Weight state for the weight-based mechanisms.
///
/// `unnormalized` holds ω̄ for every client (unselected clients keep their
/// value between rounds); `normalized` holds ω over the clients of the most
/// recent update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorState {
    pub mechanism: AggregatorConfig,
    pub sizes: BTreeMap<ClientId, usize>,
    pub unnormalized: BTreeMap<ClientId, f64>,
    pub normalized: BTreeMap<ClientId, f64>,
    /// The last update degenerated (all weights zero) and fell back to
    /// size-proportional weights.
    pub fell_back: bool,
}

impl AggregatorState {
    /// ω̄ starts at `|D_i| / sum_j |D_j|` over all clients.
    pub fn new(mechanism: AggregatorConfig, sizes: BTreeMap<ClientId, usize>) -> Result<Self> {
        let normalized = fedavg_weights(&sizes)?;
        Ok(Self {
            mechanism,
            sizes,
            unnormalized: normalized.clone(),
            normalized,
            fell_back: false,
        })
    }

    fn renormalize(&mut self, selected: &[ClientId]) -> Result<()> {
        for id in selected {
            let w = self
                .unnormalized
                .get_mut(id)
                .ok_or_else(|| unknown_client(*id))?;
            *w = w.max(0.0);
        }
        let total: f64 = selected.iter().map(|id| self.unnormalized[id]).sum();
        if total > 0.0 && total.is_finite() {
            self.normalized = selected
                .iter()
                .map(|&id| (id, self.unnormalized[&id] / total))
                .collect();
            self.fell_back = false;
        } else {
            let sizes = selected.iter().map(|&id| (id, self.sizes[&id])).collect();
            self.normalized = fedavg_weights(&sizes)?;
            self.fell_back = true;
        }
        Ok(())
    }

    /// Size-proportional weights over `selected` without touching ω̄.
    pub fn fedavg_over(&mut self, selected: &[ClientId]) -> Result<()> {
        let sizes = selected
            .iter()
            .map(|&id| {
                self.sizes
                    .get(&id)
                    .map(|&n| (id, n))
                    .ok_or_else(|| unknown_client(id))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        self.normalized = fedavg_weights(&sizes)?;
        self.fell_back = false;
        Ok(())
    }
}

fn unknown_client(id: ClientId) -> Error {
    Error::Precondition(format!("client {id} has no aggregation state"))
}

/// `ω_i = |D_i| / sum_j |D_j|`.
pub fn fedavg_weights(sizes: &BTreeMap<ClientId, usize>) -> Result<BTreeMap<ClientId, f64>> {
    if sizes.is_empty() {
        return Err(Error::Precondition("no clients to weight".into()));
    }
    if sizes.values().any(|&n| n == 0) {
        return Err(Error::Precondition(
            "client sizes must be at least 1".into(),
        ));
    }
    let total: usize = sizes.values().sum();
    Ok(sizes
        .iter()
        .map(|(&id, &n)| (id, n as f64 / total as f64))
        .collect())
}

/// FairFed step: `Δ_i = |f_global - f_i|`, `ω̄_i -= β (Δ_i - mean Δ)`, negative
/// ω̄ clamped to zero, then normalized over the reporting clients.
pub fn fairfed_update(
    state: &AggregatorState,
    local_dp: &BTreeMap<ClientId, f64>,
    global_dp: f64,
    beta: f64,
) -> Result<AggregatorState> {
    if local_dp.is_empty() {
        return Err(Error::Precondition("no local fairness reports".into()));
    }
    if local_dp.values().any(|v| !v.is_finite()) || !global_dp.is_finite() {
        return Err(Error::NonFinite("fairness reports"));
    }
    let gaps: Vec<(ClientId, f64)> = local_dp
        .iter()
        .map(|(&id, &f)| (id, (global_dp - f).abs()))
        .collect();
    let mean = gaps.iter().map(|(_, d)| d).sum::<f64>() / gaps.len() as f64;
    let mut next = state.clone();
    for &(id, gap) in &gaps {
        let w = next
            .unnormalized
            .get_mut(&id)
            .ok_or_else(|| unknown_client(id))?;
        *w -= beta * (gap - mean);
    }
    let selected: Vec<ClientId> = local_dp.keys().copied().collect();
    next.renormalize(&selected)?;
    Ok(next)
}

/// f-qFedAvg step: `ω̄_i *= (1 - f_i)^(q+1) / (q+1)` with `f_i` clamped into
/// `[0, 1 - 1e-6]`, then normalized over the reporting clients. The updated
/// ω̄ of the reporting clients are rescaled to their previous total.
pub fn fqfedavg_update(
    state: &AggregatorState,
    local_dp_abs: &BTreeMap<ClientId, f64>,
    q: f64,
) -> Result<AggregatorState> {
    if local_dp_abs.is_empty() {
        return Err(Error::Precondition("no local fairness reports".into()));
    }
    let mut next = state.clone();
    let mut before = 0.0;
    let mut after = 0.0;
    for (&id, &f) in local_dp_abs {
        if !f.is_finite() {
            return Err(Error::NonFinite("fairness reports"));
        }
        let f = f.clamp(0.0, FQ_MAX_FAIRNESS);
        let w = next
            .unnormalized
            .get_mut(&id)
            .ok_or_else(|| unknown_client(id))?;
        before += *w;
        *w *= (1.0 - f).powf(q + 1.0) / (q + 1.0);
        after += *w;
    }
    // Keep the reporting clients' total mass so that frozen, unselected
    // clients stay on the same scale.
    if after > 0.0 && before > 0.0 {
        for id in local_dp_abs.keys() {
            *next.unnormalized.get_mut(id).expect("checked above") *= before / after;
        }
    }
    let selected: Vec<ClientId> = local_dp_abs.keys().copied().collect();
    next.renormalize(&selected)?;
    Ok(next)
}

/// `θ + sum_i ω_i (θ_i - θ)`.
pub fn aggregate_weighted(
    global: &ParamVector,
    updates: &BTreeMap<ClientId, ParamVector>,
    weights: &BTreeMap<ClientId, f64>,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Precondition("no updates to aggregate".into()));
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "aggregation weights sum to {total}, expected 1"
        )));
    }
    let mut out = global.as_slice().to_vec();
    for (id, theta) in updates {
        if theta.len() != global.len() {
            return Err(Error::DimensionMismatch {
                context: "client update",
                expected: global.len(),
                actual: theta.len(),
            });
        }
        let w = *weights
            .get(id)
            .ok_or_else(|| Error::Precondition(format!("no weight for client {id}")))?;
        for ((o, t), g) in out.iter_mut().zip(theta.iter()).zip(global.iter()) {
            *o += w * (t - g);
        }
    }
    ParamVector::new(out)
}

fn columns(updates: &BTreeMap<ClientId, ParamVector>) -> Result<(usize, usize)> {
    let first = updates
        .values()
        .next()
        .ok_or_else(|| Error::Precondition("no updates to aggregate".into()))?;
    let dim = first.len();
    if let Some(bad) = updates.values().find(|u| u.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "client update",
            expected: dim,
            actual: bad.len(),
        });
    }
    Ok((updates.len(), dim))
}

fn coordinatewise(
    updates: &BTreeMap<ClientId, ParamVector>,
    reduce: impl Fn(&mut [f64]) -> f64,
) -> Result<ParamVector> {
    let (n, dim) = columns(updates)?;
    let mut column = vec![0.0; n];
    let out = (0..dim)
        .map(|j| {
            for (c, u) in column.iter_mut().zip(updates.values()) {
                *c = u[j];
            }
            column.sort_by(f64::total_cmp);
            reduce(&mut column)
        })
        .collect();
    ParamVector::new(out)
}

/// Coordinate-wise mean after dropping the `k` smallest and `k` largest values.
pub fn trimmed_mean(updates: &BTreeMap<ClientId, ParamVector>, k: usize) -> Result<ParamVector> {
    let n = updates.len();
    if n <= 2 * k {
        return Err(Error::Precondition(format!(
            "trimmed mean needs more than 2k = {} updates, got {n}",
            2 * k
        )));
    }
    coordinatewise(updates, |sorted| {
        let kept = &sorted[k..n - k];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}

/// Coordinate-wise median; the midpoint of the two middle values for even n.
pub fn trimmed_median(updates: &BTreeMap<ClientId, ParamVector>) -> Result<ParamVector> {
    coordinatewise(updates, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    })
}

/// Classical Krum: the update minimizing the sum of squared distances to its
/// `n - f - 2` nearest neighbours. Ties go to the lowest client id.
pub fn krum(
    updates: &BTreeMap<ClientId, ParamVector>,
    f: usize,
) -> Result<(ClientId, ParamVector)> {
    let (n, _) = columns(updates)?;
    if n <= 2 * f + 2 {
        return Err(Error::Precondition(format!(
            "krum needs more than 2f + 2 = {} updates, got {n}",
            2 * f + 2
        )));
    }
    let entries: Vec<(&ClientId, &ParamVector)> = updates.iter().collect();
    let neighbours = n - f - 2;
    let mut best: Option<(f64, usize)> = None;
    for (i, (_, ui)) in entries.iter().enumerate() {
        let mut dists: Vec<f64> = entries
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, (_, uj))| ui.squared_distance(uj))
            .collect();
        dists.sort_by(f64::total_cmp);
        let score: f64 = dists[..neighbours].iter().sum();
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, i));
        }
    }
    let (_, i) = best.expect("at least one update");
    Ok((*entries[i].0, entries[i].1.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn map<T: Clone>(items: &[T]) -> BTreeMap<ClientId, T> {
        items.iter().cloned().enumerate().collect()
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg_weights(&map(&[1, 1])).unwrap(), map(&[0.5, 0.5]));
        assert_eq!(fedavg_weights(&map(&[3, 1])).unwrap(), map(&[0.75, 0.25]));
        assert!(fedavg_weights(&map(&[0usize])).is_err());
    }

    #[test]
    fn fairfed_uniform_gap_is_fixed_point() {
        let state =
            AggregatorState::new(AggregatorConfig::Fairfed { beta: 1.5 }, map(&[10, 30, 60]))
                .unwrap();
        // global 0.2, locals at +-0.1 -> all gaps 0.1
        let next = fairfed_update(&state, &map(&[0.1, 0.3, 0.1]), 0.2, 1.5).unwrap();
        for (a, b) in next.unnormalized.values().zip(state.unnormalized.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in next.normalized.values().zip(state.normalized.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fairfed_rewards_smaller_gap() {
        let state =
            AggregatorState::new(AggregatorConfig::Fairfed { beta: 1.5 }, map(&[1, 1])).unwrap();
        // gaps (0.1, 0.3): mean 0.2, ω̄ = 0.5 -+ 1.5 * 0.1 = (0.65, 0.35)
        let next = fairfed_update(&state, &map(&[0.1, 0.3]), 0.0, 1.5).unwrap();
        assert!((next.normalized[&0] - 0.65).abs() < 1e-12);
        assert!(next.normalized[&0] > state.normalized[&0]);
    }

    #[test]
    fn fairfed_zero_beta_and_clamp_fallback() {
        let state =
            AggregatorState::new(AggregatorConfig::Fairfed { beta: 0.0 }, map(&[1, 1])).unwrap();
        let next = fairfed_update(&state, &map(&[0.9, -0.4]), 0.1, 0.0).unwrap();
        assert_eq!(next.unnormalized, state.unnormalized);

        let mut tiny = state.clone();
        tiny.unnormalized = map(&[0.01, 0.01]);
        // one client is pushed far below zero, the other stays positive
        let next = fairfed_update(&tiny, &map(&[0.0, 1.0]), 0.0, 10.0).unwrap();
        assert_eq!(next.unnormalized[&1], 0.0);
        assert_eq!(next.normalized[&0], 1.0);
        assert!(!next.fell_back);

        let mut zero = state;
        zero.unnormalized = map(&[0.0, 0.0]);
        let next = fairfed_update(&zero, &map(&[0.2, 0.2]), 0.2, 1.0).unwrap();
        assert!(next.fell_back);
        assert_eq!(next.normalized, map(&[0.5, 0.5]));
    }

    #[test]
    fn unselected_clients_are_frozen() {
        let state =
            AggregatorState::new(AggregatorConfig::Fairfed { beta: 1.0 }, map(&[1, 1, 1])).unwrap();
        let mut reports = BTreeMap::new();
        reports.insert(0, 0.1);
        reports.insert(2, 0.5);
        let next = fairfed_update(&state, &reports, 0.2, 1.0).unwrap();
        assert_eq!(next.unnormalized[&1], state.unnormalized[&1]);
        assert_eq!(next.normalized.len(), 2);
    }

    #[test]
    fn fq_known_ratio() {
        let state =
            AggregatorState::new(AggregatorConfig::FQFedavg { q: 2.0 }, map(&[5, 5])).unwrap();
        let next = fqfedavg_update(&state, &map(&[0.0, 0.5]), 2.0).unwrap();
        assert!((next.normalized[&0] - 8.0 / 9.0).abs() < 1e-12);
        assert!((next.normalized[&1] - 1.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn fq_fairer_client_dominates_as_q_grows() {
        let state =
            AggregatorState::new(AggregatorConfig::FQFedavg { q: 1.0 }, map(&[5, 5])).unwrap();
        let mut last = 0.0;
        for q in [1.0, 2.0, 4.0, 8.0] {
            let w = fqfedavg_update(&state, &map(&[0.1, 0.2]), q)
                .unwrap()
                .normalized[&0];
            // direct evaluation: 1 / (1 + (0.8/0.9)^(q+1))
            let expected = 1.0 / (1.0 + (0.8f64 / 0.9).powf(q + 1.0));
            assert!((w - expected).abs() < 1e-12);
            assert!(w > last);
            last = w;
        }
    }

    #[test]
    fn fq_clamps_unit_fairness() {
        let state =
            AggregatorState::new(AggregatorConfig::FQFedavg { q: 2.0 }, map(&[5, 5])).unwrap();
        let next = fqfedavg_update(&state, &map(&[1.0, 1.0]), 2.0).unwrap();
        assert!(!next.fell_back);
        assert!((next.normalized[&0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weighted_aggregation_examples() {
        let g = pv(&[1.0, 1.0]);
        let single = map(&[pv(&[3.0, -2.0])]);
        assert_eq!(
            aggregate_weighted(&g, &single, &map(&[1.0])).unwrap(),
            pv(&[3.0, -2.0])
        );
        let same = map(&[g.clone(), g.clone()]);
        assert_eq!(aggregate_weighted(&g, &same, &map(&[0.3, 0.7])).unwrap(), g);
        let two = map(&[pv(&[5.0, 1.0]), pv(&[1.0, 5.0])]);
        assert_eq!(
            aggregate_weighted(&g, &two, &map(&[0.25, 0.75])).unwrap(),
            pv(&[2.0, 4.0])
        );
        assert!(aggregate_weighted(&g, &map(&[pv(&[1.0])]), &map(&[1.0])).is_err());
    }

    #[test]
    fn trimmed_examples() {
        let u = map(&[pv(&[1.0]), pv(&[2.0]), pv(&[3.0]), pv(&[100.0])]);
        assert_eq!(trimmed_mean(&u, 1).unwrap(), pv(&[2.5]));
        assert_eq!(trimmed_mean(&u, 0).unwrap(), pv(&[26.5]));
        assert_eq!(trimmed_median(&u).unwrap(), pv(&[2.5]));
        assert!(trimmed_mean(&u, 2).is_err());
    }

    #[test]
    fn krum_rejects_outlier_and_breaks_ties_low() {
        let v = pv(&[1.0, 2.0]);
        let u = map(&[pv(&[50.0, -50.0]), v.clone(), v.clone(), v.clone()]);
        let (id, out) = krum(&u, 0).unwrap();
        assert_eq!((id, out), (1, v.clone()));
        let same = map(&[v.clone(), v.clone(), v.clone(), v.clone()]);
        assert_eq!(krum(&same, 0).unwrap().0, 0);
        assert!(krum(&same, 1).is_err());
    }

    #[test]
    fn aggregator_validation() {
        assert!(AggregatorConfig::TrimmedMean { k: 2 }.validate(4).is_err());
        assert!(AggregatorConfig::TrimmedMean { k: 1 }.validate(3).is_ok());
        assert!(AggregatorConfig::Krum { f: 1 }.validate(4).is_err());
        assert!(AggregatorConfig::Krum { f: 1 }.validate(5).is_ok());
        assert!(AggregatorConfig::FQFedavg { q: 0.0 }.validate(5).is_err());
    }
}
