//! Round orchestration: client selection, local training (benign or
//! adversarial), fairness reporting, aggregation, and per-round records.
//!
//! Every random choice is drawn from a seed stream derived from the master
//! seed and the (training round, round, client) coordinates of the draw, so
//! records do not depend on whether clients train serially or in parallel.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate_weighted, fairfed_update, fqfedavg_update, krum, trimmed_mean, trimmed_median,
    AggregatorConfig, AggregatorState, ClientId,
};
use crate::attack::{craft_replacement, estimate_weight, id_finetune_with, LambdaTable};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairness::{evaluate, global_fairness, FairnessReport};
use crate::local::{train_local, DebiasConfig, Trained};
use crate::model::{ModelFamily, ModelSpec, ParamVector, SgdConfig};

/// When the participating client set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// One draw per training round, shared by all of its communication rounds.
    #[default]
    PerTrainingRound,
    /// A fresh draw every communication round.
    PerRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    /// Explicit attacker client ids.
    #[serde(default)]
    pub attackers: Vec<ClientId>,
    /// Alternatively, the fraction of the first attack round's selected
    /// clients that are attackers (at least one).
    #[serde(default)]
    pub attacker_fraction: Option<f64>,
    /// Communication rounds (1-based, first training round) in which to attack.
    pub rounds: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_w_init")]
    pub w_init: f64,
    /// Use the weight inferred from the previous attack round when one exists.
    #[serde(default = "default_true")]
    pub use_estimation: bool,
    /// Upper bound on the per-upload delta amplification `1 / w`.
    #[serde(default = "default_scale_cap")]
    pub scale_cap: Option<f64>,
    #[serde(default = "default_true")]
    pub force_selection: bool,
    /// Epochs of the λ-weighted fine-tune, which otherwise uses the local
    /// SGD settings. The reference model trains for the full local epochs.
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
}

pub const DEFAULT_FINETUNE_EPOCHS: usize = 1;

fn default_finetune_epochs() -> usize {
    DEFAULT_FINETUNE_EPOCHS
}

fn default_gamma() -> f64 {
    10.0
}

fn default_w_init() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_scale_cap() -> Option<f64> {
    Some(10.0)
}

impl AttackPlan {
    /// Single attacker at the last two rounds of a `rounds`-round training
    /// round: a probe with `w_init = 1`, then the estimated weight.
    pub fn final_rounds(attacker: ClientId, rounds: usize) -> Self {
        Self {
            attackers: vec![attacker],
            attacker_fraction: None,
            rounds: vec![rounds - 1, rounds],
            gamma: default_gamma(),
            w_init: default_w_init(),
            use_estimation: true,
            scale_cap: default_scale_cap(),
            force_selection: true,
            finetune_epochs: DEFAULT_FINETUNE_EPOCHS,
        }
    }

    fn validate(&self, n_clients: usize, rounds: usize) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::config("attack.rounds", "must not be empty"));
        }
        if let Some(&r) = self.rounds.iter().find(|&&r| r == 0 || r > rounds) {
            return Err(Error::config(
                "attack.rounds",
                format!("round {r} outside [1, {rounds}]"),
            ));
        }
        match (self.attackers.is_empty(), self.attacker_fraction) {
            (true, None) => {
                return Err(Error::config(
                    "attack.attackers",
                    "give attacker ids or attacker_fraction",
                ))
            }
            (false, Some(_)) => {
                return Err(Error::config(
                    "attack.attacker_fraction",
                    "cannot be combined with explicit attackers",
                ))
            }
            (_, Some(f)) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::config(
                    "attack.attacker_fraction",
                    "must lie in (0, 1]",
                ))
            }
            _ => {}
        }
        if let Some(&id) = self.attackers.iter().find(|&&id| id >= n_clients) {
            return Err(Error::config(
                "attack.attackers",
                format!("client {id} does not exist ({n_clients} clients)"),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("attack.gamma", "must be positive"));
        }
        if !(self.w_init.is_finite() && self.w_init > 0.0) {
            return Err(Error::config("attack.w_init", "must be positive"));
        }
        if let Some(cap) = self.scale_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::config("attack.scale_cap", "must be positive"));
            }
        }
        if self.finetune_epochs == 0 {
            return Err(Error::config(
                "attack.finetune_epochs",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub selection_fraction: f64,
    /// Communication rounds per training round.
    pub rounds: usize,
    pub training_rounds: usize,
    pub selection: SelectionPolicy,
    pub model: ModelFamily,
    pub local: SgdConfig,
    pub debias: DebiasConfig,
    pub aggregator: AggregatorConfig,
    pub attack: Option<AttackPlan>,
    /// Reporting threshold on the final |DP|; it does not affect training.
    pub fairness_tolerance: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            selection_fraction: 0.5,
            rounds: 20,
            training_rounds: 1,
            selection: SelectionPolicy::default(),
            model: ModelFamily::Logistic,
            local: SgdConfig::default(),
            debias: DebiasConfig::Fairbatch {
                step: crate::local::DEFAULT_FAIRBATCH_STEP,
            },
            aggregator: AggregatorConfig::default(),
            attack: None,
            fairness_tolerance: 0.05,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn n_selected(&self) -> usize {
        ((self.selection_fraction * self.n_clients as f64).ceil() as usize)
            .clamp(1, self.n_clients.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("n_clients", "must be positive"));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::config(
                "selection_fraction",
                format!("must lie in (0, 1], got {}", self.selection_fraction),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.training_rounds == 0 {
            return Err(Error::config("training_rounds", "must be at least 1"));
        }
        if let ModelFamily::Mlp1 { hidden_dim: 0 } = self.model {
            return Err(Error::config("model.hidden_dim", "must be positive"));
        }
        self.local
            .validate()
            .map_err(|e| Error::config("local", e.to_string()))?;
        self.debias.validate()?;
        self.aggregator.validate(self.n_selected())?;
        if !(self.fairness_tolerance.is_finite() && self.fairness_tolerance >= 0.0) {
            return Err(Error::config("fairness_tolerance", "must be non-negative"));
        }
        if let Some(plan) = &self.attack {
            plan.validate(self.n_clients, self.rounds)?;
            if plan.attackers.len() > self.n_selected() && !plan.force_selection {
                return Err(Error::config(
                    "attack.attackers",
                    "more attackers than selected clients without force_selection",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Initial,
    Estimated,
    /// Estimation was attempted but failed; `w_init` was used.
    EstimationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub attackers: Vec<ClientId>,
    /// Per-attacker weight assumed when crafting the uploads.
    pub weight_used: f64,
    pub weight_source: WeightSource,
    pub estimated_weight: Option<f64>,
    pub lambda: LambdaTable,
    /// `‖θ_goal - θ‖∞`.
    pub goal_delta: f64,
    /// `‖θ_atk - θ‖∞`.
    pub upload_delta: f64,
    pub goal: ParamVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub training_round: usize,
    pub round: usize,
    pub selected: Vec<ClientId>,
    /// Attackers added to the round's participants by force-join.
    pub forced: Vec<ClientId>,
    /// Fairness of the received global model on each participant's shard, as
    /// reported to the server.
    pub local_reports: BTreeMap<ClientId, FairnessReport>,
    /// The aggregated model evaluated on the held-out set.
    pub global: FairnessReport,
    /// Normalized aggregation weights; empty for robust aggregators.
    pub weights: BTreeMap<ClientId, f64>,
    pub krum_selected: Option<ClientId>,
    /// Clients whose debiasing fell back to plain training.
    pub debias_fallbacks: Vec<ClientId>,
    /// Clients without a defined local DP this round.
    pub undefined_dp: Vec<ClientId>,
    pub aggregation_fell_back: bool,
    pub attack: Option<AttackRecord>,
}

/// Trains a benign client's local model.
pub trait ClientTrainer: Sync {
    fn train(
        &self,
        spec: &ModelSpec,
        global: &ParamVector,
        shard: &Dataset,
        cfg: &SgdConfig,
        debias: &DebiasConfig,
    ) -> Result<Trained>;
}

/// The configured local training mechanism.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardTrainer;

impl ClientTrainer for StandardTrainer {
    fn train(
        &self,
        spec: &ModelSpec,
        global: &ParamVector,
        shard: &Dataset,
        cfg: &SgdConfig,
        debias: &DebiasConfig,
    ) -> Result<Trained> {
        train_local(spec, global, shard, cfg, debias)
    }
}

/// Clients that return the global model unchanged (zero benign deltas).
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenTrainer;

impl ClientTrainer for FrozenTrainer {
    fn train(
        &self,
        _spec: &ModelSpec,
        global: &ParamVector,
        _shard: &Dataset,
        _cfg: &SgdConfig,
        _debias: &DebiasConfig,
    ) -> Result<Trained> {
        Ok(Trained {
            params: global.clone(),
            fell_back: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub records: Vec<RoundRecord>,
    /// Global parameters after each round, parallel to `records`.
    pub round_params: Vec<ParamVector>,
    pub final_params: ParamVector,
    pub initial_params: ParamVector,
    /// Held-out evaluation of the initial model.
    pub initial_report: FairnessReport,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of an independent stream identified by `tags` under `master`.
pub fn stream_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(master), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Seed of a client's training stream in a given round.
pub fn client_seed(master: u64, training_round: usize, round: usize, client: ClientId) -> u64 {
    stream_seed(
        master,
        &[
            TAG_CLIENT,
            training_round as u64,
            round as u64,
            client as u64,
        ],
    )
}

const TAG_INIT: u64 = 0;
const TAG_SELECT: u64 = 1;
const TAG_CLIENT: u64 = 2;
const TAG_ATTACKERS: u64 = 3;

/// Pending replacement: what the previous attack round submitted.
struct Probe {
    round: usize,
    global: ParamVector,
    goal: ParamVector,
    /// `w` such that each upload carried `(θ_goal - θ) / (m w)`.
    per_attacker_weight: f64,
}

pub struct Simulator<'a> {
    cfg: &'a ExperimentConfig,
    shards: &'a [Dataset],
    eval: &'a Dataset,
    spec: ModelSpec,
    trainer: &'a dyn ClientTrainer,
    parallel: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        shards: &'a [Dataset],
        eval: &'a Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.n_clients {
            return Err(Error::config(
                "n_clients",
                format!(
                    "is {} but {} shards were given",
                    cfg.n_clients,
                    shards.len()
                ),
            ));
        }
        let input_dim = eval.input_dim();
        if let Some(bad) = shards.iter().find(|s| s.input_dim() != input_dim) {
            return Err(Error::DimensionMismatch {
                context: "client shard features",
                expected: input_dim,
                actual: bad.input_dim(),
            });
        }
        Ok(Self {
            cfg,
            shards,
            eval,
            spec: ModelSpec::new(cfg.model, input_dim)?,
            trainer: &StandardTrainer,
            parallel: true,
        })
    }

    pub fn with_trainer(mut self, trainer: &'a dyn ClientTrainer) -> Self {
        self.trainer = trainer;
        self
    }

    /// Train clients one after another instead of on the rayon pool.
    pub fn serial(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn select(&self, tags: &[u64]) -> Vec<ClientId> {
        let mut ids: Vec<ClientId> = (0..self.cfg.n_clients).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(
            self.cfg.seed,
            tags,
        )));
        let mut chosen = ids[..self.cfg.n_selected()].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn resolve_attackers(&self, plan: &AttackPlan, selected: &[ClientId]) -> Vec<ClientId> {
        match plan.attacker_fraction {
            Some(fraction) => {
                let m =
                    ((fraction * selected.len() as f64).round() as usize).clamp(1, selected.len());
                let mut pool = selected.to_vec();
                pool.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(
                    self.cfg.seed,
                    &[TAG_ATTACKERS],
                )));
                let mut ids = pool[..m].to_vec();
                ids.sort_unstable();
                ids
            }
            None => {
                let mut ids = plan.attackers.clone();
                ids.sort_unstable();
                ids.dedup();
                ids
            }
        }
    }

    pub fn run(&self) -> Result<Outcome> {
        let cfg = self.cfg;
        let sizes: BTreeMap<ClientId, usize> =
            self.shards.iter().map(Dataset::len).enumerate().collect();
        let initial_params = self.spec.init_params(stream_seed(cfg.seed, &[TAG_INIT]));
        let initial_report = evaluate(&self.spec, &initial_params, self.eval)?;
        let mut global = initial_params.clone();
        let mut records = Vec::with_capacity(cfg.rounds * cfg.training_rounds);
        let mut round_params = Vec::with_capacity(records.capacity());
        let mut attackers: Option<Vec<ClientId>> = None;

        for training_round in 1..=cfg.training_rounds {
            let mut state = AggregatorState::new(cfg.aggregator, sizes.clone())?;
            let mut probe: Option<Probe> = None;
            let mut round_selection = None;
            for round in 1..=cfg.rounds {
                let selected = match cfg.selection {
                    SelectionPolicy::PerTrainingRound => round_selection
                        .get_or_insert_with(|| self.select(&[TAG_SELECT, training_round as u64]))
                        .clone(),
                    SelectionPolicy::PerRound => {
                        self.select(&[TAG_SELECT, training_round as u64, round as u64])
                    }
                };
                let plan = cfg
                    .attack
                    .as_ref()
                    .filter(|p| training_round == 1 && p.rounds.contains(&round));
                let mut participants: BTreeSet<ClientId> = selected.iter().copied().collect();
                let mut forced = Vec::new();
                let mut active = Vec::new();
                if let Some(plan) = plan {
                    let ids = attackers
                        .get_or_insert_with(|| self.resolve_attackers(plan, &selected))
                        .clone();
                    for id in ids {
                        if participants.contains(&id) {
                            active.push(id);
                        } else if plan.force_selection {
                            participants.insert(id);
                            forced.push(id);
                            active.push(id);
                        }
                    }
                }
                let participants: Vec<ClientId> = participants.into_iter().collect();
                let record = self.round(
                    training_round,
                    round,
                    &global,
                    &participants,
                    selected,
                    forced,
                    &active,
                    plan,
                    &mut state,
                    &mut probe,
                )?;
                global = record.0;
                records.push(record.1);
                round_params.push(global.clone());
            }
        }
        Ok(Outcome {
            records,
            round_params,
            final_params: global,
            initial_params,
            initial_report,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn round(
        &self,
        training_round: usize,
        round: usize,
        global: &ParamVector,
        participants: &[ClientId],
        selected: Vec<ClientId>,
        forced: Vec<ClientId>,
        active_attackers: &[ClientId],
        plan: Option<&AttackPlan>,
        state: &mut AggregatorState,
        probe: &mut Option<Probe>,
    ) -> Result<(ParamVector, RoundRecord)> {
        let cfg = self.cfg;
        let spec = &self.spec;
        let benign: Vec<ClientId> = participants
            .iter()
            .copied()
            .filter(|id| !active_attackers.contains(id))
            .collect();

        let work = |id: &ClientId| -> Result<(ClientId, FairnessReport, Option<Trained>)> {
            let shard = &self.shards[*id];
            let report = evaluate(spec, global, shard)?;
            let trained = if active_attackers.contains(id) {
                None
            } else {
                let local = cfg
                    .local
                    .with_seed(client_seed(cfg.seed, training_round, round, *id));
                Some(
                    self.trainer
                        .train(spec, global, shard, &local, &cfg.debias)?,
                )
            };
            Ok((*id, report, trained))
        };
        let results: Vec<_> = if self.parallel {
            participants.par_iter().map(work).collect::<Result<_>>()?
        } else {
            participants.iter().map(work).collect::<Result<_>>()?
        };

        let mut local_reports = BTreeMap::new();
        let mut uploads = BTreeMap::new();
        let mut debias_fallbacks = Vec::new();
        for (id, report, trained) in results {
            local_reports.insert(id, report);
            if let Some(t) = trained {
                if t.fell_back {
                    debias_fallbacks.push(id);
                }
                uploads.insert(id, t.params);
            }
        }
        debug_assert_eq!(uploads.len(), benign.len());

        let attack = match plan {
            Some(plan) if !active_attackers.is_empty() => {
                let (record, attack_uploads) = self.attack_uploads(
                    plan,
                    training_round,
                    round,
                    global,
                    active_attackers,
                    probe,
                )?;
                uploads.extend(attack_uploads);
                Some(record)
            }
            _ => None,
        };
        if attack.is_none() {
            *probe = None;
        }

        let mut undefined_dp: Vec<ClientId> = local_reports
            .iter()
            .filter(|(_, r)| r.dp_undefined())
            .map(|(&id, _)| id)
            .collect();
        undefined_dp.sort_unstable();

        let mut weights = BTreeMap::new();
        let mut krum_selected = None;
        let next = match cfg.aggregator {
            AggregatorConfig::Fedavg => {
                state.fedavg_over(participants)?;
                weights = state.normalized.clone();
                aggregate_weighted(global, &uploads, &weights)?
            }
            AggregatorConfig::Fairfed { beta } => {
                let reports: Vec<FairnessReport> = local_reports.values().cloned().collect();
                let report_sizes: Vec<usize> = local_reports
                    .keys()
                    .map(|&id| self.shards[id].len())
                    .collect();
                let pooled = global_fairness(&reports, &report_sizes)?;
                match pooled.dp_signed {
                    Some(global_dp) => {
                        let local = fill_undefined(
                            &local_reports,
                            |r| r.dp_signed,
                            |defined| {
                                // Neutral stand-in: the mean gap of the defined clients.
                                let mean_gap =
                                    defined.iter().map(|f| (global_dp - f).abs()).sum::<f64>()
                                        / defined.len().max(1) as f64;
                                global_dp + mean_gap
                            },
                        );
                        *state = fairfed_update(state, &local, global_dp, beta)?;
                    }
                    None => state.fedavg_over(participants)?,
                }
                weights = state.normalized.clone();
                aggregate_weighted(global, &uploads, &weights)?
            }
            AggregatorConfig::FQFedavg { q } => {
                let local = fill_undefined(
                    &local_reports,
                    |r| r.dp_abs,
                    |defined| defined.iter().sum::<f64>() / defined.len().max(1) as f64,
                );
                *state = fqfedavg_update(state, &local, q)?;
                weights = state.normalized.clone();
                aggregate_weighted(global, &uploads, &weights)?
            }
            AggregatorConfig::TrimmedMean { k } => trimmed_mean(&uploads, k)?,
            AggregatorConfig::TrimmedMedian => trimmed_median(&uploads)?,
            AggregatorConfig::Krum { f } => {
                let (id, params) = krum(&uploads, f)?;
                krum_selected = Some(id);
                params
            }
        };
        let aggregation_fell_back = cfg.aggregator.is_weighted() && state.fell_back;
        let record = RoundRecord {
            training_round,
            round,
            selected,
            forced,
            local_reports,
            global: evaluate(spec, &next, self.eval)?,
            weights,
            krum_selected,
            debias_fallbacks,
            undefined_dp,
            aggregation_fell_back,
            attack,
        };
        Ok((next, record))
    }

    fn attack_uploads(
        &self,
        plan: &AttackPlan,
        training_round: usize,
        round: usize,
        global: &ParamVector,
        attackers: &[ClientId],
        probe: &mut Option<Probe>,
    ) -> Result<(AttackRecord, BTreeMap<ClientId, ParamVector>)> {
        let cfg = self.cfg;
        let lead = attackers[0];
        let local_cfg = cfg
            .local
            .with_seed(client_seed(cfg.seed, training_round, round, lead));
        let finetune_cfg = SgdConfig {
            epochs: plan.finetune_epochs,
            ..local_cfg.clone()
        };
        let tuned = id_finetune_with(
            &self.spec,
            global,
            &self.shards[lead],
            plan.gamma,
            &local_cfg,
            &finetune_cfg,
        )?;

        let previous = probe.take().filter(|p| p.round + 1 == round);
        let (weight_used, weight_source, estimated_weight) = match previous {
            Some(p) if plan.use_estimation => {
                match estimate_weight(p.per_attacker_weight, &p.goal, &p.global, global) {
                    Ok(w) => (w, WeightSource::Estimated, Some(w)),
                    Err(_) => (plan.w_init, WeightSource::EstimationFailed, None),
                }
            }
            _ => (plan.w_init, WeightSource::Initial, None),
        };

        // Attackers share the target and split the replacement delta equally.
        let m = attackers.len() as f64;
        let divisor = match plan.scale_cap {
            Some(cap) => (m * weight_used).max(1.0 / cap),
            None => m * weight_used,
        };
        let upload = craft_replacement(&tuned.params, global, divisor, None)?;
        *probe = Some(Probe {
            round,
            global: global.clone(),
            goal: tuned.params.clone(),
            per_attacker_weight: divisor / m,
        });
        let record = AttackRecord {
            attackers: attackers.to_vec(),
            weight_used,
            weight_source,
            estimated_weight,
            lambda: tuned.lambda,
            goal_delta: tuned.params.max_abs_diff(global)?,
            upload_delta: upload.max_abs_diff(global)?,
            goal: tuned.params,
        };
        let uploads = attackers.iter().map(|&id| (id, upload.clone())).collect();
        Ok((record, uploads))
    }
}

/// Per-client values with undefined entries replaced by `fill(defined)`.
fn fill_undefined(
    reports: &BTreeMap<ClientId, FairnessReport>,
    value: impl Fn(&FairnessReport) -> Option<f64>,
    fill: impl Fn(&[f64]) -> f64,
) -> BTreeMap<ClientId, f64> {
    let defined: Vec<f64> = reports.values().filter_map(&value).collect();
    let stand_in = fill(&defined);
    reports
        .iter()
        .map(|(&id, r)| (id, value(r).unwrap_or(stand_in)))
        .collect()
}

/// Runs an experiment and returns its per-round records.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    shards: &[Dataset],
    eval: &Dataset,
) -> Result<Vec<RoundRecord>> {
    Ok(Simulator::new(cfg, shards, eval)?.run()?.records)
}

/// Records bracketing a two-round replacement attack.
#[derive(Debug, Clone)]
pub struct AttackProtocolOutcome {
    /// The last round before the first attack.
    pub pre_attack: RoundRecord,
    /// The first attack round, crafted with `w_init`.
    pub probe: RoundRecord,
    /// The second attack round, crafted with the estimated weight.
    pub post_attack: RoundRecord,
    pub outcome: Outcome,
}

/// Runs the probe-then-estimate attack: the plan must name two consecutive
/// attack rounds, the first of which is at least round 2.
pub fn run_attack_protocol(
    cfg: &ExperimentConfig,
    shards: &[Dataset],
    eval: &Dataset,
) -> Result<AttackProtocolOutcome> {
    run_attack_protocol_with(Simulator::new(cfg, shards, eval)?)
}

pub fn run_attack_protocol_with(sim: Simulator<'_>) -> Result<AttackProtocolOutcome> {
    let plan = sim
        .cfg
        .attack
        .as_ref()
        .ok_or_else(|| Error::config("attack", "an attack plan is required"))?;
    let mut rounds = plan.rounds.clone();
    rounds.sort_unstable();
    let [first, second] = rounds[..] else {
        return Err(Error::config(
            "attack.rounds",
            "must name exactly two rounds",
        ));
    };
    if second != first + 1 || first < 2 {
        return Err(Error::config(
            "attack.rounds",
            "must be two consecutive rounds starting at round 2 or later",
        ));
    }
    if !plan.use_estimation {
        return Err(Error::config("attack.use_estimation", "must be enabled"));
    }
    let outcome = sim.run()?;
    let pick = |r: usize| {
        outcome
            .records
            .iter()
            .find(|rec| rec.training_round == 1 && rec.round == r)
            .cloned()
            .expect("round within the first training round")
    };
    Ok(AttackProtocolOutcome {
        pre_attack: pick(first - 1),
        probe: pick(first),
        post_attack: pick(second),
        outcome,
    })
}
