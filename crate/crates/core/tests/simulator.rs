use fairfl::aggregation::AggregatorConfig;
use fairfl::data::{
    generate_synthetic, partition, Dataset, PartitionConfig, PartitionScheme, SynthConfig,
};
use fairfl::local::DebiasConfig;
use fairfl::model::{sgd_train, ModelFamily, ModelSpec, SgdConfig};
use fairfl::simulator::{
    client_seed, run_attack_protocol_with, stream_seed, AttackPlan, ExperimentConfig,
    FrozenTrainer, Simulator, WeightSource,
};

fn data(n: usize, seed: u64) -> (Vec<Dataset>, Dataset, usize) {
    let all = generate_synthetic(&SynthConfig {
        n_samples: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let (train, eval) = all.split(0.2, 99).unwrap();
    let dim = train.input_dim();
    let shards = partition(
        &train,
        &PartitionConfig {
            n_clients: 6,
            scheme: PartitionScheme::Iid,
            seed: 5,
        },
    )
    .unwrap()
    .shards;
    (shards, eval, dim)
}

fn small_cfg() -> ExperimentConfig {
    ExperimentConfig {
        n_clients: 6,
        selection_fraction: 0.5,
        rounds: 4,
        local: SgdConfig {
            epochs: 2,
            ..SgdConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn single_client_full_participation_is_centralized_sgd() {
    let (shards, eval, dim) = data(1500, 1);
    let shard = Dataset::concat(&shards).unwrap();
    let cfg = ExperimentConfig {
        n_clients: 1,
        selection_fraction: 1.0,
        rounds: 3,
        debias: DebiasConfig::None,
        aggregator: AggregatorConfig::Fedavg,
        local: SgdConfig {
            epochs: 2,
            ..SgdConfig::default()
        },
        seed: 17,
        ..ExperimentConfig::default()
    };
    let shards = vec![shard.clone()];
    let outcome = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();

    let spec = ModelSpec::logistic(dim);
    let mut theta = spec.init_params(stream_seed(17, &[0]));
    assert_eq!(theta, outcome.initial_params);
    for round in 1..=3 {
        let local = cfg.local.with_seed(client_seed(17, 1, round, 0));
        theta = sgd_train(&spec, &theta, &shard, &vec![1.0; shard.len()], &local).unwrap();
        assert_eq!(theta, outcome.round_params[round - 1], "round {round}");
    }
    assert_eq!(theta, outcome.final_params);
}

#[test]
fn same_seed_same_run_and_serial_matches_parallel() {
    let (shards, eval, _) = data(2000, 2);
    let mut cfg = small_cfg();
    cfg.attack = Some(AttackPlan::final_rounds(0, cfg.rounds));
    let a = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
    let b = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
    let c = Simulator::new(&cfg, &shards, &eval)
        .unwrap()
        .serial()
        .run()
        .unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_params, b.final_params);
    assert_eq!(a.records, c.records);
    assert_eq!(a.final_params, c.final_params);

    cfg.seed += 1;
    let d = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
    assert_ne!(a.final_params, d.final_params);
}

#[test]
fn weighted_rounds_have_normalized_weights_and_stable_shape() {
    let (shards, eval, dim) = data(2000, 3);
    for aggregator in [
        AggregatorConfig::Fedavg,
        AggregatorConfig::Fairfed { beta: 1.5 },
        AggregatorConfig::FQFedavg { q: 2.0 },
    ] {
        for debias in [
            DebiasConfig::None,
            DebiasConfig::Fairbatch { step: 0.0075 },
            DebiasConfig::Fairreg { mu: 1.5 },
        ] {
            let cfg = ExperimentConfig {
                aggregator,
                debias,
                training_rounds: 2,
                ..small_cfg()
            };
            let outcome = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
            assert_eq!(outcome.records.len(), 8);
            let n = ModelSpec::logistic(dim).param_count();
            assert!(outcome.round_params.iter().all(|p| p.len() == n));
            for r in &outcome.records {
                let total: f64 = r.weights.values().sum();
                assert!(
                    (total - 1.0).abs() < 1e-9,
                    "{aggregator:?} {debias:?}: {total}"
                );
                assert!(r.weights.values().all(|w| *w >= 0.0));
                assert!(r.attack.is_none() && r.forced.is_empty());
                assert_eq!(r.local_reports.len(), r.selected.len());
            }
        }
    }
}

#[test]
fn fedavg_without_attack_is_a_size_weighted_mean() {
    let (shards, eval, _) = data(2000, 4);
    let cfg = ExperimentConfig {
        aggregator: AggregatorConfig::Fedavg,
        debias: DebiasConfig::None,
        ..small_cfg()
    };
    let outcome = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
    let r = &outcome.records[0];
    let total: usize = r.selected.iter().map(|&id| shards[id].len()).sum();
    for &id in &r.selected {
        let expected = shards[id].len() as f64 / total as f64;
        assert!((r.weights[&id] - expected).abs() < 1e-12);
    }
}

#[test]
fn frozen_clients_let_the_estimated_replacement_land_on_target() {
    let (shards, eval, _) = data(2000, 5);
    let mut cfg = small_cfg();
    cfg.aggregator = AggregatorConfig::Fedavg;
    cfg.rounds = 5;
    let mut plan = AttackPlan::final_rounds(0, cfg.rounds);
    plan.scale_cap = None;
    cfg.attack = Some(plan);
    let sim = Simulator::new(&cfg, &shards, &eval)
        .unwrap()
        .with_trainer(&FrozenTrainer);
    let protocol = run_attack_protocol_with(sim).unwrap();

    let post = protocol.post_attack.attack.as_ref().unwrap();
    assert_eq!(post.weight_source, WeightSource::Estimated);
    let true_weight = protocol.post_attack.weights[&0];
    assert!((post.weight_used - true_weight).abs() < 1e-6);
    let landed = protocol
        .outcome
        .final_params
        .max_abs_diff(&post.goal)
        .unwrap();
    assert!(landed < 1e-6, "final model is {landed} from the target");
}

#[test]
fn attackers_outside_the_selection_are_forced_in() {
    let (shards, eval, _) = data(2000, 6);
    let cfg = small_cfg();
    let unselected = (0..6)
        .find(|id| {
            !Simulator::new(&cfg, &shards, &eval)
                .unwrap()
                .run()
                .unwrap()
                .records[0]
                .selected
                .contains(id)
        })
        .unwrap();
    let mut attacked = cfg.clone();
    attacked.attack = Some(AttackPlan::final_rounds(unselected, cfg.rounds));
    let outcome = Simulator::new(&attacked, &shards, &eval)
        .unwrap()
        .run()
        .unwrap();
    let last = outcome.records.last().unwrap();
    assert_eq!(last.forced, vec![unselected]);
    assert!(last.weights.contains_key(&unselected));
    assert!(outcome.records[..2].iter().all(|r| r.forced.is_empty()));
}

#[test]
fn mlp_family_runs_end_to_end() {
    let (shards, eval, _) = data(1500, 7);
    let cfg = ExperimentConfig {
        model: ModelFamily::Mlp1 { hidden_dim: 4 },
        ..small_cfg()
    };
    let outcome = Simulator::new(&cfg, &shards, &eval).unwrap().run().unwrap();
    assert!(outcome.records.last().unwrap().global.accuracy > 0.6);
}
