use fairfl::attack::{id_finetune, label_flip_finetune, naive_finetune, relative_drift};
use fairfl::data::{generate_synthetic, Dataset, SynthConfig};
use fairfl::fairness::evaluate;
use fairfl::local::{train_fairbatch, train_plain};
use fairfl::model::{sgd_train, ModelSpec, ParamVector, SgdConfig};

struct Setup {
    spec: ModelSpec,
    shard: Dataset,
    eval: Dataset,
    /// A fairness-trained model playing the current global.
    global: ParamVector,
}

fn setup() -> Setup {
    let all = generate_synthetic(&SynthConfig {
        n_samples: 6000,
        seed: 21,
        ..SynthConfig::default()
    })
    .unwrap();
    let (shard, eval) = all.split(0.5, 4).unwrap();
    let spec = ModelSpec::logistic(shard.input_dim());
    let global = train_fairbatch(&spec, &spec.init_params(0), &shard, &cfg(20), 0.0075)
        .unwrap()
        .params;
    Setup {
        spec,
        shard,
        eval,
        global,
    }
}

fn cfg(epochs: usize) -> SgdConfig {
    SgdConfig {
        epochs,
        seed: 8,
        ..SgdConfig::default()
    }
}

#[test]
fn vanishing_gamma_is_plain_finetuning() {
    let s = setup();
    let tuned = id_finetune(&s.spec, &s.global, &s.shard, 1e-9, &cfg(2)).unwrap();
    let lambda = tuned.lambda;
    for sy in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        assert!((lambda.weight(sy.0, sy.1) - 0.25).abs() < 1e-8);
    }
    let plain = sgd_train(
        &s.spec,
        &s.global,
        &s.shard,
        &vec![1.0; s.shard.len()],
        &cfg(2),
    )
    .unwrap();
    assert!(tuned.params.max_abs_diff(&plain).unwrap() < 1e-7);
    assert_eq!(
        tuned.local_params,
        train_plain(&s.spec, &s.global, &s.shard, &cfg(2)).unwrap()
    );
}

#[test]
fn inverse_debiasing_raises_bias_and_keeps_accuracy() {
    let s = setup();
    let before = evaluate(&s.spec, &s.global, &s.eval).unwrap();
    let tuned = id_finetune(&s.spec, &s.global, &s.shard, 10.0, &cfg(1)).unwrap();
    let after = evaluate(&s.spec, &tuned.params, &s.eval).unwrap();
    assert!(
        after.dp_abs.unwrap() > before.dp_abs.unwrap() + 0.05,
        "dp {:?} -> {:?}",
        before.dp_abs,
        after.dp_abs
    );
    assert!(after.accuracy >= before.accuracy - 0.01);
}

#[test]
fn naive_baseline_costs_more_accuracy() {
    let s = setup();
    let id = id_finetune(&s.spec, &s.global, &s.shard, 10.0, &cfg(1))
        .unwrap()
        .params;
    let naive = naive_finetune(&s.spec, &s.global, &s.shard, &cfg(5)).unwrap();
    let id_acc = evaluate(&s.spec, &id, &s.eval).unwrap().accuracy;
    let naive_acc = evaluate(&s.spec, &naive, &s.eval).unwrap().accuracy;
    assert!(naive_acc <= id_acc, "naive {naive_acc} vs id {id_acc}");
}

#[test]
fn target_stays_closer_to_global_than_label_flipping() {
    let s = setup();
    let id = id_finetune(&s.spec, &s.global, &s.shard, 10.0, &cfg(1))
        .unwrap()
        .params;
    let flip = label_flip_finetune(&s.spec, &s.global, &s.shard, &cfg(1)).unwrap();
    let id_drift = relative_drift(&id, &s.global).unwrap();
    let flip_drift = relative_drift(&flip, &s.global).unwrap();
    assert!(id_drift < flip_drift, "id {id_drift} vs flip {flip_drift}");
}
