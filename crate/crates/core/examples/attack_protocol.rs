// The two-round fairness attack: a probe upload crafted with an initial
// weight guess, then a replacement crafted with the weight inferred from
// the server's response.

use fairfl::data::SynthConfig;
use fairfl::scenario::{DataSource, Scenario};
use fairfl::simulator::{run_attack_protocol, AttackPlan, ExperimentConfig};

pub fn run_example() -> fairfl::Result<()> {
    let rounds = 10;
    let scenario = Scenario {
        data: DataSource::Synthetic(SynthConfig {
            n_samples: 8000,
            ..SynthConfig::default()
        }),
        experiment: ExperimentConfig {
            rounds,
            attack: Some(AttackPlan::final_rounds(0, rounds)),
            ..ExperimentConfig::default()
        },
        ..Scenario::default()
    };
    let prepared = scenario.prepare()?;
    let run = run_attack_protocol(&scenario.experiment, &prepared.shards, &prepared.eval)?;

    let dp = |r: &fairfl::simulator::RoundRecord| r.global.dp_abs.unwrap_or(f64::NAN);
    println!(
        "before attack  |DP| {:.4}  acc {:.4}",
        dp(&run.pre_attack),
        run.pre_attack.global.accuracy
    );
    let probe = run.probe.attack.as_ref().expect("probe round is attacked");
    println!(
        "probe          |DP| {:.4}  acc {:.4}  weight guess {:.3}",
        dp(&run.probe),
        run.probe.global.accuracy,
        probe.weight_used
    );
    let post = run
        .post_attack
        .attack
        .as_ref()
        .expect("second round is attacked");
    println!(
        "estimated      |DP| {:.4}  acc {:.4}  weight {:.3} ({:?}), actual {:.3}",
        dp(&run.post_attack),
        run.post_attack.global.accuracy,
        post.weight_used,
        post.weight_source,
        run.post_attack.weights.get(&0).copied().unwrap_or(f64::NAN)
    );
    println!("lambda {:?}", post.lambda.values);
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
