// Federated training with and without local debiasing, under fairness-aware
// aggregation.

use fairfl::aggregation::AggregatorConfig;
use fairfl::data::SynthConfig;
use fairfl::local::{DebiasConfig, DEFAULT_FAIRBATCH_STEP, DEFAULT_FAIRREG_MU};
use fairfl::scenario::{DataSource, Scenario};
use fairfl::simulator::ExperimentConfig;

pub fn run_example() -> fairfl::Result<()> {
    let base = Scenario {
        data: DataSource::Synthetic(SynthConfig {
            n_samples: 8000,
            ..SynthConfig::default()
        }),
        experiment: ExperimentConfig {
            rounds: 10,
            ..ExperimentConfig::default()
        },
        ..Scenario::default()
    };
    let prepared = base.prepare()?;
    let runs = [
        (
            "plain + fedavg",
            DebiasConfig::None,
            AggregatorConfig::Fedavg,
        ),
        (
            "fairbatch + fairfed",
            DebiasConfig::Fairbatch {
                step: DEFAULT_FAIRBATCH_STEP,
            },
            AggregatorConfig::Fairfed { beta: 1.5 },
        ),
        (
            "fairreg + f-qfedavg",
            DebiasConfig::Fairreg {
                mu: DEFAULT_FAIRREG_MU,
            },
            AggregatorConfig::FQFedavg { q: 2.0 },
        ),
    ];
    for (name, debias, aggregator) in runs {
        let cfg = ExperimentConfig {
            debias,
            aggregator,
            ..base.experiment.clone()
        };
        let outcome =
            fairfl::simulator::Simulator::new(&cfg, &prepared.shards, &prepared.eval)?.run()?;
        let last = &outcome.records.last().expect("rounds > 0").global;
        println!(
            "{name:<22} accuracy {:.4}  |DP| {:.4}",
            last.accuracy,
            last.dp_abs.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
