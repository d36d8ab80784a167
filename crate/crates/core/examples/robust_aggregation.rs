// The same attack against coordinate-wise trimmed mean, coordinate-wise
// median and Krum.

use fairfl::aggregation::AggregatorConfig;
use fairfl::data::SynthConfig;
use fairfl::scenario::{DataSource, Scenario};
use fairfl::simulator::{AttackPlan, ExperimentConfig, Simulator};

pub fn run_example() -> fairfl::Result<()> {
    let rounds = 10;
    let base = Scenario {
        data: DataSource::Synthetic(SynthConfig {
            n_samples: 8000,
            ..SynthConfig::default()
        }),
        experiment: ExperimentConfig {
            rounds,
            ..ExperimentConfig::default()
        },
        ..Scenario::default()
    };
    let prepared = base.prepare()?;
    for aggregator in [
        AggregatorConfig::TrimmedMean { k: 1 },
        AggregatorConfig::TrimmedMedian,
        AggregatorConfig::Krum { f: 1 },
    ] {
        let mut dps = Vec::new();
        for attack in [None, Some(AttackPlan::final_rounds(0, rounds))] {
            let cfg = ExperimentConfig {
                aggregator,
                attack,
                ..base.experiment.clone()
            };
            let outcome = Simulator::new(&cfg, &prepared.shards, &prepared.eval)?.run()?;
            let last = outcome.records.last().expect("rounds > 0");
            dps.push(last.global.dp_abs.unwrap_or(f64::NAN));
            if let Some(id) = last.krum_selected {
                println!("  krum picked client {id}");
            }
        }
        println!(
            "{:<15} |DP| without attack {:.4}, with attack {:.4}",
            aggregator.name(),
            dps[0],
            dps[1]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
