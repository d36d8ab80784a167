// How FairFed and f-qFedAvg move client weights away from size-proportional
// FedAvg weights when clients disagree on fairness.

use std::collections::BTreeMap;

use fairfl::aggregation::{fairfed_update, fqfedavg_update, AggregatorConfig, AggregatorState};

pub fn run_example() -> fairfl::Result<()> {
    let sizes: BTreeMap<usize, usize> = [(0, 100), (1, 100), (2, 200)].into();
    // Client 2 is much less fair locally than the federation as a whole.
    let local_dp: BTreeMap<usize, f64> = [(0, 0.05), (1, 0.08), (2, 0.40)].into();
    let global_dp = 0.10;

    let mut fairfed = AggregatorState::new(AggregatorConfig::Fairfed { beta: 0.5 }, sizes.clone())?;
    let mut fq = AggregatorState::new(AggregatorConfig::FQFedavg { q: 2.0 }, sizes)?;
    println!("fedavg     {:?}", fairfed.normalized);
    let abs: BTreeMap<usize, f64> = local_dp.iter().map(|(&k, v)| (k, v.abs())).collect();
    for round in 1..=3 {
        fairfed = fairfed_update(&fairfed, &local_dp, global_dp, 0.5)?;
        fq = fqfedavg_update(&fq, &abs, 2.0)?;
        println!("round {round}");
        println!("  fairfed   {}", render(&fairfed.normalized));
        println!("  f-qfedavg {}", render(&fq.normalized));
    }
    Ok(())
}

fn render(w: &BTreeMap<usize, f64>) -> String {
    w.iter()
        .map(|(id, v)| format!("{id}:{v:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
