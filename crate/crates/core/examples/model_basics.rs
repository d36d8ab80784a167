// Train a logistic model and a one-hidden-layer network with weighted SGD
// and measure accuracy and demographic parity on held-out data.

use fairfl::data::{generate_synthetic, SynthConfig};
use fairfl::fairness::evaluate;
use fairfl::model::{sgd_train, ModelSpec, SgdConfig};

pub fn run_example() -> fairfl::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        n_samples: 5000,
        ..SynthConfig::default()
    })?;
    let (train, test) = data.split(0.2, 3)?;
    let cfg = SgdConfig {
        epochs: 10,
        ..SgdConfig::default()
    };
    for spec in [
        ModelSpec::logistic(train.input_dim()),
        ModelSpec::mlp1(train.input_dim(), 8),
    ] {
        let init = spec.init_params(0);
        let params = sgd_train(&spec, &init, &train, &vec![1.0; train.len()], &cfg)?;
        let report = evaluate(&spec, &params, &test)?;
        println!(
            "{:?} ({} params): accuracy {:.4}, DP {:+.4}",
            spec.family(),
            spec.param_count(),
            report.accuracy,
            report.dp_signed.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
