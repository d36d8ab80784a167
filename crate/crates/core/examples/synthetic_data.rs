// Generate a biased synthetic dataset, inspect it, split it among clients and
// round-trip it through CSV.

use fairfl::data::{
    generate_synthetic, load_csv, partition, write_csv, PartitionConfig, PartitionScheme,
    SynthConfig,
};

pub fn run_example() -> fairfl::Result<()> {
    let data = generate_synthetic(&SynthConfig {
        n_samples: 4000,
        bias_strength: 0.8,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let rates = data.label_rates();
    println!("{} samples, {} features", data.len(), data.input_dim());
    println!("P(Y=1|S=0) = {:.3}", rates[0].unwrap_or(f64::NAN));
    println!("P(Y=1|S=1) = {:.3}", rates[1].unwrap_or(f64::NAN));

    for scheme in [
        PartitionScheme::Iid,
        PartitionScheme::GroupSkew { alpha: 0.5 },
    ] {
        let parts = partition(
            &data,
            &PartitionConfig {
                n_clients: 5,
                scheme,
                seed: 1,
            },
        )?;
        let shares: Vec<String> = parts
            .shards
            .iter()
            .map(|s| {
                let c = s.stratum_counts();
                format!("{:.2}", (c[0][0] + c[0][1]) as f64 / s.len() as f64)
            })
            .collect();
        println!(
            "{scheme:?}: group-0 share per client [{}]",
            shares.join(", ")
        );
    }

    let path = std::env::temp_dir().join(format!("fairfl-example-{}.csv", std::process::id()));
    write_csv(&data, &path)?;
    let reloaded = load_csv(&path)?;
    std::fs::remove_file(&path).ok();
    assert_eq!(reloaded, data);
    println!("csv round trip ok");
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
