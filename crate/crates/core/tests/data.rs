use std::collections::BTreeSet;

use fairfl::data::{
    generate_synthetic, load_csv, partition, write_csv, Dataset, LabeledSample, PartitionConfig,
    PartitionScheme, SynthConfig,
};

fn synth(n: usize, seed: u64) -> Dataset {
    generate_synthetic(&SynthConfig {
        n_samples: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn csv_round_trip_is_exact() {
    let data = synth(500, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_csv(&data, &path).unwrap();
    assert_eq!(load_csv(&path).unwrap(), data);
}

#[test]
fn csv_columns_may_come_in_any_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "label,f1,sensitive,f0\n1,2.5,0,-1\n0,0.5,1,3\n").unwrap();
    let data = load_csv(&path).unwrap();
    assert_eq!(
        data.samples(),
        &[
            LabeledSample::new(vec![-1.0, 2.5], 0, 1).unwrap(),
            LabeledSample::new(vec![3.0, 0.5], 1, 0).unwrap(),
        ]
    );
}

#[test]
fn generator_is_seeded() {
    assert_eq!(synth(300, 4), synth(300, 4));
    assert_ne!(synth(300, 4), synth(300, 5));
}

#[test]
fn biased_generator_separates_label_rates() {
    let rates = synth(20_000, 2).label_rates();
    let gap = (rates[0].unwrap() - rates[1].unwrap()).abs();
    assert!(gap > 0.1, "label rate gap {gap}");
}

fn key(s: &LabeledSample) -> String {
    format!("{:?}|{}|{}", s.features, s.sensitive, s.label)
}

#[test]
fn partitions_are_disjoint_and_cover_the_data() {
    let data = synth(3000, 3);
    let all: Vec<String> = data.samples().iter().map(key).collect();
    assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), all.len());
    for scheme in [
        PartitionScheme::Iid,
        PartitionScheme::GroupSkew { alpha: 0.5 },
    ] {
        let parts = partition(
            &data,
            &PartitionConfig {
                n_clients: 7,
                scheme,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(parts.shards.len(), 7);
        assert!(parts.shards.iter().all(|s| !s.is_empty()));
        let mut seen: Vec<String> = parts
            .shards
            .iter()
            .flat_map(|s| s.samples().iter().map(key))
            .collect();
        seen.sort();
        let mut expected = all.clone();
        expected.sort();
        assert_eq!(seen, expected, "{scheme:?}");
    }
}

fn group_share_std(shards: &[Dataset]) -> f64 {
    let shares: Vec<f64> = shards
        .iter()
        .map(|s| {
            let c = s.stratum_counts();
            (c[0][0] + c[0][1]) as f64 / s.len() as f64
        })
        .collect();
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    (shares.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / shares.len() as f64).sqrt()
}

#[test]
fn group_skew_spreads_group_shares_more_than_iid() {
    let data = synth(5000, 6);
    let split = |scheme| {
        partition(
            &data,
            &PartitionConfig {
                n_clients: 10,
                scheme,
                seed: 2,
            },
        )
        .unwrap()
        .shards
    };
    let iid = group_share_std(&split(PartitionScheme::Iid));
    let skew = group_share_std(&split(PartitionScheme::GroupSkew { alpha: 0.3 }));
    assert!(skew > 2.0 * iid, "skew {skew} vs iid {iid}");
}
