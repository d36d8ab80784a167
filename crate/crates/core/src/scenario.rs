//! A complete, serializable experiment: where the data comes from, how it is
//! split among clients, and the federated run itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_csv, partition, Dataset, PartitionConfig, PartitionScheme, SynthConfig,
};
use crate::error::{Error, Result};
use crate::simulator::{stream_seed, ExperimentConfig, Outcome, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// Relative paths resolve against the scenario file's directory.
    Csv {
        path: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

fn default_held_out() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub data: DataSource,
    /// Fraction of the data kept out of every shard for evaluation.
    #[serde(default = "default_held_out")]
    pub held_out_fraction: f64,
    #[serde(default)]
    pub partition: PartitionScheme,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            held_out_fraction: default_held_out(),
            partition: PartitionScheme::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Shards and evaluation set ready for [`Simulator`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub shards: Vec<Dataset>,
    pub eval: Dataset,
    /// Clients whose shard lacks one of the sensitive groups.
    pub missing_group: Vec<usize>,
}

const TAG_SPLIT: u64 = 10;
const TAG_PARTITION: u64 = 11;

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads a TOML scenario; a relative CSV path is made relative to `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut scenario = Self::from_toml(&text)?;
        scenario.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(scenario)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Csv { path } = &mut self.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            return Err(Error::config("held_out_fraction", "must lie in (0, 1)"));
        }
        if let PartitionScheme::GroupSkew { alpha } = self.partition {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::config("partition.alpha", "must be positive"));
            }
        }
        if let DataSource::Synthetic(cfg) = &self.data {
            cfg.validate()?;
        }
        if self.experiment.n_clients < 2 && !matches!(self.partition, PartitionScheme::Iid) {
            return Err(Error::config(
                "n_clients",
                "group_skew needs at least 2 clients",
            ));
        }
        self.experiment.validate()
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic(cfg) => generate_synthetic(cfg),
            DataSource::Csv { path } => load_csv(path),
        }
    }

    /// Splits off the evaluation set and partitions the rest among clients.
    /// Both draws are seeded from the experiment seed.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let data = self.load_data()?;
        let seed = self.experiment.seed;
        let (train, eval) = data.split(self.held_out_fraction, stream_seed(seed, &[TAG_SPLIT]))?;
        if self.experiment.n_clients == 1 {
            let missing_group = if train.has_both_groups() {
                vec![]
            } else {
                vec![0]
            };
            return Ok(Prepared {
                shards: vec![train],
                eval,
                missing_group,
            });
        }
        let parts = partition(
            &train,
            &PartitionConfig {
                n_clients: self.experiment.n_clients,
                scheme: self.partition,
                seed: stream_seed(seed, &[TAG_PARTITION]),
            },
        )?;
        Ok(Prepared {
            shards: parts.shards,
            eval,
            missing_group: parts.missing_group,
        })
    }

    pub fn run(&self) -> Result<(Prepared, Outcome)> {
        let prepared = self.prepare()?;
        let outcome = Simulator::new(&self.experiment, &prepared.shards, &prepared.eval)?.run()?;
        Ok((prepared, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::AggregatorConfig;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(Scenario::from_toml("").unwrap(), Scenario::default());
    }

    #[test]
    fn nested_sections_parse() {
        let s = Scenario::from_toml(
            r#"
            held_out_fraction = 0.25
            [data]
            source = "synthetic"
            n_samples = 500
            [partition]
            group_skew = { alpha = 0.5 }
            [experiment]
            n_clients = 4
            rounds = 3
            [experiment.aggregator]
            mechanism = "f_qfedavg"
            [experiment.attack]
            attackers = [1]
            rounds = [2, 3]
            "#,
        )
        .unwrap();
        assert_eq!(
            s.experiment.aggregator,
            AggregatorConfig::FQFedavg { q: 2.0 }
        );
        assert_eq!(s.partition, PartitionScheme::GroupSkew { alpha: 0.5 });
        assert_eq!(s.experiment.attack.as_ref().unwrap().gamma, 10.0);
        let DataSource::Synthetic(cfg) = &s.data else {
            panic!()
        };
        assert_eq!(cfg.n_samples, 500);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = Scenario::from_toml("[experiment]\nround = 3\n").unwrap_err();
        assert!(err.is_config_error());
    }

    #[test]
    fn prepare_holds_out_fraction() {
        let mut s = Scenario::default();
        s.data = DataSource::Synthetic(SynthConfig {
            n_samples: 1000,
            ..SynthConfig::default()
        });
        let p = s.prepare().unwrap();
        assert_eq!(p.eval.len(), 200);
        assert_eq!(p.shards.iter().map(Dataset::len).sum::<usize>(), 800);
    }
}
