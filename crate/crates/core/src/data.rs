//! Labeled tabular samples with a binary sensitive attribute: synthetic
//! generation, CSV ingestion, and client partitioning.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub sensitive: u8,
    pub label: u8,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, sensitive: u8, label: u8) -> Result<Self> {
        if sensitive > 1 || label > 1 {
            return Err(Error::Precondition(format!(
                "sensitive and label must be 0 or 1, got ({sensitive}, {label})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample features"));
        }
        Ok(Self {
            features,
            sensitive,
            label,
        })
    }
}

/// A non-empty collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    input_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let input_dim = first.features.len();
        if input_dim == 0 {
            return Err(Error::Precondition(
                "samples need at least one feature".into(),
            ));
        }
        if let Some(bad) = samples.iter().find(|s| s.features.len() != input_dim) {
            return Err(Error::DimensionMismatch {
                context: "dataset sample",
                expected: input_dim,
                actual: bad.features.len(),
            });
        }
        Ok(Self { samples, input_dim })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Sample counts indexed `[sensitive][label]`.
    pub fn stratum_counts(&self) -> [[usize; 2]; 2] {
        let mut counts = [[0; 2]; 2];
        for s in &self.samples {
            counts[s.sensitive as usize][s.label as usize] += 1;
        }
        counts
    }

    pub fn has_both_groups(&self) -> bool {
        let c = self.stratum_counts();
        c[0][0] + c[0][1] > 0 && c[1][0] + c[1][1] > 0
    }

    pub fn has_all_strata(&self) -> bool {
        self.stratum_counts().iter().flatten().all(|&n| n > 0)
    }

    /// Empirical `P(Y=1 | S=s)` per group; `None` for an empty group.
    pub fn label_rates(&self) -> [Option<f64>; 2] {
        let c = self.stratum_counts();
        [0, 1].map(|s| {
            let n = c[s][0] + c[s][1];
            (n > 0).then(|| c[s][1] as f64 / n as f64)
        })
    }

    /// Concatenates shards in order.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        Dataset::new(
            parts
                .iter()
                .flat_map(|d| d.samples.iter().cloned())
                .collect(),
        )
    }

    /// Seeded shuffle followed by a split into `(train, held_out)` where the
    /// held-out part has `round(fraction * n)` samples.
    pub fn split(&self, held_out_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(held_out_fraction > 0.0 && held_out_fraction < 1.0) {
            return Err(Error::config("eval_fraction", "must lie in (0, 1)"));
        }
        let n_held = ((self.len() as f64) * held_out_fraction).round() as usize;
        if n_held == 0 || n_held >= self.len() {
            return Err(Error::Precondition(format!(
                "cannot hold out {n_held} of {} samples",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pick =
            |idx: &[usize]| Dataset::new(idx.iter().map(|&i| self.samples[i].clone()).collect());
        Ok((pick(&order[n_held..])?, pick(&order[..n_held])?))
    }

    fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Dataset::new(idx.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

// Generator calibration. The ground-truth logit is
//   LABEL_SCALE * <coef, x - shift(S)> + BIAS_SCALE * bias_strength * (2S - 1),
// with `coef` a fixed unit-norm pattern, so label dependence on S comes only
// from the bias term and the X2 block is a pure proxy of S for the model.
const LABEL_SCALE: f64 = 3.0;
const BIAS_SCALE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Number of model inputs, including the sensitive coordinate unless it
    /// is dropped.
    pub input_dim: usize,
    pub group0_fraction: f64,
    pub bias_strength: f64,
    pub correlation: f64,
    pub label_noise: f64,
    pub drop_sensitive_feature: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 25_000,
            input_dim: 8,
            group0_fraction: 0.5,
            bias_strength: 0.8,
            correlation: 0.8,
            label_noise: 0.05,
            drop_sensitive_feature: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn general_dim(&self) -> usize {
        if self.drop_sensitive_feature {
            self.input_dim
        } else {
            self.input_dim.saturating_sub(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.general_dim() < 2 {
            return Err(Error::config(
                "input_dim",
                "must leave at least two general features (one unrelated, one proxy)",
            ));
        }
        if !(self.group0_fraction > 0.0 && self.group0_fraction < 1.0) {
            return Err(Error::config("group0_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return Err(Error::config("bias_strength", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::config("correlation", "must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::config("label_noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Number of leading general coordinates that are independent of S; the
    /// remaining general coordinates form the proxy block.
    pub fn independent_dim(&self) -> usize {
        self.general_dim().div_ceil(2)
    }
}

/// Draws a biased dataset. Features are standard normal, the proxy block is
/// shifted by `correlation * (2S - 1)`, and labels follow a logistic ground
/// truth with an additive `(2S - 1)` bias term plus symmetric label noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let general = cfg.general_dim();
    let independent = cfg.independent_dim();
    let norm = (general as f64).sqrt();
    let coef: Vec<f64> = (0..general)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / norm)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let sensitive = u8::from(rng.random::<f64>() >= cfg.group0_fraction);
        let sign = 2.0 * f64::from(sensitive) - 1.0;
        let mut features = Vec::with_capacity(cfg.input_dim);
        let mut logit = BIAS_SCALE * cfg.bias_strength * sign;
        for (j, c) in coef.iter().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            logit += LABEL_SCALE * c * noise;
            let shift = if j >= independent {
                cfg.correlation * sign
            } else {
                0.0
            };
            features.push(noise + shift);
        }
        if !cfg.drop_sensitive_feature {
            features.push(f64::from(sensitive));
        }
        let p = 1.0 / (1.0 + (-logit).exp());
        let mut label = u8::from(rng.random::<f64>() < p);
        if rng.random::<f64>() < cfg.label_noise {
            label = 1 - label;
        }
        samples.push(LabeledSample {
            features,
            sensitive,
            label,
        });
    }
    Dataset::new(samples)
}

/// Reads the `f0,..,f{d-1},sensitive,label` schema. Row numbers in errors
/// count data rows from 1 (the header is row 0).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(BufReader::new(file), path)
}

fn read_csv(reader: impl Read, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let malformed = |row: usize, e: csv::Error| Error::MalformedRow {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(|e| malformed(0, e))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let feature_count = headers
        .iter()
        .filter(|h| {
            h.strip_prefix('f')
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count();
    if feature_count == 0 {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: "f0".into(),
        });
    }
    let feature_cols = (0..feature_count)
        .map(|j| find(&format!("f{j}")))
        .collect::<Result<Vec<_>>>()?;
    let sensitive_col = find("sensitive")?;
    let label_col = find("label")?;

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| malformed(row, e))?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let raw = cell(col);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    path: path.to_path_buf(),
                    row,
                    column: headers[col].to_string(),
                    value: raw.to_string(),
                })
        };
        let binary = |col: usize| -> Result<u8> {
            let v = number(col)?;
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(Error::NonBinary {
                    path: path.to_path_buf(),
                    row,
                    column: headers[col].to_string(),
                    value: cell(col).to_string(),
                })
            }
        };
        let features = feature_cols
            .iter()
            .map(|&c| number(c))
            .collect::<Result<Vec<_>>>()?;
        samples.push(LabeledSample {
            features,
            sensitive: binary(sensitive_col)?,
            label: binary(label_col)?,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Dataset::new(samples)
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    write_csv_to(data, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn write_csv_to(data: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let header: Vec<String> = (0..data.input_dim())
        .map(|j| format!("f{j}"))
        .chain(["sensitive".to_string(), "label".to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in data.samples() {
        for v in &s.features {
            // `{}` prints the shortest representation that parses back exactly.
            write!(out, "{v},")?;
        }
        writeln!(out, "{},{}", s.sensitive, s.label)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    #[default]
    Iid,
    /// Per-group Dirichlet allocation over clients with concentration `alpha`.
    GroupSkew { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_clients: usize,
    #[serde(default)]
    pub scheme: PartitionScheme,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: Vec<Dataset>,
    /// Clients left without at least one sample of each sensitive group.
    pub missing_group: Vec<usize>,
}

/// Splits `data` into `n_clients` disjoint non-empty shards whose union is
/// the input.
pub fn partition(data: &Dataset, cfg: &PartitionConfig) -> Result<Partition> {
    let k = cfg.n_clients;
    if k < 2 {
        return Err(Error::config("n_clients", "must be at least 2"));
    }
    if k > data.len() {
        return Err(Error::Precondition(format!(
            "cannot split {} samples across {k} clients",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assignment: Vec<Vec<usize>> = match cfg.scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let base = data.len() / k;
            let extra = data.len() % k;
            let mut start = 0;
            (0..k)
                .map(|c| {
                    let size = base + usize::from(c < extra);
                    let chunk = order[start..start + size].to_vec();
                    start += size;
                    chunk
                })
                .collect()
        }
        PartitionScheme::GroupSkew { alpha } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::config("alpha", "must be a positive finite number"));
            }
            group_skew_assignment(data, k, alpha, &mut rng)?
        }
    };
    let shards = assignment
        .iter()
        .map(|idx| data.subset(idx))
        .collect::<Result<Vec<_>>>()?;
    let missing_group = shards
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.has_both_groups())
        .map(|(i, _)| i)
        .collect();
    Ok(Partition {
        shards,
        missing_group,
    })
}

fn dirichlet(k: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::config("alpha", format!("invalid Dirichlet concentration: {e}")))?;
    let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every draw underflowed; put all mass on one client.
        p.iter_mut().for_each(|v| *v = 0.0);
        p[rng.random_range(0..k)] = 1.0;
    }
    Ok(p)
}

/// Largest-remainder rounding of `total * p`.
fn apportion(total: usize, p: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|v| v * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn group_skew_assignment(
    data: &Dataset,
    k: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    // buckets[client][group] holds sample indices.
    let mut buckets: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; k];
    for group in 0..2u8 {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data.samples()[i].sensitive == group)
            .collect();
        members.shuffle(rng);
        let counts = apportion(members.len(), &dirichlet(k, alpha, rng)?);
        let mut start = 0;
        for (client, n) in counts.into_iter().enumerate() {
            buckets[client][group as usize].extend_from_slice(&members[start..start + n]);
            start += n;
        }
    }
    // Where feasible, give every client one sample of each group by moving a
    // sample from the client holding the most of that group.
    #[allow(clippy::needless_range_loop)]
    for group in 0..2 {
        for client in 0..k {
            if !buckets[client][group].is_empty() {
                continue;
            }
            let donor = (0..k)
                .filter(|&c| c != client)
                .max_by_key(|&c| (buckets[c][group].len(), std::cmp::Reverse(c)))
                .expect("at least two clients");
            if buckets[donor][group].len() > 1 {
                let moved = buckets[donor][group].pop().expect("non-empty");
                buckets[client][group].push(moved);
            }
        }
    }
    // Every client must end up non-empty.
    for client in 0..k {
        if buckets[client].iter().all(Vec::is_empty) {
            let (donor, group) = (0..k)
                .flat_map(|c| (0..2).map(move |g| (c, g)))
                .max_by_key(|&(c, g)| (buckets[c][g].len(), std::cmp::Reverse(c)))
                .expect("non-empty data");
            let moved = buckets[donor][group].pop().expect("donor has samples");
            buckets[client][group].push(moved);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|[a, b]| {
            let mut idx = a;
            idx.extend(b);
            idx.sort_unstable();
            idx
        })
        .collect())
}
