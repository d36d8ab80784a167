//! Line-delimited JSON result files: a header carrying the resolved scenario,
//! one line per communication round, and a closing summary.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::simulator::{Outcome, RoundRecord};

pub const FORMAT: &str = "fairfl-results/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub seed: u64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLine {
    pub training_round: usize,
    pub round: usize,
    pub accuracy: f64,
    pub dp_signed: Option<f64>,
    pub dp_abs: Option<f64>,
    pub attacked: bool,
    pub record: RoundRecord,
}

impl From<&RoundRecord> for RoundLine {
    fn from(r: &RoundRecord) -> Self {
        Self {
            training_round: r.training_round,
            round: r.round,
            accuracy: r.global.accuracy,
            dp_signed: r.global.dp_signed,
            dp_abs: r.global.dp_abs,
            attacked: r.attack.is_some(),
            record: r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub final_dp_signed: Option<f64>,
    pub final_dp_abs: Option<f64>,
    /// |DP| after the round preceding the first attack.
    pub pre_attack_dp_abs: Option<f64>,
    pub pre_attack_accuracy: Option<f64>,
    /// `final |DP| - pre-attack |DP|`.
    pub attack_dp_delta: Option<f64>,
    /// Final |DP| within the configured fairness tolerance.
    pub within_tolerance: Option<bool>,
    pub attack_rounds: usize,
    pub forced_joins: usize,
    pub debias_fallbacks: usize,
    pub aggregation_fallbacks: usize,
}

impl Summary {
    pub fn from_outcome(outcome: &Outcome, fairness_tolerance: f64) -> Result<Self> {
        let last = outcome
            .records
            .last()
            .ok_or_else(|| Error::Results("run produced no rounds".into()))?;
        let first_attack = outcome.records.iter().position(|r| r.attack.is_some());
        let pre = first_attack.map(|i| match i {
            0 => (
                outcome.initial_report.dp_abs,
                outcome.initial_report.accuracy,
            ),
            i => (
                outcome.records[i - 1].global.dp_abs,
                outcome.records[i - 1].global.accuracy,
            ),
        });
        let pre_attack_dp_abs = pre.and_then(|(dp, _)| dp);
        let attack_dp_delta = match (last.global.dp_abs, pre_attack_dp_abs) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        let records = &outcome.records;
        Ok(Self {
            initial_accuracy: outcome.initial_report.accuracy,
            final_accuracy: last.global.accuracy,
            final_dp_signed: last.global.dp_signed,
            final_dp_abs: last.global.dp_abs,
            pre_attack_dp_abs,
            pre_attack_accuracy: pre.map(|(_, acc)| acc),
            attack_dp_delta,
            within_tolerance: last.global.dp_abs.map(|d| d <= fairness_tolerance),
            attack_rounds: records.iter().filter(|r| r.attack.is_some()).count(),
            forced_joins: records.iter().map(|r| r.forced.len()).sum(),
            debias_fallbacks: records.iter().map(|r| r.debias_fallbacks.len()).sum(),
            aggregation_fallbacks: records.iter().filter(|r| r.aggregation_fell_back).count(),
        })
    }

    /// Multi-line human-readable rendering.
    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "final accuracy   {:.4}\nfinal DP         {}\nfinal |DP|       {}\n",
            self.final_accuracy,
            opt(self.final_dp_signed),
            opt(self.final_dp_abs),
        );
        if self.attack_rounds > 0 {
            out += &format!(
                "pre-attack |DP|  {}\nattack DP delta  {}\npre-attack acc   {}\n",
                opt(self.pre_attack_dp_abs),
                opt(self.attack_dp_delta),
                opt(self.pre_attack_accuracy),
            );
        }
        if let Some(ok) = self.within_tolerance {
            out += &format!("within tolerance {ok}\n");
        }
        for (label, n) in [
            ("forced joins", self.forced_joins),
            ("debias fallbacks", self.debias_fallbacks),
            ("weight fallbacks", self.aggregation_fallbacks),
        ] {
            if n > 0 {
                out += &format!("{label:<17}{n}\n");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub header: Header,
    pub rounds: Vec<RoundLine>,
    pub summary: Option<Summary>,
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_line<T: Serialize>(out: &mut impl Write, kind: &str, body: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &Tagged { kind, body })?;
    out.write_all(b"\n")
}

impl ResultFile {
    pub fn new(scenario: &Scenario, outcome: &Outcome) -> Result<Self> {
        Ok(Self {
            header: Header {
                format: FORMAT.to_string(),
                seed: scenario.experiment.seed,
                scenario: scenario.clone(),
            },
            rounds: outcome.records.iter().map(RoundLine::from).collect(),
            summary: Some(Summary::from_outcome(
                outcome,
                scenario.experiment.fairness_tolerance,
            )?),
        })
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_line(out, "header", &self.header)?;
        for line in &self.rounds {
            write_line(out, "round", line)?;
        }
        if let Some(summary) = &self.summary {
            write_line(out, "summary", summary)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        self.write(&mut file).map_err(io)?;
        file.flush().map_err(io)
    }

    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut rounds = Vec::new();
        let mut summary = None;
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Results(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| Error::Results(format!("line {}: {e}", i + 1));
            let mut value: Value = serde_json::from_str(&line).map_err(bad)?;
            let kind = value
                .as_object_mut()
                .and_then(|o| o.remove("kind"))
                .and_then(|k| k.as_str().map(str::to_owned))
                .ok_or_else(|| Error::Results(format!("line {}: missing `kind`", i + 1)))?;
            match kind.as_str() {
                "header" if header.is_none() && i == 0 => {
                    header = Some(serde_json::from_value::<Header>(value).map_err(bad)?)
                }
                "round" => rounds.push(serde_json::from_value(value).map_err(bad)?),
                "summary" => summary = Some(serde_json::from_value(value).map_err(bad)?),
                other => {
                    return Err(Error::Results(format!(
                        "line {}: unexpected `{other}` line",
                        i + 1
                    )))
                }
            }
        }
        let header = header.ok_or_else(|| Error::Results("missing header line".into()))?;
        if header.format != FORMAT {
            return Err(Error::Results(format!(
                "unsupported format `{}`",
                header.format
            )));
        }
        Ok(Self {
            header,
            rounds,
            summary,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(std::io::BufReader::new(file))
    }
}
