use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use fairfl::aggregation::AggregatorConfig;
use fairfl::data::{generate_synthetic, load_csv, write_csv, SynthConfig};
use fairfl::results::{ResultFile, Summary};
use fairfl::scenario::Scenario;
use fairfl::Error;

#[derive(Parser)]
#[command(
    name = "fairfl",
    version,
    about = "Federated fairness training and attack simulator"
)]
struct Cli {
    /// Override the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for client training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its result file.
    Run {
        /// Scenario TOML, or a result file to rerun from its header.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic dataset as CSV.
    GenData {
        /// Generator TOML (top-level keys of the synthetic data section).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print group-conditional label rates of a CSV dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SweepParam {
    Gamma,
    AttackerFraction,
    Aggregator,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl Failure {
    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: invalid configuration: `threads` must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run { config, out } => run(&config, &out, cli.seed),
        Command::Sweep {
            config,
            param,
            values,
            out_dir,
        } => sweep(&config, param, &values, &out_dir, cli.seed),
        Command::GenData { config, out } => gen_data(&config, &out, cli.seed),
        Command::Stats { data } => stats(&data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

/// Loads a scenario from TOML, or from the header of a result file.
fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut scenario = if text.trim_start().starts_with('{') {
        let file = ResultFile::read(text.as_bytes())
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        file.header.scenario
    } else {
        let mut s = Scenario::from_toml(&text)?;
        s.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        s
    };
    if let Some(seed) = seed {
        scenario.experiment.seed = seed;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn execute(scenario: &Scenario, out: &Path) -> Result<Summary, Failure> {
    let (prepared, outcome) = scenario.run()?;
    if !prepared.missing_group.is_empty() {
        eprintln!(
            "warning: clients {:?} hold a single sensitive group",
            prepared.missing_group
        );
    }
    let file = ResultFile::new(scenario, &outcome)?;
    file.save(out)?;
    Ok(file.summary.expect("new result files carry a summary"))
}

fn run(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let scenario = load_scenario(config, seed)?;
    let summary = execute(&scenario, out)?;
    print!("{}", summary.render());
    Ok(())
}

fn apply(scenario: &Scenario, param: SweepParam, value: &str) -> Result<Scenario, Failure> {
    let mut s = scenario.clone();
    let bad = |reason: &str| Failure::Config(format!("sweep value `{value}`: {reason}"));
    let number = || value.trim().parse::<f64>().map_err(|_| bad("not a number"));
    match param {
        SweepParam::Gamma | SweepParam::AttackerFraction => {
            let v = number()?;
            let plan = s
                .experiment
                .attack
                .as_mut()
                .ok_or_else(|| bad("the configuration has no attack section"))?;
            if let SweepParam::Gamma = param {
                plan.gamma = v;
            } else {
                plan.attackers.clear();
                plan.attacker_fraction = Some(v);
            }
        }
        SweepParam::Aggregator => {
            s.experiment.aggregator = match value.trim() {
                "fedavg" => AggregatorConfig::Fedavg,
                "fairfed" => AggregatorConfig::Fairfed { beta: 1.5 },
                "f_qfedavg" => AggregatorConfig::FQFedavg { q: 2.0 },
                "trimmed_mean" => AggregatorConfig::TrimmedMean { k: 1 },
                "trimmed_median" => AggregatorConfig::TrimmedMedian,
                "krum" => AggregatorConfig::Krum { f: 1 },
                _ => return Err(bad("unknown aggregator")),
            };
        }
    }
    s.validate()?;
    Ok(s)
}

fn sweep(
    config: &Path,
    param: SweepParam,
    values: &[String],
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let scenario = load_scenario(config, seed)?;
    let name = param
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let outcomes: Vec<(String, Result<Summary, Failure>)> = values
        .par_iter()
        .map(|value| {
            let out = out_dir.join(format!("{name}_{}.jsonl", value.trim()));
            let result = apply(&scenario, param, value).and_then(|s| execute(&s, &out));
            (value.trim().to_string(), result)
        })
        .collect();

    let mut table = format!("{name}\tfinal_accuracy\tfinal_dp_abs\tstatus\n");
    let mut config_failures = 0;
    let mut runtime_failures = 0;
    for (value, result) in &outcomes {
        match result {
            Ok(s) => {
                let dp = s
                    .final_dp_abs
                    .map_or("undefined".into(), |d| format!("{d:.4}"));
                table += &format!("{value}\t{:.4}\t{dp}\tok\n", s.final_accuracy);
            }
            Err(f) => {
                match f {
                    Failure::Config(_) => config_failures += 1,
                    Failure::Runtime(_) => runtime_failures += 1,
                }
                eprintln!("error: {name}={value}: {}", f.message());
                table += &format!("{value}\t-\t-\tfailed\n");
            }
        }
    }
    let summary_path = out_dir.join(format!("{name}_summary.tsv"));
    std::fs::write(&summary_path, &table)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", summary_path.display())))?;
    print!("{table}");
    match (config_failures, runtime_failures) {
        (0, 0) => Ok(()),
        (_, 0) => Err(Failure::Config(format!(
            "{config_failures} sweep value(s) were invalid"
        ))),
        _ => Err(Failure::Runtime(format!(
            "{} of {} sweep runs failed",
            config_failures + runtime_failures,
            outcomes.len()
        ))),
    }
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut cfg: SynthConfig = toml::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {}", config.display(), e.message())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = generate_synthetic(&cfg)?;
    write_csv(&data, out)?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn stats(path: &Path) -> Result<(), Failure> {
    let data = load_csv(path)?;
    let counts = data.stratum_counts();
    let rates = data.label_rates();
    println!("samples          {}", data.len());
    println!("features         {}", data.input_dim());
    for s in 0..2 {
        let rate = rates[s].map_or("undefined".into(), |r| format!("{r:.4}"));
        println!(
            "group {s}          n={} P(Y=1)={rate}",
            counts[s][0] + counts[s][1]
        );
    }
    if let [Some(r0), Some(r1)] = rates {
        println!("label rate gap   {:.4}", r0 - r1);
    }
    Ok(())
}
