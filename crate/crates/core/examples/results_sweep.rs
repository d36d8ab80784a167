// Sweep the attack strength from a TOML scenario and keep every run as a
// result file that can be reloaded and rerun.

use fairfl::results::ResultFile;
use fairfl::scenario::Scenario;

const SCENARIO: &str = r#"
partition = "iid"

[data]
source = "synthetic"
n_samples = 6000

[experiment]
rounds = 8
seed = 1

[experiment.attack]
attackers = [0]
rounds = [7, 8]
"#;

pub fn run_example() -> fairfl::Result<()> {
    let base = Scenario::from_toml(SCENARIO)?;
    println!("gamma  final |DP|  final acc");
    for gamma in [1.0, 5.0, 10.0, 20.0] {
        let mut scenario = base.clone();
        if let Some(plan) = scenario.experiment.attack.as_mut() {
            plan.gamma = gamma;
        }
        let (_, outcome) = scenario.run()?;
        let file = ResultFile::new(&scenario, &outcome)?;
        let mut bytes = Vec::new();
        file.write(&mut bytes)
            .map_err(|e| fairfl::Error::Results(e.to_string()))?;
        let reloaded = ResultFile::read(bytes.as_slice())?;
        assert_eq!(reloaded, file);
        let summary = reloaded.summary.expect("written with a summary");
        println!(
            "{gamma:>5}  {:>10.4}  {:>9.4}",
            summary.final_dp_abs.unwrap_or(f64::NAN),
            summary.final_accuracy
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fairfl::Result<()> {
    run_example()
}
