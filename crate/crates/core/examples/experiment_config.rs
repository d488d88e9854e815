// Parses an experiment configuration and runs it into a scratch directory,
// the same way the `pararealmd` binary does.

use parareal_langevin::experiment::{parse_config, run_experiment};
use parareal_langevin::Result;

const CONFIG: &str = r#"
experiment = "parareal_adaptive"
master_seed = 42

[potentials.well]
kind = "double_well"
a = [1.0, 1.0]
b = [1.0, 1.0]

[potentials.soft]
kind = "perturbed"
base = "well"
delta = { kind = "harmonic", k = [1.0, 1.0] }
lambda = 0.5

[pair]
fine = "well"
coarse = "soft"
cost_ratio = 175.0

[langevin]
gamma = 1.0
inv_beta = 0.3
dt = 0.1
substeps = 1

[initial]
q = [1.0, 1.0]

[parareal]
n_windows = 100
delta_conv = 1e-6
delta_expl = 0.35
"#;

pub fn run_example() -> Result<String> {
    let config = parse_config(CONFIG, None).map_err(|e| parareal_langevin::Error::InvalidParameter(e.to_string()))?;
    let dir = tempfile::tempdir()?;
    let report = run_experiment(&config, dir.path(), 2)?;
    let mut out = format!("outcome: {:?}\n", report.outcome);
    for path in &report.outputs {
        out += &format!("wrote {}\n", path.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
