// Gain table over convergence thresholds, written as CSV to stdout.

use parareal_langevin::accounting::{adaptive_gain, write_gain_table, GainRow};
use parareal_langevin::parareal::parareal_adaptive;
use parareal_langevin::{
    LangevinParams, NoisePlan, PararealConfig, PhaseState, PropagatorPair, Result, TemperatureSchedule,
};

pub fn run_example() -> Result<String> {
    let pair = PropagatorPair::double_well_desk(2, 0.5, 2600.0)?;
    let schedule = TemperatureSchedule::robust(1);
    let n = 300;
    let plan = NoisePlan::new(99, n);
    let init = PhaseState::at_rest(vec![1.0, 1.0])?;
    let delta_expl = 0.35;
    let mut rows = Vec::new();
    for dt in [0.05, 0.1] {
        let params = LangevinParams::new(1.0, 0.3, dt, 1, 2)?;
        for delta_conv in [1e-3, 1e-5, 1e-10] {
            let cfg = PararealConfig::adaptive(n, delta_conv, delta_expl);
            let res = parareal_adaptive(&init, &pair, &params, &schedule, &plan, &cfg)?;
            let report = adaptive_gain(&res.slabs, n, pair.cost_fine, pair.cost_coarse)?;
            rows.push(GainRow::new(dt, delta_expl, delta_conv, &report));
        }
    }
    let mut buf = Vec::new();
    write_gain_table(&mut buf, &rows)?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
