// Classic parareal on a double well, checked against the sequential fine run.

use parareal_langevin::model::distance;
use parareal_langevin::parareal::{parareal_classic, sequential_propagate};
use parareal_langevin::{
    LangevinParams, NoisePlan, PararealConfig, PhaseState, PropagatorPair, Result, TemperatureSchedule,
};

pub fn run_example() -> Result<String> {
    let pair = PropagatorPair::double_well_desk(2, 0.5, 175.0)?;
    let params = LangevinParams::new(1.0, 0.3, 0.1, 1, 2)?;
    let schedule = TemperatureSchedule::robust(1);
    let n = 40;
    let plan = NoisePlan::new(2024, n);
    let init = PhaseState::at_rest(vec![1.0, 1.0])?;

    let reference = sequential_propagate(&init, n, &pair.fine, &params, &schedule, &plan)?;
    let res = parareal_classic(&init, &pair, &params, &schedule, &plan, &PararealConfig::classic(n, 1e-10))?;
    let max_dev = res
        .trajectory
        .states()
        .iter()
        .zip(reference.states())
        .map(|(a, b)| distance(a.q(), b.q()))
        .fold(0.0, f64::max);
    Ok(format!(
        "converged: {}\niterations: {}\nmax deviation from sequential fine: {max_dev:.3e}\n",
        res.converged,
        res.total_iterations()
    ))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
