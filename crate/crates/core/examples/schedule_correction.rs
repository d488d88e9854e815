// Temperature schedules and the equilibrium temperature each one predicts.

use parareal_langevin::integrator::{predicted_kinetic_temperature_for, solve_schedule};
use parareal_langevin::{Result, TemperatureSchedule};

pub fn run_example() -> Result<String> {
    let inv_beta = 1.0;
    let mut out = String::new();
    let mut show = |name: &str, s: &TemperatureSchedule| {
        out += &format!(
            "{name:<12} {:?} -> K_eq = {:.6}\n",
            s.coefficients(),
            predicted_kinetic_temperature_for(s, inv_beta)
        );
    };
    show("identity", &TemperatureSchedule::identity(4));
    show("flat2", &TemperatureSchedule::flat2());
    show("robust", &TemperatureSchedule::robust(4));
    show("solved c0=3", &solve_schedule(4, 3.0)?);
    match solve_schedule(4, 2.0) {
        Ok(s) => show("solved c0=2", &s),
        Err(e) => out += &format!("solved c0=2 rejected: {e}\n"),
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
