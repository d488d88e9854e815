// Kinetic temperature of the window-restarted integrator, with and without
// a corrected temperature schedule.

use parareal_langevin::integrator::{measure_kinetic_temperature, Sampling};
use parareal_langevin::{LangevinParams, Potential, Result, TemperatureSchedule};

const GAMMA: f64 = 0.05;
const DT: f64 = 0.5;
const WINDOWS: usize = 20000;

pub fn run_example() -> Result<String> {
    let dim = 8;
    let inv_beta = 1.0;
    let pot = Potential::harmonic(vec![1.0; dim]);
    let mut out = String::from("L  schedule  K_eq(measured)  K_eq(predicted)\n");
    for substeps in [1, 4, 10] {
        let params = LangevinParams::new(GAMMA, inv_beta, DT, substeps, dim)?;
        for (name, schedule) in [
            ("plain", TemperatureSchedule::identity(substeps)),
            ("robust", TemperatureSchedule::robust(substeps)),
        ] {
            let report = measure_kinetic_temperature(&pot, &params, &schedule, WINDOWS, 11, Sampling::AllSubsteps)?;
            out += &format!(
                "{substeps:<2} {name:<9} {:>14.4} {:>16.4}\n",
                report.k_eq_empirical, report.k_eq_predicted
            );
        }
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
