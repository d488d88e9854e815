// Relaxes the planar seven-atom Lennard-Jones hexagon and checks the
// analytic gradient of the fine and perturbed potentials.

use parareal_langevin::potentials::{gradient_check, gradient_norm, hexagon_cluster, minimize};
use parareal_langevin::{PropagatorPair, Result};

pub fn run_example() -> Result<String> {
    let pair = PropagatorPair::lj7_desk(0.05, 2600.0)?;
    let start = hexagon_cluster(1.0);
    let fine_min = minimize(&pair.fine, &start, 1e-8)?;
    let coarse_min = minimize(&pair.coarse, &start, 1e-8)?;
    Ok(format!(
        "fine minimum energy    {:.6}  |grad| {:.2e}\n\
         coarse minimum energy  {:.6}  |grad| {:.2e}\n\
         gradient check (fine)  {:.2e}\n\
         gradient check (coarse) {:.2e}\n",
        pair.fine.energy(&fine_min)?,
        gradient_norm(&pair.fine, &fine_min)?,
        pair.coarse.energy(&coarse_min)?,
        gradient_norm(&pair.coarse, &coarse_min)?,
        gradient_check(&pair.fine, &start, 1e-6)?,
        gradient_check(&pair.coarse, &start, 1e-6)?,
    ))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
