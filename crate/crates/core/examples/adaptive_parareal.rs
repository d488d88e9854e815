// Adaptive parareal: slabs are truncated when the running error explodes,
// and the computational gain is read off the slab records.

use parareal_langevin::accounting::adaptive_gain;
use parareal_langevin::parareal::parareal_adaptive;
use parareal_langevin::{
    LangevinParams, NoisePlan, PararealConfig, PhaseState, PropagatorPair, Result, TemperatureSchedule,
};

pub fn run_example() -> Result<String> {
    let pair = PropagatorPair::double_well_desk(2, 0.5, 175.0)?;
    let params = LangevinParams::new(1.0, 0.3, 0.1, 1, 2)?;
    let schedule = TemperatureSchedule::robust(1);
    let n = 400;
    let plan = NoisePlan::new(7, n);
    let init = PhaseState::at_rest(vec![1.0, -1.0])?;
    let cfg = PararealConfig::adaptive(n, 1e-8, 0.35);
    let res = parareal_adaptive(&init, &pair, &params, &schedule, &plan, &cfg)?;

    let mut out = String::from("slab  n_init  n_final  k_conv  attempts\n");
    for s in &res.slabs {
        out += &format!(
            "{:>4} {:>7} {:>8} {:>7} {:>9}\n",
            s.slab_index,
            s.n_init,
            s.n_final,
            s.k_conv,
            s.attempts.len()
        );
    }
    let gain = adaptive_gain(&res.slabs, n, pair.cost_fine, pair.cost_coarse)?;
    out += &format!("gain {:.2} (ideal {:.2})\n", gain.gain, gain.ideal_gain);
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
