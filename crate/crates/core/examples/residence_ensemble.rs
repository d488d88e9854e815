// Residence times in the four basins of a 2-d double well, comparing the
// fine, coarse and adaptive parareal ensembles.

use parareal_langevin::analysis::{compare_ensembles, BasinCatalog};
use parareal_langevin::ensemble::{run_ensemble, EnsembleMode, EnsembleSpec};
use parareal_langevin::{LangevinParams, PropagatorPair, Result, TemperatureSchedule};

pub fn run_example() -> Result<String> {
    let pair = PropagatorPair::double_well_desk(2, 0.5, 175.0)?;
    let params = LangevinParams::new(1.0, 0.3, 0.1, 1, 2)?;
    let schedule = TemperatureSchedule::robust(1);
    let catalog = BasinCatalog::new(
        vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
        1e-6,
    )?;
    let spec = EnsembleSpec {
        members: 6,
        segment_windows: 400,
        equilibration_windows: 100,
        master_seed: 5,
        start: vec![1.0, 1.0],
        minimize_tol: 1e-10,
        debounce: 1,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().expect("thread pool");
    let fine = run_ensemble(&pair, &params, &schedule, &catalog, &spec, EnsembleMode::FineSequential, Some(&pool))?;
    let mut out = format!(
        "fine      mean {:>8.2}  CI [{:.2}, {:.2}]  events {}\n",
        fine.stats.mean, fine.stats.ci_low, fine.stats.ci_high, fine.stats.n_events
    );
    for mode in [
        EnsembleMode::CoarseSequential,
        EnsembleMode::Adaptive { delta_conv: 1e-5, delta_expl: 0.35 },
    ] {
        let report = run_ensemble(&pair, &params, &schedule, &catalog, &spec, mode, Some(&pool))?;
        let cmp = compare_ensembles(&fine.stats, &report.stats);
        out += &format!(
            "{:<9} mean {:>8.2}  CI [{:.2}, {:.2}]  overlaps fine: {}",
            mode.label(),
            report.stats.mean,
            report.stats.ci_low,
            report.stats.ci_high,
            cmp.overlap
        );
        if let Some(g) = report.mean_gain() {
            out += &format!("  mean gain {g:.2}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
