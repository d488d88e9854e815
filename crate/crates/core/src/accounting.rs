//! Model-based cost and wall-clock gain of classical and adaptive parareal.
//!
//! Costs are the configured per-window prices `C_f` and `C_c` of the fine
//! and coarse propagators; communication is free. The adaptive cost is
//!
//! ```text
//! sum_i [ (N - N_init^i) C_c + sum_j k^{i,j} ((C_f + C_c) + (N_final^{i,j} - N_init^i) C_c) ]
//! ```
//!
//! which reduces to the classical `N C_c + k (C_f + C_c + N C_c)` for a
//! single slab with a single attempt.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parareal::{validate_slabs, SlabAttempt, SlabRecord};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub total_cost: f64,
    /// `N C_f`.
    pub sequential_cost: f64,
    pub gain: f64,
    pub ideal_gain: f64,
    pub n_slab: usize,
    pub total_iterations: usize,
    /// Total CPU effort summed over all workers.
    pub total_effort: f64,
}

fn check_costs(cf: f64, cc: f64) -> Result<()> {
    if !(cf.is_finite() && cf > 0.0) {
        return Err(Error::InvalidParameter(format!("fine cost must be > 0, got {cf}")));
    }
    if !(cc.is_finite() && cc >= 0.0) {
        return Err(Error::InvalidParameter(format!("coarse cost must be >= 0, got {cc}")));
    }
    Ok(())
}

/// Adaptive cost, summed in slab and attempt order.
pub fn adaptive_cost(slabs: &[SlabRecord], n_windows: usize, cf: f64, cc: f64) -> Result<f64> {
    check_costs(cf, cc)?;
    validate_slabs(slabs, n_windows)?;
    Ok(cost_unchecked(slabs, n_windows, cf, cc))
}

fn cost_unchecked(slabs: &[SlabRecord], n_windows: usize, cf: f64, cc: f64) -> f64 {
    let n = n_windows as f64;
    slabs
        .iter()
        .map(|s| {
            let init = s.n_init as f64;
            let iterations: f64 = s
                .attempts
                .iter()
                .map(|a| a.iterations as f64 * ((cf + cc) + (a.n_final as f64 - init) * cc))
                .sum();
            (n - init) * cc + iterations
        })
        .sum()
}

/// CPU effort: the coarse bootstrap plus, per iteration, `w` jumps
/// (fine and coarse) and a `w`-window coarse sweep, `w` the attempt width.
fn effort_unchecked(slabs: &[SlabRecord], n_windows: usize, cf: f64, cc: f64) -> f64 {
    let n = n_windows as f64;
    slabs
        .iter()
        .map(|s| {
            let init = s.n_init as f64;
            let iterations: f64 = s
                .attempts
                .iter()
                .map(|a| {
                    let w = a.n_final as f64 - init;
                    a.iterations as f64 * (w * (cf + cc) + 2.0 * w * cc)
                })
                .sum();
            (n - init) * cc + iterations
        })
        .sum()
}

pub fn adaptive_gain(slabs: &[SlabRecord], n_windows: usize, cf: f64, cc: f64) -> Result<GainReport> {
    let total_cost = adaptive_cost(slabs, n_windows, cf, cc)?;
    let total_iterations: usize = slabs.iter().map(|s| s.k_conv).sum();
    if total_iterations == 0 {
        return Err(Error::UndefinedGain);
    }
    let n = n_windows as f64;
    Ok(GainReport {
        total_cost,
        sequential_cost: n * cf,
        gain: n * cf / total_cost,
        ideal_gain: n / total_iterations as f64,
        n_slab: slabs.len(),
        total_iterations,
        total_effort: effort_unchecked(slabs, n_windows, cf, cc),
    })
}

/// `N C_f / (N C_c + k (C_f + C_c + N C_c))`.
pub fn classic_gain(n_windows: usize, k_conv: usize, cf: f64, cc: f64) -> Result<GainReport> {
    if n_windows == 0 {
        return Err(Error::InvalidParameter("n_windows must be >= 1".into()));
    }
    if k_conv == 0 {
        return Err(Error::UndefinedGain);
    }
    let slab = SlabRecord {
        slab_index: 1,
        n_init: 0,
        attempts: vec![SlabAttempt {
            n_final: n_windows,
            iterations: k_conv,
        }],
        n_final: n_windows,
        k_conv,
    };
    adaptive_gain(&[slab], n_windows, cf, cc)
}

/// One row of a gain table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub dt: f64,
    pub delta_expl: f64,
    pub delta_conv: f64,
    pub ideal_gain: f64,
    pub gain: f64,
    pub n_slab: usize,
}

impl GainRow {
    pub fn new(dt: f64, delta_expl: f64, delta_conv: f64, report: &GainReport) -> Self {
        GainRow {
            dt,
            delta_expl,
            delta_conv,
            ideal_gain: report.ideal_gain,
            gain: report.gain,
            n_slab: report.n_slab,
        }
    }
}

pub const GAIN_TABLE_HEADER: &str = "dt,delta_expl,delta_conv,ideal_gain,gain,n_slab";

pub fn write_gain_table<W: Write>(mut out: W, rows: &[GainRow]) -> Result<()> {
    writeln!(out, "{GAIN_TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dt, r.delta_expl, r.delta_conv, r.ideal_gain, r.gain, r.n_slab
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slab(index: usize, n_init: usize, attempts: &[(usize, usize)]) -> SlabRecord {
        SlabRecord {
            slab_index: index,
            n_init,
            attempts: attempts
                .iter()
                .map(|&(n_final, iterations)| SlabAttempt { n_final, iterations })
                .collect(),
            n_final: attempts.last().unwrap().0,
            k_conv: attempts.iter().map(|a| a.1).sum(),
        }
    }

    #[test]
    fn single_slab_cost() {
        let s = [slab(1, 0, &[(10, 2)])];
        assert_eq!(adaptive_cost(&s, 10, 100.0, 1.0).unwrap(), 232.0);
        let r = adaptive_gain(&s, 10, 100.0, 1.0).unwrap();
        assert_eq!(r.gain, 1000.0 / 232.0);
        assert_eq!(r.ideal_gain, 5.0);
        assert_eq!(r.sequential_cost, 1000.0);
    }

    #[test]
    fn two_slab_cost() {
        let s = [slab(1, 0, &[(10, 2), (5, 1)]), slab(2, 5, &[(10, 1)])];
        assert_eq!(adaptive_cost(&s, 10, 100.0, 1.0).unwrap(), 449.0);
        let r = adaptive_gain(&s, 10, 100.0, 1.0).unwrap();
        assert_eq!(r.n_slab, 2);
        assert_eq!(r.total_iterations, 4);
    }

    #[test]
    fn free_coarse_collapses_to_fine_cost() {
        let s = [slab(1, 0, &[(10, 2), (5, 1)]), slab(2, 5, &[(10, 1)])];
        assert_eq!(adaptive_cost(&s, 10, 100.0, 0.0).unwrap(), 400.0);
        let r = classic_gain(10, 2, 100.0, 0.0).unwrap();
        assert_eq!(r.gain, 5.0);
        assert_eq!(r.gain, r.ideal_gain);
    }

    #[test]
    fn classic_examples() {
        let r = classic_gain(10, 2, 100.0, 1.0).unwrap();
        assert_eq!(r.gain, 1000.0 / 232.0);
        assert!((r.gain - 4.310).abs() < 1e-3);
        assert_eq!(r.ideal_gain, 5.0);
        // N C_c + k (N (C_f + C_c) + 2 N C_c)
        assert_eq!(r.total_effort, 10.0 + 2.0 * (10.0 * 101.0 + 20.0));
        assert!(classic_gain(10, 10, 100.0, 1e-9).unwrap().gain < 1.0);
        assert!(matches!(classic_gain(10, 0, 100.0, 1.0), Err(Error::UndefinedGain)));
    }

    #[test]
    fn rejects_malformed_records() {
        let gap = [slab(1, 0, &[(10, 2), (5, 1)]), slab(2, 6, &[(10, 1)])];
        assert!(matches!(adaptive_cost(&gap, 10, 100.0, 1.0), Err(Error::SlabValidation(_))));
        let idle = [slab(1, 0, &[(10, 0)])];
        assert!(matches!(adaptive_gain(&idle, 10, 100.0, 1.0), Err(Error::UndefinedGain)));
        assert!(adaptive_cost(&[slab(1, 0, &[(10, 1)])], 10, -1.0, 1.0).is_err());
    }

    #[test]
    fn gain_table_layout() {
        let r = classic_gain(10, 2, 100.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_gain_table(&mut buf, &[GainRow::new(0.5, 0.35, 1e-3, &r)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(GAIN_TABLE_HEADER));
        assert_eq!(lines.next(), Some(format!("0.5,0.35,0.001,5,{},1", 1000.0 / 232.0).as_str()));
    }

    /// Random valid slab tilings of `[0, n]`.
    fn tilings() -> impl Strategy<Value = (usize, Vec<SlabRecord>)> {
        (2usize..40, prop::collection::vec((0.0f64..1.0, 1usize..4, 0usize..3), 1..6)).prop_map(|(n, raw)| {
            let mut slabs = Vec::new();
            let mut n_init = 0;
            for (i, (frac, k, shrinks)) in raw.iter().enumerate() {
                if n_init == n {
                    break;
                }
                let last = i + 1 == raw.len();
                let end = if last { n } else { n_init + 1 + ((n - n_init - 1) as f64 * frac) as usize };
                let mut attempts = vec![(n, *k)];
                for s in 0..*shrinks {
                    let mid = end + (n - end) * (shrinks - s) / (shrinks + 1);
                    if mid < attempts.last().unwrap().0 && mid > end {
                        attempts.push((mid, 1));
                    }
                }
                if attempts.last().unwrap().0 != end {
                    attempts.push((end, 1));
                }
                slabs.push(slab(i + 1, n_init, &attempts));
                n_init = end;
            }
            (n, slabs)
        })
    }

    proptest! {
        #[test]
        fn generated_tilings_are_valid((n, slabs) in tilings()) {
            prop_assert!(validate_slabs(&slabs, n).is_ok());
        }

        #[test]
        fn gain_bounded_by_ideal((n, slabs) in tilings(), cc in 1e-6f64..10.0) {
            let r = adaptive_gain(&slabs, n, 100.0, cc).unwrap();
            prop_assert!(r.gain <= r.ideal_gain);
            prop_assert!(r.total_cost >= 0.0 && r.total_effort >= r.total_cost - 1e-9 * r.total_cost);
        }

        #[test]
        fn gain_decreases_with_coarse_cost((n, slabs) in tilings(), cc in 1e-6f64..10.0, bump in 1e-3f64..5.0) {
            let lo = adaptive_gain(&slabs, n, 100.0, cc).unwrap().gain;
            let hi = adaptive_gain(&slabs, n, 100.0, cc + bump).unwrap().gain;
            prop_assert!(hi < lo);
        }

        #[test]
        fn gain_decreases_with_iterations((n, slabs) in tilings(), pick in 0usize..64, cc in 0.0f64..10.0) {
            let base = adaptive_gain(&slabs, n, 100.0, cc).unwrap().gain;
            let mut more = slabs.clone();
            let i = pick % more.len();
            let j = pick % more[i].attempts.len();
            more[i].attempts[j].iterations += 1;
            more[i].k_conv += 1;
            prop_assert!(adaptive_gain(&more, n, 100.0, cc).unwrap().gain < base);
        }
    }
}
