//! Basin labeling and residence-time statistics.
//!
//! Trajectories are labeled node by node with the nearest catalogued minimum.
//! Residence times are the run lengths of the label sequence, in windows; the
//! trailing run has no observed exit and is flagged as censored.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{distance, NodeTrajectory};
use crate::potentials::{local_minima, Potential};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinCatalog {
    minima: Vec<Vec<f64>>,
}

impl BasinCatalog {
    /// Minima must share one dimension and be pairwise farther apart than `tol`.
    pub fn new(minima: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        let Some(first) = minima.first() else {
            return Err(Error::InvalidParameter("basin catalog is empty".into()));
        };
        let dim = first.len();
        for (i, m) in minima.iter().enumerate() {
            if m.len() != dim {
                return Err(Error::Dimension {
                    what: "basin minimum",
                    expected: dim,
                    found: m.len(),
                });
            }
            if minima[..i].iter().any(|o| distance(o, m) <= tol) {
                return Err(Error::InvalidParameter(format!("minimum {i} duplicates an earlier one")));
            }
        }
        Ok(BasinCatalog { minima })
    }

    /// Minimizes `pot` from every start and keeps the distinct minima.
    pub fn from_minimization(pot: &Potential, starts: &[Vec<f64>], tol: f64) -> Result<Self> {
        Self::new(local_minima(pot, starts, tol)?, tol)
    }

    pub fn minima(&self) -> &[Vec<f64>] {
        &self.minima
    }

    pub fn len(&self) -> usize {
        self.minima.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minima.is_empty()
    }

    /// Nearest minimum; the lowest index wins ties.
    pub fn label(&self, q: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.minima.iter().enumerate() {
            let d = distance(q, m);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Labels of all nodes, including the initial one.
    pub fn label_trajectory(&self, traj: &NodeTrajectory) -> Vec<usize> {
        traj.states().iter().map(|s| self.label(s.q())).collect()
    }
}

pub fn label_basin(q: &[f64], catalog: &BasinCatalog) -> usize {
    catalog.label(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Residence {
    pub basin: usize,
    pub duration: usize,
    pub censored: bool,
}

/// Run-length encoding; only the final run is censored.
pub fn residence_times(labels: &[usize]) -> Vec<Residence> {
    let mut out: Vec<Residence> = Vec::new();
    for &label in labels {
        match out.last_mut() {
            Some(run) if run.basin == label => run.duration += 1,
            _ => out.push(Residence {
                basin: label,
                duration: 1,
                censored: false,
            }),
        }
    }
    if let Some(last) = out.last_mut() {
        last.censored = true;
    }
    out
}

/// Absorbs runs shorter than `min_run` into the preceding basin. A leading
/// short run is kept. `min_run <= 1` leaves the labels unchanged.
pub fn debounce(labels: &[usize], min_run: usize) -> Vec<usize> {
    let mut out = labels.to_vec();
    if min_run <= 1 {
        return out;
    }
    let mut start = 0;
    while start < out.len() {
        let mut end = start;
        while end < out.len() && out[end] == out[start] {
            end += 1;
        }
        if start > 0 && end - start < min_run && end < out.len() {
            let prev = out[start - 1];
            out[start..end].fill(prev);
            // re-scan from the merged run's beginning
            while start > 0 && out[start - 1] == prev {
                start -= 1;
            }
            continue;
        }
        start = end;
    }
    out
}

/// Length of the common prefix of two residence lists, the last compared
/// entry ignoring the censoring flag only if both are censored.
pub fn common_prefix_len(a: &[Residence], b: &[Residence]) -> usize {
    a.iter()
        .zip(b)
        .take_while(|(x, y)| x.basin == y.basin && x.duration == y.duration && !x.censored && !y.censored)
        .count()
}

/// Sample mean with the normal-approximation 95% interval
/// `mean +- 1.96 s / sqrt(n)`.
pub fn mean_ci(durations: &[f64]) -> Result<(f64, f64, f64)> {
    let n = durations.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, found: n });
    }
    let mean = durations.iter().sum::<f64>() / n as f64;
    let var = durations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let half = 1.96 * var.sqrt() / (n as f64).sqrt();
    Ok((mean, mean - half, mean + half))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidenceStats {
    /// Completed `(basin, duration)` events.
    pub durations: Vec<(usize, usize)>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_events: usize,
    /// Runs without an observed exit.
    pub censored: usize,
}

impl ResidenceStats {
    /// Pools the residences of several trajectories.
    pub fn from_runs<'a, I>(runs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [Residence]>,
    {
        let mut durations = Vec::new();
        let mut censored = 0;
        for run in runs {
            for r in run {
                if r.censored {
                    censored += 1;
                } else {
                    durations.push((r.basin, r.duration));
                }
            }
        }
        let values: Vec<f64> = durations.iter().map(|d| d.1 as f64).collect();
        let (mean, ci_low, ci_high) = mean_ci(&values)?;
        Ok(ResidenceStats {
            n_events: durations.len(),
            durations,
            mean,
            ci_low,
            ci_high,
            censored,
        })
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.ci_low, self.ci_high)
    }

    /// Counts of completed durations in bins `[k w, (k + 1) w)`.
    pub fn histogram(&self, bin_width: usize) -> Vec<(usize, usize)> {
        let w = bin_width.max(1);
        let mut counts = std::collections::BTreeMap::new();
        for &(_, d) in &self.durations {
            *counts.entry(d / w * w).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }

    pub fn write_histogram_csv<W: Write>(&self, mut out: W, bin_width: usize) -> Result<()> {
        writeln!(out, "bin_start,bin_end,count")?;
        let w = bin_width.max(1);
        for (start, count) in self.histogram(w) {
            writeln!(out, "{},{},{}", start, start + w, count)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub overlap: bool,
    pub intervals: [(f64, f64); 2],
}

pub fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

pub fn compare_ensembles(a: &ResidenceStats, b: &ResidenceStats) -> Comparison {
    Comparison {
        overlap: intervals_overlap(a.interval(), b.interval()),
        intervals: [a.interval(), b.interval()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{hexagon_cluster, minimize};
    use proptest::prelude::*;

    fn res(basin: usize, duration: usize, censored: bool) -> Residence {
        Residence {
            basin,
            duration,
            censored,
        }
    }

    #[test]
    fn labels_nearest_with_low_index_ties() {
        let cat = BasinCatalog::new(vec![vec![-1.0], vec![1.0]], 1e-6).unwrap();
        assert_eq!(cat.label(&[0.9]), 1);
        assert_eq!(cat.label(&[0.0]), 0);
        assert_eq!(label_basin(&[-3.0], &cat), 0);
        assert!(BasinCatalog::new(vec![], 1e-6).is_err());
        assert!(BasinCatalog::new(vec![vec![1.0], vec![1.0 + 1e-9]], 1e-6).is_err());
    }

    #[test]
    fn labels_perturbed_lj7_minimum() {
        let pot = Potential::lennard_jones(1.0, 1.0, 7, 2);
        let hex = minimize(&pot, &hexagon_cluster(1.0), 1e-8).unwrap();
        let mut other = hexagon_cluster(1.0);
        // move the center atom onto the rim
        other[0] = 1.6;
        other[1] = 0.9;
        let other = minimize(&pot, &other, 1e-8).unwrap();
        let cat = BasinCatalog::new(vec![other.clone(), hex.clone()], 1e-3).unwrap();
        let mut q = hex.clone();
        for (i, x) in q.iter_mut().enumerate() {
            *x += if i % 2 == 0 { 1e-3 } else { -1e-3 };
        }
        assert!(distance(&q, &hex) < distance(&q, &other));
        assert_eq!(cat.label(&q), 1);
    }

    #[test]
    fn run_length_examples() {
        assert_eq!(
            residence_times(&[0, 0, 0, 1, 1, 0]),
            vec![res(0, 3, false), res(1, 2, false), res(0, 1, true)]
        );
        assert!(residence_times(&[]).is_empty());
        assert_eq!(residence_times(&[4; 2000]), vec![res(4, 2000, true)]);
    }

    #[test]
    fn debounce_absorbs_short_recrossings() {
        assert_eq!(debounce(&[0, 0, 1, 0, 0, 1, 1, 1], 1), vec![0, 0, 1, 0, 0, 1, 1, 1]);
        assert_eq!(debounce(&[0, 0, 1, 0, 0, 1, 1, 1], 2), vec![0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(debounce(&[1, 0, 0, 0], 2), vec![1, 0, 0, 0]);
        assert_eq!(debounce(&[0, 0, 0, 1], 3), vec![0, 0, 0, 1]);
    }

    #[test]
    fn ci_examples() {
        assert_eq!(mean_ci(&[5.0; 4]).unwrap(), (5.0, 5.0, 5.0));
        let (m, lo, hi) = mean_ci(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((lo - 0.04).abs() < 1e-12 && (hi - 3.96).abs() < 1e-12);
        assert!(matches!(mean_ci(&[1.0]), Err(Error::InsufficientData { needed: 2, found: 1 })));
    }

    #[test]
    fn stats_exclude_censored_runs() {
        let a = residence_times(&[0, 0, 1, 1, 1, 1, 0]);
        let b = residence_times(&[1; 50]);
        let s = ResidenceStats::from_runs([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(s.durations, vec![(0, 2), (1, 4)]);
        assert_eq!(s.n_events, 2);
        assert_eq!(s.censored, 2);
        assert_eq!(s.mean, 3.0);
        assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        assert_eq!(s.histogram(3), vec![(0, 1), (3, 1)]);
        let mut csv = Vec::new();
        s.write_histogram_csv(&mut csv, 3).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "bin_start,bin_end,count\n0,3,1\n3,6,1\n");
    }

    #[test]
    fn overlap_examples() {
        assert!(intervals_overlap((268.74, 371.78), (300.9, 411.83)));
        assert!(!intervals_overlap((1.0, 2.0), (3.0, 4.0)));
        let s = ResidenceStats::from_runs([residence_times(&[0, 0, 1, 0, 0, 0, 1]).as_slice()]).unwrap();
        assert!(compare_ensembles(&s, &s).overlap);
    }

    #[test]
    fn common_prefix_examples() {
        let a = vec![res(0, 122, false), res(1, 3, false), res(0, 40, true)];
        let b = vec![res(0, 122, false), res(1, 4, false), res(0, 39, true)];
        assert_eq!(common_prefix_len(&a, &b), 1);
        assert_eq!(common_prefix_len(&a, &a), 2);
        assert_eq!(common_prefix_len(&a[..1], &[]), 0);
    }

    proptest! {
        #[test]
        fn durations_sum_to_length(labels in prop::collection::vec(0usize..3, 0..200)) {
            let r = residence_times(&labels);
            prop_assert_eq!(r.iter().map(|x| x.duration).sum::<usize>(), labels.len());
            prop_assert!(r.iter().all(|x| x.duration > 0));
            prop_assert!(r.windows(2).all(|w| w[0].basin != w[1].basin));
            prop_assert_eq!(r.iter().filter(|x| x.censored).count(), usize::from(!labels.is_empty()));
        }

        #[test]
        fn debounce_preserves_length_and_removes_short_interior_runs(
            labels in prop::collection::vec(0usize..3, 0..100),
            min_run in 1usize..5,
        ) {
            let d = debounce(&labels, min_run);
            prop_assert_eq!(d.len(), labels.len());
            let runs = residence_times(&d);
            let last = runs.len().saturating_sub(1);
            for (i, r) in runs.iter().enumerate() {
                prop_assert!(i == 0 || i == last || r.duration >= min_run);
            }
        }

        #[test]
        fn ci_brackets_mean(values in prop::collection::vec(1.0f64..1000.0, 2..50)) {
            let (m, lo, hi) = mean_ci(&values).unwrap();
            prop_assert!(lo <= m && m <= hi);
        }
    }
}
