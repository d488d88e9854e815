//! Classical and adaptive parareal iterations over a coarse/fine propagator
//! pair.
//!
//! Both algorithms alternate a parallel phase, where the jumps
//! `J_n = F(prev_n) - C(prev_n)` are computed independently per window, with
//! a sequential corrected coarse sweep `cur_{n+1} = C(cur_n) + J_n`.
//! Convergence is monitored through the relative position error between
//! consecutive iterates,
//!
//! ```text
//! E(prev, cur, n_init, n_final) = sum |cur_n - prev_n| / sum |prev_n|
//! ```
//!
//! summed over `n = max(n_init, 1)..=n_final` with Euclidean norms. The
//! adaptive variant shortens the current time slab whenever the running
//! error exceeds `delta_expl` during a sweep, and opens a new slab from the
//! last converged node once the error drops below `delta_conv`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{propagate_window, TemperatureSchedule};
use crate::model::{distance, norm, LangevinParams, NodeTrajectory, PhaseState};
use crate::potentials::{Potential, PropagatorPair};
use crate::rng::NoisePlan;

/// Advances a state across one coarse window.
///
/// `window` is the 0-based index `n` of the interval `[t_n, t_{n+1}]`;
/// implementations must be deterministic in `(state, window)`.
pub trait Propagator: Sync {
    fn propagate(&self, state: &PhaseState, window: usize) -> Result<PhaseState>;
}

impl<P: Propagator + ?Sized> Propagator for &P {
    fn propagate(&self, state: &PhaseState, window: usize) -> Result<PhaseState> {
        (**self).propagate(state, window)
    }
}

/// Window propagator on one potential; window `n` uses the seed `S_{n+1}`.
#[derive(Clone, Copy, Debug)]
pub struct LangevinPropagator<'a> {
    pub potential: &'a Potential,
    pub params: &'a LangevinParams,
    pub schedule: &'a TemperatureSchedule,
    pub plan: &'a NoisePlan,
}

impl<'a> LangevinPropagator<'a> {
    pub fn new(
        potential: &'a Potential,
        params: &'a LangevinParams,
        schedule: &'a TemperatureSchedule,
        plan: &'a NoisePlan,
    ) -> Self {
        LangevinPropagator {
            potential,
            params,
            schedule,
            plan,
        }
    }
}

impl Propagator for LangevinPropagator<'_> {
    fn propagate(&self, state: &PhaseState, window: usize) -> Result<PhaseState> {
        let seed = self.plan.seed(window + 1).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "noise plan covers {} windows, window {} requested",
                self.plan.n_windows(),
                window + 1
            ))
        })?;
        propagate_window(state, self.potential, self.params, self.schedule, seed)
            .map_err(|e| e.in_window(window + 1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PararealConfig {
    pub n_windows: usize,
    pub delta_conv: f64,
    /// Explosion threshold; only the adaptive algorithm reads it.
    pub delta_expl: f64,
    /// Iteration cap per slab, `N + 1` when unset.
    pub k_max: Option<usize>,
    /// Keep a copy of the trajectory after every sweep.
    #[serde(default, skip_serializing)]
    pub keep_iterates: bool,
}

impl PararealConfig {
    pub fn classic(n_windows: usize, delta_conv: f64) -> Self {
        PararealConfig {
            n_windows,
            delta_conv,
            delta_expl: f64::MAX,
            k_max: None,
            keep_iterates: false,
        }
    }

    pub fn adaptive(n_windows: usize, delta_conv: f64, delta_expl: f64) -> Self {
        PararealConfig {
            delta_expl,
            ..Self::classic(n_windows, delta_conv)
        }
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = Some(k_max);
        self
    }

    pub fn keep_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(self.n_windows + 1)
    }

    pub fn validate_classic(&self) -> Result<()> {
        if self.n_windows == 0 {
            return Err(Error::InvalidParameter("n_windows must be >= 1".into()));
        }
        if !(self.delta_conv.is_finite() && self.delta_conv > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_conv must be finite and > 0, got {}",
                self.delta_conv
            )));
        }
        if self.k_max == Some(0) {
            return Err(Error::InvalidParameter("k_max must be >= 1".into()));
        }
        Ok(())
    }

    pub fn validate_adaptive(&self) -> Result<()> {
        self.validate_classic()?;
        if !(self.delta_expl.is_finite() && self.delta_expl > self.delta_conv) {
            return Err(Error::InvalidParameter(format!(
                "delta_expl must be finite and exceed delta_conv ({}), got {}",
                self.delta_conv, self.delta_expl
            )));
        }
        Ok(())
    }
}

/// One tentative slab length and the iterations spent on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabAttempt {
    pub n_final: usize,
    pub iterations: usize,
}

/// Bookkeeping of one time slab `[n_init, n_final]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlabRecord {
    /// 1-based.
    pub slab_index: usize,
    pub n_init: usize,
    pub attempts: Vec<SlabAttempt>,
    pub n_final: usize,
    pub k_conv: usize,
}

impl SlabRecord {
    fn open(slab_index: usize, n_init: usize, n_final: usize) -> Self {
        SlabRecord {
            slab_index,
            n_init,
            attempts: vec![SlabAttempt {
                n_final,
                iterations: 0,
            }],
            n_final,
            k_conv: 0,
        }
    }

    fn count_iteration(&mut self) {
        self.k_conv += 1;
        if let Some(a) = self.attempts.last_mut() {
            a.iterations += 1;
        }
    }

    fn shorten(&mut self, n_final: usize) {
        self.n_final = n_final;
        self.attempts.push(SlabAttempt {
            n_final,
            iterations: 0,
        });
    }
}

/// Checks the slab invariants: attempts shrink from `N` to the final end,
/// iteration counts add up, and slabs tile `[0, N]`.
pub fn validate_slabs(slabs: &[SlabRecord], n_windows: usize) -> Result<()> {
    let fail = |msg: String| Err(Error::SlabValidation(msg));
    if slabs.is_empty() {
        return fail("no slabs".into());
    }
    let mut expected_init = 0;
    for (i, s) in slabs.iter().enumerate() {
        if s.n_init != expected_init {
            return fail(format!("slab {} starts at {} instead of {expected_init}", i + 1, s.n_init));
        }
        let Some(first) = s.attempts.first() else {
            return fail(format!("slab {} has no attempts", i + 1));
        };
        if first.n_final != n_windows {
            return fail(format!("slab {}'s first attempt ends at {} instead of {n_windows}", i + 1, first.n_final));
        }
        if s.attempts.windows(2).any(|w| w[1].n_final > w[0].n_final) {
            return fail(format!("slab {}'s attempt endpoints increase", i + 1));
        }
        if s.attempts.last().map(|a| a.n_final) != Some(s.n_final) {
            return fail(format!("slab {}'s last attempt does not match its end", i + 1));
        }
        if s.n_final <= s.n_init {
            return fail(format!("slab {} is empty", i + 1));
        }
        if s.attempts.iter().map(|a| a.iterations).sum::<usize>() != s.k_conv {
            return fail(format!("slab {}'s iteration counts do not sum to k_conv", i + 1));
        }
        expected_init = s.n_final;
    }
    if expected_init != n_windows {
        return fail(format!("slabs end at {expected_init} instead of {n_windows}"));
    }
    Ok(())
}

/// Relative error recorded during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub slab: usize,
    /// Iteration within the slab, 1-based.
    pub iteration: usize,
    /// Last node included in the error sum.
    pub node: usize,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PararealResult {
    #[serde(skip)]
    pub trajectory: NodeTrajectory,
    pub slabs: Vec<SlabRecord>,
    pub error_history: Vec<ErrorSample>,
    pub converged: bool,
    /// Iteration-count bound violations (`k_conv > width + 1`), which only
    /// roundoff can cause.
    pub warnings: Vec<String>,
    /// Trajectory after each sweep, index 0 being the coarse bootstrap; only
    /// filled when requested.
    #[serde(skip)]
    pub iterates: Vec<NodeTrajectory>,
}

impl PararealResult {
    pub fn n_slab(&self) -> usize {
        self.slabs.len()
    }

    pub fn total_iterations(&self) -> usize {
        self.slabs.iter().map(|s| s.k_conv).sum()
    }
}

/// Running sums of the relative error, accumulated node by node in index
/// order. Equal to recomputing the whole sum at every node.
#[derive(Clone, Copy, Debug, Default)]
struct RunningError {
    num: f64,
    den: f64,
}

impl RunningError {
    fn add(&mut self, prev: &PhaseState, cur: &PhaseState) {
        self.num += distance(cur.q(), prev.q());
        self.den += norm(prev.q());
    }

    fn value(&self, n_init: usize, n_final: usize) -> Result<f64> {
        if self.den == 0.0 {
            return Err(Error::DegenerateNormalization { n_init, n_final });
        }
        Ok(self.num / self.den)
    }
}

fn relative_error_nodes(
    prev: &[PhaseState],
    cur: &[PhaseState],
    n_init: usize,
    n_final: usize,
) -> Result<f64> {
    let mut acc = RunningError::default();
    for n in n_init.max(1)..=n_final {
        acc.add(&prev[n], &cur[n]);
    }
    acc.value(n_init, n_final)
}

/// `E(a, b, n_init, n_final)`: position discrepancy of `b` relative to `a`.
pub fn relative_error(
    a: &NodeTrajectory,
    b: &NodeTrajectory,
    n_init: usize,
    n_final: usize,
) -> Result<f64> {
    let len = a.states().len().min(b.states().len());
    if n_final < n_init.max(1) || n_final >= len {
        return Err(Error::Range {
            n_init,
            n_final,
            len,
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            what: "trajectory",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    relative_error_nodes(a.states(), b.states(), n_init, n_final)
}

/// Chains `propagator` over windows `0..n_windows`.
pub fn sequential_with<P: Propagator>(
    propagator: &P,
    initial: &PhaseState,
    n_windows: usize,
) -> Result<NodeTrajectory> {
    let mut traj = NodeTrajectory::initial(initial.clone());
    for n in 0..n_windows {
        let next = propagator.propagate(traj.last(), n)?;
        traj.push(next);
    }
    Ok(traj)
}

/// Sequential reference: node `n + 1 = propagate_window(node n, S_{n+1})`.
pub fn sequential_propagate(
    initial: &PhaseState,
    n_windows: usize,
    pot: &Potential,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    plan: &NoisePlan,
) -> Result<NodeTrajectory> {
    sequential_with(&LangevinPropagator::new(pot, params, schedule, plan), initial, n_windows)
}

/// Parareal driver for a coarse/fine pair, optionally on a worker pool.
///
/// Results do not depend on the pool: jumps are collected by window index and
/// the sweep is sequential.
pub struct Parareal<'a, C, F> {
    coarse: C,
    fine: F,
    pool: Option<&'a rayon::ThreadPool>,
}

impl<'a, C: Propagator, F: Propagator> Parareal<'a, C, F> {
    pub fn new(coarse: C, fine: F) -> Self {
        Parareal {
            coarse,
            fine,
            pool: None,
        }
    }

    pub fn with_pool(mut self, pool: &'a rayon::ThreadPool) -> Self {
        self.pool = Some(pool);
        self
    }

    fn jump(&self, state: &PhaseState, window: usize) -> Result<PhaseState> {
        let fine = self.fine.propagate(state, window)?;
        let coarse = self.coarse.propagate(state, window)?;
        fine.difference(&coarse)
    }

    /// `J_n` for windows `n_init..n_init + prev.len() - 1`.
    fn jumps(&self, prev: &[PhaseState], n_init: usize, iteration: usize) -> Result<Vec<PhaseState>> {
        let windows = prev.len() - 1;
        let compute = |m: usize| self.jump(&prev[m], n_init + m);
        let results: Vec<Result<PhaseState>> = match self.pool {
            Some(pool) => pool.install(|| (0..windows).into_par_iter().map(compute).collect()),
            None => (0..windows).map(compute).collect(),
        };
        results
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.at_iteration(iteration))
    }

    fn coarse_step(&self, state: &PhaseState, window: usize, iteration: usize) -> Result<PhaseState> {
        self.coarse
            .propagate(state, window)
            .map_err(|e| e.at_iteration(iteration))
    }

    /// Classical parareal over the whole horizon.
    pub fn classic(&self, initial: &PhaseState, config: &PararealConfig) -> Result<PararealResult> {
        config.validate_classic()?;
        let n = config.n_windows;
        let k_max = config.k_max();
        let mut cur = Vec::with_capacity(n + 1);
        cur.push(initial.clone());
        for m in 0..n {
            let next = self.coarse_step(&cur[m], m, 0)?;
            cur.push(next);
        }
        let mut iterates = Vec::new();
        if config.keep_iterates {
            iterates.push(NodeTrajectory::new(cur.clone())?);
        }
        let mut slab = SlabRecord::open(1, 0, n);
        let mut history = Vec::new();
        let mut converged = false;
        loop {
            let k = slab.k_conv + 1;
            let prev = cur.clone();
            let jumps = self.jumps(&prev, 0, k)?;
            slab.count_iteration();
            for m in 0..n {
                let next = self.coarse_step(&cur[m], m, k)?.corrected(&jumps[m])?;
                cur[m + 1] = next;
            }
            let delta = relative_error_nodes(&prev, &cur, 0, n)?;
            history.push(ErrorSample {
                slab: 1,
                iteration: k,
                node: n,
                error: delta,
            });
            if config.keep_iterates {
                iterates.push(NodeTrajectory::new(cur.clone())?);
            }
            if delta < config.delta_conv {
                converged = true;
                break;
            }
            if k >= k_max {
                break;
            }
        }
        let warnings = bound_warnings(std::slice::from_ref(&slab));
        Ok(PararealResult {
            trajectory: NodeTrajectory::new(cur)?,
            slabs: vec![slab],
            error_history: history,
            converged,
            warnings,
            iterates,
        })
    }

    /// Adaptive parareal with slab shortening.
    pub fn adaptive(&self, initial: &PhaseState, config: &PararealConfig) -> Result<PararealResult> {
        config.validate_adaptive()?;
        let n = config.n_windows;
        let k_max = config.k_max();
        let (conv, expl) = (config.delta_conv, config.delta_expl);
        let midpoint = 0.5 * (conv + expl);

        let mut cur: Vec<PhaseState> = vec![initial.clone(); n + 1];
        let mut slabs: Vec<SlabRecord> = Vec::new();
        let mut history = Vec::new();
        let mut iterates = Vec::new();
        let (mut n_init, mut n_final) = (0usize, 0usize);
        let mut delta = midpoint;

        while n_final < n {
            if delta < expl {
                // open a new slab from the last converged node
                n_init = n_final;
                n_final = n;
                for m in n_init..n_final {
                    cur[m + 1] = self.coarse_step(&cur[m], m, 0)?;
                }
                slabs.push(SlabRecord::open(slabs.len() + 1, n_init, n_final));
                if config.keep_iterates {
                    iterates.push(NodeTrajectory::new(cur.clone())?);
                }
            }
            let slab = slabs.last_mut().expect("a slab is open");
            delta = midpoint;
            while (conv..=expl).contains(&delta) {
                if slab.k_conv >= k_max {
                    let warnings = bound_warnings(&slabs);
                    return Ok(PararealResult {
                        trajectory: NodeTrajectory::new(cur)?,
                        slabs,
                        error_history: history,
                        converged: false,
                        warnings,
                        iterates,
                    });
                }
                let k = slab.k_conv + 1;
                let prev: Vec<PhaseState> = cur[n_init..=n_final].to_vec();
                let jumps = self.jumps(&prev, n_init, k)?;
                slab.count_iteration();
                let mut running = RunningError::default();
                if n_init >= 1 {
                    running.add(&prev[0], &cur[n_init]);
                }
                for m in n_init..n_final {
                    let next = self.coarse_step(&cur[m], m, k)?.corrected(&jumps[m - n_init])?;
                    cur[m + 1] = next;
                    running.add(&prev[m + 1 - n_init], &cur[m + 1]);
                    delta = running.value(n_init, m + 1)?;
                    history.push(ErrorSample {
                        slab: slab.slab_index,
                        iteration: k,
                        node: m + 1,
                        error: delta,
                    });
                    if delta > expl {
                        if m == n_init {
                            return Err(Error::SlabCollapse { n_init });
                        }
                        n_final = m;
                        slab.shorten(m);
                        break;
                    }
                }
                if config.keep_iterates {
                    iterates.push(NodeTrajectory::new(cur.clone())?);
                }
            }
            if delta.is_nan() {
                return Err(Error::NonFinite("relative error"));
            }
        }
        validate_slabs(&slabs, n)?;
        let warnings = bound_warnings(&slabs);
        Ok(PararealResult {
            trajectory: NodeTrajectory::new(cur)?,
            slabs,
            error_history: history,
            converged: true,
            warnings,
            iterates,
        })
    }
}

fn bound_warnings(slabs: &[SlabRecord]) -> Vec<String> {
    slabs
        .iter()
        .filter(|s| s.k_conv > s.n_final - s.n_init + 1)
        .map(|s| {
            format!(
                "slab {} of width {} needed {} iterations",
                s.slab_index,
                s.n_final - s.n_init,
                s.k_conv
            )
        })
        .collect()
}

/// Classical parareal with Langevin propagators on the pair's potentials;
/// both propagators consume `S_{n+1}` on window `n`.
pub fn parareal_classic(
    initial: &PhaseState,
    pair: &PropagatorPair,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    plan: &NoisePlan,
    config: &PararealConfig,
) -> Result<PararealResult> {
    let coarse = LangevinPropagator::new(&pair.coarse, params, schedule, plan);
    let fine = LangevinPropagator::new(&pair.fine, params, schedule, plan);
    Parareal::new(coarse, fine).classic(initial, config)
}

/// Adaptive parareal with Langevin propagators on the pair's potentials.
pub fn parareal_adaptive(
    initial: &PhaseState,
    pair: &PropagatorPair,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    plan: &NoisePlan,
    config: &PararealConfig,
) -> Result<PararealResult> {
    let coarse = LangevinPropagator::new(&pair.coarse, params, schedule, plan);
    let fine = LangevinPropagator::new(&pair.fine, params, schedule, plan);
    Parareal::new(coarse, fine).adaptive(initial, config)
}
