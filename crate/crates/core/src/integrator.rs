//! Window propagator for Langevin dynamics.
//!
//! A window advances the system by `L` substeps of length `dt`. The first
//! substep starts from `(q_0, p_0)` with no half-step momentum, damps `p_0`
//! and draws two fresh variates `G_0`, `G_1`. Every later substep `l` damps
//! the previous half-step momentum and reuses `G_l` from the preceding closing
//! half-kick, so a window consumes `L + 1` variate blocks.
//!
//! Restarting every window this way lowers the equilibrium kinetic
//! temperature to `inv_beta * (1 - 1/(2L))` at leading order. A temperature
//! schedule `C_0..C_L` scales the fluctuation amplitude of each variate
//! block to restore it.

use serde::{Deserialize, Serialize};

use crate::error::{BlowUpSite, Error, Result};
use crate::model::{LangevinParams, PhaseState};
use crate::potentials::Potential;
use crate::rng::{derive_seed, fill_gaussian};

/// Components beyond this magnitude abort the window.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Multipliers `C_l` on the target temperature, one per variate block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TemperatureSchedule {
    coefficients: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TemperatureSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TemperatureSchedule::from_coefficients(v)
    }
}

impl From<TemperatureSchedule> for Vec<f64> {
    fn from(s: TemperatureSchedule) -> Vec<f64> {
        s.coefficients
    }
}

impl TemperatureSchedule {
    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() < 2 {
            return Err(Error::InvalidParameter(
                "a schedule needs L + 1 >= 2 coefficients".into(),
            ));
        }
        if let Some((index, &value)) = coefficients
            .iter()
            .enumerate()
            .find(|(_, c)| !(c.is_finite() && **c > 0.0))
        {
            return Err(Error::InfeasibleSchedule { index, value });
        }
        Ok(TemperatureSchedule { coefficients })
    }

    /// All ones: the uncorrected scheme.
    pub fn identity(substeps: usize) -> Self {
        TemperatureSchedule {
            coefficients: vec![1.0; substeps.max(1) + 1],
        }
    }

    /// `[3, 1, ..., 1]`, valid for every `L`.
    pub fn robust(substeps: usize) -> Self {
        let mut coefficients = vec![1.0; substeps.max(1) + 1];
        coefficients[0] = 3.0;
        TemperatureSchedule { coefficients }
    }

    /// `[2, 2]`, the alternative for single-substep windows.
    pub fn flat2() -> Self {
        TemperatureSchedule {
            coefficients: vec![2.0, 2.0],
        }
    }

    pub fn substeps(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn is_identity(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 1.0)
    }
}

/// `theta = gamma * inv_beta * dt / 2` and `mu = 1 - gamma * dt / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticCoefficients {
    pub theta: f64,
    pub mu: f64,
}

impl AnalyticCoefficients {
    pub fn new(params: &LangevinParams) -> Self {
        AnalyticCoefficients {
            theta: 0.5 * params.gamma * params.inv_beta * params.dt,
            mu: 1.0 - 0.5 * params.gamma * params.dt,
        }
    }

    /// `theta_l = C_l * theta`.
    pub fn theta_at(&self, c: f64) -> f64 {
        c * self.theta
    }
}

/// A state after a full substep, carrying the half-step momentum that the
/// next substep damps.
#[derive(Clone, Debug, PartialEq)]
pub struct BbkState {
    pub state: PhaseState,
    pub p_half: Vec<f64>,
}

/// Receives a trace of one window's execution.
pub trait WindowObserver {
    /// One half-kick used variate block `block` with unit-mass amplitude
    /// `amplitude = sqrt(2 gamma C_block inv_beta dt) / 2`.
    fn kick(&mut self, _block: usize, _amplitude: f64) {}
    /// State after substep `l` (1-based).
    fn substep(&mut self, _l: usize, _q: &[f64], _p: &[f64]) {}
}

impl WindowObserver for () {}

#[inline]
fn kick_amplitude(params: &LangevinParams, c: f64) -> f64 {
    0.5 * (2.0 * params.gamma * c * params.inv_beta * params.dt).sqrt()
}

/// `out = base - (dt/2) grad - (dt/2) gamma damped + amp * sqrt(m) * g`.
#[inline]
fn half_kick(
    out: &mut [f64],
    base: &[f64],
    grad: &[f64],
    damped: &[f64],
    params: &LangevinParams,
    amplitude: f64,
    g: &[f64],
) {
    let h = 0.5 * params.dt;
    for i in 0..out.len() {
        let noise = amplitude * params.mass[i].sqrt() * g[i];
        out[i] = base[i] - h * grad[i] - h * params.gamma * damped[i] + noise;
    }
}

#[inline]
fn drift(q_out: &mut [f64], q: &[f64], p_half: &[f64], params: &LangevinParams) {
    for i in 0..q_out.len() {
        q_out[i] = q[i] + params.dt * (p_half[i] / params.mass[i]);
    }
}

fn check_finite(q: &[f64], p: &[f64], substep: usize) -> Result<()> {
    let ok = q
        .iter()
        .chain(p)
        .all(|x| x.is_finite() && x.abs() <= BLOW_UP_THRESHOLD);
    if ok {
        Ok(())
    } else {
        Err(Error::BlowUp(BlowUpSite {
            substep,
            ..Default::default()
        }))
    }
}

fn check_inputs(state: &PhaseState, params: &LangevinParams, blocks: &[&[f64]]) -> Result<()> {
    let d = state.dim();
    if params.dim() != d {
        return Err(Error::Dimension {
            what: "mass vector",
            expected: d,
            found: params.dim(),
        });
    }
    for b in blocks {
        if b.len() != d {
            return Err(Error::Dimension {
                what: "variate block",
                expected: d,
                found: b.len(),
            });
        }
    }
    Ok(())
}

/// First substep of a window from `(q_0, p_0)`, with temperature multipliers
/// `c0`, `c1` on the two half-kicks.
pub fn bbk_first_step(
    state: &PhaseState,
    pot: &Potential,
    params: &LangevinParams,
    c0: f64,
    c1: f64,
    g0: &[f64],
    g1: &[f64],
) -> Result<BbkState> {
    check_inputs(state, params, &[g0, g1])?;
    let d = state.dim();
    let mut grad = pot.gradient(state.q())?;
    let mut p_half = vec![0.0; d];
    half_kick(&mut p_half, state.p(), &grad, state.p(), params, kick_amplitude(params, c0), g0);
    let mut q = vec![0.0; d];
    drift(&mut q, state.q(), &p_half, params);
    pot.gradient_into(&q, &mut grad)?;
    let mut p = vec![0.0; d];
    half_kick(&mut p, &p_half, &grad, &p_half, params, kick_amplitude(params, c1), g1);
    check_finite(&q, &p, 1)?;
    Ok(BbkState {
        state: PhaseState::from_parts(q, p),
        p_half,
    })
}

/// Substep `l -> l + 1` for `l >= 1`; the opening half-kick damps
/// `current.p_half` and uses `g_l`, the closing one uses `g_lp1`.
pub fn bbk_step(
    current: &BbkState,
    pot: &Potential,
    params: &LangevinParams,
    c_l: f64,
    c_lp1: f64,
    g_l: &[f64],
    g_lp1: &[f64],
) -> Result<BbkState> {
    let state = &current.state;
    check_inputs(state, params, &[g_l, g_lp1, &current.p_half])?;
    let d = state.dim();
    let mut grad = pot.gradient(state.q())?;
    let mut p_half = vec![0.0; d];
    half_kick(&mut p_half, state.p(), &grad, &current.p_half, params, kick_amplitude(params, c_l), g_l);
    let mut q = vec![0.0; d];
    drift(&mut q, state.q(), &p_half, params);
    pot.gradient_into(&q, &mut grad)?;
    let mut p = vec![0.0; d];
    half_kick(&mut p, &p_half, &grad, &p_half, params, kick_amplitude(params, c_lp1), g_lp1);
    check_finite(&q, &p, 0)?;
    Ok(BbkState {
        state: PhaseState::from_parts(q, p),
        p_half,
    })
}

/// Advances one window using the Gaussian stream of `seed`.
pub fn propagate_window(
    state: &PhaseState,
    pot: &Potential,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    seed: u64,
) -> Result<PhaseState> {
    let mut noise = Vec::with_capacity((params.substeps + 1) * state.dim());
    fill_gaussian(seed, &mut noise, (params.substeps + 1) * state.dim());
    propagate_window_observed(state, pot, params, schedule, &noise, &mut ())
}

/// Advances one window with caller-supplied variates laid out block-major:
/// block `l` occupies `noise[l * d..(l + 1) * d]`.
pub fn propagate_window_with_noise(
    state: &PhaseState,
    pot: &Potential,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    noise: &[f64],
) -> Result<PhaseState> {
    propagate_window_observed(state, pot, params, schedule, noise, &mut ())
}

/// As [`propagate_window_with_noise`], reporting each kick and substep.
///
/// Bitwise identical to chaining [`bbk_first_step`] and [`bbk_step`]; the
/// gradient at the end of a substep is reused at the start of the next.
pub fn propagate_window_observed<O: WindowObserver>(
    state: &PhaseState,
    pot: &Potential,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    noise: &[f64],
    observer: &mut O,
) -> Result<PhaseState> {
    let d = state.dim();
    let l_total = params.substeps;
    if schedule.substeps() != l_total {
        return Err(Error::Dimension {
            what: "temperature schedule length",
            expected: l_total + 1,
            found: schedule.coefficients().len(),
        });
    }
    if noise.len() != (l_total + 1) * d {
        return Err(Error::Dimension {
            what: "window noise",
            expected: (l_total + 1) * d,
            found: noise.len(),
        });
    }
    check_inputs(state, params, &[])?;
    let block = |l: usize| &noise[l * d..(l + 1) * d];
    let amp: Vec<f64> = schedule
        .coefficients()
        .iter()
        .map(|&c| kick_amplitude(params, c))
        .collect();

    let mut q = state.q().to_vec();
    let mut p = state.p().to_vec();
    let mut grad = pot.gradient(&q)?;
    let mut p_half = vec![0.0; d];
    let mut q_next = vec![0.0; d];

    // substep 1: damps p_0
    half_kick(&mut p_half, &p, &grad, &p, params, amp[0], block(0));
    observer.kick(0, amp[0]);
    drift(&mut q_next, &q, &p_half, params);
    std::mem::swap(&mut q, &mut q_next);
    pot.gradient_into(&q, &mut grad)?;
    half_kick(&mut p, &p_half, &grad, &p_half, params, amp[1], block(1));
    observer.kick(1, amp[1]);
    check_finite(&q, &p, 1)?;
    observer.substep(1, &q, &p);

    let mut p_next_half = vec![0.0; d];
    for l in 1..l_total {
        half_kick(&mut p_next_half, &p, &grad, &p_half, params, amp[l], block(l));
        observer.kick(l, amp[l]);
        std::mem::swap(&mut p_half, &mut p_next_half);
        drift(&mut q_next, &q, &p_half, params);
        std::mem::swap(&mut q, &mut q_next);
        pot.gradient_into(&q, &mut grad)?;
        half_kick(&mut p, &p_half, &grad, &p_half, params, amp[l + 1], block(l + 1));
        observer.kick(l + 1, amp[l + 1]);
        check_finite(&q, &p, l + 1)?;
        observer.substep(l + 1, &q, &p);
    }
    Ok(PhaseState::from_parts(q, p))
}

/// Leading-order equilibrium kinetic temperature of the uncorrected scheme:
/// `inv_beta * (1 - 1/(2L))`.
pub fn predicted_kinetic_temperature(substeps: usize, inv_beta: f64) -> f64 {
    inv_beta * (1.0 - 1.0 / (2.0 * substeps as f64))
}

/// Leading-order equilibrium kinetic temperature under an arbitrary schedule,
/// `inv_beta * (C_0 + 4 (C_1 + ... + C_{L-1}) + C_L) / (4L)`.
///
/// Follows from imposing `Var p_L = Var p_0` on the free-particle variance
/// recursion; reduces to [`predicted_kinetic_temperature`] for the identity
/// schedule and to `inv_beta` for schedules obeying the correction recursion.
pub fn predicted_kinetic_temperature_for(schedule: &TemperatureSchedule, inv_beta: f64) -> f64 {
    let c = schedule.coefficients();
    let l = schedule.substeps();
    let inner: f64 = c[1..l].iter().sum();
    inv_beta * (c[0] + 4.0 * inner + c[l]) / (4.0 * l as f64)
}

/// `Var p_l = K_eq + gamma dt inv_beta (l/L - 1)` for `1 <= l <= L`.
pub fn predicted_intermediate_variance(
    l: usize,
    substeps: usize,
    inv_beta: f64,
    gamma: f64,
    dt: f64,
) -> f64 {
    let k_eq = predicted_kinetic_temperature(substeps, inv_beta);
    k_eq + gamma * dt * inv_beta * (l as f64 / substeps as f64 - 1.0)
}

/// Solves `C_1 = 4 - C_0`, `C_l = 4 - 3 C_{l-1}` for `l >= 2`.
pub fn solve_schedule(substeps: usize, c0: f64) -> Result<TemperatureSchedule> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(Error::InfeasibleSchedule { index: 0, value: c0 });
    }
    let mut coefficients = Vec::with_capacity(substeps + 1);
    coefficients.push(c0);
    for l in 1..=substeps {
        let prev = coefficients[l - 1];
        let c = if l == 1 { 4.0 - prev } else { 4.0 - 3.0 * prev };
        if c <= 0.0 {
            return Err(Error::InfeasibleSchedule { index: l, value: c });
        }
        coefficients.push(c);
    }
    Ok(TemperatureSchedule { coefficients })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Pool momenta from every substep `l = 1..=L` of every window.
    #[default]
    AllSubsteps,
    /// Momenta at window ends only.
    WindowEnds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    pub k_eq_empirical: f64,
    pub k_eq_predicted: f64,
    /// `Var p_l` for `l = 1..=L`, averaged over components.
    pub per_substep_variance: Vec<f64>,
}

/// Settings for a long chained run that measures the kinetic temperature.
#[derive(Clone, Debug)]
pub struct TemperatureProtocol {
    pub n_windows: usize,
    pub master_seed: u64,
    pub sampling: Sampling,
    pub burn_in_fraction: f64,
    /// Starting state; defaults to the origin at rest.
    pub initial: Option<PhaseState>,
}

impl TemperatureProtocol {
    pub fn new(n_windows: usize, master_seed: u64) -> Self {
        TemperatureProtocol {
            n_windows,
            master_seed,
            sampling: Sampling::AllSubsteps,
            burn_in_fraction: 0.1,
            initial: None,
        }
    }

    pub fn sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn burn_in_fraction(mut self, fraction: f64) -> Self {
        self.burn_in_fraction = fraction;
        self
    }

    pub fn initial(mut self, state: PhaseState) -> Self {
        self.initial = Some(state);
        self
    }

    pub fn run(
        &self,
        pot: &Potential,
        params: &LangevinParams,
        schedule: &TemperatureSchedule,
    ) -> Result<TemperatureReport> {
        if self.n_windows == 0 {
            return Err(Error::InvalidParameter("n_windows must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidParameter(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        let burn_in = (self.burn_in_fraction * self.n_windows as f64).floor() as usize;
        if burn_in >= self.n_windows {
            return Err(Error::InvalidParameter("burn-in leaves no windows to sample".into()));
        }
        let d = params.dim();
        let l_total = params.substeps;
        let mut state = match &self.initial {
            Some(s) => s.clone(),
            None => PhaseState::at_rest(vec![0.0; d])?,
        };
        let mut acc = MomentAccumulator::new(l_total, d);
        let mut noise = Vec::with_capacity((l_total + 1) * d);
        for n in 1..=self.n_windows {
            noise.clear();
            fill_gaussian(derive_seed(self.master_seed, n as u64), &mut noise, (l_total + 1) * d);
            acc.active = n > burn_in;
            state = propagate_window_observed(&state, pot, params, schedule, &noise, &mut acc)
                .map_err(|e| e.in_window(n))?;
        }
        let per_substep_variance: Vec<f64> = (0..l_total)
            .map(|l| acc.variance(&params.mass, l..l + 1))
            .collect();
        let k_eq_empirical = match self.sampling {
            Sampling::AllSubsteps => acc.variance(&params.mass, 0..l_total),
            Sampling::WindowEnds => per_substep_variance[l_total - 1],
        };
        Ok(TemperatureReport {
            k_eq_empirical,
            k_eq_predicted: predicted_kinetic_temperature_for(schedule, params.inv_beta),
            per_substep_variance,
        })
    }
}

/// Chains `n_windows` windows and reports the equilibrium kinetic
/// temperature, with the default 10% burn-in and a start at rest at the
/// origin.
pub fn measure_kinetic_temperature(
    pot: &Potential,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    n_windows: usize,
    master_seed: u64,
    sampling: Sampling,
) -> Result<TemperatureReport> {
    TemperatureProtocol::new(n_windows, master_seed)
        .sampling(sampling)
        .run(pot, params, schedule)
}

/// Per-substep, per-component first and second momentum moments.
struct MomentAccumulator {
    d: usize,
    active: bool,
    count: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl MomentAccumulator {
    fn new(substeps: usize, d: usize) -> Self {
        MomentAccumulator {
            d,
            active: false,
            count: 0,
            sum: vec![0.0; substeps * d],
            sum_sq: vec![0.0; substeps * d],
        }
    }

    /// Mass-weighted variance pooled over `substeps`, averaged over components.
    fn variance(&self, mass: &[f64], substeps: std::ops::Range<usize>) -> f64 {
        let n = (self.count as f64) * substeps.len() as f64;
        let mut total = 0.0;
        for i in 0..self.d {
            let (mut s, mut s2) = (0.0, 0.0);
            for l in substeps.clone() {
                s += self.sum[l * self.d + i];
                s2 += self.sum_sq[l * self.d + i];
            }
            let mean = s / n;
            total += (s2 / n - mean * mean) / mass[i];
        }
        total / self.d as f64
    }
}

impl WindowObserver for MomentAccumulator {
    fn substep(&mut self, l: usize, _q: &[f64], p: &[f64]) {
        if !self.active {
            return;
        }
        if l == 1 {
            self.count += 1;
        }
        let base = (l - 1) * self.d;
        for (i, &x) in p.iter().enumerate() {
            self.sum[base + i] += x;
            self.sum_sq[base + i] += x * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_stream;

    fn params(gamma: f64, inv_beta: f64, dt: f64, l: usize, d: usize) -> LangevinParams {
        LangevinParams::new(gamma, inv_beta, dt, l, d).unwrap()
    }

    /// Independent transcription of the first substep for unit mass.
    fn first_step_oracle(
        q0: &[f64],
        p0: &[f64],
        grad: impl Fn(&[f64]) -> Vec<f64>,
        gamma: f64,
        inv_beta: f64,
        dt: f64,
        c: (f64, f64),
        g0: &[f64],
        g1: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s0 = (2.0 * gamma * c.0 * inv_beta * dt).sqrt() / 2.0;
        let s1 = (2.0 * gamma * c.1 * inv_beta * dt).sqrt() / 2.0;
        let f0 = grad(q0);
        let ph: Vec<f64> = (0..q0.len())
            .map(|i| p0[i] - dt / 2.0 * f0[i] - dt / 2.0 * gamma * p0[i] + s0 * g0[i])
            .collect();
        let q1: Vec<f64> = (0..q0.len()).map(|i| q0[i] + dt * ph[i]).collect();
        let f1 = grad(&q1);
        let p1: Vec<f64> = (0..q0.len())
            .map(|i| ph[i] - dt / 2.0 * f1[i] - dt / 2.0 * gamma * ph[i] + s1 * g1[i])
            .collect();
        (q1, p1, ph)
    }

    #[test]
    fn free_streaming_first_step() {
        let pr = params(0.0, 0.0, 0.1, 1, 2);
        let s = PhaseState::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let out = bbk_first_step(&s, &Potential::Free, &pr, 1.0, 1.0, &[0.7, -0.2], &[1.1, 0.4]).unwrap();
        assert_eq!(out.state.p(), s.p());
        assert_eq!(out.state.q(), &[1.0 + 0.1 * 0.5, -2.0 + 0.1 * 3.0]);
    }

    #[test]
    fn harmonic_first_step_hand_values() {
        let pr = params(0.0, 0.0, 0.1, 1, 1);
        let s = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let out = bbk_first_step(&s, &Potential::harmonic(vec![1.0]), &pr, 1.0, 1.0, &[0.0], &[0.0]).unwrap();
        assert!((out.p_half[0] + 0.05).abs() < 1e-15);
        assert!((out.state.q()[0] - 0.995).abs() < 1e-15);
        assert!((out.state.p()[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn first_step_matches_transcription() {
        let pr = params(1.0, 1.0, 0.05, 1, 3);
        let pot = Potential::double_well(vec![1.0, 0.5, 2.0], vec![1.0, 2.0, 0.3]);
        let q0 = [0.3, -1.1, 0.8];
        let p0 = [0.2, 0.0, -0.4];
        let g = [1.0, 1.0, 1.0];
        let s = PhaseState::new(q0.to_vec(), p0.to_vec()).unwrap();
        let out = bbk_first_step(&s, &pot, &pr, 1.0, 1.0, &g, &g).unwrap();
        let grad = |q: &[f64]| pot.gradient(q).unwrap();
        let (q1, p1, ph) = first_step_oracle(&q0, &p0, grad, 1.0, 1.0, 0.05, (1.0, 1.0), &g, &g);
        for i in 0..3 {
            assert!((out.state.q()[i] - q1[i]).abs() <= 1e-15 * q1[i].abs().max(1.0));
            assert!((out.state.p()[i] - p1[i]).abs() <= 1e-15 * p1[i].abs().max(1.0));
            assert!((out.p_half[i] - ph[i]).abs() <= 1e-15 * ph[i].abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_harmonic_window_matches_hand_recursion() {
        // two substeps of damped velocity Verlet, written out by hand
        let (gamma, dt, k) = (0.3, 0.1, 2.0);
        let pr = params(gamma, 0.0, dt, 2, 1);
        let pot = Potential::harmonic(vec![k]);
        let s = PhaseState::new(vec![1.0], vec![0.5]).unwrap();
        let out = propagate_window_with_noise(&s, &pot, &pr, &TemperatureSchedule::identity(2), &[0.0; 3]).unwrap();

        let h = dt / 2.0;
        let (q0, p0) = (1.0f64, 0.5f64);
        let ph1 = p0 - h * k * q0 - h * gamma * p0;
        let q1 = q0 + dt * ph1;
        let p1 = ph1 - h * k * q1 - h * gamma * ph1;
        let ph2 = p1 - h * k * q1 - h * gamma * ph1;
        let q2 = q1 + dt * ph2;
        let p2 = ph2 - h * k * q2 - h * gamma * ph2;
        assert!((out.q()[0] - q2).abs() < 1e-15);
        assert!((out.p()[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn window_equals_chained_steps_bitwise() {
        let pr = params(0.7, 0.4, 0.02, 4, 2);
        let pot = Potential::double_well(vec![1.0, 1.0], vec![1.0, 0.5]);
        let sched = TemperatureSchedule::from_coefficients(vec![1.5, 0.8, 1.2, 2.0, 0.9]).unwrap();
        let s = PhaseState::new(vec![0.9, -0.4], vec![0.1, 0.3]).unwrap();
        let noise = gaussian_stream(11, 10);
        let c = sched.coefficients();
        let blk = |l: usize| &noise[2 * l..2 * l + 2];
        let mut cur = bbk_first_step(&s, &pot, &pr, c[0], c[1], blk(0), blk(1)).unwrap();
        for l in 1..4 {
            cur = bbk_step(&cur, &pot, &pr, c[l], c[l + 1], blk(l), blk(l + 1)).unwrap();
        }
        let out = propagate_window_with_noise(&s, &pot, &pr, &sched, &noise).unwrap();
        assert_eq!(out, cur.state);
    }

    #[test]
    fn single_substep_window_is_first_step() {
        let pr = params(1.0, 2.0, 0.01, 1, 2);
        let pot = Potential::harmonic(vec![1.0, 3.0]);
        let s = PhaseState::new(vec![0.2, 0.1], vec![-1.0, 0.4]).unwrap();
        let seed = 77;
        let noise = gaussian_stream(seed, 4);
        let first = bbk_first_step(&s, &pot, &pr, 1.0, 1.0, &noise[..2], &noise[2..]).unwrap();
        let sched = TemperatureSchedule::identity(1);
        let out = propagate_window(&s, &pot, &pr, &sched, seed).unwrap();
        assert_eq!(out, first.state);
        assert_eq!(out, propagate_window(&s, &pot, &pr, &sched, seed).unwrap());
    }

    #[derive(Default)]
    struct KickLog(Vec<(usize, f64)>);

    impl WindowObserver for KickLog {
        fn kick(&mut self, block: usize, amplitude: f64) {
            self.0.push((block, amplitude));
        }
    }

    #[test]
    fn interior_blocks_are_used_twice_with_equal_amplitude() {
        let l_total = 5;
        let pr = params(1.0, 1.0, 0.01, l_total, 1);
        let sched = TemperatureSchedule::from_coefficients(vec![3.0, 1.0, 2.0, 0.5, 1.5, 1.0]).unwrap();
        let s = PhaseState::new(vec![0.0], vec![0.0]).unwrap();
        let mut log = KickLog::default();
        let noise = gaussian_stream(3, l_total + 1);
        propagate_window_observed(&s, &Potential::Free, &pr, &sched, &noise, &mut log).unwrap();
        assert_eq!(log.0.len(), 2 * l_total);
        for block in 0..=l_total {
            let uses: Vec<f64> = log.0.iter().filter(|(b, _)| *b == block).map(|(_, a)| *a).collect();
            let expected_uses = if block == 0 || block == l_total { 1 } else { 2 };
            assert_eq!(uses.len(), expected_uses, "block {block}");
            let amp = (2.0 * sched.coefficients()[block] * 0.01).sqrt() / 2.0;
            assert!(uses.iter().all(|a| (a - amp).abs() < 1e-15));
        }
    }

    #[test]
    fn identity_schedule_is_the_uncorrected_scheme() {
        // closed-form amplitude with C = 1 vs the schedule path
        let pr = params(0.5, 1.3, 0.05, 3, 2);
        let pot = Potential::harmonic(vec![1.0, 0.2]);
        let s = PhaseState::new(vec![0.4, 0.1], vec![0.0, -0.2]).unwrap();
        let noise = gaussian_stream(8, 8);
        let mut cur = bbk_first_step(&s, &pot, &pr, 1.0, 1.0, &noise[0..2], &noise[2..4]).unwrap();
        for l in 1..3 {
            cur = bbk_step(&cur, &pot, &pr, 1.0, 1.0, &noise[2 * l..2 * l + 2], &noise[2 * l + 2..2 * l + 4]).unwrap();
        }
        let out = propagate_window_with_noise(&s, &pot, &pr, &TemperatureSchedule::identity(3), &noise).unwrap();
        assert_eq!(out, cur.state);
    }

    #[test]
    fn blow_up_is_reported_with_substep() {
        let pr = params(0.0, 0.0, 1.0, 3, 1);
        let s = PhaseState::new(vec![0.0], vec![1e12]).unwrap();
        let err = propagate_window_with_noise(&s, &Potential::Free, &pr, &TemperatureSchedule::identity(3), &[0.0; 4])
            .unwrap_err();
        match err {
            // q reaches 1e12 after one drift and exceeds it after the second
            Error::BlowUp(site) => assert_eq!(site.substep, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn kinetic_temperature_predictions() {
        assert_eq!(predicted_kinetic_temperature(1, 300.0), 150.0);
        assert_eq!(predicted_kinetic_temperature(10, 300.0), 285.0);
        assert!((predicted_kinetic_temperature(1_000_000, 300.0) - 300.0).abs() < 1e-3);
        assert_eq!(predicted_intermediate_variance(10, 10, 300.0, 1.0, 0.5), 285.0);
        // gamma dt inv_beta = 0.1, l = L/2
        assert!((predicted_intermediate_variance(5, 10, 1.0, 1.0, 0.1) - (0.95 - 0.05)).abs() < 1e-15);
        let worst = (1..=10)
            .map(|l| (predicted_intermediate_variance(l, 10, 300.0, 1e-3, 0.5) - 285.0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.15, "{worst}");
        let robust = TemperatureSchedule::robust(10);
        assert!((predicted_kinetic_temperature_for(&robust, 300.0) - 300.0).abs() < 1e-12);
        assert_eq!(predicted_kinetic_temperature_for(&TemperatureSchedule::flat2(), 300.0), 300.0);
        assert!((predicted_kinetic_temperature_for(&TemperatureSchedule::identity(10), 300.0) - 285.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_solver_examples() {
        for l in 1..=20 {
            let s = solve_schedule(l, 3.0).unwrap();
            assert_eq!(s, TemperatureSchedule::robust(l));
        }
        assert_eq!(solve_schedule(1, 2.0).unwrap(), TemperatureSchedule::flat2());
        match solve_schedule(3, 2.0) {
            Err(Error::InfeasibleSchedule { index, value }) => {
                assert_eq!(index, 2);
                assert_eq!(value, -2.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(solve_schedule(2, 0.0).is_err());
    }

    /// Exact free-particle propagation of momentum variances through one
    /// window: `Var h_1 = mu^2 V_0 + theta`, `Var p_l = mu^2 Var h_l + theta`,
    /// `Var h_{l+1} = (1 - gamma dt)^2 Var h_l + 4 theta`.
    fn free_variances(v0: f64, theta: f64, mu: f64, gdt: f64, l_total: usize) -> Vec<f64> {
        let mut vh = mu * mu * v0 + theta;
        let mut out = vec![mu * mu * vh + theta];
        for _ in 1..l_total {
            vh = (1.0 - gdt) * (1.0 - gdt) * vh + 4.0 * theta;
            out.push(mu * mu * vh + theta);
        }
        out
    }

    #[test]
    fn free_particle_variance_recursion() {
        let (gamma, inv_beta, dt, l_total, d) = (0.5, 1.0, 0.1, 4, 64);
        let pr = params(gamma, inv_beta, dt, l_total, d);
        let n_windows = 40_000;
        let report = TemperatureProtocol::new(n_windows, 2024)
            .sampling(Sampling::WindowEnds)
            .run(&Potential::Free, &pr, &TemperatureSchedule::identity(l_total))
            .unwrap();

        let a = AnalyticCoefficients::new(&pr);
        let mut v = inv_beta;
        for _ in 0..10_000 {
            v = *free_variances(v, a.theta, a.mu, gamma * dt, l_total).last().unwrap();
        }
        let predicted = free_variances(v, a.theta, a.mu, gamma * dt, l_total);
        assert_eq!(report.k_eq_empirical, report.per_substep_variance[l_total - 1]);
        // integrated autocorrelation of p^2 spans about 1 / (2 L gamma dt) windows
        let tau = 1.0 / (2.0 * l_total as f64 * gamma * dt);
        let samples = 0.9 * n_windows as f64 * d as f64;
        for (l, (emp, pred)) in report.per_substep_variance.iter().zip(&predicted).enumerate() {
            let sigma = pred * (2.0 * (1.0 + 2.0 * tau) / samples).sqrt();
            assert!((emp - pred).abs() < 4.0 * sigma, "l={} emp={emp} pred={pred}", l + 1);
        }
        // the substep profile is resolved: the stages really differ
        assert!(predicted[l_total - 1] - predicted[0] > 10.0 * pred_sigma(&predicted, samples, tau));
    }

    fn pred_sigma(predicted: &[f64], samples: f64, tau: f64) -> f64 {
        predicted[0] * (2.0 * (1.0 + 2.0 * tau) / samples).sqrt()
    }

    #[test]
    fn verlet_limit_conserves_harmonic_energy() {
        let omega: f64 = 2.0;
        let dt = 0.01 / omega;
        let pr = params(0.0, 0.0, dt, 1, 1);
        let pot = Potential::harmonic(vec![omega * omega]);
        let sched = TemperatureSchedule::identity(1);
        let mut s = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        let energy = |s: &PhaseState| 0.5 * s.p()[0] * s.p()[0] + pot.energy(s.q()).unwrap();
        let e0 = energy(&s);
        let steps = 10_000;
        let mut energies = Vec::with_capacity(steps);
        for _ in 0..steps {
            s = propagate_window_with_noise(&s, &pot, &pr, &sched, &[0.0, 0.0]).unwrap();
            energies.push(energy(&s));
        }
        // pointwise error oscillates at O((omega dt)^2), bounded and drift-free
        let pointwise = energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max);
        assert!(pointwise < 0.5 * (omega * dt).powi(2), "{pointwise}");
        let period = (std::f64::consts::PI / (omega * dt)).round() as usize;
        let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
        let drift = (mean(&energies[steps - period..]) - mean(&energies[..period])).abs() / e0;
        assert!(drift < 1e-6, "{drift}");
    }
}
