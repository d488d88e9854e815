//! Phase-space states, Langevin parameters and coarse-node trajectories.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions and momenta of the whole system at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhaseState")]
pub struct PhaseState {
    q: Vec<f64>,
    p: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPhaseState {
    q: Vec<f64>,
    p: Vec<f64>,
}

impl TryFrom<RawPhaseState> for PhaseState {
    type Error = Error;

    fn try_from(raw: RawPhaseState) -> Result<Self> {
        PhaseState::new(raw.q, raw.p)
    }
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidParameter(
                "phase state needs dimension d >= 1".into(),
            ));
        }
        if q.len() != p.len() {
            return Err(Error::Dimension {
                what: "momenta",
                expected: q.len(),
                found: p.len(),
            });
        }
        if !q.iter().chain(&p).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("phase state"));
        }
        Ok(PhaseState { q, p })
    }

    /// A state with the given positions and zero momenta.
    pub fn at_rest(q: Vec<f64>) -> Result<Self> {
        let p = vec![0.0; q.len()];
        PhaseState::new(q, p)
    }

    /// Callers guarantee equal lengths and finite entries.
    pub(crate) fn from_parts(q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        PhaseState { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.q, self.p)
    }

    /// Componentwise `self - other`, used for parareal jumps.
    pub fn difference(&self, other: &PhaseState) -> Result<PhaseState> {
        self.check_dim(other)?;
        let q = self.q.iter().zip(&other.q).map(|(a, b)| a - b).collect();
        let p = self.p.iter().zip(&other.p).map(|(a, b)| a - b).collect();
        Ok(PhaseState { q, p })
    }

    /// Componentwise `self + jump`; rejects non-finite sums.
    pub fn corrected(&self, jump: &PhaseState) -> Result<PhaseState> {
        self.check_dim(jump)?;
        let q: Vec<f64> = self.q.iter().zip(&jump.q).map(|(a, b)| a + b).collect();
        let p: Vec<f64> = self.p.iter().zip(&jump.p).map(|(a, b)| a + b).collect();
        if !q.iter().chain(&p).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("parareal correction"));
        }
        Ok(PhaseState { q, p })
    }

    fn check_dim(&self, other: &PhaseState) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                what: "phase state",
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// Euclidean norm over all components.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Physical and discretization parameters of the Langevin integrator.
///
/// The window length `L * dt` is always derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub gamma: f64,
    pub inv_beta: f64,
    pub dt: f64,
    pub substeps: usize,
    pub mass: Vec<f64>,
}

impl LangevinParams {
    /// Unit masses in dimension `dim`.
    pub fn new(gamma: f64, inv_beta: f64, dt: f64, substeps: usize, dim: usize) -> Result<Self> {
        Self::with_mass(gamma, inv_beta, dt, substeps, vec![1.0; dim])
    }

    pub fn with_mass(
        gamma: f64,
        inv_beta: f64,
        dt: f64,
        substeps: usize,
        mass: Vec<f64>,
    ) -> Result<Self> {
        let params = LangevinParams {
            gamma,
            inv_beta,
            dt,
            substeps,
            mass,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.inv_beta.is_finite() && self.inv_beta >= 0.0) {
            return bad(format!("inv_beta must be finite and >= 0, got {}", self.inv_beta));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if self.gamma * self.dt >= 2.0 {
            return bad(format!(
                "gamma * dt = {} violates the damping stability bound gamma * dt < 2",
                self.gamma * self.dt
            ));
        }
        if self.mass.is_empty() {
            return bad("mass vector must have dimension >= 1".into());
        }
        if !self.mass.iter().all(|m| m.is_finite() && *m > 0.0) {
            return bad("masses must be finite and > 0".into());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// Coarse time step `L * dt`.
    pub fn window_length(&self) -> f64 {
        self.substeps as f64 * self.dt
    }
}

/// States at the coarse nodes `t_n = n * window_length`, `n = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTrajectory {
    states: Vec<PhaseState>,
}

impl NodeTrajectory {
    pub fn new(states: Vec<PhaseState>) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::InvalidParameter(
                "trajectory needs at least the initial node".into(),
            ));
        };
        let d = first.dim();
        if let Some(bad) = states.iter().find(|s| s.dim() != d) {
            return Err(Error::Dimension {
                what: "trajectory node",
                expected: d,
                found: bad.dim(),
            });
        }
        Ok(NodeTrajectory { states })
    }

    pub fn initial(state: PhaseState) -> Self {
        NodeTrajectory {
            states: vec![state],
        }
    }

    /// Number of windows N; the trajectory holds N + 1 nodes.
    pub fn n_windows(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.states
    }

    pub fn node(&self, n: usize) -> Option<&PhaseState> {
        self.states.get(n)
    }

    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn into_states(self) -> Vec<PhaseState> {
        self.states
    }

    pub(crate) fn push(&mut self, state: PhaseState) {
        self.states.push(state);
    }

    /// Nodes `n_init..=n_final`, re-indexed from zero.
    pub fn slice(&self, n_init: usize, n_final: usize) -> Result<NodeTrajectory> {
        if n_init > n_final || n_final >= self.states.len() {
            return Err(Error::Range {
                n_init,
                n_final,
                len: self.states.len(),
            });
        }
        Ok(NodeTrajectory {
            states: self.states[n_init..=n_final].to_vec(),
        })
    }

    /// Appends `next`, whose first node must coincide with our last one.
    pub fn concat(&self, next: &NodeTrajectory) -> Result<NodeTrajectory> {
        if next.dim() != self.dim() {
            return Err(Error::Dimension {
                what: "trajectory node",
                expected: self.dim(),
                found: next.dim(),
            });
        }
        if next.states[0] != *self.last() {
            return Err(Error::InvalidParameter(
                "concatenated trajectories must share the junction node".into(),
            ));
        }
        let mut states = self.states.clone();
        states.extend_from_slice(&next.states[1..]);
        Ok(NodeTrajectory { states })
    }

    /// Writes `n,t,q_0..q_{d-1},p_0..p_{d-1}` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, window_length: f64) -> Result<()> {
        let d = self.dim();
        let mut header = String::from("n,t");
        for i in 0..d {
            header.push_str(&format!(",q_{i}"));
        }
        for i in 0..d {
            header.push_str(&format!(",p_{i}"));
        }
        writeln!(out, "{header}")?;
        for (n, s) in self.states.iter().enumerate() {
            let mut row = format!("{n},{:.16e}", n as f64 * window_length);
            for x in s.q.iter().chain(&s.p) {
                row.push_str(&format!(",{x:.16e}"));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<NodeTrajectory> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty trajectory file".into()))??;
        let columns = header.split(',').count();
        if columns < 4 || (columns - 2) % 2 != 0 || !header.starts_with("n,t,") {
            return Err(Error::Csv(format!("unexpected trajectory header: {header}")));
        }
        let d = (columns - 2) / 2;
        let mut states = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Csv(format!("row {}: {e}", row + 2)))?;
            if values.len() != 2 * d {
                return Err(Error::Csv(format!(
                    "row {}: expected {} state columns, found {}",
                    row + 2,
                    2 * d,
                    values.len()
                )));
            }
            states.push(PhaseState::new(values[..d].to_vec(), values[d..].to_vec())?);
        }
        NodeTrajectory::new(states)
    }
}
