//! Residence-time ensembles over independent members.
//!
//! Every member is minimized, thermalized with sequential fine windows and
//! then integrated over one segment, sequentially or with parareal. Member
//! `m` draws its noise from plans seeded by `derive_seed(master, m + 1)`, so
//! members are independent and the outcome does not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::accounting::{adaptive_gain, GainReport};
use crate::analysis::{residence_times, BasinCatalog, Residence, ResidenceStats};
use crate::error::{Error, Result};
use crate::integrator::TemperatureSchedule;
use crate::model::{LangevinParams, NodeTrajectory, PhaseState};
use crate::parareal::{
    sequential_propagate, LangevinPropagator, Parareal, PararealConfig, SlabRecord,
};
use crate::potentials::{minimize, PropagatorPair};
use crate::rng::{derive_seed, NoisePlan};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EnsembleMode {
    FineSequential,
    CoarseSequential,
    Classic { delta_conv: f64 },
    Adaptive { delta_conv: f64, delta_expl: f64 },
}

impl EnsembleMode {
    pub fn label(&self) -> String {
        match self {
            EnsembleMode::FineSequential => "fine".into(),
            EnsembleMode::CoarseSequential => "coarse".into(),
            EnsembleMode::Classic { delta_conv } => format!("classic_{delta_conv:e}"),
            EnsembleMode::Adaptive { delta_conv, .. } => format!("adaptive_{delta_conv:e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    pub segment_windows: usize,
    pub equilibration_windows: usize,
    pub master_seed: u64,
    /// Starting configuration, minimized on the fine potential before
    /// thermalization.
    pub start: Vec<f64>,
    pub minimize_tol: f64,
    /// Minimum run length passed to the debounce filter; 1 disables it.
    #[serde(default = "one")]
    pub debounce: usize,
}

fn one() -> usize {
    1
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 || self.segment_windows == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs at least one member and one segment window".into(),
            ));
        }
        if !(self.minimize_tol.is_finite() && self.minimize_tol > 0.0) {
            return Err(Error::InvalidParameter("minimize_tol must be > 0".into()));
        }
        Ok(())
    }

    pub fn member_seed(&self, member: usize) -> u64 {
        derive_seed(self.master_seed, member as u64 + 1)
    }

    /// Noise for thermalization and for the measured segment.
    pub fn member_plans(&self, member: usize) -> (NoisePlan, NoisePlan) {
        let seed = self.member_seed(member);
        (
            NoisePlan::new(derive_seed(seed, 1), self.equilibration_windows),
            NoisePlan::new(derive_seed(seed, 2), self.segment_windows),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub member: usize,
    pub residences: Vec<Residence>,
    pub slabs: Option<Vec<SlabRecord>>,
    pub gain: Option<GainReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub mode: EnsembleMode,
    pub stats: ResidenceStats,
    pub members: Vec<MemberOutcome>,
}

impl EnsembleReport {
    /// Mean of the per-member gains, if members ran parareal.
    pub fn mean_gain(&self) -> Option<f64> {
        let gains: Vec<f64> = self.members.iter().filter_map(|m| m.gain.map(|g| g.gain)).collect();
        (!gains.is_empty()).then(|| gains.iter().sum::<f64>() / gains.len() as f64)
    }
}

/// Thermalized starting state of a member.
pub fn equilibrate(
    pair: &PropagatorPair,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    spec: &EnsembleSpec,
    plan: &NoisePlan,
) -> Result<PhaseState> {
    let q = minimize(&pair.fine, &spec.start, spec.minimize_tol)?;
    let state = PhaseState::at_rest(q)?;
    let traj = sequential_propagate(&state, plan.n_windows(), &pair.fine, params, schedule, plan)?;
    Ok(traj.last().clone())
}

/// Segment trajectory of one member, plus its slab records for parareal modes.
pub fn run_member(
    pair: &PropagatorPair,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    spec: &EnsembleSpec,
    mode: EnsembleMode,
    member: usize,
) -> Result<(NodeTrajectory, Option<Vec<SlabRecord>>)> {
    let (equil, plan) = spec.member_plans(member);
    let start = equilibrate(pair, params, schedule, spec, &equil)?;
    let n = spec.segment_windows;
    let coarse = LangevinPropagator::new(&pair.coarse, params, schedule, &plan);
    let fine = LangevinPropagator::new(&pair.fine, params, schedule, &plan);
    let solver = Parareal::new(coarse, fine);
    let outcome = match mode {
        EnsembleMode::FineSequential => {
            (sequential_propagate(&start, n, &pair.fine, params, schedule, &plan)?, None)
        }
        EnsembleMode::CoarseSequential => {
            (sequential_propagate(&start, n, &pair.coarse, params, schedule, &plan)?, None)
        }
        EnsembleMode::Classic { delta_conv } => {
            let res = solver.classic(&start, &PararealConfig::classic(n, delta_conv))?;
            (res.trajectory, Some(res.slabs))
        }
        EnsembleMode::Adaptive {
            delta_conv,
            delta_expl,
        } => {
            let res = solver.adaptive(&start, &PararealConfig::adaptive(n, delta_conv, delta_expl))?;
            (res.trajectory, Some(res.slabs))
        }
    };
    Ok(outcome)
}

/// Runs all members, on `pool` when given, and pools their residences.
pub fn run_ensemble(
    pair: &PropagatorPair,
    params: &LangevinParams,
    schedule: &TemperatureSchedule,
    catalog: &BasinCatalog,
    spec: &EnsembleSpec,
    mode: EnsembleMode,
    pool: Option<&rayon::ThreadPool>,
) -> Result<EnsembleReport> {
    use rayon::prelude::*;
    spec.validate()?;
    let member = |m: usize| -> Result<MemberOutcome> {
        let (traj, slabs) = run_member(pair, params, schedule, spec, mode, m)?;
        let labels = crate::analysis::debounce(&catalog.label_trajectory(&traj), spec.debounce);
        let gain = match &slabs {
            Some(s) => Some(adaptive_gain(s, spec.segment_windows, pair.cost_fine, pair.cost_coarse)?),
            None => None,
        };
        Ok(MemberOutcome {
            member: m,
            residences: residence_times(&labels),
            slabs,
            gain,
        })
    };
    let results: Vec<Result<MemberOutcome>> = match pool {
        Some(pool) => pool.install(|| (0..spec.members).into_par_iter().map(member).collect()),
        None => (0..spec.members).map(member).collect(),
    };
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    let stats = ResidenceStats::from_runs(members.iter().map(|m| m.residences.as_slice()))?;
    Ok(EnsembleReport {
        mode,
        stats,
        members,
    })
}
