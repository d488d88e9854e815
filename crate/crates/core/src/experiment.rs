//! Experiment configuration and runner behind the `pararealmd` binary.
//!
//! A TOML file names the experiment, the potentials, integrator settings and
//! the protocol-specific sections. Validation reports every problem at once
//! with its line number. Runs write result files that depend only on the
//! configuration and seed, plus a `manifest.json` holding timestamps, the
//! resolved configuration and the list of outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::accounting::{adaptive_gain, write_gain_table, GainReport, GainRow};
use crate::analysis::{compare_ensembles, BasinCatalog, Comparison};
use crate::ensemble::{run_ensemble, EnsembleMode, EnsembleReport, EnsembleSpec};
use crate::error::{Error, Result};
use crate::integrator::{solve_schedule, Sampling, TemperatureProtocol, TemperatureReport, TemperatureSchedule};
use crate::model::{LangevinParams, NodeTrajectory, PhaseState};
use crate::parareal::{
    sequential_propagate, LangevinPropagator, Parareal, PararealConfig, PararealResult,
};
use crate::potentials::{minimize, Potential, PropagatorPair};
use crate::rng::NoisePlan;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Temperature,
    Sequential,
    PararealClassic,
    PararealAdaptive,
    GainSweep,
    Ensemble,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Temperature,
        ExperimentKind::Sequential,
        ExperimentKind::PararealClassic,
        ExperimentKind::PararealAdaptive,
        ExperimentKind::GainSweep,
        ExperimentKind::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Temperature => "temperature",
            ExperimentKind::Sequential => "sequential",
            ExperimentKind::PararealClassic => "parareal_classic",
            ExperimentKind::PararealAdaptive => "parareal_adaptive",
            ExperimentKind::GainSweep => "gain_sweep",
            ExperimentKind::Ensemble => "ensemble",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One configuration problem, located by line when possible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialSpec {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// Minimize the fine potential from `q` before starting.
    pub minimize: bool,
    pub minimize_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemperatureSpec {
    pub n_windows: usize,
    pub sampling: Sampling,
    pub burn_in_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSpec {
    pub dt: Vec<f64>,
    pub delta_conv: Vec<f64>,
    pub delta_expl: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleSection {
    pub members: usize,
    pub segment_windows: usize,
    pub equilibration_windows: usize,
    pub minimize_tol: f64,
    pub debounce: usize,
    pub include_fine: bool,
    pub include_coarse: bool,
    /// Adaptive parareal ensembles, one per threshold.
    pub delta_conv: Vec<f64>,
    pub delta_expl: f64,
    pub basins: Vec<Vec<f64>>,
    pub basin_starts: Vec<Vec<f64>>,
    pub histogram_bin: usize,
}

/// A fully validated experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub pair: PropagatorPair,
    pub params: LangevinParams,
    pub schedule: TemperatureSchedule,
    pub initial: InitialSpec,
    pub parareal: Option<PararealConfig>,
    pub temperature: Option<TemperatureSpec>,
    pub sweep: Option<SweepSpec>,
    pub ensemble: Option<EnsembleSection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Spanned<String>>,
    master_seed: Option<Spanned<SeedRepr>>,
    output_dir: Option<String>,
    #[serde(default)]
    potentials: BTreeMap<String, Spanned<RawPotential>>,
    pair: Option<Spanned<RawPair>>,
    langevin: Option<Spanned<RawLangevin>>,
    schedule: Option<Spanned<RawSchedule>>,
    initial: Option<Spanned<RawInitial>>,
    parareal: Option<Spanned<RawParareal>>,
    temperature: Option<Spanned<RawTemperature>>,
    sweep: Option<Spanned<RawSweep>>,
    ensemble: Option<Spanned<RawEnsemble>>,
}

/// TOML integers stop at `i64::MAX`; larger seeds are written as strings.
#[derive(Deserialize)]
#[serde(untagged)]
enum SeedRepr {
    Int(i64),
    Text(String),
}

#[derive(Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawPotential {
    Free,
    Harmonic {
        k: Vec<f64>,
    },
    DoubleWell {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    LennardJones {
        epsilon: f64,
        sigma: f64,
        n_atoms: usize,
        space_dim: usize,
    },
    Perturbed {
        base: PotentialRef,
        delta: PotentialRef,
        lambda: f64,
    },
}

#[derive(Clone, Deserialize)]
#[serde(untagged)]
enum PotentialRef {
    Name(String),
    Inline(Box<RawPotential>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    fine: Option<Spanned<String>>,
    coarse: Option<Spanned<String>>,
    cost_ratio: Option<Spanned<f64>>,
    cost_fine: Option<Spanned<f64>>,
    cost_coarse: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLangevin {
    gamma: Option<Spanned<f64>>,
    inv_beta: Option<Spanned<f64>>,
    dt: Option<Spanned<f64>>,
    substeps: Option<Spanned<i64>>,
    mass: Option<Spanned<Vec<f64>>>,
    dim: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    kind: Option<Spanned<String>>,
    c0: Option<Spanned<f64>>,
    coefficients: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    q: Option<Spanned<Vec<f64>>>,
    p: Option<Spanned<Vec<f64>>>,
    minimize: Option<bool>,
    minimize_tol: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParareal {
    n_windows: Option<Spanned<i64>>,
    delta_conv: Option<Spanned<f64>>,
    delta_expl: Option<Spanned<f64>>,
    k_max: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemperature {
    n_windows: Option<Spanned<i64>>,
    sampling: Option<Sampling>,
    burn_in_fraction: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    dt: Option<Spanned<Vec<f64>>>,
    delta_conv: Option<Spanned<Vec<f64>>>,
    delta_expl: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    members: Option<Spanned<i64>>,
    segment_windows: Option<Spanned<i64>>,
    equilibration_windows: Option<Spanned<i64>>,
    minimize_tol: Option<Spanned<f64>>,
    debounce: Option<Spanned<i64>>,
    include_fine: Option<bool>,
    include_coarse: Option<bool>,
    delta_conv: Option<Spanned<Vec<f64>>>,
    delta_expl: Option<Spanned<f64>>,
    basins: Option<Spanned<Vec<Vec<f64>>>>,
    basin_starts: Option<Spanned<Vec<Vec<f64>>>>,
    histogram_bin: Option<Spanned<i64>>,
}

/// Error collector that turns byte spans into line numbers.
struct Checker<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl<'a> Checker<'a> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn at(&mut self, span: Option<Range<usize>>, field: &str, message: impl Into<String>) {
        let line = span.map(|s| self.line(s));
        self.errors.push(ConfigError {
            line,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn missing(&mut self, span: Option<Range<usize>>, field: &str) {
        self.at(span, field, "missing required field");
    }

    fn required<T: Clone>(&mut self, v: &Option<Spanned<T>>, parent: Option<Range<usize>>, field: &str) -> Option<T> {
        match v {
            Some(s) => Some(s.get_ref().clone()),
            None => {
                self.missing(parent, field);
                None
            }
        }
    }

    fn positive_f64(&mut self, v: &Option<Spanned<f64>>, field: &str) -> Option<f64> {
        let s = v.as_ref()?;
        let x = *s.get_ref();
        if x.is_finite() && x > 0.0 {
            Some(x)
        } else {
            self.at(Some(s.span()), field, format!("must be finite and > 0, got {x}"));
            None
        }
    }

    fn count(&mut self, v: &Option<Spanned<i64>>, field: &str, min: i64) -> Option<usize> {
        let s = v.as_ref()?;
        let x = *s.get_ref();
        if x >= min {
            Some(x as usize)
        } else {
            self.at(Some(s.span()), field, format!("must be >= {min}, got {x}"));
            None
        }
    }
}

fn span_of<T>(v: &Option<Spanned<T>>) -> Option<Range<usize>> {
    v.as_ref().map(|s| s.span())
}

fn parse_seed(s: &str) -> Option<u64> {
    let t = s.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => t.replace('_', "").parse().ok(),
    }
}

fn resolve_potential(
    name: &str,
    table: &BTreeMap<String, Spanned<RawPotential>>,
    stack: &mut Vec<String>,
) -> std::result::Result<Potential, String> {
    if stack.iter().any(|s| s == name) {
        return Err(format!("reference cycle {} -> {name}", stack.join(" -> ")));
    }
    let raw = table
        .get(name)
        .ok_or_else(|| format!("unknown potential '{name}'"))?
        .get_ref()
        .clone();
    stack.push(name.to_string());
    let out = build_potential(&raw, table, stack);
    stack.pop();
    out
}

fn build_potential(
    raw: &RawPotential,
    table: &BTreeMap<String, Spanned<RawPotential>>,
    stack: &mut Vec<String>,
) -> std::result::Result<Potential, String> {
    let resolve = |r: &PotentialRef, stack: &mut Vec<String>| match r {
        PotentialRef::Name(n) => resolve_potential(n, table, stack),
        PotentialRef::Inline(p) => build_potential(p, table, stack),
    };
    let pot = match raw {
        RawPotential::Free => Potential::Free,
        RawPotential::Harmonic { k } => Potential::harmonic(k.clone()),
        RawPotential::DoubleWell { a, b } => Potential::double_well(a.clone(), b.clone()),
        RawPotential::LennardJones {
            epsilon,
            sigma,
            n_atoms,
            space_dim,
        } => Potential::lennard_jones(*epsilon, *sigma, *n_atoms, *space_dim),
        RawPotential::Perturbed { base, delta, lambda } => {
            let base = resolve(base, stack)?;
            let delta = resolve(delta, stack)?;
            Potential::perturbed(base, delta, *lambda)
        }
    };
    pot.validate(None).map_err(|e| e.to_string())?;
    Ok(pot)
}

/// Parses and validates a configuration; `experiment` overrides the file's
/// `experiment` field.
pub fn parse_config(text: &str, experiment: Option<ExperimentKind>) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1);
        ConfigErrors(vec![ConfigError {
            line,
            field: "toml".into(),
            message: e.message().to_string(),
        }])
    })?;
    let mut ck = Checker {
        text,
        errors: Vec::new(),
    };

    let kind = match (experiment, &raw.experiment) {
        (Some(k), _) => Some(k),
        (None, Some(s)) => {
            let k = ExperimentKind::from_name(s.get_ref());
            if k.is_none() {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                ck.at(Some(s.span()), "experiment", format!("unknown experiment '{}', expected one of {}", s.get_ref(), names.join(", ")));
            }
            k
        }
        (None, None) => {
            ck.missing(None, "experiment");
            None
        }
    };

    let master_seed = match &raw.master_seed {
        None => {
            ck.missing(None, "master_seed");
            None
        }
        Some(s) => match s.get_ref() {
            SeedRepr::Int(i) if *i >= 0 => Some(*i as u64),
            SeedRepr::Int(i) => {
                ck.at(Some(s.span()), "master_seed", format!("must be >= 0, got {i}; write larger seeds as strings"));
                None
            }
            SeedRepr::Text(t) => {
                let v = parse_seed(t);
                if v.is_none() {
                    ck.at(Some(s.span()), "master_seed", format!("'{t}' is not an unsigned 64-bit integer"));
                }
                v
            }
        },
    };

    // potentials
    let mut fine = None;
    let mut coarse = None;
    let mut pair_costs = (None, None, None);
    match &raw.pair {
        None => ck.missing(None, "pair"),
        Some(p) => {
            let pspan = Some(p.span());
            let p = p.get_ref();
            let lookup = |ck: &mut Checker, name: &Spanned<String>, field: &str| {
                match resolve_potential(name.get_ref(), &raw.potentials, &mut Vec::new()) {
                    Ok(pot) => Some(pot),
                    Err(msg) => {
                        let span = raw.potentials.get(name.get_ref()).map(|s| s.span()).unwrap_or(name.span());
                        ck.at(Some(span), field, msg);
                        None
                    }
                }
            };
            match &p.fine {
                Some(name) => fine = lookup(&mut ck, name, "pair.fine"),
                None => ck.missing(pspan.clone(), "pair.fine"),
            }
            if let Some(name) = &p.coarse {
                coarse = lookup(&mut ck, name, "pair.coarse");
            }
            pair_costs = (
                ck.positive_f64(&p.cost_ratio, "pair.cost_ratio"),
                ck.positive_f64(&p.cost_fine, "pair.cost_fine"),
                ck.positive_f64(&p.cost_coarse, "pair.cost_coarse"),
            );
            if p.cost_ratio.is_some() && (p.cost_fine.is_some() || p.cost_coarse.is_some()) {
                ck.at(span_of(&p.cost_ratio), "pair.cost_ratio", "give either cost_ratio or cost_fine and cost_coarse");
            }
            if p.cost_fine.is_some() != p.cost_coarse.is_some() {
                ck.at(pspan.clone(), "pair", "cost_fine and cost_coarse must be given together");
            }
            if let (Some(r), true) = (pair_costs.0, p.cost_ratio.is_some()) {
                if r < 1.0 {
                    ck.at(span_of(&p.cost_ratio), "pair.cost_ratio", format!("must be >= 1, got {r}"));
                }
            }
            if p.coarse.is_none() && matches!(kind, Some(ExperimentKind::PararealClassic | ExperimentKind::PararealAdaptive | ExperimentKind::GainSweep | ExperimentKind::Ensemble)) {
                ck.missing(pspan, "pair.coarse");
            }
        }
    }

    // initial state
    let (mut init_q, mut init_p, mut init_min, mut init_tol) = (None, None, false, 1e-10);
    if let Some(init) = &raw.initial {
        let i = init.get_ref();
        init_q = i.q.as_ref().map(|q| q.get_ref().clone());
        init_p = i.p.as_ref().map(|p| p.get_ref().clone());
        init_min = i.minimize.unwrap_or(false);
        if let Some(t) = ck.positive_f64(&i.minimize_tol, "initial.minimize_tol") {
            init_tol = t;
        }
        if let (Some(q), Some(p)) = (&init_q, &init_p) {
            if q.len() != p.len() {
                ck.at(span_of(&i.p), "initial.p", format!("has {} components, initial.q has {}", p.len(), q.len()));
            }
        }
        if init_q.is_none() && (init_p.is_some() || init_min) {
            ck.missing(Some(init.span()), "initial.q");
        }
    }

    // integrator
    let mut params = None;
    match &raw.langevin {
        None => ck.missing(None, "langevin"),
        Some(l) => {
            let lspan = Some(l.span());
            let l = l.get_ref();
            let gamma = ck.required(&l.gamma, lspan.clone(), "langevin.gamma");
            let inv_beta = ck.required(&l.inv_beta, lspan.clone(), "langevin.inv_beta");
            let dt = ck.required(&l.dt, lspan.clone(), "langevin.dt");
            let substeps = ck.required(&l.substeps, lspan.clone(), "langevin.substeps");
            let mut ok = true;
            if let Some(g) = gamma {
                if !(g.is_finite() && g >= 0.0) {
                    ck.at(span_of(&l.gamma), "langevin.gamma", format!("must be finite and >= 0, got {g}"));
                    ok = false;
                }
            }
            if let Some(b) = inv_beta {
                if !(b.is_finite() && b >= 0.0) {
                    ck.at(span_of(&l.inv_beta), "langevin.inv_beta", format!("must be finite and >= 0, got {b}"));
                    ok = false;
                }
            }
            if let Some(x) = dt {
                if !(x.is_finite() && x > 0.0) {
                    ck.at(span_of(&l.dt), "langevin.dt", format!("must be finite and > 0, got {x}"));
                    ok = false;
                }
            }
            if let (Some(g), Some(x)) = (gamma, dt) {
                if ok && g * x >= 2.0 {
                    ck.at(span_of(&l.dt), "langevin.dt", format!("gamma * dt = {} must be < 2", g * x));
                    ok = false;
                }
            }
            if let Some(s) = substeps {
                if s < 1 {
                    ck.at(span_of(&l.substeps), "langevin.substeps", format!("must be >= 1, got {s}"));
                    ok = false;
                }
            }
            let dim_hint = ck.count(&l.dim, "langevin.dim", 1);
            let required = fine.as_ref().and_then(Potential::required_dim);
            let mass = match (&l.mass, dim_hint, &init_q, required) {
                (Some(m), ..) => {
                    if !m.get_ref().iter().all(|x| x.is_finite() && *x > 0.0) || m.get_ref().is_empty() {
                        ck.at(Some(m.span()), "langevin.mass", "masses must be finite and > 0");
                        ok = false;
                    }
                    Some(m.get_ref().clone())
                }
                (None, Some(d), ..) => Some(vec![1.0; d]),
                (None, None, Some(q), _) => Some(vec![1.0; q.len()]),
                (None, None, None, Some(d)) => Some(vec![1.0; d]),
                _ => {
                    ck.at(lspan.clone(), "langevin.mass", "cannot infer the dimension; give langevin.mass, langevin.dim or initial.q");
                    None
                }
            };
            if let Some(m) = &mass {
                let d = m.len();
                if let Some(h) = dim_hint.filter(|&h| h != d) {
                    ck.at(span_of(&l.dim), "langevin.dim", format!("is {h} but the mass vector has {d} components"));
                    ok = false;
                }
                if let Some(q) = init_q.as_ref().filter(|q| q.len() != d) {
                    ck.at(raw.initial.as_ref().map(|s| s.span()), "initial.q", format!("has {} components, the system has {d}", q.len()));
                    ok = false;
                }
                for (field, pot) in [("pair.fine", &fine), ("pair.coarse", &coarse)] {
                    if let Some(Err(e)) = pot.as_ref().map(|p| p.validate(Some(d))) {
                        ck.at(raw.pair.as_ref().map(|s| s.span()), field, e.to_string());
                        ok = false;
                    }
                }
            }
            if let (true, Some(g), Some(b), Some(x), Some(s), Some(m)) = (ok, gamma, inv_beta, dt, substeps, mass) {
                params = LangevinParams::with_mass(g, b, x, s as usize, m).ok();
            }
        }
    }

    // schedule
    let substeps = params.as_ref().map(|p| p.substeps);
    let mut schedule = substeps.map(TemperatureSchedule::identity);
    if let Some(s) = &raw.schedule {
        let sspan = Some(s.span());
        let s = s.get_ref();
        let kind_name = s.kind.as_ref().map(|k| k.get_ref().as_str()).unwrap_or("identity");
        let kspan = span_of(&s.kind).or(sspan.clone());
        schedule = match (kind_name, substeps) {
            (_, None) => None,
            ("identity", Some(l)) => Some(TemperatureSchedule::identity(l)),
            ("robust", Some(l)) => Some(TemperatureSchedule::robust(l)),
            ("flat2", Some(1)) => Some(TemperatureSchedule::flat2()),
            ("flat2", Some(l)) => {
                ck.at(kspan, "schedule.kind", format!("flat2 needs substeps = 1, got {l}"));
                None
            }
            ("solve", Some(l)) => match &s.c0 {
                None => {
                    ck.missing(sspan, "schedule.c0");
                    None
                }
                Some(c0) => match solve_schedule(l, *c0.get_ref()) {
                    Ok(sched) => Some(sched),
                    Err(e) => {
                        ck.at(Some(c0.span()), "schedule.c0", e.to_string());
                        None
                    }
                },
            },
            ("explicit", Some(l)) => match &s.coefficients {
                None => {
                    ck.missing(sspan, "schedule.coefficients");
                    None
                }
                Some(c) if c.get_ref().len() != l + 1 => {
                    ck.at(Some(c.span()), "schedule.coefficients", format!("needs substeps + 1 = {} entries, got {}", l + 1, c.get_ref().len()));
                    None
                }
                Some(c) => match TemperatureSchedule::from_coefficients(c.get_ref().clone()) {
                    Ok(sched) => Some(sched),
                    Err(e) => {
                        ck.at(Some(c.span()), "schedule.coefficients", e.to_string());
                        None
                    }
                },
            },
            (other, Some(_)) => {
                ck.at(kspan, "schedule.kind", format!("unknown schedule '{other}', expected identity, robust, flat2, solve or explicit"));
                None
            }
        };
    }

    // protocol sections
    let needs = |k: ExperimentKind| kind == Some(k);
    let mut parareal = None;
    let parareal_needed = matches!(
        kind,
        Some(ExperimentKind::Sequential | ExperimentKind::PararealClassic | ExperimentKind::PararealAdaptive | ExperimentKind::GainSweep)
    );
    match &raw.parareal {
        None if parareal_needed => ck.at(None, "parareal", format!("missing section required by experiment {}", kind.unwrap())),
        None => {}
        Some(p) => {
            let pspan = Some(p.span());
            let p = p.get_ref();
            let n = ck.required(&p.n_windows, pspan.clone(), "parareal.n_windows").and_then(|_| ck.count(&p.n_windows, "parareal.n_windows", 1));
            let adaptive = needs(ExperimentKind::PararealAdaptive) || needs(ExperimentKind::GainSweep);
            let classic = needs(ExperimentKind::PararealClassic);
            let conv = if adaptive || classic {
                ck.required(&p.delta_conv, pspan.clone(), "parareal.delta_conv");
                ck.positive_f64(&p.delta_conv, "parareal.delta_conv")
            } else {
                ck.positive_f64(&p.delta_conv, "parareal.delta_conv")
            };
            let expl = if needs(ExperimentKind::PararealAdaptive) {
                ck.required(&p.delta_expl, pspan.clone(), "parareal.delta_expl");
                ck.positive_f64(&p.delta_expl, "parareal.delta_expl")
            } else {
                ck.positive_f64(&p.delta_expl, "parareal.delta_expl")
            };
            if let (Some(c), Some(e)) = (conv, expl) {
                if e <= c {
                    ck.at(span_of(&p.delta_expl), "parareal.delta_expl", format!("must exceed delta_conv ({c}), got {e}"));
                }
            }
            let k_max = ck.count(&p.k_max, "parareal.k_max", 1);
            if let Some(n) = n {
                parareal = Some(PararealConfig {
                    n_windows: n,
                    delta_conv: conv.unwrap_or(f64::MIN_POSITIVE),
                    delta_expl: expl.unwrap_or(f64::MAX),
                    k_max,
                    keep_iterates: false,
                });
            }
        }
    }

    let mut temperature = None;
    match &raw.temperature {
        None if needs(ExperimentKind::Temperature) => ck.at(None, "temperature", "missing section required by experiment temperature"),
        None => {}
        Some(t) => {
            let tspan = Some(t.span());
            let t = t.get_ref();
            let n = ck.required(&t.n_windows, tspan, "temperature.n_windows").and_then(|_| ck.count(&t.n_windows, "temperature.n_windows", 1));
            let burn = match &t.burn_in_fraction {
                Some(b) if !(0.0..1.0).contains(b.get_ref()) => {
                    ck.at(Some(b.span()), "temperature.burn_in_fraction", format!("must lie in [0, 1), got {}", b.get_ref()));
                    None
                }
                Some(b) => Some(*b.get_ref()),
                None => Some(0.1),
            };
            if let (Some(n), Some(b)) = (n, burn) {
                temperature = Some(TemperatureSpec {
                    n_windows: n,
                    sampling: t.sampling.unwrap_or_default(),
                    burn_in_fraction: b,
                });
            }
        }
    }

    let mut sweep = None;
    match &raw.sweep {
        None if needs(ExperimentKind::GainSweep) => ck.at(None, "sweep", "missing section required by experiment gain_sweep"),
        None => {}
        Some(s) => {
            let sspan = Some(s.span());
            let s = s.get_ref();
            let grid = |ck: &mut Checker, v: &Option<Spanned<Vec<f64>>>, field: &str| -> Option<Vec<f64>> {
                let Some(g) = v else {
                    ck.missing(sspan.clone(), field);
                    return None;
                };
                if g.get_ref().is_empty() {
                    ck.at(Some(g.span()), field, "grid must be non-empty");
                    return None;
                }
                if !g.get_ref().iter().all(|x| x.is_finite() && *x > 0.0) {
                    ck.at(Some(g.span()), field, "grid values must be finite and > 0");
                    return None;
                }
                Some(g.get_ref().clone())
            };
            let dt = grid(&mut ck, &s.dt, "sweep.dt");
            let conv = grid(&mut ck, &s.delta_conv, "sweep.delta_conv");
            let expl = grid(&mut ck, &s.delta_expl, "sweep.delta_expl");
            if let (Some(dt), Some(g)) = (&dt, params.as_ref().map(|p| p.gamma)) {
                if let Some(bad) = dt.iter().find(|&&x| g * x >= 2.0) {
                    ck.at(span_of(&s.dt), "sweep.dt", format!("gamma * dt = {} must be < 2", g * bad));
                }
            }
            if let (Some(c), Some(e)) = (&conv, &expl) {
                let cmax = c.iter().cloned().fold(0.0, f64::max);
                if let Some(bad) = e.iter().find(|&&x| x <= cmax) {
                    ck.at(span_of(&s.delta_expl), "sweep.delta_expl", format!("{bad} does not exceed every delta_conv (max {cmax})"));
                }
            }
            if let (Some(dt), Some(delta_conv), Some(delta_expl)) = (dt, conv, expl) {
                sweep = Some(SweepSpec {
                    dt,
                    delta_conv,
                    delta_expl,
                });
            }
        }
    }

    let mut ensemble = None;
    match &raw.ensemble {
        None if needs(ExperimentKind::Ensemble) => ck.at(None, "ensemble", "missing section required by experiment ensemble"),
        None => {}
        Some(e) => {
            let espan = Some(e.span());
            let e = e.get_ref();
            let members = ck.required(&e.members, espan.clone(), "ensemble.members").and_then(|_| ck.count(&e.members, "ensemble.members", 1));
            let segment = ck
                .required(&e.segment_windows, espan.clone(), "ensemble.segment_windows")
                .and_then(|_| ck.count(&e.segment_windows, "ensemble.segment_windows", 1));
            let equil = if e.equilibration_windows.is_some() {
                ck.count(&e.equilibration_windows, "ensemble.equilibration_windows", 0)
            } else {
                Some(0)
            };
            let tol = if e.minimize_tol.is_some() { ck.positive_f64(&e.minimize_tol, "ensemble.minimize_tol") } else { Some(1e-10) };
            let debounce = if e.debounce.is_some() { ck.count(&e.debounce, "ensemble.debounce", 1) } else { Some(1) };
            let bin = if e.histogram_bin.is_some() { ck.count(&e.histogram_bin, "ensemble.histogram_bin", 1) } else { Some(50) };
            let conv = e.delta_conv.as_ref().map(|c| c.get_ref().clone()).unwrap_or_default();
            if !conv.iter().all(|x| x.is_finite() && *x > 0.0) {
                ck.at(span_of(&e.delta_conv), "ensemble.delta_conv", "values must be finite and > 0");
            }
            let expl = match &e.delta_expl {
                Some(x) => {
                    let v = *x.get_ref();
                    if let Some(bad) = conv.iter().find(|&&c| v <= c) {
                        ck.at(Some(x.span()), "ensemble.delta_expl", format!("must exceed every delta_conv, {bad} is not smaller than {v}"));
                    }
                    v
                }
                None => {
                    if !conv.is_empty() {
                        ck.missing(espan.clone(), "ensemble.delta_expl");
                    }
                    f64::MAX
                }
            };
            let basins = e.basins.as_ref().map(|b| b.get_ref().clone()).unwrap_or_default();
            let starts = e.basin_starts.as_ref().map(|b| b.get_ref().clone()).unwrap_or_default();
            if basins.is_empty() && starts.is_empty() {
                ck.at(espan.clone(), "ensemble.basins", "give basins or basin_starts to build the basin catalog");
            }
            if needs(ExperimentKind::Ensemble) && init_q.is_none() {
                ck.missing(None, "initial.q");
            }
            if let (Some(members), Some(segment_windows), Some(equilibration_windows), Some(minimize_tol), Some(debounce), Some(histogram_bin)) =
                (members, segment, equil, tol, debounce, bin)
            {
                ensemble = Some(EnsembleSection {
                    members,
                    segment_windows,
                    equilibration_windows,
                    minimize_tol,
                    debounce,
                    include_fine: e.include_fine.unwrap_or(true),
                    include_coarse: e.include_coarse.unwrap_or(true),
                    delta_conv: conv,
                    delta_expl: expl,
                    basins,
                    basin_starts: starts,
                    histogram_bin,
                });
            }
        }
    }

    let pair = match (fine, coarse.clone(), pair_costs) {
        (Some(f), c, (ratio, cf, cc)) => {
            let c = c.unwrap_or_else(|| f.clone());
            let built = match (cf, cc) {
                (Some(cf), Some(cc)) => PropagatorPair::new(f, c, cf, cc),
                _ => PropagatorPair::with_ratio(f, c, ratio.unwrap_or(PropagatorPair::SNAP_RATIO)),
            };
            match built {
                Ok(p) => Some(p),
                Err(e) => {
                    ck.at(raw.pair.as_ref().map(|s| s.span()), "pair", e.to_string());
                    None
                }
            }
        }
        _ => None,
    };

    if !ck.errors.is_empty() {
        return Err(ConfigErrors(ck.errors));
    }
    let params = params.expect("validated");
    let d = params.dim();
    Ok(ExperimentConfig {
        experiment: kind.expect("validated"),
        master_seed: master_seed.expect("validated"),
        output_dir: raw.output_dir.map(PathBuf::from),
        pair: pair.expect("validated"),
        schedule: schedule.expect("validated"),
        initial: InitialSpec {
            q: init_q.unwrap_or_else(|| vec![0.0; d]),
            p: init_p.unwrap_or_else(|| vec![0.0; d]),
            minimize: init_min,
            minimize_tol: init_tol,
        },
        params,
        parareal,
        temperature,
        sweep,
        ensemble,
    })
}

/// Reads and validates a configuration file.
pub fn validate_config(path: &Path) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    load_config(path, None)
}

pub fn load_config(path: &Path, experiment: Option<ExperimentKind>) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    let text = fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            field: path.display().to_string(),
            message: e.to_string(),
        }])
    })?;
    parse_config(&text, experiment)
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Completed => EXIT_OK,
            Outcome::NotConverged => EXIT_NOT_CONVERGED,
        }
    }
}

/// Process exit status for a failed run.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::BlowUp(_) | Error::NonFinite(_) => EXIT_BLOW_UP,
        Error::InvalidParameter(_) | Error::Dimension { .. } | Error::InfeasibleSchedule { .. } => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub outcome: Outcome,
    pub manifest: PathBuf,
    pub outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    experiment: ExperimentKind,
    master_seed: u64,
    workers: usize,
    started_at: String,
    finished_at: Option<String>,
    complete: bool,
    status: &'static str,
    error: Option<String>,
    outputs: Vec<String>,
    config: &'a ExperimentConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Collects the files written by a run.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn trajectory(&mut self, name: &str, traj: &NodeTrajectory, window_length: f64) -> Result<()> {
        let p = self.path(name);
        traj.write_csv(BufWriter::new(fs::File::create(p)?), window_length)
    }
}

#[derive(Serialize)]
struct TemperatureOutput<'a> {
    inv_beta: f64,
    substeps: usize,
    schedule: &'a TemperatureSchedule,
    n_windows: usize,
    report: &'a TemperatureReport,
    relative_deviation: f64,
}

#[derive(Serialize)]
struct PararealOutput<'a> {
    algorithm: &'static str,
    n_windows: usize,
    result: &'a PararealResult,
    gain: Option<GainReport>,
}

#[derive(Serialize)]
struct SweepPoint {
    dt: f64,
    delta_conv: f64,
    delta_expl: f64,
    converged: bool,
    gain: GainReport,
    slabs: Vec<crate::parareal::SlabRecord>,
}

#[derive(Serialize)]
struct EnsembleOutput {
    basins: Vec<Vec<f64>>,
    spec: EnsembleSpec,
    modes: Vec<EnsembleModeOutput>,
}

#[derive(Serialize)]
struct EnsembleModeOutput {
    label: String,
    mean_gain: Option<f64>,
    comparison_with_fine: Option<Comparison>,
    report: EnsembleReport,
}

fn build_pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))
}

fn initial_state(config: &ExperimentConfig) -> Result<PhaseState> {
    let q = if config.initial.minimize {
        minimize(&config.pair.fine, &config.initial.q, config.initial.minimize_tol)?
    } else {
        config.initial.q.clone()
    };
    PhaseState::new(q, config.initial.p.clone())
}

/// Runs `config`, writing results and `manifest.json` into `out_dir`.
///
/// Result files depend only on the configuration; `workers` changes speed
/// only. On failure the manifest is left with `complete = false`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<RunReport> {
    fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join("manifest.json");
    let started_at = chrono::Utc::now().to_rfc3339();
    let mut manifest = Manifest {
        program: "pararealmd",
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment,
        master_seed: config.master_seed,
        workers,
        started_at,
        finished_at: None,
        complete: false,
        status: "running",
        error: None,
        outputs: Vec::new(),
        config,
    };
    write_json(&manifest_path, &manifest)?;
    let mut outputs = Outputs {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let result = build_pool(workers).and_then(|pool| execute(config, pool.as_ref(), &mut outputs));
    manifest.finished_at = Some(chrono::Utc::now().to_rfc3339());
    manifest.outputs = outputs
        .files
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    match &result {
        Ok(outcome) => {
            manifest.complete = true;
            manifest.status = match outcome {
                Outcome::Completed => "completed",
                Outcome::NotConverged => "not_converged",
            };
        }
        Err(e) => {
            manifest.status = "failed";
            manifest.error = Some(e.to_string());
        }
    }
    write_json(&manifest_path, &manifest)?;
    let outcome = result?;
    Ok(RunReport {
        outcome,
        manifest: manifest_path,
        outputs: outputs.files,
    })
}

fn execute(config: &ExperimentConfig, pool: Option<&rayon::ThreadPool>, out: &mut Outputs) -> Result<Outcome> {
    let params = &config.params;
    let schedule = &config.schedule;
    let pair = &config.pair;
    let window = params.window_length();
    match config.experiment {
        ExperimentKind::Temperature => {
            let t = config.temperature.as_ref().expect("validated");
            let report = TemperatureProtocol::new(t.n_windows, config.master_seed)
                .sampling(t.sampling)
                .burn_in_fraction(t.burn_in_fraction)
                .initial(initial_state(config)?)
                .run(&pair.fine, params, schedule)?;
            out.json(
                "temperature.json",
                &TemperatureOutput {
                    inv_beta: params.inv_beta,
                    substeps: params.substeps,
                    schedule,
                    n_windows: t.n_windows,
                    relative_deviation: (report.k_eq_empirical - report.k_eq_predicted) / report.k_eq_predicted,
                    report: &report,
                },
            )?;
            Ok(Outcome::Completed)
        }
        ExperimentKind::Sequential => {
            let n = config.parareal.as_ref().expect("validated").n_windows;
            let plan = NoisePlan::new(config.master_seed, n);
            let traj = sequential_propagate(&initial_state(config)?, n, &pair.fine, params, schedule, &plan)?;
            out.trajectory("trajectory.csv", &traj, window)?;
            Ok(Outcome::Completed)
        }
        ExperimentKind::PararealClassic | ExperimentKind::PararealAdaptive => {
            let pc = config.parareal.as_ref().expect("validated");
            let plan = NoisePlan::new(config.master_seed, pc.n_windows);
            let mut solver = Parareal::new(
                LangevinPropagator::new(&pair.coarse, params, schedule, &plan),
                LangevinPropagator::new(&pair.fine, params, schedule, &plan),
            );
            if let Some(pool) = pool {
                solver = solver.with_pool(pool);
            }
            let init = initial_state(config)?;
            let (algorithm, result) = if config.experiment == ExperimentKind::PararealClassic {
                ("classic", solver.classic(&init, pc)?)
            } else {
                ("adaptive", solver.adaptive(&init, pc)?)
            };
            let gain = if result.converged {
                Some(adaptive_gain(&result.slabs, pc.n_windows, pair.cost_fine, pair.cost_coarse)?)
            } else {
                None
            };
            out.trajectory("trajectory.csv", &result.trajectory, window)?;
            out.json(
                "parareal.json",
                &PararealOutput {
                    algorithm,
                    n_windows: pc.n_windows,
                    result: &result,
                    gain,
                },
            )?;
            Ok(if result.converged { Outcome::Completed } else { Outcome::NotConverged })
        }
        ExperimentKind::GainSweep => {
            let pc = config.parareal.as_ref().expect("validated");
            let sweep = config.sweep.as_ref().expect("validated");
            let plan = NoisePlan::new(config.master_seed, pc.n_windows);
            let init = initial_state(config)?;
            let mut rows = Vec::new();
            let mut points = Vec::new();
            let mut all_converged = true;
            for &dt in &sweep.dt {
                let p = LangevinParams { dt, ..params.clone() };
                p.validate()?;
                let mut solver = Parareal::new(
                    LangevinPropagator::new(&pair.coarse, &p, schedule, &plan),
                    LangevinPropagator::new(&pair.fine, &p, schedule, &plan),
                );
                if let Some(pool) = pool {
                    solver = solver.with_pool(pool);
                }
                for &delta_conv in &sweep.delta_conv {
                    for &delta_expl in &sweep.delta_expl {
                        let cfg = PararealConfig {
                            delta_conv,
                            delta_expl,
                            ..pc.clone()
                        };
                        let res = solver.adaptive(&init, &cfg)?;
                        all_converged &= res.converged;
                        let gain = adaptive_gain(&res.slabs, pc.n_windows, pair.cost_fine, pair.cost_coarse)?;
                        rows.push(GainRow::new(dt, delta_expl, delta_conv, &gain));
                        points.push(SweepPoint {
                            dt,
                            delta_conv,
                            delta_expl,
                            converged: res.converged,
                            gain,
                            slabs: res.slabs,
                        });
                    }
                }
            }
            let table = out.path("gain_table.csv");
            write_gain_table(BufWriter::new(fs::File::create(table)?), &rows)?;
            out.json("sweep.json", &points)?;
            Ok(if all_converged { Outcome::Completed } else { Outcome::NotConverged })
        }
        ExperimentKind::Ensemble => {
            let e = config.ensemble.as_ref().expect("validated");
            let catalog = if e.basins.is_empty() {
                BasinCatalog::from_minimization(&pair.fine, &e.basin_starts, e.minimize_tol.max(1e-8))?
            } else {
                BasinCatalog::new(e.basins.clone(), 1e-8)?
            };
            let spec = EnsembleSpec {
                members: e.members,
                segment_windows: e.segment_windows,
                equilibration_windows: e.equilibration_windows,
                master_seed: config.master_seed,
                start: config.initial.q.clone(),
                minimize_tol: e.minimize_tol,
                debounce: e.debounce,
            };
            let mut modes = Vec::new();
            if e.include_fine {
                modes.push(EnsembleMode::FineSequential);
            }
            if e.include_coarse {
                modes.push(EnsembleMode::CoarseSequential);
            }
            modes.extend(e.delta_conv.iter().map(|&delta_conv| EnsembleMode::Adaptive {
                delta_conv,
                delta_expl: e.delta_expl,
            }));
            let mut reports = Vec::new();
            for mode in modes {
                reports.push(run_ensemble(pair, params, schedule, &catalog, &spec, mode, pool)?);
            }
            let fine_stats = reports
                .iter()
                .find(|r| r.mode == EnsembleMode::FineSequential)
                .map(|r| r.stats.clone());
            let mut mode_outputs = Vec::new();
            for report in reports {
                let label = report.mode.label();
                let hist = out.path(&format!("residence_histogram_{label}.csv"));
                report.stats.write_histogram_csv(BufWriter::new(fs::File::create(hist)?), e.histogram_bin)?;
                mode_outputs.push(EnsembleModeOutput {
                    mean_gain: report.mean_gain(),
                    comparison_with_fine: fine_stats
                        .as_ref()
                        .filter(|_| report.mode != EnsembleMode::FineSequential)
                        .map(|f| compare_ensembles(f, &report.stats)),
                    label,
                    report,
                });
            }
            out.json(
                "ensemble.json",
                &EnsembleOutput {
                    basins: catalog.minima().to_vec(),
                    spec,
                    modes: mode_outputs,
                },
            )?;
            Ok(Outcome::Completed)
        }
    }
}

/// Reads a trajectory written by a run.
pub fn read_trajectory(path: &Path) -> Result<NodeTrajectory> {
    NodeTrajectory::read_csv(std::io::BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "parareal_adaptive"
master_seed = 7

[potentials.well]
kind = "double_well"
a = [1.0, 1.0]
b = [1.0, 1.0]

[potentials.soft]
kind = "perturbed"
base = "well"
delta = { kind = "harmonic", k = [1.0, 1.0] }
lambda = 0.5

[pair]
fine = "well"
coarse = "soft"
cost_ratio = 175.0

[langevin]
gamma = 1.0
inv_beta = 0.3
dt = 0.1
substeps = 1

[schedule]
kind = "robust"

[initial]
q = [1.0, 1.0]

[parareal]
n_windows = 20
delta_conv = 1e-6
delta_expl = 0.35
"#;

    #[test]
    fn parses_reference_config() {
        let cfg = parse_config(BASE, None).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::PararealAdaptive);
        assert_eq!(cfg.params.dim(), 2);
        assert_eq!(cfg.schedule.coefficients(), &[3.0, 1.0]);
        assert_eq!(cfg.pair.cost_fine / cfg.pair.cost_coarse, 175.0);
        match &cfg.pair.coarse {
            Potential::Perturbed { base, lambda, .. } => {
                assert_eq!(**base, cfg.pair.fine);
                assert_eq!(*lambda, 0.5);
            }
            other => panic!("unexpected coarse {other:?}"),
        }
    }

    #[test]
    fn missing_seed_is_named() {
        let text = BASE.replace("master_seed = 7\n", "");
        let errs = parse_config(&text, None).unwrap_err();
        assert!(errs.0.iter().any(|e| e.field == "master_seed"), "{errs}");
    }

    #[test]
    fn reports_every_error_with_lines() {
        let text = BASE.replace("dt = 0.1", "dt = -0.1").replace("delta_expl = 0.35", "delta_expl = 1e-7");
        let errs = parse_config(&text, None).unwrap_err();
        let dt = errs.0.iter().find(|e| e.field == "langevin.dt").expect("dt error");
        assert!(dt.message.contains("> 0"));
        assert_eq!(dt.line, Some(text.lines().position(|l| l.starts_with("dt =")).unwrap() + 1));
        assert!(errs.0.iter().any(|e| e.field == "parareal.delta_expl"), "{errs}");
        assert!(errs.to_string().contains("line "));
    }

    #[test]
    fn unresolved_and_cyclic_references() {
        let text = BASE.replace("coarse = \"soft\"", "coarse = \"nope\"");
        assert!(parse_config(&text, None).unwrap_err().0.iter().any(|e| e.message.contains("unknown potential 'nope'")));
        let text = BASE.replace("base = \"well\"", "base = \"soft\"");
        assert!(parse_config(&text, None).unwrap_err().0.iter().any(|e| e.message.contains("cycle")));
    }

    #[test]
    fn subcommand_overrides_experiment_and_checks_sections() {
        let errs = parse_config(BASE, Some(ExperimentKind::GainSweep)).unwrap_err();
        assert!(errs.0.iter().any(|e| e.field == "sweep"));
        assert!(parse_config(BASE, Some(ExperimentKind::Sequential)).is_ok());
    }

    #[test]
    fn large_seeds_as_strings() {
        let text = BASE.replace("master_seed = 7", "master_seed = \"0xFFFFFFFFFFFFFFFF\"");
        assert_eq!(parse_config(&text, None).unwrap().master_seed, u64::MAX);
        let text = BASE.replace("master_seed = 7", "master_seed = -3");
        assert!(parse_config(&text, None).is_err());
    }

    #[test]
    fn toml_syntax_errors_carry_lines() {
        let errs = parse_config("experiment = \n", None).unwrap_err();
        assert_eq!(errs.0[0].line, Some(1));
        let errs = parse_config("bogus = 1\n", None).unwrap_err();
        assert_eq!(errs.0[0].field, "toml");
    }
}
