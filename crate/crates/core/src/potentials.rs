//! Potential-energy models and fine/coarse propagator pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{distance, norm};

/// Potential energy `V(q)` over a flat coordinate vector.
///
/// Lennard-Jones clusters store atom `i`'s coordinates at
/// `q[i * space_dim..(i + 1) * space_dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Free,
    /// `sum_i k_i q_i^2 / 2`
    Harmonic { k: Vec<f64> },
    /// `sum_i a_i (q_i^2 - b_i)^2`, minima at `q_i = +-sqrt(b_i)`.
    DoubleWell { a: Vec<f64>, b: Vec<f64> },
    LennardJones {
        epsilon: f64,
        sigma: f64,
        n_atoms: usize,
        space_dim: usize,
    },
    /// `V_base + lambda * V_delta`
    Perturbed {
        base: Box<Potential>,
        delta: Box<Potential>,
        lambda: f64,
    },
}

impl Potential {
    pub fn harmonic(k: Vec<f64>) -> Self {
        Potential::Harmonic { k }
    }

    pub fn double_well(a: Vec<f64>, b: Vec<f64>) -> Self {
        Potential::DoubleWell { a, b }
    }

    pub fn lennard_jones(epsilon: f64, sigma: f64, n_atoms: usize, space_dim: usize) -> Self {
        Potential::LennardJones {
            epsilon,
            sigma,
            n_atoms,
            space_dim,
        }
    }

    pub fn perturbed(base: Potential, delta: Potential, lambda: f64) -> Self {
        Potential::Perturbed {
            base: Box::new(base),
            delta: Box::new(delta),
            lambda,
        }
    }

    /// The dimension this potential requires, if it fixes one.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Potential::Free => None,
            Potential::Harmonic { k } => Some(k.len()),
            Potential::DoubleWell { a, .. } => Some(a.len()),
            Potential::LennardJones {
                n_atoms, space_dim, ..
            } => Some(n_atoms * space_dim),
            Potential::Perturbed { base, delta, .. } => {
                base.required_dim().or_else(|| delta.required_dim())
            }
        }
    }

    /// Checks coefficients and, when `dim` is given, compatibility with it.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            Potential::Free => {}
            Potential::Harmonic { k } => {
                if k.is_empty() || !k.iter().all(|x| x.is_finite()) {
                    return bad("harmonic stiffness must be a non-empty finite vector".into());
                }
            }
            Potential::DoubleWell { a, b } => {
                if a.is_empty() || a.len() != b.len() {
                    return bad("double-well coefficients a and b need equal non-zero length".into());
                }
                if !a.iter().chain(b).all(|x| x.is_finite()) {
                    return bad("double-well coefficients must be finite".into());
                }
            }
            Potential::LennardJones {
                epsilon,
                sigma,
                n_atoms,
                space_dim,
            } => {
                if !(epsilon.is_finite() && *epsilon > 0.0 && sigma.is_finite() && *sigma > 0.0) {
                    return bad("Lennard-Jones epsilon and sigma must be finite and > 0".into());
                }
                if *n_atoms < 2 || *space_dim == 0 {
                    return bad("Lennard-Jones cluster needs >= 2 atoms and space_dim >= 1".into());
                }
            }
            Potential::Perturbed {
                base,
                delta,
                lambda,
            } => {
                if !lambda.is_finite() {
                    return bad("perturbation lambda must be finite".into());
                }
                base.validate(dim)?;
                delta.validate(dim)?;
                if let (Some(x), Some(y)) = (base.required_dim(), delta.required_dim()) {
                    if x != y {
                        return Err(Error::Dimension {
                            what: "perturbation",
                            expected: x,
                            found: y,
                        });
                    }
                }
            }
        }
        if let (Some(d), Some(req)) = (dim, self.required_dim()) {
            if d != req {
                return Err(Error::Dimension {
                    what: "potential",
                    expected: req,
                    found: d,
                });
            }
        }
        Ok(())
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        match self.required_dim() {
            Some(d) if d != q.len() => Err(Error::Dimension {
                what: "configuration",
                expected: d,
                found: q.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        self.check_dim(q)?;
        match self {
            Potential::Free => Ok(0.0),
            Potential::Harmonic { k } => Ok(k.iter().zip(q).map(|(k, x)| 0.5 * k * x * x).sum()),
            Potential::DoubleWell { a, b } => Ok(a
                .iter()
                .zip(b)
                .zip(q)
                .map(|((a, b), x)| {
                    let s = x * x - b;
                    a * s * s
                })
                .sum()),
            Potential::LennardJones {
                epsilon,
                sigma,
                n_atoms,
                space_dim,
            } => {
                let mut v = 0.0;
                for i in 0..*n_atoms {
                    for j in (i + 1)..*n_atoms {
                        let r2 = pair_r2(q, *space_dim, i, j);
                        if r2 == 0.0 {
                            return Err(coincident(i, j));
                        }
                        let s6 = (sigma * sigma / r2).powi(3);
                        v += 4.0 * epsilon * (s6 * s6 - s6);
                    }
                }
                Ok(v)
            }
            Potential::Perturbed {
                base,
                delta,
                lambda,
            } => {
                let v = base.energy(q)?;
                if *lambda == 0.0 {
                    return Ok(v);
                }
                Ok(v + lambda * delta.energy(q)?)
            }
        }
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; q.len()];
        self.gradient_into(q, &mut g)?;
        Ok(g)
    }

    /// Writes `grad V(q)` into `out`, overwriting its contents.
    pub fn gradient_into(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(q)?;
        if out.len() != q.len() {
            return Err(Error::Dimension {
                what: "gradient buffer",
                expected: q.len(),
                found: out.len(),
            });
        }
        match self {
            Potential::Free => out.fill(0.0),
            Potential::Harmonic { k } => {
                for ((g, k), x) in out.iter_mut().zip(k).zip(q) {
                    *g = k * x;
                }
            }
            Potential::DoubleWell { a, b } => {
                for (((g, a), b), x) in out.iter_mut().zip(a).zip(b).zip(q) {
                    *g = 4.0 * a * x * (x * x - b);
                }
            }
            Potential::LennardJones {
                epsilon,
                sigma,
                n_atoms,
                space_dim,
            } => {
                out.fill(0.0);
                let sd = *space_dim;
                for i in 0..*n_atoms {
                    for j in (i + 1)..*n_atoms {
                        let r2 = pair_r2(q, sd, i, j);
                        if r2 == 0.0 {
                            return Err(coincident(i, j));
                        }
                        let s6 = (sigma * sigma / r2).powi(3);
                        // (dV/dr) / r
                        let scale = 24.0 * epsilon * (s6 - 2.0 * s6 * s6) / r2;
                        for c in 0..sd {
                            let f = scale * (q[i * sd + c] - q[j * sd + c]);
                            out[i * sd + c] += f;
                            out[j * sd + c] -= f;
                        }
                    }
                }
            }
            Potential::Perturbed {
                base,
                delta,
                lambda,
            } => {
                base.gradient_into(q, out)?;
                if *lambda != 0.0 {
                    let gd = delta.gradient(q)?;
                    for (g, d) in out.iter_mut().zip(gd) {
                        *g += lambda * d;
                    }
                }
            }
        }
        Ok(())
    }
}

fn pair_r2(q: &[f64], sd: usize, i: usize, j: usize) -> f64 {
    (0..sd)
        .map(|c| {
            let d = q[i * sd + c] - q[j * sd + c];
            d * d
        })
        .sum()
}

fn coincident(i: usize, j: usize) -> Error {
    Error::Domain(format!("Lennard-Jones atoms {i} and {j} coincide"))
}

/// Largest deviation between central finite differences of the energy and
/// the analytic gradient.
pub fn gradient_check(pot: &Potential, q: &[f64], h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be > 0, got {h}")));
    }
    let g = pot.gradient(q)?;
    let mut x = q.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..q.len() {
        x[i] = q[i] + h;
        let up = pot.energy(&x)?;
        x[i] = q[i] - h;
        let down = pot.energy(&x)?;
        x[i] = q[i];
        worst = worst.max(((up - down) / (2.0 * h) - g[i]).abs());
    }
    Ok(worst)
}

const MINIMIZE_MAX_ITER: usize = 500_000;

/// Gradient descent with Armijo backtracking from each start point.
///
/// Returns the limit points with `|grad V| <= tol`, deduplicated within
/// distance `tol`, in order of first discovery.
pub fn local_minima(pot: &Potential, starts: &[Vec<f64>], tol: f64) -> Result<Vec<Vec<f64>>> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    if starts.is_empty() {
        return Err(Error::InvalidParameter("need at least one start point".into()));
    }
    let mut found: Vec<Vec<f64>> = Vec::new();
    for start in starts {
        let m = minimize(pot, start, tol)?;
        if !found.iter().any(|f| distance(f, &m) <= tol) {
            found.push(m);
        }
    }
    Ok(found)
}

/// Descends from `start` until `|grad V| <= tol`.
pub fn minimize(pot: &Potential, start: &[f64], tol: f64) -> Result<Vec<f64>> {
    let mut x = start.to_vec();
    let mut v = pot.energy(&x)?;
    let mut g = pot.gradient(&x)?;
    let mut step = 1e-2;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..MINIMIZE_MAX_ITER {
        let gnorm2: f64 = g.iter().map(|c| c * c).sum();
        if gnorm2.sqrt() <= tol {
            return Ok(x);
        }
        let gnorm = gnorm2.sqrt();
        let next_g = loop {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            let decrease = 1e-4 * step * gnorm2;
            let accepted = match pot.energy(&trial) {
                // energy differences below roundoff: require a smaller gradient
                Ok(vt) if vt.is_finite() && decrease <= 1e-13 * v.abs().max(1.0) => {
                    let gt = pot.gradient(&trial)?;
                    (vt <= v + 1e-13 * v.abs().max(1.0) && norm(&gt) < gnorm).then_some((vt, Some(gt)))
                }
                Ok(vt) if vt.is_finite() && vt <= v - decrease => Some((vt, None)),
                _ => None,
            };
            if let Some((vt, gt)) = accepted {
                v = vt;
                break gt;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::Convergence {
                    start: start.to_vec(),
                    iterations: 0,
                });
            }
        };
        std::mem::swap(&mut x, &mut trial);
        g = match next_g {
            Some(gt) => gt,
            None => pot.gradient(&x)?,
        };
        step *= 2.0;
    }
    Err(Error::Convergence {
        start: start.to_vec(),
        iterations: MINIMIZE_MAX_ITER,
    })
}

/// Centered hexagon of seven atoms in the plane at spacing `2^(1/6) sigma`.
pub fn hexagon_cluster(sigma: f64) -> Vec<f64> {
    let r = 2f64.powf(1.0 / 6.0) * sigma;
    let mut q = vec![0.0, 0.0];
    for i in 0..6 {
        let angle = std::f64::consts::PI / 3.0 * i as f64;
        q.push(r * angle.cos());
        q.push(r * angle.sin());
    }
    q
}

/// Fine and coarse potentials with the per-window cost of each propagator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorPair {
    pub fine: Potential,
    pub coarse: Potential,
    pub cost_fine: f64,
    pub cost_coarse: f64,
}

/// Laptop timings for 5000 steps: SNAP-205 fine reference.
const SNAP205_SECONDS_PER_5000: f64 = 1787.0;

impl PropagatorPair {
    /// Cost ratio of the machine-learned surrogate pair.
    pub const SNAP_RATIO: f64 = 175.0;
    /// Cost ratio of the empirical surrogate pair.
    pub const EAM_RATIO: f64 = 2600.0;

    pub fn new(fine: Potential, coarse: Potential, cost_fine: f64, cost_coarse: f64) -> Result<Self> {
        let pair = PropagatorPair {
            fine,
            coarse,
            cost_fine,
            cost_coarse,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Fine cost per window defaults to the reference timing; the coarse
    /// cost follows from `ratio = C_f / C_c`.
    pub fn with_ratio(fine: Potential, coarse: Potential, ratio: f64) -> Result<Self> {
        let cost_fine = SNAP205_SECONDS_PER_5000 / 5000.0;
        Self::new(fine, coarse, cost_fine, cost_fine / ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost_coarse.is_finite() && self.cost_coarse > 0.0) {
            return Err(Error::InvalidParameter("coarse cost must be > 0".into()));
        }
        if !(self.cost_fine.is_finite() && self.cost_fine >= self.cost_coarse) {
            return Err(Error::InvalidParameter(
                "fine cost must be finite and at least the coarse cost".into(),
            ));
        }
        self.fine.validate(None)?;
        self.coarse.validate(self.fine.required_dim())
    }

    /// Two-dimensional seven-atom Lennard-Jones cluster with a harmonic
    /// confinement perturbation as the coarse model.
    pub fn lj7_desk(lambda: f64, ratio: f64) -> Result<Self> {
        let fine = Potential::lennard_jones(1.0, 1.0, 7, 2);
        let coarse = Potential::perturbed(fine.clone(), Potential::harmonic(vec![1.0; 14]), lambda);
        Self::with_ratio(fine, coarse, ratio)
    }

    /// Separable double well in `dim` dimensions; the coarse model adds a
    /// harmonic term that lowers the barrier.
    pub fn double_well_desk(dim: usize, lambda: f64, ratio: f64) -> Result<Self> {
        let fine = Potential::double_well(vec![1.0; dim], vec![1.0; dim]);
        let coarse = Potential::perturbed(fine.clone(), Potential::harmonic(vec![1.0; dim]), lambda);
        Self::with_ratio(fine, coarse, ratio)
    }
}

/// Norm of the gradient, convenient for convergence checks.
pub fn gradient_norm(pot: &Potential, q: &[f64]) -> Result<f64> {
    Ok(norm(&pot.gradient(q)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lj7() -> Potential {
        Potential::lennard_jones(1.0, 1.0, 7, 2)
    }

    #[test]
    fn energy_examples() {
        assert_eq!(Potential::Free.energy(&[3.0, -1.0]).unwrap(), 0.0);
        assert_eq!(Potential::harmonic(vec![1.0]).energy(&[2.0]).unwrap(), 2.0);
        let dw = Potential::double_well(vec![1.0], vec![1.0]);
        assert_eq!(dw.energy(&[0.0]).unwrap(), 1.0);
        assert_eq!(dw.energy(&[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(Potential::Free.gradient(&[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(Potential::harmonic(vec![1.0]).gradient(&[2.0]).unwrap(), vec![2.0]);
        let r = 2f64.powf(1.0 / 6.0);
        let g = Potential::lennard_jones(1.0, 1.0, 2, 3)
            .gradient(&[0.0, 0.0, 0.0, r, 0.0, 0.0])
            .unwrap();
        assert!(g.iter().all(|c| c.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn coincident_atoms_are_a_domain_error() {
        let pot = Potential::lennard_jones(1.0, 1.0, 2, 2);
        assert!(matches!(pot.energy(&[1.0, 1.0, 1.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(pot.gradient(&[1.0, 1.0, 1.0, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let pot = Potential::harmonic(vec![1.0, 1.0]);
        assert!(matches!(pot.energy(&[1.0]), Err(Error::Dimension { .. })));
        assert!(pot.validate(Some(3)).is_err());
        assert!(pot.validate(Some(2)).is_ok());
    }

    #[test]
    fn finite_difference_tolerances() {
        let h = Potential::harmonic(vec![1.0, 2.5, 0.3]);
        assert!(gradient_check(&h, &[0.7, -1.2, 3.0], 1e-5).unwrap() < 1e-8);
        let dw = Potential::double_well(vec![1.0], vec![1.0]);
        assert!(gradient_check(&dw, &[0.5], 1e-5).unwrap() < 1e-8);
        let mut q = hexagon_cluster(1.0);
        for (i, x) in q.iter_mut().enumerate() {
            *x += 0.01 * ((i * 7 % 5) as f64 - 2.0);
        }
        assert!(gradient_check(&lj7(), &q, 1e-6).unwrap() < 1e-5);
        let coarse = PropagatorPair::lj7_desk(0.05, 175.0).unwrap().coarse;
        assert!(gradient_check(&coarse, &q, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn perturbed_is_linear_and_exact_at_zero() {
        let base = Potential::double_well(vec![1.0, 2.0], vec![1.0, 0.5]);
        let delta = Potential::harmonic(vec![3.0, -1.0]);
        let q = [0.3, -1.7];
        let zero = Potential::perturbed(base.clone(), delta.clone(), 0.0);
        assert_eq!(zero.energy(&q).unwrap().to_bits(), base.energy(&q).unwrap().to_bits());
        let gz: Vec<u64> = zero.gradient(&q).unwrap().iter().map(|x| x.to_bits()).collect();
        let gb: Vec<u64> = base.gradient(&q).unwrap().iter().map(|x| x.to_bits()).collect();
        assert_eq!(gz, gb);
        let e = |l: f64| Potential::perturbed(base.clone(), delta.clone(), l).energy(&q).unwrap();
        let slope = e(1.0) - e(0.0);
        assert!((e(2.5) - e(0.0) - 2.5 * slope).abs() < 1e-12);
    }

    #[test]
    fn lj_translation_invariance_and_force_balance() {
        let pot = lj7();
        let mut q = hexagon_cluster(1.0);
        q[3] += 0.05;
        q[8] -= 0.03;
        let v0 = pot.energy(&q).unwrap();
        let shifted: Vec<f64> = q.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 3.7 } else { -1.1 }).collect();
        assert!((pot.energy(&shifted).unwrap() - v0).abs() <= 1e-12 * v0.abs());
        let g = pot.gradient(&q).unwrap();
        let scale: f64 = g.iter().map(|x| x.abs()).sum();
        for c in 0..2 {
            let total: f64 = g.iter().skip(c).step_by(2).sum();
            assert!(total.abs() <= 1e-12 * scale.max(1.0), "{total}");
        }
    }

    #[test]
    fn minima_of_simple_landscapes() {
        let dw = Potential::double_well(vec![1.0], vec![1.0]);
        let minima = local_minima(&dw, &[vec![-2.0], vec![2.0], vec![1.5]], 1e-8).unwrap();
        assert_eq!(minima.len(), 2);
        assert!((minima[0][0] + 1.0).abs() < 1e-8);
        assert!((minima[1][0] - 1.0).abs() < 1e-8);
        let h = Potential::harmonic(vec![1.0]);
        let m = local_minima(&h, &[vec![5.0]], 1e-8).unwrap();
        assert!(m.len() == 1 && m[0][0].abs() < 1e-8);
    }

    #[test]
    fn lj7_relaxes_to_centered_hexagon() {
        let pot = lj7();
        let mut start = hexagon_cluster(1.0);
        for (i, x) in start.iter_mut().enumerate() {
            *x += 0.03 * (((i * 13) % 7) as f64 / 7.0 - 0.5);
        }
        let tol = 1e-6;
        let m = local_minima(&pot, &[start], tol).unwrap();
        assert_eq!(m.len(), 1);
        let q = &m[0];
        assert!(gradient_norm(&pot, q).unwrap() <= tol);
        // outer atoms equidistant from the central one
        let center = &q[0..2];
        let radii: Vec<f64> = (1..7).map(|i| distance(center, &q[2 * i..2 * i + 2])).collect();
        let mean = radii.iter().sum::<f64>() / 6.0;
        assert!(radii.iter().all(|r| (r - mean).abs() < 1e-4), "{radii:?}");
        let cx: f64 = q.iter().step_by(2).sum::<f64>() / 7.0;
        let cy: f64 = q.iter().skip(1).step_by(2).sum::<f64>() / 7.0;
        assert!(distance(center, &[cx, cy]) < 1e-4);
    }

    #[test]
    fn pair_costs_are_ordered() {
        let pair = PropagatorPair::double_well_desk(2, 0.5, PropagatorPair::EAM_RATIO).unwrap();
        assert!((pair.cost_fine / pair.cost_coarse - 2600.0).abs() < 1e-9);
        assert!(PropagatorPair::new(Potential::Free, Potential::Free, 1.0, 2.0).is_err());
        assert!(PropagatorPair::new(Potential::Free, Potential::Free, 1.0, 0.0).is_err());
    }
}
