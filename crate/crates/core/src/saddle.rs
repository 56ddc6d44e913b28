//! The dual functional q (inf-sup of mutual energies against the extreme
//! points), support-restricted Chebyshev constants, and their limit
//! estimate.
//!
//! The inner adversary always ranges over polytope vertices: a linear
//! functional attains its optimum over the feasible measure set at an
//! extreme point, so each inner problem is one LP. Outer problems are
//! Kelley cutting-plane loops: piecewise-linear models built from the
//! adversary vertices, re-solved as LPs, with upper and lower bounds
//! bracketing the value at termination.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::EnergyMatrix;
use crate::polytope::{
    solve_lp, Direction, Feasibility, FeasiblePolytope, LpOutcome, Sense,
};

/// Couples an outer weight vector (possibly on a column subset) to the inner
/// full-grid adversary through the energy matrix.
struct Coupling<'a> {
    k: &'a DMatrix<f64>,
    /// Full-grid indices of the outer columns; `None` means the identity.
    outer_cols: Option<&'a [usize]>,
}

impl Coupling<'_> {
    /// Inner LP objective: (K w) over the full grid.
    fn inner_objective(&self, w: &[f64]) -> Vec<f64> {
        let n = self.k.nrows();
        let mut out = vec![0.0; n];
        match self.outer_cols {
            None => {
                for (i, &wi) in w.iter().enumerate() {
                    if wi != 0.0 {
                        for j in 0..n {
                            out[j] += self.k[(i, j)] * wi;
                        }
                    }
                }
            }
            Some(cols) => {
                for (&ci, &wi) in cols.iter().zip(w) {
                    if wi != 0.0 {
                        for j in 0..n {
                            out[j] += self.k[(ci, j)] * wi;
                        }
                    }
                }
            }
        }
        out
    }

    /// Cut coefficients over the outer columns for an inner vertex v.
    fn cut_vector(&self, v_weights: &[f64], v_support: &[usize], outer_n: usize) -> Vec<f64> {
        let mut out = vec![0.0; outer_n];
        for (oi, slot) in out.iter_mut().enumerate() {
            let gi = self.outer_cols.map(|c| c[oi]).unwrap_or(oi);
            let mut s = 0.0;
            for &j in v_support {
                s += self.k[(gi, j)] * v_weights[j];
            }
            *slot = s;
        }
        out
    }
}

#[derive(Debug, Clone)]
struct KelleyReport {
    value: f64,
    weights: Vec<f64>,
    upper: f64,
    lower: f64,
    cuts: usize,
    iterations: usize,
    converged: bool,
}

/// Kelley loop for min over `outer` of max over `inner` of w' K v, or the
/// max-of-min version when `maximize_outer` is set.
fn kelley(
    coupling: &Coupling,
    outer: &FeasiblePolytope,
    inner: &FeasiblePolytope,
    maximize_outer: bool,
    tol: f64,
    max_iter: usize,
) -> Result<KelleyReport> {
    let outer_n = outer.n();
    let w0 = match outer.check_feasible()? {
        Feasibility::Feasible(v) => v.weights.clone(),
        Feasibility::Infeasible(cert) => {
            return Err(Error::Infeasible {
                certificate: cert.y.clone(),
                residual: cert.residual,
            })
        }
    };

    let inner_dir = if maximize_outer {
        Direction::Min
    } else {
        Direction::Max
    };

    let mut cuts: Vec<Vec<f64>> = Vec::new();
    let mut cut_keys: Vec<Vec<usize>> = Vec::new();
    let mut w = w0;
    let mut best_w = w.clone();
    // value achieved by evaluated iterates: an upper bound for min-sup, a
    // lower bound for max-inf
    let mut achieved = if maximize_outer {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    // model bound from the master LP (the other side of the bracket)
    let mut model = if maximize_outer {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        // evaluate the true objective at w via one inner LP
        let obj_inner = coupling.inner_objective(&w);
        let resp = inner.lp_optimize(&obj_inner, inner_dir)?;
        let phi = resp.value;
        let improved = if maximize_outer {
            phi > achieved
        } else {
            phi < achieved
        };
        if improved {
            achieved = phi;
            best_w = w.clone();
        }
        if model.is_finite() && (model - achieved).abs() <= tol {
            converged = true;
            break;
        }
        // register the adversary vertex as a cut
        if !cut_keys.contains(&resp.vertex.support) {
            cuts.push(coupling.cut_vector(&resp.vertex.weights, &resp.vertex.support, outer_n));
            cut_keys.push(resp.vertex.support.clone());
        }
        // master LP over (w, t+, t-)
        let cols = outer_n + 2;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(outer.rows().nrows() + cuts.len());
        let mut senses: Vec<Sense> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        for i in 0..outer.rows().nrows() {
            let mut row = vec![0.0; cols];
            for j in 0..outer_n {
                row[j] = outer.rows()[(i, j)];
            }
            rows.push(row);
            senses.push(match outer.senses()[i] {
                crate::polytope::RowSense::Eq => Sense::Eq,
                crate::polytope::RowSense::Geq => Sense::Geq,
            });
            b.push(outer.targets()[i]);
        }
        for cut in &cuts {
            let mut row = vec![0.0; cols];
            row[..outer_n].copy_from_slice(cut);
            // min-sup: w.Kv - t <= 0;  max-inf: t - w.Kv <= 0
            if maximize_outer {
                for v in row.iter_mut() {
                    *v = -*v;
                }
                row[outer_n] = 1.0;
                row[outer_n + 1] = -1.0;
            } else {
                row[outer_n] = -1.0;
                row[outer_n + 1] = 1.0;
            }
            rows.push(row);
            senses.push(Sense::Leq);
            b.push(0.0);
        }
        let mut obj = vec![0.0; cols];
        obj[outer_n] = 1.0;
        obj[outer_n + 1] = -1.0;
        let out = solve_lp(&rows, &senses, &b, &obj, maximize_outer)?;
        let sol = match out {
            LpOutcome::Optimal(sol) => sol,
            LpOutcome::Infeasible { farkas, residual } => {
                return Err(Error::Infeasible {
                    certificate: farkas,
                    residual,
                })
            }
            LpOutcome::Unbounded => return Err(Error::Unbounded),
        };
        model = sol.value;
        w = sol.x[..outer_n].to_vec();
        if (model - achieved).abs() <= tol {
            // evaluate the final iterate before declaring victory
            let obj_inner = coupling.inner_objective(&w);
            let resp = inner.lp_optimize(&obj_inner, inner_dir)?;
            let phi = resp.value;
            let improved = if maximize_outer {
                phi > achieved
            } else {
                phi < achieved
            };
            if improved {
                achieved = phi;
                best_w = w.clone();
            }
            converged = true;
            break;
        }
    }

    let (upper, lower) = if maximize_outer {
        (model, achieved)
    } else {
        (achieved, model)
    };
    Ok(KelleyReport {
        value: achieved,
        weights: best_w,
        upper,
        lower,
        cuts: cuts.len(),
        iterations,
        converged,
    })
}

/// Result of the dual functional computation.
#[derive(Debug, Clone)]
pub struct DualReport {
    /// The certified achieved value.
    pub value: f64,
    pub weights: Vec<f64>,
    pub upper: f64,
    pub lower: f64,
    pub cuts: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl From<KelleyReport> for DualReport {
    fn from(r: KelleyReport) -> Self {
        DualReport {
            value: r.value,
            weights: r.weights,
            upper: r.upper,
            lower: r.lower,
            cuts: r.cuts,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// q = inf over the polytope of sup over its extreme points of w' K v,
/// by Kelley cutting planes with the inner sup solved as one LP per
/// iteration. Upper and lower bounds bracket the returned value.
pub fn dual_q(k: &EnergyMatrix, p: &FeasiblePolytope, tol: f64) -> Result<DualReport> {
    if k.grid() != p.grid() {
        return Err(Error::invalid(
            "energy matrix and polytope are on different grids",
        ));
    }
    let coupling = Coupling {
        k: k.entries(),
        outer_cols: None,
    };
    let max_iter = 20 * p.n() + 200;
    Ok(kelley(&coupling, p, p, false, tol, max_iter)?.into())
}

/// Mode for the support-restricted constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QbarMode {
    /// Enumerate every support subset (small grids only).
    Exact,
    /// Seeded multistart support-exchange local search.
    Heuristic { seed: u64 },
}

impl QbarMode {
    pub fn label(&self) -> &'static str {
        match self {
            QbarMode::Exact => "exact",
            QbarMode::Heuristic { .. } => "heuristic",
        }
    }
}

/// Best support found for one support budget.
#[derive(Debug, Clone)]
pub struct QbarWitness {
    pub support: Vec<usize>,
    /// Full-grid weights of the maximizing measure.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum QbarOutcome {
    Value { value: f64, witness: QbarWitness },
    /// No feasible weights supported on at most m grid columns.
    EmptyRestriction,
}

impl QbarOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            QbarOutcome::Value { value, .. } => Some(*value),
            QbarOutcome::EmptyRestriction => None,
        }
    }
}

const QBAR_INNER_TOL: f64 = 1e-9;

/// sup over weights on the given support of the inner inf, via the concave
/// Kelley loop on the restricted polytope. None when the restriction is
/// infeasible.
fn qbar_on_support(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    support: &[usize],
) -> Result<Option<(f64, QbarWitness)>> {
    let restricted = p.restrict(support)?;
    if !restricted.is_feasible()? {
        return Ok(None);
    }
    let coupling = Coupling {
        k: k.entries(),
        outer_cols: Some(support),
    };
    let r = kelley(
        &coupling,
        &restricted,
        p,
        true,
        QBAR_INNER_TOL,
        40 * support.len() + 200,
    )?;
    let mut weights = vec![0.0; p.n()];
    for (&col, &wv) in support.iter().zip(&r.weights) {
        weights[col] = wv;
    }
    Ok(Some((
        r.value,
        QbarWitness {
            support: support.to_vec(),
            weights,
        },
    )))
}

/// The m-th Chebyshev constant of the discrete problem: sup over feasible
/// weights supported on at most m grid columns of the inner inf over the
/// polytope's extreme points.
pub fn lower_qbar(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    m: usize,
    mode: QbarMode,
    budget: usize,
) -> Result<QbarOutcome> {
    if k.grid() != p.grid() {
        return Err(Error::invalid(
            "energy matrix and polytope are on different grids",
        ));
    }
    if m == 0 {
        return Err(Error::invalid("support budget m must be at least 1"));
    }
    let n = p.n();
    if m >= n {
        // no restriction: a single Kelley run on the full polytope
        let cols: Vec<usize> = (0..n).collect();
        return Ok(match qbar_on_support(k, p, &cols)? {
            Some((value, witness)) => QbarOutcome::Value { value, witness },
            None => QbarOutcome::EmptyRestriction,
        });
    }
    match mode {
        QbarMode::Exact => qbar_exact(k, p, m, budget),
        QbarMode::Heuristic { seed } => qbar_heuristic(k, p, m, budget, seed),
    }
}

fn qbar_exact(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    m: usize,
    budget: usize,
) -> Result<QbarOutcome> {
    let n = p.n();
    let mut best: Option<(f64, QbarWitness)> = None;
    let mut evaluated = 0usize;
    for combo in (0..n).combinations(m) {
        evaluated += 1;
        if evaluated > budget {
            return Err(Error::invalid(format!(
                "exact enumeration exceeded the budget of {budget} support subsets"
            )));
        }
        if let Some((v, wit)) = qbar_on_support(k, p, &combo)? {
            if best.as_ref().map(|(b, _)| v > *b).unwrap_or(true) {
                best = Some((v, wit));
            }
        }
    }
    Ok(match best {
        Some((value, witness)) => QbarOutcome::Value { value, witness },
        None => QbarOutcome::EmptyRestriction,
    })
}

fn qbar_heuristic(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    m: usize,
    budget: usize,
    seed: u64,
) -> Result<QbarOutcome> {
    let n = p.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9e37_79b9));
    let mut starts: Vec<Vec<usize>> = Vec::new();
    // a feasible vertex support extends to a feasible start when it fits
    if let Feasibility::Feasible(v) = p.check_feasible()? {
        if !v.support.is_empty() && v.support.len() <= m {
            let mut s = v.support.clone();
            let mut extra: Vec<usize> = (0..n).filter(|j| !s.contains(j)).collect();
            extra.shuffle(&mut rng);
            while s.len() < m {
                s.push(extra.pop().expect("m < n"));
            }
            s.sort_unstable();
            starts.push(s);
        }
    }
    // equispaced support
    let eq: Vec<usize> = (0..m)
        .map(|i| i * (n - 1) / (m - 1).max(1))
        .dedup()
        .collect();
    if eq.len() == m {
        starts.push(eq);
    }
    while starts.len() < 6 {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut s: Vec<usize> = all.into_iter().take(m).collect();
        s.sort_unstable();
        starts.push(s);
    }

    let mut best: Option<(f64, QbarWitness)> = None;
    let mut evals = 0usize;
    'starts: for start in starts {
        let Some((mut val, mut wit)) = qbar_on_support(k, p, &start)? else {
            continue;
        };
        evals += 1;
        let mut support = start;
        loop {
            if evals >= budget {
                if best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
                    best = Some((val, wit));
                }
                break 'starts;
            }
            // first-improvement swap search in a seeded random order
            let mut positions: Vec<usize> = (0..support.len()).collect();
            positions.shuffle(&mut rng);
            let mut outside: Vec<usize> = (0..n).filter(|j| !support.contains(j)).collect();
            outside.shuffle(&mut rng);
            let mut improved = false;
            'swap: for &pos in &positions {
                for &j in &outside {
                    let mut cand = support.clone();
                    cand[pos] = j;
                    cand.sort_unstable();
                    evals += 1;
                    if let Some((v, w)) = qbar_on_support(k, p, &cand)? {
                        if v > val + 1e-12 {
                            val = v;
                            wit = w;
                            support = cand;
                            improved = true;
                            break 'swap;
                        }
                    }
                    if evals >= budget {
                        break 'swap;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().map(|(b, _)| val > *b).unwrap_or(true) {
            best = Some((val, wit));
        }
    }
    Ok(match best {
        Some((value, witness)) => QbarOutcome::Value { value, witness },
        None => QbarOutcome::EmptyRestriction,
    })
}

/// One entry of the Chebyshev ladder.
#[derive(Debug, Clone)]
pub struct QbarEntry {
    pub m: usize,
    pub outcome: QbarOutcome,
}

/// The q-bar ladder for m = 1..m_max with the limit estimate and the
/// quasi-monotonicity defect.
#[derive(Debug, Clone)]
pub struct ChebyshevSequence {
    pub entries: Vec<QbarEntry>,
    pub mode: QbarMode,
    /// q-bar at m_max: the limit estimate at this resolution.
    pub m_estimate: Option<f64>,
    /// max over m+n <= m_max of (m qbar_m + n qbar_n)/(m+n) - qbar_{m+n},
    /// clipped at zero.
    pub quasi_defect: f64,
}

pub fn chebyshev_sequence(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    m_max: usize,
    mode: QbarMode,
    budget: usize,
) -> Result<ChebyshevSequence> {
    if m_max < 2 {
        return Err(Error::invalid("m_max must be at least 2"));
    }
    let mut entries = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let outcome = lower_qbar(k, p, m, mode, budget)?;
        entries.push(QbarEntry { m, outcome });
    }
    let value_at = |m: usize| -> Option<f64> { entries[m - 1].outcome.value() };
    let mut defect = 0.0f64;
    for m in 1..m_max {
        for nn in 1..=(m_max - m) {
            if let (Some(a), Some(b), Some(c)) = (value_at(m), value_at(nn), value_at(m + nn)) {
                let blend = (m as f64 * a + nn as f64 * b) / (m + nn) as f64;
                defect = defect.max(blend - c);
            }
        }
    }
    Ok(ChebyshevSequence {
        m_estimate: value_at(m_max),
        entries,
        mode,
        quasi_defect: defect,
    })
}

/// sup over `outer` of inf over the extreme points of `inner` (both share
/// the grid of k).
pub(crate) fn sup_inf_two_sets(
    k: &EnergyMatrix,
    outer: &FeasiblePolytope,
    inner: &FeasiblePolytope,
    tol: f64,
) -> Result<DualReport> {
    let coupling = Coupling {
        k: k.entries(),
        outer_cols: None,
    };
    Ok(kelley(&coupling, outer, inner, true, tol, 20 * outer.n() + 200)?.into())
}

/// inf over `outer` of sup over the extreme points of `inner`.
pub(crate) fn inf_sup_two_sets(
    k: &EnergyMatrix,
    outer: &FeasiblePolytope,
    inner: &FeasiblePolytope,
    tol: f64,
) -> Result<DualReport> {
    let coupling = Coupling {
        k: k.entries(),
        outer_cols: None,
    };
    Ok(kelley(&coupling, outer, inner, false, tol, 20 * outer.n() + 200)?.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{grid_1d, EnergyMatrix, Point};
    use crate::polytope::FeasiblePolytope;
    use nalgebra::DMatrix;

    fn identity_setup(n: usize) -> (EnergyMatrix, FeasiblePolytope) {
        let grid = grid_1d(0.0, 1.0, n);
        let k = EnergyMatrix::from_matrix(grid.clone(), DMatrix::identity(n, n)).unwrap();
        let p = FeasiblePolytope::simplex(grid).unwrap();
        (k, p)
    }

    #[test]
    fn dual_q_identity_is_one_third() {
        let (k, p) = identity_setup(3);
        let r = dual_q(&k, &p, 1e-10).unwrap();
        assert!(r.converged);
        assert!((r.value - 1.0 / 3.0).abs() <= 1e-9, "q = {}", r.value);
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() <= 1e-8);
        }
        // brute force over vertex responses on a barycentric w-grid
        let mut brute = f64::INFINITY;
        let steps = 60;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let w = [
                    a as f64 / steps as f64,
                    b as f64 / steps as f64,
                    (steps - a - b) as f64 / steps as f64,
                ];
                let phi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                brute = brute.min(phi);
            }
        }
        assert!(brute >= r.value - 1e-9, "sampled min cannot beat q");
        assert!((brute - r.value).abs() < 0.02);
    }

    #[test]
    fn dual_q_single_point() {
        let grid = vec![Point::d1(0.3)];
        let k =
            EnergyMatrix::from_matrix(grid.clone(), DMatrix::from_element(1, 1, 2.5)).unwrap();
        let p = FeasiblePolytope::simplex(grid).unwrap();
        let r = dual_q(&k, &p, 1e-12).unwrap();
        assert_eq!(r.value, 2.5);
    }

    #[test]
    fn dual_q_bounds_bracket_value() {
        let (k, p) = identity_setup(5);
        let r = dual_q(&k, &p, 1e-8).unwrap();
        assert!(r.converged);
        assert!(r.lower <= r.value + 1e-12);
        assert!(r.value <= r.upper + 1e-12);
        assert!(r.upper - r.lower <= 1e-8 + 1e-12);
    }

    #[test]
    fn qbar_identity_small_budgets() {
        let (k, p) = identity_setup(3);
        // m = 1: the adversary hits an off-support coordinate, value 0
        let r = lower_qbar(&k, &p, 1, QbarMode::Exact, 10_000).unwrap();
        let QbarOutcome::Value { value, witness } = r else {
            panic!("simplex restriction is feasible")
        };
        assert!(value.abs() <= 1e-10, "qbar_1 = {value}");
        assert_eq!(witness.support.len(), 1);
        // m = 2 still 0, m = 3 reaches 1/3
        let v2 = lower_qbar(&k, &p, 2, QbarMode::Exact, 10_000)
            .unwrap()
            .value()
            .unwrap();
        assert!(v2.abs() <= 1e-10);
        let v3 = lower_qbar(&k, &p, 3, QbarMode::Exact, 10_000)
            .unwrap()
            .value()
            .unwrap();
        assert!((v3 - 1.0 / 3.0).abs() <= 1e-9, "qbar_3 = {v3}");
    }

    #[test]
    fn qbar_single_point_grid() {
        let grid = vec![Point::d1(0.0)];
        let k =
            EnergyMatrix::from_matrix(grid.clone(), DMatrix::from_element(1, 1, 4.2)).unwrap();
        let p = FeasiblePolytope::simplex(grid).unwrap();
        for m in 1..=3 {
            let v = lower_qbar(&k, &p, m, QbarMode::Exact, 100)
                .unwrap()
                .value()
                .unwrap();
            assert_eq!(v, 4.2);
        }
    }

    #[test]
    fn qbar_full_support_equals_dual_q() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for n in [3usize, 5, 7] {
            let grid = grid_1d(0.0, 1.0, n);
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v: f64 = rng.random_range(0.0..1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            let k = EnergyMatrix::from_matrix(grid.clone(), m).unwrap();
            let p = FeasiblePolytope::simplex(grid).unwrap();
            let q = dual_q(&k, &p, 1e-9).unwrap().value;
            let qbar = lower_qbar(&k, &p, n, QbarMode::Exact, 100_000)
                .unwrap()
                .value()
                .unwrap();
            assert!(
                (q - qbar).abs() <= 1e-6,
                "minimax equality at full support: q = {q}, qbar = {qbar}"
            );
        }
    }

    #[test]
    fn qbar_empty_restriction_detected() {
        // mass 1 and mean 1/2 cannot be met by one atom of this grid
        let grid = vec![Point::d1(0.0), Point::d1(1.0)];
        let fam = crate::family::FunctionFamily::monomial(1).unwrap();
        let p = FeasiblePolytope::build(
            grid.clone(),
            &fam,
            &[1.0, 0.5],
            crate::polytope::RowSense::Eq,
        )
        .unwrap();
        let k = EnergyMatrix::from_matrix(grid, DMatrix::identity(2, 2)).unwrap();
        let r = lower_qbar(&k, &p, 1, QbarMode::Exact, 100).unwrap();
        assert!(matches!(r, QbarOutcome::EmptyRestriction));
    }

    #[test]
    fn chebyshev_sequence_identity() {
        let (k, p) = identity_setup(3);
        let seq = chebyshev_sequence(&k, &p, 3, QbarMode::Exact, 100_000).unwrap();
        let vals: Vec<f64> = seq
            .entries
            .iter()
            .map(|e| e.outcome.value().unwrap())
            .collect();
        assert!(vals[0].abs() <= 1e-10);
        assert!(vals[1].abs() <= 1e-10);
        assert!((vals[2] - 1.0 / 3.0).abs() <= 1e-9);
        assert!(seq.quasi_defect <= 1e-9, "defect {}", seq.quasi_defect);
        assert!((seq.m_estimate.unwrap() - 1.0 / 3.0).abs() <= 1e-9);
    }

    #[test]
    fn chebyshev_tail_constant_beyond_n() {
        let (k, p) = identity_setup(3);
        let q = dual_q(&k, &p, 1e-10).unwrap().value;
        let seq = chebyshev_sequence(&k, &p, 5, QbarMode::Exact, 100_000).unwrap();
        for e in &seq.entries {
            if e.m >= 3 {
                let v = e.outcome.value().unwrap();
                assert!((v - q).abs() <= 1e-8, "m={}: {v} vs q={q}", e.m);
            }
        }
    }

    #[test]
    fn sandwich_qbar_below_q() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 6;
        let grid = grid_1d(0.0, 1.0, n);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(0.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let k = EnergyMatrix::from_matrix(grid.clone(), m).unwrap();
        let p = FeasiblePolytope::simplex(grid).unwrap();
        let q = dual_q(&k, &p, 1e-9).unwrap().value;
        for mm in 1..=n {
            if let Some(v) = lower_qbar(&k, &p, mm, QbarMode::Exact, 100_000)
                .unwrap()
                .value()
            {
                assert!(v <= q + 1e-9, "qbar_{mm} = {v} > q = {q}");
            }
        }
    }

    #[test]
    fn heuristic_matches_exact_on_small_instance() {
        let (k, p) = identity_setup(5);
        for m in 2..=4 {
            let e = lower_qbar(&k, &p, m, QbarMode::Exact, 100_000)
                .unwrap()
                .value()
                .unwrap();
            let h = lower_qbar(&k, &p, m, QbarMode::Heuristic { seed: 0 }, 4000)
                .unwrap()
                .value()
                .unwrap();
            assert!(h <= e + 1e-9, "heuristic cannot exceed exact");
            assert!((e - h).abs() <= 1e-8, "m={m}: exact {e} vs heuristic {h}");
        }
    }
}
