//! The discrete feasible set: probability weights on a grid under moment
//! constraints, with LP optimization and vertex enumeration.
//!
//! Vertices of this polytope are exactly the extreme points of the discrete
//! moment-constrained measure set: supports of at most (constraint count)
//! columns whose constraint vectors are linearly independent.

mod simplex;

use std::sync::OnceLock;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::FunctionFamily;
use crate::kernel::Point;

pub(crate) use simplex::{solve_lp, LpOutcome, Sense};

/// Constraint row sense. The normalization row is always an equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Eq,
    Geq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Farkas-type infeasibility certificate: a dual vector y with y.c > 0 while
/// y.F_j <= 0 on every grid column (suitably signed for Geq rows).
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub y: Vec<f64>,
    pub residual: f64,
}

/// A basic feasible solution: an extreme point of the discrete measure set.
#[derive(Debug, Clone)]
pub struct Vertex {
    pub weights: Vec<f64>,
    /// Grid columns carrying positive weight.
    pub support: Vec<usize>,
    /// Basic grid columns of the defining basis.
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(Vertex),
    Infeasible(FarkasCertificate),
}

#[derive(Debug, Clone)]
pub struct LpOptimum {
    pub vertex: Vertex,
    pub value: f64,
    pub dual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VertexEnumeration {
    pub vertices: Vec<Vertex>,
    /// False when the `cap` stopped the enumeration early.
    pub complete: bool,
}

/// Discrete stand-in for the moment-constrained set of probability measures.
#[derive(Debug)]
pub struct FeasiblePolytope {
    grid: Vec<Point>,
    f: DMatrix<f64>,
    targets: Vec<f64>,
    senses: Vec<RowSense>,
    rank_tol: f64,
    redundant_rows: Vec<usize>,
    feasibility: OnceLock<Feasibility>,
}

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
const SUPPORT_TOL: f64 = 1e-12;

impl FeasiblePolytope {
    /// The probability simplex on a grid: normalization row only.
    pub fn simplex(grid: Vec<Point>) -> Result<Self> {
        let n = grid.len();
        let f = DMatrix::from_element(1, n, 1.0);
        FeasiblePolytope::from_rows(grid, f, vec![1.0], vec![RowSense::Eq])
    }

    /// Assemble from a family of constraint functions with targets. A ones
    /// row is prepended (with target 1) unless the family's first member is
    /// identically 1 on the grid, in which case that member serves as the
    /// normalization row and `targets[0]` must equal 1.
    pub fn build(
        grid: Vec<Point>,
        family: &FunctionFamily,
        targets: &[f64],
        sense: RowSense,
    ) -> Result<Self> {
        let m = family.evaluate_on_grid(&grid)?;
        let n = grid.len();
        let first_is_ones = m.nrows() > 0 && (0..n).all(|j| m[(0, j)] == 1.0);
        let (f, t, s) = if first_is_ones {
            if targets.len() != m.nrows() {
                return Err(Error::invalid(format!(
                    "expected {} targets, got {}",
                    m.nrows(),
                    targets.len()
                )));
            }
            if (targets[0] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "normalization target must be 1, got {}",
                    targets[0]
                )));
            }
            let mut senses = vec![sense; m.nrows()];
            senses[0] = RowSense::Eq;
            (m, targets.to_vec(), senses)
        } else {
            if targets.len() != m.nrows() {
                return Err(Error::invalid(format!(
                    "expected {} targets, got {}",
                    m.nrows(),
                    targets.len()
                )));
            }
            let mut f = DMatrix::zeros(m.nrows() + 1, n);
            f.row_mut(0).fill(1.0);
            for i in 0..m.nrows() {
                f.row_mut(i + 1).copy_from(&m.row(i));
            }
            let mut t = Vec::with_capacity(m.nrows() + 1);
            t.push(1.0);
            t.extend_from_slice(targets);
            let mut s = vec![sense; m.nrows() + 1];
            s[0] = RowSense::Eq;
            (f, t, s)
        };
        FeasiblePolytope::from_rows(grid, f, t, s)
    }

    /// Assemble from explicit rows. Row 0 must be the all-ones normalization
    /// row with target 1 and sense Eq.
    pub fn from_rows(
        grid: Vec<Point>,
        f: DMatrix<f64>,
        targets: Vec<f64>,
        senses: Vec<RowSense>,
    ) -> Result<Self> {
        let n = grid.len();
        if n == 0 {
            return Err(Error::invalid("empty grid"));
        }
        if f.ncols() != n {
            return Err(Error::invalid(format!(
                "constraint matrix has {} columns for {} grid points",
                f.ncols(),
                n
            )));
        }
        if f.nrows() == 0 || f.nrows() != targets.len() || f.nrows() != senses.len() {
            return Err(Error::invalid("row/target/sense counts differ"));
        }
        if !(0..n).all(|j| f[(0, j)] == 1.0) || (targets[0] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "row 0 must be the all-ones normalization row with target 1",
            ));
        }
        if senses[0] != RowSense::Eq {
            return Err(Error::invalid("normalization row must be an equality"));
        }
        for v in f.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("constraint matrix entry".into()));
            }
        }
        for v in &targets {
            if !v.is_finite() {
                return Err(Error::NonFinite("constraint target".into()));
            }
        }
        let redundant_rows = flag_redundant_rows(&f, DEFAULT_RANK_TOL);
        Ok(FeasiblePolytope {
            grid,
            f,
            targets,
            senses,
            rank_tol: DEFAULT_RANK_TOL,
            redundant_rows,
            feasibility: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn senses(&self) -> &[RowSense] {
        &self.senses
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// Rows that do not change the row space when removed (kept, flagged).
    pub fn redundant_rows(&self) -> &[usize] {
        &self.redundant_rows
    }

    /// More rows than grid columns: typical of restrictions to small
    /// supports. Feasibility is still decided by phase 1.
    pub fn over_constrained(&self) -> bool {
        self.f.nrows() > self.n()
    }

    /// Number of constraint rows beyond the normalization row.
    pub fn n_constraints(&self) -> usize {
        self.f.nrows() - 1
    }

    /// The polytope restricted to a subset of grid columns.
    pub fn restrict(&self, cols: &[usize]) -> Result<FeasiblePolytope> {
        let grid: Vec<Point> = cols.iter().map(|&j| self.grid[j].clone()).collect();
        let mut f = DMatrix::zeros(self.f.nrows(), cols.len());
        for (jj, &j) in cols.iter().enumerate() {
            f.column_mut(jj).copy_from(&self.f.column(j));
        }
        FeasiblePolytope::from_rows(grid, f, self.targets.clone(), self.senses.clone())
    }

    fn lp_senses(&self) -> Vec<Sense> {
        self.senses
            .iter()
            .map(|s| match s {
                RowSense::Eq => Sense::Eq,
                RowSense::Geq => Sense::Geq,
            })
            .collect()
    }

    fn row_vecs(&self) -> Vec<Vec<f64>> {
        (0..self.f.nrows())
            .map(|i| self.f.row(i).iter().cloned().collect())
            .collect()
    }

    fn vertex_from_x(&self, x: &[f64], basis: &[usize]) -> Vertex {
        let support: Vec<usize> = x
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > SUPPORT_TOL)
            .map(|(j, _)| j)
            .collect();
        let mut b = basis.to_vec();
        b.sort_unstable();
        Vertex {
            weights: x.to_vec(),
            support,
            basis: b,
        }
    }

    /// Phase-1 feasibility with a cached result: a feasible vertex or a
    /// Farkas certificate. Infeasibility is a value, not an error.
    pub fn check_feasible(&self) -> Result<&Feasibility> {
        if let Some(f) = self.feasibility.get() {
            return Ok(f);
        }
        let zero = vec![0.0; self.n()];
        let out = solve_lp(&self.row_vecs(), &self.lp_senses(), &self.targets, &zero, false)?;
        let fe = match out {
            LpOutcome::Optimal(sol) => Feasibility::Feasible(self.vertex_from_x(&sol.x, &sol.basis)),
            LpOutcome::Infeasible { farkas, residual } => {
                Feasibility::Infeasible(FarkasCertificate { y: farkas, residual })
            }
            LpOutcome::Unbounded => return Err(Error::Unbounded),
        };
        let _ = self.feasibility.set(fe);
        Ok(self.feasibility.get().expect("just set"))
    }

    pub fn is_feasible(&self) -> Result<bool> {
        Ok(matches!(self.check_feasible()?, Feasibility::Feasible(_)))
    }

    /// Optimize a linear functional over the polytope by dense two-phase
    /// simplex. The optimum is attained at a vertex, which is returned with
    /// the value and row duals.
    pub fn lp_optimize(&self, objective: &[f64], direction: Direction) -> Result<LpOptimum> {
        if objective.len() != self.n() {
            return Err(Error::invalid(format!(
                "objective length {} for {} grid points",
                objective.len(),
                self.n()
            )));
        }
        let out = solve_lp(
            &self.row_vecs(),
            &self.lp_senses(),
            &self.targets,
            objective,
            direction == Direction::Max,
        )?;
        match out {
            LpOutcome::Optimal(sol) => Ok(LpOptimum {
                vertex: self.vertex_from_x(&sol.x, &sol.basis),
                value: sol.value,
                dual: sol.dual,
            }),
            LpOutcome::Infeasible { farkas, residual } => Err(Error::Infeasible {
                certificate: farkas,
                residual,
            }),
            LpOutcome::Unbounded => Err(Error::Unbounded),
        }
    }

    /// Enumerate all vertices by examining column subsets (grid columns plus
    /// one slack column per Geq row), solving each square-or-thin system and
    /// keeping nonnegative consistent solutions. Deduplicated by support.
    /// Intended for small instances.
    pub fn enumerate_vertices(&self, cap: usize) -> Result<VertexEnumeration> {
        match self.check_feasible()? {
            Feasibility::Infeasible(_) => {
                return Ok(VertexEnumeration {
                    vertices: vec![],
                    complete: true,
                })
            }
            Feasibility::Feasible(_) => {}
        }
        let nrows = self.f.nrows();
        let n = self.n();
        let geq_rows: Vec<usize> = (0..nrows)
            .filter(|&i| self.senses[i] == RowSense::Geq)
            .collect();
        let n_ext = n + geq_rows.len();
        // extended column matrix [F | -e_geq]
        let mut ext = DMatrix::zeros(nrows, n_ext);
        ext.view_mut((0, 0), (nrows, n)).copy_from(&self.f);
        for (k, &i) in geq_rows.iter().enumerate() {
            ext[(i, n + k)] = -1.0;
        }
        let rank = nrows - self.redundant_rows.len();
        let c = DVector::from_column_slice(&self.targets);
        let scale_c = 1.0 + self.targets.iter().fold(0.0f64, |a, x| a.max(x.abs()));

        let mut seen: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
        let mut vertices: Vec<Vertex> = Vec::new();
        let mut complete = true;
        const SUBSET_GUARD: usize = 20_000_000;
        let mut examined = 0usize;

        'outer: for k in 1..=rank.min(n_ext) {
            for combo in (0..n_ext).combinations(k) {
                examined += 1;
                if examined > SUBSET_GUARD {
                    complete = false;
                    break 'outer;
                }
                let mut a = DMatrix::zeros(nrows, k);
                for (jj, &j) in combo.iter().enumerate() {
                    a.column_mut(jj).copy_from(&ext.column(j));
                }
                let svd = a.clone().svd(true, true);
                let smax = svd.singular_values.max();
                if smax <= 0.0 || svd.singular_values.min() <= self.rank_tol * smax {
                    continue; // dependent columns
                }
                let Ok(w) = svd.solve(&c, self.rank_tol * smax) else {
                    continue;
                };
                if w.iter().any(|&v| v < -1e-10) {
                    continue;
                }
                // residual check against all rows (Geq rows must not undershoot)
                let ax = &a * &w;
                let mut ok = true;
                for i in 0..nrows {
                    let r = ax[i] - c[i];
                    let bad = match self.senses[i] {
                        RowSense::Eq => r.abs() > 1e-10 * scale_c,
                        // slack columns make Geq rows equalities in the
                        // extended system only when their slack is selected
                        RowSense::Geq => r < -1e-10 * scale_c,
                    };
                    if bad {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let mut weights = vec![0.0; n];
                let mut basis = Vec::new();
                for (jj, &j) in combo.iter().enumerate() {
                    if j < n {
                        weights[j] = w[jj].max(0.0);
                        basis.push(j);
                    }
                }
                let support: Vec<usize> = (0..n).filter(|&j| weights[j] > SUPPORT_TOL).collect();
                let key_w: Vec<f64> = support.iter().map(|&j| weights[j]).collect();
                let dup = seen.iter().any(|(s, ws)| {
                    s == &support
                        && s.len() == key_w.len()
                        && ws
                            .iter()
                            .zip(&key_w)
                            .all(|(a, b)| (a - b).abs() <= 1e-8 * (1.0 + a.abs()))
                });
                if dup {
                    continue;
                }
                if vertices.len() >= cap {
                    complete = false;
                    break 'outer;
                }
                seen.push((support.clone(), key_w));
                vertices.push(Vertex {
                    weights,
                    support,
                    basis,
                });
            }
        }
        Ok(VertexEnumeration { vertices, complete })
    }

    /// Literal extreme-point checks for a vertex: feasibility residual,
    /// support bounded by the constraint count, and independence of the
    /// support columns at `rank_tol`.
    pub fn verify_vertex(&self, v: &Vertex) -> VertexCheck {
        let n = self.n();
        let mut feas = 0.0f64;
        for i in 0..self.f.nrows() {
            let mut dot = 0.0;
            for j in 0..n {
                dot += self.f[(i, j)] * v.weights[j];
            }
            let r = dot - self.targets[i];
            let viol = match self.senses[i] {
                RowSense::Eq => r.abs(),
                RowSense::Geq => (-r).max(0.0),
            };
            feas = feas.max(viol);
        }
        let neg = v.weights.iter().fold(0.0f64, |a, &w| a.max(-w));
        feas = feas.max(neg);
        let support_ok = v.support.len() <= self.f.nrows();
        let independent = if v.support.is_empty() {
            true
        } else {
            let mut a = DMatrix::zeros(self.f.nrows(), v.support.len());
            for (jj, &j) in v.support.iter().enumerate() {
                a.column_mut(jj).copy_from(&self.f.column(j));
            }
            let sv = a.svd(false, false).singular_values;
            sv.min() > self.rank_tol * sv.max()
        };
        VertexCheck {
            feasibility_residual: feas,
            support_ok,
            independent,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VertexCheck {
    pub feasibility_residual: f64,
    pub support_ok: bool,
    pub independent: bool,
}

/// Flag rows whose removal keeps the row space, by column-pivoted
/// Gram-Schmidt on the rows. The tolerance is relative to the largest pivot
/// norm.
fn flag_redundant_rows(f: &DMatrix<f64>, rank_tol: f64) -> Vec<usize> {
    let m = f.nrows();
    let n = f.ncols();
    let mut resid: Vec<DVector<f64>> = (0..m).map(|i| f.row(i).transpose()).collect();
    let mut selected = vec![false; m];
    let max0 = resid.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    if max0 == 0.0 {
        return (0..m).collect();
    }
    for _ in 0..m.min(n) {
        let mut best = 0usize;
        let mut best_norm = -1.0;
        for i in 0..m {
            if !selected[i] {
                let nm = resid[i].norm();
                if nm > best_norm {
                    best_norm = nm;
                    best = i;
                }
            }
        }
        if best_norm <= rank_tol * max0 {
            break;
        }
        selected[best] = true;
        let q = resid[best].clone() / best_norm;
        for i in 0..m {
            if !selected[i] {
                let proj = resid[i].dot(&q);
                resid[i] -= q.clone() * proj;
            }
        }
    }
    (0..m).filter(|&i| !selected[i]).collect()
}
