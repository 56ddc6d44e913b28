//! Dense two-phase tableau simplex.
//!
//! Entering column: most-negative reduced cost, ties broken by smallest
//! index; after a stretch of non-improving pivots the rule switches to
//! Bland's (smallest index with negative reduced cost), which guarantees
//! termination. Artificial variables are added for every row so that row
//! duals and Farkas certificates can be read off the final objective row
//! uniformly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Eq,
    Geq,
    Leq,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    /// Structural variable values.
    pub x: Vec<f64>,
    /// Objective value in the caller's orientation.
    pub value: f64,
    /// Row duals in the caller's row order and orientation.
    pub dual: Vec<f64>,
    /// Basic structural columns, one entry per non-degenerate basic row.
    pub basis: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum LpOutcome {
    Optimal(LpSolution),
    Infeasible {
        /// Farkas-type dual vector in the caller's row order.
        farkas: Vec<f64>,
        residual: f64,
    },
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;

struct Tableau {
    m: usize,
    total: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
    bland: bool,
    stall: usize,
    last_obj: f64,
}

impl Tableau {
    fn objective_value(&self, costs: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.m {
            v += costs[self.basis[i]] * self.rhs[i];
        }
        v
    }

    fn rebuild_obj(&mut self, costs: &[f64]) {
        self.obj = costs.to_vec();
        for i in 0..self.m {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for j in 0..self.total {
                    self.obj[j] -= cb * self.rows[i][j];
                }
            }
        }
        self.bland = false;
        self.stall = 0;
        self.last_obj = f64::INFINITY;
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let piv = self.rows[r][e];
        let inv = 1.0 / piv;
        for j in 0..self.total {
            self.rows[r][j] *= inv;
        }
        self.rows[r][e] = 1.0;
        self.rhs[r] *= inv;
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.rows[i][e];
            if f != 0.0 {
                for j in 0..self.total {
                    self.rows[i][j] -= f * self.rows[r][j];
                }
                self.rows[i][e] = 0.0;
                self.rhs[i] -= f * self.rhs[r];
            }
        }
        let f = self.obj[e];
        if f != 0.0 {
            for j in 0..self.total {
                self.obj[j] -= f * self.rows[r][j];
            }
            self.obj[e] = 0.0;
        }
        self.basis[r] = e;
    }

    /// Minimize the current objective row over allowed columns. Returns false
    /// when the problem is unbounded in this phase.
    fn optimize(&mut self, allowed: &dyn Fn(usize) -> bool, costs: &[f64]) -> Result<bool> {
        let max_iters = 10_000 + 200 * (self.m + self.total);
        let scale = 1.0 + costs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        for _ in 0..max_iters {
            // entering column
            let mut enter = None;
            if self.bland {
                for j in 0..self.total {
                    if allowed(j) && self.obj[j] < -COST_TOL * scale {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -COST_TOL * scale;
                for j in 0..self.total {
                    if allowed(j) && self.obj[j] < best {
                        best = self.obj[j];
                        enter = Some(j);
                    }
                }
            }
            let Some(e) = enter else {
                return Ok(true);
            };
            // ratio test; ties by smallest basis variable index (Bland-safe)
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.m {
                if !self.active[i] {
                    continue;
                }
                let a = self.rows[i][e];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-12 * (1.0 + best_ratio.abs())
                                || (ratio <= best_ratio + 1e-12 * (1.0 + best_ratio.abs())
                                    && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(r) = leave else {
                return Ok(false); // unbounded direction
            };
            self.pivot(r, e);
            let obj = self.objective_value(costs);
            if obj < self.last_obj - 1e-12 * (1.0 + self.last_obj.abs()) {
                self.stall = 0;
            } else {
                self.stall += 1;
                if self.stall > 16 + 4 * self.m {
                    self.bland = true;
                }
            }
            self.last_obj = obj;
        }
        Err(Error::invalid(
            "simplex iteration cap exceeded; numerical trouble".to_string(),
        ))
    }
}

/// Solve min/max of `objective . x` over structural x >= 0 subject to the
/// given rows. `rows[i]` has one coefficient per structural column.
pub(crate) fn solve_lp(
    rows: &[Vec<f64>],
    senses: &[Sense],
    b: &[f64],
    objective: &[f64],
    maximize: bool,
) -> Result<LpOutcome> {
    let m = rows.len();
    let n = objective.len();
    assert_eq!(senses.len(), m);
    assert_eq!(b.len(), m);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), n, "row {i} length");
    }

    // orient rows so rhs >= 0
    let mut flip = vec![1.0f64; m];
    let mut sense = senses.to_vec();
    for i in 0..m {
        if b[i] < 0.0 {
            flip[i] = -1.0;
            sense[i] = match sense[i] {
                Sense::Eq => Sense::Eq,
                Sense::Geq => Sense::Leq,
                Sense::Leq => Sense::Geq,
            };
        }
    }

    let n_slack = sense.iter().filter(|s| **s != Sense::Eq).count();
    let total = n + n_slack + m; // structural + slacks + artificials
    let art0 = n + n_slack;

    let mut t = Tableau {
        m,
        total,
        rows: vec![vec![0.0; total]; m],
        rhs: vec![0.0; m],
        obj: vec![0.0; total],
        basis: vec![0; m],
        active: vec![true; m],
        bland: false,
        stall: 0,
        last_obj: f64::INFINITY,
    };

    let mut slack_col = n;
    for i in 0..m {
        for j in 0..n {
            t.rows[i][j] = flip[i] * rows[i][j];
        }
        t.rhs[i] = flip[i] * b[i];
        match sense[i] {
            Sense::Eq => {}
            Sense::Geq => {
                t.rows[i][slack_col] = -1.0;
                slack_col += 1;
            }
            Sense::Leq => {
                t.rows[i][slack_col] = 1.0;
                slack_col += 1;
            }
        }
        t.rows[i][art0 + i] = 1.0;
        t.basis[i] = art0 + i;
    }

    // phase 1: minimize the sum of artificials
    let mut costs1 = vec![0.0; total];
    for j in art0..total {
        costs1[j] = 1.0;
    }
    t.rebuild_obj(&costs1);
    let bounded = t.optimize(&|_j| true, &costs1)?;
    debug_assert!(bounded, "phase 1 is always bounded below by zero");
    let residual = t.objective_value(&costs1);
    let feas_tol = 1e-9 * (1.0 + b.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    if residual > feas_tol {
        // farkas: y_i = 1 - reduced cost of artificial i, then undo row flips
        let mut farkas = vec![0.0; m];
        for i in 0..m {
            farkas[i] = flip[i] * (1.0 - t.obj[art0 + i]);
        }
        return Ok(LpOutcome::Infeasible { farkas, residual });
    }

    // drive artificials out of the basis, deactivating redundant rows
    for i in 0..m {
        if t.basis[i] >= art0 {
            let mut pivoted = false;
            for j in 0..art0 {
                if t.rows[i][j].abs() > 1e-9 {
                    t.pivot(i, j);
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                t.active[i] = false; // redundant row, stays at level ~0
            }
        }
    }

    // phase 2
    let mut costs2 = vec![0.0; total];
    for j in 0..n {
        costs2[j] = if maximize { -objective[j] } else { objective[j] };
    }
    t.rebuild_obj(&costs2);
    let art_start = art0;
    let bounded = t.optimize(&|j| j < art_start, &costs2)?;
    if !bounded {
        return Ok(LpOutcome::Unbounded);
    }

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rhs[i];
        }
    }
    let min_value = t.objective_value(&costs2);
    let value = if maximize { -min_value } else { min_value };
    // duals from the artificial columns: reduced cost of art_i = -y_i
    let mut dual = vec![0.0; m];
    for i in 0..m {
        let y = -t.obj[art0 + i];
        dual[i] = flip[i] * if maximize { -y } else { y };
    }
    let basis: Vec<usize> = t
        .basis
        .iter()
        .copied()
        .filter(|&j| j < n)
        .collect();
    Ok(LpOutcome::Optimal(LpSolution {
        x,
        value,
        dual,
        basis,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn simplex_max_on_unit_simplex() {
        let rows = vec![vec![1.0, 1.0, 1.0]];
        let out = solve_lp(
            &rows,
            &[Sense::Eq],
            &[1.0],
            &[3.0, 1.0, 2.0],
            true,
        )
        .unwrap();
        let LpOutcome::Optimal(sol) = out else {
            panic!("expected optimal")
        };
        assert!((sol.value - 3.0).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_infeasible_has_farkas() {
        // x1 + x2 = 1 and x1 + x2 = 2 cannot both hold
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let out = solve_lp(
            &rows,
            &[Sense::Eq, Sense::Eq],
            &[1.0, 2.0],
            &[0.0, 0.0],
            false,
        )
        .unwrap();
        let LpOutcome::Infeasible { farkas, residual } = out else {
            panic!("expected infeasible")
        };
        assert!(residual > 0.5);
        // certificate: y.b > 0 while y.A_j <= 0 for all structural columns
        let yb = farkas[0] * 1.0 + farkas[1] * 2.0;
        let ya = farkas[0] + farkas[1];
        assert!(yb > 1e-6, "y.b = {yb}");
        assert!(ya <= 1e-9, "y.A = {ya}");
    }

    #[test]
    fn simplex_geq_rows() {
        // min x1 + x2 s.t. x1 + 2 x2 >= 2, x1, x2 >= 0
        let out = solve_lp(
            &[vec![1.0, 2.0]],
            &[Sense::Geq],
            &[2.0],
            &[1.0, 1.0],
            false,
        )
        .unwrap();
        let LpOutcome::Optimal(sol) = out else {
            panic!("expected optimal")
        };
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!((sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_unbounded_detected() {
        // max x1 with only a Geq row never binds from above
        let out = solve_lp(&[vec![1.0]], &[Sense::Geq], &[1.0], &[1.0], true).unwrap();
        assert!(matches!(out, LpOutcome::Unbounded));
    }

    #[test]
    fn duality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(3..8);
            let m = rng.random_range(1..4);
            let mut rows = vec![vec![0.0; n]; m];
            rows[0] = vec![1.0; n]; // normalization keeps things bounded
            for row in rows.iter_mut().skip(1) {
                for v in row.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let mut b = vec![1.0];
            // feasible targets: evaluate rows at a random simplex point
            let mut w = vec![0.0; n];
            for v in w.iter_mut() {
                *v = rng.random::<f64>();
            }
            let s: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= s;
            }
            for row in rows.iter().skip(1) {
                let dot: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                b.push(dot);
            }
            let senses = vec![Sense::Eq; m];
            let mut obj = vec![0.0; n];
            for v in obj.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let out = solve_lp(&rows, &senses, &b, &obj, false).unwrap();
            let LpOutcome::Optimal(sol) = out else {
                panic!("expected optimal")
            };
            let dual_value: f64 = sol.dual.iter().zip(&b).map(|(y, bb)| y * bb).sum();
            assert!(
                (sol.value - dual_value).abs() <= 1e-9 * (1.0 + sol.value.abs()),
                "duality gap: {} vs {}",
                sol.value,
                dual_value
            );
        }
    }

    #[test]
    fn redundant_rows_handled() {
        // duplicated equality row must not break the solve
        let rows = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, -1.0]];
        let out = solve_lp(
            &rows,
            &[Sense::Eq, Sense::Eq, Sense::Eq],
            &[1.0, 1.0, 0.0],
            &[1.0, 0.0],
            false,
        )
        .unwrap();
        let LpOutcome::Optimal(sol) = out else {
            panic!("expected optimal")
        };
        assert!((sol.x[0] - 0.5).abs() < 1e-10);
        assert!((sol.x[1] - 0.5).abs() < 1e-10);
    }
}
