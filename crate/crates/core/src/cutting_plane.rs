//! Constraint generation over the z-space for the equality and inequality
//! problems: solve on a finite set of generated constraints, scan the
//! violation function over the z-grid, and add the worst points until the
//! violation is flat (equality) or nonnegative (inequality).

use crate::energy_qp::{minimize_energy_opts, QpOptions, SolveReport};
use crate::error::{Error, Result};
use crate::kernel::{assemble_energy_matrix, Kernel, Point};
use crate::measure::DiscreteMeasure;
use crate::polytope::{FeasiblePolytope, RowSense};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    /// Equality case: the sup norm of the violation fell below tol_psi.
    ConvergedPsiZero,
    /// Inequality case: the violation is nonnegative within tol_psi.
    ConvergedPsiNonneg,
    MaxIter,
    /// A generated constraint set is infeasible on the grid. The continuous
    /// problem may still be feasible; the grid is simply too coarse to carry
    /// these equalities.
    InnerInfeasible,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub z_set: Vec<Point>,
    pub energy: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_sup_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CuttingPlaneTrace {
    pub iterations: Vec<IterationRecord>,
    pub status: CpStatus,
}

#[derive(Debug, Clone)]
pub struct CuttingPlaneResult {
    pub trace: CuttingPlaneTrace,
    /// Final measure; None when the very first constraint set was infeasible.
    pub measure: Option<DiscreteMeasure>,
    pub weights: Option<Vec<f64>>,
    pub final_report: Option<SolveReport>,
    pub z_set: Vec<Point>,
}

#[derive(Debug, Clone)]
pub struct CpConfig {
    /// Sup-norm tolerance replacing the exact "psi identically zero" rule.
    pub tol_psi: f64,
    pub max_outer: usize,
    /// Duality-gap tolerance for the inner energy minimizations.
    pub inner_tol: f64,
    /// Starting z points; defaults to the first two grid points.
    pub initial_z: Option<Vec<Point>>,
    /// For 1-D z: refine grid extrema by 20 golden-section steps on the
    /// continuous violation before adding them.
    pub refine_extrema: bool,
}

impl Default for CpConfig {
    fn default() -> Self {
        CpConfig {
            tol_psi: 1e-6,
            max_outer: 40,
            inner_tol: 1e-10,
            initial_z: None,
            refine_extrema: true,
        }
    }
}

struct Instance<'a> {
    kernel: &'a Kernel,
    x_grid: &'a [Point],
    phi: &'a dyn Fn(&Point, &Point) -> f64,
    g: &'a dyn Fn(&Point) -> f64,
}

impl Instance<'_> {
    fn phi_row(&self, z: &Point) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.x_grid.len());
        for x in self.x_grid {
            let v = (self.phi)(x, z);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "section at x={:?}, z={:?}",
                    x.coords(),
                    z.coords()
                )));
            }
            row.push(v);
        }
        Ok(row)
    }

    fn target(&self, z: &Point) -> Result<f64> {
        let v = (self.g)(z);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("target g at z={:?}", z.coords())));
        }
        Ok(v)
    }

    fn psi_at(&self, w: &[f64], z: &Point) -> Result<f64> {
        let row = self.phi_row(z)?;
        let dot: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        Ok(dot - self.target(z)?)
    }

    fn build_polytope(&self, z_set: &[Point], sense: RowSense) -> Result<FeasiblePolytope> {
        let n = self.x_grid.len();
        let mut f = DMatrix::zeros(1 + z_set.len(), n);
        f.row_mut(0).fill(1.0);
        let mut targets = vec![1.0];
        for (i, z) in z_set.iter().enumerate() {
            let row = self.phi_row(z)?;
            for j in 0..n {
                f[(i + 1, j)] = row[j];
            }
            targets.push(self.target(z)?);
        }
        let mut senses = vec![sense; 1 + z_set.len()];
        senses[0] = RowSense::Eq;
        FeasiblePolytope::from_rows(self.x_grid.to_vec(), f, targets, senses)
    }
}

/// 20 golden-section steps minimizing f on [a, b].
fn golden_min(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<(f64, f64)> {
    const PHI: f64 = 0.618_033_988_749_894_8;
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - PHI * (hi - lo);
    let mut x2 = lo + PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..20 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + PHI * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

fn contains_z(z_set: &[Point], z: &Point, tol: f64) -> bool {
    z_set
        .iter()
        .any(|p| p.dist(z).map(|d| d <= tol).unwrap_or(false))
}

enum Variant {
    Equality,
    Inequality,
}

fn run(
    kernel: &Kernel,
    x_grid: &[Point],
    phi: &dyn Fn(&Point, &Point) -> f64,
    g: &dyn Fn(&Point) -> f64,
    z_grid: &[Point],
    cfg: &CpConfig,
    variant: Variant,
) -> Result<CuttingPlaneResult> {
    if z_grid.is_empty() {
        return Err(Error::invalid("z grid must be nonempty"));
    }
    let inst = Instance {
        kernel,
        x_grid,
        phi,
        g,
    };
    let k = assemble_energy_matrix(inst.kernel, x_grid)?;
    let sense = match variant {
        Variant::Equality => RowSense::Eq,
        Variant::Inequality => RowSense::Geq,
    };

    let mut z_set: Vec<Point> = match &cfg.initial_z {
        Some(zs) if !zs.is_empty() => zs.clone(),
        _ => z_grid.iter().take(2).cloned().collect(),
    };
    let z_scale = {
        let mut d: f64 = 0.0;
        for z in z_grid {
            d = d.max(z_grid[0].dist(z)?);
        }
        d.max(1.0)
    };
    let dup_tol = 1e-9 * z_scale;

    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut last_weights: Option<Vec<f64>> = None;
    let mut last_report: Option<SolveReport> = None;
    let status;

    let mut outer = 0usize;
    loop {
        if outer >= cfg.max_outer {
            status = CpStatus::MaxIter;
            break;
        }
        outer += 1;

        let p = inst.build_polytope(&z_set, sense)?;
        let opts = QpOptions {
            tol: cfg.inner_tol,
            max_iter: Some(200 * x_grid.len()),
            warm_start: last_weights.clone(),
            ..QpOptions::default()
        };
        let rep = match minimize_energy_opts(&k, &p, &opts) {
            Ok(rep) => rep,
            Err(Error::Infeasible { .. }) => {
                status = CpStatus::InnerInfeasible;
                break;
            }
            Err(e) => return Err(e),
        };

        // scan the violation over the whole z grid
        let mut psi = Vec::with_capacity(z_grid.len());
        for z in z_grid {
            psi.push(inst.psi_at(&rep.weights, z)?);
        }
        let (mut arg_min, mut arg_max) = (0usize, 0usize);
        for (j, &v) in psi.iter().enumerate() {
            if v < psi[arg_min] {
                arg_min = j;
            }
            if v > psi[arg_max] {
                arg_max = j;
            }
        }
        let psi_min = psi[arg_min];
        let psi_max = psi[arg_max];
        let sup = psi_min.abs().max(psi_max.abs());
        iterations.push(IterationRecord {
            z_set: z_set.clone(),
            energy: rep.value,
            psi_min,
            psi_max,
            psi_sup_norm: sup,
        });
        last_weights = Some(rep.weights.clone());
        last_report = Some(rep);

        let converged = match variant {
            Variant::Equality => sup <= cfg.tol_psi,
            Variant::Inequality => psi_min >= -cfg.tol_psi,
        };
        if converged {
            status = match variant {
                Variant::Equality => CpStatus::ConvergedPsiZero,
                Variant::Inequality => CpStatus::ConvergedPsiNonneg,
            };
            break;
        }

        // candidate new constraint points (the violation extrema), refined
        // on the continuous section when z is one-dimensional
        let w = last_weights.as_ref().expect("set above");
        let refine = |j: usize, minimize: bool| -> Result<Point> {
            if !cfg.refine_extrema || z_grid[0].dim() != 1 || z_grid.len() < 2 {
                return Ok(z_grid[j].clone());
            }
            let lo = z_grid[j.saturating_sub(1)].coords()[0];
            let hi = z_grid[(j + 1).min(z_grid.len() - 1)].coords()[0];
            if !(hi > lo) {
                return Ok(z_grid[j].clone());
            }
            let f = |t: f64| -> Result<f64> {
                let v = inst.psi_at(w, &Point::d1(t))?;
                Ok(if minimize { v } else { -v })
            };
            let (t, ft) = golden_min(&f, lo, hi)?;
            let grid_val = if minimize { psi[j] } else { -psi[j] };
            Ok(if ft < grid_val {
                Point::d1(t)
            } else {
                z_grid[j].clone()
            })
        };

        let mut candidates: Vec<Point> = Vec::new();
        match variant {
            Variant::Equality => {
                candidates.push(refine(arg_min, true)?);
                candidates.push(refine(arg_max, false)?);
            }
            Variant::Inequality => {
                candidates.push(refine(arg_min, true)?);
            }
        }
        let mut added = false;
        for cand in candidates {
            if !contains_z(&z_set, &cand, dup_tol) {
                z_set.push(cand);
                added = true;
            }
        }
        if !added {
            // both extrema already present: take the next-worst grid point
            let mut order: Vec<usize> = (0..z_grid.len()).collect();
            match variant {
                Variant::Equality => {
                    order.sort_by(|&a, &b| psi[b].abs().total_cmp(&psi[a].abs()))
                }
                Variant::Inequality => order.sort_by(|&a, &b| psi[a].total_cmp(&psi[b])),
            }
            for j in order {
                let worth_adding = match variant {
                    Variant::Equality => psi[j].abs() > cfg.tol_psi,
                    Variant::Inequality => psi[j] < -cfg.tol_psi,
                };
                if worth_adding && !contains_z(&z_set, &z_grid[j], dup_tol) {
                    z_set.push(z_grid[j].clone());
                    added = true;
                    break;
                }
            }
            if !added {
                status = CpStatus::MaxIter;
                break;
            }
        }
    }

    let measure = match (&last_weights, &status) {
        (Some(w), _) => Some(DiscreteMeasure::from_weights_normalized(x_grid, w)?),
        (None, _) => None,
    };
    Ok(CuttingPlaneResult {
        trace: CuttingPlaneTrace { iterations, status },
        measure,
        weights: last_weights,
        final_report: last_report,
        z_set,
    })
}

/// Equality-constrained constraint generation: add both the minimum and the
/// maximum of the violation each round, stop when the violation is flat on
/// the z grid.
pub fn run_equality(
    kernel: &Kernel,
    x_grid: &[Point],
    phi: &dyn Fn(&Point, &Point) -> f64,
    g: &dyn Fn(&Point) -> f64,
    z_grid: &[Point],
    cfg: &CpConfig,
) -> Result<CuttingPlaneResult> {
    run(kernel, x_grid, phi, g, z_grid, cfg, Variant::Equality)
}

/// Inequality-constrained variant: only the violation minimum is added each
/// round, stop when the violation is nonnegative on the z grid.
pub fn run_inequality(
    kernel: &Kernel,
    x_grid: &[Point],
    phi: &dyn Fn(&Point, &Point) -> f64,
    g: &dyn Fn(&Point) -> f64,
    z_grid: &[Point],
    cfg: &CpConfig,
) -> Result<CuttingPlaneResult> {
    run(kernel, x_grid, phi, g, z_grid, cfg, Variant::Inequality)
}
