//! Problem files: a single JSON document determines a run (kernel, grids,
//! constraints, tolerances, seeds). Tabulated kernels and families arrive as
//! CSV side files referenced by path, resolved relative to the problem file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cutting_plane::{run_equality, run_inequality, CpConfig, CpStatus, CuttingPlaneResult};
use crate::energy_qp::{minimize_energy_opts, sweep_mass, QpOptions, SolveReport, SweepResult};
use crate::error::{Error, Result};
use crate::family::{FunctionFamily, SectionFn};
use crate::io;
use crate::kernel::{
    assemble_energy_matrix, default_epsilon, grid_1d, tensor_grid, DiagonalPolicy, Kernel, Point,
};
use crate::polytope::{FeasiblePolytope, RowSense};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// "log" | "riesz" | "newton" | "table"
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub table_csv: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    /// "monomial" | "power" | "exp" | "cosh" | "sections" | "table"
    pub kind: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub z_points: Option<Vec<f64>>,
    /// Section shape for "sections": "exp" | "pow" | "cosh".
    #[serde(default)]
    pub phi: Option<String>,
    #[serde(default)]
    pub table_csv: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GSpec {
    /// "constant" | "uniform_transform" | "values"
    pub kind: String,
    #[serde(default)]
    pub value: Option<f64>,
    /// Values aligned with the z grid.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ZSpec {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HSpec {
    /// "constant" | "identity" | "values"
    pub kind: String,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub away_steps: Option<bool>,
    #[serde(default)]
    pub corrective: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// "equilibrium" | "cutting_plane_eq" | "cutting_plane_ineq" | "sweep_mass"
    pub mode: String,
    pub kernel: KernelSpec,
    /// Box corners [lo..., hi...]; 1-D when single-element lists.
    #[serde(rename = "box", default)]
    pub domain: Option<[Vec<f64>; 2]>,
    /// Grid points per axis.
    #[serde(default)]
    pub grid_n: Option<usize>,
    #[serde(default)]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub targets: Option<Vec<f64>>,
    /// "eq" | "geq" for the family rows.
    #[serde(default)]
    pub sense: Option<String>,
    /// Section shape for cutting-plane runs: "exp" | "pow" | "cosh".
    #[serde(default)]
    pub phi: Option<String>,
    #[serde(default)]
    pub g: Option<GSpec>,
    #[serde(default)]
    pub z: Option<ZSpec>,
    #[serde(default)]
    pub h: Option<HSpec>,
    #[serde(default)]
    pub c_range: Option<[f64; 2]>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub tol_psi: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub max_outer: Option<usize>,
    /// Refine z-extrema by golden section before adding them (default true).
    #[serde(default)]
    pub refine_extrema: Option<bool>,
    #[serde(default)]
    pub m_max: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub solver: Option<SolverSpec>,
    /// Second constraint side for the swap check.
    #[serde(default)]
    pub family_b: Option<FamilySpec>,
    #[serde(default)]
    pub targets_b: Option<Vec<f64>>,
}

/// A parsed problem with its base directory for side files.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub base_dir: PathBuf,
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    let text = fs::read_to_string(path)?;
    let file: ProblemFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(Problem {
        file,
        base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

pub fn parse_problem_str(text: &str, base_dir: &Path) -> Result<Problem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(Problem {
        file,
        base_dir: base_dir.to_path_buf(),
    })
}

impl Problem {
    pub fn grid(&self) -> Result<Vec<Point>> {
        let n = self
            .file
            .grid_n
            .ok_or_else(|| Error::invalid("grid_n is required"))?;
        if n == 0 {
            return Err(Error::invalid("grid_n must be positive"));
        }
        let domain = self
            .file
            .domain
            .clone()
            .unwrap_or([vec![-1.0], vec![1.0]]);
        let [lo, hi] = domain;
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("box corners must have equal positive dimension"));
        }
        if lo.len() == 1 {
            Ok(grid_1d(lo[0], hi[0], n))
        } else {
            Ok(tensor_grid(&lo, &hi, n))
        }
    }

    pub fn kernel(&self, grid: &[Point]) -> Result<Kernel> {
        let spec = &self.file.kernel;
        let epsilon = match spec.epsilon {
            Some(e) => e,
            None => {
                if grid.len() >= 2 {
                    default_epsilon(grid)?
                } else {
                    1e-6
                }
            }
        };
        let policy = DiagonalPolicy::Regularized { epsilon };
        let kernel = match spec.kind.as_str() {
            "log" => Kernel::logarithmic(policy),
            "riesz" => {
                let s = spec
                    .s
                    .ok_or_else(|| Error::invalid("riesz kernel needs s"))?;
                Kernel::riesz(s, policy)?
            }
            "newton" => {
                let d = spec.d.unwrap_or_else(|| grid[0].dim());
                Kernel::newtonian(d, policy)?
            }
            "table" => {
                let rel = spec
                    .table_csv
                    .as_ref()
                    .ok_or_else(|| Error::invalid("table kernel needs table_csv"))?;
                let m = io::read_matrix_csv(fs::File::open(self.base_dir.join(rel))?)?;
                if m.nrows() != grid.len() {
                    return Err(Error::invalid(format!(
                        "table kernel is {}x{}, grid has {} points",
                        m.nrows(),
                        m.ncols(),
                        grid.len()
                    )));
                }
                Kernel::tabulated(grid.to_vec(), m, policy)?
            }
            other => return Err(Error::invalid(format!("unknown kernel type '{other}'"))),
        };
        // record the nonnegativity shift for the working box
        let domain = self
            .file
            .domain
            .clone()
            .unwrap_or([vec![-1.0], vec![1.0]]);
        let lo = Point::new(domain[0].clone());
        let hi = Point::new(domain[1].clone());
        if lo.dist(&hi).map(|d| d > 0.0).unwrap_or(false) {
            kernel.shifted_for_box(&lo, &hi)
        } else {
            Ok(kernel)
        }
    }

    pub fn family(&self, grid: &[Point]) -> Result<Option<FunctionFamily>> {
        match &self.file.family {
            None => Ok(None),
            Some(spec) => Ok(Some(self.build_family(spec, grid)?)),
        }
    }

    fn build_family(&self, spec: &FamilySpec, grid: &[Point]) -> Result<FunctionFamily> {
        match spec.kind.as_str() {
            "monomial" => {
                let n = spec
                    .n
                    .ok_or_else(|| Error::invalid("monomial family needs n"))?;
                FunctionFamily::monomial(n)
            }
            "power" => FunctionFamily::power(
                spec.lambdas
                    .clone()
                    .ok_or_else(|| Error::invalid("power family needs lambdas"))?,
            ),
            "exp" => FunctionFamily::exponential(
                spec.lambdas
                    .clone()
                    .ok_or_else(|| Error::invalid("exp family needs lambdas"))?,
            ),
            "cosh" => FunctionFamily::cosh(
                spec.lambdas
                    .clone()
                    .ok_or_else(|| Error::invalid("cosh family needs lambdas"))?,
            ),
            "sections" => {
                let phi = section_fn(
                    spec.phi
                        .as_deref()
                        .ok_or_else(|| Error::invalid("sections family needs phi"))?,
                )?;
                let zs = spec
                    .z_points
                    .clone()
                    .ok_or_else(|| Error::invalid("sections family needs z_points"))?;
                FunctionFamily::sections(phi, zs.into_iter().map(Point::d1).collect())
            }
            "table" => {
                let rel = spec
                    .table_csv
                    .as_ref()
                    .ok_or_else(|| Error::invalid("table family needs table_csv"))?;
                let m = io::read_matrix_csv(fs::File::open(self.base_dir.join(rel))?)?;
                FunctionFamily::tabulated(grid.to_vec(), m)
            }
            other => Err(Error::invalid(format!("unknown family kind '{other}'"))),
        }
    }

    pub fn sense(&self) -> Result<RowSense> {
        match self.file.sense.as_deref() {
            None | Some("eq") => Ok(RowSense::Eq),
            Some("geq") => Ok(RowSense::Geq),
            Some(other) => Err(Error::invalid(format!("unknown sense '{other}'"))),
        }
    }

    pub fn z_grid(&self) -> Result<Vec<Point>> {
        let spec = self
            .file
            .z
            .as_ref()
            .ok_or_else(|| Error::invalid("cutting-plane modes need a z grid"))?;
        if let Some(points) = &spec.points {
            if points.is_empty() {
                return Err(Error::invalid("z.points must be nonempty"));
            }
            return Ok(points.iter().copied().map(Point::d1).collect());
        }
        let (lo, hi, n) = (
            spec.lo.ok_or_else(|| Error::invalid("z needs lo"))?,
            spec.hi.ok_or_else(|| Error::invalid("z needs hi"))?,
            spec.n.ok_or_else(|| Error::invalid("z needs n"))?,
        );
        Ok(grid_1d(lo, hi, n))
    }

    pub fn phi_fn(&self) -> Result<SectionFn> {
        section_fn(
            self.file
                .phi
                .as_deref()
                .ok_or_else(|| Error::invalid("cutting-plane modes need phi"))?,
        )
    }

    pub fn g_fn(&self, z_grid: &[Point]) -> Result<Arc<dyn Fn(&Point) -> f64 + Send + Sync>> {
        let spec = self
            .file
            .g
            .as_ref()
            .ok_or_else(|| Error::invalid("cutting-plane modes need g"))?;
        match spec.kind.as_str() {
            "constant" => {
                let v = spec
                    .value
                    .ok_or_else(|| Error::invalid("constant g needs value"))?;
                Ok(Arc::new(move |_z: &Point| v))
            }
            "uniform_transform" => Ok(Arc::new(|z: &Point| {
                let t = z.coords()[0];
                if t == 0.0 {
                    1.0
                } else {
                    (1.0 - (-t).exp()) / t
                }
            })),
            "values" => {
                let values = spec
                    .values
                    .clone()
                    .ok_or_else(|| Error::invalid("g values missing"))?;
                if values.len() != z_grid.len() {
                    return Err(Error::invalid("g values must align with the z grid"));
                }
                let table: Vec<(Vec<u64>, f64)> = z_grid
                    .iter()
                    .zip(&values)
                    .map(|(p, &v)| (p.bit_key(), v))
                    .collect();
                // off-grid z (from extremum refinement) interpolate linearly
                let zs: Vec<f64> = z_grid.iter().map(|p| p.coords()[0]).collect();
                let vs = values;
                Ok(Arc::new(move |z: &Point| {
                    let key = z.bit_key();
                    if let Some((_, v)) = table.iter().find(|(k, _)| *k == key) {
                        return *v;
                    }
                    let t = z.coords()[0];
                    match zs.binary_search_by(|a| a.total_cmp(&t)) {
                        Ok(i) => vs[i],
                        Err(0) => vs[0],
                        Err(i) if i >= zs.len() => vs[zs.len() - 1],
                        Err(i) => {
                            let w = (t - zs[i - 1]) / (zs[i] - zs[i - 1]);
                            vs[i - 1] * (1.0 - w) + vs[i] * w
                        }
                    }
                }))
            }
            other => Err(Error::invalid(format!("unknown g kind '{other}'"))),
        }
    }

    pub fn h_values(&self, grid: &[Point]) -> Result<Vec<f64>> {
        let spec = self
            .file
            .h
            .as_ref()
            .ok_or_else(|| Error::invalid("sweep_mass needs h"))?;
        match spec.kind.as_str() {
            "constant" => {
                let v = spec
                    .value
                    .ok_or_else(|| Error::invalid("constant h needs value"))?;
                Ok(vec![v; grid.len()])
            }
            "identity" => Ok(grid.iter().map(|p| p.coords()[0]).collect()),
            "values" => {
                let values = spec
                    .values
                    .clone()
                    .ok_or_else(|| Error::invalid("h values missing"))?;
                if values.len() != grid.len() {
                    return Err(Error::invalid("h values must align with the grid"));
                }
                Ok(values)
            }
            other => Err(Error::invalid(format!("unknown h kind '{other}'"))),
        }
    }

    pub fn qp_options(&self) -> QpOptions {
        let mut qp = QpOptions {
            tol: self.file.tol.unwrap_or(1e-8),
            max_iter: self.file.max_iter,
            ..QpOptions::default()
        };
        if let Some(s) = &self.file.solver {
            if let Some(a) = s.away_steps {
                qp.away_steps = a;
            }
            if let Some(c) = s.corrective {
                qp.corrective = c;
            }
        }
        qp
    }

    pub fn polytope(&self, grid: &[Point]) -> Result<FeasiblePolytope> {
        match (self.family(grid)?, &self.file.targets) {
            (Some(fam), Some(targets)) => {
                FeasiblePolytope::build(grid.to_vec(), &fam, targets, self.sense()?)
            }
            (None, None) => FeasiblePolytope::simplex(grid.to_vec()),
            (Some(_), None) => Err(Error::invalid("family given without targets")),
            (None, Some(_)) => Err(Error::invalid("targets given without a family")),
        }
    }
}

fn section_fn(name: &str) -> Result<SectionFn> {
    match name {
        "exp" => Ok(Arc::new(|x: &Point, z: &Point| {
            (-z.coords()[0] * x.coords()[0]).exp()
        })),
        "pow" => Ok(Arc::new(|x: &Point, z: &Point| {
            let e = z.coords()[0];
            if e.fract() == 0.0 && e.abs() < 1e9 {
                x.coords()[0].powi(e as i32)
            } else {
                x.coords()[0].powf(e)
            }
        })),
        "cosh" => Ok(Arc::new(|x: &Point, z: &Point| {
            (z.coords()[0] * x.coords()[0]).cosh()
        })),
        other => Err(Error::invalid(format!("unknown section shape '{other}'"))),
    }
}

/// What a solve run produced, with enough detail for exit-code decisions.
#[derive(Debug)]
pub enum RunOutcome {
    Equilibrium {
        report: SolveReport,
        shift: f64,
        converged: bool,
    },
    CuttingPlane {
        result: CuttingPlaneResult,
        shift: f64,
    },
    Sweep {
        result: SweepResult,
    },
}

/// Dispatch a solve run and write artifacts (measure CSV, trace CSV, report
/// text) into `out_dir`.
pub fn run_solve(problem: &Problem, out_dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    match problem.file.mode.as_str() {
        "equilibrium" => {
            let grid = problem.grid()?;
            let kernel = problem.kernel(&grid)?;
            let k = assemble_energy_matrix(&kernel, &grid)?;
            let p = problem.polytope(&grid)?;
            let qp = problem.qp_options();
            let report = minimize_energy_opts(&k, &p, &qp)?;
            let mu = crate::measure::DiscreteMeasure::from_weights_normalized(&grid, &report.weights)?;
            io::write_measure_csv(fs::File::create(out_dir.join("measure.csv"))?, &mu)?;
            io::write_solve_report(
                fs::File::create(out_dir.join("report.txt"))?,
                &report,
                kernel.shift(),
            )?;
            let converged = report.duality_gap <= qp.tol;
            Ok(RunOutcome::Equilibrium {
                report,
                shift: kernel.shift(),
                converged,
            })
        }
        "cutting_plane_eq" | "cutting_plane_ineq" => {
            let grid = problem.grid()?;
            let kernel = problem.kernel(&grid)?;
            let z_grid = problem.z_grid()?;
            let phi = problem.phi_fn()?;
            let g = problem.g_fn(&z_grid)?;
            let cfg = CpConfig {
                tol_psi: problem.file.tol_psi.unwrap_or(1e-6),
                max_outer: problem.file.max_outer.unwrap_or(40),
                inner_tol: problem.file.tol.unwrap_or(1e-10),
                refine_extrema: problem.file.refine_extrema.unwrap_or(true),
                ..CpConfig::default()
            };
            let result = if problem.file.mode == "cutting_plane_eq" {
                run_equality(&kernel, &grid, &*phi, &*g, &z_grid, &cfg)?
            } else {
                run_inequality(&kernel, &grid, &*phi, &*g, &z_grid, &cfg)?
            };
            io::write_trace_csv(fs::File::create(out_dir.join("trace.csv"))?, &result.trace)?;
            if let Some(mu) = &result.measure {
                io::write_measure_csv(fs::File::create(out_dir.join("measure.csv"))?, mu)?;
            }
            if let Some(rep) = &result.final_report {
                io::write_solve_report(
                    fs::File::create(out_dir.join("report.txt"))?,
                    rep,
                    kernel.shift(),
                )?;
            }
            Ok(RunOutcome::CuttingPlane {
                result,
                shift: kernel.shift(),
            })
        }
        "sweep_mass" => {
            let grid = problem.grid()?;
            let kernel = problem.kernel(&grid)?;
            let f = assemble_energy_matrix(&kernel, &grid)?;
            let h = problem.h_values(&grid)?;
            let fam = problem.family(&grid)?;
            let g: Vec<f64> = problem.file.targets.clone().unwrap_or_default();
            let [c1, c2] = problem
                .file
                .c_range
                .ok_or_else(|| Error::invalid("sweep_mass needs c_range"))?;
            let steps = problem.file.steps.unwrap_or(16);
            let qp = problem.qp_options();
            let result = sweep_mass(
                f.entries(),
                &grid,
                &h,
                fam.as_ref(),
                &g,
                problem.sense()?,
                (c1, c2),
                steps,
                &qp,
            )?;
            let mu = crate::measure::DiscreteMeasure::from_weights_normalized(
                &grid,
                &result.report.weights,
            )?;
            io::write_measure_csv(fs::File::create(out_dir.join("measure.csv"))?, &mu)?;
            let mut rep = fs::File::create(out_dir.join("report.txt"))?;
            use std::io::Write;
            writeln!(rep, "best_c: {}", result.best_c)?;
            writeln!(rep, "objective: {}", result.best_objective)?;
            io::write_solve_report(rep, &result.report, 0.0)?;
            Ok(RunOutcome::Sweep { result })
        }
        other => Err(Error::invalid(format!("unknown mode '{other}'"))),
    }
}

/// True when the outcome should map to the non-convergence exit code.
pub fn outcome_converged(outcome: &RunOutcome) -> bool {
    match outcome {
        RunOutcome::Equilibrium { converged, .. } => *converged,
        RunOutcome::CuttingPlane { result, .. } => matches!(
            result.trace.status,
            CpStatus::ConvergedPsiZero | CpStatus::ConvergedPsiNonneg
        ),
        RunOutcome::Sweep { .. } => true,
    }
}

/// True when the outcome hit an infeasible constraint system.
pub fn outcome_infeasible(outcome: &RunOutcome) -> bool {
    match outcome {
        RunOutcome::CuttingPlane { result, .. } => {
            matches!(result.trace.status, CpStatus::InnerInfeasible)
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_equilibrium_file() {
        let text = r#"{
            "mode": "equilibrium",
            "kernel": {"type": "log"},
            "box": [[-1.0], [1.0]],
            "grid_n": 50
        }"#;
        let p = parse_problem_str(text, Path::new(".")).unwrap();
        let grid = p.grid().unwrap();
        assert_eq!(grid.len(), 50);
        let k = p.kernel(&grid).unwrap();
        assert!(k.shift() > 0.0, "log kernel on [-1,1] needs a shift");
    }

    #[test]
    fn parse_error_has_location() {
        let text = "{\n  \"mode\": oops\n}";
        let e = parse_problem_str(text, Path::new("."));
        assert!(matches!(e, Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"mode": "equilibrium", "kernel": {"type": "log"}, "grid_n": 10, "boxx": 1}"#;
        assert!(parse_problem_str(text, Path::new(".")).is_err());
    }

    #[test]
    fn g_values_interpolate_off_grid() {
        let text = r#"{
            "mode": "cutting_plane_eq",
            "kernel": {"type": "log"},
            "box": [[0.0], [1.0]],
            "grid_n": 10,
            "phi": "exp",
            "g": {"kind": "values", "values": [0.0, 1.0, 2.0]},
            "z": {"lo": 0.0, "hi": 2.0, "n": 3}
        }"#;
        let p = parse_problem_str(text, Path::new(".")).unwrap();
        let z = p.z_grid().unwrap();
        let g = p.g_fn(&z).unwrap();
        assert_eq!(g(&Point::d1(1.0)), 1.0);
        assert_eq!(g(&Point::d1(0.5)), 0.5);
        assert_eq!(g(&Point::d1(5.0)), 2.0);
    }
}
