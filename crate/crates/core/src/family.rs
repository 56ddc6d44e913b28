//! Constraint function families: Chebyshev-type systems, sampled
//! verification of the Chebyshev property, and moment-feasibility tests for
//! monomial and exponential families.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::Point;
use crate::polytope::{self, Feasibility, FeasiblePolytope, RowSense};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type SectionFn = Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>;

/// An ordered family of scalar constraint functions f_0, ..., f_n.
#[derive(Clone)]
pub enum FamilyKind {
    /// 1, x, ..., x^n on the line.
    Monomial { degree: usize },
    /// x^l for exponents 0 = l_0 < l_1 < ... < l_n, on positive grids.
    Power { exponents: Vec<f64> },
    /// exp(-l x) for rates 0 = l_0 < l_1 < ... < l_n.
    Exponential { rates: Vec<f64> },
    /// cosh(l x) for rates 0 = l_0 < l_1 < ... < l_n.
    Cosh { rates: Vec<f64> },
    /// Sections of a kernel on constraint space: f_i = Phi(., z_i).
    Sections { phi: SectionFn, z_points: Vec<Point> },
    /// Values tabulated on a fixed grid (rows = members).
    Tabulated { grid: Vec<Point>, rows: DMatrix<f64> },
    /// Arbitrary user functions.
    Custom { members: Vec<ScalarFn> },
}

#[derive(Clone)]
pub struct FunctionFamily {
    kind: FamilyKind,
}

impl fmt::Debug for FunctionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FamilyKind::Monomial { degree } => write!(f, "Monomial(n={degree})"),
            FamilyKind::Power { exponents } => write!(f, "Power({exponents:?})"),
            FamilyKind::Exponential { rates } => write!(f, "Exponential({rates:?})"),
            FamilyKind::Cosh { rates } => write!(f, "Cosh({rates:?})"),
            FamilyKind::Sections { z_points, .. } => {
                write!(f, "Sections({} z-points)", z_points.len())
            }
            FamilyKind::Tabulated { rows, .. } => write!(f, "Tabulated({} members)", rows.nrows()),
            FamilyKind::Custom { members } => write!(f, "Custom({} members)", members.len()),
        }
    }
}

fn check_rates(rates: &[f64], what: &str) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::invalid(format!("{what}: empty rate list")));
    }
    if rates[0] != 0.0 {
        return Err(Error::invalid(format!(
            "{what}: first rate must be 0, got {}",
            rates[0]
        )));
    }
    for w in rates.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid(format!(
                "{what}: rates must be strictly increasing"
            )));
        }
    }
    Ok(())
}

impl FunctionFamily {
    pub fn monomial(degree: usize) -> Result<Self> {
        Ok(FunctionFamily {
            kind: FamilyKind::Monomial { degree },
        })
    }

    pub fn power(exponents: Vec<f64>) -> Result<Self> {
        check_rates(&exponents, "power family")?;
        Ok(FunctionFamily {
            kind: FamilyKind::Power { exponents },
        })
    }

    pub fn exponential(rates: Vec<f64>) -> Result<Self> {
        check_rates(&rates, "exponential family")?;
        Ok(FunctionFamily {
            kind: FamilyKind::Exponential { rates },
        })
    }

    pub fn cosh(rates: Vec<f64>) -> Result<Self> {
        check_rates(&rates, "cosh family")?;
        Ok(FunctionFamily {
            kind: FamilyKind::Cosh { rates },
        })
    }

    pub fn sections(phi: SectionFn, z_points: Vec<Point>) -> Result<Self> {
        if z_points.is_empty() {
            return Err(Error::invalid("sections family needs z points"));
        }
        Ok(FunctionFamily {
            kind: FamilyKind::Sections { phi, z_points },
        })
    }

    pub fn tabulated(grid: Vec<Point>, rows: DMatrix<f64>) -> Result<Self> {
        if rows.ncols() != grid.len() {
            return Err(Error::invalid("tabulated family columns must match grid"));
        }
        Ok(FunctionFamily {
            kind: FamilyKind::Tabulated { grid, rows },
        })
    }

    pub fn from_functions(members: Vec<ScalarFn>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("custom family needs members"));
        }
        Ok(FunctionFamily {
            kind: FamilyKind::Custom { members },
        })
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    /// Number of members n+1.
    pub fn len(&self) -> usize {
        match &self.kind {
            FamilyKind::Monomial { degree } => degree + 1,
            FamilyKind::Power { exponents } => exponents.len(),
            FamilyKind::Exponential { rates } => rates.len(),
            FamilyKind::Cosh { rates } => rates.len(),
            FamilyKind::Sections { z_points, .. } => z_points.len(),
            FamilyKind::Tabulated { rows, .. } => rows.nrows(),
            FamilyKind::Custom { members } => members.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn scalar_coord(x: &Point) -> Result<f64> {
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: x.dim(),
            });
        }
        Ok(x.coords()[0])
    }

    /// Evaluate member `i` at a point.
    pub fn eval_member(&self, i: usize, x: &Point) -> Result<f64> {
        if i >= self.len() {
            return Err(Error::invalid(format!("member index {i} out of range")));
        }
        let v = match &self.kind {
            FamilyKind::Monomial { .. } => Self::scalar_coord(x)?.powi(i as i32),
            FamilyKind::Power { exponents } => {
                let t = Self::scalar_coord(x)?;
                let l = exponents[i];
                if l.fract() == 0.0 && l.abs() < 1e15 {
                    t.powi(l as i32)
                } else {
                    t.powf(l)
                }
            }
            FamilyKind::Exponential { rates } => (-rates[i] * Self::scalar_coord(x)?).exp(),
            FamilyKind::Cosh { rates } => (rates[i] * Self::scalar_coord(x)?).cosh(),
            FamilyKind::Sections { phi, z_points } => phi(x, &z_points[i]),
            FamilyKind::Tabulated { grid, rows } => {
                let j = grid
                    .iter()
                    .position(|p| p == x)
                    .ok_or(Error::PointNotOnGrid)?;
                rows[(i, j)]
            }
            FamilyKind::Custom { members } => members[i](x),
        };
        Ok(v)
    }

    /// Matrix of member values on a grid: F[i][j] = f_i(x_j), all finite.
    pub fn evaluate_on_grid(&self, grid: &[Point]) -> Result<DMatrix<f64>> {
        if grid.is_empty() {
            return Err(Error::invalid("empty grid"));
        }
        let m = self.len();
        let n = grid.len();
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            for (j, p) in grid.iter().enumerate() {
                let v = self.eval_member(i, p)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "family member {i} at grid point {:?}",
                        p.coords()
                    )));
                }
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Outcome of the sampled Chebyshev-system test. A `true` verdict means "no
/// violation found over the requested trials"; a `false` verdict carries a
/// witness tuple whose generalized Vandermonde determinant vanishes.
#[derive(Debug, Clone)]
pub struct ChebyshevCheck {
    pub passed: bool,
    pub trials: usize,
    pub witness: Option<ChebyshevWitness>,
}

#[derive(Debug, Clone)]
pub struct ChebyshevWitness {
    pub points: Vec<f64>,
    pub determinant: f64,
    pub scale: f64,
}

/// Draw sorted tuples of distinct points in the interval and test the
/// determinants det[f_i(x_j)] against 1e-10 of the Hadamard row-norm bound.
pub fn chebyshev_system_check(
    family: &FunctionFamily,
    domain: (f64, f64),
    trials: usize,
    seed: u64,
) -> Result<ChebyshevCheck> {
    let (a, b) = domain;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("degenerate domain [{a}, {b}]")));
    }
    let m = family.len();
    if m < 2 {
        return Err(Error::invalid("need at least two members"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut pts = Vec::with_capacity(m);
        while pts.len() < m {
            let x = a + (b - a) * rng.random::<f64>();
            if !pts.iter().any(|&p: &f64| p == x) {
                pts.push(x);
            }
        }
        pts.sort_by(f64::total_cmp);
        let mut mat = DMatrix::zeros(m, m);
        for i in 0..m {
            for (j, &x) in pts.iter().enumerate() {
                let v = family.eval_member(i, &Point::d1(x))?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("family member {i} at x={x}")));
                }
                mat[(i, j)] = v;
            }
        }
        let scale: f64 = (0..m).map(|i| mat.row(i).norm()).product();
        let det = mat.determinant();
        if det.abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Ok(ChebyshevCheck {
                passed: false,
                trials,
                witness: Some(ChebyshevWitness {
                    points: pts,
                    determinant: det,
                    scale,
                }),
            });
        }
    }
    Ok(ChebyshevCheck {
        passed: true,
        trials,
        witness: None,
    })
}

/// Result of the monomial moment-feasibility test (alternating forward
/// differences).
#[derive(Debug, Clone)]
pub struct MomentFeasibility {
    pub feasible: bool,
    /// First violating (r, k) in lexicographic order, with the signed value.
    pub violation: Option<(usize, usize, f64)>,
}

/// A vector (c_0, ..., c_N) with c_0 = 1 is the moment sequence of some
/// probability measure on [0,1] against 1, x, ..., x^N iff all alternating
/// forward differences (-1)^r D^r c_k with r + k <= N are nonnegative.
pub fn monomial_moment_feasible(c: &[f64], n: usize) -> Result<MomentFeasibility> {
    if c.len() != n + 1 {
        return Err(Error::invalid(format!(
            "expected {} moments, got {}",
            n + 1,
            c.len()
        )));
    }
    if (c[0] - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("c_0 must be 1, got {}", c[0])));
    }
    // diff[r][k] = D^r c_k
    let mut diff: Vec<Vec<f64>> = vec![c.to_vec()];
    for r in 1..=n {
        let prev = &diff[r - 1];
        let row: Vec<f64> = (0..prev.len() - 1).map(|k| prev[k + 1] - prev[k]).collect();
        diff.push(row);
    }
    for r in 0..=n {
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        for k in 0..=(n - r) {
            let v = sign * diff[r][k];
            if v < -1e-12 {
                return Ok(MomentFeasibility {
                    feasible: false,
                    violation: Some((r, k, v)),
                });
            }
        }
    }
    Ok(MomentFeasibility {
        feasible: true,
        violation: None,
    })
}

/// Result of the exponential-curve hull membership test.
#[derive(Debug, Clone)]
pub struct HullFeasibility {
    pub feasible: bool,
    /// Positive: certified interior clearance along axis directions.
    /// Negative: phase-1 infeasibility residual. Values within 1e-9 of zero
    /// are boundary cases, resolution-limited.
    pub margin: f64,
}

/// Decide whether (c_1, ..., c_N) lies in the convex hull of the sampled
/// curve (u, u^(l_2/l_1), ..., u^(l_N/l_1)), u in [exp(-l_1), 1], by LP
/// feasibility on `grid_u` samples.
pub fn exp_curve_feasible(c: &[f64], lambdas: &[f64], grid_u: usize) -> Result<HullFeasibility> {
    check_rates(lambdas, "exponential moments")?;
    if c.len() != lambdas.len() {
        return Err(Error::invalid(format!(
            "expected {} moments, got {}",
            lambdas.len(),
            c.len()
        )));
    }
    if (c[0] - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("c_0 must be 1, got {}", c[0])));
    }
    for w in c.windows(2) {
        if !(w[0] >= w[1]) {
            return Err(Error::invalid(
                "moments must be nonincreasing: 1 = c_0 >= c_1 >= ... > 0",
            ));
        }
    }
    if !(c[c.len() - 1] > 0.0) {
        return Err(Error::invalid("moments must stay positive"));
    }
    if grid_u < 2 {
        return Err(Error::invalid("grid_u must be at least 2"));
    }
    let nn = lambdas.len() - 1; // dimension of the hull
    let l1 = lambdas[1];
    let u_min = (-l1).exp();
    let u_grid: Vec<f64> = (0..grid_u)
        .map(|i| u_min + (1.0 - u_min) * i as f64 / (grid_u - 1) as f64)
        .collect();
    // membership via the polytope module: weights on the u-grid matching the
    // moment targets
    let exponents: Vec<f64> = lambdas.iter().map(|l| l / l1).collect();
    let gamma = |u: f64, j: usize| -> f64 { u.powf(exponents[j + 1]) };
    let grid_pts: Vec<Point> = u_grid.iter().map(|&u| Point::d1(u)).collect();
    let mut rows = DMatrix::zeros(nn + 1, grid_u);
    for i in 0..grid_u {
        rows[(0, i)] = 1.0;
        for j in 0..nn {
            rows[(j + 1, i)] = gamma(u_grid[i], j);
        }
    }
    let targets: Vec<f64> = c.to_vec();
    let p = FeasiblePolytope::from_rows(
        grid_pts,
        rows,
        targets,
        vec![RowSense::Eq; nn + 1],
    )?;
    match p.check_feasible()? {
        Feasibility::Infeasible(cert) => Ok(HullFeasibility {
            feasible: false,
            margin: -cert.residual,
        }),
        Feasibility::Feasible(_) => {
            // interior clearance: largest step along each +-axis that stays
            // in the hull; one small LP per direction
            let mut margin = f64::INFINITY;
            for j in 0..nn {
                for sgn in [1.0, -1.0] {
                    let mut lp_rows: Vec<Vec<f64>> = Vec::with_capacity(nn + 1);
                    let mut ones = vec![1.0; grid_u];
                    ones.push(0.0); // delta column
                    lp_rows.push(ones);
                    for jj in 0..nn {
                        let mut row: Vec<f64> =
                            u_grid.iter().map(|&u| gamma(u, jj)).collect();
                        row.push(if jj == j { -sgn } else { 0.0 });
                        lp_rows.push(row);
                    }
                    let mut b = vec![1.0];
                    b.extend_from_slice(&c[1..]);
                    let mut obj = vec![0.0; grid_u + 1];
                    obj[grid_u] = 1.0;
                    let senses = vec![polytope::Sense::Eq; nn + 1];
                    match polytope::solve_lp(&lp_rows, &senses, &b, &obj, true)? {
                        polytope::LpOutcome::Optimal(sol) => {
                            margin = margin.min(sol.value);
                        }
                        _ => {
                            margin = 0.0;
                        }
                    }
                }
            }
            Ok(HullFeasibility {
                feasible: true,
                margin,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::grid_1d;
    use crate::measure::{moment, DiscreteMeasure};

    #[test]
    fn monomial_on_grid() {
        let fam = FunctionFamily::monomial(2).unwrap();
        let grid = vec![Point::d1(0.0), Point::d1(0.5), Point::d1(1.0)];
        let m = fam.evaluate_on_grid(&grid).unwrap();
        let expect = [[1.0, 1.0, 1.0], [0.0, 0.5, 1.0], [0.0, 0.25, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[(i, j)], expect[i][j]);
            }
        }
    }

    #[test]
    fn exponential_at_zero() {
        let fam = FunctionFamily::exponential(vec![0.0, 1.0]).unwrap();
        assert_eq!(fam.eval_member(0, &Point::d1(0.0)).unwrap(), 1.0);
        assert_eq!(fam.eval_member(1, &Point::d1(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn power_matches_monomial_on_positive_grids() {
        let fam_p = FunctionFamily::power(vec![0.0, 1.0, 2.0]).unwrap();
        let fam_m = FunctionFamily::monomial(2).unwrap();
        let grid = grid_1d(0.1, 2.0, 23);
        let mp = fam_p.evaluate_on_grid(&grid).unwrap();
        let mm = fam_m.evaluate_on_grid(&grid).unwrap();
        assert_eq!(mp, mm, "power(0,1,2) must equal monomial rows exactly");
    }

    #[test]
    fn power_on_negative_grid_rejected() {
        let fam = FunctionFamily::power(vec![0.0, 0.5]).unwrap();
        let e = fam.evaluate_on_grid(&[Point::d1(-1.0)]);
        assert!(matches!(e, Err(Error::NonFinite(_))));
    }

    #[test]
    fn chebyshev_check_monomials() {
        let fam = FunctionFamily::monomial(2).unwrap();
        let r = chebyshev_system_check(&fam, (0.0, 1.0), 200, 0).unwrap();
        assert!(r.passed, "Vandermonde determinants never vanish");
    }

    #[test]
    fn chebyshev_check_detects_dependence() {
        let fam = FunctionFamily::from_functions(vec![
            Arc::new(|_: &Point| 1.0),
            Arc::new(|p: &Point| p.coords()[0]),
            Arc::new(|p: &Point| 2.0 * p.coords()[0]),
        ])
        .unwrap();
        let r = chebyshev_system_check(&fam, (0.0, 1.0), 10, 0).unwrap();
        assert!(!r.passed);
        let w = r.witness.unwrap();
        assert!(w.determinant.abs() <= 1e-10 * w.scale);
    }

    #[test]
    fn chebyshev_check_exponential() {
        let fam = FunctionFamily::exponential(vec![0.0, 1.0, 3.0]).unwrap();
        let r = chebyshev_system_check(&fam, (0.0, 1.0), 200, 1).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn chebyshev_check_degenerate_domain() {
        let fam = FunctionFamily::monomial(1).unwrap();
        assert!(chebyshev_system_check(&fam, (0.5, 0.5), 10, 0).is_err());
    }

    #[test]
    fn moment_feasible_lebesgue() {
        let r = monomial_moment_feasible(&[1.0, 0.5, 1.0 / 3.0], 2).unwrap();
        assert!(r.feasible);
        // direct differences: -(c1 - c0) = 1/2, c2 - 2 c1 + c0 = 1/3
        assert_eq!(r.violation, None);
    }

    #[test]
    fn moment_feasible_point_mass() {
        let r = monomial_moment_feasible(&[1.0, 1.0, 1.0], 2).unwrap();
        assert!(r.feasible);
    }

    #[test]
    fn moment_infeasible_first_violation() {
        let r = monomial_moment_feasible(&[1.0, 0.2, 0.9], 2).unwrap();
        assert!(!r.feasible);
        let (rr, kk, v) = r.violation.unwrap();
        assert_eq!((rr, kk), (1, 1));
        assert!((v - (-0.7)).abs() < 1e-12);
    }

    #[test]
    fn moments_of_grid_measures_are_feasible() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_atoms = rng.random_range(2..12);
            let grid = grid_1d(0.0, 1.0, n_atoms);
            let mut w: Vec<f64> = (0..n_atoms).map(|_| rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            for v in w.iter_mut() {
                *v /= s;
            }
            let mu = DiscreteMeasure::from_weights(&grid, &w, true).unwrap();
            let deg = 4;
            let c: Vec<f64> = (0..=deg)
                .map(|k| moment(&mu, |p| p.coords()[0].powi(k as i32)).unwrap())
                .collect();
            let r = monomial_moment_feasible(&c, deg).unwrap();
            assert!(r.feasible, "seed {seed}: violation {:?}", r.violation);

            let lambdas = vec![0.0, 0.5, 1.0, 2.0];
            let ce: Vec<f64> = lambdas
                .iter()
                .map(|&l: &f64| moment(&mu, |p| (-l * p.coords()[0]).exp()).unwrap())
                .collect();
            let mut ce = ce;
            ce[0] = 1.0;
            let r = exp_curve_feasible(&ce, &lambdas, 400).unwrap();
            assert!(r.feasible, "seed {seed}: margin {}", r.margin);
        }
    }

    #[test]
    fn exp_curve_endpoints() {
        let lambdas = vec![0.0, 1.0, 2.0];
        // Dirac at 0: all moments 1 (curve endpoint u = 1)
        let r = exp_curve_feasible(&[1.0, 1.0, 1.0], &lambdas, 500).unwrap();
        assert!(r.feasible);
        // Dirac at 1: moments exp(-l) (curve endpoint u = exp(-1))
        let c: Vec<f64> = lambdas.iter().map(|l| (-l).exp()).collect();
        let r = exp_curve_feasible(&c, &lambdas, 500).unwrap();
        assert!(r.feasible);
        assert!(r.margin.abs() < 1e-6, "endpoint is a boundary point");
    }

    #[test]
    fn exp_curve_infeasible_below_curve() {
        // independent oracle: the hull of (u, u^2) lies above the parabola,
        // so c_2 < c_1^2 is outside; 0.5 < 0.81
        let lambdas = vec![0.0, 1.0, 2.0];
        let r = exp_curve_feasible(&[1.0, 0.9, 0.5], &lambdas, 1000).unwrap();
        assert!(!r.feasible);
        assert!(r.margin < -1e-9, "margin {}", r.margin);
    }

    #[test]
    fn exp_curve_rejects_bad_preconditions() {
        let lambdas = vec![0.0, 1.0, 2.0];
        assert!(exp_curve_feasible(&[1.0, 0.5, 0.9], &lambdas, 100).is_err());
        assert!(exp_curve_feasible(&[1.0, 0.5, 0.0], &lambdas, 100).is_err());
    }
}
