//! Kernel functions k(x,y), energy-matrix assembly on grids, and the numeric
//! admissibility test for the Frostman maximum principle.
//!
//! Kernels are symmetric, nonnegative (after an optional recorded constant
//! shift) and possibly infinite on the diagonal. Singular diagonals are either
//! kept as extended values or regularized by evaluating the kernel at a small
//! positive distance `epsilon`, which approximates the self-energy of unit
//! mass spread over one grid cell.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A point of the working space, a compact box in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    /// 1-D convenience constructor.
    pub fn d1(x: f64) -> Self {
        Point { coords: vec![x] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Euclidean distance. Summation order is fixed by coordinate index so
    /// that `a.dist(b)` and `b.dist(a)` are bit-identical.
    pub fn dist(&self, other: &Point) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let mut s = 0.0;
        for (a, b) in self.coords.iter().zip(&other.coords) {
            let d = a - b;
            s += d * d;
        }
        Ok(s.sqrt())
    }

    /// Bitwise key for exact grid lookups.
    pub(crate) fn bit_key(&self) -> Vec<u64> {
        self.coords.iter().map(|c| c.to_bits()).collect()
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::d1(x)
    }
}

/// How the (possibly infinite) diagonal k(x,x) is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiagonalPolicy {
    /// Keep the extended value: eval(x,x) = +inf for singular kernels.
    ExtendedInfinity,
    /// Evaluate singular kernels at distance `epsilon` whenever two points are
    /// closer than `epsilon`.
    Regularized { epsilon: f64 },
}

/// A kernel tabulated on a fixed grid; evaluation off the grid is an error.
#[derive(Clone)]
pub struct TabulatedKernel {
    grid: Vec<Point>,
    values: DMatrix<f64>,
    index: HashMap<Vec<u64>, usize>,
}

impl TabulatedKernel {
    fn lookup(&self, p: &Point) -> Result<usize> {
        self.index
            .get(&p.bit_key())
            .copied()
            .ok_or(Error::PointNotOnGrid)
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The kernel family.
#[derive(Clone)]
pub enum KernelKind {
    /// k(x,y) = log(1/|x-y|)
    Logarithmic,
    /// k(x,y) = |x-y|^-s, s > 0
    Riesz { s: f64 },
    /// Fundamental solution of Laplace's equation in dimension `dim`:
    /// log(1/r) for dim = 2, r^(2-dim) for dim > 2.
    Newtonian { dim: usize },
    /// k(r) = H(Lambda_dim(r)) for a nonnegative, nondecreasing, convex H.
    Carleson { h: RadialFn, dim: usize },
    /// Values given on a fixed grid.
    Tabulated(TabulatedKernel),
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Logarithmic => write!(f, "Logarithmic"),
            KernelKind::Riesz { s } => write!(f, "Riesz(s={s})"),
            KernelKind::Newtonian { dim } => write!(f, "Newtonian(d={dim})"),
            KernelKind::Carleson { dim, .. } => write!(f, "Carleson(d={dim})"),
            KernelKind::Tabulated(t) => write!(f, "Tabulated({} points)", t.grid.len()),
        }
    }
}

/// A kernel together with its diagonal policy and the constant shift recorded
/// at construction. The stored kernel is `raw + shift`; the shift is reported
/// so energies can be un-shifted (for probability measures it adds exactly
/// the constant).
#[derive(Debug, Clone)]
pub struct Kernel {
    kind: KernelKind,
    policy: DiagonalPolicy,
    shift: f64,
}

/// Fundamental solution Lambda_d(r): log(1/r) in dimension 2, r^(2-d) above.
fn lambda_d(dim: usize, r: f64) -> f64 {
    if dim == 2 {
        if r == 0.0 {
            f64::INFINITY
        } else {
            (1.0 / r).ln()
        }
    } else {
        r.powi(2 - dim as i32)
    }
}

impl Kernel {
    pub fn logarithmic(policy: DiagonalPolicy) -> Self {
        Kernel {
            kind: KernelKind::Logarithmic,
            policy,
            shift: 0.0,
        }
    }

    pub fn riesz(s: f64, policy: DiagonalPolicy) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid(format!("Riesz exponent must be positive, got {s}")));
        }
        Ok(Kernel {
            kind: KernelKind::Riesz { s },
            policy,
            shift: 0.0,
        })
    }

    pub fn newtonian(dim: usize, policy: DiagonalPolicy) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!(
                "Newtonian kernel requires dimension >= 2, got {dim}"
            )));
        }
        Ok(Kernel {
            kind: KernelKind::Newtonian { dim },
            policy,
            shift: 0.0,
        })
    }

    /// Carleson-type kernel k(r) = H(Lambda_dim(r)). The caller is responsible
    /// for H being nonnegative, nondecreasing and convex; H must map +inf to
    /// +inf (or a finite value for bounded kernels).
    pub fn carleson(h: RadialFn, dim: usize, policy: DiagonalPolicy) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!(
                "Carleson kernel requires dimension >= 2, got {dim}"
            )));
        }
        Ok(Kernel {
            kind: KernelKind::Carleson { h, dim },
            policy,
            shift: 0.0,
        })
    }

    /// Kernel given by a symmetric matrix of values on a fixed grid.
    pub fn tabulated(grid: Vec<Point>, values: DMatrix<f64>, policy: DiagonalPolicy) -> Result<Self> {
        let n = grid.len();
        if n == 0 {
            return Err(Error::invalid("tabulated kernel needs a nonempty grid"));
        }
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::invalid(format!(
                "tabulated kernel matrix is {}x{}, grid has {} points",
                values.nrows(),
                values.ncols(),
                n
            )));
        }
        check_grid(&grid)?;
        for i in 0..n {
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("tabulated entry ({i},{j})")));
                }
                if (v - values[(j, i)]).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::invalid(format!(
                        "tabulated kernel not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut index = HashMap::with_capacity(n);
        for (i, p) in grid.iter().enumerate() {
            index.insert(p.bit_key(), i);
        }
        Ok(Kernel {
            kind: KernelKind::Tabulated(TabulatedKernel { grid, values, index }),
            policy,
            shift: 0.0,
        })
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn policy(&self) -> DiagonalPolicy {
        self.policy
    }

    /// The constant added at construction so the stored kernel is nonnegative.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn with_policy(mut self, policy: DiagonalPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Record a constant shift making the kernel nonnegative on a box with the
    /// given corners. Radial kernels are nonincreasing in distance, so the
    /// minimum over the box is attained at the box diameter; tabulated kernels
    /// use the minimum stored entry.
    pub fn shifted_for_box(mut self, lo: &Point, hi: &Point) -> Result<Self> {
        let min_val = match &self.kind {
            KernelKind::Tabulated(t) => t.values.iter().cloned().fold(f64::INFINITY, f64::min),
            _ => {
                let diam = lo.dist(hi)?;
                if diam <= 0.0 {
                    return Err(Error::invalid("degenerate box"));
                }
                self.radial_raw(diam)?
            }
        };
        self.shift = (-min_val).max(0.0);
        Ok(self)
    }

    /// Radial profile without the shift; error for non-radial kernels.
    fn radial_raw(&self, r: f64) -> Result<f64> {
        match &self.kind {
            KernelKind::Logarithmic => Ok(if r == 0.0 { f64::INFINITY } else { (1.0 / r).ln() }),
            KernelKind::Riesz { s } => Ok(if r == 0.0 { f64::INFINITY } else { r.powf(-s) }),
            KernelKind::Newtonian { dim } => Ok(lambda_d(*dim, r)),
            KernelKind::Carleson { h, dim } => Ok(h(lambda_d(*dim, r))),
            KernelKind::Tabulated(_) => Err(Error::Unsupported(
                "tabulated kernels have no radial profile".into(),
            )),
        }
    }

    /// Radial profile including the shift.
    pub fn radial(&self, r: f64) -> Result<f64> {
        Ok(self.radial_raw(r)? + self.shift)
    }

    /// Whether k(x,x) is infinite before regularization.
    pub fn is_singular(&self) -> bool {
        match &self.kind {
            KernelKind::Tabulated(_) => false,
            _ => self.radial_raw(0.0).map(f64::is_infinite).unwrap_or(false),
        }
    }

    /// Evaluate k(x,y). Under `ExtendedInfinity` the diagonal of a singular
    /// kernel is `+inf`; under `Regularized` distances below epsilon are
    /// clamped to epsilon.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        if x.dim() != y.dim() {
            return Err(Error::DimensionMismatch {
                expected: x.dim(),
                got: y.dim(),
            });
        }
        if let KernelKind::Tabulated(t) = &self.kind {
            let i = t.lookup(x)?;
            let j = t.lookup(y)?;
            return Ok(t.values[(i, j)] + self.shift);
        }
        if let KernelKind::Newtonian { dim } | KernelKind::Carleson { dim, .. } = &self.kind {
            if x.dim() != *dim {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    got: x.dim(),
                });
            }
        }
        let r = x.dist(y)?;
        let r_eff = match self.policy {
            DiagonalPolicy::ExtendedInfinity => r,
            DiagonalPolicy::Regularized { epsilon } => {
                if self.is_singular() {
                    r.max(epsilon)
                } else {
                    r
                }
            }
        };
        self.radial(r_eff)
    }
}

fn check_grid(grid: &[Point]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let d = grid[0].dim();
    for (i, p) in grid.iter().enumerate() {
        if p.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.dim(),
            });
        }
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("grid point {i}")));
        }
    }
    Ok(())
}

/// Symmetric matrix of kernel values on a grid, with a finite diagonal.
#[derive(Debug, Clone)]
pub struct EnergyMatrix {
    entries: DMatrix<f64>,
    grid: Vec<Point>,
    /// The diagonal epsilon used, when the kernel was regularized.
    regularization: Option<f64>,
}

impl EnergyMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn regularization(&self) -> Option<f64> {
        self.regularization
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Build directly from a symmetric matrix of finite values.
    pub fn from_matrix(grid: Vec<Point>, entries: DMatrix<f64>) -> Result<Self> {
        check_grid(&grid)?;
        let n = grid.len();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::invalid("matrix size does not match grid"));
        }
        for i in 0..n {
            for j in 0..=i {
                if !entries[(i, j)].is_finite() {
                    return Err(Error::NonFinite(format!("entry ({i},{j})")));
                }
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::invalid(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(EnergyMatrix {
            entries,
            grid,
            regularization: None,
        })
    }
}

/// Assemble the kernel matrix on a grid. Off-diagonal entries are exact kernel
/// evaluations; the diagonal of a singular kernel is the value at distance
/// epsilon (`Regularized` policy required).
pub fn assemble_energy_matrix(kernel: &Kernel, grid: &[Point]) -> Result<EnergyMatrix> {
    check_grid(grid)?;
    let n = grid.len();
    let singular = kernel.is_singular();
    let epsilon = match kernel.policy() {
        DiagonalPolicy::Regularized { epsilon } => {
            if !(epsilon > 0.0) {
                return Err(Error::invalid(format!(
                    "regularization epsilon must be positive, got {epsilon}"
                )));
            }
            Some(epsilon)
        }
        DiagonalPolicy::ExtendedInfinity => {
            if singular {
                return Err(Error::SingularDiagonal);
            }
            None
        }
    };

    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if grid[i].dist(&grid[j])? == 0.0 {
                return Err(Error::DuplicateGridPoints { i, j });
            }
            let v = kernel.eval(&grid[i], &grid[j])?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("kernel value at grid pair ({i},{j})")));
            }
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
        let d = if singular {
            kernel.radial(epsilon.expect("checked above"))?
        } else {
            kernel.eval(&grid[i], &grid[i])?
        };
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("diagonal value at grid point {i}")));
        }
        entries[(i, i)] = d;
    }
    Ok(EnergyMatrix {
        entries,
        grid: grid.to_vec(),
        regularization: if singular { epsilon } else { None },
    })
}

/// Half the minimal pairwise grid spacing: the default regularization length.
pub fn default_epsilon(grid: &[Point]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::invalid("need at least two points for a default epsilon"));
    }
    let mut min_d = f64::INFINITY;
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            let d = grid[i].dist(&grid[j])?;
            if d < min_d {
                min_d = d;
            }
        }
    }
    if min_d == 0.0 {
        return Err(Error::invalid("grid has duplicate points"));
    }
    Ok(min_d / 2.0)
}

/// Equispaced 1-D grid, endpoints included.
pub fn grid_1d(a: f64, b: f64, n: usize) -> Vec<Point> {
    if n == 1 {
        return vec![Point::d1(0.5 * (a + b))];
    }
    (0..n)
        .map(|i| Point::d1(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Tensor-product grid on a box, `n_per_axis` points per axis, endpoints
/// included.
pub fn tensor_grid(lo: &[f64], hi: &[f64], n_per_axis: usize) -> Vec<Point> {
    let d = lo.len();
    let mut pts: Vec<Vec<f64>> = vec![vec![]];
    for k in 0..d {
        let mut next = Vec::with_capacity(pts.len() * n_per_axis);
        for base in &pts {
            for i in 0..n_per_axis {
                let t = if n_per_axis == 1 {
                    0.5
                } else {
                    i as f64 / (n_per_axis - 1) as f64
                };
                let mut c = base.clone();
                c.push(lo[k] + (hi[k] - lo[k]) * t);
                next.push(c);
            }
        }
        pts = next;
    }
    pts.into_iter().map(Point::new).collect()
}

/// Report of the admissibility test for the Frostman maximum principle:
/// numeric convergence of the radial integral of k(r) r^(d-1) near zero.
#[derive(Debug, Clone)]
pub struct CarlesonReport {
    pub admissible: bool,
    /// Tail-extrapolated estimate of the integral (meaningful when admissible).
    pub estimate: f64,
    /// Dyadic levels examined.
    pub levels: usize,
    pub last_rel_change: f64,
}

/// Decide whether the radial integral over (0, a] of k(r) r^(d-1) dr is
/// finite, by a Cauchy criterion on dyadic refinements toward the
/// singularity: relative change below 1e-6 over three successive levels.
pub fn carleson_admissible(kernel: &Kernel, dimension: usize, a: f64) -> Result<CarlesonReport> {
    if matches!(kernel.kind(), KernelKind::Tabulated(_)) {
        return Err(Error::Unsupported(
            "admissibility test requires a radially representable kernel".into(),
        ));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("integration bound must be positive, got {a}")));
    }
    if dimension == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let d = dimension as i32;
    let f = |r: f64| -> Result<f64> { Ok(kernel.radial(r)? * r.powi(d - 1)) };

    const MAX_LEVELS: usize = 64;
    const REL_TOL: f64 = 1e-6;
    let mut partial = 0.0_f64;
    let mut pieces: Vec<f64> = Vec::new();
    let mut cauchy_streak = 0usize;
    let mut last_rel = f64::INFINITY;
    let mut level = 0usize;
    while level < MAX_LEVELS {
        let hi = a * 0.5_f64.powi(level as i32);
        let lo = hi * 0.5;
        let piece = adaptive_simpson(&f, lo, hi, 1e-10, 40)?;
        if !piece.is_finite() {
            return Ok(CarlesonReport {
                admissible: false,
                estimate: f64::INFINITY,
                levels: level + 1,
                last_rel_change: f64::INFINITY,
            });
        }
        partial += piece;
        pieces.push(piece);
        last_rel = piece.abs() / partial.abs().max(f64::MIN_POSITIVE);
        if last_rel < REL_TOL {
            cauchy_streak += 1;
            if cauchy_streak >= 3 {
                level += 1;
                break;
            }
        } else {
            cauchy_streak = 0;
        }
        level += 1;
    }
    let admissible = cauchy_streak >= 3;
    let mut estimate = partial;
    if admissible && pieces.len() >= 2 {
        // geometric tail extrapolation from the last two pieces
        let p_last = pieces[pieces.len() - 1];
        let p_prev = pieces[pieces.len() - 2];
        if p_prev.abs() > 0.0 {
            let rho = p_last / p_prev;
            if rho > 0.0 && rho < 0.99 {
                estimate += p_last * rho / (1.0 - rho);
            }
        }
    }
    Ok(CarlesonReport {
        admissible,
        estimate,
        levels: level,
        last_rel_change: last_rel,
    })
}

/// Adaptive Simpson quadrature for smooth integrands on [a, b].
fn adaptive_simpson(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol * (1.0 + (left + right).abs()) {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn reg(eps: f64) -> DiagonalPolicy {
        DiagonalPolicy::Regularized { epsilon: eps }
    }

    #[test]
    fn eval_logarithmic() {
        let k = Kernel::logarithmic(DiagonalPolicy::ExtendedInfinity);
        let v = k.eval(&Point::d1(0.0), &Point::d1(0.5)).unwrap();
        assert!((v - LN2).abs() < 1e-15);
    }

    #[test]
    fn eval_riesz_plane() {
        let k = Kernel::riesz(1.0, DiagonalPolicy::ExtendedInfinity).unwrap();
        let v = k
            .eval(&Point::new(vec![0.0, 0.0]), &Point::new(vec![3.0, 4.0]))
            .unwrap();
        assert_eq!(v, 0.2);
    }

    #[test]
    fn eval_diagonal_extended_infinity() {
        let k = Kernel::logarithmic(DiagonalPolicy::ExtendedInfinity);
        let v = k.eval(&Point::d1(0.3), &Point::d1(0.3)).unwrap();
        assert!(v.is_infinite() && v > 0.0);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let k = Kernel::logarithmic(DiagonalPolicy::ExtendedInfinity);
        let e = k.eval(&Point::d1(0.0), &Point::new(vec![0.0, 1.0]));
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn assemble_log_grid() {
        let k = Kernel::logarithmic(reg(0.25));
        let grid = vec![Point::d1(0.0), Point::d1(0.5), Point::d1(1.0)];
        let m = assemble_energy_matrix(&k, &grid).unwrap();
        let e = m.entries();
        assert!((e[(0, 0)] - 4.0_f64.ln()).abs() < 1e-15);
        assert!((e[(1, 1)] - 4.0_f64.ln()).abs() < 1e-15);
        assert!((e[(0, 1)] - LN2).abs() < 1e-15);
        assert_eq!(m.regularization(), Some(0.25));
    }

    #[test]
    fn assemble_single_point_riesz() {
        let k = Kernel::riesz(1.0, reg(0.1)).unwrap();
        let m = assemble_energy_matrix(&k, &[Point::d1(0.7)]).unwrap();
        assert_eq!(m.entries()[(0, 0)], 10.0);
    }

    #[test]
    fn assemble_tabulated_round_trip() {
        let grid = vec![Point::d1(0.0), Point::d1(1.0), Point::d1(2.0)];
        let vals = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0, 2.0]);
        let k = Kernel::tabulated(grid.clone(), vals.clone(), DiagonalPolicy::ExtendedInfinity)
            .unwrap();
        let m = assemble_energy_matrix(&k, &grid).unwrap();
        assert_eq!(m.entries(), &vals);
    }

    #[test]
    fn assemble_duplicate_points_rejected() {
        let k = Kernel::logarithmic(reg(0.1));
        let grid = vec![Point::d1(0.0), Point::d1(0.5), Point::d1(0.5)];
        let e = assemble_energy_matrix(&k, &grid);
        assert!(matches!(e, Err(Error::DuplicateGridPoints { i: 1, j: 2 })));
    }

    #[test]
    fn assemble_extended_infinity_singular_rejected() {
        let k = Kernel::logarithmic(DiagonalPolicy::ExtendedInfinity);
        let e = assemble_energy_matrix(&k, &[Point::d1(0.0), Point::d1(1.0)]);
        assert!(matches!(e, Err(Error::SingularDiagonal)));
    }

    #[test]
    fn symmetry_exact_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kernels = [
            Kernel::logarithmic(reg(1e-3)),
            Kernel::riesz(1.5, reg(1e-3)).unwrap(),
        ];
        for _ in 0..1000 {
            let x = Point::new(vec![rng.random::<f64>(), rng.random::<f64>()]);
            let y = Point::new(vec![rng.random::<f64>(), rng.random::<f64>()]);
            for k in &kernels {
                let a = k.eval(&x, &y).unwrap();
                let b = k.eval(&y, &x).unwrap();
                assert_eq!(a, b, "symmetry must be exact");
            }
        }
    }

    #[test]
    fn off_diagonal_entries_bit_exact() {
        let k = Kernel::logarithmic(reg(1e-3));
        let grid = grid_1d(-1.0, 1.0, 17);
        let m = assemble_energy_matrix(&k, &grid).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                if i != j {
                    assert_eq!(m.entries()[(i, j)], k.eval(&grid[i], &grid[j]).unwrap());
                }
            }
        }
    }

    #[test]
    fn regularization_monotone_in_epsilon() {
        let grid = grid_1d(0.0, 1.0, 5);
        let mut prev = f64::NEG_INFINITY;
        for &eps in &[0.2, 0.1, 0.05, 0.01] {
            let k = Kernel::logarithmic(reg(eps));
            let m = assemble_energy_matrix(&k, &grid).unwrap();
            let d = m.entries()[(0, 0)];
            assert!(d >= prev, "smaller epsilon must not decrease the diagonal");
            prev = d;
        }
    }

    #[test]
    fn shift_for_box_makes_log_nonnegative() {
        let k = Kernel::logarithmic(reg(1e-3))
            .shifted_for_box(&Point::d1(-1.0), &Point::d1(1.0))
            .unwrap();
        assert!((k.shift() - LN2).abs() < 1e-15);
        let v = k.eval(&Point::d1(-1.0), &Point::d1(1.0)).unwrap();
        assert!(v >= 0.0);
    }

    #[test]
    fn carleson_log_d2_converges_to_quarter() {
        // closed form: integral of r log(1/r) over (0,1] equals 1/4
        let k = Kernel::logarithmic(reg(1e-3));
        let r = carleson_admissible(&k, 2, 1.0).unwrap();
        assert!(r.admissible);
        assert!((r.estimate - 0.25).abs() < 1e-6, "estimate {}", r.estimate);
    }

    #[test]
    fn carleson_riesz3_d2_diverges() {
        let k = Kernel::riesz(3.0, reg(1e-3)).unwrap();
        let r = carleson_admissible(&k, 2, 1.0).unwrap();
        assert!(!r.admissible);
    }

    #[test]
    fn carleson_riesz1_d2_is_one() {
        let k = Kernel::riesz(1.0, reg(1e-3)).unwrap();
        let r = carleson_admissible(&k, 2, 1.0).unwrap();
        assert!(r.admissible);
        assert!((r.estimate - 1.0).abs() < 1e-9, "estimate {}", r.estimate);
    }

    #[test]
    fn carleson_rejects_tabulated() {
        let grid = vec![Point::d1(0.0), Point::d1(1.0)];
        let vals = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let k = Kernel::tabulated(grid, vals, DiagonalPolicy::ExtendedInfinity).unwrap();
        assert!(matches!(
            carleson_admissible(&k, 2, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn default_epsilon_is_half_min_spacing() {
        let grid = grid_1d(0.0, 1.0, 5);
        assert!((default_epsilon(&grid).unwrap() - 0.125).abs() < 1e-15);
    }
}
