//! Numerical verification of the structural results the solver relies on:
//! the maximum principle for potentials, the equality chain between the
//! primal energy, the dual functional and the Chebyshev limit, and the
//! two-set minimax swap.
//!
//! These checks can only falsify; a pass is reported with its margin and
//! resolution, never as a proof.

use std::fmt;

use crate::energy_qp::{minimize_energy_opts, QpOptions};
use crate::error::{Error, Result};
use crate::family::FunctionFamily;
use crate::kernel::{assemble_energy_matrix, DiagonalPolicy, EnergyMatrix, Kernel, Point};
use crate::measure::{potential, DiscreteMeasure};
use crate::polytope::{FeasiblePolytope, RowSense};
use crate::saddle::{
    chebyshev_sequence, dual_q, inf_sup_two_sets, sup_inf_two_sets, ChebyshevSequence, QbarMode,
};

/// Outcome of the maximum-principle check: the potential's global sup over
/// the probe grid against its sup over atom-adjacent probes.
#[derive(Debug, Clone)]
pub struct FrostmanReport {
    pub sup_on_support: f64,
    pub sup_global: f64,
    /// sup_global - sup_on_support; nonpositive margins pass trivially.
    pub margin: f64,
    pub pass: bool,
    /// Probe point where the global sup is attained.
    pub argmax: Point,
    /// Probes counted as support-adjacent.
    pub adjacent_probes: usize,
}

impl fmt::Display for FrostmanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "frostman check: {}",
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        writeln!(f, "  sup over support-adjacent probes: {:.9}", self.sup_on_support)?;
        writeln!(f, "  sup over all probes:              {:.9}", self.sup_global)?;
        writeln!(f, "  margin: {:.3e}", self.margin)?;
        write!(f, "  global argmax at {:?}", self.argmax.coords())
    }
}

/// Compare the potential's sup over a probe grid with its sup near the
/// measure's atoms. A probe is atom-adjacent when it is the nearest probe to
/// some atom or lies within the regularization length of one.
pub fn frostman_check(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    probe_grid: &[Point],
    tol: f64,
) -> Result<FrostmanReport> {
    if probe_grid.is_empty() {
        return Err(Error::invalid("probe grid must be nonempty"));
    }
    let adjacency = match kernel.policy() {
        DiagonalPolicy::Regularized { epsilon } => epsilon * (1.0 + 1e-9),
        DiagonalPolicy::ExtendedInfinity => 0.0,
    };
    let mut adjacent = vec![false; probe_grid.len()];
    for (p, _) in mu.atoms() {
        let mut nearest = 0usize;
        let mut nearest_d = f64::INFINITY;
        for (j, probe) in probe_grid.iter().enumerate() {
            let d = p.dist(probe)?;
            if d < nearest_d {
                nearest_d = d;
                nearest = j;
            }
            if d <= adjacency {
                adjacent[j] = true;
            }
        }
        adjacent[nearest] = true;
    }
    let mut sup_support = f64::NEG_INFINITY;
    let mut sup_global = f64::NEG_INFINITY;
    let mut argmax = probe_grid[0].clone();
    for (j, probe) in probe_grid.iter().enumerate() {
        let u = potential(kernel, mu, probe)?;
        if u > sup_global {
            sup_global = u;
            argmax = probe.clone();
        }
        if adjacent[j] && u > sup_support {
            sup_support = u;
        }
    }
    let margin = sup_global - sup_support;
    let pass = sup_global <= sup_support + tol || (sup_global.is_infinite() && sup_support.is_infinite());
    Ok(FrostmanReport {
        sup_on_support: sup_support,
        sup_global,
        margin,
        pass,
        argmax,
        adjacent_probes: adjacent.iter().filter(|&&a| a).count(),
    })
}

/// Options for the equality-chain report.
#[derive(Debug, Clone)]
pub struct ChainOptions {
    pub qp: QpOptions,
    pub q_tol: f64,
    /// Exact for small grids, seeded heuristic otherwise when None.
    pub qbar_mode: Option<QbarMode>,
    pub qbar_budget: usize,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            qp: QpOptions {
                tol: 1e-9,
                max_iter: Some(200_000),
                ..QpOptions::default()
            },
            q_tol: 1e-8,
            qbar_mode: None,
            qbar_budget: 20_000,
        }
    }
}

/// The w = q = qbar-limit chain evaluated at one resolution.
#[derive(Debug, Clone)]
pub struct ChainReport {
    pub w: f64,
    pub q: f64,
    pub qbar: ChebyshevSequence,
    pub m_estimate: Option<f64>,
    pub delta_wq: f64,
    pub delta_mw: Option<f64>,
    /// One-sided check w <= q + 1e-9 (the unconditional direction).
    pub lemma_lower_ok: bool,
    pub n_grid: usize,
    pub m_max: usize,
}

impl fmt::Display for ChainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "equality chain at resolution (N={}, m_max={}):", self.n_grid, self.m_max)?;
        writeln!(f, "  w (primal energy)    = {:.9}", self.w)?;
        writeln!(f, "  q (dual functional)  = {:.9}", self.q)?;
        match self.m_estimate {
            Some(m) => writeln!(f, "  M (qbar at m_max)    = {m:.9}")?,
            None => writeln!(f, "  M (qbar at m_max)    = empty restriction")?,
        }
        writeln!(f, "  |w - q|  = {:.3e}", self.delta_wq)?;
        match self.delta_mw {
            Some(d) => writeln!(f, "  |M - w|  = {d:.3e}")?,
            None => writeln!(f, "  |M - w|  = n/a")?,
        }
        writeln!(
            f,
            "  w <= q check: {}",
            if self.lemma_lower_ok { "PASS" } else { "FAIL" }
        )?;
        writeln!(
            f,
            "  qbar quasi-monotonicity defect = {:.3e} ({} mode)",
            self.qbar.quasi_defect,
            self.qbar.mode.label()
        )?;
        write!(f, "  qbar consistent at this resolution only; the limit is over unbounded supports")
    }
}

pub fn equality_chain_report(
    kernel: &Kernel,
    p: &FeasiblePolytope,
    m_max: usize,
) -> Result<ChainReport> {
    equality_chain_report_opts(kernel, p, m_max, &ChainOptions::default())
}

pub fn equality_chain_report_opts(
    kernel: &Kernel,
    p: &FeasiblePolytope,
    m_max: usize,
    opts: &ChainOptions,
) -> Result<ChainReport> {
    let k = assemble_energy_matrix(kernel, p.grid())?;
    chain_report_on_matrix(&k, p, m_max, opts)
}

/// Same as [`equality_chain_report`] for an already-assembled matrix.
pub fn chain_report_on_matrix(
    k: &EnergyMatrix,
    p: &FeasiblePolytope,
    m_max: usize,
    opts: &ChainOptions,
) -> Result<ChainReport> {
    let w_rep = minimize_energy_opts(k, p, &opts.qp)?;
    let q_rep = dual_q(k, p, opts.q_tol)?;
    let mode = opts.qbar_mode.unwrap_or(if p.n() <= 12 {
        QbarMode::Exact
    } else {
        QbarMode::Heuristic { seed: 0 }
    });
    let qbar = chebyshev_sequence(k, p, m_max, mode, opts.qbar_budget)?;
    let delta_wq = (w_rep.value - q_rep.value).abs();
    let delta_mw = qbar.m_estimate.map(|m| (m - w_rep.value).abs());
    Ok(ChainReport {
        w: w_rep.value,
        q: q_rep.value,
        m_estimate: qbar.m_estimate,
        delta_wq,
        delta_mw,
        lemma_lower_ok: w_rep.value <= q_rep.value + 1e-9,
        n_grid: p.n(),
        m_max,
        qbar,
    })
}

/// The two-set minimax swap: sup over A of the inf against B's extreme
/// points, versus inf over B of the sup against A's extreme points.
#[derive(Debug, Clone)]
pub struct SwapReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// sup-inf <= inf-sup, the unconditional direction.
    pub lemma_order_ok: bool,
    pub lhs_converged: bool,
    pub rhs_converged: bool,
}

impl fmt::Display for SwapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "two-set minimax swap:")?;
        writeln!(f, "  sup_A inf_ExB = {:.9}", self.lhs)?;
        writeln!(f, "  inf_B sup_ExA = {:.9}", self.rhs)?;
        writeln!(f, "  gap = {:.3e}", self.gap)?;
        write!(
            f,
            "  sup-inf <= inf-sup: {}",
            if self.lemma_order_ok { "PASS" } else { "FAIL" }
        )
    }
}

/// Evaluate both sides of the swap on a shared grid: side A constrains the
/// outer measure by `family_a` with targets `c_a`, side B the adversary by
/// `family_b` with targets `d_b` (equality constraints on both sides).
pub fn two_set_swap_check(
    kernel: &Kernel,
    grid: &[Point],
    family_a: &FunctionFamily,
    c_a: &[f64],
    family_b: &FunctionFamily,
    d_b: &[f64],
    tol: f64,
) -> Result<SwapReport> {
    let k = assemble_energy_matrix(kernel, grid)?;
    let pa = FeasiblePolytope::build(grid.to_vec(), family_a, c_a, RowSense::Eq)?;
    let pb = FeasiblePolytope::build(grid.to_vec(), family_b, d_b, RowSense::Eq)?;
    swap_on_matrix(&k, &pa, &pb, tol)
}

pub fn swap_on_matrix(
    k: &EnergyMatrix,
    pa: &FeasiblePolytope,
    pb: &FeasiblePolytope,
    tol: f64,
) -> Result<SwapReport> {
    let lhs = sup_inf_two_sets(k, pa, pb, tol)?;
    let rhs = inf_sup_two_sets(k, pb, pa, tol)?;
    Ok(SwapReport {
        lhs: lhs.value,
        rhs: rhs.value,
        gap: (lhs.value - rhs.value).abs(),
        lemma_order_ok: lhs.value <= rhs.value + 1e-9,
        lhs_converged: lhs.converged,
        rhs_converged: rhs.converged,
    })
}
