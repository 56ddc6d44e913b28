//! Command-line driver: problem ingestion, solver dispatch, verification
//! reports and CSV artifacts.
//!
//! Exit codes: 0 success, 1 failed verification or internal error, 2 parse
//! error, 3 infeasible, 4 solver non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use enerqp::energy_qp::minimize_energy_opts;
use enerqp::error::Error;
use enerqp::family::{exp_curve_feasible, monomial_moment_feasible, FamilyKind};
use enerqp::io;
use enerqp::kernel::{assemble_energy_matrix, grid_1d, tensor_grid};
use enerqp::measure::DiscreteMeasure;
use enerqp::polytope::Feasibility;
use enerqp::problem::{
    load_problem, outcome_converged, outcome_infeasible, run_solve, Problem, RunOutcome,
};
use enerqp::saddle::QbarMode;
use enerqp::verify::{
    equality_chain_report_opts, frostman_check, two_set_swap_check, ChainOptions,
};

#[derive(Parser)]
#[command(
    name = "enerqp",
    about = "Kernel-energy minimization over probability measures under moment constraints",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Duality-gap tolerance for energy minimizations.
    #[arg(long)]
    tol: Option<f64>,
    /// Sup-norm tolerance on the constraint violation (cutting plane).
    #[arg(long)]
    tol_psi: Option<f64>,
    /// Iteration cap for the inner solver.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Grid points per axis, overriding the problem file.
    #[arg(long)]
    grid_n: Option<usize>,
    /// z-grid size, overriding the problem file.
    #[arg(long)]
    z_grid_n: Option<usize>,
    /// Support budget for Chebyshev-constant ladders.
    #[arg(long)]
    m_max: Option<usize>,
    /// Seed for all randomized components (heuristics, sampled checks).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Sub-solves currently run sequentially; output is
    /// deterministic regardless of this setting.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for CSV and report artifacts.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the problem file's mode.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem file (equilibrium, cutting-plane or mass sweep).
    Solve {
        problem_file: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run numerical verification checks.
    #[command(group(ArgGroup::new("checks").required(true).multiple(true)))]
    Verify {
        problem_file: PathBuf,
        /// Verify the equality chain w = q = qbar-limit at this resolution.
        #[arg(long, group = "checks")]
        chain: bool,
        /// Verify the maximum principle on the equilibrium measure.
        #[arg(long, group = "checks")]
        frostman: bool,
        /// Verify the two-set minimax swap (needs family_b/targets_b).
        #[arg(long, group = "checks")]
        swap: bool,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Decide feasibility of the problem's moment targets.
    Feasible {
        problem_file: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } => 2,
        Error::Infeasible { .. } | Error::AllMassesInfeasible(_) => 3,
        _ => 1,
    }
}

fn apply_overrides(problem: &mut Problem, flags: &CommonFlags) {
    let f = &mut problem.file;
    if let Some(v) = flags.tol {
        f.tol = Some(v);
    }
    if let Some(v) = flags.tol_psi {
        f.tol_psi = Some(v);
    }
    if let Some(v) = flags.max_iter {
        f.max_iter = Some(v);
    }
    if let Some(v) = flags.grid_n {
        f.grid_n = Some(v);
    }
    if let Some(v) = flags.z_grid_n {
        if let Some(z) = &mut f.z {
            z.n = Some(v);
        }
    }
    if let Some(v) = flags.m_max {
        f.m_max = Some(v);
    }
    if let Some(v) = flags.seed {
        f.seed = Some(v);
    }
    if let Some(m) = &flags.mode {
        f.mode = m.clone();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve {
            problem_file,
            flags,
        } => cmd_solve(&problem_file, &flags),
        Command::Verify {
            problem_file,
            chain,
            frostman,
            swap,
            flags,
        } => cmd_verify(&problem_file, chain, frostman, swap, &flags),
        Command::Feasible {
            problem_file,
            flags,
        } => cmd_feasible(&problem_file, &flags),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_solve(path: &Path, flags: &CommonFlags) -> enerqp::Result<u8> {
    let mut problem = load_problem(path)?;
    apply_overrides(&mut problem, flags);
    let outcome = run_solve(&problem, &flags.out_dir)?;
    match &outcome {
        RunOutcome::Equilibrium { report, shift, .. } => {
            println!("value: {}", report.value);
            if *shift != 0.0 {
                println!("value_unshifted: {}", report.value - shift);
            }
            println!("duality_gap: {}", report.duality_gap);
            println!("iterations: {}", report.iterations);
        }
        RunOutcome::CuttingPlane { result, shift } => {
            println!("status: {:?}", result.trace.status);
            if let Some(last) = result.trace.iterations.last() {
                println!("energy: {}", last.energy);
                if *shift != 0.0 {
                    println!("energy_unshifted: {}", last.energy - shift);
                }
                println!("psi_sup_norm: {}", last.psi_sup_norm);
                println!("constraints: {}", last.z_set.len());
            }
            println!("outer_iterations: {}", result.trace.iterations.len());
        }
        RunOutcome::Sweep { result } => {
            println!("best_c: {}", result.best_c);
            println!("objective: {}", result.best_objective);
        }
    }
    if outcome_infeasible(&outcome) {
        eprintln!("inner constraint system infeasible on this grid; the continuous problem may still be feasible");
        return Ok(3);
    }
    if !outcome_converged(&outcome) {
        eprintln!("solver did not reach the requested tolerance");
        return Ok(4);
    }
    Ok(0)
}

fn cmd_verify(
    path: &Path,
    chain: bool,
    frostman: bool,
    swap: bool,
    flags: &CommonFlags,
) -> enerqp::Result<u8> {
    let mut problem = load_problem(path)?;
    apply_overrides(&mut problem, flags);
    std::fs::create_dir_all(&flags.out_dir)?;
    let grid = problem.grid()?;
    let kernel = problem.kernel(&grid)?;
    let mut all_pass = true;
    let mut report_text = String::new();

    if chain {
        let p = problem.polytope(&grid)?;
        let m_max = problem.file.m_max.unwrap_or(4);
        let opts = ChainOptions {
            qbar_mode: if grid.len() <= 12 {
                Some(QbarMode::Exact)
            } else {
                Some(QbarMode::Heuristic {
                    seed: problem.file.seed.unwrap_or(0),
                })
            },
            ..ChainOptions::default()
        };
        let rep = equality_chain_report_opts(&kernel, &p, m_max, &opts)?;
        println!("{rep}");
        report_text.push_str(&format!("{rep}\n"));
        io::write_chebyshev_csv(
            std::fs::File::create(flags.out_dir.join("chebyshev.csv"))?,
            &rep.qbar,
        )?;
        all_pass &= rep.lemma_lower_ok;
    }

    if frostman {
        let p = problem.polytope(&grid)?;
        let k = assemble_energy_matrix(&kernel, &grid)?;
        let qp = problem.qp_options();
        let solve = minimize_energy_opts(&k, &p, &qp)?;
        let mu = DiscreteMeasure::from_weights_normalized(&grid, &solve.weights)?;
        // probes twice as fine per axis, covering the box and all atoms
        let domain = problem
            .file
            .domain
            .clone()
            .unwrap_or([vec![-1.0], vec![1.0]]);
        let n2 = problem.file.grid_n.unwrap_or(grid.len()) * 2 - 1;
        let probes = if domain[0].len() == 1 {
            grid_1d(domain[0][0], domain[1][0], n2)
        } else {
            tensor_grid(&domain[0], &domain[1], n2)
        };
        let tol = problem.file.tol.unwrap_or(5e-3);
        let rep = frostman_check(&kernel, &mu, &probes, tol)?;
        println!("{rep}");
        report_text.push_str(&format!("{rep}\n"));
        all_pass &= rep.pass;
    }

    if swap {
        let fam_a = problem
            .family(&grid)?
            .ok_or_else(|| Error::InvalidInput("swap check needs a family".into()))?;
        let c_a = problem
            .file
            .targets
            .clone()
            .ok_or_else(|| Error::InvalidInput("swap check needs targets".into()))?;
        let spec_b = problem
            .file
            .family_b
            .clone()
            .ok_or_else(|| Error::InvalidInput("swap check needs family_b".into()))?;
        let d_b = problem
            .file
            .targets_b
            .clone()
            .ok_or_else(|| Error::InvalidInput("swap check needs targets_b".into()))?;
        let fam_b = {
            let mut clone = problem.clone();
            clone.file.family = Some(spec_b);
            clone.family(&grid)?.expect("family_b was provided")
        };
        let tol = problem.file.tol.unwrap_or(1e-6);
        let rep = two_set_swap_check(&kernel, &grid, &fam_a, &c_a, &fam_b, &d_b, tol)?;
        println!("{rep}");
        report_text.push_str(&format!("{rep}\n"));
        all_pass &= rep.lemma_order_ok;
    }

    std::fs::write(flags.out_dir.join("verify.txt"), report_text)?;
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_feasible(path: &Path, flags: &CommonFlags) -> enerqp::Result<u8> {
    let mut problem = load_problem(path)?;
    apply_overrides(&mut problem, flags);
    let grid = problem.grid()?;
    let Some(fam) = problem.family(&grid)? else {
        println!("simplex (no constraints beyond normalization): feasible");
        return Ok(0);
    };
    let targets = problem
        .file
        .targets
        .clone()
        .ok_or_else(|| Error::InvalidInput("feasible needs targets".into()))?;
    match fam.kind() {
        FamilyKind::Monomial { degree } => {
            let r = monomial_moment_feasible(&targets, *degree)?;
            match r.violation {
                None => {
                    println!("monomial moments: feasible (all alternating differences nonnegative)");
                    Ok(0)
                }
                Some((rr, kk, v)) => {
                    println!("monomial moments: infeasible at (r,k)=({rr},{kk}), value {v:.6e}");
                    Ok(3)
                }
            }
        }
        FamilyKind::Exponential { rates } => {
            let r = exp_curve_feasible(&targets, rates, 1000)?;
            println!(
                "exponential moments: {} (margin {:.6e}{})",
                if r.feasible { "feasible" } else { "infeasible" },
                r.margin,
                if r.margin.abs() < 1e-9 {
                    ", boundary at this resolution"
                } else {
                    ""
                }
            );
            Ok(if r.feasible { 0 } else { 3 })
        }
        _ => {
            let p = problem.polytope(&grid)?;
            match p.check_feasible()? {
                Feasibility::Feasible(v) => {
                    println!("feasible: phase-1 vertex with support {:?}", v.support);
                    Ok(0)
                }
                Feasibility::Infeasible(cert) => {
                    println!(
                        "infeasible: Farkas certificate with residual {:.6e}",
                        cert.residual
                    );
                    Ok(3)
                }
            }
        }
    }
}
