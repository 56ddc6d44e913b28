//! File formats: measure CSV, trace CSV, Chebyshev-sequence CSV and the
//! plain-text solve report. Floats are written with Rust's shortest
//! round-trip formatting so identical runs produce byte-identical files.

use std::io::{BufRead, BufReader, Read, Write};

use crate::cutting_plane::CuttingPlaneTrace;
use crate::energy_qp::SolveReport;
use crate::error::{Error, Result};
use crate::kernel::Point;
use crate::measure::DiscreteMeasure;
use crate::saddle::ChebyshevSequence;

/// Measure CSV: a `# measure d=<d> mass=<m>` header line, then one
/// `x_1,...,x_d,weight` row per atom.
pub fn write_measure_csv<W: Write>(mut w: W, mu: &DiscreteMeasure) -> Result<()> {
    writeln!(w, "# measure d={} mass={}", mu.dim(), mu.mass())?;
    for (p, wt) in mu.atoms() {
        for c in p.coords() {
            write!(w, "{c},")?;
        }
        writeln!(w, "{wt}")?;
    }
    Ok(())
}

pub fn read_measure_csv<R: Read>(r: R) -> Result<DiscreteMeasure> {
    let reader = BufReader::new(r);
    let mut dim: Option<usize> = None;
    let mut mass: Option<f64> = None;
    let mut atoms: Vec<(Point, f64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for tok in rest.split_whitespace() {
                if let Some(v) = tok.strip_prefix("d=") {
                    dim = Some(v.parse().map_err(|_| parse_err(lineno, "bad d="))?);
                }
                if let Some(v) = tok.strip_prefix("mass=") {
                    mass = Some(v.parse().map_err(|_| parse_err(lineno, "bad mass="))?);
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let d = dim.ok_or_else(|| parse_err(lineno, "missing measure header"))?;
        if fields.len() != d + 1 {
            return Err(parse_err(lineno, "wrong field count"));
        }
        let mut coords = Vec::with_capacity(d);
        for f in &fields[..d] {
            coords.push(f.trim().parse().map_err(|_| parse_err(lineno, "bad coordinate"))?);
        }
        let weight: f64 = fields[d]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, "bad weight"))?;
        atoms.push((Point::new(coords), weight));
    }
    if atoms.is_empty() {
        return Err(Error::invalid("measure file has no atoms"));
    }
    let is_probability = mass.map(|m| (m - 1.0).abs() <= 1e-12).unwrap_or(false);
    DiscreteMeasure::new(atoms, is_probability)
}

fn parse_err(lineno: usize, msg: &str) -> Error {
    Error::Parse {
        line: lineno + 1,
        column: 1,
        message: msg.to_string(),
    }
}

/// Trace CSV: `iter,n_constraints,energy,psi_min,psi_max,psi_supnorm`.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &CuttingPlaneTrace) -> Result<()> {
    writeln!(w, "iter,n_constraints,energy,psi_min,psi_max,psi_supnorm")?;
    for (i, it) in trace.iterations.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i,
            it.z_set.len(),
            it.energy,
            it.psi_min,
            it.psi_max,
            it.psi_sup_norm
        )?;
    }
    Ok(())
}

/// Chebyshev-sequence CSV: `m,qbar,mode` with `nan` for empty restrictions.
pub fn write_chebyshev_csv<W: Write>(mut w: W, seq: &ChebyshevSequence) -> Result<()> {
    writeln!(w, "m,qbar,mode")?;
    for e in &seq.entries {
        match e.outcome.value() {
            Some(v) => writeln!(w, "{},{},{}", e.m, v, seq.mode.label())?,
            None => writeln!(w, "{},nan,{}", e.m, seq.mode.label())?,
        }
    }
    Ok(())
}

/// Structured-text solve report.
pub fn write_solve_report<W: Write>(mut w: W, rep: &SolveReport, shift: f64) -> Result<()> {
    writeln!(w, "value: {}", rep.value)?;
    if shift != 0.0 {
        writeln!(w, "kernel_shift: {shift}")?;
        writeln!(w, "value_unshifted: {}", rep.value - shift)?;
    }
    writeln!(w, "duality_gap: {}", rep.duality_gap)?;
    writeln!(w, "kkt_residual: {}", rep.kkt_residual)?;
    writeln!(w, "feasibility_residual: {}", rep.feasibility_residual)?;
    writeln!(w, "iterations: {}", rep.iterations)?;
    writeln!(w, "certified: {}", rep.certified)?;
    writeln!(w, "monotone_descent: {}", rep.monotone_descent)?;
    Ok(())
}

/// Square matrix CSV (no header): used for tabulated kernels.
pub fn read_matrix_csv<R: Read>(r: R) -> Result<nalgebra::DMatrix<f64>> {
    let reader = BufReader::new(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split(',') {
            row.push(
                tok.trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, "bad matrix entry"))?,
            );
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(lineno, "ragged matrix rows"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("matrix file is empty"));
    }
    let nr = rows.len();
    let nc = rows[0].len();
    Ok(nalgebra::DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn measure_csv_round_trip() {
        let mu = DiscreteMeasure::new(
            vec![
                (Point::new(vec![0.1, 0.2]), 0.25),
                (Point::new(vec![0.3, -0.4]), 0.75),
            ],
            true,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_measure_csv(&mut buf, &mu).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# measure d=2 mass=1"));
        let back = read_measure_csv(buf.as_slice()).unwrap();
        assert_eq!(back.atoms().len(), 2);
        assert!(back.is_probability());
        for ((p, w), (q, v)) in mu.atoms().iter().zip(back.atoms()) {
            assert_eq!(p, q);
            assert_eq!(w, v);
        }
    }

    #[test]
    fn measure_csv_deterministic_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let atoms: Vec<(Point, f64)> = (0..20)
            .map(|_| (Point::d1(rng.random::<f64>()), rng.random::<f64>()))
            .collect();
        let mu = DiscreteMeasure::new(atoms, false).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_measure_csv(&mut a, &mu).unwrap();
        write_measure_csv(&mut b, &mu).unwrap();
        assert_eq!(a, b, "identical inputs must produce byte-identical CSV");
    }

    #[test]
    fn matrix_csv_reads() {
        let text = "1.0, 2.0\n2.0, 1.0\n";
        let m = read_matrix_csv(text.as_bytes()).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m[(0, 1)], 2.0);
    }

    #[test]
    fn parse_error_carries_location() {
        let text = "# measure d=1 mass=1\nnot_a_number,1.0\n";
        let e = read_measure_csv(text.as_bytes());
        assert!(matches!(e, Err(Error::Parse { line: 2, .. })));
    }
}
