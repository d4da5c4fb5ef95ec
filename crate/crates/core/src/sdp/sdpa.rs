//! SDPA sparse (".dat-s") export and parsing.
//!
//! The SDPA initial-data format describes the pair
//!
//! ```text
//! (P)  min  c^T x   s.t.  X = sum_i x_i F_i - F_0,  X >= 0
//! (D)  max  tr(F_0 Y)  s.t.  tr(F_i Y) = c_i,  Y >= 0
//! ```
//!
//! We emit `F_0 = -Q_0` and `F_i = Q_i` with `c = g`, so the exported
//! problem's dual reads `max tr(-Q_0 Y) s.t. tr(Q_i Y) = g_i`: its optimum
//! is the *negative* of our primal optimum. The mapping is repeated in the
//! comment header of every emitted file.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{CertlocError, Result};
use crate::sdp::{PrimalSdp, TraceConstraint};

/// Renders the SDP in SDPA sparse format.
pub fn export_sdpa(sdp: &PrimalSdp) -> String {
    let mut out = String::new();
    out.push_str("* SDPA sparse format export\n");
    out.push_str("* F0 = -Q0, Fi = Qi, c = g: the dual optimum of this file\n");
    out.push_str("* equals the negative of the exporting problem's primal optimum.\n");
    let m = sdp.constraints.len();
    writeln!(out, "{m}").unwrap();
    writeln!(out, "1").unwrap();
    writeln!(out, "{}", sdp.dim).unwrap();
    let rhs: Vec<String> = sdp.constraints.iter().map(|c| c.rhs.to_string()).collect();
    writeln!(out, "{}", rhs.join(" ")).unwrap();

    // Objective block: F0 = -Q0, upper triangle, 1-based indices.
    for i in 0..sdp.dim {
        for j in i..sdp.dim {
            let v = sdp.q0[(i, j)];
            if v != 0.0 {
                writeln!(out, "0 1 {} {} {}", i + 1, j + 1, -v).unwrap();
            }
        }
    }
    for (k, c) in sdp.constraints.iter().enumerate() {
        for &(i, j, v) in &c.entries {
            if v != 0.0 {
                writeln!(out, "{} 1 {} {} {}", k + 1, i + 1, j + 1, v).unwrap();
            }
        }
    }
    out
}

/// Writes the export to a file.
pub fn export_sdpa_to_path(sdp: &PrimalSdp, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, export_sdpa(sdp))?;
    Ok(())
}

/// Parses SDPA sparse text back into a [`PrimalSdp`] (single block only).
/// Inverse of [`export_sdpa`]: sparse entries round-trip bit-exactly.
pub fn parse_sdpa(text: &str) -> Result<PrimalSdp> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('*') && !l.starts_with('"'));

    let bad = |what: &str| CertlocError::InvalidInput(format!("sdpa parse: {what}"));

    let m: usize = lines
        .next()
        .ok_or_else(|| bad("missing constraint count"))?
        .split_whitespace()
        .next()
        .ok_or_else(|| bad("missing constraint count"))?
        .parse()
        .map_err(|_| bad("constraint count not an integer"))?;
    let nblocks: usize = lines
        .next()
        .ok_or_else(|| bad("missing block count"))?
        .split_whitespace()
        .next()
        .ok_or_else(|| bad("missing block count"))?
        .parse()
        .map_err(|_| bad("block count not an integer"))?;
    if nblocks != 1 {
        return Err(bad("only single-block files are supported"));
    }
    let dim: i64 = lines
        .next()
        .ok_or_else(|| bad("missing block size"))?
        .split_whitespace()
        .next()
        .ok_or_else(|| bad("missing block size"))?
        .parse()
        .map_err(|_| bad("block size not an integer"))?;
    let dim = dim.unsigned_abs() as usize;

    let rhs_line = lines.next().ok_or_else(|| bad("missing rhs line"))?;
    let rhs: Vec<f64> = rhs_line
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| bad("bad rhs value")))
        .collect::<Result<_>>()?;
    if rhs.len() != m {
        return Err(bad("rhs count does not match constraint count"));
    }

    let mut q0 = DMatrix::<f64>::zeros(dim, dim);
    let mut constraints: Vec<TraceConstraint> = rhs
        .into_iter()
        .map(|r| TraceConstraint {
            entries: Vec::new(),
            rhs: r,
        })
        .collect();

    for line in lines {
        let toks: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() != 5 {
            return Err(bad("entry line does not have five fields"));
        }
        let matno: usize = toks[0].parse().map_err(|_| bad("bad matrix number"))?;
        let block: usize = toks[1].parse().map_err(|_| bad("bad block number"))?;
        let i: usize = toks[2].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = toks[3].parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = toks[4].parse().map_err(|_| bad("bad value"))?;
        if block != 1 || i == 0 || j == 0 || i > dim || j > dim || i > j {
            return Err(bad("entry indices out of range"));
        }
        if matno == 0 {
            // Stored as F0 = -Q0.
            q0[(i - 1, j - 1)] = -v;
            q0[(j - 1, i - 1)] = -v;
        } else if matno <= m {
            constraints[matno - 1].entries.push((i - 1, j - 1, v));
        } else {
            return Err(bad("matrix number out of range"));
        }
    }

    Ok(PrimalSdp {
        dim,
        q0,
        constraints,
        metadata: None,
    })
}
