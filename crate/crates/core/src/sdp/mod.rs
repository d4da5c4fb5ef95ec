//! Semidefinite relaxation and its conic-solver backend.
//!
//! [`relax`] repackages the lifted quadratic program as the primal SDP
//! `min tr(Q_0 Z)` over `Z >= 0` with `tr(Q_i Z) = g_i`, the Shor relaxation
//! obtained by dropping the rank-one requirement on `Z = z̄ z̄^T`. [`solve`]
//! runs the interior-point backend; [`dual_certificate_check`] evaluates the
//! dual matrix `Q(λ) = Q_0 - Σ λ_i Q_i` for a given multiplier vector.
//! Instances can be exported to and re-read from the SDPA sparse text
//! format for cross-solver validation.

mod ipm;
pub mod sdpa;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lifting::{ConstraintOptions, Qcqp};

/// Constraint-set variant of the relaxation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Column orthogonality plus the model constraints.
    #[default]
    D,
    /// `D` plus redundant row-orthogonality and cross-product constraints.
    DR,
    /// `DR` plus the orthogonality families on the unassigned blocks.
    Extended,
}

impl Variant {
    /// Every variant includes the norm-link family: it is implied at every
    /// rank-one feasible point, and without it the relaxation's solution
    /// set is unbounded, which defeats interior-point backends.
    pub fn options(&self) -> ConstraintOptions {
        match self {
            Variant::D => ConstraintOptions {
                norm_link: true,
                ..ConstraintOptions::default()
            },
            Variant::DR => ConstraintOptions {
                row_redundant: true,
                cross_redundant: true,
                ell_constraints: false,
                norm_link: true,
            },
            Variant::Extended => ConstraintOptions {
                row_redundant: true,
                cross_redundant: true,
                ell_constraints: true,
                norm_link: true,
            },
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d" => Some(Variant::D),
            "d+r" | "dr" => Some(Variant::DR),
            "extended" => Some(Variant::Extended),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::D => "d",
            Variant::DR => "d+r",
            Variant::Extended => "extended",
        }
    }
}

/// Problem provenance carried alongside a relaxation.
#[derive(Debug, Clone, Copy)]
pub struct SdpMetadata {
    pub n_robots: usize,
    pub variant: Variant,
}

/// A linear trace constraint `tr(Q Z) = rhs` with `Q` in upper-triangle
/// sparse form.
#[derive(Debug, Clone)]
pub struct TraceConstraint {
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: f64,
}

/// The primal SDP: one dense objective block and sparse trace constraints.
#[derive(Debug, Clone)]
pub struct PrimalSdp {
    pub dim: usize,
    pub q0: DMatrix<f64>,
    pub constraints: Vec<TraceConstraint>,
    pub metadata: Option<SdpMetadata>,
}

/// Shor relaxation of the lifted program: the matrices are repackaged with
/// no numeric change.
pub fn relax(qcqp: &Qcqp, metadata: Option<SdpMetadata>) -> PrimalSdp {
    PrimalSdp {
        dim: qcqp.layout.dim(),
        q0: qcqp.q0.clone(),
        constraints: qcqp
            .constraints
            .iter()
            .map(|c| TraceConstraint {
                entries: c.entries.clone(),
                rhs: c.rhs,
            })
            .collect(),
        metadata,
    }
}

/// Solver settings. The defaults aim the backend at full accuracy; the
/// certificate downstream applies its own, looser thresholds.
#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    NumericalFailure,
}

/// Output of the conic backend.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub z: DMatrix<f64>,
    pub f_primal: f64,
    pub f_dual: f64,
    pub multipliers: DVector<f64>,
    pub status: SolveStatus,
    pub solve_time: f64,
    pub iterations: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub rel_gap: f64,
}

/// Solves the SDP with the built-in primal-dual interior-point backend.
///
/// Deterministic for identical inputs and settings. Non-convergence is
/// reported through the status, never by panicking. Problems up to a block
/// size of roughly 600 are practical; the three-robot relaxation (d = 490)
/// is comfortably inside that.
pub fn solve(sdp: &PrimalSdp, settings: &SolveSettings) -> SdpSolution {
    let started = Instant::now();
    let cons: Vec<(Vec<(usize, usize, f64)>, f64)> = sdp
        .constraints
        .iter()
        .map(|c| (c.entries.clone(), c.rhs))
        .collect();
    let res = ipm::solve(
        &sdp.q0,
        &cons,
        &ipm::IpmSettings {
            eps_abs: settings.eps_abs,
            eps_rel: settings.eps_rel,
            max_iter: settings.max_iter,
            trace: std::env::var_os("CERTLOC_TRACE_IPM").is_some(),
        },
    );
    let solve_time = started.elapsed().as_secs_f64();

    // Classify. "Optimal" additionally requires the solution-quality
    // invariants to hold on the returned matrices.
    let tol_ok = |pinf: f64, dinf: f64, gap: f64, scale: f64| {
        pinf <= scale && dinf <= scale && gap <= scale
    };
    let mut status = match res.status {
        ipm::IpmStatus::Converged => SolveStatus::Optimal,
        ipm::IpmStatus::SlowProgress | ipm::IpmStatus::IterationLimit => {
            // Usable accuracy for certification and lower bounds; the
            // certificate thresholds downstream make the final call.
            if tol_ok(res.primal_infeas, res.dual_infeas, res.rel_gap, 1e-4) {
                SolveStatus::NearOptimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        ipm::IpmStatus::Failed => SolveStatus::NumericalFailure,
    };
    if status == SolveStatus::Optimal {
        let verified = verify_solution(sdp, &res.x, res.f_primal, res.f_dual);
        if !verified {
            status = SolveStatus::NearOptimal;
        }
    }

    SdpSolution {
        z: res.x,
        f_primal: res.f_primal,
        f_dual: res.f_dual,
        multipliers: res.y,
        status,
        solve_time,
        iterations: res.iterations,
        primal_infeas: res.primal_infeas,
        dual_infeas: res.dual_infeas,
        rel_gap: res.rel_gap,
    }
}

fn verify_solution(sdp: &PrimalSdp, z: &DMatrix<f64>, f_primal: f64, f_dual: f64) -> bool {
    for c in &sdp.constraints {
        let mut v = 0.0;
        for &(i, j, q) in &c.entries {
            v += if i == j {
                q * z[(i, i)]
            } else {
                2.0 * q * z[(i, j)]
            };
        }
        if (v - c.rhs).abs() > 1e-6 * c.rhs.abs().max(1.0) {
            return false;
        }
    }
    if f_primal < f_dual - 1e-6 * (1.0 + f_primal.abs()) {
        return false;
    }
    let eig = z.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max().max(0.0);
    min >= -1e-7 * max.max(1e-12)
}

/// Result of evaluating the dual matrix at a multiplier vector.
#[derive(Debug, Clone, Copy)]
pub struct DualCheck {
    pub psd: bool,
    pub min_eigenvalue: f64,
    /// The dual objective `g . λ`.
    pub dual_objective: f64,
}

/// Assembles `Q(λ) = Q_0 - Σ λ_i Q_i` and reports its least eigenvalue and
/// the dual objective. `psd` allows a small negative slack relative to the
/// matrix scale.
pub fn dual_certificate_check(sdp: &PrimalSdp, multipliers: &DVector<f64>) -> DualCheck {
    assert_eq!(multipliers.len(), sdp.constraints.len());
    let mut q = sdp.q0.clone();
    let mut dual_objective = 0.0;
    for (k, c) in sdp.constraints.iter().enumerate() {
        let w = multipliers[k];
        dual_objective += w * c.rhs;
        if w == 0.0 {
            continue;
        }
        for &(i, j, v) in &c.entries {
            q[(i, j)] -= w * v;
            if i != j {
                q[(j, i)] -= w * v;
            }
        }
    }
    let eig = q.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    DualCheck {
        psd: min_eigenvalue >= -1e-7 * max_abs.max(1.0),
        min_eigenvalue,
        dual_objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::build_cost_matrices;
    use crate::lifting::{assemble_qcqp, build_constraints, layout};
    use crate::simulation::{self, EdgeStrategy, SceneConfig};

    fn toy_sdp() -> PrimalSdp {
        PrimalSdp {
            dim: 2,
            q0: DMatrix::identity(2, 2),
            constraints: vec![TraceConstraint {
                entries: vec![(0, 0, 1.0)],
                rhs: 1.0,
            }],
            metadata: None,
        }
    }

    #[test]
    fn toy_analytic_solution() {
        let sdp = toy_sdp();
        let sol = solve(&sdp, &SolveSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.f_primal - 1.0).abs() < 1e-7);
        assert!((sol.z[(0, 0)] - 1.0).abs() < 1e-6);
        assert!(sol.z[(1, 1)].abs() < 1e-6);
        assert!((sol.f_primal - sol.f_dual).abs() < 1e-7);
    }

    #[test]
    fn relax_preserves_counts_and_matrices() {
        let l = layout(1).unwrap();
        let cs = build_constraints(&l, &Variant::D.options());
        let n_cons = cs.len();
        let reduced = DMatrix::identity(37, 37);
        let qcqp = assemble_qcqp(&reduced, cs, l).unwrap();
        let sdp = relax(
            &qcqp,
            Some(SdpMetadata {
                n_robots: 1,
                variant: Variant::D,
            }),
        );
        assert_eq!(sdp.dim, 82);
        assert_eq!(sdp.constraints.len(), n_cons);
        assert_eq!(sdp.q0, qcqp.q0);
        for (a, b) in sdp.constraints.iter().zip(&qcqp.constraints) {
            assert_eq!(a.entries, b.entries);
            assert_eq!(a.rhs, b.rhs);
        }
    }

    #[test]
    fn dual_check_at_zero_multipliers() {
        let l = layout(1).unwrap();
        let config = SceneConfig::standard(1, 22, 0.0, 3);
        let scene = simulation::generate_scene(&config).unwrap();
        let synth = simulation::synthesize_bearings(&scene).unwrap();
        let (instance, _) = simulation::make_instance(&scene, &synth, EdgeStrategy::Consecutive)
            .unwrap();
        let cm = build_cost_matrices(&instance).unwrap();
        let cs = build_constraints(&l, &Variant::D.options());
        let qcqp = assemble_qcqp(&cm.marginalized, cs, l).unwrap();
        let sdp = relax(&qcqp, None);
        let check = dual_certificate_check(&sdp, &DVector::zeros(sdp.constraints.len()));
        assert!(check.psd, "Q0 should be PSD (min eig {})", check.min_eigenvalue);
        assert_eq!(check.dual_objective, 0.0);
    }

    #[test]
    fn dual_check_detects_indefinite_combination() {
        let sdp = toy_sdp();
        // A huge multiplier on the active constraint drives Q(λ) indefinite.
        let lam = DVector::from_vec(vec![1e6]);
        let check = dual_certificate_check(&sdp, &lam);
        assert!(!check.psd);
        assert!(check.min_eigenvalue < -1.0);
    }

    #[test]
    fn scale_equivariance() {
        let sdp = toy_sdp();
        let sol1 = solve(&sdp, &SolveSettings::default());
        let mut scaled = sdp.clone();
        scaled.q0 *= 7.5;
        let sol2 = solve(&scaled, &SolveSettings::default());
        assert!(
            (sol2.f_primal - 7.5 * sol1.f_primal).abs() <= 1e-6 * (1.0 + sol2.f_primal.abs()),
            "{} vs {}",
            sol2.f_primal,
            7.5 * sol1.f_primal
        );
    }
}
