//! Extraction and certification of the relaxed solution.
//!
//! The solved matrix `Z` is reduced to a vector by rank-one decomposition of
//! its `(r, y)` principal block, with the homogenization entry fixing sign
//! and scale; auxiliary components are read off the `y` column. The
//! correspondence pattern follows from which 3x12 parameter blocks are
//! nonzero, scale and rotation come from the determinant and an orthogonal
//! projection of the leading 3x3 sub-block, distances are re-instated
//! through the marginalization operator, and translations are averaged over
//! the timestamps. The certificate pairs the relative duality gap with the
//! second-to-first eigenvalue ratio of the `r` block; both must pass, and
//! every model-constraint flag (permutation, positive scales, positive
//! distances) must hold, for the output to be certified.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{CertlocError, Result};
use crate::formulation::{self, build_cost_matrices, CostMatrices, ProblemInstance, RobotState};
use crate::geometry::project_to_so3;
use crate::lifting::{self, LiftedLayout};
use crate::sdp::{self, SdpMetadata, SdpSolution, SolveSettings, SolveStatus, Variant};

/// Correspondence-detection threshold on the block norm.
pub const CORRESPONDENCE_EPS: f64 = 1e-5;
/// Certification threshold on the relative duality gap.
pub const GAP_THRESHOLD: f64 = 1e-5;
/// Certification threshold on the eigenvalue ratio of the solution block.
pub const EIG_RATIO_THRESHOLD: f64 = 1e-4;

/// A 3x12 assigned-parameter block `[s R | p1 R | p2 R | p3 R]`.
pub type ParamBlock = SMatrix<f64, 3, 12>;

/// Optimality evidence attached to a recovered solution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Certificate {
    /// `|f_primal - f_dual| / (1 + |f_primal|)`.
    pub relative_gap: f64,
    /// Second-to-first eigenvalue ratio of the `r` block of `Z`.
    pub eig_ratio: f64,
    pub certified: bool,
    /// Cost of the recovered feasible point minus the dual bound.
    pub suboptimality_bound: f64,
}

/// Per-robot recovered quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveredRobot {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    /// Feature offset in the robot body frame, meters.
    pub bias: [f64; 3],
    pub translation: [f64; 3],
}

impl RecoveredRobot {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rotation[i][j])
    }

    pub fn bias_vector(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.bias)
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from_row_slice(&self.translation)
    }
}

/// Validity flags for the model constraints that cannot be encoded as
/// equalities and are checked after extraction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtractionFlags {
    /// The thresholded block pattern formed a permutation.
    pub permutation_ok: bool,
    /// Every recovered scale block had positive determinant.
    pub scales_positive: bool,
    /// Every recovered distance is positive.
    pub distances_positive: bool,
}

/// Timing and solver diagnostics for one pipeline run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub f_primal: f64,
    pub f_dual: f64,
    pub sdp_status: SolveStatus,
    pub iterations: usize,
    /// Cost-assembly plus marginalization plus constraint construction time.
    pub build_time: f64,
    /// Conic solve time only.
    pub solve_time: f64,
    /// Full-problem cost evaluated at the recovered feasible point.
    pub recovered_cost: f64,
}

/// Complete output of the estimation pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveredSolution {
    /// `assignment[x]` = robot matched to sequence `x`.
    pub assignment: Vec<usize>,
    /// Indexed by robot.
    pub robots: Vec<RecoveredRobot>,
    /// `distances[x][j]`, meters.
    pub distances: Vec<Vec<f64>>,
    pub certificate: Certificate,
    pub flags: ExtractionFlags,
    pub diagnostics: SolveDiagnostics,
}

impl RecoveredSolution {
    /// Binary correspondence matrix with rows indexed by sequence.
    pub fn correspondence(&self) -> Vec<Vec<u8>> {
        let n = self.assignment.len();
        let mut m = vec![vec![0u8; n]; n];
        for (x, &y) in self.assignment.iter().enumerate() {
            m[x][y] = 1;
        }
        m
    }
}

/// Rank-one decomposition of the solved matrix.
///
/// The leading eigenpair of the `(r, y)` principal block gives the solution
/// vector; it is normalized so the homogenization entry is exactly `+1`,
/// which resolves the global sign left open by the `y^2 = 1` constraint and
/// makes the extraction invariant to a positive rescaling of `Z`. Auxiliary
/// entries are recovered from the `y` column of `Z`. The reported
/// eigenvalue ratio is computed on the `r` block alone, which is the slice
/// the tightness argument certifies.
pub fn rank_one(z: &DMatrix<f64>, layout: &LiftedLayout) -> Result<(DVector<f64>, f64)> {
    let m0 = layout.reduced_dim();
    let rd = layout.r_dim();
    let y_idx = layout.y_index();

    let ry_block = z.view((0, 0), (m0, m0)).into_owned();
    let eig = ry_block.symmetric_eigen();
    let mut lead = 0;
    for i in 1..m0 {
        if eig.eigenvalues[i] > eig.eigenvalues[lead] {
            lead = i;
        }
    }
    let lambda1 = eig.eigenvalues[lead];
    if lambda1 <= 0.0 {
        return Err(CertlocError::NumericalFailure(
            "rank-one decomposition: leading eigenvalue is not positive".into(),
        ));
    }
    let mut v = eig.eigenvectors.column(lead).into_owned() * lambda1.sqrt();
    let y_val = v[y_idx];
    if y_val.abs() < 1e-6 {
        return Err(CertlocError::SignUnresolvable(y_val.abs()));
    }
    v /= y_val;

    let mut out = DVector::zeros(layout.dim());
    out.rows_mut(0, m0).copy_from(&v);
    let z_yy = z[(y_idx, y_idx)].max(1e-12);
    for i in m0..layout.dim() {
        out[i] = z[(i, y_idx)] / z_yy;
    }

    // Eigenvalue ratio on the r block.
    let r_block = z.view((0, 0), (rd, rd)).into_owned();
    let mut vals: Vec<f64> = r_block.symmetric_eigen().eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let ratio = if vals[0] <= 0.0 {
        f64::INFINITY
    } else {
        (vals[1].max(0.0)) / vals[0]
    };
    Ok((out, ratio))
}

/// The 3x12 block of sequence `x` against robot `y`, un-vectorized
/// column-wise from the solution vector.
pub fn block_matrix(zvec: &DVector<f64>, layout: &LiftedLayout, x: usize, y: usize) -> ParamBlock {
    let base = layout.r_offset(x, y);
    ParamBlock::from_fn(|r, c| zvec[base + 3 * c + r])
}

fn spectral_norm(m: &ParamBlock) -> f64 {
    let gram = m * m.transpose();
    gram.symmetric_eigen().eigenvalues.max().max(0.0).sqrt()
}

/// Norms of every (sequence, robot) block.
pub fn block_norms(zvec: &DVector<f64>, layout: &LiftedLayout) -> Vec<Vec<f64>> {
    let n = layout.n_robots;
    (0..n)
        .map(|x| {
            (0..n)
                .map(|y| spectral_norm(&block_matrix(zvec, layout, x, y)))
                .collect()
        })
        .collect()
}

/// Thresholds the block norms at `eps` and demands a permutation pattern.
///
/// Returns `assignment[x] = y`. Errors with the raw norms when some row or
/// column has zero or multiple matches.
pub fn correspondences(
    zvec: &DVector<f64>,
    layout: &LiftedLayout,
    eps: f64,
) -> Result<Vec<usize>> {
    let n = layout.n_robots;
    let norms = block_norms(zvec, layout);
    let mut assignment = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    for x in 0..n {
        let matches: Vec<usize> = (0..n).filter(|&y| norms[x][y] > eps).collect();
        if matches.len() != 1 {
            return Err(CertlocError::NotAPermutation { norms });
        }
        let y = matches[0];
        if col_used[y] {
            return Err(CertlocError::NotAPermutation { norms });
        }
        col_used[y] = true;
        assignment[x] = y;
    }
    Ok(assignment)
}

/// Greedy fallback when the thresholded pattern is not a permutation: rows
/// pick their largest-norm unused column in descending order of best norm.
fn greedy_assignment(norms: &[Vec<f64>]) -> Vec<usize> {
    let n = norms.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ma = norms[a].iter().cloned().fold(0.0_f64, f64::max);
        let mb = norms[b].iter().cloned().fold(0.0_f64, f64::max);
        mb.partial_cmp(&ma).unwrap()
    });
    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for &x in &order {
        let mut best = usize::MAX;
        let mut best_norm = f64::NEG_INFINITY;
        for y in 0..n {
            if !used[y] && norms[x][y] > best_norm {
                best = y;
                best_norm = norms[x][y];
            }
        }
        assignment[x] = best;
        used[best] = true;
    }
    assignment
}

/// Scale and rotation from a matched block: the leading 3x3 sub-block is
/// `s R`, so `s` is the cube root of its determinant and `R` the orthogonal
/// projection of the sub-block divided by `s`. A non-positive determinant
/// violates the positive-scale model constraint and is an error.
pub fn scale_rotation(m: &ParamBlock) -> Result<(f64, Matrix3<f64>)> {
    let s_block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let det = s_block.determinant();
    if det <= 0.0 {
        return Err(CertlocError::SignInfeasible(det));
    }
    let s = det.cbrt();
    let r = project_to_so3(&(s_block / s))?;
    Ok((s, r))
}

/// Feature offset from a matched block: each offset component scales a copy
/// of the rotation, so `p_k = tr(M_k R^T) / 3` averages the nine entries of
/// the k-th 3x3 sub-block in the least-squares sense.
pub fn feature_offset(m: &ParamBlock, rotation: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|k, _| {
        let sub: Matrix3<f64> = m.fixed_view::<3, 3>(0, 3 * (k + 1)).into_owned();
        (sub * rotation.transpose()).trace() / 3.0
    })
}

/// Distances re-instated through the marginalization operator at
/// `[r*, y = 1]`. Returns the per-(sequence, timestamp) table and whether
/// all entries are positive.
pub fn distances(
    zvec: &DVector<f64>,
    layout: &LiftedLayout,
    cost: &CostMatrices,
) -> (Vec<Vec<f64>>, bool) {
    let m0 = layout.reduced_dim();
    let mut z = zvec.rows(0, m0).into_owned();
    z[m0 - 1] = 1.0;
    let d = cost.recover_distances(&z);
    let n = cost.layout.n_robots;
    let samples = cost.layout.n_samples;
    let mut out = Vec::with_capacity(n);
    let mut positive = true;
    for x in 0..n {
        let mut row = Vec::with_capacity(samples);
        for j in 0..samples {
            let v = d[samples * x + j];
            positive &= v > 0.0;
            row.push(v);
        }
        out.push(row);
    }
    (out, positive)
}

/// Relative translation of robot `y` averaged over all timestamps:
/// each sample gives `t_{A,j} + R_{A,j} D_j b_j - R (R_{Y,j} p) - s R t_{Y,j}`,
/// which are all equal on exact data, so the mean is the least-squares pick.
pub fn translation(
    instance: &ProblemInstance,
    x_seq: usize,
    y: usize,
    scale: f64,
    rotation: &Matrix3<f64>,
    bias: &Vector3<f64>,
    dist_row: &[f64],
) -> Vector3<f64> {
    let n = instance.n_samples();
    let mut acc = Vector3::zeros();
    for j in 0..n {
        acc += translation_term(instance, x_seq, y, scale, rotation, bias, dist_row[j], j);
    }
    acc / n as f64
}

/// One summand of the translation average.
pub fn translation_term(
    instance: &ProblemInstance,
    x_seq: usize,
    y: usize,
    scale: f64,
    rotation: &Matrix3<f64>,
    bias: &Vector3<f64>,
    dist: f64,
    j: usize,
) -> Vector3<f64> {
    let pa = &instance.observer.poses[j];
    let py = &instance.observed[y].poses[j];
    let b = instance.bearings[x_seq].bearings[j];
    pa.translation + pa.rotation * (b * dist)
        - rotation * (py.rotation * bias)
        - scale * (rotation * py.translation)
}

/// Pipeline options.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub variant: Variant,
    /// Correspondence threshold on block norms.
    pub eps: f64,
    pub settings: SolveSettings,
}

impl Default for SolveOptions {
    /// The default variant keeps the redundant rotation constraints on:
    /// they repair the dual degeneracy of the plain column-orthogonality
    /// set, which otherwise stalls the interior-point backend short of
    /// certification accuracy even on exact data.
    fn default() -> Self {
        Self {
            variant: Variant::DR,
            eps: CORRESPONDENCE_EPS,
            settings: SolveSettings::default(),
        }
    }
}

/// Full-problem cost of a recovered state, evaluated through the direct
/// loop-error form.
pub fn recovered_cost(
    instance: &ProblemInstance,
    assignment: &[usize],
    robots: &[RobotState],
    dist: &[Vec<f64>],
) -> f64 {
    formulation::assignment_cost(instance, assignment, robots, dist)
}

/// Runs the whole pipeline: cost assembly, marginalization, lifting,
/// relaxation, conic solve, extraction, certification.
///
/// Stage errors propagate; extraction shortfalls (non-permutation pattern,
/// non-positive scale determinant, non-positive distances) degrade to a
/// best-effort output with `certified = false` instead of failing, and are
/// reported through the flags. The output is never certified unless the gap
/// and eigenvalue-ratio thresholds hold *and* every flag is clean.
pub fn solve_mutual_localization(
    instance: &ProblemInstance,
    options: &SolveOptions,
) -> Result<RecoveredSolution> {
    instance.validate()?;
    let n = instance.n_robots();

    let build_start = Instant::now();
    let cost = build_cost_matrices(instance)?;
    let layout = lifting::layout(n)?;
    let constraints = lifting::build_constraints(&layout, &options.variant.options());
    let qcqp = lifting::assemble_qcqp(&cost.marginalized, constraints, layout)?;
    let sdp_problem = sdp::relax(
        &qcqp,
        Some(SdpMetadata {
            n_robots: n,
            variant: options.variant,
        }),
    );
    let build_time = build_start.elapsed().as_secs_f64();

    let solution = sdp::solve(&sdp_problem, &options.settings);
    if solution.status == SolveStatus::NumericalFailure {
        return Err(CertlocError::NumericalFailure(format!(
            "solver stopped after {} iterations with relative gap {:.3e}",
            solution.iterations, solution.rel_gap
        )));
    }

    extract(instance, &cost, &layout, &solution, options, build_time)
}

fn extract(
    instance: &ProblemInstance,
    cost: &CostMatrices,
    layout: &LiftedLayout,
    solution: &SdpSolution,
    options: &SolveOptions,
    build_time: f64,
) -> Result<RecoveredSolution> {
    let n = layout.n_robots;
    let (zvec, eig_ratio) = rank_one(&solution.z, layout)?;

    let (assignment, permutation_ok) = match correspondences(&zvec, layout, options.eps) {
        Ok(a) => (a, true),
        Err(CertlocError::NotAPermutation { norms }) => (greedy_assignment(&norms), false),
        Err(e) => return Err(e),
    };

    let mut scales_positive = true;
    let mut robots: Vec<Option<RecoveredRobot>> = vec![None; n];
    let (dist, distances_positive) = distances(&zvec, layout, cost);

    for (x_seq, &y) in assignment.iter().enumerate() {
        let m = block_matrix(&zvec, layout, x_seq, y);
        let (scale, rotation) = match scale_rotation(&m) {
            Ok(sr) => sr,
            Err(CertlocError::SignInfeasible(_)) => {
                scales_positive = false;
                // Best effort: magnitude from the determinant, orientation
                // from the sign-corrected projection.
                let s_block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
                let det = s_block.determinant();
                let s = det.abs().max(1e-30).cbrt();
                match project_to_so3(&(s_block / s)) {
                    Ok(r) => (s, r),
                    Err(_) => (s, Matrix3::identity()),
                }
            }
            Err(e) => return Err(e),
        };
        let bias = feature_offset(&m, &rotation);
        let t = translation(instance, x_seq, y, scale, &rotation, &bias, &dist[x_seq]);
        robots[y] = Some(RecoveredRobot {
            scale,
            rotation: [
                [rotation[(0, 0)], rotation[(0, 1)], rotation[(0, 2)]],
                [rotation[(1, 0)], rotation[(1, 1)], rotation[(1, 2)]],
                [rotation[(2, 0)], rotation[(2, 1)], rotation[(2, 2)]],
            ],
            bias: [bias.x, bias.y, bias.z],
            translation: [t.x, t.y, t.z],
        });
    }
    let robots: Vec<RecoveredRobot> = robots
        .into_iter()
        .map(|r| {
            r.unwrap_or(RecoveredRobot {
                scale: 1.0,
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                bias: [0.0; 3],
                translation: [0.0; 3],
            })
        })
        .collect();

    let states: Vec<RobotState> = robots
        .iter()
        .map(|r| RobotState {
            scale: r.scale,
            rotation: r.rotation_matrix(),
            bias: r.bias_vector(),
        })
        .collect();
    let cost_at_recovered = recovered_cost(instance, &assignment, &states, &dist);

    let relative_gap =
        (solution.f_primal - solution.f_dual).abs() / (1.0 + solution.f_primal.abs());
    let certified = relative_gap <= GAP_THRESHOLD
        && eig_ratio <= EIG_RATIO_THRESHOLD
        && permutation_ok
        && scales_positive
        && distances_positive
        && solution.status != SolveStatus::NumericalFailure;

    Ok(RecoveredSolution {
        assignment,
        robots,
        distances: dist,
        certificate: Certificate {
            relative_gap,
            eig_ratio,
            certified,
            suboptimality_bound: cost_at_recovered - solution.f_dual,
        },
        flags: ExtractionFlags {
            permutation_ok,
            scales_positive,
            distances_positive,
        },
        diagnostics: SolveDiagnostics {
            f_primal: solution.f_primal,
            f_dual: solution.f_dual,
            sdp_status: solution.status,
            iterations: solution.iterations,
            build_time,
            solve_time: solution.solve_time,
            recovered_cost: cost_at_recovered,
        },
    })
}
