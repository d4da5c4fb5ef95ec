//! Quadratic cost assembly for the anonymous relative-pose problem.
//!
//! Every edge `{j1, j2}` of the timestamp graph contributes a 3-dimensional
//! loop-closure residual that is *linear* in the stacked decision vector
//! `x = [r, y, D]`, where `r` holds one 36-dimensional block per
//! (sequence, robot) pair, `y` is the homogenization scalar and `D` stacks
//! the per-(sequence, timestamp) camera-to-feature distances. Summing the
//! weighted Gram matrices of the per-edge coefficients yields the positive
//! semidefinite cost `C`; the distance block is then eliminated with a Schur
//! complement, leaving a reduced cost over `(r, y)` whose size depends only
//! on the robot count.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{CertlocError, Result};
use crate::geometry::{BearingSequence, Trajectory};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Edges per parallel accumulation chunk. Fixed (not thread-count dependent)
/// so that the reduction order, and therefore the bit pattern of the result,
/// is machine independent.
const COST_CHUNK: usize = 64;

/// One observer, `N` anonymous observed robots, their bearing sequences,
/// and the weighted edge set over the shared timestamps.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub observer: Trajectory,
    /// Candidate correspondents, indexed by robot `Y`.
    pub observed: Vec<Trajectory>,
    /// Anonymous measurement sequences, indexed by sequence `X`.
    pub bearings: Vec<BearingSequence>,
    /// Pairs of timestamp positions `(j1, j2)` with `j1 < j2`.
    pub edges: Vec<(usize, usize)>,
    /// One positive confidence weight per (sequence, edge).
    pub weights: Vec<Vec<f64>>,
}

impl ProblemInstance {
    pub fn n_robots(&self) -> usize {
        self.observed.len()
    }

    pub fn n_samples(&self) -> usize {
        self.observer.len()
    }

    pub fn layout(&self) -> FullVariableLayout {
        FullVariableLayout {
            n_robots: self.n_robots(),
            n_samples: self.n_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.observer.validate(1e-6)?;
        let n = self.observer.len();
        if self.observed.is_empty() {
            return Err(CertlocError::InvalidInput("no observed robots".into()));
        }
        if self.bearings.len() != self.observed.len() {
            return Err(CertlocError::InvalidInput(format!(
                "{} bearing sequences vs {} observed robots",
                self.bearings.len(),
                self.observed.len()
            )));
        }
        for t in &self.observed {
            t.validate(1e-6)?;
            if t.timestamps != self.observer.timestamps {
                return Err(CertlocError::InvalidInput(format!(
                    "trajectory {} does not share the observer timestamp set",
                    t.robot_label
                )));
            }
        }
        for b in &self.bearings {
            b.validate()?;
            if b.bearings.len() != n {
                return Err(CertlocError::InvalidInput(format!(
                    "bearing sequence {} has {} samples, expected {}",
                    b.sequence_index,
                    b.bearings.len(),
                    n
                )));
            }
        }
        for &(j1, j2) in &self.edges {
            if j1 >= j2 || j2 >= n {
                return Err(CertlocError::InvalidInput(format!(
                    "edge ({j1}, {j2}) out of range for {n} samples"
                )));
            }
        }
        if self.weights.len() != self.bearings.len() {
            return Err(CertlocError::InvalidInput(
                "weights must have one row per sequence".into(),
            ));
        }
        for row in &self.weights {
            if row.len() != self.edges.len() {
                return Err(CertlocError::InvalidInput(
                    "weights must have one entry per edge".into(),
                ));
            }
            if row.iter().any(|&w| w <= 0.0) {
                return Err(CertlocError::InvalidInput("weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Index layout of the full decision vector `x = [r, y, D]`.
///
/// `r` blocks are ordered sequence-major then robot; `D` slots are ordered
/// sequence-major then timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullVariableLayout {
    pub n_robots: usize,
    pub n_samples: usize,
}

impl FullVariableLayout {
    pub fn dim(&self) -> usize {
        36 * self.n_robots * self.n_robots + 1 + self.n_samples * self.n_robots
    }

    /// Dimension of the non-distance block `(r, y)`.
    pub fn reduced_dim(&self) -> usize {
        36 * self.n_robots * self.n_robots + 1
    }

    /// Start of the 36-slot block for (sequence `x`, robot `y`), 0-based.
    pub fn r_offset(&self, x: usize, y: usize) -> usize {
        36 * (self.n_robots * x + y)
    }

    pub fn y_offset(&self) -> usize {
        36 * self.n_robots * self.n_robots
    }

    /// Slot of the distance variable for (sequence `x`, timestamp `j`).
    pub fn d_offset(&self, x: usize, j: usize) -> usize {
        self.y_offset() + 1 + self.n_samples * x + j
    }
}

/// Per-robot estimate: map-scale ratio, relative rotation, and the feature
/// offset (meters, observed robot's body frame).
#[derive(Debug, Clone)]
pub struct RobotState {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub bias: Vector3<f64>,
}

impl RobotState {
    /// The four scalar parameters `[scale, bias]` entering the lifted blocks.
    pub fn params(&self) -> [f64; 4] {
        [self.scale, self.bias.x, self.bias.y, self.bias.z]
    }
}

/// Candidate assignment row and variable values for evaluating one loop
/// error directly (the non-vectorized reference form).
#[derive(Debug, Clone)]
pub struct CandidateState {
    /// Assignment coefficients for this sequence against every robot. Real
    /// valued so the vectorized form can be cross-checked at arbitrary
    /// points, not just binary ones.
    pub theta_row: Vec<f64>,
    pub robots: Vec<RobotState>,
    pub dist_j1: f64,
    pub dist_j2: f64,
}

fn shared_deltas(
    t: &Trajectory,
    edge: (usize, usize),
) -> (Matrix3<f64>, Vector3<f64>) {
    let (j1, j2) = edge;
    let dr = t.poses[j2].rotation - t.poses[j1].rotation;
    let dt = t.poses[j2].translation - t.poses[j1].translation;
    (dr, dt)
}

/// Direct evaluation of the loop error for sequence `x_seq` over `edge`.
///
/// Oriented to match `edge_coefficient * x`: the observer terms enter as
/// `R_{A,j1} b_{j1} D_{j1} - R_{A,j2} b_{j2} D_{j2} - y * t̂_A` and each
/// robot contributes `θ (s R t̂_Y + R R̂_Y q)`. Zero at the true state on
/// exact data.
pub fn loop_error(
    instance: &ProblemInstance,
    x_seq: usize,
    state: &CandidateState,
    edge: (usize, usize),
) -> Vector3<f64> {
    let (j1, j2) = edge;
    let (_, dt_a) = shared_deltas(&instance.observer, edge);
    let b1 = instance.bearings[x_seq].bearings[j1];
    let b2 = instance.bearings[x_seq].bearings[j2];
    let ra1 = instance.observer.poses[j1].rotation;
    let ra2 = instance.observer.poses[j2].rotation;

    let mut e = ra1 * b1 * state.dist_j1 - ra2 * b2 * state.dist_j2 - dt_a;
    for (y, robot) in state.robots.iter().enumerate() {
        let theta = state.theta_row[y];
        if theta == 0.0 {
            continue;
        }
        let (dr_y, dt_y) = shared_deltas(&instance.observed[y], edge);
        e += theta * (robot.scale * (robot.rotation * dt_y) + robot.rotation * (dr_y * robot.bias));
    }
    e
}

/// Weighted sum of squared loop errors for a fixed assignment, evaluated
/// through the direct error form.
pub fn assignment_cost(
    instance: &ProblemInstance,
    assignment: &[usize],
    robots: &[RobotState],
    distances: &[Vec<f64>],
) -> f64 {
    let n = instance.bearings.len();
    let mut total = 0.0;
    for x_seq in 0..n {
        let mut theta_row = vec![0.0; robots.len()];
        theta_row[assignment[x_seq]] = 1.0;
        for (e_idx, &edge) in instance.edges.iter().enumerate() {
            let state = CandidateState {
                theta_row: theta_row.clone(),
                robots: robots.to_vec(),
                dist_j1: distances[x_seq][edge.0],
                dist_j2: distances[x_seq][edge.1],
            };
            let e = loop_error(instance, x_seq, &state, edge);
            total += instance.weights[x_seq][e_idx] * e.norm_squared();
        }
    }
    total
}

/// Sparse 3-row coefficient matrix of one edge: a list of (column, 3-vector)
/// pairs, sorted by column.
#[derive(Debug, Clone)]
pub struct EdgeCoefficient {
    pub dim: usize,
    pub cols: Vec<(usize, Vector3<f64>)>,
}

impl EdgeCoefficient {
    pub fn mul_vec(&self, x: &DVector<f64>) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for (idx, col) in &self.cols {
            out += col * x[*idx];
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(3, self.dim);
        for (idx, col) in &self.cols {
            for r in 0..3 {
                m[(r, *idx)] = col[r];
            }
        }
        m
    }
}

/// Builds the 3 x dim coefficient matrix of one edge for one sequence.
///
/// Per robot block: the column for `r` slot `9k + 3c + row` carries
/// `t̂_Y[c]` (k = 0, the scale sub-block) or `R̂_Y[c, k-1]` (k = 1..3, the
/// bias sub-blocks) in that row. The homogenization column is `-t̂_A`, and
/// the distance columns are `+R_{A,j1} b_{j1}` and `-R_{A,j2} b_{j2}`.
pub fn edge_coefficient(
    instance: &ProblemInstance,
    x_seq: usize,
    edge: (usize, usize),
) -> Result<EdgeCoefficient> {
    let (j1, j2) = edge;
    let n = instance.n_samples();
    if j1 >= j2 || j2 >= n {
        return Err(CertlocError::InvalidInput(format!(
            "edge ({j1}, {j2}) out of range for {n} samples"
        )));
    }
    let layout = instance.layout();
    let mut cols = Vec::with_capacity(36 * layout.n_robots + 3);

    for (y, traj) in instance.observed.iter().enumerate() {
        let (dr_y, dt_y) = shared_deltas(traj, edge);
        let base = layout.r_offset(x_seq, y);
        for k in 0..4usize {
            for c in 0..3usize {
                let coef = if k == 0 { dt_y[c] } else { dr_y[(c, k - 1)] };
                if coef == 0.0 {
                    continue;
                }
                for row in 0..3usize {
                    let mut v = Vector3::zeros();
                    v[row] = coef;
                    cols.push((base + 9 * k + 3 * c + row, v));
                }
            }
        }
    }

    let (_, dt_a) = shared_deltas(&instance.observer, edge);
    if dt_a != Vector3::zeros() {
        cols.push((layout.y_offset(), -dt_a));
    }

    let b1 = instance.bearings[x_seq].bearings[j1];
    let b2 = instance.bearings[x_seq].bearings[j2];
    cols.push((
        layout.d_offset(x_seq, j1),
        instance.observer.poses[j1].rotation * b1,
    ));
    cols.push((
        layout.d_offset(x_seq, j2),
        -(instance.observer.poses[j2].rotation * b2),
    ));

    cols.sort_by_key(|(idx, _)| *idx);
    Ok(EdgeCoefficient {
        dim: layout.dim(),
        cols,
    })
}

fn accumulate_edges(instance: &ProblemInstance, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let dim = instance.layout().dim();
    let mut c = DMatrix::zeros(dim, dim);
    for &(x_seq, e_idx) in pairs {
        let coef = edge_coefficient(instance, x_seq, instance.edges[e_idx])
            .expect("validated edge");
        let w = instance.weights[x_seq][e_idx];
        for (u, cu) in &coef.cols {
            for (v, cv) in &coef.cols {
                c[(*u, *v)] += w * cu.dot(cv);
            }
        }
    }
    c
}

/// Sequential cost assembly: `C = Σ_{X, edges} c^T w c`, symmetrized.
///
/// Accumulates over the same fixed-size chunks as the rayon path and folds
/// the partial sums in chunk order, so both paths produce bit-identical
/// matrices for any thread count. Always available; [`build_cost`]
/// dispatches to the rayon path when the `parallel` feature is enabled.
pub fn build_cost_seq(instance: &ProblemInstance) -> DMatrix<f64> {
    let pairs: Vec<(usize, usize)> = (0..instance.bearings.len())
        .flat_map(|x| (0..instance.edges.len()).map(move |e| (x, e)))
        .collect();
    let partials: Vec<DMatrix<f64>> = pairs
        .chunks(COST_CHUNK)
        .map(|chunk| accumulate_edges(instance, chunk))
        .collect();
    fold_partials(partials, instance.layout().dim())
}

/// Parallel cost assembly over fixed-size edge chunks.
#[cfg(feature = "parallel")]
pub fn build_cost_par(instance: &ProblemInstance) -> DMatrix<f64> {
    let pairs: Vec<(usize, usize)> = (0..instance.bearings.len())
        .flat_map(|x| (0..instance.edges.len()).map(move |e| (x, e)))
        .collect();
    let partials: Vec<DMatrix<f64>> = pairs
        .par_chunks(COST_CHUNK)
        .map(|chunk| accumulate_edges(instance, chunk))
        .collect();
    fold_partials(partials, instance.layout().dim())
}

fn fold_partials(partials: Vec<DMatrix<f64>>, dim: usize) -> DMatrix<f64> {
    let mut c = partials
        .into_iter()
        .fold(DMatrix::zeros(dim, dim), |acc, p| acc + p);
    symmetrize(&mut c);
    c
}

/// Assembles the full cost matrix of the instance.
pub fn build_cost(instance: &ProblemInstance) -> DMatrix<f64> {
    #[cfg(feature = "parallel")]
    {
        build_cost_par(instance)
    }
    #[cfg(not(feature = "parallel"))]
    {
        build_cost_seq(instance)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Full cost, its Schur complement over the distance block, and the
/// distance-recovery operator.
#[derive(Debug, Clone)]
pub struct CostMatrices {
    pub layout: FullVariableLayout,
    /// The full cost `C` over `x = [r, y, D]`.
    pub full: DMatrix<f64>,
    /// The reduced cost over `(r, y)`.
    pub marginalized: DMatrix<f64>,
    /// `C_DD^{-1} C_{D, D̄}`; distances are recovered as `-recovery_op * z`.
    recovery_op: DMatrix<f64>,
    pub condition_number_cdd: f64,
}

impl CostMatrices {
    /// Minimizing distances for a given `(r, y)` vector: `-C_DD^{-1} C_{D,D̄} z`.
    pub fn recover_distances(&self, z: &DVector<f64>) -> DVector<f64> {
        -(&self.recovery_op * z)
    }

    /// Quadratic form of the full cost at a stacked `x`.
    pub fn full_cost_at(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.full * x)[(0, 0)]
    }

    /// Quadratic form of the reduced cost at `z = (r, y)`.
    pub fn reduced_cost_at(&self, z: &DVector<f64>) -> f64 {
        (z.transpose() * &self.marginalized * z)[(0, 0)]
    }
}

/// Eliminates the distance block of `c` by Schur complement.
///
/// Fails with the offending (sequence, timestamp) slots when the distance
/// block is numerically singular, which happens when some distance variable
/// appears in no edge.
pub fn marginalize(c: &DMatrix<f64>, layout: FullVariableLayout) -> Result<CostMatrices> {
    let m0 = layout.reduced_dim();
    let nd = layout.n_samples * layout.n_robots;
    assert_eq!(c.nrows(), m0 + nd, "cost matrix does not match layout");

    let c_zz = c.view((0, 0), (m0, m0)).into_owned();
    let c_zd = c.view((0, m0), (m0, nd)).into_owned();
    let c_dd = c.view((m0, m0), (nd, nd)).into_owned();

    let eig = c_dd.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-10 * max_eig) || max_eig <= 0.0 {
        // Name the slots whose columns vanish; those are the usual culprits.
        let mut slots = Vec::new();
        let max_diag = (0..nd).map(|i| c_dd[(i, i)]).fold(0.0_f64, f64::max);
        for x in 0..layout.n_robots {
            for j in 0..layout.n_samples {
                let i = layout.n_samples * x + j;
                if c_dd[(i, i)] <= 1e-12 * max_diag.max(1.0) {
                    slots.push((x, j));
                }
            }
        }
        return Err(CertlocError::DegenerateGeometry(slots));
    }
    let condition_number_cdd = max_eig / min_eig;

    let chol = c_dd
        .clone()
        .cholesky()
        .ok_or_else(|| CertlocError::DegenerateGeometry(vec![]))?;
    // recovery_op = C_DD^{-1} C_{D, D̄}
    let recovery_op = chol.solve(&c_zd.transpose());
    let mut reduced = &c_zz - &c_zd * &recovery_op;
    symmetrize(&mut reduced);

    Ok(CostMatrices {
        layout,
        full: c.clone(),
        marginalized: reduced,
        recovery_op,
        condition_number_cdd,
    })
}

/// Convenience: build and marginalize in one call.
pub fn build_cost_matrices(instance: &ProblemInstance) -> Result<CostMatrices> {
    let c = build_cost(instance);
    marginalize(&c, instance.layout())
}

/// Eigendecomposition-based rank report for a symmetric matrix.
///
/// Eigenvalues with magnitude at most `rel_tol` times the largest magnitude
/// count toward the corank. Returns `(rank, corank, eigenvalues)` with the
/// eigenvalues sorted in descending order.
pub fn corank(m: &DMatrix<f64>, rel_tol: f64) -> (usize, usize, Vec<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let max_abs = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        return (0, vals.len(), vals);
    }
    let corank = vals.iter().filter(|v| v.abs() <= rel_tol * max_abs).count();
    (vals.len() - corank, corank, vals)
}

/// Default relative tolerance for [`corank`].
pub const CORANK_REL_TOL: f64 = 1e-9;

/// The measurement-count condition under which the reduced cost has a
/// one-dimensional null space on exact data: `count >= 18 N + 2`.
///
/// The count is read as the number of independent edges; see the module
/// docs of [`crate::recovery`] for how the certificate consumes this.
pub fn check_corank_condition(n_robots: usize, independent_edge_count: usize) -> bool {
    independent_edge_count >= 18 * n_robots + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{self, EdgeStrategy, SceneConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_free_instance(
        n_robots: usize,
        n_samples: usize,
        seed: u64,
    ) -> (ProblemInstance, simulation::GroundTruth) {
        let config = SceneConfig::standard(n_robots, n_samples, 0.0, seed);
        let scene = simulation::generate_scene(&config).unwrap();
        let synth = simulation::synthesize_bearings(&scene).unwrap();
        simulation::make_instance(&scene, &synth, EdgeStrategy::Consecutive).unwrap()
    }

    fn random_candidate(n_robots: usize, rng: &mut impl Rng) -> CandidateState {
        let robots = (0..n_robots)
            .map(|_| RobotState {
                scale: rng.gen_range(0.2..3.0),
                rotation: crate::geometry::axis_angle(
                    &Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ),
                    rng.gen_range(0.01..3.0),
                ),
                bias: Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
            })
            .collect();
        CandidateState {
            theta_row: (0..n_robots).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            robots,
            dist_j1: rng.gen_range(0.1..20.0),
            dist_j2: rng.gen_range(0.1..20.0),
        }
    }

    /// Stacks a candidate state (for one sequence) into a full x vector with
    /// all other sequences' entries left zero except their distances.
    fn stack_candidate(
        layout: &FullVariableLayout,
        x_seq: usize,
        state: &CandidateState,
        edge: (usize, usize),
    ) -> DVector<f64> {
        let mut x = DVector::zeros(layout.dim());
        for (y, robot) in state.robots.iter().enumerate() {
            let theta = state.theta_row[y];
            let base = layout.r_offset(x_seq, y);
            let p = robot.params();
            for k in 0..4 {
                for c in 0..3 {
                    for r in 0..3 {
                        x[base + 9 * k + 3 * c + r] = theta * p[k] * robot.rotation[(r, c)];
                    }
                }
            }
        }
        x[layout.y_offset()] = 1.0;
        x[layout.d_offset(x_seq, edge.0)] = state.dist_j1;
        x[layout.d_offset(x_seq, edge.1)] = state.dist_j2;
        x
    }

    #[test]
    fn loop_error_zero_at_ground_truth() {
        let (instance, gt) = noise_free_instance(2, 12, 42);
        let robots = gt.robot_states();
        for x_seq in 0..2 {
            let mut theta_row = vec![0.0; 2];
            theta_row[gt.assignment[x_seq]] = 1.0;
            for &edge in &instance.edges {
                let state = CandidateState {
                    theta_row: theta_row.clone(),
                    robots: robots.clone(),
                    dist_j1: gt.distances[x_seq][edge.0],
                    dist_j2: gt.distances[x_seq][edge.1],
                };
                let e = loop_error(&instance, x_seq, &state, edge);
                assert!(
                    e.norm() < 1e-10,
                    "loop error {:.3e} at edge {:?}",
                    e.norm(),
                    edge
                );
            }
        }
    }

    #[test]
    fn loop_error_zero_theta_reduces_to_observer_terms() {
        let (instance, _) = noise_free_instance(1, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = random_candidate(1, &mut rng);
        state.theta_row[0] = 0.0;
        let edge = instance.edges[2];
        let e = loop_error(&instance, 0, &state, edge);
        let (j1, j2) = edge;
        let expect = instance.observer.poses[j1].rotation
            * instance.bearings[0].bearings[j1]
            * state.dist_j1
            - instance.observer.poses[j2].rotation
                * instance.bearings[0].bearings[j2]
                * state.dist_j2
            - (instance.observer.poses[j2].translation - instance.observer.poses[j1].translation);
        assert!((e - expect).norm() < 1e-12);
    }

    #[test]
    fn edge_coefficient_matches_loop_error() {
        let (instance, _) = noise_free_instance(2, 10, 7);
        let layout = instance.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let x_seq = trial % 2;
            let edge = instance.edges[trial % instance.edges.len()];
            let state = random_candidate(2, &mut rng);
            let coef = edge_coefficient(&instance, x_seq, edge).unwrap();
            let x = stack_candidate(&layout, x_seq, &state, edge);
            let direct = loop_error(&instance, x_seq, &state, edge);
            let vectorized = coef.mul_vec(&x);
            assert!(
                (direct - vectorized).norm() < 1e-10,
                "mismatch {:.3e}",
                (direct - vectorized).norm()
            );
        }
    }

    #[test]
    fn edge_coefficient_static_robots_only_distance_columns() {
        // All poses identity: shared deltas vanish, so only the distance
        // columns survive.
        let n = 5;
        let ident = |label: &str| Trajectory {
            robot_label: label.into(),
            timestamps: (0..n).collect(),
            poses: (0..n).map(|_| crate::geometry::Pose::identity()).collect(),
        };
        let instance = ProblemInstance {
            observer: ident("a"),
            observed: vec![ident("y0")],
            bearings: vec![BearingSequence {
                sequence_index: 0,
                bearings: (0..n).map(|_| Vector3::z()).collect(),
            }],
            edges: vec![(0, 1), (1, 2)],
            weights: vec![vec![1.0, 1.0]],
        };
        let coef = edge_coefficient(&instance, 0, (0, 1)).unwrap();
        let layout = instance.layout();
        for (idx, _) in &coef.cols {
            assert!(*idx >= layout.y_offset() + 1, "unexpected column {idx}");
        }
        assert_eq!(coef.cols.len(), 2);
    }

    #[test]
    fn edge_coefficient_single_robot_sparsity() {
        let (instance, _) = noise_free_instance(1, 8, 9);
        let layout = instance.layout();
        let coef = edge_coefficient(&instance, 0, instance.edges[1]).unwrap();
        for (idx, _) in &coef.cols {
            let in_r = *idx < 36;
            let is_y = *idx == layout.y_offset();
            let is_d = *idx == layout.d_offset(0, 1) || *idx == layout.d_offset(0, 2);
            assert!(in_r || is_y || is_d, "column {idx} outside expected pattern");
        }
    }

    #[test]
    fn build_cost_zero_edges_is_zero() {
        let (mut instance, _) = noise_free_instance(1, 6, 5);
        instance.edges.clear();
        instance.weights = vec![vec![]];
        let c = build_cost(&instance);
        assert_eq!(c.norm(), 0.0);
    }

    #[test]
    fn build_cost_single_edge_rank_at_most_three() {
        let (mut instance, _) = noise_free_instance(1, 6, 6);
        instance.edges.truncate(1);
        instance.weights = vec![vec![1.0]];
        let c = build_cost(&instance);
        let (rank, _, _) = corank(&c, 1e-10);
        assert!(rank <= 3, "rank {rank}");
        // Gram matrix of 3 rows: check PSD.
        let (_, _, vals) = corank(&c, 1e-10);
        assert!(vals.last().copied().unwrap() >= -1e-10 * vals[0].abs());
    }

    #[test]
    fn build_cost_zero_at_ground_truth() {
        for n_robots in [1, 2] {
            let (instance, gt) = noise_free_instance(n_robots, 14, 13);
            let c = build_cost(&instance);
            let x = gt.stacked_x(&instance.layout());
            let cost = (x.transpose() * &c * &x)[(0, 0)];
            assert!(cost.abs() < 1e-10, "ground-truth cost {cost:.3e}");
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn build_cost_parallel_matches_sequential_bitwise() {
        let (instance, _) = noise_free_instance(2, 40, 21);
        let seq = build_cost_seq(&instance);
        let par = build_cost_par(&instance);
        assert_eq!(seq, par);
    }

    #[test]
    fn cost_quadratic_form_matches_weighted_residuals() {
        let (mut instance, _) = noise_free_instance(2, 9, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for row in instance.weights.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.gen_range(0.5..2.0);
            }
        }
        let c = build_cost(&instance);
        let layout = instance.layout();

        // A shared random state stacked for both sequences.
        let mut x = DVector::zeros(layout.dim());
        let states: Vec<CandidateState> = (0..2).map(|_| random_candidate(2, &mut rng)).collect();
        for (x_seq, st) in states.iter().enumerate() {
            for (y, robot) in st.robots.iter().enumerate() {
                let base = layout.r_offset(x_seq, y);
                let p = robot.params();
                for k in 0..4 {
                    for cc in 0..3 {
                        for r in 0..3 {
                            x[base + 9 * k + 3 * cc + r] =
                                st.theta_row[y] * p[k] * robot.rotation[(r, cc)];
                        }
                    }
                }
            }
            for j in 0..layout.n_samples {
                x[layout.d_offset(x_seq, j)] = rng.gen_range(0.5..10.0);
            }
        }
        x[layout.y_offset()] = 1.0;

        let mut total = 0.0;
        for (x_seq, st) in states.iter().enumerate() {
            for (e_idx, &edge) in instance.edges.iter().enumerate() {
                let state = CandidateState {
                    dist_j1: x[layout.d_offset(x_seq, edge.0)],
                    dist_j2: x[layout.d_offset(x_seq, edge.1)],
                    ..st.clone()
                };
                let e = loop_error(&instance, x_seq, &state, edge);
                total += instance.weights[x_seq][e_idx] * e.norm_squared();
            }
        }
        let quad = (x.transpose() * &c * &x)[(0, 0)];
        assert!(
            (quad - total).abs() <= 1e-8 * total.abs().max(1.0),
            "quadratic {quad:.6e} vs residual sum {total:.6e}"
        );
    }

    #[test]
    fn marginalize_decoupled_case() {
        // Block-diagonal C with zero coupling: reduced cost equals the top
        // block.
        let layout = FullVariableLayout {
            n_robots: 1,
            n_samples: 2,
        };
        let dim = layout.dim();
        let m0 = layout.reduced_dim();
        let mut c = DMatrix::zeros(dim, dim);
        for i in 0..m0 {
            c[(i, i)] = 2.0 + i as f64;
        }
        for i in m0..dim {
            c[(i, i)] = 1.0;
        }
        let cm = marginalize(&c, layout).unwrap();
        for i in 0..m0 {
            for j in 0..m0 {
                assert!((cm.marginalized[(i, j)] - c[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn marginalize_minimizes_over_distances() {
        let (instance, _) = noise_free_instance(1, 8, 31);
        let cm = build_cost_matrices(&instance).unwrap();
        let layout = instance.layout();
        let m0 = layout.reduced_dim();
        let nd = layout.dim() - m0;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let z = DVector::from_fn(m0, |_, _| rng.gen_range(-1.0..1.0));
            let d_star = cm.recover_distances(&z);
            let mut x = DVector::zeros(layout.dim());
            x.rows_mut(0, m0).copy_from(&z);
            x.rows_mut(m0, nd).copy_from(&d_star);
            let at_min = cm.full_cost_at(&x);
            let reduced = cm.reduced_cost_at(&z);
            assert!(
                (at_min - reduced).abs() <= 1e-8 * reduced.abs().max(1.0),
                "min-over-D {at_min:.6e} vs reduced {reduced:.6e}"
            );
            // Any perturbation of the distances cannot lower the cost.
            let delta = DVector::from_fn(nd, |_, _| rng.gen_range(-0.5..0.5));
            let mut x2 = x.clone();
            for i in 0..nd {
                x2[m0 + i] += delta[i];
            }
            assert!(cm.full_cost_at(&x2) + 1e-10 >= at_min);
        }
    }

    #[test]
    fn marginalize_reports_unused_distance_slots() {
        let (mut instance, _) = noise_free_instance(1, 6, 41);
        // Drop the last edge so timestamp 5 appears in no edge.
        instance.edges.retain(|&(_, j2)| j2 != 5);
        instance.weights = vec![vec![1.0; instance.edges.len()]];
        let c = build_cost(&instance);
        match marginalize(&c, instance.layout()) {
            Err(CertlocError::DegenerateGeometry(slots)) => {
                assert!(slots.contains(&(0, 5)), "slots {slots:?}");
            }
            other => panic!("expected degenerate geometry, got {other:?}"),
        }
    }

    #[test]
    fn corank_basic_cases() {
        let (rank, cr, _) = corank(&DMatrix::identity(5, 5), 1e-9);
        assert_eq!((rank, cr), (5, 0));
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let (rank, cr, _) = corank(&d, 1e-9);
        assert_eq!((rank, cr), (2, 1));
    }

    #[test]
    fn corank_one_on_noise_free_reduced_cost() {
        // 21 consecutive edges (22 samples): above the 18 N + 2 threshold.
        let (instance, _) = noise_free_instance(1, 22, 51);
        assert_eq!(instance.edges.len(), 21);
        let cm = build_cost_matrices(&instance).unwrap();
        let (_, cr, vals) = corank(&cm.marginalized, CORANK_REL_TOL);
        assert_eq!(cr, 1, "eigenvalues tail {:?}", &vals[vals.len() - 3..]);
    }

    #[test]
    fn corank_condition_thresholds() {
        assert!(check_corank_condition(1, 20));
        assert!(!check_corank_condition(2, 37));
        assert!(check_corank_condition(3, 56));
    }
}
