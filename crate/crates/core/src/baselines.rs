//! Local-optimization baselines over the full (unmarginalized) cost, for
//! optimality and robustness comparisons against the certified pipeline.
//!
//! Both methods fix the measurement-to-robot assignment and minimize the
//! weighted sum of squared loop errors over rotations, scales, feature
//! offsets and distances. The Levenberg-Marquardt variant takes damped
//! Gauss-Newton steps with local 3-parameter rotation updates; the
//! alternating variant swaps between an exact linear least-squares solve of
//! the non-rotation variables and a per-robot orthogonal Procrustes update,
//! so its cost is non-increasing by construction. The anonymous variant
//! enumerates all assignments and keeps the best.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CertlocError, Result};
use crate::formulation::{assignment_cost, ProblemInstance, RobotState};
use crate::geometry::project_to_so3;

/// Stop thresholds and iteration caps.
#[derive(Debug, Clone, Copy)]
pub struct LocalSolveSettings {
    /// Gradient-norm stop for the damped Gauss-Newton solver.
    pub gradient_tol: f64,
    pub max_lm_iterations: usize,
    /// Relative cost-change stop for the alternating solver.
    pub cost_change_tol: f64,
    pub max_am_rounds: usize,
}

impl Default for LocalSolveSettings {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-10,
            max_lm_iterations: 200,
            cost_change_tol: 1e-12,
            max_am_rounds: 500,
        }
    }
}

/// Outcome of a local solve.
#[derive(Debug, Clone)]
pub struct LocalSolveResult {
    pub final_cost: f64,
    pub robots: Vec<RobotState>,
    pub distances: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// The rotation seeds the solve started from.
    pub init_rotations: Vec<Matrix3<f64>>,
}

/// Uniform random rotation via a normalized Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let sample = |rng: &mut dyn rand::RngCore| -> f64 { StandardNormal.sample(rng) };
    let (w, x, y, z) = (sample(rng), sample(rng), sample(rng), sample(rng));
    let n = (w * w + x * x + y * y + z * z).sqrt();
    let (w, x, y, z) = (w / n, x / n, y / n, z / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn random_rotations(n: usize, rng: &mut impl Rng) -> Vec<Matrix3<f64>> {
    (0..n).map(|_| random_rotation(rng)).collect()
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    if theta < 1e-12 {
        return Matrix3::identity() + skew(w);
    }
    let k = skew(&(w / theta));
    Matrix3::identity() + theta.sin() * k + (1.0 - theta.cos()) * (k * k)
}

/// Variable ordering for the damped Gauss-Newton solver: per robot
/// `[rotation (3), scale (1), offset (3)]`, then all distances
/// sequence-major.
struct LmState {
    robots: Vec<RobotState>,
    distances: Vec<Vec<f64>>,
}

impl LmState {
    fn param_count(&self, n_samples: usize) -> usize {
        7 * self.robots.len() + n_samples * self.distances.len()
    }

    fn dist_base(&self) -> usize {
        7 * self.robots.len()
    }

    fn apply_step(&self, step: &DVector<f64>, n_samples: usize) -> LmState {
        let mut robots = Vec::with_capacity(self.robots.len());
        for (y, r) in self.robots.iter().enumerate() {
            let w = Vector3::new(step[7 * y], step[7 * y + 1], step[7 * y + 2]);
            robots.push(RobotState {
                rotation: r.rotation * exp_so3(&w),
                scale: r.scale + step[7 * y + 3],
                bias: r.bias + Vector3::new(step[7 * y + 4], step[7 * y + 5], step[7 * y + 6]),
            });
        }
        let base = self.dist_base();
        let distances = self
            .distances
            .iter()
            .enumerate()
            .map(|(x, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, d)| d + step[base + n_samples * x + j])
                    .collect()
            })
            .collect();
        LmState { robots, distances }
    }
}

struct EdgeGeometry {
    dt_a: Vector3<f64>,
    dt_y: Vector3<f64>,
    dr_y: Matrix3<f64>,
    ra1_b1: Vector3<f64>,
    ra2_b2: Vector3<f64>,
}

fn edge_geometry(
    instance: &ProblemInstance,
    x_seq: usize,
    y: usize,
    edge: (usize, usize),
) -> EdgeGeometry {
    let (j1, j2) = edge;
    let obs = &instance.observer;
    let traj = &instance.observed[y];
    EdgeGeometry {
        dt_a: obs.poses[j2].translation - obs.poses[j1].translation,
        dt_y: traj.poses[j2].translation - traj.poses[j1].translation,
        dr_y: traj.poses[j2].rotation - traj.poses[j1].rotation,
        ra1_b1: obs.poses[j1].rotation * instance.bearings[x_seq].bearings[j1],
        ra2_b2: obs.poses[j2].rotation * instance.bearings[x_seq].bearings[j2],
    }
}

/// Residual vector (rows scaled by sqrt of the edge weight) and, when
/// requested, the Jacobian in the LmState ordering.
fn residuals(
    instance: &ProblemInstance,
    assignment: &[usize],
    state: &LmState,
    jacobian: bool,
) -> (DVector<f64>, Option<DMatrix<f64>>) {
    let n_seq = instance.bearings.len();
    let n_samples = instance.n_samples();
    let rows = 3 * n_seq * instance.edges.len();
    let cols = state.param_count(n_samples);
    let mut r = DVector::zeros(rows);
    let mut jac = if jacobian {
        Some(DMatrix::zeros(rows, cols))
    } else {
        None
    };
    let mut row = 0;
    for x_seq in 0..n_seq {
        let y = assignment[x_seq];
        let robot = &state.robots[y];
        for (e_idx, &edge) in instance.edges.iter().enumerate() {
            let g = edge_geometry(instance, x_seq, y, edge);
            let sw = instance.weights[x_seq][e_idx].sqrt();
            let d1 = state.distances[x_seq][edge.0];
            let d2 = state.distances[x_seq][edge.1];
            let u = robot.scale * g.dt_y + g.dr_y * robot.bias;
            let e = robot.rotation * u - g.dt_a + g.ra1_b1 * d1 - g.ra2_b2 * d2;
            for k in 0..3 {
                r[row + k] = sw * e[k];
            }
            if let Some(j) = jac.as_mut() {
                // d/d omega of R exp([omega]x) u at 0 is -R [u]x.
                let drot = -(robot.rotation * skew(&u)) * sw;
                let dscale = robot.rotation * g.dt_y * sw;
                let dbias = robot.rotation * g.dr_y * sw;
                for k in 0..3 {
                    for c in 0..3 {
                        j[(row + k, 7 * y + c)] = drot[(k, c)];
                        j[(row + k, 7 * y + 4 + c)] = dbias[(k, c)];
                    }
                    j[(row + k, 7 * y + 3)] = dscale[k];
                    let base = state.dist_base();
                    j[(row + k, base + n_samples * x_seq + edge.0)] = sw * g.ra1_b1[k];
                    j[(row + k, base + n_samples * x_seq + edge.1)] = -sw * g.ra2_b2[k];
                }
            }
            row += 3;
        }
    }
    (r, jac)
}

/// Least-squares distances given the remaining variables, one decoupled
/// solve per sequence. Returns `None` when a normal-equations block is
/// singular.
fn optimal_distances(
    instance: &ProblemInstance,
    assignment: &[usize],
    robots: &[RobotState],
) -> Option<Vec<Vec<f64>>> {
    let n_samples = instance.n_samples();
    let mut out = Vec::with_capacity(instance.bearings.len());
    for (x_seq, &y) in assignment.iter().enumerate() {
        let robot = &robots[y];
        let mut ata = DMatrix::<f64>::zeros(n_samples, n_samples);
        let mut atb = DVector::<f64>::zeros(n_samples);
        for (e_idx, &edge) in instance.edges.iter().enumerate() {
            let g = edge_geometry(instance, x_seq, y, edge);
            let w = instance.weights[x_seq][e_idx];
            let fixed = robot.rotation * (robot.scale * g.dt_y + g.dr_y * robot.bias) - g.dt_a;
            // e = fixed + a1 d1 - a2 d2.
            let (a1, a2) = (g.ra1_b1, g.ra2_b2);
            ata[(edge.0, edge.0)] += w * a1.dot(&a1);
            ata[(edge.1, edge.1)] += w * a2.dot(&a2);
            let cross = -w * a1.dot(&a2);
            ata[(edge.0, edge.1)] += cross;
            ata[(edge.1, edge.0)] += cross;
            atb[edge.0] -= w * a1.dot(&fixed);
            atb[edge.1] += w * a2.dot(&fixed);
        }
        let chol = ata.cholesky()?;
        out.push(chol.solve(&atb).iter().cloned().collect());
    }
    Some(out)
}

fn result_from(
    instance: &ProblemInstance,
    assignment: &[usize],
    state: LmState,
    iterations: usize,
    converged: bool,
    init_rotations: Vec<Matrix3<f64>>,
) -> LocalSolveResult {
    let final_cost = assignment_cost(instance, assignment, &state.robots, &state.distances);
    LocalSolveResult {
        final_cost,
        robots: state.robots,
        distances: state.distances,
        assignment: assignment.to_vec(),
        iterations,
        converged,
        init_rotations,
    }
}

fn init_state(
    instance: &ProblemInstance,
    assignment: &[usize],
    init_rotations: &[Matrix3<f64>],
    init_full: Option<&[RobotState]>,
) -> LmState {
    let robots: Vec<RobotState> = match init_full {
        Some(states) => states.to_vec(),
        None => init_rotations
            .iter()
            .map(|r| RobotState {
                scale: 1.0,
                rotation: *r,
                bias: Vector3::zeros(),
            })
            .collect(),
    };
    let distances = optimal_distances(instance, assignment, &robots).unwrap_or_else(|| {
        vec![vec![1.0; instance.n_samples()]; instance.bearings.len()]
    });
    LmState { robots, distances }
}

/// Damped Gauss-Newton over the full variable set with a fixed assignment.
///
/// Multiplicative damping: accepted steps divide the parameter by three,
/// rejected ones double it. Stops on the gradient norm or the iteration
/// cap; non-convergence is reported, not an error.
pub fn lm_solve(
    instance: &ProblemInstance,
    assignment: &[usize],
    init_rotations: &[Matrix3<f64>],
    settings: &LocalSolveSettings,
) -> LocalSolveResult {
    lm_solve_from(instance, assignment, init_rotations, None, settings)
}

/// As [`lm_solve`] but optionally starting from full per-robot states.
pub fn lm_solve_from(
    instance: &ProblemInstance,
    assignment: &[usize],
    init_rotations: &[Matrix3<f64>],
    init_full: Option<&[RobotState]>,
    settings: &LocalSolveSettings,
) -> LocalSolveResult {
    let n_samples = instance.n_samples();
    let mut state = init_state(instance, assignment, init_rotations, init_full);
    let mut lambda = 1e-4;
    let mut converged = false;
    let mut iterations = 0;

    let (mut r, _) = residuals(instance, assignment, &state, false);
    let mut cost = r.norm_squared();

    for iter in 0..settings.max_lm_iterations {
        iterations = iter + 1;
        let (ri, jac) = residuals(instance, assignment, &state, true);
        r = ri;
        let jac = jac.unwrap();
        let grad = jac.transpose() * &r;
        if grad.norm() <= settings.gradient_tol {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = state.apply_step(&step, n_samples);
            let (rc, _) = residuals(instance, assignment, &candidate, false);
            let new_cost = rc.norm_squared();
            if new_cost < cost {
                state = candidate;
                cost = new_cost;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 2.0;
        }
        if !accepted {
            break;
        }
    }
    result_from(
        instance,
        assignment,
        state,
        iterations,
        converged,
        init_rotations.to_vec(),
    )
}

/// Joint linear least squares over scales, offsets and distances for fixed
/// rotations. Variables: per robot `[scale, offset]`, then distances.
fn linear_block(
    instance: &ProblemInstance,
    assignment: &[usize],
    robots: &[RobotState],
) -> Option<(Vec<RobotState>, Vec<Vec<f64>>)> {
    let n_robots = robots.len();
    let n_samples = instance.n_samples();
    let n_seq = instance.bearings.len();
    let nv = 4 * n_robots + n_samples * n_seq;
    let mut ata = DMatrix::<f64>::zeros(nv, nv);
    let mut atb = DVector::<f64>::zeros(nv);
    let dist_base = 4 * n_robots;

    // One edge contributes rows e = s ... : columns are (scale y, offset y,
    // d_{j1}, d_{j2}); accumulate normal equations directly.
    let mut cols: Vec<(usize, Vector3<f64>)> = Vec::with_capacity(8);
    for (x_seq, &y) in assignment.iter().enumerate() {
        let rot = robots[y].rotation;
        for (e_idx, &edge) in instance.edges.iter().enumerate() {
            let g = edge_geometry(instance, x_seq, y, edge);
            let w = instance.weights[x_seq][e_idx];
            cols.clear();
            cols.push((4 * y, rot * g.dt_y));
            let rdr = rot * g.dr_y;
            for c in 0..3 {
                cols.push((4 * y + 1 + c, rdr.column(c).into_owned()));
            }
            cols.push((dist_base + n_samples * x_seq + edge.0, g.ra1_b1));
            cols.push((dist_base + n_samples * x_seq + edge.1, -g.ra2_b2));
            let rhs = g.dt_a;
            for (i, ci) in &cols {
                for (j, cj) in &cols {
                    ata[(*i, *j)] += w * ci.dot(cj);
                }
                atb[*i] += w * ci.dot(&rhs);
            }
        }
    }
    let sol = ata.cholesky()?.solve(&atb);
    let new_robots: Vec<RobotState> = robots
        .iter()
        .enumerate()
        .map(|(y, r)| RobotState {
            scale: sol[4 * y],
            rotation: r.rotation,
            bias: Vector3::new(sol[4 * y + 1], sol[4 * y + 2], sol[4 * y + 3]),
        })
        .collect();
    let distances = (0..n_seq)
        .map(|x| {
            (0..n_samples)
                .map(|j| sol[dist_base + n_samples * x + j])
                .collect()
        })
        .collect();
    Some((new_robots, distances))
}

/// Per-robot orthogonal Procrustes update of the rotations for fixed
/// scales, offsets and distances.
fn rotation_block(
    instance: &ProblemInstance,
    assignment: &[usize],
    robots: &mut [RobotState],
    distances: &[Vec<f64>],
) -> bool {
    let n_robots = robots.len();
    let mut targets = vec![Matrix3::<f64>::zeros(); n_robots];
    for (x_seq, &y) in assignment.iter().enumerate() {
        let robot = &robots[y];
        for (e_idx, &edge) in instance.edges.iter().enumerate() {
            let g = edge_geometry(instance, x_seq, y, edge);
            let w = instance.weights[x_seq][e_idx];
            let u = robot.scale * g.dt_y + g.dr_y * robot.bias;
            let target = g.dt_a - g.ra1_b1 * distances[x_seq][edge.0]
                + g.ra2_b2 * distances[x_seq][edge.1];
            targets[y] += w * target * u.transpose();
        }
    }
    for (y, m) in targets.iter().enumerate() {
        match project_to_so3(m) {
            Ok(r) => robots[y].rotation = r,
            Err(_) => return false,
        }
    }
    true
}

/// Alternating minimization with a fixed assignment: exact linear solve of
/// the non-rotation block, then per-robot Procrustes. The cost never
/// increases across rounds.
pub fn am_solve(
    instance: &ProblemInstance,
    assignment: &[usize],
    init_rotations: &[Matrix3<f64>],
    settings: &LocalSolveSettings,
) -> LocalSolveResult {
    am_solve_from(instance, assignment, init_rotations, None, settings)
}

/// As [`am_solve`] but optionally starting from full per-robot states.
pub fn am_solve_from(
    instance: &ProblemInstance,
    assignment: &[usize],
    init_rotations: &[Matrix3<f64>],
    init_full: Option<&[RobotState]>,
    settings: &LocalSolveSettings,
) -> LocalSolveResult {
    let mut state = init_state(instance, assignment, init_rotations, init_full);
    let mut cost = assignment_cost(instance, assignment, &state.robots, &state.distances);
    let mut converged = false;
    let mut iterations = 0;

    for round in 0..settings.max_am_rounds {
        iterations = round + 1;
        let (robots, distances) = match linear_block(instance, assignment, &state.robots) {
            Some(sol) => sol,
            None => {
                return result_from(
                    instance,
                    assignment,
                    state,
                    iterations,
                    false,
                    init_rotations.to_vec(),
                )
            }
        };
        state.robots = robots;
        state.distances = distances;
        if !rotation_block(
            instance,
            assignment,
            &mut state.robots,
            &state.distances,
        ) {
            return result_from(
                instance,
                assignment,
                state,
                iterations,
                false,
                init_rotations.to_vec(),
            );
        }
        let new_cost = assignment_cost(instance, assignment, &state.robots, &state.distances);
        if (cost - new_cost).abs() <= settings.cost_change_tol * cost.max(1.0) {
            converged = true;
            break;
        }
        cost = new_cost;
    }
    // Final exact distance refit so the reported state is block-optimal.
    if let Some(d) = optimal_distances(instance, assignment, &state.robots) {
        state.distances = d;
    }
    result_from(
        instance,
        assignment,
        state,
        iterations,
        converged,
        init_rotations.to_vec(),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut items, &mut out);
    out
}

/// Anonymous alternating minimization: runs [`am_solve`] once per
/// assignment and returns the lowest-cost result. Exponential in the robot
/// count, so limited to six robots.
pub fn am_solve_anonymous(
    instance: &ProblemInstance,
    init_rotations: &[Matrix3<f64>],
    settings: &LocalSolveSettings,
) -> Result<LocalSolveResult> {
    let n = instance.bearings.len();
    if n > 6 {
        return Err(CertlocError::InvalidInput(format!(
            "anonymous enumeration over {n}! assignments is not tractable"
        )));
    }
    let mut best: Option<LocalSolveResult> = None;
    for perm in permutations(n) {
        let res = am_solve(instance, &perm, init_rotations, settings);
        if best
            .as_ref()
            .map_or(true, |b| res.final_cost < b.final_cost)
        {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// Number of assignments [`am_solve_anonymous`] evaluates for `n` robots.
pub fn anonymous_search_size(n: usize) -> usize {
    (1..=n).product()
}
