//! Lifted decision vector and quadratic constraint construction.
//!
//! The reduced cost acts on `z = (r, y)` only, but the model constraints
//! (orthonormality of the rotation blocks, binary assignment, one-to-one
//! correspondence) are not quadratic in `z`. Auxiliary variables make them
//! so: `ℓ` carries the per-robot rotation-parameter blocks before
//! assignment, `φ_θ` the assignment indicators, `φ_h` the four scalar
//! parameters (scale and feature offset) per robot, and `φ_μ` their
//! products with the indicators. Every constraint is a symmetric sparse
//! quadratic form `z̄^T Q_i z̄ = g_i` over the lifted vector
//! `z̄ = [r, y, ℓ, φ_θ, φ_h, φ_μ]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{CertlocError, Result};
use crate::formulation::RobotState;

/// Index layout of the lifted vector for `N` robots:
/// `r` (36 N^2), `y` (1), `ℓ` (36 N), `φ_θ` (N^2), `φ_h` (4 N), `φ_μ` (4 N^2),
/// total `41 N^2 + 40 N + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftedLayout {
    pub n_robots: usize,
}

impl LiftedLayout {
    pub fn dim(&self) -> usize {
        let n = self.n_robots;
        41 * n * n + 40 * n + 1
    }

    /// Dimension of the cost-carrying block `(r, y)`.
    pub fn reduced_dim(&self) -> usize {
        36 * self.n_robots * self.n_robots + 1
    }

    /// Dimension of the `r` block alone (the certified slice).
    pub fn r_dim(&self) -> usize {
        36 * self.n_robots * self.n_robots
    }

    pub fn r_offset(&self, x: usize, y: usize) -> usize {
        36 * (self.n_robots * x + y)
    }

    pub fn y_index(&self) -> usize {
        36 * self.n_robots * self.n_robots
    }

    pub fn ell_offset(&self, y: usize) -> usize {
        self.y_index() + 1 + 36 * y
    }

    pub fn theta_index(&self, x: usize, y: usize) -> usize {
        self.y_index() + 1 + 36 * self.n_robots + self.n_robots * x + y
    }

    pub fn h_index(&self, y: usize, k: usize) -> usize {
        self.y_index() + 1 + 36 * self.n_robots + self.n_robots * self.n_robots + 4 * y + k
    }

    pub fn mu_index(&self, x: usize, y: usize, k: usize) -> usize {
        self.y_index()
            + 1
            + 36 * self.n_robots
            + self.n_robots * self.n_robots
            + 4 * self.n_robots
            + 4 * self.n_robots * x
            + 4 * y
            + k
    }
}

/// Deterministic layout for `N >= 1` robots.
pub fn layout(n_robots: usize) -> Result<LiftedLayout> {
    if n_robots < 1 {
        return Err(CertlocError::InvalidInput(
            "lifted layout needs at least one robot".into(),
        ));
    }
    Ok(LiftedLayout { n_robots })
}

/// Families of emitted constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintTag {
    OrthCol,
    OrthRow,
    Cross,
    Binary,
    SumRow,
    SumCol,
    LinkMu,
    LinkR,
    Homogenization,
    EllOrth,
    EllCross,
    NormLink,
}

/// One sparse symmetric quadratic equality `z̄^T Q z̄ = g`.
///
/// Entries are stored in upper-triangle canonical form: `(i, j, v)` with
/// `i <= j` means `Q[i][j] = Q[j][i] = v`. A bilinear monomial `a * b`
/// therefore contributes `1/2` on each side of the diagonal.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint {
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: f64,
    pub tag: ConstraintTag,
}

impl QuadraticConstraint {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Quadratic form value at `z`.
    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for &(i, j, q) in &self.entries {
            if i == j {
                v += q * z[i] * z[i];
            } else {
                v += 2.0 * q * z[i] * z[j];
            }
        }
        v
    }

    /// Dense symmetric form, mostly for tests and export.
    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        for &(i, j, q) in &self.entries {
            m[(i, j)] += q;
            if i != j {
                m[(j, i)] += q;
            }
        }
        m
    }
}

/// Accumulates monomial coefficients and emits canonical upper-triangle
/// entries with duplicates merged.
struct ConstraintBuilder {
    tag: ConstraintTag,
    rhs: f64,
    terms: BTreeMap<(usize, usize), f64>,
}

impl ConstraintBuilder {
    fn new(tag: ConstraintTag, rhs: f64) -> Self {
        Self {
            tag,
            rhs,
            terms: BTreeMap::new(),
        }
    }

    /// Adds `coeff * z_i * z_j` to the form.
    fn monomial(&mut self, i: usize, j: usize, coeff: f64) -> &mut Self {
        let key = (i.min(j), i.max(j));
        let v = if i == j { coeff } else { coeff / 2.0 };
        *self.terms.entry(key).or_insert(0.0) += v;
        self
    }

    fn build(self) -> QuadraticConstraint {
        QuadraticConstraint {
            entries: self
                .terms
                .into_iter()
                .filter(|&(_, v)| v != 0.0)
                .map(|((i, j), v)| (i, j, v))
                .collect(),
            rhs: self.rhs,
            tag: self.tag,
        }
    }
}

/// Which optional constraint families to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintOptions {
    /// Row-orthogonality of each scaled rotation block (redundant).
    pub row_redundant: bool,
    /// Column cross products of each scaled rotation block (redundant).
    pub cross_redundant: bool,
    /// Orthogonality and cross products on the `ℓ` blocks.
    pub ell_constraints: bool,
    /// Norm links between assigned and unassigned blocks:
    /// `sum_X r_XY[u]^2 = ell_Y[u]^2` and `sum_X mu_XYk^2 = h_Yk^2`.
    /// Redundant at every rank-one feasible point (they follow from the
    /// link, binary, sum and homogenization equalities), but they bound the
    /// relaxation's feasible directions in the auxiliary diagonals, without
    /// which the solution set is unbounded and interior-point iterates
    /// diverge along it.
    pub norm_link: bool,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            row_redundant: false,
            cross_redundant: false,
            ell_constraints: false,
            norm_link: false,
        }
    }
}

const CYCLIC: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// Emits orthogonality (and optionally cross-product) equations for one
/// 3x3 block whose entry `(row, col)` lives at `idx(row, col)` and whose
/// magnitude variable lives at `mu`.
fn emit_block_constraints(
    out: &mut Vec<QuadraticConstraint>,
    idx: &dyn Fn(usize, usize) -> usize,
    mu: usize,
    col_tag: ConstraintTag,
    cross_tag: ConstraintTag,
    rows: bool,
    cross: bool,
) {
    // Column orthogonality: col_i . col_j = delta_ij mu^2, unique pairs.
    for i in 0..3 {
        for j in i..3 {
            let mut b = ConstraintBuilder::new(col_tag, 0.0);
            for r in 0..3 {
                b.monomial(idx(r, i), idx(r, j), 1.0);
            }
            if i == j {
                b.monomial(mu, mu, -1.0);
            }
            out.push(b.build());
        }
    }
    if rows {
        for i in 0..3 {
            for j in i..3 {
                let mut b = ConstraintBuilder::new(ConstraintTag::OrthRow, 0.0);
                for c in 0..3 {
                    b.monomial(idx(i, c), idx(j, c), 1.0);
                }
                if i == j {
                    b.monomial(mu, mu, -1.0);
                }
                out.push(b.build());
            }
        }
    }
    if cross {
        for &(i, j, k) in &CYCLIC {
            for comp in 0..3 {
                let (a, bb) = ((comp + 1) % 3, (comp + 2) % 3);
                let mut b = ConstraintBuilder::new(cross_tag, 0.0);
                b.monomial(idx(a, i), idx(bb, j), 1.0);
                b.monomial(idx(bb, i), idx(a, j), -1.0);
                b.monomial(mu, idx(comp, k), -1.0);
                out.push(b.build());
            }
        }
    }
}

/// Constructs every quadratic constraint of the lifted problem.
///
/// Affine model relations (assignment sums, the binary condition, the
/// variable links) are homogenized by a factor of `y`, which is exact
/// because `y^2 = 1` is itself enforced. The sign ambiguity this leaves is
/// resolved at recovery.
pub fn build_constraints(
    layout: &LiftedLayout,
    options: &ConstraintOptions,
) -> Vec<QuadraticConstraint> {
    let n = layout.n_robots;
    let y = layout.y_index();
    let mut out = Vec::new();

    for x in 0..n {
        for yy in 0..n {
            let base = layout.r_offset(x, yy);
            for k in 0..4 {
                let idx = move |r: usize, c: usize| base + 9 * k + 3 * c + r;
                emit_block_constraints(
                    &mut out,
                    &idx,
                    layout.mu_index(x, yy, k),
                    ConstraintTag::OrthCol,
                    ConstraintTag::Cross,
                    options.row_redundant,
                    options.cross_redundant,
                );
            }

            // Binary: theta^2 - y theta = 0.
            let th = layout.theta_index(x, yy);
            let mut b = ConstraintBuilder::new(ConstraintTag::Binary, 0.0);
            b.monomial(th, th, 1.0).monomial(y, th, -1.0);
            out.push(b.build());

            // Link r to theta * ell, entrywise.
            for u in 0..36 {
                let mut b = ConstraintBuilder::new(ConstraintTag::LinkR, 0.0);
                b.monomial(y, base + u, 1.0)
                    .monomial(th, layout.ell_offset(yy) + u, -1.0);
                out.push(b.build());
            }

            // Link mu to theta * h.
            for k in 0..4 {
                let mut b = ConstraintBuilder::new(ConstraintTag::LinkMu, 0.0);
                b.monomial(y, layout.mu_index(x, yy, k), 1.0)
                    .monomial(th, layout.h_index(yy, k), -1.0);
                out.push(b.build());
            }
        }
    }

    // Correspondence sums, homogenized: y * sum theta = 1.
    for yy in 0..n {
        let mut b = ConstraintBuilder::new(ConstraintTag::SumCol, 1.0);
        for x in 0..n {
            b.monomial(y, layout.theta_index(x, yy), 1.0);
        }
        out.push(b.build());
    }
    for x in 0..n {
        let mut b = ConstraintBuilder::new(ConstraintTag::SumRow, 1.0);
        for yy in 0..n {
            b.monomial(y, layout.theta_index(x, yy), 1.0);
        }
        out.push(b.build());
    }

    // Homogenization: y^2 = 1.
    let mut b = ConstraintBuilder::new(ConstraintTag::Homogenization, 1.0);
    b.monomial(y, y, 1.0);
    out.push(b.build());

    if options.norm_link {
        for yy in 0..n {
            for u in 0..36 {
                let mut b = ConstraintBuilder::new(ConstraintTag::NormLink, 0.0);
                for x in 0..n {
                    let i = layout.r_offset(x, yy) + u;
                    b.monomial(i, i, 1.0);
                }
                let e = layout.ell_offset(yy) + u;
                b.monomial(e, e, -1.0);
                out.push(b.build());
            }
            for k in 0..4 {
                let mut b = ConstraintBuilder::new(ConstraintTag::NormLink, 0.0);
                for x in 0..n {
                    let i = layout.mu_index(x, yy, k);
                    b.monomial(i, i, 1.0);
                }
                let h = layout.h_index(yy, k);
                b.monomial(h, h, -1.0);
                out.push(b.build());
            }
        }
    }

    if options.ell_constraints {
        for yy in 0..n {
            let base = layout.ell_offset(yy);
            for k in 0..4 {
                let idx = move |r: usize, c: usize| base + 9 * k + 3 * c + r;
                emit_block_constraints(
                    &mut out,
                    &idx,
                    layout.h_index(yy, k),
                    ConstraintTag::EllOrth,
                    ConstraintTag::EllCross,
                    false,
                    true,
                );
            }
        }
    }

    out
}

fn is_permutation(theta: &[Vec<f64>]) -> bool {
    let n = theta.len();
    if theta.iter().any(|row| row.len() != n) {
        return false;
    }
    for row in theta {
        if row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return false;
        }
        if row.iter().sum::<f64>() != 1.0 {
            return false;
        }
    }
    for y in 0..n {
        let col_sum: f64 = theta.iter().map(|row| row[y]).sum();
        if col_sum != 1.0 {
            return false;
        }
    }
    true
}

/// Lifts a ground-truth assignment and per-robot parameters into the full
/// lifted vector, with `y = 1`.
pub fn lift_ground_truth(
    layout: &LiftedLayout,
    theta: &[Vec<f64>],
    robots: &[RobotState],
) -> Result<DVector<f64>> {
    let n = layout.n_robots;
    if theta.len() != n || robots.len() != n {
        return Err(CertlocError::InvalidInput(format!(
            "expected {n} theta rows and robot states"
        )));
    }
    if !is_permutation(theta) {
        return Err(CertlocError::InvalidInput(
            "theta is not a permutation matrix".into(),
        ));
    }
    for (y, r) in robots.iter().enumerate() {
        if r.scale <= 0.0 {
            return Err(CertlocError::InvalidInput(format!(
                "robot {y}: scale must be positive"
            )));
        }
    }

    let mut z = DVector::zeros(layout.dim());
    z[layout.y_index()] = 1.0;
    for (yy, robot) in robots.iter().enumerate() {
        let p = robot.params();
        // ell block: the unassigned parameter-rotation products.
        for k in 0..4 {
            for c in 0..3 {
                for r in 0..3 {
                    z[layout.ell_offset(yy) + 9 * k + 3 * c + r] = p[k] * robot.rotation[(r, c)];
                }
            }
        }
        for k in 0..4 {
            z[layout.h_index(yy, k)] = p[k];
        }
    }
    for x in 0..n {
        for yy in 0..n {
            let t = theta[x][yy];
            z[layout.theta_index(x, yy)] = t;
            for k in 0..4 {
                z[layout.mu_index(x, yy, k)] = t * z[layout.h_index(yy, k)];
            }
            if t != 0.0 {
                let base = layout.r_offset(x, yy);
                for u in 0..36 {
                    z[base + u] = t * z[layout.ell_offset(yy) + u];
                }
            }
        }
    }
    Ok(z)
}

/// The lifted quadratic program: objective `Q_0` plus equality constraints.
#[derive(Debug, Clone)]
pub struct Qcqp {
    pub layout: LiftedLayout,
    pub q0: DMatrix<f64>,
    pub constraints: Vec<QuadraticConstraint>,
}

/// Embeds the reduced cost in the top-left `(r, y)` block of the lifted
/// objective; every auxiliary row and column is zero.
pub fn assemble_qcqp(
    reduced_cost: &DMatrix<f64>,
    constraints: Vec<QuadraticConstraint>,
    layout: LiftedLayout,
) -> Result<Qcqp> {
    let m0 = layout.reduced_dim();
    if reduced_cost.nrows() != m0 || reduced_cost.ncols() != m0 {
        return Err(CertlocError::InvalidInput(format!(
            "reduced cost is {}x{}, layout expects {m0}x{m0}",
            reduced_cost.nrows(),
            reduced_cost.ncols()
        )));
    }
    let d = layout.dim();
    let mut q0 = DMatrix::zeros(d, d);
    q0.view_mut((0, 0), (m0, m0)).copy_from(reduced_cost);
    Ok(Qcqp {
        layout,
        q0,
        constraints,
    })
}
