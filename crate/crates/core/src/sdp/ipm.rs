//! Primal-dual interior-point solver for the standard-form SDP
//!
//! ```text
//! min <C, X>  s.t.  <A_i, X> = b_i (i = 1..m),  X >= 0,
//! ```
//!
//! with one dense PSD block and sparse symmetric constraint matrices. Uses
//! the HKM search direction with a Mehrotra predictor-corrector; the Schur
//! complement `M_ij = tr(A_i X A_j S^{-1})` is assembled directly from the
//! constraint sparsity, which keeps the per-iteration cost dominated by a
//! handful of dense `d x d` products. The objective and every constraint
//! are normalized internally and rescaled on exit. Fully deterministic: no
//! randomized pivoting, no time-based state.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// One constraint: upper-triangle entries of the symmetric matrix plus the
/// full symmetric expansion used in trace products, and the right-hand side.
struct ConstraintData {
    upper: Vec<(usize, usize, f64)>,
    full: Vec<(u32, u32, f64)>,
    rhs: f64,
}

pub struct IpmSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Print per-iteration progress on stderr.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    SlowProgress,
    IterationLimit,
    Failed,
}

pub struct IpmResult {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub f_primal: f64,
    pub f_dual: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    pub status: IpmStatus,
}

pub fn solve(
    c: &DMatrix<f64>,
    constraints: &[(Vec<(usize, usize, f64)>, f64)],
    settings: &IpmSettings,
) -> IpmResult {
    let d = c.nrows();
    let m = constraints.len();

    // Objective normalized to unit scale, constraints to unit Frobenius
    // norm; outputs are rescaled at the end.
    let gamma = c.norm().max(1.0);
    let c_hat = c / gamma;

    let mut scales = Vec::with_capacity(m);
    let cons: Vec<ConstraintData> = constraints
        .iter()
        .map(|(upper, rhs)| {
            let fro = upper
                .iter()
                .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            scales.push(fro);
            let mut up = Vec::with_capacity(upper.len());
            let mut full = Vec::with_capacity(upper.len() * 2);
            for &(i, j, v) in upper {
                let v = v / fro;
                up.push((i, j, v));
                full.push((i as u32, j as u32, v));
                if i != j {
                    full.push((j as u32, i as u32, v));
                }
            }
            ConstraintData {
                upper: up,
                full,
                rhs: rhs / fro,
            }
        })
        .collect();
    let b = DVector::from_fn(m, |i, _| cons[i].rhs);
    let b_norm = b.norm();
    let c_norm = c_hat.norm();
    // Caller-scale right-hand side, for stopping tests and reporting.
    let b_true = DVector::from_fn(m, |i, _| constraints[i].1);
    let b_true_norm = b_true.norm();

    // Starting point: scaled multiples of the identity.
    let max_b = b.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let lambda_p = 10.0 * (1.0 + max_b);
    let lambda_d = 10.0 * (1.0 + c_norm);

    let mut x = DMatrix::<f64>::identity(d, d) * lambda_p;
    let mut s = DMatrix::<f64>::identity(d, d) * lambda_d;
    let mut y = DVector::<f64>::zeros(m);

    let mut status = IpmStatus::IterationLimit;
    let mut iterations = 0;
    let mut prev_mu = f64::INFINITY;
    let mut stall_count = 0;
    let mut step_collapse = 0;
    let mut window_merit = f64::INFINITY;
    let mut window_age = 0usize;

    let mut best: Option<(f64, DMatrix<f64>, DVector<f64>)> = None;

    for iter in 0..settings.max_iter {
        iterations = iter + 1;

        let lx = match Cholesky::new(x.clone()) {
            Some(l) => l,
            None => {
                status = IpmStatus::Failed;
                break;
            }
        };
        let ls = match Cholesky::new(s.clone()) {
            Some(l) => l,
            None => {
                status = IpmStatus::Failed;
                break;
            }
        };
        let s_inv = ls.inverse();

        // Residuals.
        let ax = DVector::from_fn(m, |i, _| trace_dot(&cons[i].full, &x));
        let rp = &b - &ax;
        let mut rd = &c_hat - &s;
        add_weighted(&mut rd, &cons, &y, -1.0);

        // The reported primal value carries the first-order feasibility
        // correction lambda . (b - A(X)), which cancels the objective error
        // a slightly infeasible X induces; the gap is then the true
        // complementarity <X, C - A'(y)>.
        let f_primal = (dot(&c_hat, &x) + y.dot(&rp)) * gamma;
        let f_dual = b.dot(&y) * gamma;
        // All stopping quantities are evaluated at the caller's scale.
        let rp_true = DVector::from_fn(m, |i, _| rp[i] * scales[i]);
        let pinf = rp_true.norm() / (1.0 + b_true_norm);
        let dinf = rd.norm() / (1.0 + c_norm);
        let rel_gap = (f_primal - f_dual).abs() / (1.0 + f_primal.abs() + f_dual.abs());
        let mu = dot(&x, &s) / d as f64;
        // Complementarity depth matters to the consumer (it controls how
        // close the matrix iterate is to its limit rank), so it joins the
        // iterate-selection merit.
        let mu_rel = (d as f64) * mu * gamma / (1.0 + f_primal.abs() + f_dual.abs());
        let merit = rel_gap + pinf + dinf + mu_rel;
        if best.as_ref().map_or(true, |(bm, ..)| merit < *bm) {
            best = Some((merit, x.clone(), y.clone()));
        }
        if settings.trace {
            eprintln!(
                "it {iter:3} mu {mu:9.3e} gap {rel_gap:9.3e} pinf {pinf:9.3e} dinf {dinf:9.3e} fp {f_primal:12.5e} fd {f_dual:12.5e} |X| {:9.3e}",
                x.norm()
            );
        }
        if pinf <= settings.eps_abs && dinf <= settings.eps_abs && rel_gap <= settings.eps_rel {
            status = IpmStatus::Converged;
            break;
        }

        // Slow grinding is still progress on degenerate endgames; stop only
        // when the best merit has not moved meaningfully over a window.
        if mu < prev_mu * 0.9999 {
            stall_count = 0;
        } else {
            stall_count += 1;
            if stall_count >= 8 {
                status = IpmStatus::SlowProgress;
                break;
            }
        }
        prev_mu = mu;
        // Feasibility reaches its floor early; windowed progress watches
        // the quantities that keep improving.
        let progress = rel_gap + dinf + mu_rel;
        if progress < window_merit {
            window_merit = progress;
            window_age = 0;
        } else {
            window_age += 1;
            if window_age >= 12 {
                status = IpmStatus::SlowProgress;
                break;
            }
        }

        // Schur complement M_ij = tr(A_i X A_j S^{-1}).
        let mut mmat = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut acc = 0.0;
                for &(a, bb, va) in &cons[i].full {
                    let xb = x.row(bb as usize);
                    let sa = s_inv.column(a as usize);
                    for &(cc, e, vb) in &cons[j].full {
                        acc += va * vb * xb[cc as usize] * sa[e as usize];
                    }
                }
                mmat[(i, j)] = acc;
                mmat[(j, i)] = acc;
            }
        }
        // Tiny diagonal lift keeps the factorization alive when constraints
        // become numerically dependent near the boundary.
        let diag_max = (0..m).fold(0.0_f64, |acc, i| acc.max(mmat[(i, i)].abs()));
        for i in 0..m {
            mmat[(i, i)] += 1e-13 * diag_max.max(1.0);
        }
        let mchol = match Cholesky::new(mmat.clone()) {
            Some(ch) => ch,
            None => {
                status = IpmStatus::Failed;
                break;
            }
        };
        // Iterative refinement recovers digits once X and S are nearly
        // singular.
        let solve_refined = |rhs: &DVector<f64>| -> DVector<f64> {
            let mut sol = mchol.solve(rhs);
            let scale = rhs.norm().max(1e-300);
            for _ in 0..3 {
                let resid = rhs - &mmat * &sol;
                if resid.norm() <= 1e-14 * scale {
                    break;
                }
                sol += mchol.solve(&resid);
            }
            sol
        };

        // Shared rhs pieces.
        let x_rd_sinv = &x * &rd * &s_inv;
        let a_of_xrds = DVector::from_fn(m, |i, _| trace_dot(&cons[i].full, &x_rd_sinv));
        let a_of_sinv = DVector::from_fn(m, |i, _| trace_dot(&cons[i].full, &s_inv));

        // Predictor (affine scaling) direction.
        let rhs_aff = &b + &a_of_xrds;
        let dy_aff = solve_refined(&rhs_aff);
        let mut ds_aff = rd.clone();
        add_weighted(&mut ds_aff, &cons, &dy_aff, -1.0);
        let dx_aff_raw = -(&x) - &x * &ds_aff * &s_inv;
        let dx_aff = symmetrize(&dx_aff_raw);

        let ap_aff = max_step(&lx, &dx_aff).min(1.0);
        let ad_aff = max_step(&ls, &ds_aff).min(1.0);
        let gap_now = dot(&x, &s);
        let x_try = &x + &dx_aff * ap_aff;
        let s_try = &s + &ds_aff * ad_aff;
        let gap_aff = dot(&x_try, &s_try).max(0.0);
        // In the endgame the second-order correction amplifies roundoff;
        // plain short-step centering grinds the complementarity further.
        let endgame = mu < 1e-9;
        let (sigma, use_corrector) = if endgame {
            (0.15, false)
        } else {
            // Pure centering makes no progress, so sigma is capped below
            // one, harder once the gap is already small.
            let cap = if rel_gap < 1e-5 { 0.4 } else { 0.8 };
            (((gap_aff / gap_now).powi(3)).clamp(1e-10, cap), true)
        };
        let nu = sigma * mu;

        // Corrector direction, with the Mehrotra second-order term outside
        // the endgame.
        let mut rhs = &b + &a_of_xrds - &a_of_sinv * nu;
        let mut second = DMatrix::zeros(0, 0);
        if use_corrector {
            second = &dx_aff * &ds_aff * &s_inv;
            rhs += DVector::from_fn(m, |i, _| trace_dot(&cons[i].full, &second));
        }
        let dy = solve_refined(&rhs);
        let mut ds = rd.clone();
        add_weighted(&mut ds, &cons, &dy, -1.0);
        let mut dx_raw = &s_inv * nu - &x - &x * &ds * &s_inv;
        if use_corrector {
            dx_raw -= &dx_aff * &ds_aff * &s_inv;
        }
        let dx = symmetrize(&dx_raw);

        let tau = if endgame {
            0.99
        } else if rel_gap < 1e-5 {
            0.98
        } else {
            0.95
        };
        let mut ap = (tau * max_step(&lx, &dx)).min(1.0);
        let mut ad = (tau * max_step(&ls, &ds)).min(1.0);

        // Cholesky-verified fallback in case the step-length estimate was
        // optimistic.
        for _ in 0..30 {
            let cand = &x + &dx * ap;
            if Cholesky::new(cand).is_some() {
                break;
            }
            ap *= 0.8;
        }
        for _ in 0..30 {
            let cand = &s + &ds * ad;
            if Cholesky::new(cand).is_some() {
                break;
            }
            ad *= 0.8;
        }

        if settings.trace {
            eprintln!("       sigma {sigma:9.3e} ap {ap:9.3e} ad {ad:9.3e}");
        }
        if ap.max(ad) < 1e-8 {
            step_collapse += 1;
            if step_collapse >= 3 {
                status = IpmStatus::SlowProgress;
                break;
            }
        } else {
            step_collapse = 0;
        }

        x += &dx * ap;
        s += &ds * ad;
        y += &dy * ad;
        x = symmetrize(&x);
        s = symmetrize(&s);
    }

    // Report the best iterate seen. Dual feasibility is measured as the PSD
    // defect of the slack implied by the multipliers, since S := C - A'(y)
    // can always be taken exactly.
    let (_, bx, by) = best.unwrap_or((f64::INFINITY, x, y));
    let ax = DVector::from_fn(m, |i, _| trace_dot(&cons[i].full, &bx));
    let rp = DVector::from_fn(m, |i, _| b[i] - ax[i]);
    let rp_true = DVector::from_fn(m, |i, _| rp[i] * scales[i]);
    let mut s_implied = c_hat.clone();
    add_weighted(&mut s_implied, &cons, &by, -1.0);
    let dual_infeas = {
        let eig = s_implied.symmetric_eigen();
        let min = eig.eigenvalues.min();
        (-min).max(0.0) / (1.0 + c_norm)
    };
    let f_primal = (dot(&c_hat, &bx) + by.dot(&rp)) * gamma;
    let f_dual = b.dot(&by) * gamma;
    // Undo the per-constraint normalization on the multipliers.
    let y_out = DVector::from_fn(m, |i, _| by[i] * gamma / scales[i]);
    IpmResult {
        x: bx,
        y: y_out,
        f_primal,
        f_dual,
        primal_infeas: rp_true.norm() / (1.0 + b_true_norm),
        dual_infeas,
        rel_gap: (f_primal - f_dual).abs() / (1.0 + f_primal.abs() + f_dual.abs()),
        iterations,
        status,
    }
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// tr(A G) for symmetric sparse A (full expansion) and dense G; G need not
/// be symmetric.
fn trace_dot(full: &[(u32, u32, f64)], g: &DMatrix<f64>) -> f64 {
    full.iter()
        .map(|&(i, j, v)| v * g[(j as usize, i as usize)])
        .sum()
}

/// out += sign * sum_i w_i A_i.
fn add_weighted(out: &mut DMatrix<f64>, cons: &[ConstraintData], w: &DVector<f64>, sign: f64) {
    for (k, con) in cons.iter().enumerate() {
        let c = sign * w[k];
        if c == 0.0 {
            continue;
        }
        for &(i, j, v) in &con.upper {
            out[(i, j)] += c * v;
            if i != j {
                out[(j, i)] += c * v;
            }
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest step `alpha` with `P + alpha dP` remaining PSD, from the extreme
/// eigenvalue of `L^{-1} dP L^{-T}` (Lanczos estimate; callers verify with a
/// Cholesky attempt).
fn max_step(lp: &Cholesky<f64, Dyn>, dp: &DMatrix<f64>) -> f64 {
    let l = lp.l();
    let w = l.solve_lower_triangular(dp).unwrap();
    let wt = w.transpose();
    let k = l.solve_lower_triangular(&wt).unwrap().transpose();
    // lambda_min(K) via Lanczos on -K.
    let neg_k = -symmetrize(&k);
    let lmax = lanczos_max_eig(&neg_k, 60, 1e-10);
    if lmax <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / lmax
    }
}

/// Largest eigenvalue of a symmetric matrix by Lanczos with full
/// reorthogonalization and a deterministic start vector.
fn lanczos_max_eig(a: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let d = a.nrows();
    if d == 0 {
        return 0.0;
    }
    if d == 1 {
        return a[(0, 0)];
    }
    let steps = max_iter.min(d);
    let mut q = DVector::from_fn(d, |i, _| ((i + 1) as f64).sin() + 0.5);
    q /= q.norm();
    let mut qs: Vec<DVector<f64>> = vec![q.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut prev_est = f64::NEG_INFINITY;

    for it in 0..steps {
        let mut w = a * &qs[it];
        let alpha = qs[it].dot(&w);
        alphas.push(alpha);
        w -= &qs[it] * alpha;
        if it > 0 {
            w -= &qs[it - 1] * betas[it - 1];
        }
        // Full reorthogonalization.
        for qk in &qs {
            let c = qk.dot(&w);
            w -= qk * c;
        }
        let beta = w.norm();

        // Estimate from the tridiagonal section.
        let k = alphas.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let est = t.symmetric_eigen().eigenvalues.max();
        if beta < 1e-13 || (est - prev_est).abs() <= tol * est.abs().max(1.0) && it > 4 {
            return est;
        }
        prev_est = est;
        betas.push(beta);
        qs.push(w / beta);
    }
    prev_est
}
