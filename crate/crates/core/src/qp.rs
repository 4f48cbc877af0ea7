//! Dense convex quadratic programming.
//!
//! Solves `min 1/2 x'Qx + c'x` subject to `A_eq x = b_eq`, `G x <= h`, and
//! `x >= lb` via operator splitting (ADMM with over-relaxation) followed by
//! an active-set polish that solves the KKT system of the identified active
//! constraints, so reported optima carry near-machine-precision residuals.
//!
//! The contract is the KKT postcondition, not the method: a solution with
//! `Optimal` status is primal feasible and KKT-stationary within the given
//! tolerance. Semidefinite objectives (the core-selecting program has a flat
//! direction in its surplus/relaxation coupling) get a `1e-9` ridge on `Q`,
//! which is recorded on the solution rather than applied silently.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;

/// Ridge added to `Q` when its smallest eigenvalue is below the PSD floor
/// of strict positive definiteness, guaranteeing a unique minimizer.
pub const RIDGE: f64 = 1e-9;

/// Eigenvalue floor for the PSD diagnostic.
const PSD_FLOOR: f64 = -1e-9;

/// A convex QP instance: `min 1/2 x'Qx + c'x` with linear equality and
/// inequality constraints and per-variable lower bounds (`-inf` = unbounded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProgram {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Per-variable lower bounds; `-inf` entries (unbounded) are encoded as
    /// `null` in the JSON debug dump.
    #[serde(with = "serde_lower_bounds")]
    pub lb: DVector<f64>,
}

mod serde_lower_bounds {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(lb: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<Option<f64>> = lb
            .iter()
            .map(|&v| if v.is_finite() { Some(v) } else { None })
            .collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let items = Vec::<Option<f64>>::deserialize(d)?;
        Ok(DVector::from_iterator(
            items.len(),
            items.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
        ))
    }
}

impl QuadraticProgram {
    /// Validate dimensions, symmetry (within 1e-12), and the PSD diagnostic
    /// (smallest eigenvalue of `Q` at least `-1e-9`).
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        lb: DVector<f64>,
    ) -> Result<Self> {
        let n = c.len();
        if n == 0 {
            return Err(Error::parameter("QP needs at least one variable"));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::parameter(format!(
                "Q is {}x{} but there are {} variables",
                q.nrows(),
                q.ncols(),
                n
            )));
        }
        if a_eq.nrows() != b_eq.len() || (a_eq.nrows() > 0 && a_eq.ncols() != n) {
            return Err(Error::parameter("equality constraint dimensions inconsistent"));
        }
        if g.nrows() != h.len() || (g.nrows() > 0 && g.ncols() != n) {
            return Err(Error::parameter("inequality constraint dimensions inconsistent"));
        }
        if lb.len() != n {
            return Err(Error::parameter("lower bound length does not match variables"));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 {
                    return Err(Error::parameter(format!(
                        "Q is not symmetric at ({i}, {j}): {} vs {}",
                        q[(i, j)],
                        q[(j, i)]
                    )));
                }
            }
        }
        let min_eig = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < PSD_FLOOR {
            return Err(Error::parameter(format!(
                "Q is not positive semidefinite: smallest eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self {
            q,
            c,
            a_eq,
            b_eq,
            g,
            h,
            lb,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    /// Objective value `1/2 x'Qx + c'x` (constants omitted).
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.q * x)[(0, 0)] + self.c.dot(x)
    }

    /// Serialize the full instance for reproducing solver behavior offline.
    pub fn to_debug_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("QP serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpStatus::Optimal => write!(f, "optimal"),
            QpStatus::Infeasible => write!(f, "infeasible"),
            QpStatus::IterationLimit => write!(f, "iteration limit"),
        }
    }
}

/// Lagrange multipliers in the original problem form: `eq` for the equality
/// rows (free sign), `ineq` for `Gx <= h` (non-negative at an optimum), and
/// `lower` for `x >= lb` (non-negative, zero where the bound is infinite).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
}

/// The four KKT residual norms (infinity norms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub primal_eq: f64,
    pub primal_ineq: f64,
    pub dual: f64,
    pub complementarity: f64,
    /// Whether all four residuals are within the tolerance passed to `check_kkt`.
    pub satisfied: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_eq
            .max(self.primal_ineq)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Evaluate the KKT residuals of `(x, multipliers)` for `qp`. Pure function.
///
/// `dual` combines the stationarity norm with any multiplier sign violation;
/// `primal_ineq` combines `Gx <= h` and `x >= lb` violations.
pub fn check_kkt(
    qp: &QuadraticProgram,
    x: &DVector<f64>,
    multipliers: &Multipliers,
    tol: f64,
) -> KktReport {
    let primal_eq = if qp.a_eq.nrows() > 0 {
        (&qp.a_eq * x - &qp.b_eq).abs().max()
    } else {
        0.0
    };

    let mut primal_ineq = 0.0f64;
    if qp.g.nrows() > 0 {
        let slack = &qp.g * x - &qp.h;
        primal_ineq = slack.iter().fold(primal_ineq, |m, &s| m.max(s.max(0.0)));
    }
    for j in 0..qp.n_vars() {
        if qp.lb[j].is_finite() {
            primal_ineq = primal_ineq.max(qp.lb[j] - x[j]);
        }
    }
    primal_ineq = primal_ineq.max(0.0);

    let mut grad = &qp.q * x + &qp.c;
    if qp.a_eq.nrows() > 0 {
        grad += qp.a_eq.transpose() * &multipliers.eq;
    }
    if qp.g.nrows() > 0 {
        grad += qp.g.transpose() * &multipliers.ineq;
    }
    grad -= &multipliers.lower;
    let mut dual = grad.abs().max();
    for v in multipliers.ineq.iter().chain(multipliers.lower.iter()) {
        dual = dual.max(-v);
    }

    let mut complementarity = 0.0f64;
    if qp.g.nrows() > 0 {
        let slack = &qp.g * x - &qp.h;
        for (mu, s) in multipliers.ineq.iter().zip(slack.iter()) {
            complementarity = complementarity.max((mu * s).abs());
        }
    }
    for j in 0..qp.n_vars() {
        if qp.lb[j].is_finite() {
            complementarity = complementarity.max((multipliers.lower[j] * (x[j] - qp.lb[j])).abs());
        }
    }

    let report = KktReport {
        primal_eq,
        primal_ineq,
        dual,
        complementarity,
        satisfied: false,
    };
    KktReport {
        satisfied: report.max_residual() <= tol,
        ..report
    }
}

/// Solver output. `kkt` refers to the problem actually solved, i.e. with the
/// recorded `ridge` (zero for strictly convex inputs) added to `Q`; the
/// `objective` is always evaluated on the original `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktReport,
    pub multipliers: Multipliers,
    pub ridge: f64,
    pub iterations: usize,
    /// For `Infeasible`: the smallest primal residual the feasibility
    /// iteration converged to (how far the constraints are from consistent).
    pub primal_infeasibility: Option<f64>,
}

/// Internal row-form: `l <= Ax <= u` covering equalities, inequalities, and
/// finite lower bounds.
struct RowForm {
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n_eq: usize,
    n_ineq: usize,
    /// variable index per bound row
    bound_vars: Vec<usize>,
}

fn row_form(qp: &QuadraticProgram) -> RowForm {
    let n = qp.n_vars();
    let n_eq = qp.a_eq.nrows();
    let n_ineq = qp.g.nrows();
    let bound_vars: Vec<usize> = (0..n).filter(|&j| qp.lb[j].is_finite()).collect();
    let m = n_eq + n_ineq + bound_vars.len();
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let mut u = DVector::from_element(m, f64::INFINITY);
    for r in 0..n_eq {
        for j in 0..n {
            a[(r, j)] = qp.a_eq[(r, j)];
        }
        l[r] = qp.b_eq[r];
        u[r] = qp.b_eq[r];
    }
    for r in 0..n_ineq {
        for j in 0..n {
            a[(n_eq + r, j)] = qp.g[(r, j)];
        }
        u[n_eq + r] = qp.h[r];
    }
    for (k, &j) in bound_vars.iter().enumerate() {
        a[(n_eq + n_ineq + k, j)] = 1.0;
        l[n_eq + n_ineq + k] = qp.lb[j];
    }
    RowForm {
        a,
        l,
        u,
        n_eq,
        n_ineq,
        bound_vars,
    }
}

/// Split an internal row multiplier vector into original-form multipliers.
fn split_multipliers(rows: &RowForm, y: &DVector<f64>, n_vars: usize) -> Multipliers {
    let eq = DVector::from_fn(rows.n_eq, |r, _| y[r]);
    let ineq = DVector::from_fn(rows.n_ineq, |r, _| y[rows.n_eq + r]);
    let mut lower = DVector::zeros(n_vars);
    for (k, &j) in rows.bound_vars.iter().enumerate() {
        // internal convention: y <= 0 at a lower bound; x >= lb multiplier is -y
        lower[j] = -y[rows.n_eq + rows.n_ineq + k];
    }
    Multipliers { eq, ineq, lower }
}

struct AdmmState {
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

/// Solve the QP. `Optimal` guarantees feasibility and stationarity within
/// `tol`; `Infeasible` carries a converged feasibility residual; otherwise
/// `IterationLimit` reports the best iterate found.
pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::parameter("tolerance must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::parameter("max_iter must be positive"));
    }

    let n = qp.n_vars();
    let min_eig = qp
        .q
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let ridge = if min_eig < RIDGE { RIDGE } else { 0.0 };
    let mut solved = qp.clone();
    if ridge > 0.0 {
        for j in 0..n {
            solved.q[(j, j)] += ridge;
        }
    }

    let rows = row_form(&solved);
    let m = rows.a.nrows();

    // No constraints at all: Newton step on the (ridged) objective.
    if m == 0 {
        let chol = Cholesky::new(solved.q.clone())
            .ok_or_else(|| Error::parameter("objective is unbounded below (Q singular)"))?;
        let x = chol.solve(&(-&solved.c));
        let multipliers = split_multipliers(&rows, &DVector::zeros(0), n);
        let kkt = check_kkt(&solved, &x, &multipliers, tol);
        return Ok(QpSolution {
            objective: qp.objective(&x),
            status: if kkt.satisfied {
                QpStatus::Optimal
            } else {
                QpStatus::IterationLimit
            },
            x,
            kkt,
            multipliers,
            ridge,
            iterations: 0,
            primal_infeasibility: None,
        });
    }

    const SIGMA: f64 = 1e-6;
    const ALPHA: f64 = 1.6;
    const CHECK_EVERY: usize = 25;
    const EQ_RHO_SCALE: f64 = 1e3;

    let mut rho_bar = 0.1f64;
    let rho_vec = |rho_bar: f64| {
        DVector::from_fn(m, |r, _| {
            if r < rows.n_eq {
                rho_bar * EQ_RHO_SCALE
            } else {
                rho_bar
            }
        })
    };
    let factorize = |rho: &DVector<f64>| -> Cholesky<f64, nalgebra::Dyn> {
        let mut mat = solved.q.clone();
        for j in 0..n {
            mat[(j, j)] += SIGMA;
        }
        let scaled = DMatrix::from_fn(m, n, |r, j| rows.a[(r, j)] * rho[r]);
        mat += rows.a.transpose() * scaled;
        Cholesky::new(mat).expect("ADMM normal matrix is positive definite")
    };

    let mut rho = rho_vec(rho_bar);
    let mut chol = factorize(&rho);

    let mut state = AdmmState {
        x: DVector::zeros(n),
        z: DVector::from_fn(m, |r, _| 0.0f64.clamp(rows.l[r], rows.u[r])),
        y: DVector::zeros(m),
    };

    let finish = |x: &DVector<f64>, y: &DVector<f64>, status: QpStatus, iters: usize,
                  primal_infeasibility: Option<f64>| {
        let multipliers = split_multipliers(&rows, y, n);
        let kkt = check_kkt(&solved, x, &multipliers, tol);
        QpSolution {
            x: x.clone(),
            objective: qp.objective(x),
            status,
            kkt,
            multipliers,
            ridge,
            iterations: iters,
            primal_infeasibility,
        }
    };

    let mut iter = 0usize;
    let mut last_polish_attempt = 0usize;
    let mut y_chunk_start = state.y.clone();
    while iter < max_iter {
        for _ in 0..CHECK_EVERY.min(max_iter - iter) {
            admm_step(&solved, &rows, &chol, &rho, ALPHA, SIGMA, &mut state);
            iter += 1;
        }

        let r_prim = (&rows.a * &state.x - &state.z).abs().max();
        let grad = &solved.q * &state.x + &solved.c + rows.a.transpose() * &state.y;
        let r_dual = grad.abs().max();

        // Converged within tolerance without polish.
        if r_prim <= tol && r_dual <= tol {
            let sol = finish(&state.x, &state.y, QpStatus::Optimal, iter, None);
            if sol.kkt.satisfied {
                return Ok(sol);
            }
        }

        // Polish once the iterate is in the neighborhood of the solution.
        let trigger = (tol * 1e3).max(1e-6);
        if (r_prim <= trigger && r_dual <= trigger) && iter - last_polish_attempt >= 100 {
            last_polish_attempt = iter;
            if let Some((x_p, y_p)) = polish(&solved, &rows, &state, tol) {
                return Ok(finish(&x_p, &y_p, QpStatus::Optimal, iter, None));
            }
        }

        // Primal infeasibility certificate from the dual update direction.
        let delta_y = &state.y - &y_chunk_start;
        let dy_norm = delta_y.abs().max();
        if dy_norm > 1e-14 {
            let eps = 1e-8 * dy_norm;
            let at_dy_small = (rows.a.transpose() * &delta_y).abs().max() <= eps;
            if at_dy_small {
                let mut support = 0.0;
                let mut valid = true;
                for r in 0..m {
                    let pos = delta_y[r].max(0.0);
                    let neg = delta_y[r].min(0.0);
                    if rows.u[r].is_finite() {
                        support += rows.u[r] * pos;
                    } else if pos > eps {
                        valid = false;
                        break;
                    }
                    if rows.l[r].is_finite() {
                        support += rows.l[r] * neg;
                    } else if -neg > eps {
                        valid = false;
                        break;
                    }
                }
                if valid && support < -eps {
                    return Ok(finish(
                        &state.x,
                        &state.y,
                        QpStatus::Infeasible,
                        iter,
                        Some(r_prim),
                    ));
                }
            }
        }
        y_chunk_start = state.y.clone();

        // Adaptive rho keeps primal and dual progress balanced.
        if iter % 200 == 0 {
            let prim_scale = (&rows.a * &state.x)
                .abs()
                .max()
                .max(state.z.abs().max())
                .max(1e-10);
            let dual_scale = (&solved.q * &state.x)
                .abs()
                .max()
                .max(solved.c.abs().max())
                .max((rows.a.transpose() * &state.y).abs().max())
                .max(1e-10);
            let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-16)).sqrt();
            let new_rho_bar = (rho_bar * ratio).clamp(1e-6, 1e6);
            if new_rho_bar / rho_bar > 5.0 || rho_bar / new_rho_bar > 5.0 {
                rho_bar = new_rho_bar;
                rho = rho_vec(rho_bar);
                chol = factorize(&rho);
            }
        }
    }

    // Out of iterations: last polish attempt, then report honestly.
    if let Some((x_p, y_p)) = polish(&solved, &rows, &state, tol) {
        return Ok(finish(&x_p, &y_p, QpStatus::Optimal, iter, None));
    }
    let r_prim = (&rows.a * &state.x - &state.z).abs().max();
    let grad = &solved.q * &state.x + &solved.c + rows.a.transpose() * &state.y;
    let status = if r_prim <= tol && grad.abs().max() <= tol {
        QpStatus::Optimal
    } else {
        QpStatus::IterationLimit
    };
    Ok(finish(&state.x, &state.y, status, iter, None))
}

fn admm_step(
    solved: &QuadraticProgram,
    rows: &RowForm,
    chol: &Cholesky<f64, nalgebra::Dyn>,
    rho: &DVector<f64>,
    alpha: f64,
    sigma: f64,
    state: &mut AdmmState,
) {
    let m = rows.a.nrows();
    let rhs = {
        let mut scaled = DVector::zeros(m);
        for r in 0..m {
            scaled[r] = rho[r] * state.z[r] - state.y[r];
        }
        sigma * &state.x - &solved.c + rows.a.transpose() * scaled
    };
    let x_tilde = chol.solve(&rhs);
    let z_tilde = &rows.a * &x_tilde;

    let x_next = alpha * &x_tilde + (1.0 - alpha) * &state.x;
    let mut z_next = DVector::zeros(m);
    let mut y_next = DVector::zeros(m);
    for r in 0..m {
        let relaxed = alpha * z_tilde[r] + (1.0 - alpha) * state.z[r];
        let v = relaxed + state.y[r] / rho[r];
        z_next[r] = v.clamp(rows.l[r], rows.u[r]);
        y_next[r] = state.y[r] + rho[r] * (relaxed - z_next[r]);
    }
    state.x = x_next;
    state.z = z_next;
    state.y = y_next;
}

/// Solve the equality-constrained KKT system on the active set implied by
/// the current iterate, with sign repair and violated-constraint insertion.
/// Returns `(x, row multipliers)` when the polished point satisfies the full
/// KKT conditions within `tol`.
fn polish(
    solved: &QuadraticProgram,
    rows: &RowForm,
    state: &AdmmState,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = solved.n_vars();
    let m = rows.a.nrows();
    let slack_tol = (tol * 100.0).max(1e-7);
    let sign_tol = 1e-9;

    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Lower,
        Upper,
        Free,
    }

    let ax = &rows.a * &state.x;
    let mut side = vec![Side::Free; m];
    for r in 0..m {
        if rows.l[r] == rows.u[r] {
            side[r] = Side::Upper; // equality rows are always active
        } else if rows.u[r].is_finite()
            && (state.y[r] > sign_tol || (ax[r] - rows.u[r]).abs() <= slack_tol)
        {
            side[r] = Side::Upper;
        } else if rows.l[r].is_finite()
            && (state.y[r] < -sign_tol || (ax[r] - rows.l[r]).abs() <= slack_tol)
        {
            side[r] = Side::Lower;
        }
    }

    for _round in 0..12 {
        let active: Vec<usize> = (0..m).filter(|&r| side[r] != Side::Free).collect();
        let ma = active.len();

        // KKT system with a tiny symmetric regularization, then iterative
        // refinement against the unregularized system.
        let delta = 1e-11 * (1.0 + solved.q.abs().max());
        let dim = n + ma;
        let mut khat = DMatrix::zeros(dim, dim);
        let mut k = DMatrix::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = solved.q[(i, j)];
                khat[(i, j)] = solved.q[(i, j)];
            }
            khat[(i, i)] += delta;
        }
        for (a_idx, &r) in active.iter().enumerate() {
            for j in 0..n {
                k[(n + a_idx, j)] = rows.a[(r, j)];
                k[(j, n + a_idx)] = rows.a[(r, j)];
                khat[(n + a_idx, j)] = rows.a[(r, j)];
                khat[(j, n + a_idx)] = rows.a[(r, j)];
            }
            khat[(n + a_idx, n + a_idx)] = -delta;
        }
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -solved.c[j];
        }
        for (a_idx, &r) in active.iter().enumerate() {
            rhs[n + a_idx] = match side[r] {
                Side::Lower => rows.l[r],
                Side::Upper => rows.u[r],
                Side::Free => unreachable!(),
            };
        }

        let lu = khat.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..2 {
            let residual = &rhs - &k * &sol;
            if let Some(correction) = lu.solve(&residual) {
                sol += correction;
            }
        }

        let x = DVector::from_fn(n, |j, _| sol[j]);
        let mut y = DVector::zeros(m);
        for (a_idx, &r) in active.iter().enumerate() {
            y[r] = sol[n + a_idx];
        }

        // Repair pass: drop wrong-signed actives, add violated inactives.
        let ax = &rows.a * &x;
        let mut changed = false;
        for r in 0..m {
            if rows.l[r] == rows.u[r] {
                continue;
            }
            match side[r] {
                Side::Upper if y[r] < -sign_tol => {
                    side[r] = Side::Free;
                    changed = true;
                }
                Side::Lower if y[r] > sign_tol => {
                    side[r] = Side::Free;
                    changed = true;
                }
                Side::Free => {
                    if rows.u[r].is_finite() && ax[r] > rows.u[r] + tol {
                        side[r] = Side::Upper;
                        changed = true;
                    } else if rows.l[r].is_finite() && ax[r] < rows.l[r] - tol {
                        side[r] = Side::Lower;
                        changed = true;
                    }
                }
                _ => {}
            }
        }
        if changed {
            continue;
        }

        let multipliers = split_multipliers(rows, &y, n);
        let report = check_kkt(solved, &x, &multipliers, tol);
        if report.satisfied {
            return Some((x, y));
        }
        return None;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> QuadraticProgram {
        let n = c.len();
        QuadraticProgram::new(
            q,
            c,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DVector::from_element(n, f64::NEG_INFINITY),
        )
        .unwrap()
    }

    /// min (x-1)^2 s.t. x >= 2  ->  x = 2, (x-1)^2 = 1
    #[test]
    fn active_bound_1d() {
        let qp = QuadraticProgram::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::from_row_slice(&[-2.0]),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_row_slice(&[2.0]),
        )
        .unwrap();
        let sol = solve_qp(&qp, 1e-8, 10_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-8);
        let original_objective = (sol.x[0] - 1.0).powi(2);
        assert_abs_diff_eq!(original_objective, 1.0, epsilon = 1e-7);
        assert!(sol.kkt.max_residual() <= 1e-8);

        // optimal point: all residuals tiny
        let report = check_kkt(&qp, &sol.x, &sol.multipliers, 1e-9);
        assert!(report.max_residual() <= 1e-9, "{report:?}");
    }

    /// Unconstrained min 1/2 x'Ix + c'x with c = (-1, -2) -> x = (1, 2).
    #[test]
    fn unconstrained_identity() {
        let qp = unconstrained(
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[-1.0, -2.0]),
        );
        let sol = solve_qp(&qp, 1e-8, 10_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 2.0, epsilon = 1e-9);
        assert_eq!(sol.ridge, 0.0);
    }

    #[test]
    fn equality_and_inequality_mix() {
        // min x^2 + y^2  s.t. x + y = 2, x <= 0.5  ->  x = 0.5, y = 1.5
        let qp = QuadraticProgram::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_row_slice(&[2.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_row_slice(&[0.5]),
            DVector::from_element(2, f64::NEG_INFINITY),
        )
        .unwrap();
        let sol = solve_qp(&qp, 1e-8, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 1.5, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_is_reported_not_fixed() {
        // x >= 2 and x <= 1 cannot hold together
        let qp = QuadraticProgram::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
            DVector::from_row_slice(&[2.0]),
        )
        .unwrap();
        let sol = solve_qp(&qp, 1e-8, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let gap = sol.primal_infeasibility.unwrap();
        assert!(gap > 0.1, "residual should reflect the unit gap: {gap}");
    }

    #[test]
    fn kkt_residual_on_infeasible_point_equals_violation() {
        let qp = QuadraticProgram::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[1.0]),
            DVector::from_element(1, f64::NEG_INFINITY),
        )
        .unwrap();
        let x = DVector::from_row_slice(&[1.75]);
        let mult = Multipliers {
            eq: DVector::zeros(0),
            ineq: DVector::zeros(1),
            lower: DVector::zeros(1),
        };
        let report = check_kkt(&qp, &x, &mult, 1e-8);
        assert_eq!(report.primal_ineq, 0.75);
        assert!(!report.satisfied);
    }

    /// Stationarity residual grows linearly when the optimum is perturbed.
    #[test]
    fn stationarity_residual_is_linear_in_perturbation() {
        let qp = unconstrained(
            DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]),
            DVector::from_row_slice(&[1.0, -1.0]),
        );
        let sol = solve_qp(&qp, 1e-10, 50_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let mut residuals = Vec::new();
        for delta in [1e-3, 1e-2] {
            let mut x = sol.x.clone();
            x[0] += delta;
            let report = check_kkt(&qp, &x, &sol.multipliers, 1e-8);
            residuals.push(report.dual);
        }
        let ratio = residuals[1] / residuals[0];
        assert!(
            (5.0..20.0).contains(&ratio),
            "expected ~10x growth, got {ratio} ({residuals:?})"
        );
    }

    #[test]
    fn degenerate_q_gets_ridge_and_solves() {
        // core-selecting-shaped objective: flat along (-1, .., -1, 1)
        let n = 3usize;
        let mut q = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            q[(i, i)] = 2.0;
            q[(i, n)] = 2.0;
            q[(n, i)] = 2.0;
        }
        q[(n, n)] = 2.0 * n as f64;
        let qp = QuadraticProgram::new(
            q,
            DVector::from_row_slice(&[-2.0, -4.0, -6.0, -12.0]),
            DMatrix::zeros(0, n + 1),
            DVector::zeros(0),
            DMatrix::zeros(0, n + 1),
            DVector::zeros(0),
            DVector::from_element(n + 1, 0.0),
        )
        .unwrap();
        let sol = solve_qp(&qp, 1e-8, 100_000).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.ridge, RIDGE);
    }

    #[test]
    fn non_psd_q_is_rejected() {
        let err = QuadraticProgram::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::from_element(1, f64::NEG_INFINITY),
        );
        assert!(err.is_err());
        let err = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::from_element(2, f64::NEG_INFINITY),
        );
        assert!(err.is_err(), "asymmetric Q must be rejected");
    }

    #[test]
    fn deterministic_across_calls() {
        let qp = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DVector::from_row_slice(&[-0.7, 0.2]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.5]),
            DVector::from_row_slice(&[1.0, 0.3]),
            DVector::from_element(2, 0.0),
        )
        .unwrap();
        let a = solve_qp(&qp, 1e-8, 50_000).unwrap();
        let b = solve_qp(&qp, 1e-8, 50_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
    }

    #[test]
    fn debug_json_roundtrips() {
        let qp = unconstrained(DMatrix::identity(2, 2), DVector::from_row_slice(&[1.0, 2.0]));
        let text = qp.to_debug_json();
        let back: QuadraticProgram = serde_json::from_str(&text).unwrap();
        assert_eq!(back, qp);
    }

    #[test]
    fn dimension_mismatch_is_parameter_error() {
        let err = QuadraticProgram::new(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(2),
        );
        assert!(err.is_err());
    }
}
