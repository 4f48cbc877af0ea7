//! Core-selecting surplus programs.
//!
//! Builds and solves the quadratic program that picks, inside the (relaxed)
//! core, the surplus vector closest to the VCG surplus:
//!
//! ```text
//! min  sum_i (pi_i - pi_i_vcg + eps)^2
//! s.t. sum_i pi_i + pi_0 = w(N)
//!      sum_{i in S} pi_i + pi_0 + eps >= w(S)   for each supplied S
//!      pi >= 0, pi_0 >= 0, eps >= 0
//! ```
//!
//! The server surplus `pi_0` is eliminated through the feasibility equality
//! (it appears in no objective term), so the decision variables are
//! `(pi_1..pi_n, eps)` and each coalition constraint becomes
//! `sum_{i not in S} pi_i - eps <= w(N) - w(S)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CharacteristicTable, Coalition};
use crate::qp::{solve_qp, QpStatus, QuadraticProgram, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::seeded_rng;

/// Feasibility slack allowed when validating returned surplus vectors.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// QP solver settings for the mechanism layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Observable surpluses `(pi_1..pi_n)`, the server surplus `pi_0`, and the
/// core relaxation `eps`. Feasible by construction: `sum pi + pi_0 = w(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusVector {
    pub pi: Vec<f64>,
    pub pi0: f64,
    pub eps: f64,
}

impl SurplusVector {
    /// Validate the non-negativity invariant and feasibility against `w_n`.
    pub fn new(pi: Vec<f64>, pi0: f64, eps: f64, w_n: f64) -> Result<Self> {
        if pi.iter().chain([&pi0, &eps]).any(|&v| v < -1e-9 || !v.is_finite()) {
            return Err(Error::parameter(format!(
                "surplus components must be non-negative: pi = {pi:?}, pi0 = {pi0}, eps = {eps}"
            )));
        }
        let total: f64 = pi.iter().sum::<f64>() + pi0;
        if (total - w_n).abs() > FEASIBILITY_TOL {
            return Err(Error::parameter(format!(
                "surplus vector is infeasible: allocates {total} of w(N) = {w_n}"
            )));
        }
        Ok(Self { pi, pi0, eps })
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// Left-hand side of coalition `S`'s relaxed core constraint.
    pub fn coalition_lhs(&self, coalition: Coalition) -> f64 {
        coalition.members().map(|i| self.pi[i]).sum::<f64>() + self.pi0 + self.eps
    }

    /// The program's objective at this point: `sum (pi_i - vcg_i + eps)^2`.
    pub fn sigma_squared(&self, vcg: &[f64]) -> f64 {
        self.pi
            .iter()
            .zip(vcg)
            .map(|(p, a)| (p - a + self.eps).powi(2))
            .sum()
    }
}

/// Per-participant payments derived from a surplus vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentVector {
    pub p: Vec<f64>,
    pub budget_spent: f64,
}

/// Assemble the core-selecting QP over the supplied coalition constraints.
///
/// `constraints` lists `(S, w(S))` pairs; the empty coalition is skipped
/// (its constraint is implied by `pi_0, eps >= 0`), duplicates are collapsed.
/// This same program realizes the classical core-selecting rule when `eps`
/// is pinned to zero via [`build_classical_program`].
pub fn build_program(
    constraints: &[(Coalition, f64)],
    vcg: &[f64],
    w_n: f64,
) -> Result<QuadraticProgram> {
    let n = vcg.len();
    if n == 0 {
        return Err(Error::parameter("need at least one participant"));
    }
    if constraints.is_empty() {
        return Err(Error::parameter("constraint list is empty"));
    }
    if !w_n.is_finite() {
        return Err(Error::parameter("w(N) must be finite"));
    }
    let nv = n + 1; // (pi_1..pi_n, eps)

    let mut q = DMatrix::zeros(nv, nv);
    for i in 0..n {
        q[(i, i)] = 2.0;
        q[(i, n)] = 2.0;
        q[(n, i)] = 2.0;
    }
    q[(n, n)] = 2.0 * n as f64;
    let mut c = DVector::zeros(nv);
    for i in 0..n {
        c[i] = -2.0 * vcg[i];
    }
    c[n] = -2.0 * vcg.iter().sum::<f64>();

    let mut seen = std::collections::BTreeSet::new();
    let mut rows: Vec<(Coalition, f64)> = Vec::new();
    for &(s, w_s) in constraints {
        if s.n() != n {
            return Err(Error::parameter(format!(
                "coalition {s} is over {} participants, expected {n}",
                s.n()
            )));
        }
        if s.is_empty() || !seen.insert(s.bits()) {
            continue;
        }
        rows.push((s, w_s));
    }

    // one row per coalition plus the pi_0 >= 0 row
    let m = rows.len() + 1;
    let mut g = DMatrix::zeros(m, nv);
    let mut h = DVector::zeros(m);
    for (r, (s, w_s)) in rows.iter().enumerate() {
        for i in 0..n {
            if !s.contains(i) {
                g[(r, i)] = 1.0;
            }
        }
        g[(r, n)] = -1.0;
        h[r] = w_n - w_s;
    }
    for i in 0..n {
        g[(m - 1, i)] = 1.0;
    }
    h[m - 1] = w_n;

    QuadraticProgram::new(
        q,
        c,
        DMatrix::zeros(0, nv),
        DVector::zeros(0),
        g,
        h,
        DVector::from_element(nv, 0.0),
    )
}

/// The classical core-selecting program: same as [`build_program`] with the
/// relaxation pinned at zero. Infeasible exactly when the core is empty.
pub fn build_classical_program(
    constraints: &[(Coalition, f64)],
    vcg: &[f64],
    w_n: f64,
) -> Result<QuadraticProgram> {
    let mut qp = build_program(constraints, vcg, w_n)?;
    let nv = qp.n_vars();
    let mut g = qp.g.clone().insert_row(qp.g.nrows(), 0.0);
    let last = g.nrows() - 1;
    g[(last, nv - 1)] = 1.0; // eps <= 0, with lb 0 this pins eps = 0
    qp.g = g;
    qp.h = qp.h.clone().insert_row(qp.h.len(), 0.0);
    Ok(qp)
}

/// Solve the core-selecting program and recover the full surplus vector.
///
/// Every supplied constraint is re-checked on the solution within
/// [`FEASIBILITY_TOL`]; a non-optimal solver status is surfaced as a
/// mechanism error carrying the solver diagnostics.
pub fn solve_core_selecting(
    constraints: &[(Coalition, f64)],
    vcg: &[f64],
    w_n: f64,
    cfg: &SolverConfig,
) -> Result<SurplusVector> {
    let qp = build_program(constraints, vcg, w_n)?;
    let sol = solve_qp(&qp, cfg.tol, cfg.max_iter)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::Solver {
            status: sol.status.to_string(),
            diagnostics: format!(
                "kkt max residual {:.3e}, iterations {}, primal infeasibility {:?}; qp dump: {}",
                sol.kkt.max_residual(),
                sol.iterations,
                sol.primal_infeasibility,
                qp.to_debug_json()
            ),
        });
    }
    let n = vcg.len();
    let mut pi: Vec<f64> = (0..n).map(|i| sol.x[i]).collect();
    let mut eps = sol.x[n].max(0.0);

    // The objective is invariant along (pi + t, eps - t): every term keeps
    // pi_i + eps. Among the exact optima, pick the smallest-eps point (the
    // relaxation is the quantity the program exists to shrink), sliding as
    // far as every constraint allows.
    let mut slide = eps;
    let sum_pi: f64 = pi.iter().sum();
    slide = slide.min(((w_n - sum_pi) / n as f64).max(0.0));
    for &(s, w_s) in constraints {
        if s.is_empty() {
            continue;
        }
        let lhs: f64 = s.members().map(|i| pi[i]).sum::<f64>() + (w_n - sum_pi) + eps;
        let tightening = (n - s.size() + 1) as f64;
        slide = slide.min(((lhs - w_s) / tightening).max(0.0));
    }
    for p in pi.iter_mut() {
        *p += slide;
    }
    eps -= slide;

    let pi: Vec<f64> = pi.into_iter().map(|p| p.max(0.0)).collect();
    let pi0 = w_n - pi.iter().sum::<f64>();
    let surplus = SurplusVector::new(pi, pi0, eps, w_n)?;
    for &(s, w_s) in constraints {
        if surplus.coalition_lhs(s) < w_s - FEASIBILITY_TOL {
            return Err(Error::Solver {
                status: "optimal".into(),
                diagnostics: format!(
                    "solution violates coalition {s}: lhs {} < w(S) {w_s}",
                    surplus.coalition_lhs(s)
                ),
            });
        }
    }
    Ok(surplus)
}

/// Payments `p_i = pi_i - v_i(F(D_hat), D_hat_i)`; may be negative.
pub fn payments_from_surplus(
    surplus: &SurplusVector,
    observed_valuations: &[f64],
) -> Result<PaymentVector> {
    if observed_valuations.len() != surplus.n() {
        return Err(Error::parameter("valuation vector length mismatch"));
    }
    let p: Vec<f64> = surplus
        .pi
        .iter()
        .zip(observed_valuations)
        .map(|(pi, v)| pi - v)
        .collect();
    let budget_spent = p.iter().sum();
    Ok(PaymentVector { p, budget_spent })
}

/// The first-price surplus: participants get zero, the server keeps `w(N)`.
/// In the core whenever the characteristic function is monotone.
pub fn first_price_surplus(n: usize, w_n: f64) -> Result<SurplusVector> {
    if !(w_n >= 0.0) {
        return Err(Error::parameter("w(N) must be non-negative"));
    }
    SurplusVector::new(vec![0.0; n], w_n, 0.0, w_n)
}

/// Fraction of all nonempty coalitions whose relaxed core constraint the
/// surplus vector satisfies (within [`FEASIBILITY_TOL`]). Needs the full
/// table.
pub fn core_accuracy(surplus: &SurplusVector, table: &CharacteristicTable) -> Result<f64> {
    if !table.is_complete() {
        return Err(Error::capability(format!(
            "core accuracy needs all {} coalition values, table has {}",
            (1u64 << table.n()) - 1,
            table.len()
        )));
    }
    let n = table.n();
    let mut satisfied = 0usize;
    for s in Coalition::all_nonempty(n) {
        if surplus.coalition_lhs(s) >= table.worth(s)? - FEASIBILITY_TOL {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / ((1usize << n) - 1) as f64)
}

/// Theorem-5 sample size `ceil(C * (n + ln(1/Delta)) / delta^2)`, clamped to
/// the number of nonempty coalitions.
pub fn sample_size(n: usize, delta: f64, big_delta: f64, c: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::parameter(format!("delta {delta} outside (0, 1)")));
    }
    if !(big_delta > 0.0 && big_delta < 1.0) {
        return Err(Error::parameter(format!(
            "Delta {big_delta} outside (0, 1)"
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::parameter("sample constant C must be positive"));
    }
    let raw = (c * (n as f64 + (1.0 / big_delta).ln()) / (delta * delta)).ceil();
    let total = (1u64 << n) - 1;
    Ok(raw.min(total as f64).max(1.0) as usize)
}

/// Draw `m` distinct nonempty coalitions uniformly without replacement,
/// deterministic given `seed`. Returned in ascending bitmask order.
///
/// For `n <= 20` a partial Fisher-Yates shuffle is used, so for a fixed seed
/// the sample at `m` is a superset of the sample at any smaller `m`.
pub fn sample_coalitions(n: usize, m: usize, seed: u64) -> Result<Vec<Coalition>> {
    if n == 0 || n > crate::game::MAX_PARTICIPANTS {
        return Err(Error::parameter(format!("n = {n} outside 1..=30")));
    }
    let total = (1u64 << n) - 1;
    if m == 0 || m as u64 > total {
        return Err(Error::parameter(format!(
            "m = {m} outside 1..={total} for n = {n}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut picked: Vec<u32> = if n <= 20 {
        let mut pool: Vec<u32> = (1..=total as u32).collect();
        for i in 0..m {
            let j = rand::Rng::gen_range(&mut rng, i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(m);
        pool
    } else {
        // Floyd's sampling keeps memory bounded for large n
        let mut set = std::collections::BTreeSet::new();
        for j in (total - m as u64 + 1)..=total {
            let t = rand::Rng::gen_range(&mut rng, 1..=j);
            if !set.insert(t as u32) {
                set.insert(j as u32);
            }
        }
        set.into_iter().collect()
    };
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|bits| Coalition::from_bits(bits, n))
        .collect())
}

/// Definition-2 check: the surplus vector sits in the delta-probable core
/// when its core accuracy is at least `1 - delta`.
pub fn probable_core_check(
    surplus: &SurplusVector,
    table: &CharacteristicTable,
    delta: f64,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&delta) || delta.is_nan() {
        return Err(Error::parameter(format!("delta {delta} outside [0, 1]")));
    }
    Ok(core_accuracy(surplus, table)? >= 1.0 - delta)
}

/// All nonempty coalition constraints of a table, for exact-mode solving.
pub fn full_constraints(table: &CharacteristicTable) -> Result<Vec<(Coalition, f64)>> {
    table
        .coalitions()
        .map(|s| Ok((s, table.worth(s)?)))
        .collect()
}
