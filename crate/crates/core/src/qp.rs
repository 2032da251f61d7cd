//! Dense strictly convex QP by the Goldfarb-Idnani dual active-set method.
//!
//! Solves `min 1/2 x'Gx + a'x` subject to `C_eq x = d_eq` and `C_in x >= d_in`.
//! Starting from the unconstrained minimum, violated constraints are added
//! one at a time; each addition moves along a primal direction that keeps the
//! active constraints satisfied, dropping active inequalities whose multiplier
//! would turn negative. The projections are rebuilt from scratch at every step
//! (`L^-1 N = QR`), which is cheap at the sizes used here.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Normalized violation that counts as infeasible.
const VIOLATION_TOL: f64 = 1e-10;
/// Dual steps only consider multipliers whose direction exceeds this.
const DUAL_TOL: f64 = 1e-12;
/// Relative size of `z'n` below which the primal direction is treated as 0.
const DIRECTION_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("cost matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("cost matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration cap {limit} reached")]
    MaxIterations { limit: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub g: DMatrix<f64>,
    pub a: DVector<f64>,
    pub c_eq: DMatrix<f64>,
    pub d_eq: DVector<f64>,
    pub c_in: DMatrix<f64>,
    pub d_in: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained program.
    pub fn new(g: DMatrix<f64>, a: DVector<f64>) -> Self {
        let n = a.len();
        Self {
            g,
            a,
            c_eq: DMatrix::zeros(0, n),
            d_eq: DVector::zeros(0),
            c_in: DMatrix::zeros(0, n),
            d_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, c: DMatrix<f64>, d: DVector<f64>) -> Self {
        self.c_eq = c;
        self.d_eq = d;
        self
    }

    pub fn with_inequalities(mut self, c: DMatrix<f64>, d: DVector<f64>) -> Self {
        self.c_in = c;
        self.d_in = d;
        self
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + self.a.dot(x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.dim();
        let shape = |what: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(QpError::Dimension(what.to_string()))
            }
        };
        shape("G must be n x n", self.g.nrows() == n && self.g.ncols() == n)?;
        shape("C_eq must have n columns", self.c_eq.ncols() == n)?;
        shape("C_in must have n columns", self.c_in.ncols() == n)?;
        shape("d_eq length", self.d_eq.len() == self.c_eq.nrows())?;
        shape("d_in length", self.d_in.len() == self.c_in.nrows())?;
        shape("more equalities than variables", self.c_eq.nrows() <= n)?;
        shape("empty problem", n > 0)?;
        let asym = (&self.g - self.g.transpose()).amax();
        if !(asym < SYMMETRY_TOL) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x_star: DVector<f64>,
    pub objective: f64,
    /// Sorted, equalities first.
    pub active_set: Vec<ConstraintRef>,
    /// Multipliers in the caller's row order; duplicates and inactive rows
    /// carry 0.
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub iterations: usize,
}

struct Row {
    id: ConstraintRef,
    normal: DVector<f64>,
    rhs: f64,
    norm: f64,
}

struct Active {
    row: usize,
    sign: f64,
    multiplier: f64,
}

fn rows_of(c: &DMatrix<f64>, d: &DVector<f64>, make: fn(usize) -> ConstraintRef) -> Vec<Row> {
    let mut rows: Vec<Row> = Vec::new();
    for i in 0..c.nrows() {
        let normal = c.row(i).transpose();
        if rows.iter().any(|r| r.normal == normal && r.rhs == d[i]) {
            continue;
        }
        let norm = normal.norm();
        rows.push(Row { id: make(i), normal, rhs: d[i], norm });
    }
    rows
}

/// Solves `qp`. The active set, multipliers and iteration count depend only
/// on the input.
pub fn solve(qp: &QuadraticProgram) -> Result<QpSolution, QpError> {
    qp.check()?;
    let n = qp.dim();
    let chol = qp.g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();

    let mut rows = rows_of(&qp.c_eq, &qp.d_eq, ConstraintRef::Equality);
    let n_eq = rows.len();
    rows.extend(rows_of(&qp.c_in, &qp.d_in, ConstraintRef::Inequality));

    let limit = 10 * (n + qp.c_eq.nrows() + qp.c_in.nrows()).max(1);
    let mut x = -chol.solve(&qp.a);
    let mut active: Vec<Active> = Vec::new();
    let mut iterations = 0;
    let mut next_eq = 0;

    loop {
        let (p, sign) = if next_eq < n_eq {
            let row = &rows[next_eq];
            next_eq += 1;
            let s = row.normal.dot(&x) - row.rhs;
            (next_eq - 1, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in rows.iter().enumerate().skip(n_eq) {
                if active.iter().any(|a| a.row == i) || row.norm == 0.0 {
                    continue;
                }
                let v = (row.normal.dot(&x) - row.rhs) / row.norm;
                if v < -VIOLATION_TOL && best.is_none_or(|(_, b)| v < b) {
                    best = Some((i, v));
                }
            }
            match best {
                Some((i, _)) => (i, 1.0),
                None => break,
            }
        };
        let is_eq = p < n_eq;
        let normal = &rows[p].normal * sign;
        let rhs = rows[p].rhs * sign;
        let mut u_p = 0.0;

        loop {
            if iterations >= limit {
                return Err(QpError::MaxIterations { limit });
            }
            let s = normal.dot(&x) - rhs;
            let w = l.solve_lower_triangular(&normal).expect("Cholesky factor is invertible");
            let (z, r) = if active.is_empty() {
                (l.transpose().solve_upper_triangular(&w).expect("invertible"), DVector::zeros(0))
            } else {
                let mut nmat = DMatrix::zeros(n, active.len());
                for (j, a) in active.iter().enumerate() {
                    nmat.set_column(j, &(&rows[a.row].normal * a.sign));
                }
                let b = l.solve_lower_triangular(&nmat).expect("invertible");
                let qr = b.qr();
                let q1 = qr.q();
                let rr = qr.r();
                let qtw = q1.transpose() * &w;
                let r = rr.solve_upper_triangular(&qtw).unwrap_or_else(|| DVector::from_element(active.len(), 0.0));
                let proj = &w - &q1 * qtw;
                (l.transpose().solve_upper_triangular(&proj).expect("invertible"), r)
            };

            let mut t1 = f64::INFINITY;
            let mut drop: Option<usize> = None;
            for (j, a) in active.iter().enumerate() {
                if a.row < n_eq || r[j] <= DUAL_TOL {
                    continue;
                }
                let ratio = a.multiplier / r[j];
                let better = match drop {
                    None => true,
                    Some(k) => ratio < t1 || (ratio == t1 && rows[a.row].id < rows[active[k].row].id),
                };
                if better {
                    t1 = ratio;
                    drop = Some(j);
                }
            }
            let zn = z.dot(&normal);
            let t2 = if zn > DIRECTION_TOL * w.norm_squared() { (-s / zn).max(0.0) } else { f64::INFINITY };

            if is_eq && t2.is_infinite() && s.abs() <= VIOLATION_TOL * rows[p].norm.max(1.0) {
                // Redundant with the active equalities.
                break;
            }
            let t = t1.min(t2);
            if t.is_infinite() {
                return Err(QpError::Infeasible);
            }
            iterations += 1;
            for (j, a) in active.iter_mut().enumerate() {
                a.multiplier -= t * r[j];
            }
            u_p += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(Active { row: p, sign, multiplier: u_p });
                break;
            }
            active.remove(drop.expect("finite partial step has a blocking constraint"));
        }
    }

    let mut lambda_eq = DVector::zeros(qp.c_eq.nrows());
    let mut lambda_in = DVector::zeros(qp.c_in.nrows());
    let mut active_set = Vec::with_capacity(active.len());
    for a in &active {
        let id = rows[a.row].id;
        active_set.push(id);
        match id {
            ConstraintRef::Equality(i) => lambda_eq[i] = a.sign * a.multiplier,
            ConstraintRef::Inequality(i) => lambda_in[i] = a.multiplier,
        }
    }
    active_set.sort();
    Ok(QpSolution { objective: qp.objective(&x), x_star: x, active_set, lambda_eq, lambda_in, iterations })
}

/// Post-hoc optimality certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// `||G x + a - C_eq' l_eq - C_in' l_in||_inf`
    pub stationarity: f64,
    /// Largest `|C_eq x - d_eq|`.
    pub equality_violation: f64,
    /// Most negative `C_in x - d_in` (0 if none negative).
    pub inequality_slack: f64,
    /// Most negative inequality multiplier (0 if none negative).
    pub min_multiplier: f64,
    /// Largest `|l_i (C_in x - d_in)_i|`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn holds(&self, stationarity_tol: f64, feasibility_tol: f64) -> bool {
        self.stationarity < stationarity_tol
            && self.equality_violation <= feasibility_tol
            && self.inequality_slack >= -feasibility_tol
            && self.min_multiplier >= -feasibility_tol
    }
}

pub fn kkt_report(qp: &QuadraticProgram, sol: &QpSolution) -> KktReport {
    let x = &sol.x_star;
    let grad = &qp.g * x + &qp.a - qp.c_eq.transpose() * &sol.lambda_eq - qp.c_in.transpose() * &sol.lambda_in;
    let eq = &qp.c_eq * x - &qp.d_eq;
    let slack = &qp.c_in * x - &qp.d_in;
    KktReport {
        stationarity: grad.amax(),
        equality_violation: if eq.is_empty() { 0.0 } else { eq.amax() },
        inequality_slack: slack.iter().copied().fold(0.0, f64::min),
        min_multiplier: sol.lambda_in.iter().copied().fold(0.0, f64::min),
        complementarity: slack.iter().zip(sol.lambda_in.iter()).map(|(s, l)| (s * l).abs()).fold(0.0, f64::max),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// JSON record of a solve for offline inspection.
pub fn debug_record(qp: &QuadraticProgram, sol: &QpSolution) -> serde_json::Value {
    serde_json::json!({
        "G": matrix_rows(&qp.g),
        "a": qp.a.as_slice(),
        "C_eq": matrix_rows(&qp.c_eq),
        "d_eq": qp.d_eq.as_slice(),
        "C_in": matrix_rows(&qp.c_in),
        "d_in": qp.d_in.as_slice(),
        "x_star": sol.x_star.as_slice(),
        "active_set": sol.active_set,
        "iterations": sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Best KKT point over every subset of inequalities, each found by a
    /// direct solve of the equality-constrained subproblem.
    fn enumerate(qp: &QuadraticProgram) -> Option<(DVector<f64>, f64)> {
        let n = qp.dim();
        let me = qp.c_eq.nrows();
        let mi = qp.c_in.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << mi) {
            let idx: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
            let m = me + idx.len();
            if m > n {
                continue;
            }
            let mut k = DMatrix::zeros(n + m, n + m);
            let mut rhs = DVector::zeros(n + m);
            k.view_mut((0, 0), (n, n)).copy_from(&qp.g);
            rhs.rows_mut(0, n).copy_from(&(-&qp.a));
            for (j, row) in (0..me)
                .map(|i| (qp.c_eq.row(i), qp.d_eq[i]))
                .chain(idx.iter().map(|&i| (qp.c_in.row(i), qp.d_in[i])))
                .enumerate()
            {
                k.view_mut((n + j, 0), (1, n)).copy_from(&row.0);
                k.view_mut((0, n + j), (n, 1)).copy_from(&(-row.0.transpose()));
                rhs[n + j] = row.1;
            }
            let Some(sol) = k.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let lam = sol.rows(n, m);
            if (0..idx.len()).any(|j| lam[me + j] < -1e-9) {
                continue;
            }
            if ((&qp.c_in * &x) - &qp.d_in).iter().any(|&s| s < -1e-9) {
                continue;
            }
            if me > 0 && ((&qp.c_eq * &x) - &qp.d_eq).amax() > 1e-9 {
                continue;
            }
            let f = qp.objective(&x);
            if best.as_ref().is_none_or(|(_, b)| f < *b) {
                best = Some((x, f));
            }
        }
        best
    }

    fn random_qp(rng: &mut ChaCha8Rng, with_eq: bool) -> QuadraticProgram {
        let n = rng.gen_range(1..=6);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let g = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        let a = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let feasible = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mi = rng.gen_range(0..=8);
        let c_in = DMatrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
        let d_in = &c_in * &feasible - DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
        let me = if with_eq { rng.gen_range(0..=n.min(2)) } else { 0 };
        let c_eq = DMatrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
        let d_eq = &c_eq * &feasible;
        QuadraticProgram::new(g, a).with_inequalities(c_in, d_in).with_equalities(c_eq, d_eq)
    }

    #[test]
    fn projection_onto_half_space() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0]));
        let sol = solve(&qp).unwrap();
        assert_abs_diff_eq!(sol.x_star, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-15);
        assert_eq!(sol.active_set, vec![ConstraintRef::Inequality(0)]);
        assert_abs_diff_eq!(sol.lambda_in[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn unconstrained_minimum() {
        let qp = QuadraticProgram::new(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            DVector::from_vec(vec![-1.0, -2.0]),
        );
        let sol = solve(&qp).unwrap();
        assert_abs_diff_eq!(sol.x_star, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-15);
        assert!(sol.active_set.is_empty());
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn equality_and_inequality() {
        // min x^2 + y^2 s.t. x + y = 2, x >= 1.5
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.5]));
        let sol = solve(&qp).unwrap();
        assert_abs_diff_eq!(sol.x_star, DVector::from_vec(vec![1.5, 0.5]), epsilon = 1e-14);
        assert_eq!(sol.active_set, vec![ConstraintRef::Equality(0), ConstraintRef::Inequality(0)]);
        assert!(kkt_report(&qp, &sol).holds(1e-12, 1e-12));
    }

    #[test]
    fn satisfied_equality_with_flipped_sign() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-3.0, 0.0]))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0]));
        let sol = solve(&qp).unwrap();
        assert_abs_diff_eq!(sol.x_star[0], 1.0, epsilon = 1e-15);
        // Stationarity: x - 3 = lambda.
        assert_abs_diff_eq!(sol.lambda_eq[0], -2.0, epsilon = 1e-14);
        assert!(kkt_report(&qp, &sol).holds(1e-12, 1e-12));
    }

    #[test]
    fn redundant_and_duplicate_constraints() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), DVector::from_vec(vec![1.0, 2.0]))
            .with_inequalities(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]), DVector::from_vec(vec![0.8, 0.8]));
        let sol = solve(&qp).unwrap();
        assert_abs_diff_eq!(sol.x_star, DVector::from_vec(vec![0.8, 0.2]), epsilon = 1e-14);
        assert_eq!(sol.active_set, vec![ConstraintRef::Equality(0), ConstraintRef::Inequality(0)]);
        assert_eq!(sol.lambda_in[1], 0.0);
    }

    #[test]
    fn conflicting_bounds_are_infeasible() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(solve(&qp), Err(QpError::Infeasible));
    }

    #[test]
    fn indefinite_cost_is_rejected() {
        let qp = QuadraticProgram::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), DVector::zeros(2));
        assert_eq!(solve(&qp), Err(QpError::NotPositiveDefinite));
        let asym = QuadraticProgram::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(matches!(solve(&asym), Err(QpError::NotSymmetric(_))));
    }

    #[test]
    fn matches_enumeration_on_random_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..60 {
            let qp = random_qp(&mut rng, case % 3 == 0);
            let sol = solve(&qp).unwrap_or_else(|e| panic!("case {case}: {e}"));
            let (x, f) = enumerate(&qp).expect("feasible by construction");
            assert!((sol.objective - f).abs() < 1e-7, "case {case}: {} vs {f}", sol.objective);
            assert!((&sol.x_star - x).norm() < 1e-6, "case {case}");
            let kkt = kkt_report(&qp, &sol);
            assert!(kkt.holds(1e-8, 1e-9), "case {case}: {kkt:?}");
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let qp = random_qp(&mut rng, true);
            let a = solve(&qp).unwrap();
            let b = solve(&qp).unwrap();
            assert_eq!(a.active_set, b.active_set);
            assert_eq!(a.iterations, b.iterations);
            assert_eq!(a.x_star, b.x_star);
        }
    }

    #[test]
    fn debug_record_round_trips_through_json() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DVector::from_vec(vec![1.0]));
        let sol = solve(&qp).unwrap();
        let rec = debug_record(&qp, &sol);
        assert_eq!(rec["x_star"][0], 1.0);
        assert_eq!(rec["active_set"][0]["kind"], "inequality");
    }

    proptest! {
        #[test]
        fn scaling_the_cost_keeps_the_minimizer(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qp = random_qp(&mut rng, seed % 2 == 0);
            let mut scaled = qp.clone();
            scaled.g *= c;
            scaled.a *= c;
            let x = solve(&qp).unwrap().x_star;
            let y = solve(&scaled).unwrap().x_star;
            prop_assert!((x - y).amax() < 1e-9);
        }

        #[test]
        fn certificate_holds(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let qp = random_qp(&mut rng, true);
            let sol = solve(&qp).unwrap();
            let kkt = kkt_report(&qp, &sol);
            prop_assert!(kkt.holds(1e-8, 1e-9), "{:?}", kkt);
            prop_assert!(kkt.complementarity < 1e-8);
        }
    }
}
