//! Step-timing adjustment that moves the touchdown CoM into the feasibility
//! region.
//!
//! The touchdown CoM `x_f = f(T)` is differentiated numerically with respect
//! to the six durations of the current step and the upcoming transfer. Each
//! iteration solves a small QP trading the parallel CoM adjustment against
//! perpendicular drift, total timing change and ini/end asymmetry, applies
//! the result, measures what was actually achieved and feeds the error back
//! into the requested adjustment.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::com::com_at_touchdown;
use crate::error::{Error, Result};
use crate::feasibility::{com_adjustment, region_for_stance, FeasibilityRegion, HipHeightModel};
use crate::icp::build_icp_plan;
use crate::model::{FootstepPlan, RobotParams, StepTiming, TimingVector, Vec2};
use crate::qp::{solve, ConstraintRef, QuadraticProgram};

const N: usize = TimingVector::LEN;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub q_par: f64,
    pub q_perp: f64,
    pub r_t: [f64; N],
    pub r_alpha: f64,
    pub regularization: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { q_par: 1.0e4, q_perp: 1.0e2, r_t: [0.1; N], r_alpha: 0.5, regularization: 1e-6 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [self.q_par, self.q_perp, self.r_alpha].into_iter().chain(self.r_t);
        if non_negative.into_iter().any(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("cost weights must be finite and non-negative".into()));
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidConfig("regularization must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub k_p: f64,
    pub epsilon_converge: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub min_durations: [f64; N],
    pub max_durations: Option<[f64; N]>,
    /// Distance by which the region is shrunk before computing the target
    /// adjustment, so that a result within `epsilon_converge` of the target
    /// stays inside the unshrunk region.
    pub region_margin: f64,
    /// Largest change of any duration within one iteration.
    pub step_limit: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            k_p: 0.7,
            epsilon_converge: 0.002,
            max_iterations: 10,
            fd_step: 1e-4,
            min_durations: [0.05; N],
            max_durations: None,
            region_margin: 0.002,
            step_limit: 0.5,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.k_p > 0.0 && self.k_p.is_finite()) {
            return bad("k_p must be positive");
        }
        if !(self.epsilon_converge > 0.0) {
            return bad("epsilon_converge must be positive");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.min_durations.iter().any(|&m| !(m > 0.0)) {
            return bad("min_durations must be positive");
        }
        if let Some(max) = self.max_durations {
            if max.iter().zip(&self.min_durations).any(|(hi, lo)| !(hi >= lo)) {
                return bad("max_durations must not be below min_durations");
            }
        }
        if !(self.region_margin >= 0.0) {
            return bad("region_margin must be non-negative");
        }
        if !(self.step_limit > 0.0) {
            return bad("step_limit must be positive");
        }
        Ok(())
    }

    /// Projects `t` onto the duration bounds.
    pub fn clamp(&self, t: &TimingVector) -> TimingVector {
        let mut out = *t;
        for i in 0..N {
            out[i] = out[i].max(self.min_durations[i]);
            if let Some(max) = self.max_durations {
                out[i] = out[i].min(max[i]);
            }
        }
        out
    }
}

/// Everything needed to evaluate the touchdown CoM of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchdownContext {
    pub plan: FootstepPlan,
    pub timings: Vec<StepTiming>,
    /// CoM at the start of the plan.
    pub x0: Vec2,
    pub step_index: usize,
    pub params: RobotParams,
    pub model: HipHeightModel,
}

impl TouchdownContext {
    pub fn new(
        plan: FootstepPlan,
        timings: Vec<StepTiming>,
        x0: Vec2,
        step_index: usize,
        params: RobotParams,
    ) -> Result<Self> {
        if timings.len() != plan.step_count() {
            return Err(Error::MismatchedLengths { expected: plan.step_count(), found: timings.len() });
        }
        if step_index >= plan.swing_count() {
            return Err(Error::IndexOutOfRange { index: step_index, limit: plan.swing_count() });
        }
        params.validate()?;
        Ok(Self { plan, timings, x0, step_index, params, model: HipHeightModel::default() })
    }

    pub fn with_model(mut self, model: HipHeightModel) -> Self {
        self.model = model;
        self
    }

    pub fn timing_vector(&self) -> TimingVector {
        TimingVector::extract(&self.timings, self.step_index).expect("checked on construction")
    }

    /// `f(T)`: touchdown CoM with the six durations replaced by `t`.
    pub fn touchdown(&self, t: &TimingVector) -> Result<Vec2> {
        let mut timings = self.timings.clone();
        t.apply(&mut timings, self.step_index)?;
        let icp = build_icp_plan(&self.plan, &timings, self.params.omega())?;
        com_at_touchdown(&icp, self.x0, self.step_index)
    }

    /// Region for the touchdown: the support foot of this step trailing, the
    /// landing foot leading.
    pub fn region(&self) -> Result<FeasibilityRegion> {
        let f = &self.plan.footsteps;
        region_for_stance(&f[self.step_index + 1], &f[self.step_index + 2], &self.params, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingGradient {
    /// Rows are world x and y, columns the six durations.
    pub matrix: SMatrix<f64, 2, N>,
    pub parallel_row: [f64; N],
    pub perp_row: [f64; N],
    /// Columns that fell back to a forward difference because `T_j - delta`
    /// was not positive.
    pub forward_difference: Vec<usize>,
}

impl TimingGradient {
    pub fn from_matrix(matrix: SMatrix<f64, 2, N>, direction: Vec2, forward_difference: Vec<usize>) -> Self {
        let perp = Vec2::new(-direction.y, direction.x);
        let project = |d: Vec2| {
            let row = d.transpose() * matrix;
            std::array::from_fn(|j| row[j])
        };
        Self { matrix, parallel_row: project(direction), perp_row: project(perp), forward_difference }
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        self.matrix.column(j).norm()
    }
}

/// Finite-difference Jacobian of `f` at `t`.
pub fn touchdown_jacobian(
    ctx: &TouchdownContext,
    t: &TimingVector,
    fd_step: f64,
) -> Result<(SMatrix<f64, 2, N>, Vec<usize>)> {
    if !(fd_step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {fd_step}")));
    }
    let mut matrix = SMatrix::<f64, 2, N>::zeros();
    let mut forward = Vec::new();
    let mut base = None;
    for j in 0..N {
        let mut plus = *t;
        plus[j] += fd_step;
        let f_plus = ctx.touchdown(&plus)?;
        let column = if t[j] - fd_step > 0.0 {
            let mut minus = *t;
            minus[j] -= fd_step;
            (f_plus - ctx.touchdown(&minus)?) / (2.0 * fd_step)
        } else {
            forward.push(j);
            let f0 = match base {
                Some(f) => f,
                None => *base.insert(ctx.touchdown(t)?),
            };
            (f_plus - f0) / fd_step
        };
        matrix.set_column(j, &column);
    }
    Ok((matrix, forward))
}

/// Central-difference gradient of the touchdown CoM at the context's timing,
/// split along `direction` and its +90 degree rotation.
pub fn touchdown_gradient(ctx: &TouchdownContext, direction: Vec2, fd_step: f64) -> Result<TimingGradient> {
    let (matrix, forward) = touchdown_jacobian(ctx, &ctx.timing_vector(), fd_step)?;
    Ok(TimingGradient::from_matrix(matrix, direction, forward))
}

/// Pairs each ini duration with its end duration.
pub fn symmetry_matrix() -> DMatrix<f64> {
    let mut s = DMatrix::zeros(3, N);
    for k in 0..3 {
        s[(k, 2 * k)] = 1.0;
        s[(k, 2 * k + 1)] = -1.0;
    }
    s
}

fn row_vector(r: &[f64; N]) -> DVector<f64> {
    DVector::from_column_slice(r)
}

/// QP in `dT` for a parallel target `target_par = g_par . dT` and a
/// perpendicular target `target_perp = g_perp . dT`, around `timing`.
pub fn assemble_qp_with_targets(
    target_par: f64,
    target_perp: f64,
    grad: &TimingGradient,
    weights: &CostWeights,
    timing: &TimingVector,
    config: &LoopConfig,
) -> QuadraticProgram {
    let gp = row_vector(&grad.parallel_row);
    let gq = row_vector(&grad.perp_row);
    let s = symmetry_matrix();
    let mut g = &gp * gp.transpose() * weights.q_par + &gq * gq.transpose() * weights.q_perp;
    g += DMatrix::from_diagonal(&row_vector(&weights.r_t));
    g += s.transpose() * &s * weights.r_alpha;
    g += DMatrix::identity(N, N) * weights.regularization;
    // Exact symmetry for the solver's check.
    g = (&g + g.transpose()) * 0.5;
    let a = -(gp * (weights.q_par * target_par) + gq * (weights.q_perp * target_perp));

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..N {
        let mut e = DVector::zeros(N);
        e[i] = 1.0;
        rows.push((e, config.min_durations[i] - timing[i]));
    }
    if let Some(max) = config.max_durations {
        for i in 0..N {
            let mut e = DVector::zeros(N);
            e[i] = -1.0;
            rows.push((e, timing[i] - max[i]));
        }
    }
    let c = DMatrix::from_fn(rows.len(), N, |r, col| rows[r].0[col]);
    let d = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    QuadraticProgram::new(g, a).with_inequalities(c, d)
}

/// Adds `|dT - center|_inf <= radius` as trailing inequality rows.
fn with_step_limit(mut qp: QuadraticProgram, center: &DVector<f64>, radius: f64) -> QuadraticProgram {
    let m = qp.c_in.nrows();
    let mut c = DMatrix::zeros(m + 2 * N, N);
    let mut d = DVector::zeros(m + 2 * N);
    c.rows_mut(0, m).copy_from(&qp.c_in);
    d.rows_mut(0, m).copy_from(&qp.d_in);
    for i in 0..N {
        c[(m + 2 * i, i)] = 1.0;
        d[m + 2 * i] = center[i] - radius;
        c[(m + 2 * i + 1, i)] = -1.0;
        d[m + 2 * i + 1] = -(center[i] + radius);
    }
    qp.c_in = c;
    qp.d_in = d;
    qp
}

/// `J = J_par + J_perp + J_T + J_alpha` in `dT`:
/// `G = q_par g g' + q_perp h h' + diag(r_t) + r_alpha S'S + eps I`,
/// `a = -q_par dx_par g`, with `T + dT` kept within the duration bounds.
pub fn assemble_qp(
    delta_x_par: f64,
    grad: &TimingGradient,
    weights: &CostWeights,
    timing: &TimingVector,
    config: &LoopConfig,
) -> QuadraticProgram {
    assemble_qp_with_targets(delta_x_par, 0.0, grad, weights, timing, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationStatus {
    /// The touchdown CoM was already within tolerance of the region.
    AlreadyFeasible,
    Converged,
    /// Iteration cap reached; the best iterate is reported.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub desired: f64,
    pub achieved: f64,
    pub e: f64,
    pub delta_t: [f64; N],
    pub qp_iterations: usize,
    pub active_set: Vec<ConstraintRef>,
}

impl IterationRecord {
    /// One JSON line: `{iter, desired_mm, achieved_mm, e_mm, dT}`.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "iter": self.iter,
            "desired_mm": self.desired * 1e3,
            "achieved_mm": self.achieved * 1e3,
            "e_mm": self.e * 1e3,
            "dT": self.delta_t,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub initial_timing: TimingVector,
    pub delta_t_star: [f64; N],
    pub adjusted_timing: TimingVector,
    /// Adjustment the region asked for at the initial timing.
    pub required_adjustment: f64,
    pub achieved_adjustment: f64,
    pub residual_e_par: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub status: OptimizationStatus,
    pub region: FeasibilityRegion,
    pub touchdown_before: Vec2,
    pub touchdown_after: Vec2,
    pub active_set: Vec<ConstraintRef>,
    pub forward_difference: Vec<usize>,
    pub per_iteration_trace: Vec<IterationRecord>,
}

impl OptimizationResult {
    pub fn trace_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.per_iteration_trace.iter().map(IterationRecord::to_json_line)
    }
}

const MAX_HALVINGS: usize = 8;

/// Runs the feedback loop. Reaching the iteration cap is not an error: the
/// best iterate is returned with `status == NotConverged`.
pub fn optimize_timing(
    ctx: &TouchdownContext,
    weights: &CostWeights,
    config: &LoopConfig,
) -> Result<OptimizationResult> {
    weights.validate()?;
    config.validate()?;
    let t0 = ctx.timing_vector();
    let x_f0 = ctx.touchdown(&t0)?;
    let region = ctx.region()?;
    let target = region.shrink(config.region_margin);
    let required = com_adjustment(x_f0, &target);
    let dir = region.direction;
    let perp = region.perpendicular();

    let mut result = OptimizationResult {
        initial_timing: t0,
        delta_t_star: [0.0; N],
        adjusted_timing: t0,
        required_adjustment: required,
        achieved_adjustment: 0.0,
        residual_e_par: required,
        iterations_used: 1,
        converged: true,
        status: OptimizationStatus::AlreadyFeasible,
        region,
        touchdown_before: x_f0,
        touchdown_after: x_f0,
        active_set: Vec::new(),
        forward_difference: Vec::new(),
        per_iteration_trace: Vec::new(),
    };
    if required.abs() < config.epsilon_converge {
        result.per_iteration_trace.push(IterationRecord {
            iter: 1,
            desired: required,
            achieved: 0.0,
            e: required,
            delta_t: [0.0; N],
            qp_iterations: 0,
            active_set: Vec::new(),
        });
        return Ok(result);
    }

    let mut desired = required;
    let mut z_prev = DVector::<f64>::zeros(N);
    let mut achieved_prev = 0.0;
    let mut perp_prev = 0.0;
    let mut best: Option<(f64, usize)> = None;
    let mut snapshots = Vec::new();
    let bound_rows = if config.max_durations.is_some() { 2 * N } else { N };
    for iter in 1..=config.max_iterations {
        let t_lin = TimingVector(std::array::from_fn(|j| t0[j] + z_prev[j]));
        let (matrix, forward) = touchdown_jacobian(ctx, &t_lin, config.fd_step)?;
        let grad = TimingGradient::from_matrix(matrix, dir, forward);
        for &j in &grad.forward_difference {
            if !result.forward_difference.contains(&j) {
                result.forward_difference.push(j);
            }
        }
        let gp = row_vector(&grad.parallel_row);
        let gq = row_vector(&grad.perp_row);
        let target_perp = gq.dot(&z_prev) - perp_prev;
        // Halve the requested increment until the step limit no longer
        // binds, so the step keeps the direction the costs ask for.
        let mut increment = desired - achieved_prev;
        let mut halvings = 0;
        let sol = loop {
            let target_par = increment + gp.dot(&z_prev);
            let qp = assemble_qp_with_targets(target_par, target_perp, &grad, weights, &t0, config);
            let sol = solve(&with_step_limit(qp, &z_prev, config.step_limit))?;
            let limited = sol.active_set.iter().any(|c| matches!(c, ConstraintRef::Inequality(i) if *i >= bound_rows));
            if !limited || halvings == MAX_HALVINGS {
                break sol;
            }
            increment *= 0.5;
            halvings += 1;
        };

        let t_new = config.clamp(&TimingVector(std::array::from_fn(|j| t0[j] + sol.x_star[j])));
        let z = DVector::from_iterator(N, (0..N).map(|j| t_new[j] - t0[j]));
        let x_f = ctx.touchdown(&t_new)?;
        let achieved = dir.dot(&(x_f - x_f0));
        let e = required - achieved;
        let active: Vec<ConstraintRef> = sol
            .active_set
            .iter()
            .copied()
            .filter(|c| !matches!(c, ConstraintRef::Inequality(i) if *i >= bound_rows))
            .collect();
        result.per_iteration_trace.push(IterationRecord {
            iter,
            desired,
            achieved,
            e,
            delta_t: std::array::from_fn(|j| z[j]),
            qp_iterations: sol.iterations,
            active_set: active.clone(),
        });
        snapshots.push((t_new, x_f, achieved, e, active));
        if best.is_none_or(|(b, _)| e.abs() < b) {
            best = Some((e.abs(), iter - 1));
        }
        if e.abs() < config.epsilon_converge {
            break;
        }
        // Each model is anchored at the measured touchdown, so the command
        // moves from there by the damped error.
        desired = achieved + config.k_p * e;
        achieved_prev = achieved;
        z_prev = z;
        perp_prev = perp.dot(&(x_f - x_f0));
    }

    let (best_err, k) = best.expect("at least one iteration");
    let (t_best, x_best, achieved, e, active) = snapshots.swap_remove(k);
    result.iterations_used = result.per_iteration_trace.len();
    result.converged = best_err < config.epsilon_converge;
    result.status = if result.converged { OptimizationStatus::Converged } else { OptimizationStatus::NotConverged };
    result.adjusted_timing = t_best;
    result.delta_t_star = std::array::from_fn(|j| t_best[j] - t0[j]);
    result.achieved_adjustment = achieved;
    result.residual_e_par = e;
    result.touchdown_after = x_best;
    result.active_set = active;
    Ok(result)
}
