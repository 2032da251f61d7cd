//! Scenario builders shared by the benches.

use gaitopt_core::icp::{build_icp_plan, IcpPlan};
use gaitopt_core::qp::QuadraticProgram;
use gaitopt_core::timing::TouchdownContext;
use gaitopt_core::walk::sweep_scenario;
use gaitopt_core::{FootstepPlan, RobotParams, StepTiming};
use nalgebra::{DMatrix, DVector};

/// Footsteps and timing of the sweep walk with the given step length.
pub fn walk(step_length: f64) -> (FootstepPlan, Vec<StepTiming>, RobotParams) {
    let input = sweep_scenario(step_length, 0.4);
    let timings = input.step_timings();
    (input.plan(), timings, input.robot)
}

pub fn icp_plan(step_length: f64) -> IcpPlan {
    let (plan, timings, params) = walk(step_length);
    build_icp_plan(&plan, &timings, params.omega()).expect("sweep plan builds")
}

/// Touchdown context for the first step of the sweep walk.
pub fn context(step_length: f64, theta_max: f64) -> TouchdownContext {
    let (plan, timings, params) = walk(step_length);
    let params = RobotParams { theta_max, ..params };
    let x0 = build_icp_plan(&plan, &timings, params.omega()).expect("sweep plan builds").initial_icp();
    TouchdownContext::new(plan, timings, x0, 0, params).expect("sweep has a swing")
}

/// Strictly convex QP with `n` unknowns and `m` inequalities that all hold
/// with slack 0.1 at `x = 1`.
pub fn dense_qp(n: usize, m: usize) -> QuadraticProgram {
    let g = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.1 });
    let a = DVector::from_fn(n, |i, _| (i as f64 + 1.0).sin());
    let c = DMatrix::from_fn(m, n, |i, j| ((i * n + j) as f64 * 0.7).cos());
    let d = c.column_sum() - DVector::from_element(m, 0.1);
    QuadraticProgram::new(g, a).with_inequalities(c, d)
}
