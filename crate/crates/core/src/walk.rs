//! Walk sequencer: slides the six-duration window over a footstep plan,
//! optimizes each swing, and records ICP, CoM and knee trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::com::com_at;
use crate::error::{Error, Result};
use crate::feasibility::{
    leg_angle, region_for_stance, stance_hip_height, stance_knees, FeasibilityRegion, HipHeightModel, LegAngle,
};
use crate::icp::{build_icp_plan, evaluate_icp, implied_cmp, IcpPlan};
use crate::model::{validate_plan, Footstep, FootstepPlan, RobotParams, Side, StepTiming, TimingVector, Vec2};
use crate::timing::{optimize_timing, CostWeights, IterationRecord, LoopConfig, OptimizationStatus, TouchdownContext};

/// Walk description read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkInput {
    #[serde(default)]
    pub robot: RobotParams,
    pub footsteps: Vec<Footstep>,
    /// Used for every step without an entry in `timings`.
    pub timing_defaults: StepTiming,
    /// Per-step overrides, one per step when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<StepTiming>>,
    /// CoM at the start; the plan's initial ICP when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_com: Option<Vec2>,
}

impl WalkInput {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("walk input: {e}")))
    }

    pub fn plan(&self) -> FootstepPlan {
        FootstepPlan::new(self.footsteps.clone())
    }

    pub fn step_timings(&self) -> Vec<StepTiming> {
        match &self.timings {
            Some(t) => t.clone(),
            None => vec![self.timing_defaults; self.plan().step_count()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_plan(&self.plan(), &self.step_timings(), &self.robot).into_result()
    }

    /// Builds and validates the ICP plan of the whole walk.
    pub fn icp_plan(&self) -> Result<IcpPlan> {
        self.validate()?;
        build_icp_plan(&self.plan(), &self.step_timings(), self.robot.omega())
    }

    pub fn start_com(&self, icp: &IcpPlan) -> Vec2 {
        self.initial_com.unwrap_or_else(|| icp.initial_icp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub weights: CostWeights,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub hip_height_model: HipHeightModel,
    /// Sampling period of the exported trajectory (s).
    pub sample_dt: f64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            loop_config: LoopConfig::default(),
            hip_height_model: HipHeightModel::default(),
            sample_dt: 0.005,
        }
    }
}

impl WalkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("walk config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.loop_config.validate()?;
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::InvalidConfig("sample_dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step_index: usize,
    pub original_timing: TimingVector,
    pub adjusted_timing: TimingVector,
    pub knee_bend_before: f64,
    pub knee_bend_after: f64,
    pub reachable_before: bool,
    pub reachable_after: bool,
    pub converged: bool,
    pub status: Option<OptimizationStatus>,
    pub iterations: usize,
    pub required_adjustment: f64,
    pub residual_e_par: f64,
    pub region: FeasibilityRegion,
    pub touchdown_before: Vec2,
    pub touchdown_after: Vec2,
    #[serde(skip)]
    pub trace: Vec<IterationRecord>,
}

impl StepReport {
    pub fn delta_t(&self) -> [f64; TimingVector::LEN] {
        std::array::from_fn(|j| self.adjusted_timing[j] - self.original_timing[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub xi: Vec2,
    pub xi_dot: Vec2,
    pub cmp: Vec2,
    pub com: Vec2,
    pub com_velocity: Vec2,
    pub knees: KneeSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WalkSummary {
    pub steps: usize,
    pub adjusted_steps: usize,
    pub all_converged: bool,
    pub max_knee_bend_before: f64,
    pub max_knee_bend_after: f64,
    pub total_abs_delta_t: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkReport {
    pub per_step: Vec<StepReport>,
    pub final_timings: Vec<StepTiming>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryRow>,
    pub summary: WalkSummary,
}

impl WalkReport {
    pub const CSV_HEADER: &'static str =
        "t,xi_x,xi_y,xidot_x,xidot_y,cmp_x,cmp_y,com_x,com_y,com_vx,com_vy,knee_left,knee_right";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.trajectory.len() + 1));
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.trajectory {
            let values = [
                r.t,
                r.xi.x,
                r.xi.y,
                r.xi_dot.x,
                r.xi_dot.y,
                r.cmp.x,
                r.cmp.y,
                r.com.x,
                r.com.y,
                r.com_velocity.x,
                r.com_velocity.y,
                r.knees.left,
                r.knees.right,
            ];
            write_csv_row(&mut out, &values);
        }
        out
    }

    /// Optimizer iterations of every step as JSON lines, each tagged with its
    /// step index.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.per_step {
            for record in &step.trace {
                let mut value: serde_json::Value =
                    serde_json::from_str(&record.to_json_line()).expect("trace records are valid JSON");
                value["step"] = step.step_index.into();
                out.push_str(&value.to_string());
                out.push('\n');
            }
        }
        out
    }
}

pub(crate) fn write_csv_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Duration of step `s`: the terminal step has no swing.
pub fn step_duration(plan: &FootstepPlan, timings: &[StepTiming], s: usize) -> f64 {
    if plan.is_terminal_step(s) {
        timings[s].transfer()
    } else {
        timings[s].total()
    }
}

/// Feet on the ground over `[start, end)`, as footstep indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StanceInterval {
    pub start: f64,
    pub end: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
}

impl StanceInterval {
    pub fn foot(&self, side: Side) -> Option<usize> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }
}

/// Contact schedule: both feet of step `s` during its transfer, only the
/// support foot `s + 1` during its swing.
pub fn stance_schedule(plan: &FootstepPlan, timings: &[StepTiming]) -> Vec<StanceInterval> {
    let f = &plan.footsteps;
    let mut out = Vec::new();
    let mut t = 0.0;
    for s in 0..plan.step_count() {
        let mut both = StanceInterval { start: t, end: t + timings[s].transfer(), left: None, right: None };
        for i in [s, s + 1] {
            match f[i].side {
                Side::Left => both.left = Some(i),
                Side::Right => both.right = Some(i),
            }
        }
        t = both.end;
        out.push(both);
        if !plan.is_terminal_step(s) {
            let mut single = StanceInterval { start: t, end: t + timings[s].swing(), left: None, right: None };
            match f[s + 1].side {
                Side::Left => single.left = Some(s + 1),
                Side::Right => single.right = Some(s + 1),
            }
            t = single.end;
            out.push(single);
        }
    }
    out
}

/// Knee angles of one sample. A swinging leg reads NaN; unreachable legs
/// carry the clamped angle with the flag cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KneeSample {
    pub left: f64,
    pub right: f64,
    pub left_reachable: bool,
    pub right_reachable: bool,
}

/// Knee angles of the stance legs with the CoM at `com`. Each hip sits at its
/// constant offset from the CoM, at the height the model picks for the
/// stance legs.
pub fn knees_at(
    com: Vec2,
    stance: &StanceInterval,
    footsteps: &[Footstep],
    params: &RobotParams,
    model: HipHeightModel,
) -> KneeSample {
    let feet = [Side::Left, Side::Right].map(|side| stance.foot(side).map(|i| &footsteps[i]));
    let d = feet.map(|f| f.map(|f| (com - f.sphere_center(params.hip_lateral_offset)).norm()));
    let stance_d: Vec<f64> = d.iter().flatten().copied().collect();
    let z = stance_hip_height(&stance_d, params, model);
    let [left, right] = d.map(|d| match d {
        Some(d) => leg_angle(d.hypot(z), params.thigh_length, params.shank_length),
        None => LegAngle { angle: f64::NAN, reachable: true },
    });
    KneeSample {
        left: left.angle,
        right: right.angle,
        left_reachable: left.reachable,
        right_reachable: right.reachable,
    }
}

/// Knee angles along a CoM trajectory given as `(t, com)` pairs.
pub fn knee_trace(
    samples: &[(f64, Vec2)],
    plan: &FootstepPlan,
    timings: &[StepTiming],
    params: &RobotParams,
    model: HipHeightModel,
) -> Result<Vec<KneeSample>> {
    let schedule = stance_schedule(plan, timings);
    let last = *schedule.last().ok_or(Error::InvalidPlan("plan has no steps".into()))?;
    samples
        .iter()
        .map(|&(t, com)| {
            let interval = if t >= last.end {
                if t > last.end + 1e-9 {
                    return Err(Error::TimeOutOfRange { t, total: last.end });
                }
                last
            } else {
                let k = schedule.partition_point(|s| s.end <= t);
                *schedule.get(k).ok_or(Error::TimeOutOfRange { t, total: last.end })?
            };
            Ok(knees_at(com, &interval, &plan.footsteps, params, model))
        })
        .collect()
}

/// Runs the sequencer. With `adjust` off every step keeps its timing and the
/// report only measures the knees.
pub fn run_walk(input: &WalkInput, config: &WalkConfig, adjust: bool) -> Result<WalkReport> {
    config.validate()?;
    input.validate()?;
    let params = input.robot;
    let model = config.hip_height_model;
    let omega = params.omega();
    let plan = input.plan();
    let original = input.step_timings();
    let mut timings = original.clone();
    let mut x0 = input.start_com(&build_icp_plan(&plan, &timings, omega)?);

    let mut per_step = Vec::new();
    let mut trajectory = Vec::new();
    let mut t_start = 0.0;
    let schedule_steps = plan.step_count();
    for s in 0..schedule_steps {
        let suffix = plan.suffix(s);
        if s < plan.swing_count() {
            let ctx = TouchdownContext::new(suffix.clone(), timings[s..].to_vec(), x0, 0, params)?.with_model(model);
            let before = ctx.timing_vector();
            let region = ctx.region()?;
            let x_before = ctx.touchdown(&before)?;
            let (trailing, leading) = (&plan.footsteps[s + 1], &plan.footsteps[s + 2]);
            let knees_before = stance_knees(x_before, trailing, leading, &params, model);
            let mut report = StepReport {
                step_index: s,
                original_timing: before,
                adjusted_timing: before,
                knee_bend_before: knees_before.bend(),
                knee_bend_after: knees_before.bend(),
                reachable_before: knees_before.reachable(),
                reachable_after: knees_before.reachable(),
                converged: true,
                status: None,
                iterations: 0,
                required_adjustment: 0.0,
                residual_e_par: 0.0,
                region,
                touchdown_before: x_before,
                touchdown_after: x_before,
                trace: Vec::new(),
            };
            if adjust {
                let result = optimize_timing(&ctx, &config.weights, &config.loop_config)?;
                result.adjusted_timing.apply(&mut timings, s)?;
                let knees_after = stance_knees(result.touchdown_after, trailing, leading, &params, model);
                report.adjusted_timing = result.adjusted_timing;
                report.knee_bend_after = knees_after.bend();
                report.reachable_after = knees_after.reachable();
                report.converged = result.converged;
                report.status = Some(result.status);
                report.iterations = result.iterations_used;
                report.required_adjustment = result.required_adjustment;
                report.residual_e_par = result.residual_e_par;
                report.touchdown_after = result.touchdown_after;
                report.trace = result.per_iteration_trace;
            }
            per_step.push(report);
        }

        // Execute step `s` along the (possibly adjusted) plan of the
        // remaining steps.
        let local_timings = &timings[s..];
        let icp = build_icp_plan(&suffix, local_timings, omega)?;
        let duration = step_duration(&suffix, local_timings, 0);
        let terminal = s + 1 == schedule_steps;
        let schedule = stance_schedule(&suffix, local_timings);
        let mut k = 0usize;
        loop {
            let local = k as f64 * config.sample_dt;
            if local >= duration - 1e-12 {
                break;
            }
            trajectory.push(sample_row(&icp, x0, local, t_start, &schedule, &suffix, &params, model)?);
            k += 1;
        }
        if terminal {
            trajectory.push(sample_row(&icp, x0, duration, t_start, &schedule, &suffix, &params, model)?);
        }
        x0 = com_at(&icp, x0, duration)?;
        t_start += duration;
    }

    let summary = WalkSummary {
        steps: schedule_steps,
        adjusted_steps: per_step.iter().filter(|r| r.delta_t().iter().any(|&d| d != 0.0)).count(),
        all_converged: per_step.iter().all(|r| r.converged),
        max_knee_bend_before: per_step.iter().map(|r| r.knee_bend_before).fold(0.0, f64::max),
        max_knee_bend_after: per_step.iter().map(|r| r.knee_bend_after).fold(0.0, f64::max),
        total_abs_delta_t: per_step.iter().flat_map(|r| r.delta_t()).map(f64::abs).sum(),
        duration: t_start,
    };
    Ok(WalkReport { per_step, final_timings: timings, trajectory, summary })
}

#[allow(clippy::too_many_arguments)]
fn sample_row(
    icp: &IcpPlan,
    x0: Vec2,
    local: f64,
    t_start: f64,
    schedule: &[StanceInterval],
    plan: &FootstepPlan,
    params: &RobotParams,
    model: HipHeightModel,
) -> Result<TrajectoryRow> {
    let (xi, xi_dot) = evaluate_icp(icp, local)?;
    let com = com_at(icp, x0, local)?;
    let k = schedule.partition_point(|s| s.end <= local).min(schedule.len() - 1);
    Ok(TrajectoryRow {
        t: t_start + local,
        xi,
        xi_dot,
        cmp: implied_cmp(xi, xi_dot, icp.omega),
        com,
        com_velocity: (xi - com) * icp.omega,
        knees: knees_at(com, &schedule[k], &plan.footsteps, params, model),
    })
}

/// One record per swing step for plotting the feasible regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionRecord {
    pub step: usize,
    #[serde(flatten)]
    pub region: FeasibilityRegion,
}

pub fn region_records(plan: &FootstepPlan, params: &RobotParams, model: HipHeightModel) -> Result<Vec<RegionRecord>> {
    (0..plan.swing_count())
        .map(|s| {
            let f = &plan.footsteps;
            Ok(RegionRecord { step: s, region: region_for_stance(&f[s + 1], &f[s + 2], params, model)? })
        })
        .collect()
}

/// ICP and CoM samples of a plan as CSV.
pub fn plan_csv(icp: &IcpPlan, x0: Vec2, dt: f64) -> String {
    let mut out = String::from("t,xi_x,xi_y,xidot_x,xidot_y,cmp_x,cmp_y,com_x,com_y,com_vx,com_vy\n");
    let com = crate::com::sample_com(icp, x0, dt);
    for (s, c) in icp.sample(dt).iter().zip(&com) {
        let values = [
            s.t,
            s.xi.x,
            s.xi.y,
            s.xi_dot.x,
            s.xi_dot.y,
            s.cmp.x,
            s.cmp.y,
            c.position.x,
            c.position.y,
            c.velocity.x,
            c.velocity.y,
        ];
        write_csv_row(&mut out, &values);
    }
    out
}

/// Straight walk used by the step-length sweep: two feet side by side at the
/// origin, three steps of `step_length`, then the feet brought together.
pub fn sweep_scenario(step_length: f64, theta_max: f64) -> WalkInput {
    let width = 0.1;
    let heel = Vec2::new(-0.04, 0.0);
    let toe = Vec2::new(0.084, 0.0);
    let mut footsteps = vec![Footstep::new(Side::Right, 0.0, -width), Footstep::new(Side::Left, 0.0, width)];
    let mut side = Side::Right;
    for i in 1..=3 {
        footsteps.push(Footstep::new(side, step_length * i as f64, side.sign() * width));
        side = side.opposite();
    }
    footsteps.push(Footstep::new(side, 3.0 * step_length, side.sign() * width));
    let footsteps = footsteps.into_iter().map(|f| f.with_cmp_offsets(heel, toe)).collect();
    WalkInput {
        robot: RobotParams { theta_max, ..RobotParams::default() },
        footsteps,
        timing_defaults: StepTiming::symmetric(2.5, 2.5),
        timings: None,
        initial_com: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub step_length: f64,
    pub theta_max: f64,
    pub knee_bend_before: f64,
    pub knee_bend_after: f64,
    pub converged: bool,
    /// Largest iteration count over the steps.
    pub iterations: usize,
    pub total_abs_delta_t: f64,
    pub steps: Vec<StepReport>,
}

/// Walks the sweep scenario for every `(length, target)` pair.
pub fn sweep(lengths: &[f64], targets: &[f64], config: &WalkConfig) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(lengths.len() * targets.len());
    for &length in lengths {
        for &target in targets {
            let report = run_walk(&sweep_scenario(length, target), config, true)?;
            cells.push(SweepCell {
                step_length: length,
                theta_max: target,
                knee_bend_before: report.summary.max_knee_bend_before,
                knee_bend_after: report.summary.max_knee_bend_after,
                converged: report.summary.all_converged,
                iterations: report.per_step.iter().map(|r| r.iterations).max().unwrap_or(0),
                total_abs_delta_t: report.summary.total_abs_delta_t,
                steps: report.per_step,
            });
        }
    }
    Ok(cells)
}
