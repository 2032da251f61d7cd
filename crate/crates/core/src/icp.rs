//! Heel-to-toe capture point plans.
//!
//! Corner points are found by running the constant-CMP solution
//! `xi(t) = e^{wt} (xi0 - r) + r` backward from the final objective. Swing
//! phases keep that exponential form; each transfer is replaced by a single
//! cubic that matches position and velocity of the neighbouring exponentials,
//! which keeps the implied CMP continuous.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FootstepPlan, Phase, StepTiming, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentialSegment {
    pub xi_start: Vec2,
    pub cmp: Vec2,
    pub duration: f64,
}

impl ExponentialSegment {
    pub fn evaluate(&self, t: f64, omega: f64) -> (Vec2, Vec2) {
        let xi = self.cmp + (self.xi_start - self.cmp) * (omega * t).exp();
        (xi, (xi - self.cmp) * omega)
    }
}

/// `p(t) = c0 + c1 t + c2 t^2 + c3 t^3` on `[0, duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubicSegment {
    pub coefficients: [Vec2; 4],
    pub duration: f64,
}

impl CubicSegment {
    /// Cubic Hermite interpolant through `(p0, v0)` at `t = 0` and `(p1, v1)`
    /// at `t = duration`.
    pub fn hermite(p0: Vec2, v0: Vec2, p1: Vec2, v1: Vec2, duration: f64) -> Self {
        let t = duration;
        let c2 = ((p1 - p0) * 3.0 - (v0 * 2.0 + v1) * t) / (t * t);
        let c3 = ((p0 - p1) * 2.0 + (v0 + v1) * t) / (t * t * t);
        Self { coefficients: [p0, v0, c2, c3], duration }
    }

    pub fn evaluate(&self, t: f64) -> (Vec2, Vec2) {
        let [c0, c1, c2, c3] = self.coefficients;
        let p = c0 + (c1 + (c2 + c3 * t) * t) * t;
        let v = c1 + (c2 * 2.0 + c3 * (3.0 * t)) * t;
        (p, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IcpSegment {
    Exponential(ExponentialSegment),
    Cubic(CubicSegment),
}

impl IcpSegment {
    pub fn duration(&self) -> f64 {
        match self {
            IcpSegment::Exponential(s) => s.duration,
            IcpSegment::Cubic(s) => s.duration,
        }
    }

    /// ICP position and velocity at local time `t`.
    pub fn evaluate(&self, t: f64, omega: f64) -> (Vec2, Vec2) {
        match self {
            IcpSegment::Exponential(s) => s.evaluate(t, omega),
            IcpSegment::Cubic(s) => s.evaluate(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Whole double support (iniDS + endDS).
    Transfer,
    /// iniSS, CMP on the support heel.
    SwingHeel,
    /// endSS, CMP on the support toe. Touchdown happens at its end.
    SwingToe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannedSegment {
    pub step: usize,
    pub kind: SegmentKind,
    pub start_time: f64,
    pub segment: IcpSegment,
}

impl PlannedSegment {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.segment.duration()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcpPlan {
    pub omega: f64,
    pub segments: Vec<PlannedSegment>,
    /// ICP at the start of every phase (iniDS, endDS, iniSS, endSS per step;
    /// iniDS, endDS for the terminal step) followed by the final objective.
    pub corner_points: Vec<Vec2>,
    pub total_duration: f64,
    /// `segments.len() + 1` absolute times, starting at 0.
    pub segment_boundaries: Vec<f64>,
}

/// Ordered `(step, phase)` list that the recursion runs over.
pub fn phase_sequence(plan: &FootstepPlan) -> Vec<(usize, Phase)> {
    let steps = plan.step_count();
    let mut phases = Vec::with_capacity(4 * steps);
    for step in 0..steps {
        if plan.is_terminal_step(step) {
            phases.extend([(step, Phase::IniDs), (step, Phase::EndDs)]);
        } else {
            phases.extend(Phase::ALL.map(|p| (step, p)));
        }
    }
    phases
}

/// CMP held during `phase` of `step`: iniDS on the trailing toe, endDS on the
/// leading heel, iniSS on the support heel, endSS on the support toe. The
/// terminal transfer ends on the final objective instead of the leading heel,
/// so the plan comes to rest.
pub fn segment_cmp_assignment(step_index: usize, phase: Phase, plan: &FootstepPlan) -> Result<Vec2> {
    let steps = plan.step_count();
    if step_index >= steps {
        return Err(Error::IndexOutOfRange { index: step_index, limit: steps });
    }
    let trailing = &plan.footsteps[step_index];
    let support = &plan.footsteps[step_index + 1];
    let terminal = plan.is_terminal_step(step_index);
    match phase {
        Phase::IniDs => Ok(trailing.toe_cmp()),
        Phase::EndDs if terminal => Ok(plan.final_objective().expect("plan has footsteps")),
        Phase::EndDs | Phase::IniSs => Ok(support.heel_cmp()),
        Phase::EndSs if !terminal => Ok(support.toe_cmp()),
        Phase::EndSs => Err(Error::Domain(format!("step {step_index} is the terminal transfer and has no swing"))),
    }
}

fn check_inputs(plan: &FootstepPlan, timings: &[StepTiming], omega: f64) -> Result<()> {
    if plan.footsteps.len() < 2 {
        return Err(Error::InvalidPlan(format!("need at least 2 footsteps, got {}", plan.footsteps.len())));
    }
    if timings.len() != plan.step_count() {
        return Err(Error::MismatchedLengths { expected: plan.step_count(), found: timings.len() });
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!("omega must be positive, got {omega}")));
    }
    Ok(())
}

/// Backward recursion `xi_prev = r + e^{-w dt} (xi_next - r)` from
/// `final_objective`. Returns one corner per phase plus the objective.
pub fn compute_corner_points(
    plan: &FootstepPlan,
    timings: &[StepTiming],
    omega: f64,
    final_objective: Vec2,
) -> Result<Vec<Vec2>> {
    check_inputs(plan, timings, omega)?;
    let phases = phase_sequence(plan);
    let mut corners = vec![Vec2::zeros(); phases.len() + 1];
    corners[phases.len()] = final_objective;
    for (k, &(step, phase)) in phases.iter().enumerate().rev() {
        let cmp = segment_cmp_assignment(step, phase, plan)?;
        let dt = timings[step].get(phase);
        corners[k] = cmp + (corners[k + 1] - cmp) * (-omega * dt).exp();
    }
    Ok(corners)
}

/// Builds the smoothed plan ending at the midpoint of the last two ankles.
pub fn build_icp_plan(plan: &FootstepPlan, timings: &[StepTiming], omega: f64) -> Result<IcpPlan> {
    check_inputs(plan, timings, omega)?;
    let objective = plan.final_objective().expect("checked non-empty");
    let corners = compute_corner_points(plan, timings, omega, objective)?;

    let mut segments = Vec::with_capacity(3 * timings.len());
    let mut boundaries = vec![0.0];
    let mut clock = 0.0;
    let mut k = 0;
    for (step, timing) in timings.iter().enumerate() {
        let ini_ds_cmp = segment_cmp_assignment(step, Phase::IniDs, plan)?;
        let end_ds_cmp = segment_cmp_assignment(step, Phase::EndDs, plan)?;
        let start = corners[k];
        let end = corners[k + 2];
        let duration = timing.transfer();
        let cubic =
            CubicSegment::hermite(start, (start - ini_ds_cmp) * omega, end, (end - end_ds_cmp) * omega, duration);
        let mut push = |kind, segment: IcpSegment| {
            segments.push(PlannedSegment { step, kind, start_time: clock, segment });
            clock += segment.duration();
            boundaries.push(clock);
        };
        push(SegmentKind::Transfer, IcpSegment::Cubic(cubic));
        k += 2;
        if plan.is_terminal_step(step) {
            continue;
        }
        for (phase, kind) in [(Phase::IniSs, SegmentKind::SwingHeel), (Phase::EndSs, SegmentKind::SwingToe)] {
            let seg = ExponentialSegment {
                xi_start: corners[k],
                cmp: segment_cmp_assignment(step, phase, plan)?,
                duration: timing.get(phase),
            };
            push(kind, IcpSegment::Exponential(seg));
            k += 1;
        }
    }

    Ok(IcpPlan { omega, segments, corner_points: corners, total_duration: clock, segment_boundaries: boundaries })
}

/// CMP that drives the ICP with the given velocity: `xi - xi_dot / omega`.
pub fn implied_cmp(xi: Vec2, xi_dot: Vec2, omega: f64) -> Vec2 {
    xi - xi_dot / omega
}

/// ICP position and velocity at absolute time `t`.
pub fn evaluate_icp(plan: &IcpPlan, t: f64) -> Result<(Vec2, Vec2)> {
    let (index, local) = plan.locate(t)?;
    Ok(plan.segments[index].segment.evaluate(local, plan.omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcpSample {
    pub t: f64,
    pub xi: Vec2,
    pub xi_dot: Vec2,
    pub cmp: Vec2,
}

/// A transfer segment whose implied CMP leaves the inflated hull of the two
/// feet's CMPs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CmpExcursion {
    pub segment: usize,
    pub t: f64,
    pub distance: f64,
    pub allowed: f64,
}

impl IcpPlan {
    /// Segment index and local time for absolute time `t`. Interior
    /// boundaries belong to the later segment.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= 0.0 && t <= self.total_duration) || self.segments.is_empty() {
            return Err(Error::TimeOutOfRange { t, total: self.total_duration });
        }
        let index = self.segment_boundaries[1..self.segments.len()].partition_point(|&b| b <= t);
        Ok((index, (t - self.segment_boundaries[index]).max(0.0)))
    }

    /// Index of the endSS segment of `step` (touchdown happens at its end).
    pub fn touchdown_segment(&self, step: usize) -> Result<usize> {
        self.segments
            .iter()
            .position(|s| s.step == step && s.kind == SegmentKind::SwingToe)
            .ok_or(Error::IndexOutOfRange { index: step, limit: self.swing_count() })
    }

    pub fn touchdown_time(&self, step: usize) -> Result<f64> {
        Ok(self.segments[self.touchdown_segment(step)?].end_time())
    }

    pub fn swing_count(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::SwingToe).count()
    }

    pub fn initial_icp(&self) -> Vec2 {
        self.corner_points[0]
    }

    /// Samples `[0, total_duration]` at `k * dt`, always including the end.
    pub fn sample(&self, dt: f64) -> Vec<IcpSample> {
        sample_times(self.total_duration, dt)
            .into_iter()
            .map(|t| {
                let (xi, xi_dot) = evaluate_icp(self, t).expect("sample time in range");
                IcpSample { t, xi, xi_dot, cmp: implied_cmp(xi, xi_dot, self.omega) }
            })
            .collect()
    }

    /// Largest ICP position gap over all interior boundaries, and largest
    /// implied-CMP gap over boundaries that touch a transfer cubic. Between the
    /// two swing exponentials the CMP steps from heel to toe by design.
    pub fn continuity_gaps(&self) -> (f64, f64) {
        let mut icp_gap: f64 = 0.0;
        let mut cmp_gap: f64 = 0.0;
        for pair in self.segments.windows(2) {
            let (xa, va) = pair[0].segment.evaluate(pair[0].segment.duration(), self.omega);
            let (xb, vb) = pair[1].segment.evaluate(0.0, self.omega);
            icp_gap = icp_gap.max((xa - xb).norm());
            if pair[0].kind != SegmentKind::Transfer && pair[1].kind != SegmentKind::Transfer {
                continue;
            }
            let ra = implied_cmp(xa, va, self.omega);
            let rb = implied_cmp(xb, vb, self.omega);
            cmp_gap = cmp_gap.max((ra - rb).norm());
        }
        (icp_gap, cmp_gap)
    }

    /// Flags transfer samples whose implied CMP is further from the convex
    /// hull of the trailing and leading feet's CMPs than `inflation` times the
    /// hull diameter.
    pub fn cmp_excursions(&self, plan: &FootstepPlan, inflation: f64, samples_per_segment: usize) -> Vec<CmpExcursion> {
        let mut out = Vec::new();
        for (index, seg) in self.segments.iter().enumerate() {
            if seg.kind != SegmentKind::Transfer {
                continue;
            }
            let mut points = vec![plan.footsteps[seg.step].heel_cmp(), plan.footsteps[seg.step].toe_cmp()];
            points.extend([plan.footsteps[seg.step + 1].heel_cmp(), plan.footsteps[seg.step + 1].toe_cmp()]);
            if plan.is_terminal_step(seg.step) {
                points.push(plan.final_objective().expect("non-empty"));
            }
            let hull = convex_hull(&points);
            let diameter = points.iter().flat_map(|a| points.iter().map(move |b| (a - b).norm())).fold(0.0, f64::max);
            let allowed = inflation * diameter;
            let n = samples_per_segment.max(2);
            for i in 0..=n {
                let t = seg.segment.duration() * i as f64 / n as f64;
                let (xi, xi_dot) = seg.segment.evaluate(t, self.omega);
                let d = distance_to_hull(&hull, implied_cmp(xi, xi_dot, self.omega));
                if d > allowed + 1e-12 {
                    out.push(CmpExcursion { segment: index, t: seg.start_time + t, distance: d, allowed });
                }
            }
        }
        out
    }
}

pub(crate) fn sample_times(total: f64, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "sample period must be positive");
    let n = (total / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).filter(|&t| t <= total).collect();
    if times.last().is_none_or(|&t| total - t > 1e-12) {
        times.push(total);
    }
    times
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain). Degenerate inputs yield a
/// segment or a single point.
fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

fn distance_to_hull(hull: &[Vec2], p: Vec2) -> f64 {
    match hull {
        [] => f64::INFINITY,
        [a] => (p - a).norm(),
        [a, b] => segment_distance(p, *a, *b),
        _ => {
            let n = hull.len();
            let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0.0);
            if inside {
                0.0
            } else {
                (0..n).map(|i| segment_distance(p, hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
        }
    }
}
