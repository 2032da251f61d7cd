//! Closed-form CoM propagation under `x_dot = w (xi - x)` along an ICP plan,
//! plus a fourth-order Runge-Kutta integrator used as an oracle.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::icp::{sample_times, IcpPlan, IcpSegment};
use crate::model::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoMTrajectorySample {
    pub t: f64,
    pub position: Vec2,
    pub velocity: Vec2,
}

/// CoM after `t` seconds on a constant CMP `cmp` with initial ICP `xi0`.
///
/// `x(t) = 1/2 e^{wt} (xi0 - r) - 1/2 e^{-wt} (xi0 + r - 2 x0) + r`, arranged
/// so that `t = 0` returns `x0` bit for bit.
pub fn propagate_exponential(x0: Vec2, xi0: Vec2, cmp: Vec2, omega: f64, t: f64) -> Vec2 {
    let decay = (-omega * t).exp();
    x0 * decay + (xi0 - cmp) * (omega * t).sinh() + cmp * (1.0 - decay)
}

/// Particular solution of `x_dot + w x = w p(t)` for the cubic `p`.
fn cubic_particular(c: &[Vec2; 4], omega: f64, t: f64) -> Vec2 {
    let [c0, c1, c2, c3] = *c;
    let w = omega;
    let a3 = c3;
    let a2 = c2 - c3 * (3.0 / w);
    let a1 = c1 - c2 * (2.0 / w) + c3 * (6.0 / (w * w));
    let a0 = c0 - c1 / w + c2 * (2.0 / (w * w)) - c3 * (6.0 / (w * w * w));
    a0 + (a1 + (a2 + a3 * t) * t) * t
}

/// CoM after `t` seconds tracking the cubic ICP `c0 + c1 t + c2 t^2 + c3 t^3`.
pub fn propagate_cubic(x0: Vec2, coefficients: &[Vec2; 4], omega: f64, t: f64) -> Vec2 {
    let decay = (-omega * t).exp();
    x0 * decay + (cubic_particular(coefficients, omega, t) - cubic_particular(coefficients, omega, 0.0) * decay)
}

/// CoM `t` seconds into `segment` starting from `x0`.
pub fn propagate_segment(segment: &IcpSegment, x0: Vec2, omega: f64, t: f64) -> Vec2 {
    match segment {
        IcpSegment::Exponential(s) => propagate_exponential(x0, s.xi_start, s.cmp, omega, t),
        IcpSegment::Cubic(s) => propagate_cubic(x0, &s.coefficients, omega, t),
    }
}

/// CoM at the start of every segment and at the end of the plan
/// (`segments.len() + 1` entries).
pub fn com_at_boundaries(plan: &IcpPlan, x0: Vec2) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(plan.segments.len() + 1);
    let mut x = x0;
    out.push(x);
    for seg in &plan.segments {
        x = propagate_segment(&seg.segment, x, plan.omega, seg.segment.duration());
        out.push(x);
    }
    out
}

/// CoM at absolute time `t`.
pub fn com_at(plan: &IcpPlan, x0: Vec2, t: f64) -> Result<Vec2> {
    let (index, local) = plan.locate(t)?;
    let mut x = x0;
    for seg in &plan.segments[..index] {
        x = propagate_segment(&seg.segment, x, plan.omega, seg.segment.duration());
    }
    Ok(propagate_segment(&plan.segments[index].segment, x, plan.omega, local))
}

/// Touchdown CoM `x_f` of `step`: the CoM at the end of its endSS.
pub fn com_at_touchdown(plan: &IcpPlan, x0: Vec2, step_index: usize) -> Result<Vec2> {
    let last = plan.touchdown_segment(step_index)?;
    let mut x = x0;
    for seg in &plan.segments[..=last] {
        x = propagate_segment(&seg.segment, x, plan.omega, seg.segment.duration());
    }
    Ok(x)
}

/// Closed-form samples on the grid `k * dt`, with the velocity taken from
/// `w (xi - x)`.
pub fn sample_com(plan: &IcpPlan, x0: Vec2, dt: f64) -> Vec<CoMTrajectorySample> {
    let starts = com_at_boundaries(plan, x0);
    sample_times(plan.total_duration, dt)
        .into_iter()
        .map(|t| {
            let (index, local) = plan.locate(t).expect("sample time in range");
            let seg = &plan.segments[index].segment;
            let position = propagate_segment(seg, starts[index], plan.omega, local);
            let (xi, _) = seg.evaluate(local, plan.omega);
            CoMTrajectorySample { t, position, velocity: (xi - position) * plan.omega }
        })
        .collect()
}

/// RK4 integration of `x_dot = w (xi(t) - x)` from 0 to `t_end`. Steps never
/// straddle a segment boundary; a sample is emitted after every step.
pub fn rk4_oracle_until(plan: &IcpPlan, x0: Vec2, dt: f64, t_end: f64) -> Result<Vec<CoMTrajectorySample>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("integration step must be positive, got {dt}")));
    }
    if !(0.0..=plan.total_duration).contains(&t_end) {
        return Err(Error::TimeOutOfRange { t: t_end, total: plan.total_duration });
    }
    let w = plan.omega;
    let mut x = x0;
    let sample = |t: f64, x: Vec2, xi: Vec2| CoMTrajectorySample { t, position: x, velocity: (xi - x) * w };
    let mut out = vec![sample(0.0, x, plan.initial_icp())];
    for seg in &plan.segments {
        if seg.start_time >= t_end {
            break;
        }
        let span = seg.segment.duration().min(t_end - seg.start_time);
        let n = (span / dt).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let f = |tau: f64, x: Vec2| (seg.segment.evaluate(tau, w).0 - x) * w;
        for k in 0..n {
            let tau = k as f64 * h;
            let k1 = f(tau, x);
            let k2 = f(tau + 0.5 * h, x + k1 * (0.5 * h));
            let k3 = f(tau + 0.5 * h, x + k2 * (0.5 * h));
            let k4 = f(tau + h, x + k3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let tau = (k + 1) as f64 * h;
            out.push(sample(seg.start_time + tau, x, seg.segment.evaluate(tau, w).0));
        }
    }
    Ok(out)
}

/// RK4 over the whole plan.
pub fn rk4_oracle(plan: &IcpPlan, x0: Vec2, dt: f64) -> Result<Vec<CoMTrajectorySample>> {
    rk4_oracle_until(plan, x0, dt, plan.total_duration)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::icp::{build_icp_plan, CubicSegment, ExponentialSegment, PlannedSegment, SegmentKind};
    use crate::model::{Footstep, FootstepPlan, Side, StepTiming};

    /// Plain RK4 on a closure, independent of the plan machinery.
    fn rk4(f: impl Fn(f64, Vec2) -> Vec2, x0: Vec2, t_end: f64, dt: f64) -> Vec2 {
        let n = (t_end / dt).round() as usize;
        let h = t_end / n as f64;
        let mut x = x0;
        for k in 0..n {
            let t = k as f64 * h;
            let k1 = f(t, x);
            let k2 = f(t + 0.5 * h, x + k1 * (0.5 * h));
            let k3 = f(t + 0.5 * h, x + k2 * (0.5 * h));
            let k4 = f(t + h, x + k3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    fn single_segment_plan(segment: IcpSegment, omega: f64) -> IcpPlan {
        let d = segment.duration();
        let start = segment.evaluate(0.0, omega).0;
        let end = segment.evaluate(d, omega).0;
        IcpPlan {
            omega,
            segments: vec![PlannedSegment { step: 0, kind: SegmentKind::SwingToe, start_time: 0.0, segment }],
            corner_points: vec![start, end],
            total_duration: d,
            segment_boundaries: vec![0.0, d],
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let p = Vec2::new(0.3, 0.1);
        for t in [0.0, 0.1, 1.0, 5.0] {
            assert_abs_diff_eq!(propagate_exponential(p, p, p, 3.0, t), p, epsilon = 1e-15);
        }
        let plan = single_segment_plan(
            IcpSegment::Exponential(ExponentialSegment { xi_start: p, cmp: p, duration: 1.0 }),
            3.0,
        );
        for s in rk4_oracle(&plan, p, 0.01).unwrap() {
            assert_abs_diff_eq!(s.position, p, epsilon = 1e-15);
        }
    }

    #[test]
    fn exponential_matches_rk4() {
        let (xi0, r, x0, w) = (Vec2::new(0.1, 0.0), Vec2::zeros(), Vec2::new(0.05, 0.0), 3.0);
        let closed = propagate_exponential(x0, xi0, r, w, 0.2);
        let oracle = rk4(|t, x| (r + (xi0 - r) * (w * t).exp() - x) * w, x0, 0.2, 1e-5);
        assert_abs_diff_eq!(closed, oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(closed, Vec2::new(0.09111, 0.0), epsilon = 1e-5);
        assert_eq!(propagate_exponential(x0, xi0, r, w, 0.0), x0);
    }

    #[test]
    fn com_trails_icp_along_the_ray() {
        let r = Vec2::new(0.1, -0.2);
        let x0 = Vec2::new(0.3, 0.1);
        let w = 2.7;
        for k in 0..=50 {
            let t = k as f64 * 0.02;
            let x = propagate_exponential(x0, x0, r, w, t);
            let xi = r + (x0 - r) * (w * t).exp();
            let along = (x - r).normalize().dot(&(x0 - r).normalize());
            assert_abs_diff_eq!(along, 1.0, epsilon = 1e-12);
            assert!((x - r).norm() <= (xi - r).norm() + 1e-15);
        }
    }

    #[test]
    fn constant_cubic_agrees_with_exponential() {
        let c0 = Vec2::new(0.2, -0.1);
        let c = [c0, Vec2::zeros(), Vec2::zeros(), Vec2::zeros()];
        let x0 = Vec2::new(0.5, 0.3);
        for t in [0.0, 0.3, 1.1] {
            assert_abs_diff_eq!(
                propagate_cubic(x0, &c, 3.0, t),
                propagate_exponential(x0, c0, c0, 3.0, t),
                epsilon = 1e-15
            );
        }
        assert_eq!(propagate_cubic(c0, &c, 3.0, 0.7), c0);
    }

    #[test]
    fn random_cubics_match_rk4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = 3.13;
        for _ in 0..10 {
            let mut v = || Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let c = [v(), v(), v(), v()];
            let x0 = v();
            let closed = propagate_cubic(x0, &c, w, 0.4);
            let oracle = rk4(|t, x| (c[0] + c[1] * t + c[2] * (t * t) + c[3] * (t * t * t) - x) * w, x0, 0.4, 1e-5);
            assert_abs_diff_eq!(closed, oracle, epsilon = 1e-6);
            assert_eq!(propagate_cubic(x0, &c, w, 0.0), x0);
        }
    }

    #[test]
    fn ramp_is_tracked_with_a_lag() {
        let c = [Vec2::new(0.1, 0.2), Vec2::new(0.3, -0.1), Vec2::zeros(), Vec2::zeros()];
        let w = 3.0;
        let t = 20.0;
        let x = propagate_cubic(Vec2::zeros(), &c, w, t);
        let ramp = c[0] + c[1] * t;
        assert_abs_diff_eq!(x, ramp - c[1] / w, epsilon = 1e-12);
    }

    fn desk_plan() -> (FootstepPlan, Vec<StepTiming>) {
        let plan = FootstepPlan::new(vec![
            Footstep::new(Side::Right, 0.0, -0.1),
            Footstep::new(Side::Left, 0.0, 0.1),
            Footstep::new(Side::Right, 0.3, -0.1),
            Footstep::new(Side::Left, 0.6, 0.1),
        ]);
        let timings =
            vec![StepTiming::symmetric(0.6, 0.8), StepTiming::symmetric(0.4, 0.9), StepTiming::symmetric(1.0, 1.0)];
        (plan, timings)
    }

    #[test]
    fn stationary_touchdown() {
        let p = Vec2::new(0.2, 0.0);
        let z = Vec2::zeros();
        let plan = FootstepPlan::new(
            (0..3)
                .map(|i| {
                    let side = if i % 2 == 0 { Side::Left } else { Side::Right };
                    Footstep::new(side, p.x, p.y).with_cmp_offsets(z, z)
                })
                .collect(),
        );
        let icp = build_icp_plan(&plan, &[StepTiming::symmetric(1.0, 1.0); 2], 3.0).unwrap();
        assert_abs_diff_eq!(com_at_touchdown(&icp, p, 0).unwrap(), p, epsilon = 1e-15);
    }

    #[test]
    fn touchdown_matches_rk4_end_state() {
        let (plan, timings) = desk_plan();
        let icp = build_icp_plan(&plan, &timings, 3.13).unwrap();
        let x0 = icp.initial_icp() + Vec2::new(-0.01, 0.005);
        for step in 0..2 {
            let td = icp.touchdown_time(step).unwrap();
            let closed = com_at_touchdown(&icp, x0, step).unwrap();
            let oracle = rk4_oracle_until(&icp, x0, 1e-4, td).unwrap();
            let last = oracle.last().unwrap();
            assert_abs_diff_eq!(last.t, td, epsilon = 1e-12);
            assert_abs_diff_eq!(closed, last.position, epsilon = 1e-6);
        }
        assert!(com_at_touchdown(&icp, x0, 2).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (plan, timings) = desk_plan();
        let icp = build_icp_plan(&plan, &timings, 3.0).unwrap();
        let x0 = icp.initial_icp() + Vec2::new(0.05, -0.03);
        let exact = com_at(&icp, x0, icp.total_duration).unwrap();
        let err = |dt| (rk4_oracle(&icp, x0, dt).unwrap().last().unwrap().position - exact).norm();
        let ratio = err(0.04) / err(0.02);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn samples_carry_exact_velocity() {
        let (plan, timings) = desk_plan();
        let icp = build_icp_plan(&plan, &timings, 3.0).unwrap();
        let x0 = icp.initial_icp();
        let samples = sample_com(&icp, x0, 0.05);
        let oracle = rk4_oracle(&icp, x0, 1e-4).unwrap();
        let last = samples.last().unwrap();
        assert_abs_diff_eq!(last.position, oracle.last().unwrap().position, epsilon = 1e-6);
        for s in &samples {
            let (xi, _) = crate::icp::evaluate_icp(&icp, s.t).unwrap();
            assert_abs_diff_eq!(s.velocity, (xi - s.position) * 3.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s.position, com_at(&icp, x0, s.t).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn com_inside_convex_hull_of_exponential_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            // K: a random triangle; all CMPs and the objective are convex
            // combinations of its vertices, so the corners stay inside too.
            let verts: Vec<Vec2> =
                (0..3).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mut point_in_k = || {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
                verts[0] + (verts[1] - verts[0]) * a + (verts[2] - verts[0]) * b
            };
            let n = 5;
            let cmps: Vec<Vec2> = (0..n).map(|_| point_in_k()).collect();
            let durations: Vec<f64> = (0..n).map(|_| 0.3).collect();
            let mut xi = point_in_k();
            let mut corners = vec![xi];
            for k in (0..n).rev() {
                xi = cmps[k] + (xi - cmps[k]) * (-3.0 * durations[k]).exp();
                corners.push(xi);
            }
            corners.reverse();
            let x0 = point_in_k();
            let mut x = x0;
            let area = cross(verts[0], verts[1], verts[2]);
            for k in 0..n {
                for j in 1..=20 {
                    let t = durations[k] * j as f64 / 20.0;
                    let p = propagate_exponential(x, corners[k], cmps[k], 3.0, t);
                    for i in 0..3 {
                        let s = cross(verts[i], verts[(i + 1) % 3], p) * area.signum();
                        assert!(s >= -1e-12, "CoM left the hull");
                    }
                }
                x = propagate_exponential(x, corners[k], cmps[k], 3.0, durations[k]);
            }
        }
    }

    fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    }

    proptest! {
        #[test]
        fn exponential_semigroup(
            x0 in -1.0f64..1.0, xi0 in -1.0f64..1.0, r in -1.0f64..1.0,
            w in 2.5f64..3.5, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
        ) {
            let (x0, xi0, r) = (Vec2::new(x0, 0.3), Vec2::new(xi0, -0.2), Vec2::new(r, 0.1));
            let direct = propagate_exponential(x0, xi0, r, w, t1 + t2);
            let mid = propagate_exponential(x0, xi0, r, w, t1);
            let xi_mid = r + (xi0 - r) * (w * t1).exp();
            let chained = propagate_exponential(mid, xi_mid, r, w, t2);
            prop_assert!((direct - chained).norm() < 1e-10);
        }

        #[test]
        fn cubic_semigroup(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0,
            w in 2.5f64..3.5, t1 in 0.0f64..0.8, t2 in 0.0f64..0.8,
        ) {
            let seg = CubicSegment::hermite(Vec2::new(a, b), Vec2::new(c, d), Vec2::new(b, a), Vec2::new(d, c), 1.6);
            let x0 = Vec2::new(0.1, 0.2);
            let direct = propagate_cubic(x0, &seg.coefficients, w, t1 + t2);
            let mid = propagate_cubic(x0, &seg.coefficients, w, t1);
            // Re-expand the cubic about t1.
            let [c0, c1, c2, c3] = seg.coefficients;
            let shifted = [
                c0 + c1 * t1 + c2 * (t1 * t1) + c3 * (t1 * t1 * t1),
                c1 + c2 * (2.0 * t1) + c3 * (3.0 * t1 * t1),
                c2 + c3 * (3.0 * t1),
                c3,
            ];
            let chained = propagate_cubic(mid, &shifted, w, t2);
            prop_assert!((direct - chained).norm() < 1e-10);
        }
    }
}
