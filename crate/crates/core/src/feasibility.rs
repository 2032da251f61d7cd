//! Knee-bend limits as hip-sphere constraints, projected onto the line
//! between the two stance legs.
//!
//! Each stance hip must lie inside a sphere of radius `l_max` (reachable at
//! the least allowed bend) and outside a sphere of radius `l_min` (not bent
//! past the most allowed bend), both centered at the ankle. With a constant
//! CoM-to-hip offset the spheres can be moved onto the CoM, and the feasible
//! CoM positions at touchdown become an interval `[f_min, f_max]` along the
//! direction from the trailing sphere center to the leading one.
//!
//! Two hip-height models are provided. [`HipHeightModel::Fixed`] holds the hip
//! at `hip_height_offset` and slices the spheres at that height.
//! [`HipHeightModel::Adaptive`] lets the hip drop anywhere below
//! `hip_height_offset`; eliminating the height leaves the band
//! `|d_t^2 - d_l^2| <= l_max^2 - l_min^2` between two lines perpendicular to
//! the center-to-center direction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Footstep, RobotParams, Vec2};

/// Centers closer than this are treated as coincident.
const COINCIDENT: f64 = 1e-9;

/// Two-link leg length at knee bend `theta` (0 is straight):
/// `l^2 = lt^2 + ls^2 + 2 lt ls cos(theta)`.
pub fn leg_length(theta: f64, thigh: f64, shank: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("knee angle {theta} rad outside [0, pi]")));
    }
    let sq = thigh * thigh + shank * shank + 2.0 * thigh * shank * theta.cos();
    Ok(sq.max(0.0).sqrt())
}

/// Inverse of [`leg_length`].
pub fn knee_angle(leg_len: f64, thigh: f64, shank: f64) -> Result<f64> {
    let lo = (thigh - shank).abs();
    let hi = thigh + shank;
    if !(leg_len >= lo && leg_len <= hi) {
        return Err(Error::Unreachable { length: leg_len, thigh, shank });
    }
    let c = (leg_len * leg_len - thigh * thigh - shank * shank) / (2.0 * thigh * shank);
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Radius of the circle cut from a sphere of radius `leg_len` by the ankle
/// plane `hip_drop` below its center; 0 when the sphere does not reach it.
pub fn horizontal_radius(leg_len: f64, hip_drop: f64) -> f64 {
    if leg_len > hip_drop {
        (leg_len * leg_len - hip_drop * hip_drop).sqrt()
    } else {
        0.0
    }
}

/// [`horizontal_radius`] for the outer sphere, which must reach the plane.
pub fn outer_horizontal_radius(leg_len: f64, hip_drop: f64) -> Result<f64> {
    if leg_len <= hip_drop {
        return Err(Error::InfeasibleHeight { leg_length: leg_len, hip_drop });
    }
    Ok(horizontal_radius(leg_len, hip_drop))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegBounds {
    /// Leg length at `theta_max`.
    pub l_min: f64,
    /// Leg length at `theta_min`.
    pub l_max: f64,
}

impl LegBounds {
    pub fn new(l_min: f64, l_max: f64) -> Result<Self> {
        if !(l_min > 0.0 && l_min < l_max && l_max.is_finite()) {
            return Err(Error::InvalidParams(format!("need 0 < l_min < l_max, got {l_min}, {l_max}")));
        }
        Ok(Self { l_min, l_max })
    }

    pub fn from_params(params: &RobotParams) -> Result<Self> {
        params.validate()?;
        let l_min = leg_length(params.theta_max, params.thigh_length, params.shank_length)?;
        let l_max = leg_length(params.theta_min, params.thigh_length, params.shank_length)?;
        Self::new(l_min, l_max)
    }

    /// Width of the perpendicular band, `l_max^2 - l_min^2`.
    pub fn band(&self) -> f64 {
        self.l_max * self.l_max - self.l_min * self.l_min
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HipHeightModel {
    Fixed,
    #[default]
    Adaptive,
}

/// Feasible touchdown CoM interval. Coordinates are measured along
/// `direction` from `center_trailing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRegion {
    pub direction: Vec2,
    pub f_min: f64,
    pub f_max: f64,
    pub center_trailing: Vec2,
    pub center_leading: Vec2,
}

impl FeasibilityRegion {
    pub fn coordinate(&self, x: Vec2) -> f64 {
        self.direction.dot(&(x - self.center_trailing))
    }

    /// Unit normal, the +90 degree rotation of `direction`.
    pub fn perpendicular(&self) -> Vec2 {
        Vec2::new(-self.direction.y, self.direction.x)
    }

    pub fn width(&self) -> f64 {
        self.f_max - self.f_min
    }

    pub fn contains(&self, x: Vec2) -> bool {
        let u = self.coordinate(x);
        self.f_min <= u && u <= self.f_max
    }

    /// Pulls both ends in by `margin`, never past the middle.
    pub fn shrink(&self, margin: f64) -> Self {
        let m = margin.max(0.0).min(0.5 * self.width());
        Self { f_min: self.f_min + m, f_max: self.f_max - m, ..*self }
    }
}

type Interval = (f64, f64);

fn intersect(a: &[Interval], b: &[Interval]) -> Vec<Interval> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo <= hi {
                out.push((lo, hi));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<Interval> = Vec::new();
    for iv in out {
        match merged.last_mut() {
            Some(last) if iv.0 <= last.1 => last.1 = last.1.max(iv.1),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Points of the line at distance `[inner, outer]` from coordinate `c`.
fn annulus(c: f64, inner: f64, outer: f64) -> Vec<Interval> {
    if inner <= 0.0 {
        vec![(c - outer, c + outer)]
    } else {
        vec![(c - outer, c - inner), (c + inner, c + outer)]
    }
}

struct LineGeometry {
    direction: Vec2,
    distance: f64,
    center_trailing: Vec2,
    center_leading: Vec2,
}

fn line_geometry(trailing_ankle: Vec2, leading_ankle: Vec2, hip_offsets: [Vec2; 2]) -> Result<LineGeometry> {
    let center_trailing = trailing_ankle - hip_offsets[0];
    let center_leading = leading_ankle - hip_offsets[1];
    let delta = center_leading - center_trailing;
    let distance = delta.norm();
    let direction = if distance > COINCIDENT {
        delta / distance
    } else {
        let ankles = leading_ankle - trailing_ankle;
        if ankles.norm() <= COINCIDENT {
            return Err(Error::Domain("trailing and leading ankles coincide".into()));
        }
        ankles.normalize()
    };
    Ok(LineGeometry { direction, distance: direction.dot(&delta), center_trailing, center_leading })
}

fn forward_most(
    geometry: LineGeometry,
    radii_trailing: Interval,
    radii_leading: Interval,
    band: Interval,
) -> Result<FeasibilityRegion> {
    let d = geometry.distance;
    let mut set = annulus(0.0, radii_trailing.0, radii_trailing.1);
    set = intersect(&set, &annulus(d, radii_leading.0, radii_leading.1));
    set = intersect(&set, &[band]);
    let &(f_min, f_max) = set.last().ok_or(Error::EmptyRegion)?;
    Ok(FeasibilityRegion {
        direction: geometry.direction,
        f_min,
        f_max,
        center_trailing: geometry.center_trailing,
        center_leading: geometry.center_leading,
    })
}

/// Fixed hip height. `hip_offsets` are the CoM-to-hip offsets of the trailing
/// and leading legs in the world frame; the sphere centers are the ankles
/// shifted back by them. Where the inner sphere leaves a gap around a center
/// the feasible set splits, and the interval furthest along the direction is
/// returned.
pub fn build_region(
    trailing_ankle: Vec2,
    leading_ankle: Vec2,
    hip_offsets: [Vec2; 2],
    hip_drop: f64,
    bounds: LegBounds,
) -> Result<FeasibilityRegion> {
    if !(hip_drop >= 0.0) {
        return Err(Error::Domain(format!("hip drop must be non-negative, got {hip_drop}")));
    }
    let geometry = line_geometry(trailing_ankle, leading_ankle, hip_offsets)?;
    let outer = outer_horizontal_radius(bounds.l_max, hip_drop)?;
    let inner = horizontal_radius(bounds.l_min, hip_drop);
    forward_most(geometry, (inner, outer), (inner, outer), (f64::NEG_INFINITY, f64::INFINITY))
}

/// Hip free to sit anywhere up to `max_hip_height`. Only the band between the
/// perpendicular lines, the outer disks of radius `l_max` and any inner disk
/// left by a hip too low to straighten past `l_min` remain.
pub fn build_adaptive_region(
    trailing_ankle: Vec2,
    leading_ankle: Vec2,
    hip_offsets: [Vec2; 2],
    max_hip_height: f64,
    bounds: LegBounds,
) -> Result<FeasibilityRegion> {
    if !(max_hip_height > 0.0) {
        return Err(Error::Domain(format!("maximum hip height must be positive, got {max_hip_height}")));
    }
    let geometry = line_geometry(trailing_ankle, leading_ankle, hip_offsets)?;
    let inner = horizontal_radius(bounds.l_min, max_hip_height);
    let d = geometry.distance;
    let band = if d > COINCIDENT {
        let half = bounds.band() / (2.0 * d);
        (0.5 * d - half, 0.5 * d + half)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    forward_most(geometry, (inner, bounds.l_max), (inner, bounds.l_max), band)
}

/// World-frame CoM-to-hip offset of a footstep's leg.
pub fn hip_offset(step: &Footstep, params: &RobotParams) -> Vec2 {
    step.ankle_xy() - step.sphere_center(params.hip_lateral_offset)
}

/// Region for the touchdown of `leading` with `trailing` still on the ground.
pub fn region_for_stance(
    trailing: &Footstep,
    leading: &Footstep,
    params: &RobotParams,
    model: HipHeightModel,
) -> Result<FeasibilityRegion> {
    let bounds = LegBounds::from_params(params)?;
    let offsets = [hip_offset(trailing, params), hip_offset(leading, params)];
    match model {
        HipHeightModel::Fixed => {
            build_region(trailing.ankle_xy(), leading.ankle_xy(), offsets, params.hip_height_offset, bounds)
        }
        HipHeightModel::Adaptive => {
            build_adaptive_region(trailing.ankle_xy(), leading.ankle_xy(), offsets, params.hip_height_offset, bounds)
        }
    }
}

/// Signed displacement along the region direction that brings `x_f` onto the
/// nearest region boundary; 0 inside.
pub fn com_adjustment(x_f: Vec2, region: &FeasibilityRegion) -> f64 {
    let u = region.coordinate(x_f);
    if u > region.f_max {
        region.f_max - u
    } else if u < region.f_min {
        region.f_min - u
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LegAngle {
    pub angle: f64,
    pub reachable: bool,
}

/// Knee angle for a hip-to-ankle distance. Out-of-range distances are
/// clamped and flagged.
pub fn leg_angle(distance: f64, thigh: f64, shank: f64) -> LegAngle {
    match knee_angle(distance, thigh, shank) {
        Ok(angle) => LegAngle { angle, reachable: true },
        Err(_) => {
            let clamped = distance.clamp((thigh - shank).abs(), thigh + shank);
            let angle = knee_angle(clamped, thigh, shank).unwrap_or(f64::NAN);
            LegAngle { angle, reachable: false }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StanceKnees {
    pub trailing: LegAngle,
    pub leading: LegAngle,
    pub hip_height: f64,
}

impl StanceKnees {
    /// Larger of the two knee bends.
    pub fn bend(&self) -> f64 {
        self.trailing.angle.max(self.leading.angle)
    }

    pub fn reachable(&self) -> bool {
        self.trailing.reachable && self.leading.reachable
    }
}

/// Hip height used for a double-stance pose with horizontal CoM-to-center
/// distances `d`: fixed, or as high as the furthest leg allows at `l_max`
/// without exceeding `hip_height_offset`.
pub fn stance_hip_height(d: &[f64], params: &RobotParams, model: HipHeightModel) -> f64 {
    match model {
        HipHeightModel::Fixed => params.hip_height_offset,
        HipHeightModel::Adaptive => {
            let l_max = leg_length(params.theta_min, params.thigh_length, params.shank_length)
                .unwrap_or(params.full_leg_length());
            let far = d.iter().copied().fold(0.0, f64::max);
            let room = l_max * l_max - far * far;
            room.max(0.0).sqrt().min(params.hip_height_offset)
        }
    }
}

/// Knee bends of both stance legs with the CoM at `com`.
pub fn stance_knees(
    com: Vec2,
    trailing: &Footstep,
    leading: &Footstep,
    params: &RobotParams,
    model: HipHeightModel,
) -> StanceKnees {
    let dt = (com - trailing.sphere_center(params.hip_lateral_offset)).norm();
    let dl = (com - leading.sphere_center(params.hip_lateral_offset)).norm();
    let z = stance_hip_height(&[dt, dl], params, model);
    let angle = |d: f64| leg_angle(d.hypot(z), params.thigh_length, params.shank_length);
    let mut knees = StanceKnees { trailing: angle(dt), leading: angle(dl), hip_height: z };
    if model == HipHeightModel::Adaptive {
        let l_max =
            leg_length(params.theta_min, params.thigh_length, params.shank_length).unwrap_or(params.full_leg_length());
        knees.trailing.reachable &= dt <= l_max;
        knees.leading.reachable &= dl <= l_max;
    }
    knees
}
