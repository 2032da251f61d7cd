//! Domain types shared by the planner, the CoM propagation, the feasibility
//! geometry and the timing optimizer.
//!
//! Conventions: world frame is x forward, y left, z up. The foot frame has its
//! origin at the ankle projection on the sole, x pointing toward the toe. All
//! CMPs live in the ground plane.

use std::fmt;

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility;

pub type Vec2 = Vector2<f64>;

/// Default heel CMP offset in the foot frame (m).
pub const DEFAULT_HEEL_CMP_OFFSET: [f64; 2] = [-0.04, 0.0];
/// Default toe CMP offset in the foot frame (m).
pub const DEFAULT_TOE_CMP_OFFSET: [f64; 2] = [0.08, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotParams {
    pub thigh_length: f64,
    pub shank_length: f64,
    /// Horizontal CoM-to-hip distance, applied to each side.
    pub hip_lateral_offset: f64,
    /// Hip height above the ground at nominal stance. Used as the constant hip
    /// height by the fixed-height feasibility model and as the upper bound on
    /// hip height by the adaptive model.
    pub hip_height_offset: f64,
    pub pendulum_height: f64,
    pub gravity: f64,
    /// Least allowed knee bend (rad).
    pub theta_min: f64,
    /// Most allowed knee bend (rad).
    pub theta_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            thigh_length: 0.42,
            shank_length: 0.42,
            hip_lateral_offset: 0.1,
            hip_height_offset: 0.84,
            pendulum_height: 1.0,
            gravity: 9.81,
            theta_min: 0.0,
            theta_max: 0.4,
        }
    }
}

impl RobotParams {
    /// Natural frequency of the linear inverted pendulum, sqrt(g / dz).
    pub fn omega(&self) -> f64 {
        (self.gravity / self.pendulum_height).sqrt()
    }

    pub fn full_leg_length(&self) -> f64 {
        self.thigh_length + self.shank_length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("pendulum_height", self.pendulum_height),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.hip_lateral_offset.is_finite() && self.hip_height_offset.is_finite()) {
            return Err(Error::InvalidParams("hip offsets must be finite".into()));
        }
        if self.hip_height_offset < 0.0 {
            return Err(Error::InvalidParams("hip_height_offset must be non-negative".into()));
        }
        if !(0.0 <= self.theta_min && self.theta_min < self.theta_max && self.theta_max < std::f64::consts::PI) {
            return Err(Error::InvalidParams(format!(
                "need 0 <= theta_min < theta_max < pi, got theta_min = {}, theta_max = {}",
                self.theta_min, self.theta_max
            )));
        }
        let omega = self.omega();
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidParams(format!("omega = {omega} is not finite and positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for the left side, -1 for the right (y is left).
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Left => f.write_str("left"),
            Side::Right => f.write_str("right"),
        }
    }
}

fn default_heel() -> Vec2 {
    Vec2::from(DEFAULT_HEEL_CMP_OFFSET)
}

fn default_toe() -> Vec2 {
    Vec2::from(DEFAULT_TOE_CMP_OFFSET)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footstep {
    pub side: Side,
    pub ankle_position: Vector3<f64>,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "default_heel")]
    pub heel_cmp_offset: Vec2,
    #[serde(default = "default_toe")]
    pub toe_cmp_offset: Vec2,
}

impl Footstep {
    /// Footstep at `(x, y, 0)` with zero yaw and the default CMP offsets.
    pub fn new(side: Side, x: f64, y: f64) -> Self {
        Self {
            side,
            ankle_position: Vector3::new(x, y, 0.0),
            yaw: 0.0,
            heel_cmp_offset: default_heel(),
            toe_cmp_offset: default_toe(),
        }
    }

    pub fn with_cmp_offsets(mut self, heel: Vec2, toe: Vec2) -> Self {
        self.heel_cmp_offset = heel;
        self.toe_cmp_offset = toe;
        self
    }

    pub fn ankle_xy(&self) -> Vec2 {
        self.ankle_position.xy()
    }

    pub fn heel_cmp(&self) -> Vec2 {
        world_cmps(self).0
    }

    pub fn toe_cmp(&self) -> Vec2 {
        world_cmps(self).1
    }

    /// Horizontal center of this leg's hip sphere expressed for the CoM: the
    /// ankle shifted by the negated CoM-to-hip offset.
    pub fn sphere_center(&self, hip_lateral_offset: f64) -> Vec2 {
        let hip = Rotation2::new(self.yaw) * Vec2::new(0.0, self.side.sign() * hip_lateral_offset);
        self.ankle_xy() - hip
    }
}

/// Heel and toe CMPs of a footstep in the world frame.
pub fn world_cmps(step: &Footstep) -> (Vec2, Vec2) {
    let rot = Rotation2::new(step.yaw);
    let ankle = step.ankle_xy();
    (ankle + rot * step.heel_cmp_offset, ankle + rot * step.toe_cmp_offset)
}

/// Ordered footsteps. `footsteps[0]` is the initial trailing stance foot; step
/// `s` transfers weight from `footsteps[s]` onto `footsteps[s + 1]` and, unless
/// it is the last step, swings the other leg to land on `footsteps[s + 2]`.
/// The last step is a terminal transfer that ends at the midpoint of the last
/// two ankles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FootstepPlan {
    pub footsteps: Vec<Footstep>,
}

impl FootstepPlan {
    pub fn new(footsteps: Vec<Footstep>) -> Self {
        Self { footsteps }
    }

    /// Number of steps (and of expected [`StepTiming`] entries).
    pub fn step_count(&self) -> usize {
        self.footsteps.len().saturating_sub(1)
    }

    /// Number of steps that end with a swing touchdown.
    pub fn swing_count(&self) -> usize {
        self.footsteps.len().saturating_sub(2)
    }

    pub fn is_terminal_step(&self, step: usize) -> bool {
        step + 1 == self.step_count()
    }

    /// Final ICP objective: midpoint of the last two ankles.
    pub fn final_objective(&self) -> Option<Vec2> {
        match self.footsteps.as_slice() {
            [.., a, b] => Some((a.ankle_xy() + b.ankle_xy()) * 0.5),
            [only] => Some(only.ankle_xy()),
            [] => None,
        }
    }

    /// The sub-plan starting at `step` (its first footstep is the trailing
    /// foot of that step).
    pub fn suffix(&self, step: usize) -> FootstepPlan {
        FootstepPlan::new(self.footsteps[step..].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    IniDs,
    EndDs,
    IniSs,
    EndSs,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::IniDs, Phase::EndDs, Phase::IniSs, Phase::EndSs];

    pub fn is_transfer(self) -> bool {
        matches!(self, Phase::IniDs | Phase::EndDs)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Phase::IniDs => "iniDS",
            Phase::EndDs => "endDS",
            Phase::IniSs => "iniSS",
            Phase::EndSs => "endSS",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTiming {
    pub t_ini_ds: f64,
    pub t_end_ds: f64,
    pub t_ini_ss: f64,
    pub t_end_ss: f64,
}

impl StepTiming {
    /// Transfer and swing split evenly into their ini/end halves.
    pub fn symmetric(transfer: f64, swing: f64) -> Self {
        Self { t_ini_ds: 0.5 * transfer, t_end_ds: 0.5 * transfer, t_ini_ss: 0.5 * swing, t_end_ss: 0.5 * swing }
    }

    pub fn get(&self, phase: Phase) -> f64 {
        match phase {
            Phase::IniDs => self.t_ini_ds,
            Phase::EndDs => self.t_end_ds,
            Phase::IniSs => self.t_ini_ss,
            Phase::EndSs => self.t_end_ss,
        }
    }

    pub fn set(&mut self, phase: Phase, value: f64) {
        match phase {
            Phase::IniDs => self.t_ini_ds = value,
            Phase::EndDs => self.t_end_ds = value,
            Phase::IniSs => self.t_ini_ss = value,
            Phase::EndSs => self.t_end_ss = value,
        }
    }

    pub fn transfer(&self) -> f64 {
        self.t_ini_ds + self.t_end_ds
    }

    pub fn swing(&self) -> f64 {
        self.t_ini_ss + self.t_end_ss
    }

    pub fn total(&self) -> f64 {
        self.transfer() + self.swing()
    }
}

/// The six durations under optimization, ordered
/// `[iniDS_0, endDS_0, iniSS_0, endSS_0, iniDS_1, endDS_1]` where `0` is the
/// current step and `1` the upcoming transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimingVector(pub [f64; 6]);

impl TimingVector {
    pub const LEN: usize = 6;
    pub const CURRENT_INI_DS: usize = 0;
    pub const CURRENT_END_DS: usize = 1;
    pub const CURRENT_INI_SS: usize = 2;
    pub const CURRENT_END_SS: usize = 3;
    pub const UPCOMING_INI_DS: usize = 4;
    pub const UPCOMING_END_DS: usize = 5;

    pub const NAMES: [&'static str; 6] = ["iniDS_0", "endDS_0", "iniSS_0", "endSS_0", "iniDS_1", "endDS_1"];

    pub fn from_steps(current: &StepTiming, upcoming: &StepTiming) -> Self {
        Self([
            current.t_ini_ds,
            current.t_end_ds,
            current.t_ini_ss,
            current.t_end_ss,
            upcoming.t_ini_ds,
            upcoming.t_end_ds,
        ])
    }

    /// Reads the vector for `step` out of a timing list.
    pub fn extract(timings: &[StepTiming], step: usize) -> Result<Self> {
        if step + 1 >= timings.len() {
            return Err(Error::IndexOutOfRange { index: step, limit: timings.len().saturating_sub(1) });
        }
        Ok(Self::from_steps(&timings[step], &timings[step + 1]))
    }

    /// Writes the vector back into a timing list for `step`.
    pub fn apply(&self, timings: &mut [StepTiming], step: usize) -> Result<()> {
        if step + 1 >= timings.len() {
            return Err(Error::IndexOutOfRange { index: step, limit: timings.len().saturating_sub(1) });
        }
        let [a, b, c, d, e, f] = self.0;
        timings[step] = StepTiming { t_ini_ds: a, t_end_ds: b, t_ini_ss: c, t_end_ss: d };
        timings[step + 1].t_ini_ds = e;
        timings[step + 1].t_end_ds = f;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for TimingVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for TimingVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Horizontal CoM state. The height is carried for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoMState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub z: Option<f64>,
}

impl CoMState {
    pub fn new(position: Vec2, velocity: Vec2) -> Self {
        Self { position, velocity, z: None }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }

    /// Instantaneous capture point, x + v / omega.
    pub fn icp(&self, omega: f64) -> Vec2 {
        self.position + self.velocity / omega
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewFootsteps { count: usize },
    TimingCount { expected: usize, found: usize },
    SideAlternation { index: usize },
    HeelAheadOfToe { index: usize },
    UnreachableStep { index: usize, distance: f64, limit: f64 },
    NonPositiveDuration { step: usize, phase: Phase, value: f64 },
    InvalidParams { message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewFootsteps { count } => {
                write!(f, "too few footsteps: {count} (need at least 2)")
            }
            Violation::TimingCount { expected, found } => {
                write!(f, "timing count: expected {expected}, found {found}")
            }
            Violation::SideAlternation { index } => {
                write!(f, "side alternation: footsteps {} and {index} are on the same side", index - 1)
            }
            Violation::HeelAheadOfToe { index } => {
                write!(f, "footstep {index}: heel CMP is not behind the toe CMP")
            }
            Violation::UnreachableStep { index, distance, limit } => write!(
                f,
                "unreachable step: footsteps {} -> {index} are {distance:.3} m apart (limit {limit:.3} m)",
                index - 1
            ),
            Violation::NonPositiveDuration { step, phase, value } => {
                write!(f, "step {step} {phase} duration {value} is not positive")
            }
            Violation::InvalidParams { message } => write!(f, "robot parameters: {message}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msg = self.violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        Err(Error::InvalidPlan(msg))
    }
}

/// Checks a plan and its timings against the robot. Findings are collected,
/// never raised.
pub fn validate_plan(plan: &FootstepPlan, timings: &[StepTiming], params: &RobotParams) -> ValidationReport {
    let mut violations = Vec::new();

    if let Err(e) = params.validate() {
        violations.push(Violation::InvalidParams { message: e.to_string() });
    }

    let n = plan.footsteps.len();
    if n < 2 {
        violations.push(Violation::TooFewFootsteps { count: n });
    }
    if timings.len() != plan.step_count() {
        violations.push(Violation::TimingCount { expected: plan.step_count(), found: timings.len() });
    }

    for (i, step) in plan.footsteps.iter().enumerate() {
        if step.heel_cmp_offset.x >= step.toe_cmp_offset.x {
            violations.push(Violation::HeelAheadOfToe { index: i });
        }
    }

    // Two hip spheres further apart than twice the outer radius can never
    // intersect, whatever the timing.
    let reach = feasibility::leg_length(
        params.theta_min.clamp(0.0, std::f64::consts::PI),
        params.thigh_length,
        params.shank_length,
    )
    .unwrap_or_else(|_| params.full_leg_length());
    for (i, pair) in plan.footsteps.windows(2).enumerate() {
        let index = i + 1;
        if pair[0].side == pair[1].side {
            violations.push(Violation::SideAlternation { index });
        }
        let a = pair[0].sphere_center(params.hip_lateral_offset);
        let b = pair[1].sphere_center(params.hip_lateral_offset);
        let distance = (b - a).norm();
        if distance > 2.0 * reach {
            violations.push(Violation::UnreachableStep { index, distance, limit: 2.0 * reach });
        }
    }

    for (step, timing) in timings.iter().enumerate() {
        for phase in Phase::ALL {
            let value = timing.get(phase);
            if !(value > 0.0 && value.is_finite()) {
                violations.push(Violation::NonPositiveDuration { step, phase, value });
            }
        }
    }

    ValidationReport { violations }
}
