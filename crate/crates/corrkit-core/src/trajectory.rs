//! Trajectories, correction events, and the PID reference used by the
//! expectation features.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeTag {
    Circle,
    Square,
    Triangle,
    Rectangle,
}

pub const ALL_SHAPES: [ShapeTag; 4] = [
    ShapeTag::Circle,
    ShapeTag::Square,
    ShapeTag::Triangle,
    ShapeTag::Rectangle,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorTag {
    Red,
    Green,
    Blue,
    Yellow,
}

pub const ALL_COLORS: [ColorTag; 4] = [
    ColorTag::Red,
    ColorTag::Green,
    ColorTag::Blue,
    ColorTag::Yellow,
];

/// A target on the hand-over board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: u32,
    pub position: Vec3,
    pub shape: ShapeTag,
    pub color: ColorTag,
}

/// How directly the nominal motion telegraphs its goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegibilityLevel {
    High,
    Medium,
    Low,
}

/// End-effector path sampled at a fixed period.
///
/// All indices in this crate are 0-based: positions[0] is the first
/// sample and a correction onset `t` means positions[t] is the first
/// corrected-regime sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    /// Sampling period in seconds.
    pub dt: f64,
    pub positions: Vec<Vec3>,
    /// Goal the nominal plan executes toward (may differ from the goal
    /// the user wanted).
    pub goal_id: u32,
    pub legibility_level: LegibilityLevel,
    pub corrected: bool,
}

impl Trajectory {
    pub fn new(
        id: u64,
        dt: f64,
        positions: Vec<Vec3>,
        goal_id: u32,
        legibility_level: LegibilityLevel,
        corrected: bool,
    ) -> Result<Self> {
        if positions.len() < 2 {
            return Err(CoreError::invalid(format!(
                "trajectory needs at least 2 samples, got {}",
                positions.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CoreError::invalid(format!("non-positive dt {dt}")));
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(CoreError::invalid(format!("non-finite position at index {i}")));
        }
        Ok(Trajectory {
            id,
            dt,
            positions,
            goal_id,
            legibility_level,
            corrected,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    /// Copy holding only the first `len` samples; metadata unchanged.
    pub fn prefix(&self, len: usize) -> Result<Trajectory> {
        if len < 2 || len > self.len() {
            return Err(CoreError::range(format!(
                "prefix length {} invalid for trajectory of length {}",
                len,
                self.len()
            )));
        }
        Ok(Trajectory {
            id: self.id,
            dt: self.dt,
            positions: self.positions[..len].to_vec(),
            goal_id: self.goal_id,
            legibility_level: self.legibility_level,
            corrected: self.corrected,
        })
    }
}

/// A human correction observed during one hand-over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    /// First corrected-regime sample index (0-based).
    pub onset: usize,
    /// Where the object was grasped; equals positions[onset].
    pub grasp_point: Vec3,
    /// Hand velocity right after the grasp, m/s.
    pub grasp_velocity: Vec3,
    /// Where the object was finally released.
    pub release_point: Vec3,
    /// Last sample index of the correction motion (0-based).
    pub end: usize,
}

impl CorrectionEvent {
    /// Checks the event against its trajectory: onset ≤ end < T and the
    /// grasp point coincides with the trajectory sample at onset.
    pub fn validate(&self, traj: &Trajectory) -> Result<()> {
        if self.onset > self.end || self.end >= traj.len() {
            return Err(CoreError::invalid(format!(
                "correction window [{}, {}] outside trajectory of length {}",
                self.onset,
                self.end,
                traj.len()
            )));
        }
        if self.grasp_point != traj.positions[self.onset] {
            return Err(CoreError::invalid(
                "grasp point does not match the trajectory sample at onset",
            ));
        }
        if !(self.grasp_velocity.is_finite() && self.release_point.is_finite()) {
            return Err(CoreError::invalid("non-finite correction geometry"));
        }
        Ok(())
    }
}

/// Finite-difference velocity at sample `t`, m/s.
///
/// Backward difference for t ≥ 1; t = 0 copies t = 1 so every sample has
/// a defined velocity.
pub fn velocity(traj: &Trajectory, t: usize) -> Result<Vec3> {
    if t >= traj.len() {
        return Err(CoreError::range(format!(
            "velocity index {t} in trajectory of length {}",
            traj.len()
        )));
    }
    let i = t.max(1);
    Ok((traj.positions[i] - traj.positions[i - 1]) * (1.0 / traj.dt))
}

/// All per-sample velocities (edge-extended at t = 0).
pub fn velocities(traj: &Trajectory) -> Vec<Vec3> {
    let inv_dt = 1.0 / traj.dt;
    let mut out = Vec::with_capacity(traj.len());
    for t in 0..traj.len() {
        let i = t.max(1);
        out.push((traj.positions[i] - traj.positions[i - 1]) * inv_dt);
    }
    out
}

/// Arc length of the polyline from sample `t_start` to `t_end`
/// (inclusive endpoints). An empty range (t_end ≤ t_start) is 0.
pub fn path_length(traj: &Trajectory, t_start: usize, t_end: usize) -> Result<f64> {
    if t_start >= traj.len() || t_end >= traj.len() {
        return Err(CoreError::range(format!(
            "path_length [{t_start}, {t_end}] in trajectory of length {}",
            traj.len()
        )));
    }
    let mut acc = 0.0;
    for i in (t_start + 1)..=t_end.max(t_start) {
        acc += traj.positions[i].dist(traj.positions[i - 1]);
    }
    Ok(acc)
}

/// Cumulative arc length from sample 0 to each sample.
pub fn cumulative_lengths(traj: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..traj.len() {
        acc += traj.positions[i].dist(traj.positions[i - 1]);
        out.push(acc);
    }
    out
}

/// PID gains for the reference controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        // Overdamped for the velocity-command form below: the (error,
        // filtered-derivative) system has real poles ≈ -1.07 and -14.9.
        PidGains {
            kp: 4.0,
            ki: 0.0,
            kd: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub gains: PidGains,
    /// Horizon the reference is rolled out for, seconds.
    pub lookahead: f64,
    /// RK4 integration substep, seconds.
    pub substep: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig {
            gains: PidGains::default(),
            lookahead: 0.25,
            substep: 0.025,
        }
    }
}

/// Where a well-behaved controller would be shortly: position and
/// velocity of the reference rollout after the lookahead horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub x_opt: Vec3,
    pub v_opt: Vec3,
}

// Rollout state: reference position, error integral, filtered error
// derivative.
#[derive(Clone, Copy)]
struct PidState {
    x: Vec3,
    ei: Vec3,
    dh: Vec3,
}

impl PidState {
    fn add_scaled(self, d: &PidDeriv, h: f64) -> PidState {
        PidState {
            x: self.x + d.dx * h,
            ei: self.ei + d.dei * h,
            dh: self.dh + d.ddh * h,
        }
    }
}

struct PidDeriv {
    dx: Vec3,
    dei: Vec3,
    ddh: Vec3,
}

const DERIVATIVE_FILTER_DIV: f64 = 8.0;

fn pid_command(s: &PidState, goal: Vec3, g: &PidGains) -> Vec3 {
    let e = goal - s.x;
    s.dh * g.kd + e * g.kp + s.ei * g.ki
}

fn pid_deriv(s: &PidState, goal: Vec3, g: &PidGains, t_f: f64) -> PidDeriv {
    let e = goal - s.x;
    let u = pid_command(s, goal, g);
    let ddh = if t_f > 0.0 {
        (-u - s.dh) * (1.0 / t_f)
    } else {
        Vec3::new(0.0, 0.0, 0.0)
    };
    PidDeriv {
        dx: u,
        dei: e,
        ddh,
    }
}

/// Rolls a velocity-command PID out from (x, v) toward `goal` and
/// returns the state after `config.lookahead` seconds.
///
/// The commanded velocity is u = Kp e + Ki ∫e + Kd d̂, where d̂ low-pass
/// filters the error derivative with time constant Kd/8 and is seeded
/// with -v, so the current robot velocity shapes the rollout. With
/// Ki = Kd = 0 this reduces exactly to ẋ = Kp (g - x). Integration is
/// RK4 at `config.substep` with a shortened final step, which lands on
/// the lookahead exactly.
pub fn pid_reference(x: Vec3, v: Vec3, goal: Vec3, config: &PidConfig) -> Result<ReferenceState> {
    let g = &config.gains;
    if !(config.lookahead > 0.0 && config.substep > 0.0) {
        return Err(CoreError::invalid("pid lookahead and substep must be positive"));
    }
    let t_f = if g.kd > 1e-12 {
        g.kd / DERIVATIVE_FILTER_DIV
    } else {
        0.0
    };
    let escape_radius = 100.0 * ((x - goal).norm() + 1.0);

    let mut s = PidState {
        x,
        ei: Vec3::new(0.0, 0.0, 0.0),
        dh: -v,
    };
    let mut remaining = config.lookahead;
    while remaining > 1e-12 {
        let h = config.substep.min(remaining);
        let k1 = pid_deriv(&s, goal, g, t_f);
        let s2 = s.add_scaled(&k1, 0.5 * h);
        let k2 = pid_deriv(&s2, goal, g, t_f);
        let s3 = s.add_scaled(&k2, 0.5 * h);
        let k3 = pid_deriv(&s3, goal, g, t_f);
        let s4 = s.add_scaled(&k3, h);
        let k4 = pid_deriv(&s4, goal, g, t_f);
        s = PidState {
            x: s.x + (k1.dx + (k2.dx + k3.dx) * 2.0 + k4.dx) * (h / 6.0),
            ei: s.ei + (k1.dei + (k2.dei + k3.dei) * 2.0 + k4.dei) * (h / 6.0),
            dh: s.dh + (k1.ddh + (k2.ddh + k3.ddh) * 2.0 + k4.ddh) * (h / 6.0),
        };
        if !s.x.is_finite() || (s.x - goal).norm() > escape_radius {
            return Err(CoreError::divergence("pid reference rollout diverged"));
        }
        remaining -= h;
    }
    Ok(ReferenceState {
        x_opt: s.x,
        v_opt: pid_command(&s, goal, g),
    })
}

/// Convenience: human-readable tag of a goal, e.g. "red circle".
pub fn goal_label(goal: &Goal) -> String {
    let shape = match goal.shape {
        ShapeTag::Circle => "circle",
        ShapeTag::Square => "square",
        ShapeTag::Triangle => "triangle",
        ShapeTag::Rectangle => "rectangle",
    };
    let color = match goal.color {
        ColorTag::Red => "red",
        ColorTag::Green => "green",
        ColorTag::Blue => "blue",
        ColorTag::Yellow => "yellow",
    };
    format!("{color} {shape}")
}
