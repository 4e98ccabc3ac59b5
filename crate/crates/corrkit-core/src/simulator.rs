//! Synthetic hand-over episodes with a hazard-model intervener.
//!
//! Each episode plans a smooth spline reach toward a nominal target that
//! may differ from the intended one (wrong hole of the right shape, or an
//! offset placement). A simulated observer watches the motion features
//! computed against the intended goal and fires a per-timestep Bernoulli
//! hazard; the first firing plus a reaction delay gives the correction
//! onset. From the onset the object is carried to a release point drawn
//! from a per-shape ground-truth placement mixture at the intended target.
//!
//! Anti-circularity: the hazard is a temperature-scaled logistic over raw
//! feature rows. The learned timing model never sees hazard parameters and
//! trains on standardized features with a different function class.
//!
//! Generation is deterministic: every episode runs on its own RNG derived
//! from the dataset seed, and all draws happen in a fixed order, so
//! generating episodes in parallel cannot change results.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::features::{self, FeatureConfig, FEATURE_COUNT};
use crate::fmath;
use crate::geom::Vec3;
use crate::inference::{GoalGrid, PosteriorMap};
use crate::rng::{derive_seed, Rng};
use crate::trajectory::{
    CorrectionEvent, Goal, LegibilityLevel, ShapeTag, Trajectory, ALL_COLORS, ALL_SHAPES,
};
use crate::{CoreError, Result};

/// Correction-timing percentile sets used throughout evaluation.
pub const PERCENTILE_SETS: [f64; 4] = [0.7, 0.8, 0.9, 1.0];

/// Every correction keeps at least this many carry samples before the
/// trajectory ends, so the rewrite is visible in the executed motion.
pub const CARRY_MIN_STEPS: usize = 3;

/// The sixteen-hole board: shapes by row, colors by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardLayout {
    pub goals: Vec<Goal>,
}

impl BoardLayout {
    /// 4 x 4 board centered on the origin, z = 0. Row r (shape
    /// `ALL_SHAPES[r]`) sits at y in {-0.21, -0.07, 0.07, 0.21}; column c
    /// (color `ALL_COLORS[c]`) at x in {-0.12, -0.04, 0.04, 0.12}.
    /// Neighboring holes are exactly 8 cm apart in x, 14 cm in y.
    pub fn standard() -> Self {
        const XS: [f64; 4] = [-0.12, -0.04, 0.04, 0.12];
        const YS: [f64; 4] = [-0.21, -0.07, 0.07, 0.21];
        let mut goals = Vec::with_capacity(16);
        for (r, &y) in YS.iter().enumerate() {
            for (c, &x) in XS.iter().enumerate() {
                goals.push(Goal {
                    id: (r * 4 + c) as u32,
                    position: Vec3::new(x, y, 0.0),
                    shape: ALL_SHAPES[r],
                    color: ALL_COLORS[c],
                });
            }
        }
        Self { goals }
    }

    pub fn goal(&self, id: u32) -> Result<&Goal> {
        self.goals
            .iter()
            .find(|g| g.id == id)
            .ok_or_else(|| CoreError::invalid(alloc::format!("no goal with id {id}")))
    }

    /// Ids of all goals carrying `shape`.
    pub fn same_shape_ids(&self, shape: ShapeTag) -> Vec<u32> {
        self.goals
            .iter()
            .filter(|g| g.shape == shape)
            .map(|g| g.id)
            .collect()
    }

    /// Smallest pairwise distance between targets.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.goals.len() {
            for j in i + 1..self.goals.len() {
                best = best.min(self.goals[i].position.dist(self.goals[j].position));
            }
        }
        best
    }
}

/// Logistic hazard over a raw feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardProfile {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub temperature: f64,
}

impl HazardProfile {
    /// Per-timestep intervention probability for one feature row.
    pub fn hazard(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), FEATURE_COUNT);
        let mut z = self.bias;
        for (w, f) in self.weights.iter().zip(row) {
            z += w * f;
        }
        fmath::sigmoid(z / self.temperature)
    }
}

impl Default for HazardProfile {
    fn default() -> Self {
        // Fires when the heading stops tracking the intended goal while
        // the object is still far from it: -6 F3 + 6 F6 is deeply negative
        // for a clean approach and crosses zero when a reach passes or
        // settles beside the wrong hole (stationary samples zero the
        // cosine columns, so settling far out also raises the hazard).
        // The optimality column (F7) is deliberately unused so the
        // single-feature baseline cannot read the generator directly.
        Self {
            weights: [0.0, 0.0, -6.0, -1.0, 0.0, 6.0, 0.0],
            bias: -3.4,
            temperature: 1.0,
        }
    }
}

/// Behavior of the simulated corrector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervenerProfile {
    pub hazard: HazardProfile,
    /// Seconds between the hazard firing and the grasp.
    pub reaction_delay_mean: f64,
    pub reaction_delay_std: f64,
    /// Std of the angle (degrees) between the grasp velocity and the
    /// straight line to the intended goal.
    pub grasp_angle_noise_deg: f64,
    /// Grasp speed (m/s) of the correcting hand.
    pub grasp_speed_mean: f64,
    pub grasp_speed_std: f64,
    /// Extra isotropic in-plane noise added to the release point on top of
    /// the placement mixture.
    pub release_jitter_std: f64,
    /// Out-of-plane noise on the release point.
    pub release_z_std: f64,
    /// Carry speed (m/s) from grasp toward the release point.
    pub place_speed: f64,
    /// Peak height (m) of the pick-up arc: the hand lifts the object off
    /// the board, moves it, and sets it back down. Zero keeps the carry
    /// in plane.
    pub lift_height: f64,
    /// Steered corrections blend the nominal continuation into the
    /// place-down instead of restarting the motion from the grasp, so
    /// position and velocity stay continuous at the onset. `lift_height`
    /// is ignored while steering.
    pub steer: bool,
}

impl Default for IntervenerProfile {
    fn default() -> Self {
        Self {
            hazard: HazardProfile::default(),
            reaction_delay_mean: 0.35,
            reaction_delay_std: 0.15,
            grasp_angle_noise_deg: 15.0,
            grasp_speed_mean: 0.5,
            grasp_speed_std: 0.1,
            release_jitter_std: 0.003,
            release_z_std: 0.002,
            place_speed: 0.1,
            lift_height: 0.05,
            steer: false,
        }
    }
}

/// Nominal reach generation: spline shape, speed profile, target choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    pub t_min: usize,
    pub t_max: usize,
    /// Average end-effector speed (m/s) used to pick the episode length.
    pub speed_mean: f64,
    pub speed_std: f64,
    /// Lateral control-point amplitudes (m) by legibility level. High bends
    /// away from the nearest competing hole, low bends toward it.
    pub amp_high: f64,
    pub amp_medium: f64,
    pub amp_low: f64,
    /// Probability that an episode contains speed surges, their gain, and
    /// their width as a fraction of the episode.
    pub surge_prob: f64,
    pub surge_gain: f64,
    pub surge_frac: f64,
    pub start_center: Vec3,
    pub start_spread: Vec3,
    /// Fraction of episodes whose nominal target differs from the intended
    /// one; split evenly between the wrong same-shape hole and a 3-6 cm
    /// offset placement.
    pub wrong_goal_rate: f64,
    /// Max settled steps at the end of the reach (drawn uniformly).
    pub hold_max_steps: usize,
    /// Azimuthal kink events. A kink at step k rigidly rotates the rest
    /// of the path about the line from the current position to the
    /// intended goal, so the path still lands on the goal and every
    /// feature symmetric about that line is untouched; velocity
    /// consistency dips for exactly one step, to the sampled target
    /// cosine. Benign kinks stay above a hazard threshold, the trigger
    /// kink dips below it. Profiles enabling kinks should keep
    /// `wrong_goal_rate` at zero so the rotation axis matches the path
    /// endpoint.
    pub kink_benign_max: usize,
    /// Target velocity-consistency range of benign kinks.
    pub kink_benign_f4: (f64, f64),
    pub kink_trigger_prob: f64,
    /// Target velocity-consistency range of the trigger kink.
    pub kink_trigger_f4: (f64, f64),
    /// Eligible kink steps as fractions of the moving part.
    pub kink_window: (f64, f64),
}

impl Default for PathProfile {
    fn default() -> Self {
        Self {
            t_min: 60,
            t_max: 140,
            speed_mean: 0.055,
            speed_std: 0.012,
            amp_high: 0.05,
            amp_medium: 0.015,
            amp_low: 0.07,
            surge_prob: 0.35,
            surge_gain: 2.2,
            surge_frac: 0.12,
            start_center: Vec3::new(0.0, -0.42, 0.14),
            start_spread: Vec3::new(0.03, 0.02, 0.02),
            wrong_goal_rate: 0.55,
            hold_max_steps: 8,
            kink_benign_max: 0,
            kink_benign_f4: (0.975, 0.995),
            kink_trigger_prob: 0.0,
            kink_trigger_f4: (0.90, 0.95),
            kink_window: (0.2, 0.75),
        }
    }
}

/// Everything `gen_episode` needs besides a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub intervener: IntervenerProfile,
    pub path: PathProfile,
    pub dt: f64,
    pub features: FeatureConfig,
}

impl Default for SimProfile {
    fn default() -> Self {
        Self {
            intervener: IntervenerProfile::default(),
            path: PathProfile::default(),
            dt: 0.1,
            features: FeatureConfig::default(),
        }
    }
}

impl SimProfile {
    /// Benchmark profile in which exactly one feature carries the hazard
    /// signal: straight reaches at the intended hole with pronounced speed
    /// surges. On these paths F2 tracks 0.39 F6 closely, so the F6 term
    /// cancels that baseline and the hazard keys on the residual, which
    /// only dips when a surge makes the reference rollout brake. The dip
    /// is invisible to every other column (direction and path shape are
    /// unchanged by speed), and the steered carry leaves no kinematic
    /// break at the onset for them to latch onto.
    pub fn single_signal() -> Self {
        let mut p = Self::default();
        p.intervener.hazard = HazardProfile {
            weights: [0.0, -800.0, 0.0, 0.0, 0.0, 312.0, 0.0],
            bias: -14.3,
            temperature: 1.0,
        };
        p.intervener.steer = true;
        p.intervener.lift_height = 0.0;
        p.intervener.place_speed = 0.06;
        p.intervener.reaction_delay_mean = 0.1;
        p.intervener.reaction_delay_std = 0.05;
        p.path.amp_high = 0.008;
        p.path.amp_medium = 0.008;
        p.path.amp_low = 0.008;
        p.path.surge_prob = 0.7;
        p.path.surge_gain = 3.2;
        p.path.speed_mean = 0.06;
        p.path.speed_std = 0.004;
        p.path.start_spread = Vec3::new(0.01, 0.008, 0.008);
        p.path.wrong_goal_rate = 0.0;
        p
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CoreError::invalid("dt must be positive"));
        }
        if self.path.t_min < 4 || self.path.t_max < self.path.t_min {
            return Err(CoreError::invalid("episode length bounds invalid"));
        }
        if !(self.intervener.hazard.temperature > 0.0) {
            return Err(CoreError::invalid("hazard temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.path.wrong_goal_rate) {
            return Err(CoreError::range("wrong_goal_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.path.kink_trigger_prob) {
            return Err(CoreError::range("kink_trigger_prob must lie in [0, 1]"));
        }
        for (lo, hi) in [self.path.kink_benign_f4, self.path.kink_trigger_f4] {
            if !(-1.0 < lo && lo <= hi && hi < 1.0) {
                return Err(CoreError::range("kink target cosines must satisfy -1 < lo <= hi < 1"));
            }
        }
        let (wlo, whi) = self.path.kink_window;
        if !(0.0 < wlo && wlo < whi && whi < 1.0) {
            return Err(CoreError::range("kink_window must satisfy 0 < lo < hi < 1"));
        }
        Ok(())
    }
}

/// One generated hand-over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub correction: Option<CorrectionEvent>,
    /// Id of the goal the (simulated) user wanted.
    pub intended_goal: u32,
    /// Completion fraction t_c / (T-1) at the onset, corrected episodes only.
    pub onset_fraction: Option<f64>,
    /// Per-episode RNG seed, kept for manifests.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// A generated corpus with its base 60/10/30 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub layout: BoardLayout,
    pub episodes: Vec<Episode>,
    /// Base split, stratified by corrected/uncorrected.
    pub split: Vec<SplitTag>,
    pub seed: u64,
}

impl Dataset {
    pub fn corrected_count(&self) -> usize {
        self.episodes.iter().filter(|e| e.correction.is_some()).count()
    }

    /// Episode indices belonging to the `pct` percentile set: every
    /// uncorrected episode plus corrected ones with onset fraction <= pct.
    pub fn percentile_members(&self, pct: f64) -> Vec<usize> {
        self.episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| match e.onset_fraction {
                None => true,
                Some(f) => f <= pct + 1e-12,
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// Index triple for one train/val/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

// Cubic Bezier with a chord-length arc table for arc-position lookup.
struct ArcSpline {
    points: Vec<Vec3>,
    cum: Vec<f64>,
}

const ARC_SAMPLES: usize = 1024;

fn bezier_point(c: &[Vec3; 4], u: f64) -> Vec3 {
    let v = 1.0 - u;
    c[0] * (v * v * v) + c[1] * (3.0 * v * v * u) + c[2] * (3.0 * v * u * u) + c[3] * (u * u * u)
}

impl ArcSpline {
    fn build(ctrl: &[Vec3; 4]) -> Self {
        let mut points = Vec::with_capacity(ARC_SAMPLES + 1);
        for i in 0..=ARC_SAMPLES {
            points.push(bezier_point(ctrl, i as f64 / ARC_SAMPLES as f64));
        }
        let mut cum = Vec::with_capacity(ARC_SAMPLES + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for i in 1..points.len() {
            acc += points[i].dist(points[i - 1]);
            cum.push(acc);
        }
        Self { points, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point at arc position `s` in [0, length], linear between samples.
    fn at(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.length());
        let hi = self.cum.partition_point(|&c| c < s).max(1);
        let (c0, c1) = (self.cum[hi - 1], self.cum[hi]);
        let seg = c1 - c0;
        if seg <= 0.0 {
            return self.points[hi];
        }
        let w = (s - c0) / seg;
        self.points[hi - 1] * (1.0 - w) + self.points[hi] * w
    }
}

/// Rotates `v` by `angle` radians about a random axis perpendicular to it.
fn rotate_off_axis(rng: &mut Rng, v: Vec3, angle: f64) -> Vec3 {
    let dir = match v.unit(1e-12) {
        Some(d) => d,
        None => return v,
    };
    let raw = Vec3::new(rng.normal(), rng.normal(), rng.normal());
    let axis = match dir.cross(raw).unit(1e-9) {
        Some(a) => a,
        None => dir.cross(Vec3::new(1.0, 0.0, 0.0))
            .unit(1e-9)
            .unwrap_or(Vec3::new(0.0, 0.0, 1.0)),
    };
    // Rodrigues with axis perpendicular to v: the (axis . v) term vanishes.
    v * fmath::cos(angle) + axis.cross(v) * fmath::sin(angle)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Steered carries track the nominal continuation exactly for this
/// fraction of the carry before the blend toward the place-down starts.
const STEER_HOLD_FRAC: f64 = 0.3;

/// Minimum step gap between kinks so their one-step dips stay separate.
const KINK_MIN_GAP: usize = 3;

/// Largest kink rotation considered; protects against near-reversal
/// swings when the local cone angle barely reaches the target.
const KINK_MAX_SWING: f64 = 2.4;

fn wrap_pi(theta: f64) -> f64 {
    theta - 2.0 * core::f64::consts::PI * fmath::round(theta / (2.0 * core::f64::consts::PI))
}

/// Rotates `positions[k+1..]` about the line through `positions[k]`
/// toward `goal` by the angle that lands cos(v_{k+1}', v_k) on `target`.
/// No-op when the local geometry cannot reach the target within
/// `KINK_MAX_SWING`. Returns whether the kink was applied.
fn apply_kink(positions: &mut [Vec3], k: usize, goal: Vec3, target: f64, rng: &mut Rng) -> bool {
    if k == 0 || k + 1 >= positions.len() {
        return false;
    }
    let xk = positions[k];
    let (u, av, bh) = match (
        (goal - xk).unit(1e-9),
        (xk - positions[k - 1]).unit(1e-9),
        (positions[k + 1] - xk).unit(1e-9),
    ) {
        (Some(u), Some(a), Some(b)) => (u, a, b),
        _ => return false,
    };
    // cos(v_k, R(theta) v_{k+1}) = A cos(theta) + B sin(theta) + C (1 - cos(theta)).
    let a_coef = av.dot(bh);
    let b_coef = av.dot(u.cross(bh));
    let c_coef = av.dot(u) * u.dot(bh);
    let r = fmath::sqrt((a_coef - c_coef) * (a_coef - c_coef) + b_coef * b_coef);
    if r < 1e-9 || fmath::abs(target - c_coef) > r {
        return false;
    }
    let phi = fmath::atan2(b_coef, a_coef - c_coef);
    let base = fmath::acos((target - c_coef) / r);
    let cands = [wrap_pi(phi + base), wrap_pi(phi - base)];
    let valid: Vec<f64> = cands
        .iter()
        .copied()
        .filter(|t| fmath::abs(*t) > 1e-9 && fmath::abs(*t) <= KINK_MAX_SWING)
        .collect();
    let theta = match valid.len() {
        0 => return false,
        1 => valid[0],
        // A fair coin picks the swing side when both work.
        _ => valid[if rng.chance(0.5) { 0 } else { 1 }],
    };
    let (s, c) = (fmath::sin(theta), fmath::cos(theta));
    for p in positions[k + 1..].iter_mut() {
        let d = *p - xk;
        *p = xk + d * c + u.cross(d) * s + u * (u.dot(d) * (1.0 - c));
    }
    true
}

/// Draws kink steps and targets per `PathProfile` and applies them in
/// path order. The trigger slot (if any) is uniform among the drawn
/// slots so its position carries no extra information.
fn inject_kinks(positions: &mut [Vec3], t_move: usize, goal: Vec3, path: &PathProfile, rng: &mut Rng) {
    let lo = ((path.kink_window.0 * t_move as f64) as usize).max(1);
    let hi = ((path.kink_window.1 * t_move as f64) as usize).min(t_move.saturating_sub(2));
    if hi <= lo {
        return;
    }
    let n_benign = rng.below(path.kink_benign_max + 1);
    let trigger = rng.chance(path.kink_trigger_prob);
    let total = n_benign + trigger as usize;
    if total == 0 {
        return;
    }
    let mut steps: Vec<usize> = Vec::with_capacity(total);
    for _ in 0..total * 8 {
        if steps.len() == total {
            break;
        }
        let k = lo + rng.below(hi - lo + 1);
        if steps.iter().all(|&s| s.abs_diff(k) >= KINK_MIN_GAP) {
            steps.push(k);
        }
    }
    let trigger_slot = if trigger && !steps.is_empty() {
        Some(rng.below(steps.len()))
    } else {
        None
    };
    let mut kinks: Vec<(usize, f64)> = steps
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let (lo, hi) = if Some(slot) == trigger_slot {
                path.kink_trigger_f4
            } else {
                path.kink_benign_f4
            };
            (k, rng.uniform_in(lo, hi))
        })
        .collect();
    kinks.sort_by_key(|&(k, _)| k);
    for (k, target) in kinks {
        apply_kink(positions, k, goal, target, rng);
    }
}

/// Generates one episode. `id` becomes the trajectory id; all randomness
/// comes from `seed` in a fixed draw order.
pub fn gen_episode(
    layout: &BoardLayout,
    profile: &SimProfile,
    seed: u64,
    id: u64,
) -> Result<Episode> {
    profile.validate()?;
    if layout.goals.is_empty() {
        return Err(CoreError::invalid("layout has no goals"));
    }
    let mut rng = Rng::new(seed);
    let path = &profile.path;
    let iv = &profile.intervener;
    let dt = profile.dt;

    // 1. Intended goal, then the nominal target the plan executes toward.
    let intended = layout.goals[rng.below(layout.goals.len())].clone();
    let mut nominal_id = intended.id;
    let mut nominal_pos = intended.position;
    if rng.chance(path.wrong_goal_rate) {
        if rng.chance(0.5) {
            let mut others = layout.same_shape_ids(intended.shape);
            others.retain(|&g| g != intended.id);
            if !others.is_empty() {
                nominal_id = others[rng.below(others.len())];
                nominal_pos = layout.goal(nominal_id)?.position;
            }
        } else {
            let theta = rng.uniform_in(0.0, 2.0 * core::f64::consts::PI);
            let mag = rng.uniform_in(0.03, 0.06);
            nominal_pos = intended.position
                + Vec3::new(fmath::cos(theta) * mag, fmath::sin(theta) * mag, 0.0);
        }
    }

    // 2. Legibility level and start pose.
    let level = match rng.below(3) {
        0 => LegibilityLevel::High,
        1 => LegibilityLevel::Medium,
        _ => LegibilityLevel::Low,
    };
    let start = {
        let s = path.start_center
            + Vec3::new(
                rng.normal() * path.start_spread.x,
                rng.normal() * path.start_spread.y,
                rng.normal() * path.start_spread.z,
            );
        Vec3::new(s.x, s.y, s.z.max(0.05))
    };

    // 3. Spline control points. Lateral bend is sideways relative to the
    // reach direction; high legibility bends away from the nearest
    // competing same-shape hole, low legibility toward it.
    let reach = nominal_pos - start;
    let side_axis = Vec3::new(reach.y, -reach.x, 0.0)
        .unit(1e-9)
        .unwrap_or(Vec3::new(1.0, 0.0, 0.0));
    let competitor = {
        let mut best: Option<(f64, Vec3)> = None;
        for g in &layout.goals {
            if g.shape != intended.shape {
                continue;
            }
            let d = g.position.dist(nominal_pos);
            if d < 1e-9 {
                continue;
            }
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, g.position));
            }
        }
        best.map(|(_, p)| p).unwrap_or(nominal_pos + Vec3::new(0.08, 0.0, 0.0))
    };
    let away = if side_axis.dot(nominal_pos - competitor) >= 0.0 { 1.0 } else { -1.0 };
    let side = match level {
        LegibilityLevel::High => away,
        LegibilityLevel::Low => -away,
        LegibilityLevel::Medium => {
            if rng.chance(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    };
    let amp_base = match level {
        LegibilityLevel::High => path.amp_high,
        LegibilityLevel::Medium => path.amp_medium,
        LegibilityLevel::Low => path.amp_low,
    };
    let amp = amp_base * (1.0 + 0.25 * rng.normal()).clamp(0.4, 1.6);
    let ctrl = [
        start,
        start + reach * (1.0 / 3.0) + side_axis * (side * amp),
        start + reach * (2.0 / 3.0) + side_axis * (side * amp * 0.6),
        nominal_pos,
    ];
    let spline = ArcSpline::build(&ctrl);
    let total_len = spline.length();

    // 4. Episode length from a sampled cruise speed, plus settle steps.
    let speed = rng.normal_scaled(path.speed_mean, path.speed_std).max(0.02);
    let t_total = ((total_len / (speed * dt)) as i64)
        .clamp(path.t_min as i64, path.t_max as i64) as usize;
    let hold_steps = rng.below(path.hold_max_steps + 1).min(t_total - 3);
    let t_move = t_total - hold_steps;

    // 5. Per-step speed multipliers: slow-in/slow-out plus optional surges.
    let n_inc = t_move - 1;
    let mut weights = vec![0.0; n_inc];
    for (k, w) in weights.iter_mut().enumerate() {
        let tau = (k as f64 + 0.5) / n_inc as f64;
        *w = 0.15 + 0.85 * fmath::powf(fmath::sin(core::f64::consts::PI * tau), 0.9);
    }
    if rng.chance(path.surge_prob) {
        let n_surges = 1 + rng.below(2);
        for _ in 0..n_surges {
            let center = rng.uniform_in(0.15, 0.85);
            let width = (path.surge_frac * 0.5).max(1e-3);
            for (k, w) in weights.iter_mut().enumerate() {
                let tau = (k as f64 + 0.5) / n_inc as f64;
                let d = (tau - center) / width;
                *w *= 1.0 + (path.surge_gain - 1.0) * fmath::exp(-0.5 * d * d);
            }
        }
    }
    let wsum: f64 = weights.iter().sum();

    // 6. Sample the spline by arc position; append the settled tail.
    let mut positions = Vec::with_capacity(t_total);
    positions.push(spline.at(0.0));
    let mut s_acc = 0.0;
    for &w in &weights {
        s_acc += w / wsum * total_len;
        positions.push(spline.at(s_acc));
    }
    for _ in 0..hold_steps {
        positions.push(nominal_pos);
    }
    debug_assert_eq!(positions.len(), t_total);

    // 6b. Azimuthal kinks (see the PathProfile fields): each one swings
    // the remaining path about the line toward the intended goal, so
    // only the one-step velocity-consistency dip gives it away.
    if path.kink_trigger_prob > 0.0 || path.kink_benign_max > 0 {
        inject_kinks(&mut positions, t_move, intended.position, path, &mut rng);
    }

    // 7. Hazard scan over features of the nominal motion w.r.t. the
    // intended goal. Scanning starts at t = 1: there is no observed motion
    // to react to at t = 0.
    let nominal_traj = Trajectory::new(id, dt, positions.clone(), nominal_id, level, false)?;
    let feats = features::featurize(&nominal_traj, intended.position, &layout.goals, &profile.features)?;
    let mut t_hazard = None;
    for t in 1..t_total {
        let h = iv.hazard.hazard(feats.row(t));
        if rng.chance(h) {
            t_hazard = Some(t);
            break;
        }
    }

    // 8. Reaction delay. A fire near the end clamps so that the carry
    // keeps its minimum CARRY_MIN_STEPS of visible motion: the intervener
    // catches the object at rest rather than giving up, and a corrected
    // tail never looks identical to an uncorrected settle.
    let t_c = t_hazard.map(|th| {
        let delay = rng.normal_scaled(iv.reaction_delay_mean, iv.reaction_delay_std).max(0.0);
        let steps = fmath::round(delay / dt) as usize;
        (th + steps).min(t_total - 1 - CARRY_MIN_STEPS)
    });

    let (trajectory, correction) = match t_c {
        None => {
            let traj = Trajectory::new(id, dt, positions, nominal_id, level, false)?;
            (traj, None)
        }
        Some(tc) => {
            // Grasp exactly on the recorded sample; noise goes into the
            // grasp velocity and release point only.
            let c_p = positions[tc];
            let to_goal = intended.position - c_p;
            let angle = rng.normal() * iv.grasp_angle_noise_deg * core::f64::consts::PI / 180.0;
            let grasp_dir = rotate_off_axis(&mut rng, to_goal, angle)
                .unit(1e-9)
                .unwrap_or(Vec3::new(1.0, 0.0, 0.0));
            let grasp_speed = rng.normal_scaled(iv.grasp_speed_mean, iv.grasp_speed_std).max(0.05);
            let grasp_vel = grasp_dir * grasp_speed;

            let (ox, oy) = ground_truth_template(intended.shape).sample(&mut rng);
            let release = intended.position
                + Vec3::new(
                    ox + rng.normal() * iv.release_jitter_std,
                    oy + rng.normal() * iv.release_jitter_std,
                    rng.normal() * iv.release_z_std,
                );

            // The carry ends near the planned finish so settled tails look
            // alike in corrected and uncorrected episodes.
            let travel = c_p.dist(release);
            let min_steps = {
                let by_speed = fmath::ceil(travel / (iv.place_speed * dt)) as usize;
                by_speed.max(CARRY_MIN_STEPS)
            };
            let natural_end = t_total - 1 - rng.below(path.hold_max_steps + 1);
            let end = natural_end.max(tc + min_steps).min(t_total - 1);

            let span = end.saturating_sub(tc);
            if iv.steer {
                // Steered carry: morph the not-yet-executed nominal samples
                // into the straight place-down. The first STEER_HOLD_FRAC of
                // the carry keeps the nominal continuation untouched and the
                // blend weight ramps smoothly from there, so the executed
                // motion leaves the nominal path without a kinematic break.
                for k in 1..span {
                    let tau = k as f64 / span as f64;
                    let ramp = ((tau - STEER_HOLD_FRAC) / (1.0 - STEER_HOLD_FRAC)).clamp(0.0, 1.0);
                    let line = c_p + (release - c_p) * smoothstep(tau);
                    let w = smoothstep(ramp);
                    positions[tc + k] = positions[tc + k] * (1.0 - w) + line * w;
                }
            } else {
                // Pick-up arc: the hand lifts the object off the board and
                // sets it down at the release point, so the carry starts
                // with an immediate vertical velocity even when the object
                // was at rest.
                let lift = (iv.lift_height * (1.0 + 0.15 * rng.normal())).max(0.0);
                for k in 1..span {
                    let tau = k as f64 / span as f64;
                    positions[tc + k] = c_p
                        + (release - c_p) * smoothstep(tau)
                        + Vec3::new(0.0, 0.0, lift * fmath::sin(core::f64::consts::PI * tau));
                }
            }
            positions[tc + span] = release;
            for p in positions.iter_mut().skip(end + 1) {
                *p = release;
            }

            let traj = Trajectory::new(id, dt, positions, nominal_id, level, true)?;
            let event = CorrectionEvent {
                onset: tc,
                grasp_point: c_p,
                grasp_velocity: grasp_vel,
                release_point: release,
                end,
            };
            event.validate(&traj)?;
            (traj, Some(event))
        }
    };

    let onset_fraction = correction
        .as_ref()
        .map(|c| c.onset as f64 / (trajectory.len() - 1) as f64);
    Ok(Episode {
        trajectory,
        correction,
        intended_goal: intended.id,
        onset_fraction,
        seed,
    })
}

const SPLIT_STREAM: u64 = 0x73706c_69;

/// Stratified 60/10/30 assignment over `indices`, shuffled by `rng`.
fn assign_splits(rng: &mut Rng, mut indices: Vec<usize>) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    rng.shuffle(&mut indices);
    let n = indices.len();
    let n_train = fmath::round(0.6 * n as f64) as usize;
    let n_val = (fmath::round(0.1 * n as f64) as usize).min(n - n_train);
    let test = indices.split_off(n_train + n_val);
    let val = indices.split_off(n_train);
    (indices, val, test)
}

/// Generates `n` episodes and assigns the base split.
///
/// Errors when `n < 50` or when fewer than 10 corrected episodes come out;
/// such a dataset cannot train the spatial models.
pub fn gen_dataset(
    layout: &BoardLayout,
    profile: &SimProfile,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n < 50 {
        return Err(CoreError::invalid(alloc::format!(
            "dataset needs at least 50 episodes, asked for {n}"
        )));
    }
    let mut episodes = Vec::with_capacity(n);
    for i in 0..n {
        episodes.push(gen_episode(layout, profile, derive_seed(seed, i as u64), i as u64)?);
    }
    let corrected = episodes.iter().filter(|e| e.correction.is_some()).count();
    if corrected < 10 {
        return Err(CoreError::invalid(alloc::format!(
            "only {corrected} corrected episodes generated; need at least 10"
        )));
    }

    let mut rng = Rng::new(derive_seed(seed, SPLIT_STREAM));
    let corr: Vec<usize> = (0..n).filter(|&i| episodes[i].correction.is_some()).collect();
    let unc: Vec<usize> = (0..n).filter(|&i| episodes[i].correction.is_none()).collect();
    let (tr_c, va_c, te_c) = assign_splits(&mut rng, corr);
    let (tr_u, va_u, te_u) = assign_splits(&mut rng, unc);
    let mut split = vec![SplitTag::Test; n];
    for &i in tr_c.iter().chain(&tr_u) {
        split[i] = SplitTag::Train;
    }
    for &i in va_c.iter().chain(&va_u) {
        split[i] = SplitTag::Val;
    }
    for &i in te_c.iter().chain(&te_u) {
        split[i] = SplitTag::Test;
    }
    Ok(Dataset { layout: layout.clone(), episodes, split, seed })
}

/// Fresh stratified split of one percentile set.
///
/// Membership: all uncorrected episodes plus corrected ones with onset
/// fraction <= `pct`. Per class the members are shuffled with a seeded RNG
/// and cut 60/10/30; indices inside each part are sorted for stable
/// downstream iteration.
pub fn split_for_percentile(ds: &Dataset, pct: f64, split_seed: u64) -> Result<SplitIndices> {
    if !(pct > 0.0 && pct <= 1.0) {
        return Err(CoreError::range("percentile must lie in (0, 1]"));
    }
    let members = ds.percentile_members(pct);
    if members.len() < 10 {
        return Err(CoreError::invalid("percentile set too small to split"));
    }
    let mut rng = Rng::new(derive_seed(split_seed, SPLIT_STREAM));
    let corr: Vec<usize> = members
        .iter()
        .cloned()
        .filter(|&i| ds.episodes[i].correction.is_some())
        .collect();
    let unc: Vec<usize> = members
        .iter()
        .cloned()
        .filter(|&i| ds.episodes[i].correction.is_none())
        .collect();
    let (mut tr, mut va, mut te) = assign_splits(&mut rng, corr);
    let (tr_u, va_u, te_u) = assign_splits(&mut rng, unc);
    tr.extend(tr_u);
    va.extend(va_u);
    te.extend(te_u);
    tr.sort_unstable();
    va.sort_unstable();
    te.sort_unstable();
    Ok(SplitIndices { train: tr, val: va, test: te })
}

/// One planar Gaussian component, as an offset from the target center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Gauss2 {
    fn chol(&self) -> (f64, f64, f64) {
        let l11 = fmath::sqrt(self.cov[0][0]);
        let l21 = self.cov[0][1] / l11;
        let l22 = fmath::sqrt(self.cov[1][1] - l21 * l21);
        (l11, l21, l22)
    }

    /// Log density of an offset under this component.
    pub fn log_density(&self, dx: f64, dy: f64) -> f64 {
        let (l11, l21, l22) = self.chol();
        let u = dx - self.mean[0];
        let v = dy - self.mean[1];
        let z0 = u / l11;
        let z1 = (v - l21 * z0) / l22;
        -fmath::LN_2PI - fmath::ln(l11 * l22) - 0.5 * (z0 * z0 + z1 * z1)
    }
}

/// Ground-truth placement mixture for one shape, relative to its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMixture {
    pub weights: Vec<f64>,
    pub comps: Vec<Gauss2>,
}

impl GroundTruthMixture {
    /// Draws one in-plane offset.
    pub fn sample(&self, rng: &mut Rng) -> (f64, f64) {
        let c = &self.comps[rng.weighted_index(&self.weights)];
        let (l11, l21, l22) = c.chol();
        let z0 = rng.normal();
        let z1 = rng.normal();
        (c.mean[0] + l11 * z0, c.mean[1] + l21 * z0 + l22 * z1)
    }

    /// Mixture log density of an offset.
    pub fn log_density(&self, dx: f64, dy: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.comps)
            .map(|(&w, c)| fmath::ln(w) + c.log_density(dx, dy))
            .collect();
        fmath::log_sum_exp(&terms)
    }
}

/// Fixed per-shape placement spreads: tight circle, looser square, bimodal
/// triangle, and a rectangle elongated along x.
pub fn ground_truth_template(shape: ShapeTag) -> GroundTruthMixture {
    let iso = |s: f64| [[s * s, 0.0], [0.0, s * s]];
    match shape {
        ShapeTag::Circle => GroundTruthMixture {
            weights: vec![1.0],
            comps: vec![Gauss2 { mean: [0.0, 0.0], cov: iso(0.012) }],
        },
        ShapeTag::Square => GroundTruthMixture {
            weights: vec![1.0],
            comps: vec![Gauss2 { mean: [0.0, 0.0], cov: iso(0.018) }],
        },
        ShapeTag::Triangle => GroundTruthMixture {
            weights: vec![0.6, 0.4],
            comps: vec![
                Gauss2 { mean: [0.0, 0.008], cov: iso(0.012) },
                Gauss2 { mean: [0.0, -0.010], cov: iso(0.015) },
            ],
        },
        ShapeTag::Rectangle => GroundTruthMixture {
            weights: vec![1.0],
            comps: vec![Gauss2 {
                mean: [0.0, 0.0],
                cov: [[0.030 * 0.030, 0.0], [0.0, 0.014 * 0.014]],
            }],
        },
    }
}

/// Ground-truth goal distribution for `shape` at `target`, discretized and
/// normalized on `grid`. This is the reference side of the KLD metric.
pub fn ground_truth_distribution(
    shape: ShapeTag,
    target: Vec3,
    grid: &GoalGrid,
) -> Result<PosteriorMap> {
    let mix = ground_truth_template(shape);
    let mut log_liks = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let p = grid.position(i);
        log_liks.push(mix.log_density(p.x - target.x, p.y - target.y));
    }
    PosteriorMap::from_log_likelihoods(grid.clone(), &log_liks)
}
