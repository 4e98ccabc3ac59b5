//! Per-timestep anticipation features.
//!
//! Each feature asks "does the motion so far look like a competent
//! reach toward this goal hypothesis?" from a different angle:
//!
//! | col | name                  | value at step t                               |
//! |-----|-----------------------|-----------------------------------------------|
//! | 0   | `PidVelCosine`        | cos(v_t, v_ref) against the PID reference      |
//! | 1   | `PidPosDistance`      | ‖x_t − x_ref‖ against the PID reference        |
//! | 2   | `GoalDirCosine`       | cos(v_t, g − x_t), directness                  |
//! | 3   | `VelocityConsistency` | cos(v_t, v_{t−1}), smoothness                  |
//! | 4   | `Legibility`          | discounted prefix evidence for the hypothesis  |
//! | 5   | `GoalDistance`        | ‖x_t − g‖                                      |
//! | 6   | `OptimalityRatio`     | exp(cost_{t−1} − cost_t), distance optimality  |
//!
//! Row 0 is computed with the edge-extended velocity (v_0 := v_1);
//! `VelocityConsistency` copies row 1 and `OptimalityRatio` is 1 at
//! t = 0 since no step has been taken. Position-dependent features are
//! therefore real values at t = 0, not copies.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::geom::Vec3;
use crate::matrix::Matrix;
use crate::trajectory::{
    cumulative_lengths, pid_reference, velocities, Goal, PidConfig, Trajectory,
};
use crate::{CoreError, Result};

/// Number of real feature columns produced by [`featurize`].
pub const FEATURE_COUNT: usize = 7;

/// Norm threshold below which direction cosines are defined as zero.
pub const COSINE_EPS: f64 = 1e-9;

/// Identifies one input column for column selection and ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureColumn {
    PidVelCosine,
    PidPosDistance,
    GoalDirCosine,
    VelocityConsistency,
    Legibility,
    GoalDistance,
    OptimalityRatio,
    /// Constant 1.0; carries no signal. Ablation control.
    ConstantDummy,
}

/// The full feature set in column order.
pub const DEFAULT_COLUMNS: [FeatureColumn; FEATURE_COUNT] = [
    FeatureColumn::PidVelCosine,
    FeatureColumn::PidPosDistance,
    FeatureColumn::GoalDirCosine,
    FeatureColumn::VelocityConsistency,
    FeatureColumn::Legibility,
    FeatureColumn::GoalDistance,
    FeatureColumn::OptimalityRatio,
];

impl FeatureColumn {
    /// Index into the [`featurize`] output, None for the dummy.
    pub fn base_index(self) -> Option<usize> {
        DEFAULT_COLUMNS.iter().position(|&c| c == self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pid: PidConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            pid: PidConfig::default(),
        }
    }
}

/// Cosine of the angle between two vectors; 0 when either norm is
/// below `COSINE_EPS`, clamped into [-1, 1].
pub fn cosine(a: Vec3, b: Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na < COSINE_EPS || nb < COSINE_EPS {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// P(goal | motion prefix up to t) for every goal in `goal_set`.
///
/// Evidence for a goal is exp(d(start, g) - L_t - d(x_t, g)) with L_t
/// the executed prefix arc length, normalized over the set with a
/// uniform prior. At t = 0 this is exactly uniform.
pub fn prefix_goal_probabilities(
    traj: &Trajectory,
    t: usize,
    goal_set: &[Vec3],
) -> Result<Vec<f64>> {
    if goal_set.is_empty() {
        return Err(CoreError::invalid("empty goal set"));
    }
    if t >= traj.len() {
        return Err(CoreError::range(format!(
            "prefix index {t} in trajectory of length {}",
            traj.len()
        )));
    }
    let prefix_len = crate::trajectory::path_length(traj, 0, t)?;
    let start = traj.positions[0];
    let x_t = traj.positions[t];
    scored_goal_probabilities(start, x_t, prefix_len, goal_set)
}

fn scored_goal_probabilities(
    start: Vec3,
    x_t: Vec3,
    prefix_len: f64,
    goal_set: &[Vec3],
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(goal_set.len());
    let mut total = 0.0;
    for &g in goal_set {
        let s = fmath::exp(start.dist(g) - prefix_len - x_t.dist(g));
        scores.push(s);
        total += s;
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(CoreError::divergence("degenerate prefix goal evidence"));
    }
    for s in &mut scores {
        *s /= total;
    }
    Ok(scores)
}

/// Probability of the goal at `candidate` (index into `goal_set`).
pub fn prefix_goal_probability(
    traj: &Trajectory,
    t: usize,
    candidate: usize,
    goal_set: &[Vec3],
) -> Result<f64> {
    if candidate >= goal_set.len() {
        return Err(CoreError::range("candidate index outside goal set"));
    }
    Ok(prefix_goal_probabilities(traj, t, goal_set)?[candidate])
}

/// Time-discounted average of prefix probabilities.
///
/// probs[j] is the candidate's probability after prefix j; the weight of
/// step j is (total_len - 1 - j), so early evidence counts more. For
/// probs [0.5, 0.6, 0.8] in a length-4 trajectory the weights are
/// 3, 2, 1 and the value is 3.5/6 = 0.58333….
pub fn legibility_from_probs(probs: &[f64], total_len: usize) -> Result<f64> {
    if probs.is_empty() || probs.len() > total_len {
        return Err(CoreError::invalid(format!(
            "{} prefix probabilities in trajectory of length {total_len}",
            probs.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        let w = (total_len - 1 - j) as f64;
        num += p * w;
        den += w;
    }
    if den <= 0.0 {
        // Only reachable for probs = [last step]; weight there is zero,
        // so fall back to the plain probability.
        return Ok(probs[probs.len() - 1]);
    }
    Ok(num / den)
}

/// Legibility of the motion prefix up to `t` for `goal_set[candidate]`.
pub fn legibility(
    traj: &Trajectory,
    t: usize,
    candidate: usize,
    goal_set: &[Vec3],
) -> Result<f64> {
    if candidate >= goal_set.len() {
        return Err(CoreError::range("candidate index outside goal set"));
    }
    if t >= traj.len() {
        return Err(CoreError::range("legibility index outside trajectory"));
    }
    let mut probs = Vec::with_capacity(t + 1);
    for j in 0..=t {
        probs.push(prefix_goal_probability(traj, j, candidate, goal_set)?);
    }
    legibility_from_probs(&probs, traj.len())
}

/// One-step distance-optimality ratio toward `goal`, in (0, 1].
///
/// cost_t = prefix length + straight-line remainder; by the triangle
/// inequality cost never decreases, and exp(cost_{t-1} - cost_t) is 1
/// exactly when the step moved straight toward the goal.
pub fn optimality_ratio(traj: &Trajectory, t: usize, goal: Vec3) -> Result<f64> {
    if t >= traj.len() {
        return Err(CoreError::range("optimality index outside trajectory"));
    }
    if t == 0 {
        return Ok(1.0);
    }
    let step = traj.positions[t].dist(traj.positions[t - 1]);
    let before = traj.positions[t - 1].dist(goal);
    let after = traj.positions[t].dist(goal);
    let delta = before - (step + after);
    Ok(fmath::exp(delta.min(0.0)))
}

/// Goal set used by the legibility column: the hypothesis replaces the
/// layout goal nearest to it, so competing goals stay fixed as the
/// hypothesis sweeps a grid.
pub fn legibility_goal_set(hypothesis: Vec3, layout: &[Goal]) -> Vec<Vec3> {
    let mut set = Vec::with_capacity(layout.len().max(1));
    set.push(hypothesis);
    if layout.is_empty() {
        return set;
    }
    let mut nearest = 0usize;
    let mut best = f64::INFINITY;
    for (i, g) in layout.iter().enumerate() {
        let d = g.position.dist(hypothesis);
        if d < best {
            best = d;
            nearest = i;
        }
    }
    for (i, g) in layout.iter().enumerate() {
        if i != nearest {
            set.push(g.position);
        }
    }
    set
}

/// Computes the full T×7 feature matrix of `traj` against a goal
/// hypothesis.
///
/// `layout` is the set of plausible competing goals (for a hand-over
/// task: the board targets compatible with the carried object); it
/// feeds only the legibility column via [`legibility_goal_set`].
pub fn featurize(
    traj: &Trajectory,
    hypothesis: Vec3,
    layout: &[Goal],
    config: &FeatureConfig,
) -> Result<Matrix> {
    if layout.is_empty() {
        return Err(CoreError::invalid("featurize needs at least one layout goal"));
    }
    if !hypothesis.is_finite() {
        return Err(CoreError::invalid("non-finite goal hypothesis"));
    }
    let t_len = traj.len();
    let vels = velocities(traj);
    let cum = cumulative_lengths(traj);
    let goal_set = legibility_goal_set(hypothesis, layout);
    let start = traj.positions[0];

    let mut out = Matrix::zeros(t_len, FEATURE_COUNT);
    // Running sums for the incremental legibility update.
    let mut leg_num = 0.0;
    let mut leg_den = 0.0;

    for t in 0..t_len {
        let x = traj.positions[t];
        let v = vels[t];
        let reference = pid_reference(x, v, hypothesis, &config.pid)?;

        let f1 = cosine(v, reference.v_opt);
        let f2 = x.dist(reference.x_opt);
        let f3 = cosine(v, hypothesis - x);
        let f4 = if t == 0 {
            // Filled from row 1 after the loop; placeholder here.
            0.0
        } else {
            cosine(vels[t], vels[t - 1])
        };
        let p_t = scored_goal_probabilities(start, x, cum[t], &goal_set)?[0];
        let w = (t_len - 1 - t) as f64;
        leg_num += p_t * w;
        leg_den += w;
        let f5 = if leg_den > 0.0 { leg_num / leg_den } else { p_t };
        let f6 = x.dist(hypothesis);
        let f7 = if t == 0 {
            1.0
        } else {
            optimality_ratio(traj, t, hypothesis)?
        };

        let row = out.row_mut(t);
        row[0] = f1;
        row[1] = f2;
        row[2] = f3;
        row[3] = f4;
        row[4] = f5;
        row[5] = f6;
        row[6] = f7;
    }
    // Velocity consistency is undefined at t = 0; copy row 1.
    let f4_row1 = out.get(1, 3);
    out.set(0, 3, f4_row1);

    debug_assert!(out.is_finite());
    Ok(out)
}

/// Projects the base feature matrix onto a column selection, in order.
/// `ConstantDummy` becomes a constant 1.0 column.
pub fn select_columns(base: &Matrix, columns: &[FeatureColumn]) -> Result<Matrix> {
    if base.cols() != FEATURE_COUNT {
        return Err(CoreError::shape(format!(
            "column selection needs the {FEATURE_COUNT}-column base matrix, got {}",
            base.cols()
        )));
    }
    if columns.is_empty() {
        return Err(CoreError::invalid("empty column selection"));
    }
    let mut out = Matrix::zeros(base.rows(), columns.len());
    for r in 0..base.rows() {
        let src = base.row(r);
        let dst = out.row_mut(r);
        for (j, &col) in columns.iter().enumerate() {
            dst[j] = match col.base_index() {
                Some(i) => src[i],
                None => 1.0,
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ZERO3;
    use crate::rng::Rng;
    use crate::trajectory::{ColorTag, LegibilityLevel, ShapeTag};
    use proptest::prelude::*;

    fn goal_at(id: u32, p: Vec3) -> Goal {
        Goal {
            id,
            position: p,
            shape: ShapeTag::Circle,
            color: ColorTag::Red,
        }
    }

    fn traj_from(positions: Vec<Vec3>) -> Trajectory {
        Trajectory::new(1, 0.1, positions, 0, LegibilityLevel::High, false).unwrap()
    }

    fn straight_to(goal: Vec3, n: usize) -> Trajectory {
        let positions = (0..n)
            .map(|i| goal * (i as f64 / (n - 1) as f64))
            .collect();
        traj_from(positions)
    }

    #[test]
    fn cosine_basics() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        let y = Vec3::new(0.0, 2.0, 0.0);
        assert_eq!(cosine(x, y), 0.0);
        assert_eq!(cosine(x, x * 5.0), 1.0);
        assert_eq!(cosine(x, -x), -1.0);
        assert_eq!(cosine(x, Vec3::new(1e-12, 0.0, 0.0)), 0.0);
        let diag = Vec3::new(1.0, 1.0, 0.0);
        assert!((cosine(x, diag) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn prefix_probabilities_start_uniform() {
        let traj = traj_from(alloc::vec![ZERO3, Vec3::new(0.0, 0.01, 0.0)]);
        let goals = [Vec3::new(0.1, 0.2, 0.0), Vec3::new(-0.1, 0.2, 0.0)];
        let p = prefix_goal_probabilities(&traj, 0, &goals).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p[1] - 0.5).abs() < 1e-12);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moving_at_a_goal_raises_its_probability() {
        // Straight line from the origin to g0 in 9 equal steps. The
        // candidate's evidence exponent telescopes to 0, the rival's is
        // |g1| - L_t - d(x_t, g1), so the probability has a closed form
        // checked against hand-frozen decimals below. At desk scale the
        // exponents are small and the probability tops out near 0.55.
        let g0 = Vec3::new(0.1, 0.2, 0.0);
        let g1 = Vec3::new(-0.1, 0.2, 0.0);
        let traj = straight_to(g0, 10);
        let goals = [g0, g1];
        let mut prev = 0.5;
        for t in 1..10 {
            let p = prefix_goal_probability(&traj, t, 0, &goals).unwrap();
            assert!(p > prev - 1e-12, "t={t}: {p} vs {prev}");
            prev = p;
        }
        for (t, frozen) in [(2usize, 0.505977), (5, 0.519936), (9, 0.549834)] {
            let f = t as f64 / 9.0;
            let rival = fmath::exp(
                g1.norm()
                    - g0.norm() * f
                    - fmath::sqrt(0.01 * (1.0 + f) * (1.0 + f) + 0.04 * (1.0 - f) * (1.0 - f)),
            );
            let hand = 1.0 / (1.0 + rival);
            let p = prefix_goal_probability(&traj, t, 0, &goals).unwrap();
            assert!((p - hand).abs() < 1e-12, "t={t}: {p} vs {hand}");
            assert!((p - frozen).abs() < 1e-4, "t={t}: {p} vs {frozen}");
        }
    }

    #[test]
    fn legibility_hand_example() {
        let got = legibility_from_probs(&[0.5, 0.6, 0.8], 4).unwrap();
        assert!((got - 0.5833333333333334).abs() < 1e-9);
    }

    #[test]
    fn legibility_on_the_bisector_stays_half() {
        // Motion along the perpendicular bisector of two goals keeps
        // both equally likely at every prefix.
        let g0 = Vec3::new(0.1, 0.3, 0.0);
        let g1 = Vec3::new(-0.1, 0.3, 0.0);
        let positions: Vec<Vec3> = (0..12).map(|i| Vec3::new(0.0, 0.02 * i as f64, 0.0)).collect();
        let traj = traj_from(positions);
        for t in 0..12 {
            let l = legibility(&traj, t, 0, &[g0, g1]).unwrap();
            assert!((l - 0.5).abs() < 1e-6, "t={t}: {l}");
        }
    }

    #[test]
    fn legibility_with_a_single_goal_is_one() {
        let g = Vec3::new(0.05, 0.2, 0.0);
        let traj = straight_to(Vec3::new(0.0, 0.15, 0.0), 8);
        for t in 0..8 {
            let l = legibility(&traj, t, 0, &[g]).unwrap();
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn legibility_bounds_and_errors() {
        let g0 = Vec3::new(0.1, 0.3, 0.0);
        let g1 = Vec3::new(-0.1, 0.3, 0.0);
        let traj = straight_to(g0, 9);
        for t in 0..9 {
            let l = legibility(&traj, t, 0, &[g0, g1]).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        assert!(legibility(&traj, 9, 0, &[g0]).is_err());
        assert!(legibility(&traj, 0, 2, &[g0, g1]).is_err());
        assert!(prefix_goal_probabilities(&traj, 0, &[]).is_err());
    }

    #[test]
    fn optimality_ratio_straight_line_is_one() {
        let goal = Vec3::new(0.2, 0.1, 0.0);
        let traj = straight_to(goal, 10);
        for t in 0..10 {
            let r = optimality_ratio(&traj, t, goal).unwrap();
            assert!((r - 1.0).abs() < 1e-12, "t={t}: {r}");
        }
    }

    #[test]
    fn optimality_ratio_detour_below_one() {
        let goal = Vec3::new(0.2, 0.0, 0.0);
        // Step 1 moves perpendicular to the goal direction.
        let traj = traj_from(alloc::vec![
            ZERO3,
            Vec3::new(0.0, 0.05, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
        ]);
        let r = optimality_ratio(&traj, 1, goal).unwrap();
        assert!(r < 1.0);
        assert!(r > 0.0);
        assert_eq!(optimality_ratio(&traj, 0, goal).unwrap(), 1.0);
    }

    #[test]
    fn goal_set_swaps_nearest_layout_goal() {
        let layout = [
            goal_at(0, Vec3::new(0.1, 0.2, 0.0)),
            goal_at(1, Vec3::new(-0.1, 0.2, 0.0)),
            goal_at(2, Vec3::new(0.1, -0.2, 0.0)),
        ];
        let hyp = Vec3::new(0.09, 0.19, 0.0); // nearest: goal 0
        let set = legibility_goal_set(hyp, &layout);
        assert_eq!(set.len(), 3);
        assert_eq!(set[0], hyp);
        assert!(set.contains(&layout[1].position));
        assert!(set.contains(&layout[2].position));
        assert!(!set.contains(&layout[0].position));
    }

    #[test]
    fn featurize_straight_reach_matches_expectations() {
        let goal = Vec3::new(0.12, 0.21, 0.0);
        let layout = [
            goal_at(0, goal),
            goal_at(1, Vec3::new(-0.12, 0.21, 0.0)),
            goal_at(2, Vec3::new(0.12, -0.21, 0.0)),
            goal_at(3, Vec3::new(-0.12, -0.21, 0.0)),
        ];
        // Stop short of the goal: at the point of contact the direction
        // vector degenerates and the cosine convention kicks in.
        let positions: Vec<Vec3> = (0..20).map(|i| goal * (0.9 * i as f64 / 19.0)).collect();
        let traj = traj_from(positions);
        let f = featurize(&traj, goal, &layout, &FeatureConfig::default()).unwrap();
        assert_eq!((f.rows(), f.cols()), (20, 7));
        for t in 0..20 {
            let row = f.row(t);
            // Straight at the goal: directness and smoothness saturate,
            // the step ratio is exactly 1.
            assert!(row[2] > 0.999, "directness at {t}: {}", row[2]);
            assert!((row[3] - 1.0).abs() < 1e-9);
            assert!((row[6] - 1.0).abs() < 1e-9);
            // Goal distance strictly decreases.
            if t > 0 {
                assert!(row[5] < f.get(t - 1, 5));
            }
        }
        // Legibility grows as the motion commits to the goal.
        assert!(f.get(19, 4) > f.get(1, 4));

        // Arriving exactly at the goal zeroes the final directness row
        // under the degenerate-norm convention instead of producing NaN.
        let arriving = straight_to(goal, 20);
        let fa = featurize(&arriving, goal, &layout, &FeatureConfig::default()).unwrap();
        assert_eq!(fa.get(19, 2), 0.0);
        assert!(fa.is_finite());
    }

    #[test]
    fn featurize_row0_uses_real_position_values() {
        let goal = Vec3::new(0.1, 0.1, 0.0);
        let layout = [goal_at(0, goal), goal_at(1, Vec3::new(-0.1, 0.1, 0.0))];
        let traj = straight_to(goal, 10);
        let f = featurize(&traj, goal, &layout, &FeatureConfig::default()).unwrap();
        // Position features differ between rows 0 and 1 (no copy)...
        assert!(f.get(0, 5) > f.get(1, 5));
        // ...while velocity consistency copies row 1 and the step
        // ratio is defined as 1.
        assert_eq!(f.get(0, 3), f.get(1, 3));
        assert_eq!(f.get(0, 6), 1.0);
    }

    #[test]
    fn featurize_rejects_empty_layout() {
        let traj = straight_to(Vec3::new(0.1, 0.0, 0.0), 5);
        let err = featurize(&traj, ZERO3, &[], &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, CoreError::InvalidArgument(_)));
    }

    #[test]
    fn select_columns_orders_and_fills_dummy() {
        let base = Matrix::from_fn(3, 7, |r, c| (r * 10 + c) as f64);
        let picked = select_columns(
            &base,
            &[
                FeatureColumn::GoalDistance,
                FeatureColumn::ConstantDummy,
                FeatureColumn::PidVelCosine,
            ],
        )
        .unwrap();
        assert_eq!(picked.row(1), &[15.0, 1.0, 10.0]);
        assert!(select_columns(&base, &[]).is_err());
        let not_base = Matrix::zeros(3, 4);
        assert!(select_columns(&not_base, &[FeatureColumn::GoalDistance]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn feature_invariants_on_random_motions(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let n = 5 + rng.below(30);
            let mut positions = alloc::vec![ZERO3];
            for _ in 1..n {
                let last = *positions.last().unwrap();
                positions.push(last + Vec3::new(
                    rng.normal_scaled(0.005, 0.01),
                    rng.normal_scaled(0.01, 0.01),
                    rng.normal_scaled(0.0, 0.003),
                ));
            }
            let traj = traj_from(positions);
            let layout = [
                goal_at(0, Vec3::new(0.12, 0.21, 0.0)),
                goal_at(1, Vec3::new(-0.12, 0.21, 0.0)),
                goal_at(2, Vec3::new(0.12, -0.21, 0.0)),
                goal_at(3, Vec3::new(-0.12, -0.21, 0.0)),
            ];
            let hyp = layout[rng.below(4)].position;
            let f = featurize(&traj, hyp, &layout, &FeatureConfig::default()).unwrap();
            for t in 0..f.rows() {
                let row = f.row(t);
                prop_assert!((-1.0..=1.0).contains(&row[0]));
                prop_assert!(row[1] >= 0.0 && row[1].is_finite());
                prop_assert!((-1.0..=1.0).contains(&row[2]));
                prop_assert!((-1.0..=1.0).contains(&row[3]));
                prop_assert!((0.0..=1.0).contains(&row[4]));
                prop_assert!(row[5] >= 0.0 && row[5].is_finite());
                prop_assert!(row[6] > 0.0 && row[6] <= 1.0);
            }
        }
    }
}
