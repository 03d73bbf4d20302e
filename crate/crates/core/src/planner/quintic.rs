use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::PlannerError;
use crate::geometry::{wrap, Pose2};

/// Below this speed the heading of the virtual target is taken from the
/// boundary headings instead of the velocity direction.
pub const HEADING_SPEED_FLOOR: f64 = 1e-6;

/// Position, velocity and acceleration of one end of a planar trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

impl BoundaryState {
    pub fn at_rest(x: f64, y: f64) -> Self {
        BoundaryState {
            pos: [x, y],
            ..Default::default()
        }
    }

    fn is_finite(&self) -> bool {
        self.pos
            .iter()
            .chain(self.vel.iter())
            .chain(self.acc.iter())
            .all(|v| v.is_finite())
    }
}

/// Reference pose and nominal body velocity of the virtual target.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VirtualTarget {
    pub pose: Pose2,
    pub v: f64,
    pub omega: f64,
}

/// Two fifth-order polynomials `x(t)`, `y(t)` on `[0, t_p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuinticTrajectory {
    pub ax: [f64; 6],
    pub by: [f64; 6],
    pub t_p: f64,
    /// Heading reported while the trajectory is at rest near its start.
    pub start_heading: f64,
    /// Heading reported at rest near and after the end.
    pub goal_heading: f64,
    /// Driven backwards: the body faces against the path tangent.
    #[serde(default)]
    pub reverse: bool,
}

fn boundary_matrix(t: f64) -> Matrix6<f64> {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    Matrix6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 2.0, 0.0, 0.0, 0.0, //
        1.0, t, t2, t3, t4, t5, //
        0.0, 1.0, 2.0 * t, 3.0 * t2, 4.0 * t3, 5.0 * t4, //
        0.0, 0.0, 2.0, 6.0 * t, 12.0 * t2, 20.0 * t3,
    )
}

/// Solves the two 6x6 boundary-value systems for the quintic coefficients.
pub fn solve_quintic(start: &BoundaryState, goal: &BoundaryState, t_p: f64) -> Result<QuinticTrajectory, PlannerError> {
    if !(t_p > 0.0) || !t_p.is_finite() {
        return Err(PlannerError::BadDuration(t_p));
    }
    if !start.is_finite() || !goal.is_finite() {
        return Err(PlannerError::NonFinite);
    }
    let lu = boundary_matrix(t_p).lu();
    let mut coeffs = [[0.0; 6]; 2];
    for (axis, out) in coeffs.iter_mut().enumerate() {
        let rhs = Vector6::new(
            start.pos[axis],
            start.vel[axis],
            start.acc[axis],
            goal.pos[axis],
            goal.vel[axis],
            goal.acc[axis],
        );
        let sol = lu.solve(&rhs).ok_or(PlannerError::BadDuration(t_p))?;
        out.copy_from_slice(sol.as_slice());
    }
    let heading_of = |b: &BoundaryState, fallback: f64| {
        if b.vel[0].hypot(b.vel[1]) > HEADING_SPEED_FLOOR {
            b.vel[1].atan2(b.vel[0])
        } else if b.acc[0].hypot(b.acc[1]) > HEADING_SPEED_FLOOR {
            b.acc[1].atan2(b.acc[0])
        } else {
            fallback
        }
    };
    let chord = (goal.pos[1] - start.pos[1]).atan2(goal.pos[0] - start.pos[0]);
    let start_heading = heading_of(start, chord);
    // decelerating into the goal: motion runs against the terminal acceleration
    let goal_heading = if goal.vel[0].hypot(goal.vel[1]) > HEADING_SPEED_FLOOR {
        goal.vel[1].atan2(goal.vel[0])
    } else if goal.acc[0].hypot(goal.acc[1]) > HEADING_SPEED_FLOOR {
        (-goal.acc[1]).atan2(-goal.acc[0])
    } else {
        chord
    };
    Ok(QuinticTrajectory {
        ax: coeffs[0],
        by: coeffs[1],
        t_p,
        start_heading,
        goal_heading,
        reverse: false,
    })
}

fn poly(c: &[f64; 6], t: f64) -> [f64; 3] {
    let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
    let d = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
    let dd = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
    [p, d, dd]
}

impl QuinticTrajectory {
    /// `[position, velocity, acceleration]` of the x and y polynomials at `t`
    /// (no clamping).
    pub fn eval(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        (poly(&self.ax, t), poly(&self.by, t))
    }

    pub fn with_headings(mut self, start_heading: f64, goal_heading: f64) -> Self {
        self.start_heading = wrap(start_heading);
        self.goal_heading = wrap(goal_heading);
        self
    }

    pub fn start_pose(&self) -> Pose2 {
        Pose2::new(self.ax[0], self.by[0], self.start_heading)
    }

    pub fn goal_pose(&self) -> Pose2 {
        let (x, y) = self.eval(self.t_p);
        Pose2::new(x[0], y[0], self.goal_heading)
    }

    pub fn sample(&self, t: f64) -> VirtualTarget {
        if t >= self.t_p {
            return VirtualTarget {
                pose: self.goal_pose(),
                v: 0.0,
                omega: 0.0,
            };
        }
        let t = t.max(0.0);
        let (x, y) = self.eval(t);
        let speed2 = x[1] * x[1] + y[1] * y[1];
        let speed = speed2.sqrt();
        if speed < HEADING_SPEED_FLOOR {
            let heading = if t < 0.5 * self.t_p {
                self.start_heading
            } else {
                self.goal_heading
            };
            return VirtualTarget {
                pose: Pose2::new(x[0], y[0], heading),
                v: speed,
                omega: 0.0,
            };
        }
        let omega = (x[1] * y[2] - y[1] * x[2]) / speed2;
        if self.reverse {
            return VirtualTarget {
                pose: Pose2::new(x[0], y[0], (-y[1]).atan2(-x[1])),
                v: -speed,
                omega,
            };
        }
        VirtualTarget {
            pose: Pose2::new(x[0], y[0], y[1].atan2(x[1])),
            v: speed,
            omega,
        }
    }

    /// Largest residual of the six boundary equations per axis.
    pub fn boundary_residual(&self, start: &BoundaryState, goal: &BoundaryState) -> f64 {
        let (x0, y0) = self.eval(0.0);
        let (x1, y1) = self.eval(self.t_p);
        let mut r: f64 = 0.0;
        for k in 0..3 {
            let (s, g) = match k {
                0 => (start.pos, goal.pos),
                1 => (start.vel, goal.vel),
                _ => (start.acc, goal.acc),
            };
            r = r
                .max((x0[k] - s[0]).abs())
                .max((y0[k] - s[1]).abs())
                .max((x1[k] - g[0]).abs())
                .max((y1[k] - g[1]).abs());
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_solution() {
        let s = BoundaryState::at_rest(1.5, -2.0);
        let q = solve_quintic(&s, &s, 3.0).unwrap();
        assert!((q.ax[0] - 1.5).abs() < 1e-12 && (q.by[0] + 2.0).abs() < 1e-12);
        assert!(q.ax[1..].iter().chain(q.by[1..].iter()).all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn rest_to_rest_unit_step() {
        // hand solution: x(t) = 10t^3 - 15t^4 + 6t^5
        let q = solve_quintic(&BoundaryState::at_rest(0.0, 0.0), &BoundaryState::at_rest(1.0, 0.0), 1.0).unwrap();
        let want = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
        for (a, b) in q.ax.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{:?}", q.ax);
        }
        let vt = q.sample(0.5);
        // 10/8 - 15/16 + 6/32 = 0.5 ; derivative 30/4 - 60/8 + 30/16 = 1.875
        assert!((vt.pose.x - 0.5).abs() < 1e-12);
        assert!((vt.v - 1.875).abs() < 1e-12);
        assert!(vt.omega.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_duration() {
        let s = BoundaryState::at_rest(0.0, 0.0);
        assert!(matches!(solve_quintic(&s, &s, 0.0), Err(PlannerError::BadDuration(_))));
        assert!(matches!(solve_quintic(&s, &s, -1.0), Err(PlannerError::BadDuration(_))));
    }

    #[test]
    fn sample_clamps_to_goal() {
        let q = solve_quintic(&BoundaryState::at_rest(0.0, 0.0), &BoundaryState::at_rest(1.0, 1.0), 2.0)
            .unwrap()
            .with_headings(0.0, 0.3);
        let s0 = q.sample(0.0);
        assert!(s0.pose.x.abs() < 1e-12 && s0.pose.y.abs() < 1e-12);
        assert!(s0.v < 1e-12);
        assert_eq!(s0.omega, 0.0);
        let end = q.sample(5.0);
        assert!((end.pose.x - 1.0).abs() < 1e-12 && (end.pose.y - 1.0).abs() < 1e-12);
        assert_eq!(end.pose.theta, 0.3);
        assert_eq!((end.v, end.omega), (0.0, 0.0));
    }

    fn random_boundary(rng: &mut ChaCha8Rng) -> BoundaryState {
        let mut r = || rng.random_range(-3.0..3.0);
        BoundaryState {
            pos: [r(), r()],
            vel: [r(), r()],
            acc: [r(), r()],
        }
    }

    #[test]
    fn random_boundary_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let (s, g) = (random_boundary(&mut rng), random_boundary(&mut rng));
            let t_p = rng.random_range(0.5..20.0);
            let q = solve_quintic(&s, &g, t_p).unwrap();
            assert!(q.boundary_residual(&s, &g) < 1e-9);
        }
    }

    #[test]
    fn sampled_speed_bounded_by_polynomial_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = random_boundary(&mut rng);
            let mut g = random_boundary(&mut rng);
            g.vel = [0.0, 0.0];
            let t_p = rng.random_range(1.0..10.0);
            let q = solve_quintic(&s, &g, t_p).unwrap();
            let n = (t_p * 1000.0) as usize;
            let peak = (0..=n)
                .map(|i| {
                    let (x, y) = q.eval(i as f64 / 1000.0);
                    x[1].hypot(y[1])
                })
                .fold(0.0, f64::max);
            for i in 0..=n + 500 {
                let vt = q.sample(i as f64 / 1000.0);
                assert!(vt.v <= 1.05 * peak + 1e-12);
            }
        }
    }

    use proptest::strategy::Strategy as _;

    fn boundary() -> impl proptest::strategy::Strategy<Value = BoundaryState> {
        proptest::array::uniform6(-3.0..3.0f64).prop_map(|b| BoundaryState {
            pos: [b[0], b[1]],
            vel: [b[2], b[3]],
            acc: [b[4], b[5]],
        })
    }

    proptest::proptest! {
        #[test]
        fn boundary_residual_vanishes(s in boundary(), g in boundary(), t_p in 0.5..20.0f64) {
            let q = solve_quintic(&s, &g, t_p).unwrap();
            proptest::prop_assert!(q.boundary_residual(&s, &g) < 1e-9);
        }
    }
}
