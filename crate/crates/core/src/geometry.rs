//! Planar rigid-body poses and frame bookkeeping.
//!
//! Every pose is an element of SE(2) with counterclockwise-positive heading in
//! radians. Headings are kept in `(-pi, pi]` after every operation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("angle is not finite: {0}")]
pub struct NonFiniteAngle(pub f64);

/// Wraps `theta` into `(-pi, pi]`, rejecting NaN and infinities.
pub fn wrap_angle(theta: f64) -> Result<f64, NonFiniteAngle> {
    if theta.is_finite() {
        Ok(wrap(theta))
    } else {
        Err(NonFiniteAngle(theta))
    }
}

/// Infallible wrap used on values already known to be finite. Non-finite input
/// propagates as NaN.
#[inline]
pub fn wrap(theta: f64) -> f64 {
    if (-PI..=PI).contains(&theta) && theta != -PI {
        return theta;
    }
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Planar pose `(x, y, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: wrap(theta),
        }
    }

    pub fn from_degrees(x: f64, y: f64, theta_deg: f64) -> Self {
        Pose2::new(x, y, theta_deg.to_radians())
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)
    }

    /// Maps a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Bearing of this pose's origin seen from the parent frame origin.
    pub fn bearing(&self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Unit heading vector.
    pub fn heading(&self) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c, s]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

/// Pose of `b`'s frame expressed through `a`: `a * b` in SE(2).
pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    Pose2::new(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )
}

/// `b` expressed in `a`'s frame: `a^-1 * b`.
pub fn relative(a: &Pose2, b: &Pose2) -> Pose2 {
    let (s, c) = a.theta.sin_cos();
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    Pose2::new(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)
}

/// Body twist. For unicycle motion `vy` is identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2 {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2 {
    pub fn unicycle(v: f64, omega: f64) -> Self {
        Twist2 { vx: v, vy: 0.0, omega }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_pose_close(a: &Pose2, b: &Pose2, tol: f64) {
        assert!(
            (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && wrap(a.theta - b.theta).abs() < tol,
            "{a:?} != {b:?}"
        );
    }

    #[test]
    fn compose_examples() {
        let p = Pose2::new(1.0, 2.0, 0.5);
        assert_pose_close(&compose(&Pose2::IDENTITY, &p), &p, 1e-15);
        assert_pose_close(
            &compose(&Pose2::new(0.0, 0.0, PI / 2.0), &Pose2::new(1.0, 0.0, 0.0)),
            &Pose2::new(0.0, 1.0, PI / 2.0),
            1e-15,
        );
        // rotation-matrix product by hand: R(pi/4) * (sqrt2, 0) = (1, 1)
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let b = [2f64.sqrt(), 0.0];
        let hand = [1.0 + r * b[0] - r * b[1], 1.0 + r * b[0] + r * b[1]];
        let got = compose(&Pose2::new(1.0, 1.0, PI / 4.0), &Pose2::new(b[0], b[1], PI / 4.0));
        assert_pose_close(&got, &Pose2::new(hand[0], hand[1], PI / 2.0), 1e-12);
        assert_pose_close(&got, &Pose2::new(2.0, 2.0, PI / 2.0), 1e-12);
    }

    #[test]
    fn relative_examples() {
        let p = Pose2::new(0.3, -1.2, 2.0);
        assert_pose_close(&relative(&p, &p), &Pose2::IDENTITY, 1e-15);
        let q = Pose2::new(1.0, 2.0, 0.3);
        assert_pose_close(&relative(&Pose2::IDENTITY, &q), &q, 1e-15);
        let a = Pose2::new(1.0, 0.0, PI / 2.0);
        let b = Pose2::new(1.0, 1.0, PI / 2.0);
        assert_pose_close(&relative(&a, &b), &Pose2::new(1.0, 0.0, 0.0), 1e-12);
        assert_pose_close(&relative(&a, &b), &compose(&a.inverse(), &b), 1e-12);
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!((wrap_angle(3.0 * PI).unwrap() - PI).abs() < 1e-12);
        // -3.5pi + 2*2pi = 0.5pi
        assert!((wrap_angle(-3.5 * PI).unwrap() - 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn round_trip(a in pose(), b in pose()) {
            assert_pose_close(&compose(&a, &relative(&a, &b)), &b, 1e-12);
            assert_pose_close(&compose(&a, &a.inverse()), &Pose2::IDENTITY, 1e-12);
        }

        #[test]
        fn associative(a in pose(), b in pose(), c in pose()) {
            assert_pose_close(&compose(&compose(&a, &b), &c), &compose(&a, &compose(&b, &c)), 1e-12);
        }

        #[test]
        fn wrap_idempotent_and_in_range(t in -1e3..1e3f64) {
            let w = wrap_angle(t).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let k = ((t - w) / (2.0 * PI)).round();
            prop_assert!((t - w - k * 2.0 * PI).abs() < 1e-9);
        }
    }
}
