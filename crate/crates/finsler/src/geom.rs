//! Minimal 2D linear algebra. Everything downstream works in fixed dimension
//! two, so a couple of copyable structs beat a general-purpose matrix crate.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub const fn vec2(x: f64, y: f64) -> Vec2 {
    Vec2 { x, y }
}

impl Vec2 {
    pub const ZERO: Vec2 = vec2(0.0, 0.0);

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product; positive when `o` lies to the left
    /// of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(theta: f64) -> Vec2 {
        vec2(theta.cos(), theta.sin())
    }

    /// Counterclockwise rotation by 90 degrees: the left normal of a
    /// direction of travel.
    pub fn perp(self) -> Vec2 {
        vec2(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        vec2(self.x / n, self.y / n)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        vec2(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        vec2(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        vec2(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        vec2(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        vec2(self.x / s, self.y / s)
    }
}

/// Linear functional on the plane. Kept distinct from `Vec2` so that duals
/// and tangents cannot be mixed up silently.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Covector {
    pub a: f64,
    pub b: f64,
}

pub const fn covector(a: f64, b: f64) -> Covector {
    Covector { a, b }
}

impl Covector {
    pub fn apply(self, v: Vec2) -> f64 {
        self.a * v.x + self.b * v.y
    }

    /// The components as a point of the dual plane, for geometric operations
    /// on cosphere curves.
    pub fn as_vec(self) -> Vec2 {
        vec2(self.a, self.b)
    }

    pub fn from_vec(v: Vec2) -> Covector {
        covector(v.x, v.y)
    }
}

impl Add for Covector {
    type Output = Covector;
    fn add(self, o: Covector) -> Covector {
        covector(self.a + o.a, self.b + o.b)
    }
}

impl Sub for Covector {
    type Output = Covector;
    fn sub(self, o: Covector) -> Covector {
        covector(self.a - o.a, self.b - o.b)
    }
}

impl Neg for Covector {
    type Output = Covector;
    fn neg(self) -> Covector {
        covector(-self.a, -self.b)
    }
}

impl Mul<f64> for Covector {
    type Output = Covector;
    fn mul(self, s: f64) -> Covector {
        covector(self.a * s, self.b * s)
    }
}

/// Symmetric 2x2 matrix in row-major order, used for fundamental tensors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m11: 1.0,
        m12: 0.0,
        m21: 0.0,
        m22: 1.0,
    };

    pub fn symmetric(m11: f64, m12: f64, m22: f64) -> Mat2 {
        Mat2 {
            m11,
            m12,
            m21: m12,
            m22,
        }
    }

    pub fn apply(self, v: Vec2) -> Vec2 {
        vec2(
            self.m11 * v.x + self.m12 * v.y,
            self.m21 * v.x + self.m22 * v.y,
        )
    }

    pub fn det(self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn trace(self) -> f64 {
        self.m11 + self.m22
    }

    pub fn scale(self, s: f64) -> Mat2 {
        Mat2 {
            m11: self.m11 * s,
            m12: self.m12 * s,
            m21: self.m21 * s,
            m22: self.m22 * s,
        }
    }

    pub fn add(self, o: Mat2) -> Mat2 {
        Mat2 {
            m11: self.m11 + o.m11,
            m12: self.m12 + o.m12,
            m21: self.m21 + o.m21,
            m22: self.m22 + o.m22,
        }
    }

    /// Solve `self * x = rhs`. Errors on (numerically) singular systems.
    pub fn solve(self, rhs: Vec2) -> Option<Vec2> {
        let d = self.det();
        let scale = self.m11.abs() + self.m12.abs() + self.m21.abs() + self.m22.abs();
        if d.abs() <= 1e-14 * scale * scale.max(1.0) {
            return None;
        }
        Some(vec2(
            (rhs.x * self.m22 - rhs.y * self.m12) / d,
            (rhs.y * self.m11 - rhs.x * self.m21) / d,
        ))
    }

    /// Eigenvalues of the symmetrized matrix, ascending.
    pub fn sym_eigenvalues(self) -> (f64, f64) {
        let m12 = 0.5 * (self.m12 + self.m21);
        let tr = self.trace();
        let disc = (0.25 * (self.m11 - self.m22).powi(2) + m12 * m12).sqrt();
        (0.5 * tr - disc, 0.5 * tr + disc)
    }

    /// Quadratic form v^T M v.
    pub fn quad(self, v: Vec2) -> f64 {
        v.dot(self.apply(v))
    }
}

/// Outer product a b^T (not symmetric in general).
pub fn outer(a: Vec2, b: Vec2) -> Mat2 {
    Mat2 {
        m11: a.x * b.x,
        m12: a.x * b.y,
        m21: a.y * b.x,
        m22: a.y * b.y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_sign_identifies_left() {
        let dir = vec2(1.0, 0.0);
        assert!(dir.cross(vec2(0.0, 1.0)) > 0.0, "up is left of +x");
        assert!(dir.cross(vec2(0.0, -1.0)) < 0.0);
        assert_eq!(dir.perp(), vec2(0.0, 1.0));
    }

    #[test]
    fn solve_round_trip() {
        let m = Mat2 {
            m11: 2.0,
            m12: 0.3,
            m21: -0.1,
            m22: 1.5,
        };
        let x = vec2(0.7, -1.2);
        let sol = m.solve(m.apply(x)).unwrap();
        assert!((sol - x).norm() < 1e-12);
        let singular = Mat2::symmetric(1.0, 1.0, 1.0);
        assert!(singular.solve(vec2(1.0, 0.0)).is_none());
    }

    #[test]
    fn eigenvalues_of_diagonal() {
        let (lo, hi) = Mat2::symmetric(3.0, 0.0, 1.0).sym_eigenvalues();
        assert!((lo - 1.0).abs() < 1e-14);
        assert!((hi - 3.0).abs() < 1e-14);
    }
}
