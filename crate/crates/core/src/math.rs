//! Small 3-vector and orthonormal-frame helpers used by the transport kernels.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Vec3 {
        self / self.length()
    }

    #[inline]
    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_unit(self) -> bool {
        (self.length() - 1.0).abs() < 1e-9
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Orthonormal frame around a unit axis.
///
/// The first tangent is seeded from the coordinate axis with the smallest
/// magnitude component of `n`, which makes the frame a deterministic function
/// of `n` alone.
#[derive(Clone, Copy, Debug)]
pub struct Onb {
    pub t: Vec3,
    pub b: Vec3,
    pub n: Vec3,
}

impl Onb {
    pub fn around(n: Vec3) -> Onb {
        let ax = n.x.abs();
        let ay = n.y.abs();
        let az = n.z.abs();
        let seed = if ax <= ay && ax <= az {
            Vec3::new(1.0, 0.0, 0.0)
        } else if ay <= az {
            Vec3::new(0.0, 1.0, 0.0)
        } else {
            Vec3::new(0.0, 0.0, 1.0)
        };
        let t = seed.cross(n).normalized();
        let b = n.cross(t);
        Onb { t, b, n }
    }

    /// Direction at polar angle (cos_theta, sin_theta) and azimuth phi about `n`.
    #[inline]
    pub fn spherical(self, cos_theta: f64, sin_theta: f64, phi: f64) -> Vec3 {
        let (sp, cp) = phi.sin_cos();
        self.t * (sin_theta * cp) + self.b * (sin_theta * sp) + self.n * cos_theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onb_is_orthonormal() {
        for n in [
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.3, -0.4, 0.8660254037844387).normalized(),
            Vec3::new(-0.577, 0.577, -0.578).normalized(),
        ] {
            let f = Onb::around(n);
            assert!(f.t.dot(f.b).abs() < 1e-12);
            assert!(f.t.dot(f.n).abs() < 1e-12);
            assert!(f.b.dot(f.n).abs() < 1e-12);
            assert!((f.t.length() - 1.0).abs() < 1e-12);
            assert!((f.b.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_preserves_norm() {
        let f = Onb::around(Vec3::new(0.6, 0.0, 0.8));
        let d = f.spherical(0.3, (1.0f64 - 0.09).sqrt(), 2.1);
        assert!((d.length() - 1.0).abs() < 1e-12);
        assert!((d.dot(f.n) - 0.3).abs() < 1e-12);
    }
}
