//! Small fixed-size linear algebra and scalar helpers.
//!
//! Everything geometric in this crate runs on `f64`; the generic
//! [`Real`] trait exists so the autodiff engine can be instantiated at
//! `f32` for training and `f64` for gradient checking.

use num_traits::Float;

/// Scalar type the autodiff engine is generic over.
///
/// `f32` is the training type, `f64` the checking type. The bound
/// pulls in everything needed for elementwise math without `std`.
pub trait Real:
    Float + core::fmt::Debug + core::fmt::Display + Default + core::iter::Sum + 'static
{
    /// Lossy conversion from `f64` (used for constants and test data).
    fn from_f64(v: f64) -> Self;
    /// Lossless widening to `f64` (used for reporting and checking).
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Three-component `f64` vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct V3 {
    /// x component.
    pub x: f64,
    /// y component.
    pub y: f64,
    /// z component.
    pub z: f64,
}

impl V3 {
    /// All components zero.
    pub const ZERO: V3 = V3 { x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a vector from components.
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        V3 { x, y, z }
    }

    /// Dot product.
    pub fn dot(self, o: V3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Cross product.
    pub fn cross(self, o: V3) -> V3 {
        V3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    /// Euclidean norm.
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Unit vector in the same direction; `None` for near-zero input.
    pub fn normalized(self) -> Option<V3> {
        let n = self.norm();
        if n < 1e-12 {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    /// Componentwise minimum.
    pub fn min(self, o: V3) -> V3 {
        V3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    /// Componentwise maximum.
    pub fn max(self, o: V3) -> V3 {
        V3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Component by index (0, 1, 2).
    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl core::ops::Add for V3 {
    type Output = V3;
    fn add(self, o: V3) -> V3 {
        V3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl core::ops::Sub for V3 {
    type Output = V3;
    fn sub(self, o: V3) -> V3 {
        V3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl core::ops::Mul<f64> for V3 {
    type Output = V3;
    fn mul(self, s: f64) -> V3 {
        V3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl core::ops::Neg for V3 {
    type Output = V3;
    fn neg(self) -> V3 {
        V3::new(-self.x, -self.y, -self.z)
    }
}

impl core::ops::AddAssign for V3 {
    fn add_assign(&mut self, o: V3) {
        *self = *self + o;
    }
}

/// Row-major 3x3 `f64` matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct M3 {
    /// Rows of the matrix.
    pub rows: [[f64; 3]; 3],
}

impl M3 {
    /// Identity matrix.
    pub const IDENTITY: M3 = M3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Builds a matrix from rows.
    pub const fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        M3 { rows }
    }

    /// Matrix * vector.
    pub fn mul_v(&self, v: V3) -> V3 {
        V3::new(
            self.rows[0][0] * v.x + self.rows[0][1] * v.y + self.rows[0][2] * v.z,
            self.rows[1][0] * v.x + self.rows[1][1] * v.y + self.rows[1][2] * v.z,
            self.rows[2][0] * v.x + self.rows[2][1] * v.y + self.rows[2][2] * v.z,
        )
    }

    /// Matrix * matrix.
    pub fn mul_m(&self, o: &M3) -> M3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        M3 { rows: out }
    }

    /// Transpose.
    pub fn transpose(&self) -> M3 {
        let r = &self.rows;
        M3::from_rows([
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ])
    }
}

/// Rodrigues rotation: axis-angle vector to rotation matrix.
///
/// `R = I + sin(t) K + (1 - cos(t)) K^2` with `K` the skew matrix of
/// the unit axis and `t` the vector norm. Near-zero angles return the
/// identity.
pub fn rodrigues(aa: V3) -> M3 {
    let theta = aa.norm();
    if theta < 1e-12 {
        return M3::IDENTITY;
    }
    let a = aa * (1.0 / theta);
    let k = M3::from_rows([
        [0.0, -a.z, a.y],
        [a.z, 0.0, -a.x],
        [-a.y, a.x, 0.0],
    ]);
    let k2 = k.mul_m(&k);
    let (s, c) = (theta.sin(), theta.cos());
    let mut rows = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            rows[i][j] = id + s * k.rows[i][j] + (1.0 - c) * k2.rows[i][j];
        }
    }
    M3::from_rows(rows)
}

/// Unit quaternion as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    /// Scalar part.
    pub w: f64,
    /// Vector part x.
    pub x: f64,
    /// Vector part y.
    pub y: f64,
    /// Vector part z.
    pub z: f64,
}

impl Quat {
    /// Identity rotation.
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Quaternion for an axis-angle vector.
    pub fn from_axis_angle(aa: V3) -> Quat {
        let theta = aa.norm();
        if theta < 1e-12 {
            return Quat::IDENTITY;
        }
        let half = theta * 0.5;
        let s = half.sin() / theta;
        Quat { w: half.cos(), x: aa.x * s, y: aa.y * s, z: aa.z * s }
    }

    /// Axis-angle vector for this quaternion (angle in `[0, pi]`).
    pub fn to_axis_angle(self) -> V3 {
        let q = if self.w < 0.0 { self.scale(-1.0) } else { self };
        let vn = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if vn < 1e-12 {
            return V3::ZERO;
        }
        let angle = 2.0 * vn.atan2(q.w);
        V3::new(q.x, q.y, q.z) * (angle / vn)
    }

    fn scale(self, s: f64) -> Quat {
        Quat { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn normalize(self) -> Quat {
        let n = self.dot(self).sqrt();
        if n < 1e-12 {
            Quat::IDENTITY
        } else {
            self.scale(1.0 / n)
        }
    }

    /// Spherical linear interpolation along the shorter arc.
    ///
    /// `u = 0` returns `self`, `u = 1` returns `other`. Nearly parallel
    /// inputs fall back to normalized linear interpolation.
    pub fn slerp(self, other: Quat, u: f64) -> Quat {
        let mut b = other;
        let mut d = self.dot(b);
        if d < 0.0 {
            b = b.scale(-1.0);
            d = -d;
        }
        if d > 1.0 - 1e-9 {
            let lerp = Quat {
                w: self.w + (b.w - self.w) * u,
                x: self.x + (b.x - self.x) * u,
                y: self.y + (b.y - self.y) * u,
                z: self.z + (b.z - self.z) * u,
            };
            return lerp.normalize();
        }
        let omega = d.clamp(-1.0, 1.0).acos();
        let so = omega.sin();
        let (ka, kb) = (((1.0 - u) * omega).sin() / so, (u * omega).sin() / so);
        Quat {
            w: ka * self.w + kb * b.w,
            x: ka * self.x + kb * b.x,
            y: ka * self.y + kb * b.y,
            z: ka * self.z + kb * b.z,
        }
    }
}

/// Standard normal draw via Box-Muller from two uniform samples.
pub fn box_muller(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rodrigues_zero_is_identity() {
        assert_eq!(rodrigues(V3::ZERO), M3::IDENTITY);
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rodrigues(V3::new(0.0, 0.0, core::f64::consts::FRAC_PI_2));
        let v = r.mul_v(V3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rodrigues_is_orthonormal() {
        let r = rodrigues(V3::new(0.3, -0.8, 0.5));
        let rt = r.transpose();
        let id = r.mul_m(&rt);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(id.rows[i][j], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn quat_axis_angle_roundtrip() {
        let aa = V3::new(0.4, -0.2, 0.9);
        let back = Quat::from_axis_angle(aa).to_axis_angle();
        assert_relative_eq!(back.x, aa.x, epsilon = 1e-12);
        assert_relative_eq!(back.y, aa.y, epsilon = 1e-12);
        assert_relative_eq!(back.z, aa.z, epsilon = 1e-12);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = Quat::from_axis_angle(V3::new(0.0, 0.0, 0.0));
        let b = Quat::from_axis_angle(V3::new(0.0, 0.0, core::f64::consts::FRAC_PI_2));
        let mid = a.slerp(b, 0.5).to_axis_angle();
        assert_relative_eq!(mid.z, core::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let end = a.slerp(b, 1.0).to_axis_angle();
        assert_relative_eq!(end.z, core::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn slerp_takes_short_arc() {
        // Antipodal representation of the same small rotation must not
        // produce a long-way interpolation.
        let a = Quat::from_axis_angle(V3::new(0.0, 0.0, 0.1));
        let mut b = Quat::from_axis_angle(V3::new(0.0, 0.0, 0.3));
        b = b.scale(-1.0);
        let mid = a.slerp(b, 0.5).to_axis_angle();
        assert_relative_eq!(mid.z, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn box_muller_moments() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = box_muller(&mut rng);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
