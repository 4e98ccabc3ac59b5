//! Small fixed-size vector and matrix types for workspace geometry.

use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::{CoreError, Result};

/// 3-D point or vector in meters. Serializes as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const ZERO3: Vec3 = Vec3 {
    x: 0.0,
    y: 0.0,
    z: 0.0,
};

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        fmath::sqrt(self.norm_sq())
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or `None` when the norm is below `eps`.
    pub fn unit(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        if n < eps {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Symmetric 3x3 matrix stored densely; used for mixture covariances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub fn identity_scaled(s: f64) -> Self {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = s;
        }
        Mat3(m)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Mat3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    /// v vᵀ.
    pub fn outer(v: Vec3) -> Self {
        let a = v.to_array();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * a[j];
            }
        }
        Mat3(m)
    }

    pub fn add_scaled(&mut self, o: &Mat3, s: f64) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += o.0[i][j] * s;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for row in &mut self.0 {
            for v in row {
                *v *= s;
            }
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let a = v.to_array();
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(&self.0) {
            *o = row[0] * a[0] + row[1] * a[1] + row[2] * a[2];
        }
        Vec3::from(out)
    }

    /// Lower-triangular Cholesky factor L with L Lᵀ = self.
    ///
    /// Fails when the matrix is not (numerically) positive definite;
    /// covariance floors upstream are expected to prevent that.
    pub fn cholesky(&self) -> Result<Mat3> {
        let a = &self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut sum = a[i][j];
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(CoreError::divergence(
                            "covariance not positive definite in Cholesky",
                        ));
                    }
                    l[i][j] = fmath::sqrt(sum);
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        Ok(Mat3(l))
    }

    /// Solves L y = b by forward substitution (self must be lower
    /// triangular).
    pub fn forward_solve(&self, b: Vec3) -> Vec3 {
        let l = &self.0;
        let b = b.to_array();
        let y0 = b[0] / l[0][0];
        let y1 = (b[1] - l[1][0] * y0) / l[1][1];
        let y2 = (b[2] - l[2][0] * y0 - l[2][1] * y1) / l[2][2];
        Vec3::new(y0, y1, y2)
    }

    /// log det of self given that self is a Cholesky factor.
    pub fn log_det_from_cholesky(&self) -> f64 {
        2.0 * (fmath::ln(self.0[0][0]) + fmath::ln(self.0[1][1]) + fmath::ln(self.0[2][2]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

/// Log density of N(mean, cov) at `x`, via Cholesky.
pub fn gaussian3_log_density(x: Vec3, mean: Vec3, cov: &Mat3) -> Result<f64> {
    let l = cov.cholesky()?;
    let y = l.forward_solve(x - mean);
    let quad = y.norm_sq();
    Ok(-0.5 * (3.0 * fmath::LN_2PI + l.log_det_from_cholesky() + quad))
}

/// Sample from N(mean, cov) given the covariance's Cholesky factor.
pub fn gaussian3_sample(rng: &mut crate::rng::Rng, mean: Vec3, chol: &Mat3) -> Vec3 {
    let z = Vec3::new(rng.normal(), rng.normal(), rng.normal());
    mean + chol_mul(chol, z)
}

fn chol_mul(l: &Mat3, z: Vec3) -> Vec3 {
    let m = &l.0;
    Vec3::new(
        m[0][0] * z.x,
        m[1][0] * z.x + m[1][1] * z.y,
        m[2][0] * z.x + m[2][1] * z.y + m[2][2] * z.z,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec3_serializes_as_array() {
        let v = Vec3::new(1.0, -2.5, 0.125);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, "[1.0,-2.5,0.125]");
        let back: Vec3 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn cholesky_roundtrip() {
        let cov = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let l = cov.cholesky().unwrap();
        // L Lᵀ must reproduce cov.
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += l.0[i][k] * l.0[j][k];
                }
                assert!((acc - cov.0[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = Mat3::diag(1.0, -1.0, 1.0);
        assert!(m.cholesky().is_err());
    }

    #[test]
    fn gaussian_log_density_matches_isotropic_formula() {
        let cov = Mat3::identity_scaled(2.0);
        let x = Vec3::new(1.0, 0.0, -1.0);
        let got = gaussian3_log_density(x, ZERO3, &cov).unwrap();
        // -0.5 (3 ln 2π + 3 ln σ² + ‖x‖²/σ²)
        let expected = -0.5 * (3.0 * fmath::LN_2PI + 3.0 * fmath::ln(2.0) + 2.0 / 2.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn gaussian_sampling_matches_covariance() {
        let cov = Mat3([[2.0, 0.8, 0.0], [0.8, 1.0, 0.0], [0.0, 0.0, 0.5]]);
        let chol = cov.cholesky().unwrap();
        let mut rng = crate::rng::Rng::new(77);
        let n = 100_000;
        let mut sum = ZERO3;
        let mut sum_xy = 0.0;
        let mut sum_xx = 0.0;
        for _ in 0..n {
            let s = gaussian3_sample(&mut rng, ZERO3, &chol);
            sum = sum + s;
            sum_xy += s.x * s.y;
            sum_xx += s.x * s.x;
        }
        let mean = sum * (1.0 / n as f64);
        assert!(mean.norm() < 0.02);
        assert!((sum_xx / n as f64 - 2.0).abs() < 0.05);
        assert!((sum_xy / n as f64 - 0.8).abs() < 0.05);
    }
}
