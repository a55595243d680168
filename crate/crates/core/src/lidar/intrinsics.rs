//! Equidistant fisheye intrinsics with one radial distortion term.
//!
//! At 120 degrees of horizontal FOV a pinhole model is numerically
//! hostile; the equidistant mapping keeps the per-pixel angle nearly
//! constant across the frame. The distorted radius is
//! `r_d = theta * (1 + k1 * theta^2)` in radians, scaled to pixels by
//! the per-axis focal constants.

use serde::{Deserialize, Serialize};

use super::LidarError;

/// Ray direction in the sensor frame: azimuth positive toward +u,
/// elevation positive up (toward -v). Radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub az_rad: f64,
    pub el_rad: f64,
}

impl Direction {
    pub fn from_degrees(az_deg: f64, el_deg: f64) -> Self {
        Self {
            az_rad: az_deg.to_radians(),
            el_rad: el_deg.to_radians(),
        }
    }

    /// Unit vector (x right, y up, z boresight).
    pub fn unit(&self) -> [f64; 3] {
        [
            self.el_rad.cos() * self.az_rad.sin(),
            self.el_rad.sin(),
            self.el_rad.cos() * self.az_rad.cos(),
        ]
    }

    /// Angle to another direction, radians; atan2 form stays precise for
    /// tiny angles.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let a = self.unit();
        let b = other.unit();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        cross_norm.atan2(dot)
    }
}

/// Projection parameters (K, delta): focal constants in pixels per
/// radian, principal point in pixels, and the radial term k1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
}

impl Default for Intrinsics {
    /// Nominal calibration of the 128x32, 120x27.5 degree imager:
    /// fx spans 128 px over 120 deg, fy spans 32 px over 27.5 deg.
    fn default() -> Self {
        Self {
            fx: 61.115,
            fy: 66.672,
            cx: 63.5,
            cy: 15.5,
            k1: 0.0,
        }
    }
}

impl Intrinsics {
    pub fn as_array(&self) -> [f64; 5] {
        [self.fx, self.fy, self.cx, self.cy, self.k1]
    }

    pub fn from_array(p: [f64; 5]) -> Self {
        Self {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            k1: p[4],
        }
    }

    /// Distorted radial angle, radians.
    #[inline]
    fn distort(&self, theta: f64) -> f64 {
        theta * (1.0 + self.k1 * theta * theta)
    }

    /// Inverts the radial distortion by Newton iteration.
    #[inline]
    fn undistort(&self, r_d: f64) -> f64 {
        if self.k1 == 0.0 {
            return r_d;
        }
        let mut theta = r_d;
        for _ in 0..25 {
            let f = theta * (1.0 + self.k1 * theta * theta) - r_d;
            let fp = 1.0 + 3.0 * self.k1 * theta * theta;
            let step = f / fp;
            theta -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        theta
    }

    /// Checks that the distortion stays monotone out to `theta_max` rad.
    pub fn validate(&self, width: u16, height: u16, theta_max_rad: f64) -> Result<(), LidarError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(LidarError::InvalidSpec("focal constants must be positive".into()));
        }
        if self.cx < 0.0 || self.cx > width as f64 - 1.0 || self.cy < 0.0 || self.cy > height as f64 - 1.0
        {
            return Err(LidarError::InvalidSpec("principal point outside image".into()));
        }
        // d r_d / d theta = 1 + 3 k1 theta^2 must stay positive
        if 1.0 + 3.0 * self.k1 * theta_max_rad * theta_max_rad <= 0.0 {
            return Err(LidarError::InvalidSpec(
                "distortion not monotone over the field of view".into(),
            ));
        }
        Ok(())
    }

    /// Projects a sensor-frame direction to a continuous pixel position.
    ///
    /// The optical axis maps to (cx, cy); directions at 90 degrees or
    /// more off axis are outside the model.
    pub fn project(&self, dir: Direction) -> Result<(f64, f64), LidarError> {
        let d = dir.unit();
        let cos_off = d[2].clamp(-1.0, 1.0);
        let theta = cos_off.acos();
        if theta >= std::f64::consts::FRAC_PI_2 {
            return Err(LidarError::OutsideModel(theta));
        }
        if theta < 1e-12 {
            return Ok((self.cx, self.cy));
        }
        let r_d = self.distort(theta);
        // transverse components have norm sin(theta)
        let sin_theta = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let (cos_psi, sin_psi) = (d[0] / sin_theta, d[1] / sin_theta);
        let u = self.cx + self.fx * r_d * cos_psi;
        let v = self.cy - self.fy * r_d * sin_psi;
        Ok((u, v))
    }

    /// Inverse projection: continuous pixel position to ray direction.
    pub fn unproject(&self, u: f64, v: f64) -> Direction {
        let mx = (u - self.cx) / self.fx;
        let my = (self.cy - v) / self.fy;
        let r_d = (mx * mx + my * my).sqrt();
        if r_d < 1e-12 {
            return Direction { az_rad: 0.0, el_rad: 0.0 };
        }
        let theta = self.undistort(r_d);
        let (cos_psi, sin_psi) = (mx / r_d, my / r_d);
        let (st, ct) = (theta.sin(), theta.cos());
        let d = [st * cos_psi, st * sin_psi, ct];
        Direction {
            az_rad: d[0].atan2(d[2]),
            el_rad: d[1].asin(),
        }
    }
}
