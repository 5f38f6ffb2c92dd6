use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::RenderError;

/// Orthonormality tolerance for the rotation block of an extrinsic matrix.
pub const ROTATION_TOLERANCE: f64 = 1e-5;

/// Intrinsic field of view plus a world-to-camera `[R | t]` extrinsic.
///
/// Camera axes follow the OpenCV convention (x right, y down, z forward) in a
/// z-up world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub fov: f64,
    pub rt: [[f64; 4]; 3],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl CameraMeta {
    /// Camera on a sphere of `radius` around the origin, looking at the origin.
    /// Angles in radians; elevation must stay away from the poles.
    pub fn orbit(azimuth: f64, elevation: f64, radius: f64, fov: f64) -> Self {
        let eye = [
            radius * elevation.cos() * azimuth.cos(),
            radius * elevation.cos() * azimuth.sin(),
            radius * elevation.sin(),
        ];
        Self::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], fov)
    }

    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], fov: f64) -> Self {
        let forward = normalize(sub(target, eye));
        let right = normalize(cross(forward, up));
        let down = cross(forward, right);
        let rows = [right, down, forward];
        let mut rt = [[0.0; 4]; 3];
        for (i, row) in rows.iter().enumerate() {
            rt[i][..3].copy_from_slice(row);
            rt[i][3] = -dot(*row, eye);
        }
        CameraMeta { fov, rt }
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in self.rt.iter().enumerate() {
            r[i].copy_from_slice(&row[..3]);
        }
        r
    }

    /// Camera centre in world coordinates, `−Rᵀ t`.
    pub fn position(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for row in &self.rt {
            for (axis, value) in c.iter_mut().enumerate() {
                *value -= row[axis] * row[3];
            }
        }
        c
    }

    /// Azimuth of the camera centre in degrees, in `[0, 360)`.
    pub fn azimuth_degrees(&self) -> f64 {
        let c = self.position();
        c[1].atan2(c[0]).to_degrees().rem_euclid(360.0)
    }

    pub fn elevation_degrees(&self) -> f64 {
        let c = self.position();
        (c[2] / dot(c, c).sqrt()).asin().to_degrees()
    }

    /// Largest absolute deviation of `R Rᵀ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation();
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(r[i], r[j]) - expected).abs());
            }
        }
        worst
    }

    pub fn validate(&self, view_id: u32) -> Result<(), RenderError> {
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(RenderError::InvalidFov {
                view_id,
                fov: self.fov,
            });
        }
        if self.rt.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RenderError::NonOrthonormal {
                view_id,
                deviation: f64::INFINITY,
            });
        }
        let deviation = self.orthonormality_error();
        if deviation > ROTATION_TOLERANCE {
            return Err(RenderError::NonOrthonormal { view_id, deviation });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_is_orthonormal_and_recovers_pose() {
        for az in [0.0, 45.0, 137.0, 300.0f64] {
            for el in [-30.0, 0.0, 20.0, 60.0f64] {
                let cam = CameraMeta::orbit(az.to_radians(), el.to_radians(), 2.0, 0.7);
                cam.validate(1).unwrap();
                assert!((cam.azimuth_degrees() - az).abs() < 1e-9);
                assert!((cam.elevation_degrees() - el).abs() < 1e-9);
                let c = cam.position();
                assert!((dot(c, c).sqrt() - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn camera_looks_at_origin() {
        let cam = CameraMeta::orbit(0.3, 0.2, 3.0, 0.7);
        // origin maps onto the optical axis at depth = radius
        let p: Vec<f64> = cam.rt.iter().map(|row| row[3]).collect();
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        assert!((p[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_cameras() {
        let mut cam = CameraMeta::orbit(0.0, 0.0, 2.0, 0.7);
        cam.rt[0][0] += 0.01;
        assert!(matches!(cam.validate(3), Err(RenderError::NonOrthonormal { view_id: 3, .. })));
        let mut cam = CameraMeta::orbit(0.0, 0.0, 2.0, 0.7);
        cam.fov = PI;
        assert!(matches!(cam.validate(4), Err(RenderError::InvalidFov { .. })));
    }
}
