//! Pinhole camera model used for depth back-projection and voxel-center
//! projection.
//!
//! `rotation` maps camera coordinates to world coordinates and `translation`
//! is the camera position in world coordinates, so a camera-space point `q`
//! sits at `R * q + t` in the world. The optical axis is camera +z; a pixel
//! `(u, v)` at depth `d` back-projects to camera coordinates
//! `((u - cx) * d / fx, (v - cy) * d / fy, d)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-from-camera rotation, row major.
    pub rotation: [[f64; 3]; 3],
    /// Camera position in world coordinates, meters.
    pub translation: [f64; 3],
    /// Image size as (height, width) in pixels.
    pub image_size: (usize, usize),
}

const ORTHO_TOL: f64 = 1e-6;

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        image_size: (usize, usize),
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        // R^T R = I within tolerance
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHO_TOL {
                    return Err(Error::Domain(format!(
                        "rotation is not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = determinant(&rotation);
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Domain(format!(
                "rotation determinant must be +1, got {det}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            image_size,
        })
    }

    /// Identity-orientation camera at `position` looking along world +z.
    pub fn axis_aligned(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        position: [f64; 3],
        image_size: (usize, usize),
    ) -> Result<Self> {
        Self::new(
            fx,
            fy,
            cx,
            cy,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            position,
            image_size,
        )
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        // R^T * d
        [
            self.rotation[0][0] * d[0] + self.rotation[1][0] * d[1] + self.rotation[2][0] * d[2],
            self.rotation[0][1] * d[0] + self.rotation[1][1] * d[1] + self.rotation[2][1] * d[2],
            self.rotation[0][2] * d[0] + self.rotation[1][2] * d[1] + self.rotation[2][2] * d[2],
        ]
    }

    pub fn camera_to_world(&self, q: [f64; 3]) -> [f64; 3] {
        [
            self.rotation[0][0] * q[0]
                + self.rotation[0][1] * q[1]
                + self.rotation[0][2] * q[2]
                + self.translation[0],
            self.rotation[1][0] * q[0]
                + self.rotation[1][1] * q[1]
                + self.rotation[1][2] * q[2]
                + self.translation[1],
            self.rotation[2][0] * q[0]
                + self.rotation[2][1] * q[1]
                + self.rotation[2][2] * q[2]
                + self.translation[2],
        ]
    }

    /// Project a world point to continuous pixel coordinates and camera
    /// depth. `None` when the point is at or behind the camera plane.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let q = self.world_to_camera(p);
        if q[2] <= 0.0 {
            return None;
        }
        let u = self.fx * q[0] / q[2] + self.cx;
        let v = self.fy * q[1] / q[2] + self.cy;
        Some((u, v, q[2]))
    }

    /// Nearest integer pixel for continuous coordinates, `None` off-image.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let (h, w) = self.image_size;
        let ui = u.round();
        let vi = v.round();
        if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
            return None;
        }
        Some((vi as usize, ui as usize))
    }

    /// World point of pixel `(u, v)` observed at camera depth `d`.
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        let q = [
            (u - self.cx) * d / self.fx,
            (v - self.cy) * d / self.fy,
            d,
        ];
        self.camera_to_world(q)
    }

    /// World-space direction of the ray through pixel `(u, v)`, scaled so
    /// that advancing the parameter by 1 advances camera depth by 1 meter.
    pub fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        let q = [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0];
        [
            self.rotation[0][0] * q[0] + self.rotation[0][1] * q[1] + self.rotation[0][2] * q[2],
            self.rotation[1][0] * q[0] + self.rotation[1][1] * q[1] + self.rotation[1][2] * q[2],
            self.rotation[2][0] * q[0] + self.rotation[2][1] * q[1] + self.rotation[2][2] * q[2],
        ]
    }
}

fn determinant(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let r = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(10.0, 10.0, 4.0, 4.0, r, [0.0; 3], (8, 8)).is_err());
    }

    #[test]
    fn rejects_reflections() {
        let r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(CameraModel::new(10.0, 10.0, 4.0, 4.0, r, [0.0; 3], (8, 8)).is_err());
    }

    #[test]
    fn project_back_project_round_trip() {
        let cam = CameraModel::new(
            35.0,
            36.0,
            15.5,
            16.5,
            // rotation about y by 30 degrees
            [
                [0.8660254037844387, 0.0, 0.5],
                [0.0, 1.0, 0.0],
                [-0.5, 0.0, 0.8660254037844387],
            ],
            [0.3, -0.2, -1.0],
            (32, 32),
        )
        .unwrap();
        let p = [0.7, 0.4, 1.9];
        let (u, v, z) = cam.project(p).unwrap();
        let q = cam.back_project(u, v, z);
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_does_not_project() {
        let cam =
            CameraModel::axis_aligned(10.0, 10.0, 4.0, 4.0, [0.0, 0.0, 0.0], (8, 8)).unwrap();
        assert!(cam.project([0.0, 0.0, -1.0]).is_none());
        assert!(cam.project([0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn pixel_ray_matches_back_projection() {
        let cam =
            CameraModel::axis_aligned(20.0, 22.0, 7.5, 8.5, [0.1, 0.2, -0.5], (16, 16)).unwrap();
        let dir = cam.pixel_ray(3.0, 9.0);
        let d = 1.7;
        let along = [
            cam.translation[0] + d * dir[0],
            cam.translation[1] + d * dir[1],
            cam.translation[2] + d * dir[2],
        ];
        let bp = cam.back_project(3.0, 9.0, d);
        for a in 0..3 {
            assert!((along[a] - bp[a]).abs() < 1e-12);
        }
    }
}
