//! Pinhole camera model, poses, Plücker ray maps and rotation distances.
//!
//! Conventions used throughout the crate:
//! - right-handed camera frame, x right, y down, looking down +z;
//! - a pose stores the camera-to-world rotation and the camera centre in world
//!   coordinates, world-to-camera is derived on demand;
//! - rays pass through integer pixel coordinates (no half-pixel offset).

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels, principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.cx, self.cy)
    }

    /// Camera-frame ray direction through `pixel`, scaled so that z = 1.
    pub fn ray_camera(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// Rigid camera pose: camera-to-world rotation plus camera centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    position: Vector3<f64>,
}

/// Largest absolute entry of RᵀR − I.
pub fn orthonormality_deviation(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rotation"));
    }
    let deviation = orthonormality_deviation(r);
    if deviation > ROTATION_TOLERANCE || r.determinant() < 0.0 {
        return Err(Error::NotARotation { deviation });
    }
    Ok(())
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("position"));
        }
        Ok(Self { rotation, position })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            position,
        }
    }

    /// Camera at `eye` looking at `target`. Image "down" is aligned with `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::invalid("look-at target coincides with the eye"));
        }
        let z = forward.normalize();
        let mut x = z.cross(&up);
        if x.norm() < 1e-9 {
            // forward parallel to up: pick any perpendicular axis
            let alt = if z.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::y()
            };
            x = z.cross(&alt);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (point - self.position)
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.position
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 9],
    position: [f64; 3],
}

impl Serialize for CameraPose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = r[(row, col)];
            }
        }
        PoseRepr {
            rotation,
            position: [self.position.x, self.position.y, self.position.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CameraPose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let rotation = Matrix3::from_row_slice(&repr.rotation);
        CameraPose::new(rotation, Vector3::from(repr.position)).map_err(serde::de::Error::custom)
    }
}

fn check_finite3(v: &Vector3<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Projects a world point into pixel coordinates. `Ok(None)` is the
/// out-of-view marker for points at or behind the camera plane.
pub fn project(
    point: &Vector3<f64>,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Option<Vector2<f64>>> {
    check_finite3(point, "point")?;
    Ok(project_camera(&pose.world_to_camera(point), intr))
}

pub(crate) fn project_camera(p: &Vector3<f64>, intr: &CameraIntrinsics) -> Option<Vector2<f64>> {
    if p.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(
        intr.fx * p.x / p.z + intr.cx,
        intr.fy * p.y / p.z + intr.cy,
    ))
}

/// Lifts a pixel at the given camera-frame depth back into world coordinates.
pub fn unproject(
    pixel: Vector2<f64>,
    depth: f64,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vector3<f64>> {
    if !depth.is_finite() || !pixel.x.is_finite() || !pixel.y.is_finite() {
        return Err(Error::NonFinite("unproject input"));
    }
    if depth <= 0.0 {
        return Err(Error::invalid("depth must be positive"));
    }
    if !intr.contains(pixel) {
        return Err(Error::invalid("pixel outside image bounds"));
    }
    Ok(pose.camera_to_world(&(intr.ray_camera(pixel) * depth)))
}

/// Per-pixel ray coordinates `(moment, direction)`, row-major, 6 values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 6]>,
}

impl PluckerMap {
    pub fn at(&self, x: usize, y: usize) -> &[f64; 6] {
        &self.data[y * self.width + x]
    }

    pub fn moment(&self, x: usize, y: usize) -> Vector3<f64> {
        let v = self.at(x, y);
        Vector3::new(v[0], v[1], v[2])
    }

    pub fn direction(&self, x: usize, y: usize) -> Vector3<f64> {
        let v = self.at(x, y);
        Vector3::new(v[3], v[4], v[5])
    }
}

pub fn plucker_embedding(intr: &CameraIntrinsics, pose: &CameraPose) -> Result<PluckerMap> {
    intr.validate()?;
    let origin = pose.position;
    let mut data = Vec::with_capacity(intr.width * intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            let ray = intr.ray_camera(Vector2::new(x as f64, y as f64));
            data.push(plucker_ray(&origin, &(pose.rotation * ray)));
        }
    }
    Ok(PluckerMap {
        width: intr.width,
        height: intr.height,
        data,
    })
}

/// Plücker coordinates of the line through `origin` along `dir`.
pub fn plucker_ray(origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 6] {
    let d = dir.normalize();
    let m = origin.cross(&d);
    [m.x, m.y, m.z, d.x, d.y, d.z]
}

/// Geodesic distance on SO(3), in radians.
pub fn rotation_geodesic(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r1)?;
    check_rotation(r2)?;
    let cos = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    Ok(cos.clamp(-1.0, 1.0).acos())
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn projects_principal_axis_to_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &intr(), &CameraPose::identity())
            .unwrap()
            .unwrap();
        assert_eq!(p, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn projects_offset_point() {
        let p = project(&Vector3::new(0.5, 0.0, 1.0), &intr(), &CameraPose::identity())
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(p, Vector2::new(100.0, 50.0), epsilon = 1e-12);
    }

    #[test]
    fn point_behind_camera_is_out_of_view() {
        let p = project(&Vector3::new(0.0, 0.0, -1.0), &intr(), &CameraPose::identity()).unwrap();
        assert!(p.is_none());
        let p = project(&Vector3::new(1.0, 0.0, 0.0), &intr(), &CameraPose::identity()).unwrap();
        assert!(p.is_none());
    }

    #[test]
    fn rejects_non_finite_point() {
        let err = project(&Vector3::new(f64::NAN, 0.0, 1.0), &intr(), &CameraPose::identity());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn unproject_examples() {
        let pose = CameraPose::identity();
        let x = unproject(Vector2::new(50.0, 50.0), 2.0, &intr(), &pose).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 2.0));
        let x = unproject(Vector2::new(100.0, 50.0), 1.0, &intr(), &pose).unwrap();
        assert_abs_diff_eq!(x, Vector3::new(0.5, 0.0, 1.0), epsilon = 1e-12);
        assert!(unproject(Vector2::new(50.0, 50.0), 0.0, &intr(), &pose).is_err());
        assert!(unproject(Vector2::new(50.0, 50.0), -1.0, &intr(), &pose).is_err());
        assert!(unproject(Vector2::new(500.0, 50.0), 1.0, &intr(), &pose).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn pose_rejects_reflection_and_skew() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraPose::new(reflect, Vector3::zeros()).is_err());
        let mut skew = Matrix3::identity();
        skew[(0, 1)] = 0.01;
        assert!(CameraPose::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_centres_target() {
        let intr = intr();
        let target = Vector3::new(0.3, -1.0, 2.0);
        let pose = CameraPose::look_at(Vector3::new(4.0, 2.0, -3.0), target, Vector3::y()).unwrap();
        let p = project(&target, &intr, &pose).unwrap().unwrap();
        assert_abs_diff_eq!(p, intr.principal_point(), epsilon = 1e-9);
        // degenerate up vector still yields a valid rotation
        let pose = CameraPose::look_at(Vector3::new(0.0, 5.0, 0.0), Vector3::zeros(), Vector3::y())
            .unwrap();
        assert!(orthonormality_deviation(pose.rotation()) < 1e-12);
    }

    #[test]
    fn plucker_at_origin_has_zero_moment() {
        let small = CameraIntrinsics::new(10.0, 10.0, 3.0, 2.0, 7, 5).unwrap();
        let map = plucker_embedding(&small, &CameraPose::identity()).unwrap();
        for v in &map.data {
            assert_eq!(&v[..3], &[0.0, 0.0, 0.0]);
        }
        assert_eq!(map.direction(3, 2), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn plucker_moment_is_cross_product() {
        let small = CameraIntrinsics::new(10.0, 10.0, 3.0, 2.0, 7, 5).unwrap();
        let pose = CameraPose::from_position(Vector3::new(1.0, 0.0, 0.0));
        let map = plucker_embedding(&small, &pose).unwrap();
        // (1,0,0) x (0,0,1) = (0,-1,0)
        assert_abs_diff_eq!(map.moment(3, 2), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn geodesic_examples() {
        let r1 = rot_y(0.4) * rot_x(-1.1);
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r1).unwrap(), 0.0, epsilon = 1e-7);
        let r2 = r1 * rot_z(PI / 6.0);
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r2).unwrap(), PI / 6.0, epsilon = 1e-12);
        let r3 = r1 * rot_x(PI);
        assert_abs_diff_eq!(rotation_geodesic(&r1, &r3).unwrap(), PI, epsilon = 1e-7);
        let bad = Matrix3::identity() * 1.01;
        assert!(matches!(
            rotation_geodesic(&bad, &r1),
            Err(Error::NotARotation { .. })
        ));
    }

    #[test]
    fn pose_json_layout() {
        let pose = CameraPose::new(rot_z(0.5), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let v: serde_json::Value = serde_json::to_value(pose).unwrap();
        let rot = v["rotation"].as_array().unwrap();
        assert_eq!(rot.len(), 9);
        // row-major: element (0,1) = -sin
        assert_abs_diff_eq!(rot[1].as_f64().unwrap(), -(0.5f64).sin(), epsilon = 1e-15);
        assert_eq!(v["position"], serde_json::json!([1.0, 2.0, 3.0]));
        let back: CameraPose = serde_json::from_value(v).unwrap();
        assert_eq!(back, pose);
        let intr: serde_json::Value = serde_json::to_value(intr()).unwrap();
        for key in ["fx", "fy", "cx", "cy", "width", "height"] {
            assert!(intr.get(key).is_some());
        }
    }
}
