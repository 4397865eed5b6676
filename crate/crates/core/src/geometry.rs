//! Pinhole ray casting and ray/point distances.
//!
//! Camera frame follows image conventions: x right, y down, z along the
//! optical axis. World and ego-body frames are right-handed with z up; the
//! body frame has x forward and y to the left.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

/// Tolerance used for unit norms and orthonormality checks.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    FrontMedium,
    FrontTele,
    FrontWide,
}

impl CameraId {
    pub const ALL: [CameraId; 3] = [CameraId::FrontMedium, CameraId::FrontTele, CameraId::FrontWide];

    pub fn as_str(self) -> &'static str {
        match self {
            CameraId::FrontMedium => "front_medium",
            CameraId::FrontTele => "front_tele",
            CameraId::FrontWide => "front_wide",
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(CameraId::as_str).join(", ")
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CameraId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Accept the hyphenated spelling as well.
        let normalized = s.replace('-', "_");
        CameraId::ALL
            .into_iter()
            .find(|id| id.as_str() == normalized)
            .ok_or_else(|| Error::UnknownCamera {
                id: s.to_string(),
                valid: CameraId::valid_ids(),
            })
    }
}

/// Rotation followed by translation: `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about world z by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation }
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }
}

/// Pinhole camera with extrinsics. `rotation` maps camera-frame vectors into
/// the parent frame and `origin` is the camera center in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera", into = "RawCamera")]
pub struct CameraModel {
    pub id: CameraId,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Matrix3<f64>,
    pub origin: Point3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCamera {
    id: CameraId,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major.
    rotation: [[f64; 3]; 3],
    origin: [f64; 3],
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = Error;

    fn try_from(raw: RawCamera) -> Result<Self> {
        let r = raw.rotation;
        CameraModel::new(
            raw.id,
            raw.fx,
            raw.fy,
            raw.cx,
            raw.cy,
            raw.width,
            raw.height,
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(raw.origin),
        )
    }
}

impl From<CameraModel> for RawCamera {
    fn from(cam: CameraModel) -> Self {
        let m = cam.rotation;
        RawCamera {
            id: cam.id,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            origin: [cam.origin.x, cam.origin.y, cam.origin.z],
        }
    }
}

/// Camera-to-body rotation for a camera looking along body +x with no pitch.
pub fn forward_facing_rotation() -> Matrix3<f64> {
    // columns: camera x (right), camera y (down), camera z (forward)
    Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: CameraId,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        origin: Point3,
    ) -> Result<Self> {
        if !(fx > 0.0 && fx.is_finite()) || !(fy > 0.0 && fy.is_finite()) {
            return Err(Error::invalid(
                format!("camera {id} focal length"),
                format!("fx={fx}, fy={fy}; both must be positive"),
            ));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid(
                format!("camera {id} principal point"),
                format!("({cx}, {cy}) not inside {width}x{height}"),
            ));
        }
        check_rotation(&rotation).map_err(|reason| Error::invalid(format!("camera {id} rotation"), reason))?;
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("camera {id} origin"), "non-finite coordinate"));
        }
        Ok(Self {
            id,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            origin,
        })
    }

    /// Builds intrinsics from full horizontal/vertical fields of view in
    /// degrees, with the principal point at the image center.
    pub fn from_fov(
        id: CameraId,
        hfov_deg: f64,
        vfov_deg: f64,
        width: u32,
        height: u32,
        rotation: Matrix3<f64>,
        origin: Point3,
    ) -> Result<Self> {
        let cx = width as f64 / 2.0;
        let cy = height as f64 / 2.0;
        let fx = cx / (hfov_deg.to_radians() / 2.0).tan();
        let fy = cy / (vfov_deg.to_radians() / 2.0).tan();
        Self::new(id, fx, fy, cx, cy, width, height, rotation, origin)
    }

    /// Re-expresses a body-mounted camera in the frame `parent` maps into.
    pub fn placed(&self, parent: &RigidTransform) -> CameraModel {
        CameraModel {
            rotation: parent.rotation * self.rotation,
            origin: parent.apply_point(&self.origin),
            ..self.clone()
        }
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        (0.0..self.width as f64).contains(&pixel.x) && (0.0..self.height as f64).contains(&pixel.y)
    }

    /// World point to (pixel, depth). `None` when the point is not in front of
    /// the camera. The pixel may fall outside the frame.
    pub fn project(&self, point: &Point3) -> Option<(Vector2<f64>, f64)> {
        let pc = self.rotation.transpose() * (point - self.origin);
        if pc.z <= 0.0 {
            return None;
        }
        let px = Vector2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy);
        Some((px, pc.z))
    }
}

fn check_rotation(r: &Matrix3<f64>) -> std::result::Result<(), String> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err("non-finite entry".into());
    }
    let gram = r.transpose() * r;
    let worst = (gram - Matrix3::identity()).abs().max();
    if worst > UNIT_TOLERANCE {
        return Err(format!("not orthonormal (max |R^T R - I| = {worst:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > UNIT_TOLERANCE {
        return Err(format!("determinant {det} != +1"));
    }
    Ok(())
}

/// Half-line `origin + t * direction`, `t >= 0`, with unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    origin: Point3,
    direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3, direction: Vector3<f64>) -> Result<Self> {
        let norm = direction.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid("ray direction", format!("norm {norm} is not 1")));
        }
        Ok(Self { origin, direction })
    }

    pub fn origin(&self) -> &Point3 {
        &self.origin
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }
}

/// Casts the ray through `pixel` (rectified image coordinates).
pub fn pixel_ray(camera: &CameraModel, pixel: &Vector2<f64>) -> Result<Ray> {
    if !camera.contains_pixel(pixel) {
        return Err(Error::PixelOutOfFrame {
            x: pixel.x,
            y: pixel.y,
            width: camera.width,
            height: camera.height,
        });
    }
    let local = Vector3::new((pixel.x - camera.cx) / camera.fx, (pixel.y - camera.cy) / camera.fy, 1.0);
    let direction = camera.rotation * local.normalize();
    // R is orthonormal only up to 1e-9, renormalize to keep the unit invariant tight.
    Ok(Ray {
        origin: camera.origin,
        direction: direction.normalize(),
    })
}

/// Distance from `point` to the closest point of the half-line.
pub fn ray_point_distance(ray: &Ray, point: &Point3) -> f64 {
    let offset = point - ray.origin;
    let t = offset.dot(&ray.direction).max(0.0);
    (offset - ray.direction * t).norm()
}

/// Midpoint of an `[x1, y1, x2, y2]` box.
pub fn bbox_center(bbox: &[f64; 4]) -> Vector2<f64> {
    Vector2::new((bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0)
}
