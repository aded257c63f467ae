//! Vectors, rotations, pinhole cameras and the orbital view generator.
//!
//! Cameras follow the usual graphics convention: the camera looks down its
//! local −Z axis with +Y up, and [`CameraPose::rotation`] maps camera axes to
//! world axes. Angles cross the public API in degrees.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion as NaUnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type UnitQuaternion = NaUnitQuaternion<f64>;

/// Default orbit radius for models normalized to the unit sphere.
pub const DEFAULT_RADIUS: f64 = 2.0;
/// Default vertical field of view in degrees.
pub const DEFAULT_FOV_Y_DEG: f64 = 49.1;
/// Views per orbit plane in the 48-view layout.
pub const VIEWS_PER_PLANE: usize = 16;

const PARALLEL_TOL_RAD: f64 = 1e-6;
const ORIGIN_TOL_RAD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("eye and target coincide")]
    ZeroLength,
    #[error("up vector is parallel to the view direction")]
    DegenerateAxis,
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("view count must be at least 1")]
    ZeroCount,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("camera pose does not look at the origin (off by {0:.3e} rad)")]
    NotOriginCentered(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Pinhole intrinsics with a centered principal point and square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(fov_y_deg: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let intr = Self { fov_y_deg, width, height, near: 0.01, far: 100.0 };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fov_y_deg {} outside (0, 180)",
                self.fov_y_deg
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image dimension".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "need 0 < near < far, got near {} far {}",
                self.near, self.far
            )));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.height as f64 / (2.0 * (self.fov_y_deg.to_radians() * 0.5).tan())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 * 0.5, self.height as f64 * 0.5)
    }

    /// Same field of view at a different resolution.
    pub fn with_size(&self, width: u32, height: u32) -> Self {
        Self { width, height, ..*self }
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fov_y_deg: DEFAULT_FOV_Y_DEG, width: 512, height: 512, near: 0.01, far: 100.0 }
    }
}

/// Camera extrinsics, camera-to-world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: UnitQuaternion,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: UnitQuaternion) -> Self {
        Self { position, rotation }
    }

    pub fn from_wxyz(position: [f64; 3], q: [f64; 4]) -> Self {
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self { position: Vec3::from(position), rotation }
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Camera-to-world rotation matrix; columns are the camera's right, up and back axes.
    pub fn rotation_matrix(&self) -> Mat3 {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// World-to-camera rotation.
    pub fn view_rotation(&self) -> Mat3 {
        self.rotation_matrix().transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.position))
    }

    /// Unit viewing direction (the camera's −Z axis in world space).
    pub fn forward(&self) -> Vec3 {
        self.rotation * Vec3::new(0.0, 0.0, -1.0)
    }

    pub fn up(&self) -> Vec3 {
        self.rotation * Vec3::new(0.0, 1.0, 0.0)
    }

    pub fn right(&self) -> Vec3 {
        self.rotation * Vec3::new(1.0, 0.0, 0.0)
    }

    /// Angle in radians between the view direction and the ray towards `target`.
    pub fn aim_error(&self, target: &Vec3) -> f64 {
        let to_target = target - self.position;
        let n = to_target.norm();
        if n == 0.0 {
            return std::f64::consts::PI;
        }
        angle_between(&self.forward(), &(to_target / n))
    }
}

/// Robust angle between two vectors (atan2 of cross and dot).
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitPlane {
    XY,
    YZ,
    XZ,
}

impl OrbitPlane {
    pub const ALL: [OrbitPlane; 3] = [OrbitPlane::XY, OrbitPlane::YZ, OrbitPlane::XZ];

    pub fn name(self) -> &'static str {
        match self {
            OrbitPlane::XY => "xy",
            OrbitPlane::YZ => "yz",
            OrbitPlane::XZ => "xz",
        }
    }

    /// Orbit up vector; never parallel to an in-plane view direction.
    pub fn up(self) -> Vec3 {
        match self {
            OrbitPlane::XY => Vec3::z(),
            OrbitPlane::YZ => Vec3::x(),
            OrbitPlane::XZ => Vec3::y(),
        }
    }

    /// Point on the orbit circle at `angle` radians, starting on the plane's first axis.
    pub fn circle_point(self, radius: f64, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        match self {
            OrbitPlane::XY => Vec3::new(radius * c, radius * s, 0.0),
            OrbitPlane::YZ => Vec3::new(0.0, radius * c, radius * s),
            OrbitPlane::XZ => Vec3::new(radius * c, 0.0, radius * s),
        }
    }

    /// Index of the world axis perpendicular to the plane.
    pub fn normal_axis(self) -> usize {
        match self {
            OrbitPlane::XY => 2,
            OrbitPlane::YZ => 0,
            OrbitPlane::XZ => 1,
        }
    }
}

impl fmt::Display for OrbitPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OrbitPlane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(OrbitPlane::XY),
            "yz" => Ok(OrbitPlane::YZ),
            "xz" => Ok(OrbitPlane::XZ),
            other => Err(format!("unknown orbit plane '{other}'")),
        }
    }
}

/// Spherical offset between two origin-centered cameras, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativePose {
    pub delta_elevation_deg: f64,
    pub delta_azimuth_deg: f64,
    pub delta_radius: f64,
}

/// Origin-centered spherical coordinates: elevation above the XY plane and
/// azimuth in the XY plane from +X, both in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spherical {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub radius: f64,
}

impl Spherical {
    pub fn from_position(p: &Vec3) -> Self {
        let radius = p.norm();
        if radius == 0.0 {
            return Self { elevation_deg: 0.0, azimuth_deg: 0.0, radius };
        }
        let elevation_deg = (p.z / radius).clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth_deg = p.y.atan2(p.x).to_degrees();
        Self { elevation_deg, azimuth_deg, radius }
    }

    pub fn to_position(&self) -> Vec3 {
        let el = self.elevation_deg.to_radians();
        let az = self.azimuth_deg.to_radians();
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * self.radius
    }

    /// Unit direction of increasing elevation; equals +Z on the equator.
    pub fn north_tangent(&self) -> Vec3 {
        let el = self.elevation_deg.to_radians();
        let az = self.azimuth_deg.to_radians();
        Vec3::new(-el.sin() * az.cos(), -el.sin() * az.sin(), el.cos())
    }
}

/// Wraps an angle in degrees into (−180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<CameraPose, GeometryError> {
    let view = target - eye;
    let dist = view.norm();
    if dist <= 1e-9 {
        return Err(GeometryError::ZeroLength);
    }
    let forward = view / dist;
    let up_norm = up.norm();
    if up_norm == 0.0 || angle_between(&forward, &(up / up_norm)).sin().abs() < PARALLEL_TOL_RAD.sin()
    {
        return Err(GeometryError::DegenerateAxis);
    }
    let back = -forward;
    let right = up.cross(&back).normalize();
    let true_up = back.cross(&right);
    let m = Mat3::from_columns(&[right, true_up, back]);
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Ok(CameraPose { position: eye, rotation })
}

/// A generated view with its orbit bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitView {
    pub plane: OrbitPlane,
    pub index: usize,
    pub angle_deg: f64,
    pub pose: CameraPose,
}

pub fn generate_orbit_views(
    plane: OrbitPlane,
    radius: f64,
    count: usize,
) -> Result<Vec<OrbitView>, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::NonPositiveRadius(radius));
    }
    if count == 0 {
        return Err(GeometryError::ZeroCount);
    }
    let step = 360.0 / count as f64;
    (0..count)
        .map(|index| {
            let angle_deg = step * index as f64;
            let eye = plane.circle_point(radius, angle_deg.to_radians());
            let pose = look_at(eye, Vec3::zeros(), plane.up())?;
            Ok(OrbitView { plane, index, angle_deg, pose })
        })
        .collect()
}

pub fn generate_orbit_poses(
    plane: OrbitPlane,
    radius: f64,
    count: usize,
) -> Result<Vec<CameraPose>, GeometryError> {
    Ok(generate_orbit_views(plane, radius, count)?.into_iter().map(|v| v.pose).collect())
}

/// The 48-view layout: XY, YZ, XZ orbits of 16 views each, plane-major.
pub fn generate_paper_views(radius: f64) -> Result<Vec<OrbitView>, GeometryError> {
    let mut views = Vec::with_capacity(3 * VIEWS_PER_PLANE);
    for plane in OrbitPlane::ALL {
        views.extend(generate_orbit_views(plane, radius, VIEWS_PER_PLANE)?);
    }
    Ok(views)
}

pub fn generate_paper_poses(radius: f64) -> Result<Vec<CameraPose>, GeometryError> {
    Ok(generate_paper_views(radius)?.into_iter().map(|v| v.pose).collect())
}

/// Pinhole projection to pixel coordinates (origin at the top-left image
/// corner, v pointing down) plus depth along the view axis.
pub fn project_point(
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    p: &Vec3,
) -> Result<(f64, f64, f64), GeometryError> {
    let c = pose.world_to_camera(p);
    let depth = -c.z;
    if depth <= 0.0 {
        return Err(GeometryError::BehindCamera(depth));
    }
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    Ok((cx + f * c.x / depth, cy - f * c.y / depth, depth))
}

fn check_origin_centered(pose: &CameraPose) -> Result<(), GeometryError> {
    let err = pose.aim_error(&Vec3::zeros());
    if err > ORIGIN_TOL_RAD {
        return Err(GeometryError::NotOriginCentered(err));
    }
    Ok(())
}

pub fn relative_spherical(
    reference: &CameraPose,
    target: &CameraPose,
) -> Result<RelativePose, GeometryError> {
    check_origin_centered(reference)?;
    check_origin_centered(target)?;
    let a = Spherical::from_position(&reference.position);
    let b = Spherical::from_position(&target.position);
    Ok(RelativePose {
        delta_elevation_deg: b.elevation_deg - a.elevation_deg,
        delta_azimuth_deg: wrap_degrees(b.azimuth_deg - a.azimuth_deg),
        delta_radius: b.radius - a.radius,
    })
}

/// Builds the origin-looking camera at `reference` offset by `rel`.
///
/// The camera's up vector is the local direction of increasing elevation, so
/// equatorial cameras keep +Z up and the poles stay well defined. Elevation is
/// clamped to [−90, 90].
pub fn pose_from_relative(
    reference: &CameraPose,
    rel: &RelativePose,
) -> Result<CameraPose, GeometryError> {
    let base = Spherical::from_position(&reference.position);
    let sph = Spherical {
        elevation_deg: (base.elevation_deg + rel.delta_elevation_deg).clamp(-90.0, 90.0),
        azimuth_deg: base.azimuth_deg + rel.delta_azimuth_deg,
        radius: base.radius + rel.delta_radius,
    };
    pose_from_spherical(&sph)
}

pub fn pose_from_spherical(sph: &Spherical) -> Result<CameraPose, GeometryError> {
    if !(sph.radius > 0.0) {
        return Err(GeometryError::NonPositiveRadius(sph.radius));
    }
    look_at(sph.to_position(), Vec3::zeros(), sph.north_tangent())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    #[test]
    fn look_at_canonical_frame_is_identity() {
        let pose = look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
        let q = pose.quaternion_wxyz();
        assert_close!(q[0].abs(), 1.0, 1e-12);
        assert_close!(q[1], 0.0, 1e-12);
        assert_close!(q[2], 0.0, 1e-12);
        assert_close!(q[3], 0.0, 1e-12);
    }

    #[test]
    fn look_at_from_plus_x() {
        let pose = look_at(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::y()).unwrap();
        let f = pose.forward();
        assert!((f - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        // +Y stays up, right-handed frame gives right = -Z
        assert!((pose.up() - Vec3::y()).norm() < 1e-12);
        assert!((pose.right() - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn look_at_errors() {
        assert_eq!(
            look_at(Vec3::new(0.0, 2.0, 0.0), Vec3::zeros(), Vec3::y()),
            Err(GeometryError::DegenerateAxis)
        );
        assert_eq!(look_at(Vec3::zeros(), Vec3::zeros(), Vec3::y()), Err(GeometryError::ZeroLength));
    }

    #[test]
    fn orbit_single_view_and_quarter_turns() {
        let one = generate_orbit_poses(OrbitPlane::XZ, 2.0, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[0].position - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(one[0].aim_error(&Vec3::zeros()) < 1e-9);

        let four = generate_orbit_poses(OrbitPlane::YZ, 2.0, 4).unwrap();
        for i in 0..4 {
            let a = four[i].position.normalize();
            let b = four[(i + 1) % 4].position.normalize();
            assert_close!(a.dot(&b), 0.0, 1e-9);
        }
        assert!((four[0].position - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn orbit_rejects_bad_arguments() {
        assert!(matches!(
            generate_orbit_poses(OrbitPlane::XY, 0.0, 4),
            Err(GeometryError::NonPositiveRadius(_))
        ));
        assert_eq!(generate_orbit_poses(OrbitPlane::XY, 1.0, 0), Err(GeometryError::ZeroCount));
        assert!(generate_paper_poses(-1.0).is_err());
    }

    #[test]
    fn orbit_layout_has_48_planar_views() {
        let views = generate_paper_views(2.0).unwrap();
        assert_eq!(views.len(), 48);
        for (k, plane) in OrbitPlane::ALL.iter().enumerate() {
            let chunk = &views[k * 16..(k + 1) * 16];
            for (i, v) in chunk.iter().enumerate() {
                assert_eq!(v.plane, *plane);
                assert_eq!(v.index, i);
                assert!(v.pose.position[plane.normal_axis()].abs() < 1e-9);
                assert_close!(v.pose.position.norm(), 2.0, 1e-12);
                let next = &chunk[(i + 1) % 16];
                let ang = angle_between(&v.pose.position, &next.pose.position).to_degrees();
                assert_close!(ang, 22.5, 1e-9);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let intr = CameraIntrinsics::new(49.1, 256, 256).unwrap();
        let pose = look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
        let (u, v, d) = project_point(&intr, &pose, &Vec3::zeros()).unwrap();
        assert_close!(u, 128.0, 1e-9);
        assert_close!(v, 128.0, 1e-9);
        assert_close!(d, 2.0, 1e-12);

        let edge = Vec3::new((24.55f64).to_radians().tan() * 2.0, 0.0, 0.0);
        let (u, _, _) = project_point(&intr, &pose, &edge).unwrap();
        assert_close!(u, 256.0, 0.5);

        let behind = Vec3::new(0.0, 0.0, 3.0);
        assert!(matches!(
            project_point(&intr, &pose, &behind),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn projection_v_axis_points_down() {
        let intr = CameraIntrinsics::new(49.1, 256, 256).unwrap();
        let pose = look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y()).unwrap();
        let (_, v, _) = project_point(&intr, &pose, &Vec3::new(0.0, 0.2, 0.0)).unwrap();
        assert!(v < 128.0);
    }

    #[test]
    fn relative_pose_examples() {
        let views = generate_orbit_poses(OrbitPlane::XY, 2.0, 16).unwrap();
        let rel = relative_spherical(&views[0], &views[0]).unwrap();
        assert_eq!(rel, RelativePose::default());
        let rel = relative_spherical(&views[0], &views[1]).unwrap();
        assert_close!(rel.delta_azimuth_deg, 22.5, 1e-9);
        assert_close!(rel.delta_elevation_deg, 0.0, 1e-9);
        assert_close!(rel.delta_radius, 0.0, 1e-12);

        let at = |az: f64| {
            pose_from_spherical(&Spherical { elevation_deg: 0.0, azimuth_deg: az, radius: 2.0 })
                .unwrap()
        };
        let rel = relative_spherical(&at(170.0), &at(-170.0)).unwrap();
        assert_close!(rel.delta_azimuth_deg, 20.0, 1e-9);
    }

    #[test]
    fn relative_pose_rejects_off_center_camera() {
        let good = look_at(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::z()).unwrap();
        let bad = look_at(Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 0.5, 0.0), Vec3::z()).unwrap();
        assert!(matches!(
            relative_spherical(&good, &bad),
            Err(GeometryError::NotOriginCentered(_))
        ));
    }

    #[test]
    fn pose_from_relative_roundtrip() {
        let reference = look_at(Vec3::new(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::z()).unwrap();
        let rel = RelativePose { delta_elevation_deg: 20.0, delta_azimuth_deg: -45.0, delta_radius: 0.5 };
        let p = pose_from_relative(&reference, &rel).unwrap();
        let back = relative_spherical(&reference, &p).unwrap();
        assert_close!(back.delta_elevation_deg, 20.0, 1e-9);
        assert_close!(back.delta_azimuth_deg, -45.0, 1e-9);
        assert_close!(back.delta_radius, 0.5, 1e-12);
        // zero offset reproduces the equatorial reference exactly
        let same = pose_from_relative(&reference, &RelativePose::default()).unwrap();
        assert!((same.rotation_matrix() - reference.rotation_matrix()).norm() < 1e-12);
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_close!(wrap_degrees(-340.0), 20.0, 1e-12);
        assert_close!(wrap_degrees(725.0), 5.0, 1e-12);
    }
}
