//! Coordinate frames, pinhole projection and synthetic focal plane construction.
//!
//! World frame is right-handed with x east, y north, z up and the ground at
//! `z = 0`. Cameras look along their +z axis with +x right and +y down in the
//! image, so a nadir camera maps camera x to world +x, camera y to world -y and
//! camera z to world -z.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Camera-to-world rotation.
pub type Rotation = UnitQuaternion<f64>;

/// Points closer than this to the image plane (camera frame z) do not project.
pub const MIN_DEPTH: f64 = 1e-6;

const PARALLEL_EPS: f64 = 1e-9;

/// Tolerance on |q| - 1 accepted when building a rotation from raw components.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

/// Builds a rotation from `(w, x, y, z)`, renormalizing small deviations and
/// rejecting anything further than [`QUATERNION_NORM_TOL`] from unit length.
pub fn rotation_from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Rotation> {
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOL {
        return Err(Error::invalid(format!(
            "quaternion norm {norm} is not within {QUATERNION_NORM_TOL} of 1"
        )));
    }
    Ok(UnitQuaternion::from_quaternion(q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Rotation,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: Rotation) -> Self {
        Self { position, rotation }
    }

    /// Downward-looking camera, image +x along world +x and image +y along world -y.
    pub fn nadir(position: Vec3) -> Self {
        Self {
            position,
            rotation: nadir_rotation(),
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.position))
    }
}

/// Rotation by pi about world x: `(w, x, y, z) = (0, 1, 0, 0)`.
pub fn nadir_rotation() -> Rotation {
    UnitQuaternion::from_quaternion(Quaternion::new(0.0, 1.0, 0.0, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
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

    /// Principal point at the image center, equal focal lengths.
    pub fn centered(focal: f64, width: u32, height: u32) -> Result<Self> {
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
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }
}

/// Synthetic focal plane parameters: distance `d` below the SAP origin and
/// tilt `theta` toward azimuth `phi` (measured from world +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfpParams {
    pub d: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SfpParams {
    pub const DEFAULT_THETA_BOUND: f64 = FRAC_PI_4;

    pub fn new(d: f64, theta: f64, phi: f64) -> Result<Self> {
        Self::with_theta_bound(d, theta, phi, Self::DEFAULT_THETA_BOUND)
    }

    /// Validates `d > 0` and `|theta| <= theta_bound`; `phi` is wrapped into `[-pi, pi)`.
    pub fn with_theta_bound(d: f64, theta: f64, phi: f64, theta_bound: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("SFP distance must be positive, got {d}")));
        }
        if !theta.is_finite() || theta.abs() > theta_bound {
            return Err(Error::invalid(format!(
                "SFP tilt {theta} rad exceeds bound {theta_bound} rad"
            )));
        }
        if !phi.is_finite() {
            return Err(Error::invalid("SFP azimuth must be finite"));
        }
        Ok(Self {
            d,
            theta,
            phi: wrap_angle(phi),
        })
    }

    /// Horizontal plane at distance `d`.
    pub fn level(d: f64) -> Result<Self> {
        Self::new(d, 0.0, 0.0)
    }

    pub fn from_degrees(d: f64, theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(d, theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// Tilt as a 2-vector `(theta cos phi, theta sin phi)`; well defined at zero tilt
    /// where `phi` alone is not.
    pub fn tilt_vector(&self) -> [f64; 2] {
        [self.theta * self.phi.cos(), self.theta * self.phi.sin()]
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        -PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Geometry("plane normal must be non-zero".into()));
        }
        Ok(Self {
            point,
            normal: normal / n,
        })
    }

    /// Orthonormal in-plane axes `(ex, ey)`: `ex` is world +x projected into the
    /// plane and `ey = normal x ex`. For a level plane these are world +x and +y.
    pub fn in_plane_axes(&self) -> (Vec3, Vec3) {
        let x = Vec3::x();
        let ex = (x - self.normal * x.dot(&self.normal)).normalize();
        let ey = self.normal.cross(&ex);
        (ex, ey)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

pub fn sfp_normal(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

pub fn sfp_plane(params: &SfpParams, sap_origin: &Vec3) -> Plane {
    Plane {
        point: sap_origin - Vec3::z() * params.d,
        normal: sfp_normal(params.theta, params.phi),
    }
}

/// Projects a world point; `None` when it lies behind (or on) the camera.
/// The returned pixel may fall outside the image.
#[inline]
pub fn project(pose: &CameraPose, intr: &Intrinsics, p: &Vec3) -> Option<(f64, f64)> {
    project_camera_point(intr, &pose.world_to_camera(p))
}

#[inline]
pub fn project_camera_point(intr: &Intrinsics, pc: &Vec3) -> Option<(f64, f64)> {
    if pc.z <= MIN_DEPTH {
        return None;
    }
    Some((
        intr.fx * pc.x / pc.z + intr.cx,
        intr.fy * pc.y / pc.z + intr.cy,
    ))
}

/// Unit-direction ray through pixel `(u, v)`, starting at the camera center.
pub fn pixel_ray(pose: &CameraPose, intr: &Intrinsics, u: f64, v: f64) -> (Vec3, Vec3) {
    let dc = Vec3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let dir = (pose.rotation * dc).normalize();
    (pose.position, dir)
}

pub fn intersect_ray_plane(origin: &Vec3, direction: &Vec3, plane: &Plane) -> Option<(Vec3, f64)> {
    let denom = direction.dot(&plane.normal);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (plane.point - origin).dot(&plane.normal) / denom;
    if t <= 0.0 || !t.is_finite() {
        return None;
    }
    Some((origin + direction * t, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics::new(400.0, 400.0, 256.0, 256.0, 512, 512).unwrap()
    }

    fn nadir30() -> CameraPose {
        CameraPose::nadir(Vec3::new(0.0, 0.0, 30.0))
    }

    #[test]
    fn level_plane_at_ground() {
        let p = sfp_plane(&SfpParams::new(30.0, 0.0, 0.0).unwrap(), &Vec3::new(0.0, 0.0, 30.0));
        assert_eq!(p.point, Vec3::zeros());
        assert_abs_diff_eq!(p.normal, Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn tilted_plane() {
        let params = SfpParams::new(25.0, PI / 6.0, 0.0).unwrap();
        let p = sfp_plane(&params, &Vec3::new(0.0, 0.0, 30.0));
        assert_abs_diff_eq!(p.point, Vec3::new(0.0, 0.0, 5.0), epsilon = 1e-12);
        assert_abs_diff_eq!(
            p.normal,
            Vec3::new(0.5, 0.0, 3f64.sqrt() / 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn tilt_beyond_bound_rejected() {
        assert!(SfpParams::new(30.0, PI / 2.0 - 1e-3, 0.0).is_err());
        assert!(SfpParams::new(30.0, -0.8, 0.0).is_err());
        assert!(SfpParams::new(0.0, 0.0, 0.0).is_err());
        assert!(SfpParams::with_theta_bound(30.0, 1.0, 0.0, 1.2).is_ok());
    }

    #[test]
    fn phi_wraps_into_half_open_range() {
        assert_abs_diff_eq!(SfpParams::new(1.0, 0.1, PI).unwrap().phi, -PI);
        assert_abs_diff_eq!(
            SfpParams::new(1.0, 0.1, 3.0 * PI / 2.0).unwrap().phi,
            -PI / 2.0,
            epsilon = 1e-12
        );
        assert!(wrap_angle(-PI) == -PI);
    }

    #[test]
    fn projection_examples() {
        let (u, v) = project(&nadir30(), &intr(), &Vec3::zeros()).unwrap();
        assert_abs_diff_eq!(u, 256.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 256.0, epsilon = 1e-12);

        let (u, v) = project(&nadir30(), &intr(), &Vec3::new(3.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(u, 296.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 256.0, epsilon = 1e-12);

        assert!(project(&nadir30(), &intr(), &Vec3::new(0.0, 0.0, 31.0)).is_none());
    }

    #[test]
    fn world_north_is_image_up_for_nadir() {
        let (_, v) = project(&nadir30(), &intr(), &Vec3::new(0.0, 3.0, 0.0)).unwrap();
        assert!(v < 256.0);
    }

    #[test]
    fn pixel_ray_examples() {
        let (o, d) = pixel_ray(&nadir30(), &intr(), 256.0, 256.0);
        assert_eq!(o, Vec3::new(0.0, 0.0, 30.0));
        assert_abs_diff_eq!(d, -Vec3::z(), epsilon = 1e-15);

        let (_, d) = pixel_ray(&nadir30(), &intr(), 656.0, 256.0);
        let expected = Vec3::new(1.0, 0.0, -1.0) / 2f64.sqrt();
        assert_abs_diff_eq!(d, expected, epsilon = 1e-15);
    }

    #[test]
    fn ray_plane_examples() {
        let ground = Plane::new(Vec3::zeros(), Vec3::z()).unwrap();
        let o = Vec3::new(0.0, 0.0, 30.0);
        let (p, t) = intersect_ray_plane(&o, &-Vec3::z(), &ground).unwrap();
        assert_abs_diff_eq!(p, Vec3::zeros());
        assert_abs_diff_eq!(t, 30.0);
        assert!(intersect_ray_plane(&o, &Vec3::x(), &ground).is_none());
        assert!(intersect_ray_plane(&o, &Vec3::z(), &ground).is_none());
    }

    #[test]
    fn normal_derivative_matches_finite_difference() {
        let h = 1e-6;
        for &(theta, phi) in &[(0.0, 0.0), (0.3, 1.0), (-0.5, -2.5), (0.7, 3.0)] {
            let fd = (sfp_normal(theta + h, phi) - sfp_normal(theta - h, phi)) / (2.0 * h);
            let (st, ct) = f64::sin_cos(theta);
            let analytic = Vec3::new(ct * phi.cos(), ct * phi.sin(), -st);
            assert_abs_diff_eq!(fd, analytic, epsilon = 1e-6);
            assert_abs_diff_eq!(sfp_normal(theta, phi).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn level_plane_axes_are_world_axes() {
        for phi in [-3.0, -1.0, 0.0, 2.0] {
            let plane = sfp_plane(&SfpParams::new(30.0, 0.0, phi).unwrap(), &Vec3::zeros());
            let (ex, ey) = plane.in_plane_axes();
            assert_eq!(ex, Vec3::x());
            assert_eq!(ey, Vec3::y());
        }
    }

    #[test]
    fn quaternion_norm_checks() {
        assert!(rotation_from_wxyz(0.0, 1.0, 0.0, 0.0).is_ok());
        assert!(rotation_from_wxyz(0.0, 1.0 + 5e-7, 0.0, 0.0).is_ok());
        assert!(rotation_from_wxyz(0.0, 0.9, 0.0, 0.0).is_err());
        assert!(rotation_from_wxyz(f64::NAN, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (
            -20.0..20.0f64,
            -20.0..20.0f64,
            10.0..50.0f64,
            -0.3..0.3f64,
            -0.3..0.3f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, rx, ry, rz)| {
                let tilt = UnitQuaternion::from_euler_angles(rx, ry, rz);
                CameraPose::new(Vec3::new(x, y, z), tilt * nadir_rotation())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pixel_ray_round_trips(pose in arb_pose(), u in 0.0..511.0f64, v in 0.0..511.0f64, depth in 1.0..100.0f64) {
            let (o, d) = pixel_ray(&pose, &intr(), u, v);
            let (pu, pv) = project(&pose, &intr(), &(o + d * depth)).unwrap();
            prop_assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }

        #[test]
        fn intersection_lies_on_plane(
            ox in -10.0..10.0f64, oy in -10.0..10.0f64, oz in 5.0..40.0f64,
            dx in -0.5..0.5f64, dy in -0.5..0.5f64,
            theta in -0.7..0.7f64, phi in -PI..PI, d in 1.0..30.0f64,
        ) {
            let plane = sfp_plane(&SfpParams::new(d, theta, phi).unwrap(), &Vec3::new(0.0, 0.0, 40.0));
            let dir = Vec3::new(dx, dy, -1.0).normalize();
            if let Some((p, _)) = intersect_ray_plane(&Vec3::new(ox, oy, oz), &dir, &plane) {
                prop_assert!(plane.signed_distance(&p).abs() < 1e-9);
            }
        }
    }
}
