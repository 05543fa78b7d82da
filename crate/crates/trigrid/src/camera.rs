//! Orbit camera model (yaw, pitch, radius, look-at origin), per-image
//! residual corrections, pinhole ray generation, and the analytic Jacobians
//! of rays with respect to the residual parameters.
//!
//! Conventions: y is up, yaw 0 puts the camera on the +z axis looking at the
//! origin (frontal), positive pitch raises the camera. Pixel (row, col) has
//! its center at (col + 0.5, row + 0.5) with y down in image space; the
//! principal point sits at (W/2 + cx, H/2 + cy).

use crate::error::{Error, Result};
use crate::math::{add, dot, norm, normalize, scale, sub, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitCamera {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov_y: f64,
    /// Principal-point offset from the image center, in pixels.
    pub cx: f64,
    pub cy: f64,
    pub height: usize,
    pub width: usize,
    pub near: f64,
    pub far: f64,
}

/// Per-image learnable camera correction, applied additively.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraResidual {
    pub d_yaw: f64,
    pub d_pitch: f64,
    pub d_radius: f64,
    pub d_cx: f64,
    pub d_cy: f64,
}

impl CameraResidual {
    pub fn as_array(&self) -> [f64; 5] {
        [self.d_yaw, self.d_pitch, self.d_radius, self.d_cx, self.d_cy]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        CameraResidual {
            d_yaw: a[0],
            d_pitch: a[1],
            d_radius: a[2],
            d_cx: a[3],
            d_cy: a[4],
        }
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

/// d(origin)/d(theta) and d(dir)/d(theta) for the five residual parameters
/// in the order (yaw, pitch, radius, cx, cy).
#[derive(Debug, Clone, Copy, Default)]
pub struct RayJacobian {
    pub d_origin: [Vec3; 5],
    pub d_dir: [Vec3; 5],
}

impl OrbitCamera {
    pub fn new(height: usize, width: usize) -> Self {
        let radius = 2.7;
        OrbitCamera {
            yaw: 0.0,
            pitch: 0.0,
            radius,
            fov_y: 0.7,
            cx: 0.0,
            cy: 0.0,
            height,
            width,
            // encloses the [-1,1]^3 bounds cube (half-diagonal ~1.732) with
            // slack for residual radius corrections
            near: radius - 1.9,
            far: radius + 1.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius <= 0.0 {
            return Err(Error::invalid_state("camera radius must be positive"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid_state("fov_y must be in (0, pi)"));
        }
        if self.near >= self.far {
            return Err(Error::invalid_state("near must be below far"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid_state("image size must be positive"));
        }
        Ok(())
    }

    /// Additive residual application; everything else is unchanged.
    pub fn with_residual(&self, res: &CameraResidual) -> Result<OrbitCamera> {
        let mut cam = *self;
        cam.yaw += res.d_yaw;
        cam.pitch += res.d_pitch;
        cam.radius += res.d_radius;
        cam.cx += res.d_cx;
        cam.cy += res.d_cy;
        if cam.radius <= 0.0 {
            return Err(Error::invalid_state(format!(
                "camera residual drives radius to {} <= 0",
                cam.radius
            )));
        }
        Ok(cam)
    }

    /// Focal length in pixels, derived from the vertical field of view.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    /// Unit vector from the origin toward the camera position.
    fn orbit_axis(&self) -> Vec3 {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        [sy * cp, sp, cy * cp]
    }

    pub fn position(&self) -> Vec3 {
        scale(self.orbit_axis(), self.radius)
    }

    /// Orthonormal camera basis (right, up, forward); forward looks at the
    /// world origin. Valid for |pitch| < pi/2.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = [-sy * cp, -sp, -cy * cp];
        let right = [cy, 0.0, -sy];
        let up = [-sy * sp, cp, -cy * sp];
        (right, up, forward)
    }

    /// Ray through the center of pixel (row, col).
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let (right, up, forward) = self.basis();
        let origin = self.position();
        let focal = self.focal();
        let px = col as f64 + 0.5;
        let py = row as f64 + 0.5;
        let dx = (px - (self.width as f64 * 0.5 + self.cx)) / focal;
        let dy = (self.height as f64 * 0.5 + self.cy - py) / focal;
        let v = add(add(scale(right, dx), scale(up, dy)), forward);
        Ray {
            origin,
            dir: normalize(v),
            t_near: self.near,
            t_far: self.far,
        }
    }

    /// Full-frame ray grid in row-major order.
    pub fn rays(&self) -> Vec<Ray> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.ray(r, c));
            }
        }
        out
    }

    /// Ray plus its derivatives with respect to (yaw, pitch, radius, cx, cy).
    pub fn ray_with_jacobian(&self, row: usize, col: usize) -> (Ray, RayJacobian) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let e = [sy * cp, sp, cy * cp];
        let de_dyaw = [cy * cp, 0.0, -sy * cp];
        let de_dpitch = [-sy * sp, cp, -cy * sp];

        let right = [cy, 0.0, -sy];
        let dright_dyaw = [-sy, 0.0, -cy];
        let up = [-sy * sp, cp, -cy * sp];
        let dup_dyaw = [-cy * sp, 0.0, sy * sp];
        let dup_dpitch = [-sy * cp, -sp, -cy * cp];
        let forward = scale(e, -1.0);
        let dfwd_dyaw = scale(de_dyaw, -1.0);
        let dfwd_dpitch = scale(de_dpitch, -1.0);

        let focal = self.focal();
        let px = col as f64 + 0.5;
        let py = row as f64 + 0.5;
        let dx = (px - (self.width as f64 * 0.5 + self.cx)) / focal;
        let dy = (self.height as f64 * 0.5 + self.cy - py) / focal;

        let v = add(add(scale(right, dx), scale(up, dy)), forward);
        let v_norm = norm(v);
        let dir = scale(v, 1.0 / v_norm);

        // dv/dtheta for each parameter
        let dv = [
            add(
                add(scale(dright_dyaw, dx), scale(dup_dyaw, dy)),
                dfwd_dyaw,
            ),
            add(scale(dup_dpitch, dy), dfwd_dpitch),
            [0.0; 3],
            scale(right, -1.0 / focal),
            scale(up, 1.0 / focal),
        ];
        let mut jac = RayJacobian::default();
        jac.d_origin[0] = scale(de_dyaw, self.radius);
        jac.d_origin[1] = scale(de_dpitch, self.radius);
        jac.d_origin[2] = e;
        // principal offsets do not move the camera center
        for (k, dvk) in dv.iter().enumerate() {
            // d normalize(v) = (I - dir dir^T) dv / |v|
            let proj = dot(dir, *dvk);
            jac.d_dir[k] = scale(sub(*dvk, scale(dir, proj)), 1.0 / v_norm);
        }
        (
            Ray {
                origin: scale(e, self.radius),
                dir,
                t_near: self.near,
                t_far: self.far,
            },
            jac,
        )
    }
}

/// Mean absolute difference between two angles, wrapped to (-pi, pi].
pub fn angle_abs_diff(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % std::f64::consts::TAU;
    if d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    }
    if d < -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    d.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::cross;

    #[test]
    fn zero_residual_is_identity() {
        let cam = OrbitCamera::new(16, 16);
        let same = cam.with_residual(&CameraResidual::default()).unwrap();
        assert_eq!(cam, same);
    }

    #[test]
    fn residual_adds_componentwise() {
        let mut cam = OrbitCamera::new(16, 16);
        cam.yaw = 0.2;
        let res = CameraResidual {
            d_yaw: 0.1,
            ..Default::default()
        };
        let out = cam.with_residual(&res).unwrap();
        assert!((out.yaw - 0.3).abs() < 1e-15);
        assert_eq!(out.pitch, cam.pitch);
        assert_eq!(out.radius, cam.radius);
        assert_eq!(out.cx, cam.cx);
    }

    #[test]
    fn residual_rejects_nonpositive_radius() {
        let cam = OrbitCamera::new(8, 8);
        let res = CameraResidual {
            d_radius: -5.0,
            ..Default::default()
        };
        assert!(cam.with_residual(&res).is_err());
    }

    #[test]
    fn center_ray_points_at_origin() {
        // odd image size so an exact center pixel exists
        let mut cam = OrbitCamera::new(9, 9);
        cam.yaw = 0.7;
        cam.pitch = 0.25;
        let ray = cam.ray(4, 4);
        // origin + radius * dir should land on the world origin
        let hit = add(ray.origin, scale(ray.dir, cam.radius));
        assert!(norm(hit) < 1e-9, "center ray misses origin: {hit:?}");
    }

    #[test]
    fn all_directions_unit_norm() {
        let mut cam = OrbitCamera::new(12, 17);
        cam.yaw = -1.3;
        cam.pitch = -0.2;
        cam.cx = 1.5;
        cam.cy = -2.0;
        for ray in cam.rays() {
            assert!((norm(ray.dir) - 1.0).abs() < 1e-6);
        }
    }

    /// Standalone pinhole oracle built ray-by-ray from generic look-at math;
    /// shares no construction code with OrbitCamera::ray.
    fn oracle_ray(cam: &OrbitCamera, row: usize, col: usize) -> ([f64; 3], [f64; 3]) {
        let pos = [
            cam.radius * cam.yaw.sin() * cam.pitch.cos(),
            cam.radius * cam.pitch.sin(),
            cam.radius * cam.yaw.cos() * cam.pitch.cos(),
        ];
        let fwd = normalize(sub([0.0; 3], pos));
        let right = normalize(cross(fwd, [0.0, 1.0, 0.0]));
        let up = cross(right, fwd);
        let focal = 0.5 * cam.height as f64 / (0.5 * cam.fov_y).tan();
        let x = (col as f64 + 0.5) - (cam.width as f64 / 2.0 + cam.cx);
        let y = (cam.height as f64 / 2.0 + cam.cy) - (row as f64 + 0.5);
        let d = normalize(add(
            add(scale(right, x / focal), scale(up, y / focal)),
            fwd,
        ));
        (pos, d)
    }

    #[test]
    fn corner_rays_match_projection_oracle() {
        let mut cam = OrbitCamera::new(10, 14);
        cam.yaw = 2.1;
        cam.pitch = 0.28;
        cam.cx = -0.75;
        cam.cy = 1.25;
        for (r, c) in [(0, 0), (0, 13), (9, 0), (9, 13), (5, 7)] {
            let ray = cam.ray(r, c);
            let (pos, dir) = oracle_ray(&cam, r, c);
            for a in 0..3 {
                assert!((ray.origin[a] - pos[a]).abs() < 1e-6);
                assert!((ray.dir[a] - dir[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ray_jacobian_matches_finite_differences() {
        let mut base = OrbitCamera::new(8, 8);
        base.yaw = 0.9;
        base.pitch = -0.15;
        base.cx = 0.4;
        base.cy = -0.8;
        let (_, jac) = base.ray_with_jacobian(2, 6);
        let h = 1e-6;
        let perturb = |k: usize, s: f64| -> OrbitCamera {
            let mut c = base;
            match k {
                0 => c.yaw += s,
                1 => c.pitch += s,
                2 => c.radius += s,
                3 => c.cx += s,
                _ => c.cy += s,
            }
            c
        };
        for k in 0..5 {
            let rp = perturb(k, h).ray(2, 6);
            let rm = perturb(k, -h).ray(2, 6);
            for a in 0..3 {
                let fd_o = (rp.origin[a] - rm.origin[a]) / (2.0 * h);
                let fd_d = (rp.dir[a] - rm.dir[a]) / (2.0 * h);
                assert!(
                    (fd_o - jac.d_origin[k][a]).abs() < 1e-6,
                    "param {k} origin axis {a}: {fd_o} vs {}",
                    jac.d_origin[k][a]
                );
                assert!(
                    (fd_d - jac.d_dir[k][a]).abs() < 1e-6,
                    "param {k} dir axis {a}: {fd_d} vs {}",
                    jac.d_dir[k][a]
                );
            }
        }
    }

    #[test]
    fn angle_diff_wraps() {
        assert!((angle_abs_diff(0.1, std::f64::consts::TAU + 0.2) - 0.1).abs() < 1e-12);
        assert!((angle_abs_diff(-3.0, 3.0) - (std::f64::consts::TAU - 6.0)).abs() < 1e-12);
    }
}
