//! Analytic ground-truth generator: a ray-traced ellipsoid "head proxy" with
//! front/back-asymmetric texture, exact masks, camera labels, and synthetic
//! detector outputs (frontal landmarks, head boxes).
//!
//! This module deliberately shares no rendering code with the engine under
//! test; camera math is written independently from generic look-at algebra.

use crate::camera::OrbitCamera;
use crate::error::{Error, Result};
use crate::io::{BoxRecord, DetectorCamera, DetectorRecord};
use crate::math::{add, cross, dot, normalize, scale, sub, Vec3};
use crate::raster::Raster;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlbedoKind {
    /// Front checker with eye/mouth blobs, striped back.
    Asymmetric,
    /// Uniform albedo; front and back are indistinguishable up to silhouette.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyScene {
    pub semi_axes: Vec3,
    pub albedo: AlbedoKind,
    pub background: Vec3,
}

impl Default for ProxyScene {
    fn default() -> Self {
        ProxyScene {
            semi_axes: [0.55, 0.72, 0.62],
            albedo: AlbedoKind::Asymmetric,
            background: [0.18, 0.25, 0.38],
        }
    }
}

impl ProxyScene {
    pub fn symmetric() -> Self {
        ProxyScene {
            albedo: AlbedoKind::Symmetric,
            ..Default::default()
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.semi_axes[0].max(self.semi_axes[1]).max(self.semi_axes[2])
    }

    /// Surface albedo at a point given in unit-sphere coordinates (the point
    /// divided by the semi-axes).
    fn albedo_at(&self, u: Vec3) -> Vec3 {
        match self.albedo {
            AlbedoKind::Symmetric => [0.75, 0.6, 0.5],
            AlbedoKind::Asymmetric => {
                if u[2] > 0.0 {
                    // front: warm checker plus dark eye blobs and a mouth bar
                    let eye_l = ((u[0] + 0.35).powi(2) + (u[1] - 0.25).powi(2)).sqrt();
                    let eye_r = ((u[0] - 0.35).powi(2) + (u[1] - 0.25).powi(2)).sqrt();
                    if eye_l < 0.13 || eye_r < 0.13 {
                        return [0.08, 0.08, 0.14];
                    }
                    if u[0].abs() < 0.28 && (u[1] + 0.42).abs() < 0.09 {
                        return [0.55, 0.12, 0.14];
                    }
                    let cell = ((u[0] / 0.3).floor() + (u[1] / 0.3).floor()) as i64;
                    if cell.rem_euclid(2) == 0 {
                        [0.92, 0.7, 0.52]
                    } else {
                        [0.5, 0.28, 0.22]
                    }
                } else {
                    // back: cool diagonal stripes; jointly structured in
                    // (x, y) so a projection-ambiguous representation cannot
                    // patch it up with axis-separable corrections
                    let stripe = ((u[0] + u[1]) / 0.3).floor() as i64;
                    if stripe.rem_euclid(2) == 0 {
                        [0.2, 0.3, 0.62]
                    } else {
                        [0.78, 0.72, 0.28]
                    }
                }
            }
        }
    }
}

/// Independent pinhole ray construction from generic look-at algebra.
fn proxy_ray(cam: &OrbitCamera, row: usize, col: usize) -> (Vec3, Vec3) {
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
    let dir = normalize(add(
        add(scale(right, x / focal), scale(up, y / focal)),
        fwd,
    ));
    (pos, dir)
}

/// Nearest positive ray-ellipsoid intersection parameter, if any.
fn hit_ellipsoid(origin: Vec3, dir: Vec3, axes: Vec3) -> Option<f64> {
    let o = [origin[0] / axes[0], origin[1] / axes[1], origin[2] / axes[2]];
    let d = [dir[0] / axes[0], dir[1] / axes[1], dir[2] / axes[2]];
    let a = dot(d, d);
    let b = 2.0 * dot(o, d);
    let c = dot(o, o) - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = (-b - sq) / (2.0 * a);
    if t > 0.0 {
        Some(t)
    } else {
        let t2 = (-b + sq) / (2.0 * a);
        (t2 > 0.0).then_some(t2)
    }
}

/// Ray-trace the proxy from a camera: Lambert-lit albedo on hits (two-sided
/// fixed directional light so surface radiance is view-independent),
/// background elsewhere, binary mask.
pub fn render_proxy(proxy: &ProxyScene, cam: &OrbitCamera) -> (Raster, Raster) {
    let mut rgb = Raster::zeros(cam.height, cam.width, 3);
    let mut mask = Raster::zeros(cam.height, cam.width, 1);
    let light = normalize([0.25, 0.4, 1.0]);
    for r in 0..cam.height {
        for c in 0..cam.width {
            let (origin, dir) = proxy_ray(cam, r, c);
            match hit_ellipsoid(origin, dir, proxy.semi_axes) {
                Some(t) => {
                    let p = add(origin, scale(dir, t));
                    let u = [
                        p[0] / proxy.semi_axes[0],
                        p[1] / proxy.semi_axes[1],
                        p[2] / proxy.semi_axes[2],
                    ];
                    let n = normalize([
                        p[0] / (proxy.semi_axes[0] * proxy.semi_axes[0]),
                        p[1] / (proxy.semi_axes[1] * proxy.semi_axes[1]),
                        p[2] / (proxy.semi_axes[2] * proxy.semi_axes[2]),
                    ]);
                    let shade = 0.35 + 0.65 * dot(n, light).abs();
                    let albedo = proxy.albedo_at(u);
                    for ch in 0..3 {
                        rgb.set(r, c, ch, (albedo[ch] * shade).clamp(0.02, 0.98));
                    }
                    mask.set(r, c, 0, 1.0);
                }
                None => {
                    for ch in 0..3 {
                        rgb.set(r, c, ch, proxy.background[ch]);
                    }
                }
            }
        }
    }
    (rgb, mask)
}

/// Project a world point with the camera's pinhole model (pixel coords).
fn project(cam: &OrbitCamera, p: Vec3) -> [f64; 2] {
    let pos = [
        cam.radius * cam.yaw.sin() * cam.pitch.cos(),
        cam.radius * cam.pitch.sin(),
        cam.radius * cam.yaw.cos() * cam.pitch.cos(),
    ];
    let fwd = normalize(sub([0.0; 3], pos));
    let right = normalize(cross(fwd, [0.0, 1.0, 0.0]));
    let up = cross(right, fwd);
    let focal = 0.5 * cam.height as f64 / (0.5 * cam.fov_y).tan();
    let rel = sub(p, pos);
    let z = dot(rel, fwd);
    let x = dot(rel, right);
    let y = dot(rel, up);
    [
        cam.width as f64 / 2.0 + cam.cx + focal * x / z,
        cam.height as f64 / 2.0 + cam.cy - focal * y / z,
    ]
}

/// Canonical face-landmark offsets in camera-facing coordinates
/// (right, up, toward-camera), in units of the proxy bounding radius.
const LANDMARK_OFFSETS: [[f64; 3]; 5] = [
    [-0.30, 0.12, 0.80],
    [0.30, 0.12, 0.80],
    [0.0, -0.05, 0.95],
    [-0.18, -0.30, 0.80],
    [0.18, -0.30, 0.80],
];

/// Synthetic frontal landmarks: canonical 3D offsets anchored at the head
/// center in the camera frame, projected with the true camera. This makes
/// the landmark layout view-stable, so the two-regime alignment consistency
/// has a known answer.
pub fn synth_landmarks(proxy: &ProxyScene, cam: &OrbitCamera) -> [[f64; 2]; 5] {
    let pos = [
        cam.radius * cam.yaw.sin() * cam.pitch.cos(),
        cam.radius * cam.pitch.sin(),
        cam.radius * cam.yaw.cos() * cam.pitch.cos(),
    ];
    let fwd = normalize(sub([0.0; 3], pos));
    let right = normalize(cross(fwd, [0.0, 1.0, 0.0]));
    let up = cross(right, fwd);
    let r0 = proxy.bounding_radius();
    let mut out = [[0.0; 2]; 5];
    for (i, off) in LANDMARK_OFFSETS.iter().enumerate() {
        let p = add(
            add(scale(right, off[0] * r0), scale(up, off[1] * r0)),
            scale(fwd, -off[2] * r0),
        );
        out[i] = project(cam, p);
    }
    out
}

/// Synthetic head box: the projected bounding sphere of the proxy, centered
/// at the projected head center.
pub fn synth_head_box(proxy: &ProxyScene, cam: &OrbitCamera) -> BoxRecord {
    let center = project(cam, [0.0; 3]);
    let r0 = proxy.bounding_radius();
    let d = cam.radius;
    let focal = 0.5 * cam.height as f64 / (0.5 * cam.fov_y).tan();
    let radius_px = focal * r0 / (d * d - r0 * r0).sqrt();
    BoxRecord {
        cx: center[0],
        cy: center[1],
        w: 2.0 * radius_px,
        h: 2.0 * radius_px,
    }
}

/// Wrapped |yaw| below 60 degrees counts as frontal for landmark visibility.
pub fn landmarks_visible(yaw: f64) -> bool {
    let mut w = yaw % std::f64::consts::TAU;
    if w > std::f64::consts::PI {
        w -= std::f64::consts::TAU;
    }
    if w <= -std::f64::consts::PI {
        w += std::f64::consts::TAU;
    }
    w.abs() < std::f64::consts::PI / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Uniform yaw label perturbation in [-m, m] radians.
    pub yaw_label_noise: f64,
    /// Uniform principal-point drift in [-m, m] pixels, applied to the
    /// rendering camera but not to the label.
    pub crop_drift_px: f64,
    /// Uniform jitter on detector outputs in pixels.
    pub detector_jitter_px: f64,
}

impl NoiseConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("yaw_label_noise", self.yaw_label_noise),
            ("crop_drift_px", self.crop_drift_px),
            ("detector_jitter_px", self.detector_jitter_px),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid_input(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BundleView {
    pub id: String,
    pub rgb: Raster,
    pub mask: Raster,
    /// The camera handed to training (noise included when requested).
    pub label_camera: OrbitCamera,
    /// The camera the image was actually rendered with (drift included).
    pub true_camera: OrbitCamera,
    pub landmarks: Option<[[f64; 2]; 5]>,
    pub head_box: BoxRecord,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub proxy: ProxyScene,
    pub views: Vec<BundleView>,
    pub seed: u64,
}

const PITCH_LADDER: [f64; 4] = [0.0, 0.2, -0.2, 0.3];

/// Deterministic multi-view dataset: yaws evenly spaced over [0, 2pi),
/// pitches cycling a small ladder within [-0.3, 0.3].
pub fn make_dataset(
    proxy: &ProxyScene,
    views: usize,
    size: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<DatasetBundle> {
    if views < 2 {
        return Err(Error::invalid_input("need at least 2 views"));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(views);
    for i in 0..views {
        let yaw = std::f64::consts::TAU * i as f64 / views as f64;
        let pitch = PITCH_LADDER[i % PITCH_LADDER.len()];
        let mut true_cam = OrbitCamera::new(size, size);
        true_cam.yaw = yaw;
        true_cam.pitch = pitch;
        if noise.crop_drift_px > 0.0 {
            true_cam.cx = rng.gen_range(-noise.crop_drift_px..=noise.crop_drift_px);
            true_cam.cy = rng.gen_range(-noise.crop_drift_px..=noise.crop_drift_px);
        }
        let mut label_cam = true_cam;
        label_cam.cx = 0.0;
        label_cam.cy = 0.0;
        if noise.yaw_label_noise > 0.0 {
            label_cam.yaw += rng.gen_range(-noise.yaw_label_noise..=noise.yaw_label_noise);
        }
        let (rgb, mask) = render_proxy(proxy, &true_cam);
        let landmarks = if landmarks_visible(true_cam.yaw) {
            let mut lm = synth_landmarks(proxy, &true_cam);
            if noise.detector_jitter_px > 0.0 {
                for p in lm.iter_mut() {
                    p[0] += rng.gen_range(-noise.detector_jitter_px..=noise.detector_jitter_px);
                    p[1] += rng.gen_range(-noise.detector_jitter_px..=noise.detector_jitter_px);
                }
            }
            Some(lm)
        } else {
            None
        };
        let mut head_box = synth_head_box(proxy, &true_cam);
        if noise.detector_jitter_px > 0.0 {
            head_box.cx += rng.gen_range(-noise.detector_jitter_px..=noise.detector_jitter_px);
            head_box.cy += rng.gen_range(-noise.detector_jitter_px..=noise.detector_jitter_px);
        }
        out.push(BundleView {
            id: format!("v{i:03}"),
            rgb,
            mask,
            label_camera: label_cam,
            true_camera: true_cam,
            landmarks,
            head_box,
        });
    }
    Ok(DatasetBundle {
        proxy: *proxy,
        views: out,
        seed,
    })
}

impl DatasetBundle {
    pub fn detector_records(&self) -> Vec<DetectorRecord> {
        self.views
            .iter()
            .map(|v| DetectorRecord {
                id: v.id.clone(),
                landmarks: v.landmarks,
                head_box: Some(v.head_box),
                camera: DetectorCamera {
                    yaw: v.label_camera.yaw,
                    pitch: v.label_camera.pitch,
                    radius: v.label_camera.radius,
                    fov: v.label_camera.fov_y,
                },
            })
            .collect()
    }
}
