//! Central finite-difference verification of every analytic gradient group
//! (tri-grid planes, decoder, background, camera residual) against the full
//! fitting loss on a small render. This is the gate the fitter relies on.

use crate::camera::{CameraResidual, OrbitCamera};
use crate::error::Result;
use crate::fit::{loss_and_grads, FitConfig, TrainView};
use crate::raster::Raster;
use crate::scene::{Scene, SceneConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GroupResult {
    pub name: String,
    pub rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub depth: usize,
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
    pub passed: bool,
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Run the finite-difference suite for one tri-grid depth on an 8x8 render.
pub fn run_depth(depth: usize, seed: u64, workers: usize) -> Result<GradcheckReport> {
    let cfg = SceneConfig {
        depth,
        plane_height: 8,
        plane_width: 8,
        channels: 4,
        hidden: vec![16],
        radiance_channels: 3,
        image_height: 8,
        image_width: 8,
        ..Default::default()
    };
    let scene = Scene::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let mut rgb = Raster::zeros(8, 8, 3);
    for v in &mut rgb.data {
        *v = rng.gen_range(0.05..0.95);
    }
    let mut mask = Raster::zeros(8, 8, 1);
    for v in &mut mask.data {
        *v = rng.gen_range(0.0..1.0);
    }
    let mut cam = OrbitCamera::new(8, 8);
    cam.yaw = 0.5;
    cam.pitch = 0.12;
    let view = TrainView {
        id: "gradcheck".into(),
        rgb,
        mask,
        camera: cam,
    };
    let residual = CameraResidual {
        d_yaw: 0.015,
        d_pitch: -0.01,
        d_radius: 0.02,
        d_cx: 0.4,
        d_cy: -0.3,
    };
    let fit_cfg = FitConfig {
        samples_per_ray: 16,
        jitter: false,
        residuals: true,
        lambda_mask: 1.0,
        lambda_cam: 10.0,
        workers,
        ..Default::default()
    };
    let (_, grads) = loss_and_grads(&scene, &view, &residual, &fit_cfg, 0, None)?;
    let loss = |s: &Scene, r: &CameraResidual| -> Result<f64> {
        Ok(loss_and_grads(s, &view, r, &fit_cfg, 0, None)?.0)
    };

    let mut groups = Vec::new();
    // Central-difference step at the f64 optimum for this loss scale. Larger
    // steps (1e-3) measurably cross ReLU and interpolation-cell kinks during
    // probes and contaminate the comparison even though the analytic
    // gradients are exact.
    let h = 1e-5;
    for s in 0..3 {
        let mut fd = Vec::new();
        let mut an = Vec::new();
        // every 3rd entry keeps the runtime well under the gate budget while
        // still covering hundreds of parameters per stack
        for idx in (0..scene.grid.stack_len()).step_by(3) {
            let mut sp = scene.clone();
            sp.grid.stacks[s][idx] += h;
            let mut sm = scene.clone();
            sm.grid.stacks[s][idx] -= h;
            fd.push((loss(&sp, &residual)? - loss(&sm, &residual)?) / (2.0 * h));
            an.push(grads.stacks[s][idx]);
        }
        groups.push(group_result(format!("planes_{}", ["xy", "yz", "xz"][s]), &fd, &an));
    }
    {
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for l in 0..scene.decoder.layers.len() {
            for i in 0..scene.decoder.layers[l].weights.len() {
                let mut sp = scene.clone();
                sp.decoder.layers[l].weights[i] += h;
                let mut sm = scene.clone();
                sm.decoder.layers[l].weights[i] -= h;
                fd.push((loss(&sp, &residual)? - loss(&sm, &residual)?) / (2.0 * h));
                an.push(grads.decoder.layers[l].weights[i]);
            }
            for i in 0..scene.decoder.layers[l].bias.len() {
                let mut sp = scene.clone();
                sp.decoder.layers[l].bias[i] += h;
                let mut sm = scene.clone();
                sm.decoder.layers[l].bias[i] -= h;
                fd.push((loss(&sp, &residual)? - loss(&sm, &residual)?) / (2.0 * h));
                an.push(grads.decoder.layers[l].bias[i]);
            }
        }
        groups.push(group_result("decoder".into(), &fd, &an));
    }
    {
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for idx in 0..scene.background.params.data.len() {
            let mut sp = scene.clone();
            sp.background.params.data[idx] += h;
            let mut sm = scene.clone();
            sm.background.params.data[idx] -= h;
            fd.push((loss(&sp, &residual)? - loss(&sm, &residual)?) / (2.0 * h));
            an.push(grads.background[idx]);
        }
        groups.push(group_result("background".into(), &fd, &an));
    }
    {
        // smaller step: moving the camera sweeps sample points across
        // interpolation cells, and the loss is only piecewise smooth there
        let hr = 1e-5;
        let mut fd = Vec::new();
        let mut an = Vec::new();
        for j in 0..5 {
            let mut rp = residual.as_array();
            rp[j] += hr;
            let mut rm = residual.as_array();
            rm[j] -= hr;
            fd.push(
                (loss(&scene, &CameraResidual::from_array(rp))?
                    - loss(&scene, &CameraResidual::from_array(rm))?)
                    / (2.0 * hr),
            );
            an.push(grads.residual[j]);
        }
        groups.push(group_result("camera_residual".into(), &fd, &an));
    }
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradcheckReport {
        depth,
        tolerance: GRADCHECK_TOLERANCE,
        groups,
        passed,
    })
}

/// Run the suite for the tri-plane baseline and the tri-grid default.
pub fn run(seed: u64, workers: usize) -> Result<Vec<GradcheckReport>> {
    Ok(vec![run_depth(1, seed, workers)?, run_depth(3, seed, workers)?])
}

fn group_result(name: String, fd: &[f64], an: &[f64]) -> GroupResult {
    let norm_fd: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err: f64 = fd
        .iter()
        .zip(an)
        .map(|(f, a)| (f - a) * (f - a))
        .sum::<f64>()
        .sqrt();
    let rel = err / norm_fd.max(1e-9);
    GroupResult {
        name,
        rel_error: rel,
        checked: fd.len(),
        passed: rel < GRADCHECK_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_passes_for_triplane_and_trigrid() {
        for depth in [1usize, 3] {
            let report = run_depth(depth, 11, 2).unwrap();
            for g in &report.groups {
                assert!(
                    g.passed,
                    "D={depth} group {} rel error {}",
                    g.name, g.rel_error
                );
            }
        }
    }

    #[test]
    #[ignore]
    fn diag_fd_error_vs_step() {
        // diagnostic only: prints per-step relative errors for the plane group
        let cfg = SceneConfig {
            depth: 1,
            plane_height: 8,
            plane_width: 8,
            channels: 4,
            hidden: vec![16],
            radiance_channels: 3,
            image_height: 8,
            image_width: 8,
            ..Default::default()
        };
        let scene = Scene::init(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11 ^ 0xA5A5);
        let mut rgb = Raster::zeros(8, 8, 3);
        for v in &mut rgb.data {
            *v = rng.gen_range(0.05..0.95);
        }
        let mut mask = Raster::zeros(8, 8, 1);
        for v in &mut mask.data {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut cam = OrbitCamera::new(8, 8);
        cam.yaw = 0.5;
        cam.pitch = 0.12;
        let view = TrainView { id: "d".into(), rgb, mask, camera: cam };
        let residual = CameraResidual {
            d_yaw: 0.015,
            d_pitch: -0.01,
            d_radius: 0.02,
            d_cx: 0.4,
            d_cy: -0.3,
        };
        let fit_cfg = FitConfig {
            samples_per_ray: 16,
            jitter: false,
            residuals: true,
            workers: 2,
            ..Default::default()
        };
        let (_, grads) = loss_and_grads(&scene, &view, &residual, &fit_cfg, 0, None).unwrap();
        for h in [1e-3, 1e-4, 1e-5, 1e-6] {
            let mut fd = Vec::new();
            let mut an = Vec::new();
            let mut worst = (0.0f64, 0usize);
            for idx in (0..scene.grid.stack_len()).step_by(3) {
                let mut sp = scene.clone();
                sp.grid.stacks[0][idx] += h;
                let mut sm = scene.clone();
                sm.grid.stacks[0][idx] -= h;
                let f = (loss_and_grads(&sp, &view, &residual, &fit_cfg, 0, None).unwrap().0
                    - loss_and_grads(&sm, &view, &residual, &fit_cfg, 0, None).unwrap().0)
                    / (2.0 * h);
                let a = grads.stacks[0][idx];
                if (f - a).abs() > worst.0 {
                    worst = ((f - a).abs(), idx);
                }
                fd.push(f);
                an.push(a);
            }
            let g = group_result("planes_xy".into(), &fd, &an);
            eprintln!("h={h:e}: rel={:.3e} worst abs={:.3e} at {}", g.rel_error, worst.0, worst.1);
        }
    }
}
