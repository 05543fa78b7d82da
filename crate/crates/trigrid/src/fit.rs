//! Multi-view reconstruction fitting: optimizes scene parameters and
//! per-image camera residuals under photometric, mask, and residual-norm
//! losses with seeded pixel minibatches and momentum gradient descent.
//! Also hosts the tri-plane-vs-tri-grid ablation and photometric camera
//! registration against a fitted scene.

use crate::camera::{angle_abs_diff, CameraResidual, OrbitCamera};
use crate::error::{Error, Result};
use crate::io::{split_for_yaw, ViewSplit};
use crate::math::splitmix64;
use crate::raster::Raster;
use crate::render::{backward_pixels, render, render_pixels, RenderConfig};
use crate::scene::{Scene, SceneGrads};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct TrainView {
    pub id: String,
    pub rgb: Raster,
    pub mask: Raster,
    pub camera: OrbitCamera,
}

impl TrainView {
    fn validate(&self, scene: &Scene) -> Result<()> {
        let k = scene.decoder.radiance_channels;
        if self.rgb.height != self.camera.height
            || self.rgb.width != self.camera.width
            || self.rgb.channels != k
        {
            return Err(Error::invalid_input(format!(
                "view {}: rgb raster does not match camera size",
                self.id
            )));
        }
        if self.mask.height != self.camera.height
            || self.mask.width != self.camera.width
            || self.mask.channels != 1
        {
            return Err(Error::invalid_input(format!(
                "view {}: mask raster does not match camera size",
                self.id
            )));
        }
        if self.mask.data.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::invalid_input(format!(
                "view {}: mask values outside [0,1]",
                self.id
            )));
        }
        Ok(())
    }
}

/// Deterministic first-order update rules. Adam converges far faster on the
/// mixed plane/MLP/background parameter scales and is the default; plain
/// momentum descent stays available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iters: usize,
    pub lr_scene: f64,
    pub lr_residual: f64,
    pub optimizer: Optimizer,
    /// Final/initial learning-rate ratio, applied as exponential decay over
    /// the run; 1.0 keeps the rate constant.
    pub lr_decay: f64,
    /// Momentum coefficient (also Adam's beta1).
    pub momentum: f64,
    pub lambda_mask: f64,
    pub lambda_cam: f64,
    pub samples_per_ray: usize,
    pub batch_pixels: usize,
    pub seed: u64,
    pub residuals: bool,
    pub workers: usize,
    pub jitter: bool,
    /// Iterations between loss-curve log lines on stderr; 0 is silent.
    pub log_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iters: 2000,
            lr_scene: 1e-2,
            lr_residual: 1e-3,
            optimizer: Optimizer::Adam,
            lr_decay: 1.0,
            momentum: 0.9,
            lambda_mask: 1.0,
            lambda_cam: 10.0,
            samples_per_ray: 64,
            batch_pixels: 1024,
            seed: 0,
            residuals: false,
            workers: 0,
            jitter: true,
            log_every: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.lr_scene <= 0.0 || self.lr_residual <= 0.0 {
            return Err(Error::invalid_input("learning rates must be positive"));
        }
        if self.lambda_mask < 0.0 || self.lambda_cam < 0.0 {
            return Err(Error::invalid_input("loss weights must be non-negative"));
        }
        if self.batch_pixels == 0 {
            return Err(Error::invalid_input("batch_pixels must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid_input("lr_decay must be in (0, 1]"));
        }
        Ok(())
    }

    fn render_config(&self, salt: u64) -> RenderConfig {
        RenderConfig {
            samples_per_ray: self.samples_per_ray,
            jitter: self.jitter,
            seed: self.seed,
            salt,
            workers: self.workers,
            with_depth: false,
        }
    }
}

/// The principal-point components of the residual live on a pixel scale
/// while the angular components live on radians; this per-component step
/// scaling keeps one learning rate workable for both.
const RESIDUAL_STEP_SCALE: [f64; 5] = [1.0, 1.0, 1.0, 300.0, 300.0];

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub loss_curve: Vec<f64>,
    pub psnr: BTreeMap<String, f64>,
    pub mask_mse: f64,
    pub residuals: Vec<[f64; 5]>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub scene: Scene,
    pub residuals: Vec<CameraResidual>,
    pub report: FitReport,
}

/// Full fitting loss for one view and its gradients:
///   mean |I_gen - rgb|^2 + lambda_mask mean (I_m - mask)^2
///   + lambda_cam |residual|^2.
/// `pixels` restricts the photometric terms to a pixel subset (None = all).
pub fn loss_and_grads(
    scene: &Scene,
    view: &TrainView,
    residual: &CameraResidual,
    cfg: &FitConfig,
    salt: u64,
    pixels: Option<&[usize]>,
) -> Result<(f64, SceneGrads)> {
    scene.validate()?;
    view.validate(scene)?;
    let cam = view.camera.with_residual(residual)?;
    let k = scene.decoder.radiance_channels;
    let all_ids: Vec<usize>;
    let ids: &[usize] = match pixels {
        Some(p) => p,
        None => {
            all_ids = (0..cam.height * cam.width).collect();
            &all_ids
        }
    };
    let rcfg = cfg.render_config(salt);
    let (radiance, mask) = render_pixels(scene, &cam, ids, &rcfg)?;
    let mut grads = SceneGrads::zeros_like(scene);
    let b = ids.len() as f64;
    let mut loss = 0.0;
    let mut d_radiance = vec![0.0; ids.len() * k];
    let mut d_mask = vec![0.0; ids.len()];
    for (j, &pix) in ids.iter().enumerate() {
        let m = mask[j];
        let mut d_m = 0.0;
        for c in 0..k {
            let bg_param = scene.background.params.data[pix * k + c];
            let bg = crate::decoder::sigmoid(bg_param);
            let gen = (1.0 - m) * bg + radiance[j * k + c];
            let diff = gen - view.rgb.data[pix * k + c];
            loss += diff * diff / (b * k as f64);
            let d_gen = 2.0 * diff / (b * k as f64);
            d_radiance[j * k + c] = d_gen;
            d_m -= d_gen * bg;
            grads.background[pix * k + c] += d_gen * (1.0 - m) * bg * (1.0 - bg);
        }
        let mask_diff = m - view.mask.data[pix];
        loss += cfg.lambda_mask * mask_diff * mask_diff / b;
        d_m += cfg.lambda_mask * 2.0 * mask_diff / b;
        d_mask[j] = d_m;
    }
    backward_pixels(
        scene,
        &cam,
        ids,
        &d_radiance,
        &d_mask,
        &rcfg,
        cfg.residuals,
        &mut grads,
    )?;
    let res_arr = residual.as_array();
    for (j, r) in res_arr.iter().enumerate() {
        loss += cfg.lambda_cam * r * r;
        if cfg.residuals {
            grads.residual[j] += 2.0 * cfg.lambda_cam * r;
        }
    }
    if !loss.is_finite() {
        return Err(Error::invalid_state("non-finite loss"));
    }
    Ok((loss, grads))
}

struct OptimState {
    /// First-moment (or momentum velocity) buffers.
    m: SceneGrads,
    /// Second-moment buffers; unused under plain momentum.
    v: SceneGrads,
    m_res: Vec<[f64; 5]>,
    v_res: Vec<[f64; 5]>,
    step: usize,
}

impl OptimState {
    fn new(scene: &Scene, n_views: usize) -> Self {
        OptimState {
            m: SceneGrads::zeros_like(scene),
            v: SceneGrads::zeros_like(scene),
            m_res: vec![[0.0; 5]; n_views],
            v_res: vec![[0.0; 5]; n_views],
            step: 0,
        }
    }
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[allow(clippy::too_many_arguments)]
fn update_group(
    opt: Optimizer,
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    step: usize,
) {
    match opt {
        Optimizer::Momentum => {
            for i in 0..params.len() {
                m[i] = beta1 * m[i] + g[i];
                params[i] -= lr * m[i];
            }
        }
        Optimizer::Adam => {
            let bc1 = 1.0 - beta1.powi(step as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for i in 0..params.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn optimizer_step(
    scene: &mut Scene,
    state: &mut OptimState,
    grads: &SceneGrads,
    cfg: &FitConfig,
    decay: f64,
) {
    let opt = cfg.optimizer;
    let lr = cfg.lr_scene * decay;
    let b1 = cfg.momentum;
    let t = state.step;
    for s in 0..3 {
        update_group(
            opt,
            &mut scene.grid.stacks[s],
            &mut state.m.stacks[s],
            &mut state.v.stacks[s],
            &grads.stacks[s],
            lr,
            b1,
            t,
        );
    }
    for l in 0..scene.decoder.layers.len() {
        update_group(
            opt,
            &mut scene.decoder.layers[l].weights,
            &mut state.m.decoder.layers[l].weights,
            &mut state.v.decoder.layers[l].weights,
            &grads.decoder.layers[l].weights,
            lr,
            b1,
            t,
        );
        update_group(
            opt,
            &mut scene.decoder.layers[l].bias,
            &mut state.m.decoder.layers[l].bias,
            &mut state.v.decoder.layers[l].bias,
            &grads.decoder.layers[l].bias,
            lr,
            b1,
            t,
        );
    }
    update_group(
        opt,
        &mut scene.background.params.data,
        &mut state.m.background,
        &mut state.v.background,
        &grads.background,
        lr,
        b1,
        t,
    );
}

/// Seeded pixel minibatch: a partial Fisher-Yates draw without replacement.
fn sample_batch(total: usize, batch: usize, seed: u64, iter: usize) -> Vec<usize> {
    let batch = batch.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (iter as u64).wrapping_mul(0x9E37)));
    let mut ids: Vec<usize> = (0..total).collect();
    for i in 0..batch {
        let j = rng.gen_range(i..total);
        ids.swap(i, j);
    }
    ids.truncate(batch);
    ids
}

/// Fit scene parameters (and optionally per-view camera residuals) to the
/// training views. Deterministic for a fixed seed and worker count.
pub fn fit_scene(views: &[TrainView], cfg: &FitConfig, init: &Scene) -> Result<FitOutcome> {
    if views.is_empty() {
        return Err(Error::invalid_input("no training views"));
    }
    cfg.validate()?;
    for v in views {
        v.validate(init)?;
    }
    let mut scene = init.clone();
    let mut residuals = vec![CameraResidual::default(); views.len()];
    let mut state = OptimState::new(&scene, views.len());
    let mut loss_curve = Vec::with_capacity(cfg.iters);
    let total_px = views[0].camera.height * views[0].camera.width;
    for it in 0..cfg.iters {
        let vi = it % views.len();
        let batch = sample_batch(total_px, cfg.batch_pixels, cfg.seed, it);
        let result = loss_and_grads(
            &scene,
            &views[vi],
            &residuals[vi],
            cfg,
            it as u64 + 1,
            Some(&batch),
        );
        let (loss, grads) = match result {
            Ok(ok) => ok,
            Err(Error::InvalidState(msg)) => {
                return Err(Error::Diverged {
                    iteration: it,
                    last_good: it.saturating_sub(1),
                    msg,
                })
            }
            Err(e) => return Err(e),
        };
        state.step += 1;
        let decay = if cfg.iters > 1 {
            cfg.lr_decay.powf(it as f64 / (cfg.iters - 1) as f64)
        } else {
            1.0
        };
        optimizer_step(&mut scene, &mut state, &grads, cfg, decay);
        if cfg.residuals {
            let mut arr = residuals[vi].as_array();
            let m = &mut state.m_res[vi];
            let v = &mut state.v_res[vi];
            // each view is visited every n_views iterations; bias-correct by
            // visit count so Adam warms up per residual, not per global step
            let visit = it / views.len() + 1;
            for j in 0..5 {
                let g = grads.residual[j];
                match cfg.optimizer {
                    Optimizer::Momentum => {
                        m[j] = cfg.momentum * m[j] + g;
                        arr[j] -= decay * cfg.lr_residual * RESIDUAL_STEP_SCALE[j] * m[j];
                    }
                    Optimizer::Adam => {
                        m[j] = cfg.momentum * m[j] + (1.0 - cfg.momentum) * g;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                        let bc1 = 1.0 - cfg.momentum.powi(visit as i32);
                        let bc2 = 1.0 - ADAM_BETA2.powi(visit as i32);
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        arr[j] -= decay * cfg.lr_residual * RESIDUAL_STEP_SCALE[j] * mhat
                            / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
            residuals[vi] = CameraResidual::from_array(arr);
        }
        loss_curve.push(loss);
        if cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iters) {
            eprintln!("iter {it:5}  view {vi:2}  loss {loss:.6}");
        }
    }
    let report = build_report(&scene, views, &residuals, cfg, loss_curve)?;
    Ok(FitOutcome {
        scene,
        residuals,
        report,
    })
}

fn build_report(
    scene: &Scene,
    views: &[TrainView],
    residuals: &[CameraResidual],
    cfg: &FitConfig,
    loss_curve: Vec<f64>,
) -> Result<FitReport> {
    let mut psnr = BTreeMap::new();
    let mut mask_mse_sum = 0.0;
    let rcfg = RenderConfig {
        jitter: false,
        ..cfg.render_config(0)
    };
    for (v, res) in views.iter().zip(residuals) {
        let cam = v.camera.with_residual(res)?;
        let out = render(scene, &cam, &rcfg)?;
        psnr.insert(v.id.clone(), out.composite.psnr(&v.rgb)?);
        mask_mse_sum += out.mask.mse(&v.mask)?;
    }
    Ok(FitReport {
        loss_curve,
        psnr,
        mask_mse: mask_mse_sum / views.len() as f64,
        residuals: residuals.iter().map(|r| r.as_array()).collect(),
    })
}

/// Render each view with its labeled camera (no residual) and report PSNR of
/// the composite against the target plus the mean mask MSE.
pub fn evaluate_views(
    scene: &Scene,
    views: &[TrainView],
    samples_per_ray: usize,
    workers: usize,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let rcfg = RenderConfig {
        samples_per_ray,
        workers,
        ..Default::default()
    };
    let mut psnr = BTreeMap::new();
    let mut mask_mse = 0.0;
    for v in views {
        let out = render(scene, &v.camera, &rcfg)?;
        psnr.insert(v.id.clone(), out.composite.psnr(&v.rgb)?);
        mask_mse += out.mask.mse(&v.mask)?;
    }
    Ok((psnr, mask_mse / views.len().max(1) as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub d1_front_psnr: f64,
    pub d1_back_psnr: f64,
    pub d3_front_psnr: f64,
    pub d3_back_psnr: f64,
    pub d1_param_count: usize,
    pub d3_param_count: usize,
}

impl AblationTable {
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        s.push_str("repr        params   front PSNR   back PSNR\n");
        s.push_str(&format!(
            "tri-plane {:>8}   {:>10.2}  {:>10.2}\n",
            self.d1_param_count, self.d1_front_psnr, self.d1_back_psnr
        ));
        s.push_str(&format!(
            "tri-grid  {:>8}   {:>10.2}  {:>10.2}\n",
            self.d3_param_count, self.d3_front_psnr, self.d3_back_psnr
        ));
        s
    }
}

/// Fit twice with identical budgets, differing only in the representation
/// (tri-plane baseline vs tri-grid), then report held-out PSNR split into
/// front and back views.
pub fn ablate_representation(
    train: &[TrainView],
    heldout: &[TrainView],
    cfg: &FitConfig,
    triplane_init: &Scene,
    trigrid_init: &Scene,
) -> Result<AblationTable> {
    if !heldout.iter().any(|v| split_for_yaw(v.camera.yaw) == ViewSplit::Front)
        || !heldout.iter().any(|v| split_for_yaw(v.camera.yaw) == ViewSplit::Back)
    {
        return Err(Error::invalid_input(
            "held-out views must cover both front and back yaws",
        ));
    }
    let d1 = fit_scene(train, cfg, triplane_init)?;
    let d3 = fit_scene(train, cfg, trigrid_init)?;
    let split_psnr = |scene: &Scene| -> Result<(f64, f64)> {
        let (psnr, _) = evaluate_views(scene, heldout, cfg.samples_per_ray, cfg.workers)?;
        let mut front = (0.0, 0usize);
        let mut back = (0.0, 0usize);
        for v in heldout {
            let p = psnr[&v.id];
            match split_for_yaw(v.camera.yaw) {
                ViewSplit::Front => {
                    front.0 += p;
                    front.1 += 1;
                }
                ViewSplit::Back => {
                    back.0 += p;
                    back.1 += 1;
                }
            }
        }
        Ok((front.0 / front.1 as f64, back.0 / back.1 as f64))
    };
    let (d1_front, d1_back) = split_psnr(&d1.scene)?;
    let (d3_front, d3_back) = split_psnr(&d3.scene)?;
    Ok(AblationTable {
        d1_front_psnr: d1_front,
        d1_back_psnr: d1_back,
        d3_front_psnr: d3_front,
        d3_back_psnr: d3_back,
        d1_param_count: triplane_init.grid.param_count(),
        d3_param_count: trigrid_init.grid.param_count(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RegisterConfig {
    pub iters: usize,
    pub initial_step: f64,
    pub samples_per_ray: usize,
    pub workers: usize,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        RegisterConfig {
            iters: 60,
            initial_step: 2e-3,
            samples_per_ray: 48,
            workers: 0,
        }
    }
}

/// Photometric camera registration: gradient descent with backtracking on
/// (yaw, pitch, radius, cx, cy), minimizing the pixel-wise L2 distance of
/// the composite to the target. The scene stays fixed; accepted steps never
/// increase the loss.
pub fn register_camera(
    scene: &Scene,
    target: &Raster,
    init: &OrbitCamera,
    cfg: &RegisterConfig,
) -> Result<(OrbitCamera, f64)> {
    scene.validate()?;
    if target.height != init.height || target.width != init.width {
        return Err(Error::invalid_input("target size does not match camera"));
    }
    let view = TrainView {
        id: "register".into(),
        rgb: target.clone(),
        mask: Raster::zeros(target.height, target.width, 1),
        camera: *init,
    };
    let fit_cfg = FitConfig {
        lambda_mask: 0.0,
        lambda_cam: 0.0,
        samples_per_ray: cfg.samples_per_ray,
        jitter: false,
        residuals: true,
        workers: cfg.workers,
        ..Default::default()
    };
    let mut cam = *init;
    let mut step = cfg.initial_step;
    let eval = |cam: &OrbitCamera| -> Result<(f64, SceneGrads)> {
        let v = TrainView {
            camera: *cam,
            ..view.clone()
        };
        loss_and_grads(scene, &v, &CameraResidual::default(), &fit_cfg, 0, None)
    };
    let (mut loss, mut grads) = eval(&cam)?;
    for _ in 0..cfg.iters {
        if step < 1e-12 {
            break;
        }
        let mut accepted = false;
        for _ in 0..20 {
            let mut candidate = cam;
            candidate.yaw -= step * RESIDUAL_STEP_SCALE[0] * grads.residual[0];
            candidate.pitch -= step * RESIDUAL_STEP_SCALE[1] * grads.residual[1];
            candidate.radius -= step * RESIDUAL_STEP_SCALE[2] * grads.residual[2];
            candidate.cx -= step * RESIDUAL_STEP_SCALE[3] * grads.residual[3];
            candidate.cy -= step * RESIDUAL_STEP_SCALE[4] * grads.residual[4];
            if candidate.radius <= 0.0 {
                step *= 0.5;
                continue;
            }
            let (cand_loss, cand_grads) = eval(&candidate)?;
            if cand_loss < loss {
                cam = candidate;
                loss = cand_loss;
                grads = cand_grads;
                step *= 1.3;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((cam, loss))
}

/// Mean absolute wrapped yaw error between corrected labels and the truth.
pub fn mean_yaw_error(
    views: &[TrainView],
    residuals: &[CameraResidual],
    truth: &[OrbitCamera],
) -> f64 {
    let n = views.len().min(truth.len());
    let mut sum = 0.0;
    for i in 0..n {
        let corrected = views[i].camera.yaw
            + residuals.get(i).map(|r| r.d_yaw).unwrap_or(0.0);
        sum += angle_abs_diff(corrected, truth[i].yaw);
    }
    sum / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;

    fn tiny_scene(seed: u64) -> Scene {
        Scene::init(
            &SceneConfig {
                depth: 2,
                plane_height: 6,
                plane_width: 6,
                channels: 4,
                hidden: vec![12],
                image_height: 8,
                image_width: 8,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    fn view_of(scene: &Scene, cam: OrbitCamera) -> TrainView {
        let out = render(
            scene,
            &cam,
            &RenderConfig {
                samples_per_ray: 16,
                ..Default::default()
            },
        )
        .unwrap();
        TrainView {
            id: "t".into(),
            rgb: out.composite,
            mask: out.mask,
            camera: cam,
        }
    }

    #[test]
    fn perfect_scene_with_zero_residual_has_zero_loss() {
        let scene = tiny_scene(2);
        let cam = OrbitCamera::new(8, 8);
        let view = view_of(&scene, cam);
        let cfg = FitConfig {
            samples_per_ray: 16,
            jitter: false,
            residuals: true,
            workers: 1,
            ..Default::default()
        };
        let (loss, _) =
            loss_and_grads(&scene, &view, &CameraResidual::default(), &cfg, 0, None).unwrap();
        assert!(loss.abs() < 1e-18, "loss {loss}");
    }

    #[test]
    fn residual_norm_contributes_quadratically() {
        let scene = tiny_scene(2);
        let cam = OrbitCamera::new(8, 8);
        let view = view_of(&scene, cam);
        let cfg = FitConfig {
            samples_per_ray: 16,
            jitter: false,
            residuals: true,
            lambda_cam: 1.0,
            workers: 1,
            ..Default::default()
        };
        // the regularizer adds exactly lambda_cam * |res|^2 = 0.01 on top of
        // the photometric part
        let res = CameraResidual {
            d_radius: 0.1,
            ..Default::default()
        };
        let (loss_with, _) = loss_and_grads(&scene, &view, &res, &cfg, 0, None).unwrap();
        let mut photo_cfg = cfg.clone();
        photo_cfg.lambda_cam = 0.0;
        let (photo_only, _) = loss_and_grads(&scene, &view, &res, &photo_cfg, 0, None).unwrap();
        assert!((loss_with - photo_only - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_iteration_fit_returns_init_unchanged() {
        let scene = tiny_scene(4);
        let cam = OrbitCamera::new(8, 8);
        let views = vec![view_of(&scene, cam)];
        let cfg = FitConfig {
            iters: 0,
            samples_per_ray: 16,
            workers: 1,
            ..Default::default()
        };
        let out = fit_scene(&views, &cfg, &scene).unwrap();
        assert_eq!(out.scene, scene);
        assert!(out.report.loss_curve.is_empty());
    }

    #[test]
    fn fit_is_bitwise_deterministic() {
        let init = tiny_scene(5);
        let mut cam_a = OrbitCamera::new(8, 8);
        cam_a.yaw = 0.4;
        let mut cam_b = OrbitCamera::new(8, 8);
        cam_b.yaw = 2.8;
        let target = tiny_scene(99);
        let views = vec![view_of(&target, cam_a), view_of(&target, cam_b)];
        let cfg = FitConfig {
            iters: 6,
            samples_per_ray: 8,
            batch_pixels: 16,
            residuals: true,
            workers: 3,
            ..Default::default()
        };
        let a = fit_scene(&views, &cfg, &init).unwrap();
        let b = fit_scene(&views, &cfg, &init).unwrap();
        assert_eq!(
            a.scene.write_checkpoint_bytes(),
            b.scene.write_checkpoint_bytes()
        );
        assert_eq!(a.report.loss_curve, b.report.loss_curve);
        assert_eq!(a.residuals, b.residuals);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let scene = tiny_scene(7);
        let target = tiny_scene(8);
        let mut cam = OrbitCamera::new(8, 8);
        cam.yaw = 0.3;
        cam.pitch = 0.1;
        let view = view_of(&target, cam);
        let res = CameraResidual {
            d_yaw: 0.01,
            d_pitch: -0.005,
            d_radius: 0.02,
            d_cx: 0.3,
            d_cy: -0.2,
        };
        let cfg = FitConfig {
            samples_per_ray: 12,
            jitter: false,
            residuals: true,
            lambda_mask: 0.7,
            lambda_cam: 2.0,
            workers: 1,
            ..Default::default()
        };
        let (_, grads) = loss_and_grads(&scene, &view, &res, &cfg, 0, None).unwrap();
        let loss_of_scene = |s: &Scene, r: &CameraResidual| -> f64 {
            loss_and_grads(s, &view, r, &cfg, 0, None).unwrap().0
        };
        // a subset of tri-grid plane parameters
        let h = 1e-3;
        let mut fd_vec = Vec::new();
        let mut an_vec = Vec::new();
        for s in 0..3 {
            for idx in (0..scene.grid.stack_len()).step_by(23) {
                let mut sp = scene.clone();
                sp.grid.stacks[s][idx] += h;
                let mut sm = scene.clone();
                sm.grid.stacks[s][idx] -= h;
                fd_vec.push((loss_of_scene(&sp, &res) - loss_of_scene(&sm, &res)) / (2.0 * h));
                an_vec.push(grads.stacks[s][idx]);
            }
        }
        // decoder bias terms
        for i in 0..scene.decoder.layers[1].bias.len() {
            let mut sp = scene.clone();
            sp.decoder.layers[1].bias[i] += h;
            let mut sm = scene.clone();
            sm.decoder.layers[1].bias[i] -= h;
            fd_vec.push((loss_of_scene(&sp, &res) - loss_of_scene(&sm, &res)) / (2.0 * h));
            an_vec.push(grads.decoder.layers[1].bias[i]);
        }
        // background subset
        for idx in (0..scene.background.params.data.len()).step_by(17) {
            let mut sp = scene.clone();
            sp.background.params.data[idx] += h;
            let mut sm = scene.clone();
            sm.background.params.data[idx] -= h;
            fd_vec.push((loss_of_scene(&sp, &res) - loss_of_scene(&sm, &res)) / (2.0 * h));
            an_vec.push(grads.background[idx]);
        }
        // camera residual, smaller step to stay within grid cells
        let hr = 1e-5;
        for j in 0..5 {
            let mut rp = res.as_array();
            rp[j] += hr;
            let mut rm = res.as_array();
            rm[j] -= hr;
            fd_vec.push(
                (loss_of_scene(&scene, &CameraResidual::from_array(rp))
                    - loss_of_scene(&scene, &CameraResidual::from_array(rm)))
                    / (2.0 * hr),
            );
            an_vec.push(grads.residual[j]);
        }
        let norm_fd: f64 = fd_vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        let err: f64 = fd_vec
            .iter()
            .zip(&an_vec)
            .map(|(f, a)| (f - a) * (f - a))
            .sum::<f64>()
            .sqrt();
        assert!(
            err / norm_fd.max(1e-9) < 1e-4,
            "relative gradient error {}",
            err / norm_fd.max(1e-9)
        );
    }

    #[test]
    fn batch_sampling_is_seeded_and_unique() {
        let a = sample_batch(100, 20, 5, 3);
        let b = sample_batch(100, 20, 5, 3);
        assert_eq!(a, b);
        let c = sample_batch(100, 20, 5, 4);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), a.len());
    }
}
