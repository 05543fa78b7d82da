//! Volume rendering: stratified ray sampling, the transmittance quadrature
//! producing the radiance image and foreground mask, mask-aware compositing
//! over the learnable background, bilinear upsampling, the 7-channel
//! discriminator input assembly, and the hand-written reverse-mode pass
//! through all of it (including camera-residual gradients).

use crate::camera::{OrbitCamera, Ray, RayJacobian};
use crate::decoder::DecoderTape;
use crate::error::{Error, Result};
use crate::math::{counter_uniform, dot, splitmix64, Vec3};
use crate::raster::Raster;
use crate::scene::{Scene, SceneGrads};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub jitter: bool,
    pub seed: u64,
    /// Extra stream key (e.g. the fit iteration) so repeated jittered renders
    /// of the same pixel draw fresh strata.
    pub salt: u64,
    /// Parallel chunk count; 0 means all available cores. Bitwise
    /// reproducibility of gradients requires a fixed value.
    pub workers: usize,
    pub with_depth: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 64,
            jitter: false,
            seed: 0,
            salt: 0,
            workers: 1,
            with_depth: false,
        }
    }
}

impl RenderConfig {
    pub fn resolved_workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            self.workers
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub radiance: Raster,
    pub mask: Raster,
    pub composite: Raster,
    pub depth: Option<Raster>,
}

/// Stratified sample depths and segment lengths over [t_near, t_far].
///
/// Deterministic bin midpoints with jitter off; a uniform draw inside each
/// bin with jitter on. The final segment length is the bin width.
pub fn stratified_samples(
    ray: &Ray,
    n: usize,
    jitter: bool,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut depths = vec![0.0; n];
    let mut deltas = vec![0.0; n];
    stratified_samples_into(ray, n, jitter, seed, 0, &mut depths, &mut deltas)?;
    Ok((depths, deltas))
}

pub(crate) fn stratified_samples_into(
    ray: &Ray,
    n: usize,
    jitter: bool,
    seed: u64,
    stream: u64,
    depths: &mut [f64],
    deltas: &mut [f64],
) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid_input("need at least 2 samples per ray"));
    }
    let width = (ray.t_far - ray.t_near) / n as f64;
    for i in 0..n {
        let u = if jitter {
            counter_uniform(seed, stream, i as u64)
        } else {
            0.5
        };
        depths[i] = ray.t_near + (i as f64 + u) * width;
    }
    for i in 0..n - 1 {
        deltas[i] = depths[i + 1] - depths[i];
    }
    deltas[n - 1] = width;
    Ok(())
}

/// Per-ray quadrature of the rendering integral over an arbitrary density /
/// radiance field: alpha_i = 1 - exp(-sigma_i * delta_i), w_i = T_i alpha_i.
///
/// Returns (radiance k-vector, mask, expected depth) per ray, sequentially.
/// The shipped scene renderer routes through the same per-sample arithmetic.
pub fn integrate_field<F>(
    field: F,
    k: usize,
    rays: &[Ray],
    cfg: &RenderConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: FnMut(Vec3, &mut f64, &mut [f64]) -> Result<()>,
{
    integrate_field_offset(field, k, rays, 0, cfg)
}

#[inline]
fn stream_key(salt: u64, pixel: usize) -> u64 {
    splitmix64(salt).wrapping_add(pixel as u64)
}

/// Volume-render a scene along the given rays (row-major h x w grid),
/// producing the raw radiance image and the foreground mask.
pub fn volume_render(
    scene: &Scene,
    rays: &[Ray],
    h: usize,
    w: usize,
    cfg: &RenderConfig,
) -> Result<(Raster, Raster, Option<Raster>)> {
    if rays.len() != h * w {
        return Err(Error::invalid_input("ray count does not match image size"));
    }
    scene.validate()?;
    let k = scene.decoder.radiance_channels;
    let workers = cfg.resolved_workers().max(1).min(rays.len().max(1));
    let chunks = chunk_ranges(rays.len(), workers);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut tape = DecoderTape::default();
            let mut feat = vec![0.0; scene.grid.channels];
            // per-chunk closure over the shared immutable scene
            let field = |p: Vec3, sigma: &mut f64, radiance: &mut [f64]| -> Result<()> {
                scene.grid.sample_point_into(p, &mut feat)?;
                *sigma = scene.decoder.decode_into(&feat, &mut tape, radiance)?;
                Ok(())
            };
            integrate_field_offset(field, k, &rays[lo..hi], lo, cfg)
        })
        .collect();
    let mut radiance = Raster::zeros(h, w, k);
    let mut mask = Raster::zeros(h, w, 1);
    let mut depth = if cfg.with_depth {
        Some(Raster::zeros(h, w, 1))
    } else {
        None
    };
    for (ci, part) in parts.into_iter().enumerate() {
        let (rad, m, dep) = part?;
        let (lo, _) = chunks[ci];
        radiance.data[lo * k..lo * k + rad.len()].copy_from_slice(&rad);
        mask.data[lo..lo + m.len()].copy_from_slice(&m);
        if let Some(d) = depth.as_mut() {
            d.data[lo..lo + dep.len()].copy_from_slice(&dep);
        }
    }
    Ok((radiance, mask, depth))
}

/// Like `integrate_field` but with the pixel stream offset by `base` so
/// chunked renders draw identical jitter regardless of the chunk split.
fn integrate_field_offset<F>(
    field: F,
    k: usize,
    rays: &[Ray],
    base: usize,
    cfg: &RenderConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: FnMut(Vec3, &mut f64, &mut [f64]) -> Result<()>,
{
    let ids: Vec<usize> = (base..base + rays.len()).collect();
    integrate_pixels(field, k, rays, &ids, cfg)
}

/// Forward-render an arbitrary subset of pixels (row-major indices),
/// returning flat radiance (k per pixel) and mask values aligned with
/// `pixel_ids`. Jitter streams are keyed by the absolute pixel index, so a
/// subset render agrees with the corresponding full-frame pixels.
pub fn render_pixels(
    scene: &Scene,
    cam: &OrbitCamera,
    pixel_ids: &[usize],
    cfg: &RenderConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = scene.decoder.radiance_channels;
    let workers = cfg.resolved_workers().max(1).min(pixel_ids.len().max(1));
    let chunks = chunk_ranges(pixel_ids.len(), workers);
    let parts: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut tape = DecoderTape::default();
            let mut feat = vec![0.0; scene.grid.channels];
            let mut rays = Vec::with_capacity(hi - lo);
            for &pix in &pixel_ids[lo..hi] {
                rays.push(cam.ray(pix / cam.width, pix % cam.width));
            }
            let field = |p: Vec3, sigma: &mut f64, radiance: &mut [f64]| -> Result<()> {
                scene.grid.sample_point_into(p, &mut feat)?;
                *sigma = scene.decoder.decode_into(&feat, &mut tape, radiance)?;
                Ok(())
            };
            integrate_pixels(field, k, &rays, &pixel_ids[lo..hi], cfg)
        })
        .collect();
    let mut radiance = Vec::with_capacity(pixel_ids.len() * k);
    let mut mask = Vec::with_capacity(pixel_ids.len());
    for part in parts {
        let (rad, m, _) = part?;
        radiance.extend_from_slice(&rad);
        mask.extend_from_slice(&m);
    }
    Ok((radiance, mask))
}

/// Like `integrate_field_offset` but with per-ray explicit stream ids.
fn integrate_pixels<F>(
    mut field: F,
    k: usize,
    rays: &[Ray],
    pixel_ids: &[usize],
    cfg: &RenderConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
where
    F: FnMut(Vec3, &mut f64, &mut [f64]) -> Result<()>,
{
    let n = cfg.samples_per_ray;
    let mut out_radiance = vec![0.0; rays.len() * k];
    let mut out_mask = vec![0.0; rays.len()];
    let mut out_depth = vec![0.0; rays.len()];
    let mut depths = vec![0.0; n];
    let mut deltas = vec![0.0; n];
    let mut radiance = vec![0.0; k];
    for (ri, ray) in rays.iter().enumerate() {
        stratified_samples_into(
            ray,
            n,
            cfg.jitter,
            cfg.seed,
            stream_key(cfg.salt, pixel_ids[ri]),
            &mut depths,
            &mut deltas,
        )?;
        let mut transmittance = 1.0;
        let mut mask = 0.0;
        let mut depth = 0.0;
        let acc = &mut out_radiance[ri * k..(ri + 1) * k];
        for i in 0..n {
            let p = [
                ray.origin[0] + depths[i] * ray.dir[0],
                ray.origin[1] + depths[i] * ray.dir[1],
                ray.origin[2] + depths[i] * ray.dir[2],
            ];
            let mut sigma = 0.0;
            field(p, &mut sigma, &mut radiance)?;
            if !sigma.is_finite() {
                return Err(Error::invalid_state("non-finite density along ray"));
            }
            let alpha = -(-sigma * deltas[i]).exp_m1();
            let w = transmittance * alpha;
            for c in 0..k {
                acc[c] += w * radiance[c];
            }
            mask += w;
            depth += w * depths[i];
            transmittance *= 1.0 - alpha;
        }
        out_mask[ri] = mask.clamp(0.0, 1.0);
        out_depth[ri] = depth;
    }
    Ok((out_radiance, out_mask, out_depth))
}

/// Mask-aware compositing: I_gen = (1 - mask) * background + radiance.
pub fn composite(raw: &Raster, mask: &Raster, background: &Raster) -> Result<Raster> {
    if raw.height != mask.height
        || raw.width != mask.width
        || mask.channels != 1
        || !raw.same_shape(background)
    {
        return Err(Error::invalid_input("composite: raster shape mismatch"));
    }
    let mut out = raw.clone();
    let k = raw.channels;
    for pix in 0..raw.height * raw.width {
        let m = mask.data[pix];
        for c in 0..k {
            out.data[pix * k + c] = (1.0 - m) * background.data[pix * k + c] + raw.data[pix * k + c];
        }
    }
    Ok(out)
}

/// Full render pipeline: rays, quadrature, composite over the scene's
/// background.
pub fn render(scene: &Scene, cam: &OrbitCamera, cfg: &RenderConfig) -> Result<RenderOutput> {
    cam.validate()?;
    if cam.height != scene.background.params.height || cam.width != scene.background.params.width {
        return Err(Error::invalid_input(
            "camera image size does not match scene background size",
        ));
    }
    let rays = cam.rays();
    let (radiance, mask, depth) = volume_render(scene, &rays, cam.height, cam.width, cfg)?;
    let bg = scene.background.raster();
    let comp = composite(&radiance, &mask, &bg)?;
    Ok(RenderOutput {
        radiance,
        mask,
        composite: comp,
        depth,
    })
}

/// Integer-factor bilinear upsampling with the align-corners-false
/// convention; exact for constant images, identity at factor 1.
pub fn bilinear_upsample(img: &Raster, factor: usize) -> Result<Raster> {
    if factor < 1 {
        return Err(Error::invalid_input("upsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let oh = img.height * factor;
    let ow = img.width * factor;
    let mut out = Raster::zeros(oh, ow, img.channels);
    let inv = 1.0 / factor as f64;
    for r in 0..oh {
        // map output pixel center into input pixel-center coordinates
        let y = ((r as f64 + 0.5) * inv - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = (y.floor() as usize).min(img.height.saturating_sub(2));
        let fy = y - y0 as f64;
        for c in 0..ow {
            let x = ((c as f64 + 0.5) * inv - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = (x.floor() as usize).min(img.width.saturating_sub(2));
            let fx = x - x0 as f64;
            for ch in 0..img.channels {
                let c00 = img.get(y0, x0, ch);
                let c10 = img.get(y0, (x0 + 1).min(img.width - 1), ch);
                let c01 = img.get((y0 + 1).min(img.height - 1), x0, ch);
                let c11 = img.get((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1), ch);
                let top = c00 + fx * (c10 - c00);
                let bot = c01 + fx * (c11 - c01);
                out.set(r, c, ch, top + fy * (bot - top));
            }
        }
    }
    Ok(out)
}

/// Channel-concatenate (upsampled image, high-resolution image, upsampled
/// mask) into the fixed-order discriminator input raster.
pub fn assemble_discriminator_input(
    i_up: &Raster,
    i_plus: &Raster,
    mask_up: &Raster,
) -> Result<Raster> {
    if i_up.height != i_plus.height
        || i_up.width != i_plus.width
        || i_up.height != mask_up.height
        || i_up.width != mask_up.width
    {
        return Err(Error::invalid_input(
            "discriminator input parts differ in spatial size",
        ));
    }
    if i_up.channels != i_plus.channels || mask_up.channels != 1 {
        return Err(Error::invalid_input(
            "discriminator input parts have unexpected channel counts",
        ));
    }
    let k = i_up.channels;
    let out_c = 2 * k + 1;
    let mut out = Raster::zeros(i_up.height, i_up.width, out_c);
    for pix in 0..i_up.height * i_up.width {
        for c in 0..k {
            out.data[pix * out_c + c] = i_up.data[pix * k + c];
            out.data[pix * out_c + k + c] = i_plus.data[pix * k + c];
        }
        out.data[pix * out_c + 2 * k] = mask_up.data[pix];
    }
    Ok(out)
}

/// Reverse-mode through the quadrature, decoder, tri-grid sampler and (when
/// requested) the camera geometry, for an arbitrary subset of pixels.
///
/// `d_radiance` holds k upstream values per listed pixel, `d_mask` one.
/// Gradients accumulate into `grads`; camera gradients land in
/// `grads.residual` in the order (yaw, pitch, radius, cx, cy).
pub fn backward_pixels(
    scene: &Scene,
    cam: &OrbitCamera,
    pixel_ids: &[usize],
    d_radiance: &[f64],
    d_mask: &[f64],
    cfg: &RenderConfig,
    with_camera: bool,
    grads: &mut SceneGrads,
) -> Result<()> {
    let k = scene.decoder.radiance_channels;
    if d_radiance.len() != pixel_ids.len() * k || d_mask.len() != pixel_ids.len() {
        return Err(Error::invalid_input("upstream gradient size mismatch"));
    }
    let workers = cfg.resolved_workers().max(1).min(pixel_ids.len().max(1));
    let chunks = chunk_ranges(pixel_ids.len(), workers);
    let parts: Vec<Result<SceneGrads>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut local = SceneGrads::zeros_like(scene);
            let mut ws = BackwardWorkspace::new(scene, cfg.samples_per_ray);
            for j in lo..hi {
                backward_one_pixel(
                    scene,
                    cam,
                    pixel_ids[j],
                    &d_radiance[j * k..(j + 1) * k],
                    d_mask[j],
                    cfg,
                    with_camera,
                    &mut local,
                    &mut ws,
                )?;
            }
            Ok(local)
        })
        .collect();
    for part in parts {
        grads.merge(&part?);
    }
    Ok(())
}

/// Whole-frame wrapper over `backward_pixels` taking upstream rasters for
/// the radiance image and mask.
pub fn volume_render_backward(
    scene: &Scene,
    cam: &OrbitCamera,
    d_radiance: &Raster,
    d_mask: &Raster,
    cfg: &RenderConfig,
    with_camera: bool,
) -> Result<SceneGrads> {
    if d_radiance.height != cam.height
        || d_radiance.width != cam.width
        || d_radiance.channels != scene.decoder.radiance_channels
        || d_mask.channels != 1
    {
        return Err(Error::invalid_input("upstream raster shape mismatch"));
    }
    let pixel_ids: Vec<usize> = (0..cam.height * cam.width).collect();
    let mut grads = SceneGrads::zeros_like(scene);
    backward_pixels(
        scene,
        cam,
        &pixel_ids,
        &d_radiance.data,
        &d_mask.data,
        cfg,
        with_camera,
        &mut grads,
    )?;
    Ok(grads)
}

struct BackwardWorkspace {
    depths: Vec<f64>,
    deltas: Vec<f64>,
    sigmas: Vec<f64>,
    alphas: Vec<f64>,
    trans: Vec<f64>,
    radiance: Vec<f64>,
    features: Vec<f64>,
    points: Vec<Vec3>,
    tapes: Vec<DecoderTape>,
    d_feat: Vec<f64>,
    d_rad: Vec<f64>,
    dec_scratch: crate::decoder::DecoderScratch,
}

impl BackwardWorkspace {
    fn new(scene: &Scene, n: usize) -> Self {
        let k = scene.decoder.radiance_channels;
        let c = scene.grid.channels;
        BackwardWorkspace {
            depths: vec![0.0; n],
            deltas: vec![0.0; n],
            sigmas: vec![0.0; n],
            alphas: vec![0.0; n],
            trans: vec![0.0; n],
            radiance: vec![0.0; n * k],
            features: vec![0.0; n * c],
            points: vec![[0.0; 3]; n],
            tapes: vec![DecoderTape::default(); n],
            d_feat: vec![0.0; c],
            d_rad: vec![0.0; k],
            dec_scratch: Default::default(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_one_pixel(
    scene: &Scene,
    cam: &OrbitCamera,
    pixel: usize,
    up_radiance: &[f64],
    up_mask: f64,
    cfg: &RenderConfig,
    with_camera: bool,
    grads: &mut SceneGrads,
    ws: &mut BackwardWorkspace,
) -> Result<()> {
    if up_mask == 0.0 && up_radiance.iter().all(|&g| g == 0.0) {
        return Ok(());
    }
    let row = pixel / cam.width;
    let col = pixel % cam.width;
    let (ray, jac) = if with_camera {
        cam.ray_with_jacobian(row, col)
    } else {
        (cam.ray(row, col), RayJacobian::default())
    };
    let n = cfg.samples_per_ray;
    let k = scene.decoder.radiance_channels;
    let c = scene.grid.channels;
    stratified_samples_into(
        &ray,
        n,
        cfg.jitter,
        cfg.seed,
        stream_key(cfg.salt, pixel),
        &mut ws.depths,
        &mut ws.deltas,
    )?;
    // forward, taping everything the backward pass needs
    let mut transmittance = 1.0;
    for i in 0..n {
        let t = ws.depths[i];
        let p = [
            ray.origin[0] + t * ray.dir[0],
            ray.origin[1] + t * ray.dir[1],
            ray.origin[2] + t * ray.dir[2],
        ];
        ws.points[i] = p;
        let feat = &mut ws.features[i * c..(i + 1) * c];
        scene.grid.sample_point_into(p, feat)?;
        let rad = &mut ws.radiance[i * k..(i + 1) * k];
        let sigma = scene.decoder.decode_into(feat, &mut ws.tapes[i], rad)?;
        if !sigma.is_finite() {
            return Err(Error::invalid_state("non-finite density along ray"));
        }
        ws.sigmas[i] = sigma;
        ws.alphas[i] = -(-sigma * ws.deltas[i]).exp_m1();
        ws.trans[i] = transmittance;
        transmittance *= 1.0 - ws.alphas[i];
    }
    // backward through the compositing weights:
    //   s_i = g_r . f_i + g_m,  dL/dalpha_i = T_i (s_i - R_{i+1})
    // with the suffix recursion R_i = alpha_i s_i + (1 - alpha_i) R_{i+1}.
    let mut r_suffix = 0.0;
    for i in (0..n).rev() {
        let rad = &ws.radiance[i * k..(i + 1) * k];
        let mut s_i = up_mask;
        for cch in 0..k {
            s_i += up_radiance[cch] * rad[cch];
        }
        let d_alpha = ws.trans[i] * (s_i - r_suffix);
        r_suffix = ws.alphas[i] * s_i + (1.0 - ws.alphas[i]) * r_suffix;
        let d_sigma = d_alpha * ws.deltas[i] * (1.0 - ws.alphas[i]);
        let w_i = ws.trans[i] * ws.alphas[i];
        for cch in 0..k {
            ws.d_rad[cch] = w_i * up_radiance[cch];
        }
        scene.decoder.decode_backward_into(
            &ws.tapes[i],
            ws.sigmas[i],
            &ws.radiance[i * k..(i + 1) * k],
            d_sigma,
            &ws.d_rad,
            &mut grads.decoder,
            &mut ws.d_feat,
            &mut ws.dec_scratch,
        )?;
        let mut point_grad = [0.0; 3];
        scene
            .grid
            .backward_point(ws.points[i], &ws.d_feat, &mut grads.stacks, &mut point_grad)?;
        if with_camera {
            let t = ws.depths[i];
            for theta in 0..5 {
                grads.residual[theta] +=
                    dot(point_grad, jac.d_origin[theta]) + t * dot(point_grad, jac.d_dir[theta]);
            }
        }
    }
    Ok(())
}

fn chunk_ranges(len: usize, workers: usize) -> Vec<(usize, usize)> {
    let workers = workers.max(1);
    let base = len / workers;
    let rem = len % workers;
    let mut out = Vec::with_capacity(workers);
    let mut lo = 0;
    for i in 0..workers {
        let sz = base + usize::from(i < rem);
        out.push((lo, lo + sz));
        lo += sz;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;

    fn unit_ray() -> Ray {
        Ray {
            origin: [0.0, 0.0, 0.0],
            dir: [1.0, 0.0, 0.0],
            t_near: 0.0,
            t_far: 1.0,
        }
    }

    #[test]
    fn midpoint_samples_match_formula() {
        let (depths, deltas) = stratified_samples(&unit_ray(), 4, false, 0).unwrap();
        assert_eq!(depths, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(deltas.iter().all(|&d| (d - 0.25).abs() < 1e-15));
    }

    #[test]
    fn jittered_samples_are_increasing_in_range_and_reproducible() {
        for seed in [0u64, 1, 99] {
            let (a, _) = stratified_samples(&unit_ray(), 16, true, seed).unwrap();
            let (b, _) = stratified_samples(&unit_ray(), 16, true, seed).unwrap();
            assert_eq!(a, b);
            for w in a.windows(2) {
                assert!(w[0] < w[1]);
            }
            assert!(a.iter().all(|&t| (0.0..=1.0).contains(&t)));
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(stratified_samples(&unit_ray(), 1, false, 0).is_err());
    }

    #[test]
    fn zero_density_renders_nothing() {
        let field = |_p: Vec3, sigma: &mut f64, rad: &mut [f64]| {
            *sigma = 0.0;
            rad.fill(0.9);
            Ok(())
        };
        let cfg = RenderConfig {
            samples_per_ray: 32,
            ..Default::default()
        };
        let (rad, mask, _) = integrate_field(field, 3, &[unit_ray()], &cfg).unwrap();
        assert!(rad.iter().all(|&r| r == 0.0));
        assert_eq!(mask[0], 0.0);
    }

    #[test]
    fn homogeneous_medium_matches_analytic_transmittance() {
        // sigma = 2 over unit length: mask = 1 - exp(-2), radiance = f * mask
        let f = [0.3, 0.6, 0.9];
        let field = move |_p: Vec3, sigma: &mut f64, rad: &mut [f64]| {
            *sigma = 2.0;
            rad.copy_from_slice(&f);
            Ok(())
        };
        for n in [2usize, 7, 64, 333] {
            let cfg = RenderConfig {
                samples_per_ray: n,
                ..Default::default()
            };
            let (rad, mask, _) = integrate_field(field, 3, &[unit_ray()], &cfg).unwrap();
            let want = 1.0 - (-2.0f64).exp();
            assert!(
                (mask[0] - want).abs() < 1e-6,
                "n={n}: {} vs {want}",
                mask[0]
            );
            for c in 0..3 {
                assert!((rad[c] - f[c] * want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_segment_medium_matches_fine_quadrature_oracle() {
        // piecewise-constant density with the step aligned to a bin boundary
        let field = |p: Vec3, sigma: &mut f64, rad: &mut [f64]| {
            *sigma = if p[0] < 0.5 { 0.8 } else { 3.0 };
            rad[0] = if p[0] < 0.5 { 0.2 } else { 0.7 };
            Ok(())
        };
        let cfg = RenderConfig {
            samples_per_ray: 16,
            ..Default::default()
        };
        let (rad, mask, _) = integrate_field(field, 1, &[unit_ray()], &cfg).unwrap();
        // independent brute-force quadrature at 1e5 uniform steps
        let steps = 100_000usize;
        let dt = 1.0 / steps as f64;
        let mut t_acc = 1.0;
        let mut m = 0.0;
        let mut r = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) * dt;
            let s = if x < 0.5 { 0.8 } else { 3.0 };
            let f = if x < 0.5 { 0.2 } else { 0.7 };
            let a = 1.0 - (-s * dt).exp();
            m += t_acc * a;
            r += t_acc * a * f;
            t_acc *= 1.0 - a;
        }
        assert!((mask[0] - m).abs() < 1e-4, "{} vs {m}", mask[0]);
        assert!((rad[0] - r).abs() < 1e-4);
    }

    #[test]
    fn mask_plus_final_transmittance_is_one() {
        let scene = Scene::init(
            &SceneConfig {
                plane_height: 8,
                plane_width: 8,
                channels: 4,
                hidden: vec![16],
                image_height: 8,
                image_width: 8,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let cam = OrbitCamera::new(8, 8);
        let ray = cam.ray(3, 4);
        let cfg = RenderConfig {
            samples_per_ray: 48,
            ..Default::default()
        };
        // recompute transmittance independently
        let (depths, deltas) = stratified_samples(&ray, 48, false, 0).unwrap();
        let mut t_final = 1.0;
        let mut tape = DecoderTape::default();
        let mut feat = vec![0.0; 4];
        let mut rad = vec![0.0; 3];
        for i in 0..48 {
            let p = [
                ray.origin[0] + depths[i] * ray.dir[0],
                ray.origin[1] + depths[i] * ray.dir[1],
                ray.origin[2] + depths[i] * ray.dir[2],
            ];
            scene.grid.sample_point_into(p, &mut feat).unwrap();
            let sigma = scene.decoder.decode_into(&feat, &mut tape, &mut rad).unwrap();
            t_final *= (-sigma * deltas[i]).exp();
        }
        let (_, mask, _) = volume_render(&scene, &[ray], 1, 1, &cfg).unwrap();
        assert!((mask.data[0] + t_final - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composite_follows_the_blend_formula() {
        let raw = Raster::filled(2, 2, 1, 0.1);
        let mask = Raster::filled(2, 2, 1, 0.25);
        let bg = Raster::filled(2, 2, 1, 0.8);
        let out = composite(&raw, &mask, &bg).unwrap();
        for &v in &out.data {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let full = composite(&raw, &Raster::filled(2, 2, 1, 1.0), &bg).unwrap();
        assert_eq!(full.data, raw.data);
        let empty = composite(&Raster::zeros(2, 2, 1), &Raster::zeros(2, 2, 1), &bg).unwrap();
        assert_eq!(empty.data, bg.data);
    }

    #[test]
    fn composite_superposition_and_mask_affinity() {
        let mut r1 = Raster::zeros(2, 3, 2);
        let mut r2 = Raster::zeros(2, 3, 2);
        let mut m1 = Raster::zeros(2, 3, 1);
        let mut m2 = Raster::zeros(2, 3, 1);
        let mut bg = Raster::zeros(2, 3, 2);
        for (i, v) in r1.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs() * 0.5;
        }
        for (i, v) in r2.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.71).cos().abs() * 0.4;
        }
        for (i, v) in m1.data.iter_mut().enumerate() {
            *v = (i as f64) / 8.0;
        }
        for (i, v) in m2.data.iter_mut().enumerate() {
            *v = 1.0 - (i as f64) / 9.0;
        }
        for (i, v) in bg.data.iter_mut().enumerate() {
            *v = 0.2 + (i as f64) * 0.05;
        }
        // linear in radiance: C(r1 + r2) = C(r1) + C(r2) - C(0)
        let mut r_sum = r1.clone();
        for (a, b) in r_sum.data.iter_mut().zip(&r2.data) {
            *a += b;
        }
        let lhs = composite(&r_sum, &m1, &bg).unwrap();
        let c1 = composite(&r1, &m1, &bg).unwrap();
        let c2 = composite(&r2, &m1, &bg).unwrap();
        let c0 = composite(&Raster::zeros(2, 3, 2), &m1, &bg).unwrap();
        for i in 0..lhs.data.len() {
            assert!((lhs.data[i] - (c1.data[i] + c2.data[i] - c0.data[i])).abs() < 1e-12);
        }
        // affine in the mask: C(alpha m1 + (1-alpha) m2) interpolates
        let alpha = 0.3;
        let mut m_mix = m1.clone();
        for (a, b) in m_mix.data.iter_mut().zip(&m2.data) {
            *a = alpha * *a + (1.0 - alpha) * b;
        }
        let mixed = composite(&r1, &m_mix, &bg).unwrap();
        let ca = composite(&r1, &m1, &bg).unwrap();
        let cb = composite(&r1, &m2, &bg).unwrap();
        for i in 0..mixed.data.len() {
            let want = alpha * ca.data[i] + (1.0 - alpha) * cb.data[i];
            assert!((mixed.data[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_constant_and_identity() {
        let img = Raster::filled(3, 5, 2, 0.42);
        let up = bilinear_upsample(&img, 3).unwrap();
        assert_eq!(up.height, 9);
        assert_eq!(up.width, 15);
        assert!(up.data.iter().all(|&v| (v - 0.42).abs() < 1e-12));
        let same = bilinear_upsample(&img, 1).unwrap();
        assert_eq!(same, img);
        assert!(bilinear_upsample(&img, 0).is_err());
    }

    #[test]
    fn upsample_ramp_matches_weight_expansion_oracle() {
        let mut img = Raster::zeros(2, 2, 1);
        img.set(0, 0, 0, 0.0);
        img.set(0, 1, 0, 1.0);
        img.set(1, 0, 0, 2.0);
        img.set(1, 1, 0, 3.0);
        let up = bilinear_upsample(&img, 2).unwrap();
        // independent oracle: explicit corner weights per output pixel
        for r in 0..4 {
            for c in 0..4 {
                let y = ((r as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let x = ((c as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
                let y0 = y.floor().min(0.0) as usize;
                let x0 = x.floor().min(0.0) as usize;
                let fy = y - y0 as f64;
                let fx = x - x0 as f64;
                let want = img.get(y0, x0, 0) * (1.0 - fx) * (1.0 - fy)
                    + img.get(y0, x0 + 1, 0) * fx * (1.0 - fy)
                    + img.get(y0 + 1, x0, 0) * (1.0 - fx) * fy
                    + img.get(y0 + 1, x0 + 1, 0) * fx * fy;
                assert!(
                    (up.get(r, c, 0) - want).abs() < 1e-6,
                    "pixel ({r},{c}): {} vs {want}",
                    up.get(r, c, 0)
                );
            }
        }
    }

    #[test]
    fn discriminator_input_has_seven_channels_in_order() {
        let i_up = Raster::filled(4, 4, 3, 0.1);
        let i_plus = Raster::filled(4, 4, 3, 0.2);
        let mask = Raster::filled(4, 4, 1, 0.9);
        let out = assemble_discriminator_input(&i_up, &i_plus, &mask).unwrap();
        assert_eq!(out.channels, 7);
        for pix in 0..16 {
            for c in 0..3 {
                assert_eq!(out.data[pix * 7 + c].to_bits(), 0.1f64.to_bits());
                assert_eq!(out.data[pix * 7 + 3 + c].to_bits(), 0.2f64.to_bits());
            }
            assert_eq!(out.data[pix * 7 + 6].to_bits(), 0.9f64.to_bits());
        }
        let small = Raster::filled(2, 2, 3, 0.0);
        assert!(assemble_discriminator_input(&small, &i_plus, &mask).is_err());
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let scene = Scene::init(
            &SceneConfig {
                plane_height: 8,
                plane_width: 8,
                channels: 4,
                hidden: vec![16],
                image_height: 4,
                image_width: 4,
                ..Default::default()
            },
            8,
        )
        .unwrap();
        let cam = OrbitCamera::new(4, 4);
        let cfg = RenderConfig {
            samples_per_ray: 8,
            ..Default::default()
        };
        let d_rad = Raster::zeros(4, 4, 3);
        let d_mask = Raster::zeros(4, 4, 1);
        let grads = volume_render_backward(&scene, &cam, &d_rad, &d_mask, &cfg, true).unwrap();
        assert!(grads.stacks.iter().all(|s| s.iter().all(|&x| x == 0.0)));
        assert!(grads.residual.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn render_is_parallel_invariant() {
        let scene = Scene::init(
            &SceneConfig {
                plane_height: 8,
                plane_width: 8,
                channels: 4,
                hidden: vec![16],
                image_height: 8,
                image_width: 8,
                ..Default::default()
            },
            13,
        )
        .unwrap();
        let cam = OrbitCamera::new(8, 8);
        let base = RenderConfig {
            samples_per_ray: 16,
            jitter: true,
            seed: 3,
            workers: 1,
            ..Default::default()
        };
        let one = render(&scene, &cam, &base).unwrap();
        let four = render(
            &scene,
            &cam,
            &RenderConfig {
                workers: 4,
                ..base
            },
        )
        .unwrap();
        assert_eq!(one.composite.data, four.composite.data);
        assert_eq!(one.mask.data, four.mask.data);
    }
}
