//! Scratch harness for dialing in fitting hyperparameters on the proxy
//! experiments before freezing thresholds. Not part of the test suite.

use std::time::Instant;
use trigrid::fit::{evaluate_views, fit_scene, FitConfig, TrainView};
use trigrid::io::{split_for_yaw, ViewSplit};
use trigrid::scene::{Scene, SceneConfig};
use trigrid::synth::{make_dataset, NoiseConfig, ProxyScene};

fn views_from_bundle(bundle: &trigrid::synth::DatasetBundle, use_true: bool) -> Vec<TrainView> {
    bundle
        .views
        .iter()
        .map(|v| TrainView {
            id: v.id.clone(),
            rgb: v.rgb.clone(),
            mask: v.mask.clone(),
            camera: if use_true { v.true_camera } else { v.label_camera },
        })
        .collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("basic");
    let iters: usize = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let d: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let plane: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let samples: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(48);
    let batch: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let hidden: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(64);
    let density_bias: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let channels: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(8);

    let proxy = ProxyScene::default();
    match mode {
        "basic" => {
            // 16 train views + 8 held-out, exact labels
            let bundle = make_dataset(&proxy, 24, 64, &NoiseConfig::default(), 7).unwrap();
            let all = views_from_bundle(&bundle, false);
            let train: Vec<TrainView> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 3 != 2)
                .map(|(_, v)| v.clone())
                .collect();
            let heldout: Vec<TrainView> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 3 == 2)
                .map(|(_, v)| v.clone())
                .collect();
            eprintln!("train {} heldout {}", train.len(), heldout.len());
            let scene_cfg = SceneConfig {
                depth: d,
                plane_height: plane,
                plane_width: plane,
                channels,
                hidden: vec![hidden],
                image_height: 64,
                image_width: 64,
                ..Default::default()
            };
            let mut init = Scene::init(&scene_cfg, 1).unwrap();
            let out_layer = init.decoder.layers.len() - 1;
            init.decoder.layers[out_layer].bias[0] = density_bias;
            let lr_decay: f64 = std::env::var("LR_DECAY").ok().and_then(|s| s.parse().ok()).unwrap_or(1.0);
            let cfg = FitConfig {
                iters,
                lr_scene: lr,
                lr_decay,
                samples_per_ray: samples,
                batch_pixels: batch,
                workers: 1,
                log_every: 200,
                ..Default::default()
            };
            let t0 = Instant::now();
            let out = fit_scene(&train, &cfg, &init).unwrap();
            eprintln!("fit took {:.1?}s", t0.elapsed());
            let (psnr, mask_mse) = evaluate_views(&out.scene, &heldout, 64, 0).unwrap();
            let mean: f64 = psnr.values().sum::<f64>() / psnr.len() as f64;
            for (id, p) in &psnr {
                let split = heldout
                    .iter()
                    .find(|v| &v.id == id)
                    .map(|v| split_for_yaw(v.camera.yaw))
                    .unwrap();
                eprintln!("  {id}: {p:.2} dB ({split:?})");
            }
            eprintln!("heldout mean PSNR {mean:.2} dB, mask MSE {mask_mse:.5}");
            let front: Vec<f64> = heldout
                .iter()
                .filter(|v| split_for_yaw(v.camera.yaw) == ViewSplit::Front)
                .map(|v| psnr[&v.id])
                .collect();
            let back: Vec<f64> = heldout
                .iter()
                .filter(|v| split_for_yaw(v.camera.yaw) == ViewSplit::Back)
                .map(|v| psnr[&v.id])
                .collect();
            eprintln!(
                "front mean {:.2}  back mean {:.2}",
                front.iter().sum::<f64>() / front.len().max(1) as f64,
                back.iter().sum::<f64>() / back.len().max(1) as f64
            );
        }
        "ablate" => {
            // 32 uniform views; train favors the front the way in-the-wild
            // face data does: 12 front + 4 back; held out 3 front + 4 back
            let bundle = make_dataset(&proxy, 36, 64, &NoiseConfig::default(), 7).unwrap();
            let all = views_from_bundle(&bundle, false);
            let split = std::env::var("SPLIT").unwrap_or_else(|_| "biased".into());
            let (train_ids, held_ids): (Vec<usize>, Vec<usize>) = match split.as_str() {
                // front-heavy training mirroring in-the-wild portrait data
                "biased" => (
                    vec![0, 1, 2, 3, 5, 6, 28, 29, 30, 31, 34, 35, 12, 16, 20, 24],
                    vec![4, 8, 32, 14, 18, 22, 26],
                ),
                // balanced coverage of the full orbit
                "balanced" => (
                    (0..32).step_by(2).collect(),
                    vec![1, 5, 33, 15, 17, 19, 25],
                ),
                other => panic!("unknown SPLIT {other}"),
            };
            let train: Vec<TrainView> = train_ids.iter().map(|&i| all[i].clone()).collect();
            eprintln!("split {split}: train {} heldout {}", train_ids.len(), held_ids.len());
            let heldout: Vec<TrainView> = held_ids.iter().map(|&i| all[i].clone()).collect();
            let lr_decay: f64 = std::env::var("LR_DECAY")
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0.1);
            let cfg = FitConfig {
                iters,
                lr_scene: lr,
                lr_decay,
                samples_per_ray: samples,
                batch_pixels: batch,
                workers: 1,
                log_every: 400,
                ..Default::default()
            };
            let d1_plane: usize = (plane as f64 * 3f64.sqrt()).round() as usize;
            let mk = |depth: usize, pl: usize| {
                let mut s = Scene::init(
                    &SceneConfig {
                        depth,
                        plane_height: pl,
                        plane_width: pl,
                        channels,
                        hidden: vec![hidden],
                        image_height: 64,
                        image_width: 64,
                        ..Default::default()
                    },
                    1,
                )
                .unwrap();
                let ol = s.decoder.layers.len() - 1;
                s.decoder.layers[ol].bias[0] = density_bias;
                s
            };
            let t0 = Instant::now();
            let table = trigrid::fit::ablate_representation(
                &train,
                &heldout,
                &cfg,
                &mk(1, d1_plane),
                &mk(d, plane),
            )
            .unwrap();
            eprintln!("ablation took {:.1?}", t0.elapsed());
            eprintln!("{}", table.text_table());
            eprintln!(
                "back gap {:.2} dB, front gap {:.2} dB",
                table.d3_back_psnr - table.d1_back_psnr,
                (table.d3_front_psnr - table.d1_front_psnr).abs()
            );
        }
        other => {
            eprintln!("unknown mode {other}");
        }
    }
}
