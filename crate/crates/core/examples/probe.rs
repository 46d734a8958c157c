//! Development probe: loads a checkpoint and reports the acceptance-facing
//! quality numbers (held-out PSNR/RMSE/delta1, mesh radius, importance
//! concentration) without running the full suite.

use odf_recon::field::FieldModel;
use odf_recon::io::{load_checkpoint, load_dataset};
use odf_recon::math;
use odf_recon::metrics::{depth_metrics, psnr};
use odf_recon::oracle::scene_odf;
use odf_recon::rays::{generate_ray, importance_bin_weights, importance_samples,
    stratified_samples};
use odf_recon::render::{extract_isosurface, mix_seed, ray_weights, render_image, BoundField,
    ImageRenderConfig, SampleField};
use odf_recon::scenes::ScenePreset;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = &args[1];
    let test_data = &args[2];

    let (params, cfg, enc) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();
    let model = FieldModel::new(cfg, enc).unwrap();
    let dataset = load_dataset(std::path::Path::new(test_data)).unwrap();
    let scene = ScenePreset::Sphere.scene();
    let values = params.values();

    let field = BoundField::new(&model, values);
    let img_cfg = ImageRenderConfig {
        coarse_samples: 64,
        fine_samples: 64,
        near: dataset.near,
        far: dataset.far,
        truncation: cfg.truncation_distance,
        background: [0.0; 3],
        seed: 77,
    };
    let mut psnr_sum = 0.0;
    let mut rmse_sum = 0.0;
    let mut d1_sum = 0.0;
    let mut bias_sum = 0.0;
    let mut bias_n = 0usize;
    for frame in &dataset.frames {
        let (rgb, depth) = render_image(&field, &dataset.intrinsics, &frame.pose, &img_cfg).unwrap();
        psnr_sum += psnr(&rgb, &frame.rgb).unwrap();
        let dm = depth_metrics(&depth.depths, &frame.depth.depths, &frame.depth.validity_mask())
            .unwrap();
        rmse_sum += dm.rmse;
        d1_sum += dm.delta1;
        for (p, r) in depth.depths.iter().zip(&frame.depth.depths) {
            if *r > 0.0 {
                bias_sum += p - r;
                bias_n += 1;
            }
        }
    }
    let n = dataset.frames.len() as f64;
    println!(
        "held-out: psnr {:.2} dB, rmse {:.4}, delta1 {:.4}, signed depth bias {:+.4}",
        psnr_sum / n,
        rmse_sum / n,
        d1_sum / n,
        bias_sum / bias_n as f64
    );

    // Mesh radius.
    let mesh = extract_isosurface(
        |x| {
            let mut s = odf_recon::field::EvalScratch::default();
            model.eval_tsdf_head(values, x, &mut s).unwrap()
        },
        cfg.scene_bound,
        64,
        0.0,
    )
    .unwrap();
    if mesh.vertices.is_empty() {
        println!("mesh: EMPTY");
    } else {
        let mean_r: f64 =
            mesh.vertices.iter().map(|v| math::norm(*v)).sum::<f64>() / mesh.vertices.len() as f64;
        println!(
            "mesh: {} vertices, mean radius {:.4} (budget 1 +/- {:.4})",
            mesh.vertices.len(),
            mean_r,
            2.0 * 2.0 * cfg.scene_bound / 64.0
        );
    }

    // Importance concentration over 1000 hitting rays.
    let tr = cfg.truncation_distance;
    let mut field = BoundField::new(&model, values);
    let mut fractions = Vec::new();
    'outer: for (fi, frame) in dataset.frames.iter().enumerate() {
        for py in 0..dataset.intrinsics.height {
            for px in 0..dataset.intrinsics.width {
                if frame.depth.get(px, py) <= 0.0 {
                    continue;
                }
                let ray = generate_ray(
                    &dataset.intrinsics,
                    &frame.pose,
                    (px as f64, py as f64),
                    dataset.near,
                    dataset.far,
                )
                .unwrap();
                let t_hit = scene_odf(&scene, ray.origin, ray.direction).unwrap();
                let seed = mix_seed(1234, (fi * 10000 + py * 100 + px) as u64);
                let coarse = stratified_samples(&ray, 64, seed);
                let fs: Vec<f64> = coarse
                    .iter()
                    .map(|&t| field.sample(ray.point_at(t), ray.direction).0)
                    .collect();
                let weights = ray_weights(&fs, tr);
                let bins = importance_bin_weights(&weights);
                let fine = importance_samples(&coarse, &bins, 64, mix_seed(seed, 7)).unwrap();
                let inside = fine.iter().filter(|&&t| (t - t_hit).abs() <= tr).count();
                fractions.push(inside as f64 / fine.len() as f64);
                if fractions.len() >= 1000 {
                    break 'outer;
                }
            }
        }
    }
    let mean_frac: f64 = fractions.iter().sum::<f64>() / fractions.len() as f64;
    println!(
        "concentration: {:.1}% of fine samples within +/-tr ({} rays)",
        100.0 * mean_frac,
        fractions.len()
    );

    if args.len() > 3 && args[3] == "rays" {
        // Profile f/color/weight along three probe rays of frame 0.
        let frame = &dataset.frames[0];
        let h = dataset.intrinsics.height;
        let w = dataset.intrinsics.width;
        // center pixel, a ring pixel (first miss adjacent to a hit), a far miss
        let mut ring = (0, 0);
        'ring: for y in 0..h {
            for x in 1..w {
                if frame.depth.get(x - 1, y) > 0.0 && frame.depth.get(x, y) <= 0.0 {
                    ring = (x, y);
                    break 'ring;
                }
            }
        }
        for (label, px, py) in [
            ("center-hit", w / 2, h / 2),
            ("ring-miss", ring.0, ring.1),
            ("far-miss", 1, 1),
        ] {
            let ray = generate_ray(
                &dataset.intrinsics,
                &frame.pose,
                (px as f64, py as f64),
                dataset.near,
                dataset.far,
            )
            .unwrap();
            let gt_hit = scene_odf(&scene, ray.origin, ray.direction);
            println!(
                "ray {label} px({px},{py}) gt_depth={:?} gt_rgb={:?}",
                gt_hit,
                frame.rgb.get(px, py)
            );
            let n = 30;
            for i in 0..n {
                let t = dataset.near + (dataset.far - dataset.near) * (i as f64 + 0.5) / n as f64;
                let (f, c) = field.sample(ray.point_at(t), ray.direction);
                println!(
                    "  t={t:.3} f={f:+.4} w={:.4} rgb=({:.2},{:.2},{:.2})",
                    odf_recon::render::odf_weight(f, tr),
                    c[0], c[1], c[2]
                );
            }
        }
    }
}
