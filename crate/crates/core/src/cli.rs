//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! failure. Every randomized subcommand takes `--seed` and produces
//! byte-identical outputs for identical invocations.

use crate::autodiff::grad_check_sampled;
use crate::field::{ArchitectureVariant, EncodingConfig, FieldConfig, FieldModel};
use crate::io::{
    load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_atomic, write_obj,
    write_pfm, write_ppm, SceneDataset,
};
use crate::loss::LossWeights;
use crate::metrics::{depth_metrics, psnr};
use crate::oracle::{bias_grazing_ray_demo, bias_multiview_demo, unit_sphere_scene};
use crate::rays::Pose;
use crate::render::{extract_isosurface, render_image, BoundField, ImageRenderConfig};
use crate::scenes::{generate_dataset, ScenePreset};
use crate::trainer::{freeze_batch, frozen_batch_gradient, frozen_batch_loss, train, LossRecord,
    TrainConfig};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
odf-recon: hybrid distance/radiance field surface reconstruction

USAGE:
  odf-recon <command> [options]

COMMANDS:
  gen-scene     render an analytic preset into an RGB-D dataset
                --preset {sphere|box|room} --views N --res N --out DIR [--seed N]
  train         fit the field to a dataset
                --data DIR --out DIR [--config FILE] [--iters N] [--batch N]
                [--lr F] [--tr F] [--lambda-c F] [--lambda-d F] [--lambda-odf F]
                [--pc N] [--pf N] [--seed N] [--variant {hybrid|rendering-head|feature-head}]
                [--width N] [--pos-depth N] [--dir-depth N] [--kpos N] [--kdir N]
                [--log-interval N] [--cosine-lr]
  render        render color + depth images from a checkpoint at a dataset pose
                --ckpt FILE --data DIR --frame I --out DIR [--pc N] [--pf N] [--seed N]
  eval          metrics table (PSNR, RMSE, Abs Rel, Sq Rel, delta1-3) over a dataset
                --ckpt FILE --data DIR [--out FILE] [--pc N] [--pf N] [--seed N]
  demo-bias     print the grazing-ray and multi-view bias demonstrations
                [--tr F] [--epsilon F] [--slope F]
  extract-mesh  marching-cubes mesh of the distance head's zero level set
                --ckpt FILE --out FILE [--res N] [--level F] [--dirs N]
  grad-check    verify analytic gradients against central finite differences
                [--seed N] [--batches N] [--step F]
";

/// Parses and runs a full command line (excluding the program name), and
/// returns the process exit code.
pub fn cli_dispatch(argv: &[String]) -> i32 {
    match run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                eprintln!("\n{USAGE}");
            }
            e.exit_code()
        }
    }
}

fn run(argv: &[String]) -> Result<()> {
    let Some(command) = argv.first() else {
        return Err(Error::Usage("no command given".into()));
    };
    let args = Args::parse(&argv[1..])?;
    match command.as_str() {
        "gen-scene" => cmd_gen_scene(args),
        "train" => cmd_train(args),
        "render" => cmd_render(args),
        "eval" => cmd_eval(args),
        "demo-bias" => cmd_demo_bias(args),
        "extract-mesh" => cmd_extract_mesh(args),
        "grad-check" => cmd_grad_check(args),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(Error::Usage(format!("unknown command '{other}'"))),
    }
}

/// Minimal `--flag value` / `--flag` argument list.
struct Args {
    pairs: Vec<(String, Option<String>)>,
}

impl Args {
    fn parse(raw: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut it = raw.iter().peekable();
        while let Some(tok) = it.next() {
            let Some(name) = tok.strip_prefix("--") else {
                return Err(Error::Usage(format!("unexpected argument '{tok}'")));
            };
            let value = match it.peek() {
                Some(v) if !v.starts_with("--") => Some(it.next().unwrap().clone()),
                _ => None,
            };
            pairs.push((name.to_string(), value));
        }
        Ok(Args { pairs })
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.pairs
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn flag(&self, name: &str) -> bool {
        self.pairs.iter().any(|(n, _)| n == name)
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.get(name)
            .ok_or_else(|| Error::Usage(format!("missing required flag --{name}")))
    }

    fn parse_num<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.get(name) {
            None => Ok(None),
            Some(s) => s
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Usage(format!("cannot parse --{name} value '{s}'"))),
        }
    }

    fn num_or<T: std::str::FromStr + Copy>(&self, name: &str, default: T) -> Result<T> {
        Ok(self.parse_num(name)?.unwrap_or(default))
    }
}

fn cmd_gen_scene(args: Args) -> Result<()> {
    let preset = ScenePreset::parse(args.required("preset")?)?;
    let views: usize = args.num_or("views", 20)?;
    let res: usize = args.num_or("res", 32)?;
    let seed: u64 = args.num_or("seed", 0)?;
    let out = PathBuf::from(args.required("out")?);
    let dataset = generate_dataset(preset, views, res, seed)?;
    save_dataset(&dataset, &out)?;
    println!(
        "wrote {} views of preset '{}' at {res}x{res} to {}",
        views,
        preset.name(),
        out.display()
    );
    Ok(())
}

/// Optional values loaded from a JSON config file; command-line flags
/// override these, which override the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    tr: Option<f64>,
    lambda_c: Option<f64>,
    lambda_d: Option<f64>,
    lambda_odf: Option<f64>,
    pc: Option<usize>,
    pf: Option<usize>,
    seed: Option<u64>,
    variant: Option<String>,
    width: Option<usize>,
    pos_depth: Option<usize>,
    dir_depth: Option<usize>,
    kpos: Option<u32>,
    kdir: Option<u32>,
    log_interval: Option<usize>,
    cosine_lr: Option<bool>,
}

fn cmd_train(args: Args) -> Result<()> {
    let data = PathBuf::from(args.required("data")?);
    let out = PathBuf::from(args.required("out")?);
    let dataset = load_dataset(&data)?;

    let file_cfg: TrainFileConfig = match args.get("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("cannot read config {path}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("malformed config {path}: {e}")))?
        }
        None => TrainFileConfig::default(),
    };

    let pick_usize = |name: &str, file: Option<usize>, default: usize| -> Result<usize> {
        Ok(args.parse_num(name)?.or(file).unwrap_or(default))
    };
    let pick_f64 = |name: &str, file: Option<f64>, default: f64| -> Result<f64> {
        Ok(args.parse_num(name)?.or(file).unwrap_or(default))
    };

    let variant = match args.get("variant").map(str::to_owned).or(file_cfg.variant) {
        Some(v) => ArchitectureVariant::parse(&v)?,
        None => ArchitectureVariant::HybridDefault,
    };
    let field_cfg = FieldConfig {
        variant,
        hidden_width: pick_usize("width", file_cfg.width, 64)?,
        position_mlp_depth: pick_usize("pos-depth", file_cfg.pos_depth, 4)?,
        direction_branch_depth: pick_usize("dir-depth", file_cfg.dir_depth, 2)?,
        truncation_distance: pick_f64(
            "tr",
            file_cfg.tr,
            FieldConfig::default_truncation(dataset.scene_bound),
        )?,
        scene_bound: dataset.scene_bound,
    };
    let enc = EncodingConfig {
        position_frequencies: args.parse_num("kpos")?.or(file_cfg.kpos).unwrap_or(6),
        direction_frequencies: args.parse_num("kdir")?.or(file_cfg.kdir).unwrap_or(4),
        include_raw_input: true,
    };
    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        iterations: pick_usize("iters", file_cfg.iters, defaults.iterations)?,
        batch_rays: pick_usize("batch", file_cfg.batch, defaults.batch_rays)?,
        learning_rate: pick_f64("lr", file_cfg.lr, defaults.learning_rate)?,
        coarse_samples: pick_usize("pc", file_cfg.pc, defaults.coarse_samples)?,
        fine_samples: pick_usize("pf", file_cfg.pf, defaults.fine_samples)?,
        loss_weights: LossWeights {
            color: pick_f64("lambda-c", file_cfg.lambda_c, 1.0)?,
            depth: pick_f64("lambda-d", file_cfg.lambda_d, 0.1)?,
            odf: pick_f64("lambda-odf", file_cfg.lambda_odf, 1.0)?,
        },
        background: [0.0; 3],
        seed: args.parse_num("seed")?.or(file_cfg.seed).unwrap_or(0),
        log_interval: pick_usize("log-interval", file_cfg.log_interval, defaults.log_interval)?,
        cosine_lr_decay: args.flag("cosine-lr") || file_cfg.cosine_lr.unwrap_or(false),
        min_consistency_weight: 0.0,
    };
    train_cfg.validate()?;

    let model = FieldModel::new(field_cfg, enc)?;
    eprintln!(
        "training {} parameters for {} iterations ({} rays/step)",
        model.param_count(),
        train_cfg.iterations,
        train_cfg.batch_rays
    );
    let (params, history, failure) = match train(&dataset, &model, &train_cfg) {
        Ok(outcome) => (outcome.params, outcome.history, None),
        Err(abort) => {
            let msg = abort.to_string();
            (abort.last_params, abort.history, Some(msg))
        }
    };

    std::fs::create_dir_all(&out)?;
    if params.len() == model.param_count() {
        save_checkpoint(&params, &field_cfg, &enc, &out.join("checkpoint.odfn"))?;
    }
    let mut csv = String::from(LossRecord::csv_header());
    csv.push('\n');
    for rec in &history {
        csv.push_str(&rec.to_csv_row());
        csv.push('\n');
    }
    write_atomic(&out.join("loss_history.csv"), csv.as_bytes())?;

    match failure {
        Some(msg) => Err(Error::Numerical(format!(
            "{msg}; last checkpoint retained in {}",
            out.display()
        ))),
        None => {
            if let Some(last) = history.last() {
                println!(
                    "final loss {:.6} (color {:.6}, depth {:.6})",
                    last.breakdown.total, last.breakdown.color, last.breakdown.depth
                );
            }
            println!("checkpoint written to {}", out.join("checkpoint.odfn").display());
            Ok(())
        }
    }
}

fn image_config(args: &Args, dataset: &SceneDataset, tr: f64) -> Result<ImageRenderConfig> {
    Ok(ImageRenderConfig {
        coarse_samples: args.num_or("pc", 64)?,
        fine_samples: args.num_or("pf", 64)?,
        near: dataset.near,
        far: dataset.far,
        truncation: tr,
        background: [0.0; 3],
        seed: args.num_or("seed", 0)?,
    })
}

fn cmd_render(args: Args) -> Result<()> {
    let (params, cfg, enc) = load_checkpoint(Path::new(args.required("ckpt")?))?;
    let dataset = load_dataset(Path::new(args.required("data")?))?;
    let frame: usize = args.num_or("frame", 0)?;
    let out = PathBuf::from(args.required("out")?);
    if frame >= dataset.frames.len() {
        return Err(Error::Usage(format!(
            "frame {frame} out of range (dataset has {})",
            dataset.frames.len()
        )));
    }
    let model = FieldModel::new(cfg, enc)?;
    let field = BoundField::new(&model, params.values());
    let img_cfg = image_config(&args, &dataset, cfg.truncation_distance)?;
    let (rgb, depth) = render_image(&field, &dataset.intrinsics, &dataset.frames[frame].pose, &img_cfg)?;
    std::fs::create_dir_all(&out)?;
    write_ppm(&out.join(format!("render_{frame:04}.ppm")), &rgb)?;
    write_pfm(&out.join(format!("render_{frame:04}.pfm")), &depth)?;
    println!("rendered frame {frame} to {}", out.display());
    Ok(())
}

/// Renders every dataset frame and tabulates PSNR plus the depth metrics;
/// one CSV row per view and a final mean row.
pub fn evaluation_table(
    dataset: &SceneDataset,
    model: &FieldModel,
    params: &[f64],
    img_cfg: &ImageRenderConfig,
) -> Result<String> {
    let field = BoundField::new(model, params);
    let mut table = String::from("view,psnr,rmse,abs_rel,sq_rel,delta1,delta2,delta3\n");
    let mut sums = [0.0f64; 7];
    for (i, frame) in dataset.frames.iter().enumerate() {
        let (rgb, depth) = render_image(&field, &dataset.intrinsics, &frame.pose, img_cfg)?;
        let p = psnr(&rgb, &frame.rgb)?;
        let dm = depth_metrics(&depth.depths, &frame.depth.depths, &frame.depth.validity_mask())?;
        let row = [p, dm.rmse, dm.abs_rel, dm.sq_rel, dm.delta1, dm.delta2, dm.delta3];
        for (s, v) in sums.iter_mut().zip(&row) {
            *s += v;
        }
        writeln!(
            table,
            "{i},{},{},{},{},{},{},{}",
            row[0], row[1], row[2], row[3], row[4], row[5], row[6]
        )
        .expect("string write");
    }
    let n = dataset.frames.len() as f64;
    writeln!(
        table,
        "mean,{},{},{},{},{},{},{}",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n,
        sums[4] / n,
        sums[5] / n,
        sums[6] / n
    )
    .expect("string write");
    Ok(table)
}

fn cmd_eval(args: Args) -> Result<()> {
    let (params, cfg, enc) = load_checkpoint(Path::new(args.required("ckpt")?))?;
    let dataset = load_dataset(Path::new(args.required("data")?))?;
    let model = FieldModel::new(cfg, enc)?;
    let img_cfg = image_config(&args, &dataset, cfg.truncation_distance)?;
    let table = evaluation_table(&dataset, &model, params.values(), &img_cfg)?;
    match args.get("out") {
        Some(path) => {
            write_atomic(Path::new(path), table.as_bytes())?;
            println!("metrics written to {path}");
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_demo_bias(args: Args) -> Result<()> {
    let tr: f64 = args.num_or("tr", 0.1)?;
    let epsilon: f64 = args.num_or("epsilon", 0.01)?;
    let slope: f64 = args.num_or("slope", 0.01)?;

    println!("grazing-ray weight bias (plane z=0, point at height epsilon)");
    println!("epsilon,slope,tr,along_ray_distance,sdf_weight,odf_weight,ratio");
    for s in [slope, 1.0] {
        let b = bias_grazing_ray_demo(tr, epsilon, s)?;
        println!(
            "{epsilon},{s},{tr},{},{},{},{}",
            b.along_ray_distance, b.sdf_weight, b.odf_weight, b.ratio
        );
    }

    println!();
    println!("multi-view distance ambiguity (unit sphere, interior point P)");
    let scene = unit_sphere_scene();
    let p = [0.9, 0.0, 0.0];
    let poses = [
        Pose::look_at([-2.0, 0.0, 0.0], p, [0.0, 0.0, 1.0])?,
        Pose::look_at([2.0, 0.0, 0.0], p, [0.0, 0.0, 1.0])?,
    ];
    let demo = bias_multiview_demo(&scene, p, &poses)?;
    println!("view,along_ray_estimate");
    for (view, est) in &demo.estimates {
        println!("{view},{est}");
    }
    for view in &demo.excluded_views {
        eprintln!("warning: view {view} reaches P before any surface; excluded");
    }
    println!("spread,{}", demo.spread);
    println!("true_sdf,{}", demo.true_sdf);
    Ok(())
}

fn cmd_extract_mesh(args: Args) -> Result<()> {
    let (params, cfg, enc) = load_checkpoint(Path::new(args.required("ckpt")?))?;
    let out = PathBuf::from(args.required("out")?);
    let res: usize = args.num_or("res", 64)?;
    let level: f64 = args.num_or("level", 0.0)?;
    let dirs: usize = args.num_or("dirs", 64)?;
    let model = FieldModel::new(cfg, enc)?;
    let values = params.values();

    let mesh = if cfg.variant == ArchitectureVariant::HybridDefault {
        extract_isosurface(
            |x| {
                let mut scratch = crate::field::EvalScratch::default();
                model.eval_tsdf_head(values, x, &mut scratch).unwrap_or(f64::MAX)
            },
            cfg.scene_bound,
            res,
            level,
        )?
    } else {
        // Variants without a position-only head fall back to the direction
        // minimum.
        extract_isosurface(
            |x| {
                let mut scratch = crate::field::EvalScratch::default();
                model
                    .tsdf_via_direction_min(values, x, dirs, &mut scratch)
                    .unwrap_or(f64::MAX)
            },
            cfg.scene_bound,
            res,
            level,
        )?
    };
    write_obj(&out, &mesh)?;
    println!(
        "wrote {} vertices / {} triangles to {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        out.display()
    );
    Ok(())
}

/// Gradient verification suite: freezes random mini-batches of the full
/// training loss on a synthetic scene and compares the tape gradient with
/// central finite differences.
pub fn grad_check_suite(seed: u64, batches: usize, fd_step: f64) -> Result<f64> {
    let dataset = generate_dataset(ScenePreset::Sphere, 4, 8, mix(seed, 1))?;

    // Full-scale model, sampled parameter subset per batch.
    let field_cfg = FieldConfig {
        truncation_distance: FieldConfig::default_truncation(dataset.scene_bound),
        scene_bound: dataset.scene_bound,
        ..FieldConfig::default()
    };
    let model = FieldModel::new(field_cfg, EncodingConfig::default())?;
    let train_cfg = TrainConfig {
        batch_rays: 4,
        coarse_samples: 8,
        fine_samples: 8,
        ..TrainConfig::default()
    };

    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2));
    for batch_idx in 0..batches {
        let params = model.init_params(mix(seed, 100 + batch_idx as u64));
        let batch = freeze_batch(&dataset, &model, params.values(), &train_cfg, batch_idx);
        let (_, analytic) = frozen_batch_gradient(&model, params.values(), &batch, &train_cfg)?;
        let indices: Vec<usize> = (0..128).map(|_| rng.gen_range(0..params.len())).collect();
        let report = grad_check_sampled(
            |p| frozen_batch_loss(&model, p, &batch, &train_cfg),
            params.values(),
            &analytic,
            fd_step,
            &indices,
        )?;
        println!(
            "batch {batch_idx}: max relative error {:.3e} (parameter {}, {} checked)",
            report.max_rel_error, report.worst_index, report.checked
        );
        worst = worst.max(report.max_rel_error);
    }

    // Small model, every parameter checked.
    let small_cfg = FieldConfig {
        hidden_width: 10,
        position_mlp_depth: 2,
        direction_branch_depth: 1,
        truncation_distance: FieldConfig::default_truncation(dataset.scene_bound),
        scene_bound: dataset.scene_bound,
        ..FieldConfig::default()
    };
    let small_enc = EncodingConfig {
        position_frequencies: 2,
        direction_frequencies: 1,
        include_raw_input: true,
    };
    let small = FieldModel::new(small_cfg, small_enc)?;
    let params = small.init_params(mix(seed, 3));
    let batch = freeze_batch(&dataset, &small, params.values(), &train_cfg, 0);
    let (_, analytic) = frozen_batch_gradient(&small, params.values(), &batch, &train_cfg)?;
    let all: Vec<usize> = (0..params.len()).collect();
    let report = grad_check_sampled(
        |p| frozen_batch_loss(&small, p, &batch, &train_cfg),
        params.values(),
        &analytic,
        fd_step,
        &all,
    )?;
    println!(
        "small model (all {} parameters): max relative error {:.3e}",
        report.checked, report.max_rel_error
    );
    worst = worst.max(report.max_rel_error);
    Ok(worst)
}

fn mix(a: u64, b: u64) -> u64 {
    crate::render::mix_seed(a, b)
}

fn cmd_grad_check(args: Args) -> Result<()> {
    let seed: u64 = args.num_or("seed", 0)?;
    let batches: usize = args.num_or("batches", 10)?;
    let step: f64 = args.num_or("step", 1e-5)?;
    let worst = grad_check_suite(seed, batches, step)?;
    println!("overall max relative error: {worst:.3e}");
    if worst < 1e-4 {
        println!("gradient check PASSED (threshold 1e-4)");
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {worst:.3e} >= 1e-4"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn no_arguments_is_a_usage_error() {
        assert_eq!(cli_dispatch(&[]), 1);
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        assert_eq!(cli_dispatch(&argv(&["frobnicate"])), 1);
    }

    #[test]
    fn missing_required_flag_is_a_usage_error() {
        assert_eq!(cli_dispatch(&argv(&["gen-scene", "--views", "4"])), 1);
    }

    #[test]
    fn help_succeeds() {
        assert_eq!(cli_dispatch(&argv(&["help"])), 0);
    }

    #[test]
    fn demo_bias_runs() {
        assert_eq!(cli_dispatch(&argv(&["demo-bias"])), 0);
    }

    #[test]
    fn flags_override_left_to_right() {
        let args = Args::parse(&argv(&["--seed", "1", "--seed", "2"])).unwrap();
        assert_eq!(args.get("seed"), Some("2"));
    }
}
