//! Distance-weighted volume rendering plus a density-mode baseline.
//!
//! The primary mode converts per-sample distance values into truncation
//! weights `w = sigmoid(f/tr) * sigmoid(-f/tr)`, normalizes them per ray,
//! and renders color and depth as the weighted averages. The baseline mode
//! implements classic emission-absorption compositing over a density field.

mod mesh;

pub use mesh::{extract_isosurface, TriangleMesh};

use crate::field::{EvalScratch, FieldModel};
use crate::image::{DepthImage, RgbImage};
use crate::math::{sigmoid, Vec3};
use crate::rays::{
    generate_ray, importance_bin_weights, importance_samples, stratified_samples,
    CameraIntrinsics, Pose, Ray, RaySampleBatch,
};
use crate::{Error, Result};
use rayon::prelude::*;

/// Truncation weight of a distance value: `sigmoid(f/tr) * sigmoid(-f/tr)`.
/// Even in `f`, maximal (0.25) at `f = 0`, decaying with `|f|`.
#[inline]
pub fn odf_weight(f: f64, tr: f64) -> f64 {
    debug_assert!(tr > 0.0);
    sigmoid(f / tr) * sigmoid(-f / tr)
}

/// Anything that yields a (distance, color) pair per point and direction.
/// Rendering is pure over a frozen field; implementations carry their own
/// scratch space, hence `&mut self`.
pub trait SampleField {
    fn sample(&mut self, x: Vec3, d: Vec3) -> (f64, [f64; 3]);
}

impl<T: FnMut(Vec3, Vec3) -> (f64, [f64; 3])> SampleField for T {
    fn sample(&mut self, x: Vec3, d: Vec3) -> (f64, [f64; 3]) {
        self(x, d)
    }
}

/// A neural field bound to a parameter snapshot. Sample positions are
/// clipped to the scene bound before evaluation.
#[derive(Clone)]
pub struct BoundField<'a> {
    model: &'a FieldModel,
    params: &'a [f64],
    scratch: EvalScratch,
}

impl<'a> BoundField<'a> {
    pub fn new(model: &'a FieldModel, params: &'a [f64]) -> Self {
        BoundField {
            model,
            params,
            scratch: EvalScratch::default(),
        }
    }

    pub fn model(&self) -> &FieldModel {
        self.model
    }
}

impl SampleField for BoundField<'_> {
    fn sample(&mut self, x: Vec3, d: Vec3) -> (f64, [f64; 3]) {
        let b = self.model.config().scene_bound;
        let clipped = [
            x[0].clamp(-b, b),
            x[1].clamp(-b, b),
            x[2].clamp(-b, b),
        ];
        let out = self.model.eval_unchecked(self.params, clipped, d, &mut self.scratch);
        (out.odf, out.color)
    }
}

/// Rendering controls shared by every ray of an image.
#[derive(Debug, Clone, Copy)]
pub struct RenderParams {
    pub truncation: f64,
    pub background: [f64; 3],
}

/// Weight sums below this threshold are treated as "no surface along the
/// ray" and fall back to the background color and far-plane depth.
pub const WEIGHT_SUM_FLOOR: f64 = 1e-12;

/// Rendered color and depth of one ray plus the per-sample weights
/// (unnormalized, after occlusion masking) for diagnostics and importance
/// sampling.
#[derive(Debug, Clone)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub weight_sum: f64,
    pub weights: Vec<f64>,
    pub no_surface: bool,
}

/// Truncation weights of sampled distance values.
///
/// No occlusion cutoff is applied: the field value is a *signed* along-ray
/// distance (the supervision drives it through zero at the surface and
/// steeply away on both sides), so the weight bell is symmetric around the
/// surface and the normalized depth estimate is unbiased. Any one-sided
/// truncation of the bell shifts the weighted mean forward by a large
/// fraction of the truncation distance, which the depth contract does not
/// tolerate.
pub fn ray_weights(distance_values: &[f64], tr: f64) -> Vec<f64> {
    distance_values.iter().map(|&f| odf_weight(f, tr)).collect()
}

/// Renders one ray from pre-placed samples: color and depth are the
/// weight-normalized averages of the per-sample colors and positions.
pub fn render_ray<F: SampleField>(
    field: &mut F,
    ray: &Ray,
    ts: &[f64],
    rp: &RenderParams,
) -> Result<RenderResult> {
    if ts.is_empty() {
        return Err(Error::Usage("render_ray needs at least one sample".into()));
    }
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Usage("render_ray samples must be sorted".into()));
    }

    let mut fs = Vec::with_capacity(ts.len());
    let mut colors = Vec::with_capacity(ts.len());
    for &t in ts {
        let (f, c) = field.sample(ray.point_at(t), ray.direction);
        fs.push(f);
        colors.push(c);
    }

    let weights = ray_weights(&fs, rp.truncation);
    let weight_sum: f64 = weights.iter().sum();
    if !(weight_sum > WEIGHT_SUM_FLOOR) {
        return Ok(RenderResult {
            color: rp.background,
            depth: ray.far,
            weight_sum,
            weights,
            no_surface: true,
        });
    }

    let mut color = [0.0; 3];
    let mut depth = 0.0;
    for ((&w, &t), c) in weights.iter().zip(ts).zip(&colors) {
        let wn = w / weight_sum;
        depth += wn * t;
        for k in 0..3 {
            color[k] += wn * c[k];
        }
    }
    Ok(RenderResult {
        color,
        depth,
        weight_sum,
        weights,
        no_surface: false,
    })
}

/// Baseline emission-absorption compositing over a density field:
/// `alpha_i = 1 - exp(-sigma_i * delta_i)`, transmittance-weighted colors,
/// background composed behind the final sample. The field yields
/// (density, color) pairs; negative densities are an error.
pub fn render_ray_density<F: SampleField>(
    field: &mut F,
    ray: &Ray,
    ts: &[f64],
    rp: &RenderParams,
) -> Result<RenderResult> {
    if ts.is_empty() {
        return Err(Error::Usage("render_ray_density needs at least one sample".into()));
    }
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Usage("render_ray_density samples must be sorted".into()));
    }

    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut transmittance = 1.0;
    let mut weights = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let (sigma, c) = field.sample(ray.point_at(t), ray.direction);
        if sigma < 0.0 {
            return Err(Error::Numerical(format!(
                "negative density {sigma} at t = {t}"
            )));
        }
        let delta = if i + 1 < ts.len() {
            ts[i + 1] - t
        } else {
            ray.far - t
        };
        let alpha = 1.0 - (-sigma * delta.max(0.0)).exp();
        let w = transmittance * alpha;
        weights.push(w);
        depth += w * t;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        transmittance *= 1.0 - alpha;
    }
    // Whatever survives the medium hits the background at the far plane.
    for k in 0..3 {
        color[k] += transmittance * rp.background[k];
    }
    depth += transmittance * ray.far;
    let weight_sum: f64 = weights.iter().sum();
    Ok(RenderResult {
        color,
        depth,
        weight_sum,
        weights,
        no_surface: !(weight_sum > WEIGHT_SUM_FLOOR),
    })
}

/// Sampling setup for whole-image rendering.
#[derive(Debug, Clone, Copy)]
pub struct ImageRenderConfig {
    pub coarse_samples: usize,
    pub fine_samples: usize,
    pub near: f64,
    pub far: f64,
    pub truncation: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

/// Places coarse + importance samples for one ray exactly as the trainer
/// does: a coarse inference pass drives an inverse-CDF redistribution.
pub fn place_samples<F: SampleField>(
    field: &mut F,
    ray: &Ray,
    coarse_n: usize,
    fine_n: usize,
    truncation: f64,
    seed: u64,
) -> Result<RaySampleBatch> {
    let coarse_ts = stratified_samples(ray, coarse_n, seed);
    if fine_n == 0 || coarse_n < 2 {
        return Ok(RaySampleBatch::merge(coarse_ts, Vec::new()));
    }
    let fs: Vec<f64> = coarse_ts
        .iter()
        .map(|&t| field.sample(ray.point_at(t), ray.direction).0)
        .collect();
    let weights = ray_weights(&fs, truncation);
    let bins = importance_bin_weights(&weights);
    let fine_ts = importance_samples(&coarse_ts, &bins, fine_n, mix_seed(seed, 0x51ED))?;
    Ok(RaySampleBatch::merge(coarse_ts, fine_ts))
}

/// Renders a full image: one ray per pixel through the pixel's grid
/// coordinate, row-major output, deterministic per seed regardless of the
/// parallel execution order.
pub fn render_image<F: SampleField + Clone + Send + Sync>(
    field: &F,
    intr: &CameraIntrinsics,
    pose: &Pose,
    cfg: &ImageRenderConfig,
) -> Result<(RgbImage, DepthImage)> {
    intr.validate()?;
    let rp = RenderParams {
        truncation: cfg.truncation,
        background: cfg.background,
    };
    let rows: Vec<Result<(Vec<[f64; 3]>, Vec<f64>)>> = (0..intr.height)
        .into_par_iter()
        .map(|y| {
            let mut f = field.clone();
            let mut colors = Vec::with_capacity(intr.width);
            let mut depths = Vec::with_capacity(intr.width);
            for x in 0..intr.width {
                let pixel_seed = mix_seed(cfg.seed, (y * intr.width + x) as u64);
                let ray = generate_ray(intr, pose, (x as f64, y as f64), cfg.near, cfg.far)?;
                let samples = place_samples(
                    &mut f,
                    &ray,
                    cfg.coarse_samples,
                    cfg.fine_samples,
                    cfg.truncation,
                    pixel_seed,
                )?;
                let out = render_ray(&mut f, &ray, &samples.merged_ts, &rp)?;
                colors.push(out.color);
                depths.push(out.depth);
            }
            Ok((colors, depths))
        })
        .collect();

    let mut rgb = RgbImage::new(intr.width, intr.height);
    let mut depth = DepthImage::new(intr.width, intr.height);
    for (y, row) in rows.into_iter().enumerate() {
        let (colors, depths) = row?;
        for (x, (c, d)) in colors.into_iter().zip(depths).enumerate() {
            rgb.set(x, y, c);
            depth.set(x, y, d);
        }
    }
    Ok((rgb, depth))
}

/// Splitmix-style seed derivation so per-pixel/per-ray streams never collide.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
