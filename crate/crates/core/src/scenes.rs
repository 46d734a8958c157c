//! Built-in analytic scene presets and synthetic dataset generation.

use crate::field::fibonacci_directions;
use crate::io::{Frame, SceneDataset};
use crate::math::{self, Vec3};
use crate::oracle::{synth_rgbd, AnalyticScene, Primitive};
use crate::rays::{CameraIntrinsics, Pose};
use crate::render::mix_seed;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named scene preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePreset {
    /// Unit sphere at the origin, cameras on a surrounding shell.
    Sphere,
    /// Axis-aligned box, cameras on a surrounding shell.
    Box,
    /// Walled interior with two objects, cameras inside looking outward.
    Room,
}

impl ScenePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ScenePreset::Sphere),
            "box" => Ok(ScenePreset::Box),
            "room" => Ok(ScenePreset::Room),
            other => Err(Error::Usage(format!(
                "unknown preset '{other}' (expected sphere | box | room)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::Sphere => "sphere",
            ScenePreset::Box => "box",
            ScenePreset::Room => "room",
        }
    }

    pub fn scene(self) -> AnalyticScene {
        match self {
            ScenePreset::Sphere => AnalyticScene::new(
                vec![Primitive::Sphere {
                    center: [0.0; 3],
                    radius: 1.0,
                    albedo: [0.8, 0.4, 0.2],
                }],
                [0.0; 3],
            )
            .unwrap(),
            ScenePreset::Box => AnalyticScene::new(
                vec![Primitive::AxisBox {
                    center: [0.0; 3],
                    half_extents: [0.9, 0.7, 0.5],
                    albedo: [0.2, 0.5, 0.8],
                }],
                [0.0; 3],
            )
            .unwrap(),
            ScenePreset::Room => {
                let wall = [0.7, 0.7, 0.6];
                let planes = [
                    ([-1.0, 0.0, 0.0], 2.0), // wall at x = +2
                    ([1.0, 0.0, 0.0], 2.0),  // wall at x = -2
                    ([0.0, -1.0, 0.0], 2.0), // wall at y = +2
                    ([0.0, 1.0, 0.0], 2.0),  // wall at y = -2
                    ([0.0, 0.0, -1.0], 1.5), // ceiling at z = +1.5
                    ([0.0, 0.0, 1.0], 1.0),  // floor at z = -1
                ];
                let mut primitives: Vec<Primitive> = planes
                    .iter()
                    .map(|&(normal, offset)| Primitive::Plane {
                        // Solid on the far side of each wall; offsets are
                        // negative so the interior is outside every solid.
                        normal,
                        offset: -offset,
                        albedo: wall,
                    })
                    .collect();
                primitives.push(Primitive::Sphere {
                    center: [0.9, 0.6, -0.5],
                    radius: 0.4,
                    albedo: [0.8, 0.3, 0.2],
                });
                primitives.push(Primitive::AxisBox {
                    center: [-0.9, -0.7, -0.65],
                    half_extents: [0.35, 0.45, 0.35],
                    albedo: [0.2, 0.6, 0.3],
                });
                AnalyticScene::new(primitives, [0.0; 3]).unwrap()
            }
        }
    }

    /// Scene-domain half-extent covering every sample position (cameras may
    /// sit outside the cube; only points along rays between near and far
    /// must stay inside). The shell presets keep the sampling window tight
    /// around the geometry: the far plane stops short of the object's
    /// unobservable back side, which keeps sample positions within a small
    /// bound (and with it the default truncation distance).
    pub fn scene_bound(self) -> f64 {
        match self {
            ScenePreset::Sphere | ScenePreset::Box => 2.2,
            ScenePreset::Room => 3.0,
        }
    }

    pub fn near_far(self) -> (f64, f64) {
        match self {
            ScenePreset::Sphere | ScenePreset::Box => (1.5, 3.3),
            ScenePreset::Room => (0.2, 4.0),
        }
    }

    /// Camera poses for `n` views, deterministically scattered by the seed.
    pub fn poses(self, n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xCA13A));
        let spin = rng.gen_range(0.0..std::f64::consts::TAU);
        let tilt = rng.gen_range(-0.25..0.25);
        match self {
            ScenePreset::Sphere | ScenePreset::Box => {
                // A shell of viewpoints: rotated Fibonacci directions, all
                // looking at the origin. Pole-adjacent directions are pulled
                // in slightly so the up hint never degenerates.
                fibonacci_directions(n.max(2))
                    .into_iter()
                    .take(n)
                    .map(|d| {
                        let d = rotate_z(tilt_x(d, tilt), spin);
                        let d = if d[2].abs() > 0.99 {
                            math::normalize([0.1, 0.1, d[2].signum()])
                        } else {
                            d
                        };
                        let eye = math::scale(d, 3.0);
                        Pose::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0])
                            .expect("shell cameras avoid the poles")
                    })
                    .collect()
            }
            ScenePreset::Room => (0..n)
                .map(|i| {
                    let angle = spin + i as f64 * std::f64::consts::TAU / n.max(1) as f64;
                    let eye = [0.5 * angle.cos(), 0.5 * angle.sin(), 0.15];
                    let target = [1.9 * angle.cos(), 1.9 * angle.sin(), tilt];
                    Pose::look_at(eye, target, [0.0, 0.0, 1.0]).expect("room cameras look outward")
                })
                .collect(),
        }
    }

    pub fn intrinsics(self, res: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 0.9 * res as f64,
            fy: 0.9 * res as f64,
            cx: res as f64 / 2.0,
            cy: res as f64 / 2.0,
            width: res,
            height: res,
        }
    }
}

fn rotate_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

fn tilt_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

/// Renders a preset into an in-memory dataset: `views` RGB-D frames at
/// `res` x `res` pixels. Fully determined by the seed.
pub fn generate_dataset(
    preset: ScenePreset,
    views: usize,
    res: usize,
    seed: u64,
) -> Result<SceneDataset> {
    if views == 0 || res < 2 {
        return Err(Error::Usage(
            "dataset generation needs at least 1 view and a resolution of 2 or more".into(),
        ));
    }
    let scene = preset.scene();
    let intr = preset.intrinsics(res);
    let (near, far) = preset.near_far();
    let frames = preset
        .poses(views, seed)
        .into_iter()
        .map(|pose| {
            let (rgb, depth) = synth_rgbd(&scene, &intr, &pose)?;
            Ok(Frame { rgb, depth, pose })
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = SceneDataset {
        scene_bound: preset.scene_bound(),
        near,
        far,
        intrinsics: intr,
        frames,
    };
    dataset.validate()?;
    Ok(dataset)
}
