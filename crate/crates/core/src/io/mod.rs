//! On-disk formats: the dataset manifest (JSON), RGB images (binary PPM),
//! depth maps (PFM), meshes (OBJ), and field checkpoints.
//!
//! Conventions, stated once: poses are camera-to-world with +z forward and
//! pixel (0, 0) top-left; depth maps hold the distance along the pixel ray
//! with 0 as the no-return sentinel; every writer goes through a temp file
//! and renames on success so failed runs never leave partial outputs.

mod checkpoint;
mod obj;
mod pfm;
mod ppm;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use obj::write_obj;
pub use pfm::{read_pfm, write_pfm};
pub use ppm::{read_ppm, write_ppm};

use crate::image::{DepthImage, RgbImage};
use crate::rays::{CameraIntrinsics, Pose};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// One frame entry of the on-disk manifest. The pose is the camera-to-world
/// 4x4 matrix flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub rgb_path: String,
    pub depth_path: String,
    pub pose: [f64; 16],
}

/// The dataset manifest: scene domain, camera, and frame listing. Paths
/// resolve relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub format_version: u32,
    pub scene_bound: f64,
    pub near: f64,
    pub far: f64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<FrameEntry>,
}

/// A posed RGB-D frame in memory.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub pose: Pose,
}

/// The in-memory dataset: what the trainer and evaluator consume.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub scene_bound: f64,
    pub near: f64,
    pub far: f64,
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.near < self.far) || self.near < 0.0 {
            return Err(Error::Data(format!(
                "invalid sampling interval [{}, {}]",
                self.near, self.far
            )));
        }
        if !(self.scene_bound > 0.0) {
            return Err(Error::Data("scene bound must be positive".into()));
        }
        if self.frames.is_empty() {
            return Err(Error::Data("dataset has no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.rgb.width != f.depth.width || f.rgb.height != f.depth.height {
                return Err(Error::Data(format!(
                    "frame {i}: RGB is {}x{} but depth is {}x{}",
                    f.rgb.width, f.rgb.height, f.depth.width, f.depth.height
                )));
            }
            if f.rgb.width != self.intrinsics.width || f.rgb.height != self.intrinsics.height {
                return Err(Error::Data(format!(
                    "frame {i}: image is {}x{} but intrinsics expect {}x{}",
                    f.rgb.width, f.rgb.height, self.intrinsics.width, self.intrinsics.height
                )));
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(path);
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Data(format!("invalid output path {}", path.display())))?;
    tmp.set_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the dataset into `dir`: one PPM and one PFM per frame plus the
/// manifest. Frame files are numbered in order.
pub fn save_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.frames.len());
    for (i, frame) in dataset.frames.iter().enumerate() {
        let rgb_path = format!("rgb_{i:04}.ppm");
        let depth_path = format!("depth_{i:04}.pfm");
        write_ppm(&dir.join(&rgb_path), &frame.rgb)?;
        write_pfm(&dir.join(&depth_path), &frame.depth)?;
        entries.push(FrameEntry {
            rgb_path,
            depth_path,
            pose: frame.pose.to_matrix4(),
        });
    }
    let manifest = SceneManifest {
        format_version: MANIFEST_VERSION,
        scene_bound: dataset.scene_bound,
        near: dataset.near,
        far: dataset.far,
        intrinsics: dataset.intrinsics,
        frames: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
    write_atomic(&dir.join(MANIFEST_NAME), &json)
}

/// Loads and validates a dataset. `manifest_path` may be the manifest file
/// itself or the directory containing `manifest.json`.
pub fn load_dataset(manifest_path: &Path) -> Result<SceneDataset> {
    let manifest_file = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_NAME)
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_file).map_err(|e| {
        Error::Data(format!("cannot read manifest {}: {e}", manifest_file.display()))
    })?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("malformed manifest: {e}")))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let base = manifest_file
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, entry) in manifest.frames.iter().enumerate() {
        let rgb = read_ppm(&base.join(&entry.rgb_path))
            .map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
        let depth = read_pfm(&base.join(&entry.depth_path))
            .map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
        let pose = Pose::from_matrix4(&entry.pose, 1e-6)
            .map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
        frames.push(Frame { rgb, depth, pose });
    }
    let dataset = SceneDataset {
        scene_bound: manifest.scene_bound,
        near: manifest.near,
        far: manifest.far,
        intrinsics: manifest.intrinsics,
        frames,
    };
    dataset.validate()?;
    Ok(dataset)
}
