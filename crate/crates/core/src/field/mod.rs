//! The hybrid implicit field: a positional-encoded MLP producing a
//! position-only truncated-distance head plus a direction-conditioned
//! branch for the directional distance correction and color.
//!
//! The full field value decomposes as
//!
//! ```text
//! f(x, d) = f_tsdf(x) + f_corr(x, d)
//! ```
//!
//! where `f_tsdf` depends only on position and `f_corr` carries the
//! direction-dependent part of the distance along the query ray. Two
//! ablation variants collapse the decomposition and emit the full value
//! from a single head; all variants expose the same [`FieldOutput`].

mod encoding;
mod model;

pub use encoding::{encoded_len, positional_encode, EncodingConfig};
pub use model::{EvalScratch, FieldModel, FieldNodes};

use crate::{Error, Result};

/// Network wiring variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchitectureVariant {
    /// Position MLP with an explicit distance head and features feeding a
    /// direction branch that emits the correction term and color.
    HybridDefault,
    /// The direction branch's final layer emits the full distance value
    /// alongside color; no explicit position-only head.
    RenderingHead,
    /// The full distance value is predicted by a dedicated branch from the
    /// position features and encoded direction; color keeps its own branch.
    FeatureHead,
}

impl ArchitectureVariant {
    pub fn name(self) -> &'static str {
        match self {
            ArchitectureVariant::HybridDefault => "hybrid",
            ArchitectureVariant::RenderingHead => "rendering-head",
            ArchitectureVariant::FeatureHead => "feature-head",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(ArchitectureVariant::HybridDefault),
            "rendering-head" => Ok(ArchitectureVariant::RenderingHead),
            "feature-head" => Ok(ArchitectureVariant::FeatureHead),
            other => Err(Error::Usage(format!(
                "unknown architecture variant '{other}' (expected hybrid | rendering-head | feature-head)"
            ))),
        }
    }
}

/// Architecture and scene-domain configuration of the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub variant: ArchitectureVariant,
    pub hidden_width: usize,
    pub position_mlp_depth: usize,
    pub direction_branch_depth: usize,
    /// Truncation distance in scene units; also scales the rendering weights.
    pub truncation_distance: f64,
    /// Half-extent of the axis-aligned cube containing the scene. Positions
    /// are normalized by this bound before encoding.
    pub scene_bound: f64,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width < 1 || self.position_mlp_depth < 1 || self.direction_branch_depth < 1 {
            return Err(Error::Usage(
                "hidden width and MLP depths must be at least 1".into(),
            ));
        }
        if !(self.truncation_distance > 0.0) {
            return Err(Error::Usage("truncation distance must be positive".into()));
        }
        if self.truncation_distance >= self.scene_bound {
            return Err(Error::Usage(format!(
                "truncation distance {} must be smaller than the scene bound {}",
                self.truncation_distance, self.scene_bound
            )));
        }
        Ok(())
    }

    /// Default truncation distance: 5% of the scene extent (cube side).
    pub fn default_truncation(scene_bound: f64) -> f64 {
        0.05 * 2.0 * scene_bound
    }
}

impl Default for FieldConfig {
    fn default() -> Self {
        let scene_bound = 3.0;
        FieldConfig {
            variant: ArchitectureVariant::HybridDefault,
            hidden_width: 64,
            position_mlp_depth: 4,
            direction_branch_depth: 2,
            truncation_distance: Self::default_truncation(scene_bound),
            scene_bound,
        }
    }
}

/// Field evaluation at one point and direction. The decomposition identity
/// `odf == tsdf + correction` holds exactly: the heads are summed (variants
/// without an explicit position head report a zero `tsdf` component).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    /// Full directional distance value f(x, d), scene units.
    pub odf: f64,
    /// Position-only distance head f_tsdf(x), scene units.
    pub tsdf: f64,
    /// Direction-dependent correction f_corr(x, d), scene units.
    pub correction: f64,
    /// RGB color, squashed into [0, 1].
    pub color: [f64; 3],
}

/// Deterministic, near-uniform direction set on the unit sphere
/// (Fibonacci lattice including both poles). Requires `n >= 2`.
pub fn fibonacci_directions(n: usize) -> Vec<[f64; 3]> {
    assert!(n >= 2, "need at least two directions");
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * i as f64 / (n - 1) as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}
