//! Parameter layout, initialization, and evaluation of the hybrid field.
//!
//! Two evaluation paths exist over the same parameter layout: a fast
//! straight-line path for inference (rendering, coarse sampling, mesh
//! extraction) and a tape path that records the computation for reverse-mode
//! differentiation during training. Both apply the arithmetic in the same
//! order, so their outputs agree to within rounding.

use super::encoding::{encode_into, EncodingConfig};
use super::{ArchitectureVariant, FieldConfig, FieldOutput};
use crate::autodiff::{NodeId, ParamVector, Tape};
use crate::math::{norm, norm_inf, sigmoid, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One fully connected layer: `out` rows over a fan-in of `in_a + in_b`
/// inputs (two slots so a layer can consume a concatenation without copying).
/// Row `r` occupies `params[offset + r*(fan_in+1) ..]` as weights then bias.
#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    offset: usize,
    in_a: usize,
    in_b: usize,
    out: usize,
}

impl LayerSpec {
    fn fan_in(&self) -> usize {
        self.in_a + self.in_b
    }

    fn param_count(&self) -> usize {
        (self.fan_in() + 1) * self.out
    }
}

/// Scratch buffers for the allocation-free evaluation paths.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    enc_pos: Vec<f64>,
    enc_dir: Vec<f64>,
    pos_a: Vec<f64>,
    pos_b: Vec<f64>,
    dir_a: Vec<f64>,
    dir_b: Vec<f64>,
    dist_a: Vec<f64>,
    dist_b: Vec<f64>,
}

/// Tape node handles for one field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FieldNodes {
    pub odf: NodeId,
    /// Present only when the variant has an explicit position-only head.
    pub tsdf: Option<NodeId>,
    pub correction: NodeId,
    pub color: [NodeId; 3],
}

/// The field network: configuration plus the derived parameter layout.
#[derive(Debug, Clone)]
pub struct FieldModel {
    cfg: FieldConfig,
    enc: EncodingConfig,
    pos_layers: Vec<LayerSpec>,
    tsdf_head: Option<LayerSpec>,
    dir_layers: Vec<LayerSpec>,
    /// Hybrid: correction head. Rendering-head: the full-distance head.
    odf_head: Option<LayerSpec>,
    color_head: LayerSpec,
    /// Feature-head variant only: dedicated distance branch.
    dist_layers: Vec<LayerSpec>,
    dist_head: Option<LayerSpec>,
    param_count: usize,
}

impl FieldModel {
    pub fn new(cfg: FieldConfig, enc: EncodingConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.hidden_width;
        let pos_in = enc.position_dim();
        let dir_in = enc.direction_dim();

        let mut offset = 0usize;
        let mut alloc = |in_a: usize, in_b: usize, out: usize| {
            let spec = LayerSpec {
                offset,
                in_a,
                in_b,
                out,
            };
            offset += spec.param_count();
            spec
        };

        let mut pos_layers = Vec::with_capacity(cfg.position_mlp_depth);
        pos_layers.push(alloc(pos_in, 0, w));
        for _ in 1..cfg.position_mlp_depth {
            pos_layers.push(alloc(w, 0, w));
        }

        let mut tsdf_head = None;
        let mut odf_head = None;
        let mut dist_layers = Vec::new();
        let mut dist_head = None;

        if cfg.variant == ArchitectureVariant::HybridDefault {
            tsdf_head = Some(alloc(w, 0, 1));
        }

        let mut dir_layers = Vec::with_capacity(cfg.direction_branch_depth);
        dir_layers.push(alloc(w, dir_in, w));
        for _ in 1..cfg.direction_branch_depth {
            dir_layers.push(alloc(w, 0, w));
        }

        match cfg.variant {
            ArchitectureVariant::HybridDefault | ArchitectureVariant::RenderingHead => {
                odf_head = Some(alloc(w, 0, 1));
            }
            ArchitectureVariant::FeatureHead => {
                dist_layers.push(alloc(w, dir_in, w));
                for _ in 1..cfg.direction_branch_depth {
                    dist_layers.push(alloc(w, 0, w));
                }
                dist_head = Some(alloc(w, 0, 1));
            }
        }

        let color_head = alloc(w, 0, 3);

        Ok(FieldModel {
            cfg,
            enc,
            pos_layers,
            tsdf_head,
            dir_layers,
            odf_head,
            color_head,
            dist_layers,
            dist_head,
            param_count: offset,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn encoding(&self) -> &EncodingConfig {
        &self.enc
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn layers_in_order(&self) -> Vec<LayerSpec> {
        let mut all: Vec<LayerSpec> = Vec::new();
        all.extend(&self.pos_layers);
        all.extend(self.tsdf_head.iter());
        all.extend(&self.dir_layers);
        all.extend(self.odf_head.iter());
        all.extend(&self.dist_layers);
        all.extend(self.dist_head.iter());
        all.push(self.color_head);
        all
    }

    /// Fan-in-scaled uniform weights, zero biases, fully determined by the
    /// seed. Two calls with the same seed produce identical parameters.
    ///
    /// The distance head's bias starts at +tr: the untrained field then
    /// reads "empty space" everywhere, and regions no training ray ever
    /// samples keep a positive distance instead of random zero crossings
    /// that would surface as phantom geometry at mesh extraction.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.param_count];
        for spec in self.layers_in_order() {
            let fan = spec.fan_in();
            let scale = 1.0 / (fan as f64).sqrt();
            for r in 0..spec.out {
                let row = spec.offset + r * (fan + 1);
                for wv in &mut values[row..row + fan] {
                    *wv = rng.gen_range(-scale..scale);
                }
                // bias stays zero
            }
        }
        let tr = self.cfg.truncation_distance;
        if let Some(head) = self.tsdf_head.or(self.odf_head).or(self.dist_head) {
            values[head.offset + head.fan_in()] = tr;
        }
        ParamVector::new(values)
    }

    fn check_inputs(&self, params: &[f64], x: Vec3, d: Vec3) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Usage(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.param_count
            )));
        }
        // Allow a whisker of slack so positions clipped exactly to the bound
        // survive rounding.
        if norm_inf(x) > self.cfg.scene_bound * (1.0 + 1e-9) {
            return Err(Error::Usage(format!(
                "position {x:?} outside scene bound {}; clip samples before evaluating",
                self.cfg.scene_bound
            )));
        }
        if (norm(d) - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("direction {d:?} is not unit length")));
        }
        Ok(())
    }

    fn encode_position(&self, x: Vec3, out: &mut Vec<f64>) {
        let b = self.cfg.scene_bound;
        let n = [x[0] / b, x[1] / b, x[2] / b];
        encode_into(&n, self.enc.position_frequencies, self.enc.include_raw_input, out);
    }

    fn encode_direction(&self, d: Vec3, out: &mut Vec<f64>) {
        encode_into(&d, self.enc.direction_frequencies, self.enc.include_raw_input, out);
    }

    /// Full field evaluation (inference path).
    pub fn eval(
        &self,
        params: &[f64],
        x: Vec3,
        d: Vec3,
        scratch: &mut EvalScratch,
    ) -> Result<FieldOutput> {
        self.check_inputs(params, x, d)?;
        Ok(self.eval_unchecked(params, x, d, scratch))
    }

    /// Evaluation without the precondition checks; callers guarantee clipped
    /// positions and unit directions (the render/training hot paths do).
    pub fn eval_unchecked(
        &self,
        params: &[f64],
        x: Vec3,
        d: Vec3,
        scratch: &mut EvalScratch,
    ) -> FieldOutput {
        self.encode_position(x, &mut scratch.enc_pos);
        self.encode_direction(d, &mut scratch.enc_dir);

        let EvalScratch {
            enc_pos,
            enc_dir,
            pos_a,
            pos_b,
            dir_a,
            dir_b,
            dist_a,
            dist_b,
        } = scratch;

        // Position MLP.
        let mut cur: &mut Vec<f64> = pos_a;
        let mut next: &mut Vec<f64> = pos_b;
        eval_layer(params, &self.pos_layers[0], enc_pos, &[], true, cur);
        for spec in &self.pos_layers[1..] {
            eval_layer(params, spec, cur, &[], true, next);
            std::mem::swap(&mut cur, &mut next);
        }
        let features: &Vec<f64> = cur;

        let tsdf = self
            .tsdf_head
            .map(|spec| eval_row(params, &spec, 0, features, &[]));

        // Direction-conditioned branch (color; also distance for the
        // hybrid/rendering-head variants).
        let mut dcur: &mut Vec<f64> = dir_a;
        let mut dnext: &mut Vec<f64> = dir_b;
        eval_layer(params, &self.dir_layers[0], features, enc_dir, true, dcur);
        for spec in &self.dir_layers[1..] {
            eval_layer(params, spec, dcur, &[], true, dnext);
            std::mem::swap(&mut dcur, &mut dnext);
        }

        let color = {
            let spec = &self.color_head;
            [
                sigmoid(eval_row(params, spec, 0, dcur, &[])),
                sigmoid(eval_row(params, spec, 1, dcur, &[])),
                sigmoid(eval_row(params, spec, 2, dcur, &[])),
            ]
        };

        match self.cfg.variant {
            ArchitectureVariant::HybridDefault => {
                let tsdf = tsdf.expect("hybrid variant has a tsdf head");
                let correction = eval_row(params, &self.odf_head.unwrap(), 0, dcur, &[]);
                FieldOutput {
                    odf: tsdf + correction,
                    tsdf,
                    correction,
                    color,
                }
            }
            ArchitectureVariant::RenderingHead => {
                let f = eval_row(params, &self.odf_head.unwrap(), 0, dcur, &[]);
                FieldOutput {
                    odf: f,
                    tsdf: 0.0,
                    correction: f,
                    color,
                }
            }
            ArchitectureVariant::FeatureHead => {
                // Dedicated distance branch from the position features.
                let mut scur: &mut Vec<f64> = dist_a;
                let mut snext: &mut Vec<f64> = dist_b;
                eval_layer(params, &self.dist_layers[0], features, enc_dir, true, scur);
                for spec in &self.dist_layers[1..] {
                    eval_layer(params, spec, scur, &[], true, snext);
                    std::mem::swap(&mut scur, &mut snext);
                }
                let f = eval_row(params, &self.dist_head.unwrap(), 0, scur, &[]);
                FieldOutput {
                    odf: f,
                    tsdf: 0.0,
                    correction: f,
                    color,
                }
            }
        }
    }

    /// Position-only distance head. Only the hybrid variant has one; the
    /// ablation variants expose distance solely through
    /// [`FieldModel::tsdf_via_direction_min`].
    pub fn eval_tsdf_head(&self, params: &[f64], x: Vec3, scratch: &mut EvalScratch) -> Result<f64> {
        let spec = self.tsdf_head.ok_or_else(|| {
            Error::Usage(format!(
                "variant '{}' has no explicit position-only distance head; use tsdf_via_direction_min",
                self.cfg.variant.name()
            ))
        })?;
        if norm_inf(x) > self.cfg.scene_bound * (1.0 + 1e-9) {
            return Err(Error::Usage(format!(
                "position {x:?} outside scene bound {}",
                self.cfg.scene_bound
            )));
        }
        self.encode_position(x, &mut scratch.enc_pos);
        let EvalScratch {
            enc_pos,
            pos_a,
            pos_b,
            ..
        } = scratch;
        let mut cur: &mut Vec<f64> = pos_a;
        let mut next: &mut Vec<f64> = pos_b;
        eval_layer(params, &self.pos_layers[0], enc_pos, &[], true, cur);
        for spec in &self.pos_layers[1..] {
            eval_layer(params, spec, cur, &[], true, next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(eval_row(params, &spec, 0, cur, &[]))
    }

    /// Brute-force distance floor: the minimum of the full field value over
    /// a deterministic Fibonacci direction set.
    pub fn tsdf_via_direction_min(
        &self,
        params: &[f64],
        x: Vec3,
        n_directions: usize,
        scratch: &mut EvalScratch,
    ) -> Result<f64> {
        if n_directions < 2 {
            return Err(Error::Usage("direction minimum needs at least 2 directions".into()));
        }
        let mut best = f64::INFINITY;
        for d in super::fibonacci_directions(n_directions) {
            let out = self.eval(params, x, d, scratch)?;
            best = best.min(out.odf);
        }
        Ok(best)
    }

    /// Pushes the direction encoding once as constants; the returned range
    /// can be shared by every sample evaluation along the same ray.
    pub fn push_direction_encoding(
        &self,
        tape: &mut Tape,
        d: Vec3,
        scratch: &mut EvalScratch,
    ) -> (NodeId, usize) {
        self.encode_direction(d, &mut scratch.enc_dir);
        push_constants(tape, &scratch.enc_dir)
    }

    /// Records one field evaluation on the tape. The caller must clip `x`
    /// into the scene bound; the encoded inputs enter as constants since no
    /// gradient flows into sample positions.
    pub fn eval_on_tape(
        &self,
        tape: &mut Tape,
        params: &[f64],
        x: Vec3,
        enc_dir: (NodeId, usize),
        scratch: &mut EvalScratch,
    ) -> FieldNodes {
        self.encode_position(x, &mut scratch.enc_pos);
        let enc_pos = push_constants(tape, &scratch.enc_pos);

        let enc_pos = (enc_pos.0, enc_pos.1, true);
        let enc_dir = (enc_dir.0, enc_dir.1, true);
        let mut cur = tape_layer(tape, params, &self.pos_layers[0], enc_pos, NONE_RANGE, true);
        for spec in &self.pos_layers[1..] {
            cur = tape_layer(tape, params, spec, cur, NONE_RANGE, true);
        }
        let features = cur;

        let tsdf = self
            .tsdf_head
            .map(|spec| tape_layer(tape, params, &spec, features, NONE_RANGE, false).0);

        let mut dcur = tape_layer(tape, params, &self.dir_layers[0], features, enc_dir, true);
        for spec in &self.dir_layers[1..] {
            dcur = tape_layer(tape, params, spec, dcur, NONE_RANGE, true);
        }

        let color_lin = tape_layer(tape, params, &self.color_head, dcur, NONE_RANGE, false);
        let color = [
            tape.sigmoid(color_lin.0),
            tape.sigmoid(NodeId(color_lin.0 .0 + 1)),
            tape.sigmoid(NodeId(color_lin.0 .0 + 2)),
        ];

        match self.cfg.variant {
            ArchitectureVariant::HybridDefault => {
                let tsdf = tsdf.expect("hybrid variant has a tsdf head");
                let correction =
                    tape_layer(tape, params, &self.odf_head.unwrap(), dcur, NONE_RANGE, false).0;
                let odf = tape.add(tsdf, correction);
                FieldNodes {
                    odf,
                    tsdf: Some(tsdf),
                    correction,
                    color,
                }
            }
            ArchitectureVariant::RenderingHead => {
                let f = tape_layer(tape, params, &self.odf_head.unwrap(), dcur, NONE_RANGE, false).0;
                FieldNodes {
                    odf: f,
                    tsdf: None,
                    correction: f,
                    color,
                }
            }
            ArchitectureVariant::FeatureHead => {
                let mut scur =
                    tape_layer(tape, params, &self.dist_layers[0], features, enc_dir, true);
                for spec in &self.dist_layers[1..] {
                    scur = tape_layer(tape, params, spec, scur, NONE_RANGE, true);
                }
                let f = tape_layer(tape, params, &self.dist_head.unwrap(), scur, NONE_RANGE, false).0;
                FieldNodes {
                    odf: f,
                    tsdf: None,
                    correction: f,
                    color,
                }
            }
        }
    }

    /// Rough node count of one tape evaluation; used to pre-size tapes.
    pub fn tape_nodes_per_eval(&self) -> usize {
        let w = self.cfg.hidden_width;
        let depth = self.cfg.position_mlp_depth + 2 * self.cfg.direction_branch_depth;
        self.enc.position_dim() + 2 * w * depth + 16
    }
}

const NONE_RANGE: (NodeId, usize, bool) = (NodeId(0), 0, false);

fn push_constants(tape: &mut Tape, values: &[f64]) -> (NodeId, usize) {
    debug_assert!(!values.is_empty());
    let first = tape.constant(values[0]);
    for &v in &values[1..] {
        tape.constant(v);
    }
    (first, values.len())
}

/// Evaluates every row of a layer into `out` (plain path).
fn eval_layer(
    params: &[f64],
    spec: &LayerSpec,
    a: &[f64],
    b: &[f64],
    relu: bool,
    out: &mut Vec<f64>,
) {
    debug_assert_eq!(a.len(), spec.in_a);
    debug_assert_eq!(b.len(), spec.in_b);
    out.clear();
    let fan = spec.fan_in();
    let mut off = spec.offset;
    for _ in 0..spec.out {
        let mut acc = dot(a, &params[off..off + spec.in_a]);
        if spec.in_b > 0 {
            acc += dot(b, &params[off + spec.in_a..off + fan]);
        }
        acc += params[off + fan];
        out.push(if relu { acc.max(0.0) } else { acc });
        off += fan + 1;
    }
}

/// Evaluates a single row of a layer (plain path).
fn eval_row(params: &[f64], spec: &LayerSpec, row: usize, a: &[f64], b: &[f64]) -> f64 {
    let fan = spec.fan_in();
    let off = spec.offset + row * (fan + 1);
    let mut acc = dot(a, &params[off..off + spec.in_a]);
    if spec.in_b > 0 {
        acc += dot(b, &params[off + spec.in_a..off + fan]);
    }
    acc + params[off + fan]
}

/// Records a layer on the tape (rectifier fused into the affine nodes);
/// returns the contiguous output node range.
fn tape_layer(
    tape: &mut Tape,
    params: &[f64],
    spec: &LayerSpec,
    a: (NodeId, usize, bool),
    b: (NodeId, usize, bool),
    relu: bool,
) -> (NodeId, usize, bool) {
    debug_assert_eq!(a.1, spec.in_a);
    debug_assert_eq!(b.1, spec.in_b);
    let fan = spec.fan_in();
    let mut off = spec.offset;
    let mut first = NodeId(0);
    for r in 0..spec.out {
        let n = tape.affine_full(params, a, b, off, relu);
        if r == 0 {
            first = n;
        }
        off += fan + 1;
    }
    (first, spec.out, false)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::math::dot_slices(a, b)
}
