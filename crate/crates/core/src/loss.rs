//! The training objective: color and depth reconstruction losses plus the
//! distance-field supervision terms (free-space saturation, truncation-band
//! regression, and the directional distance target), combined as
//! `total = w_color * L_C + w_depth * L_D + w_odf * (L_fs + L_tr + L_odf)`.

use crate::{Error, Result};

/// Term weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub color: f64,
    pub depth: f64,
    pub odf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            color: 1.0,
            depth: 0.1,
            odf: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("color", self.color), ("depth", self.depth), ("odf", self.odf)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Usage(format!(
                    "loss weight '{name}' must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term loss values for one batch or logging interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub color: f64,
    pub depth: f64,
    pub free_space: f64,
    pub truncation: f64,
    pub odf_bias: f64,
    pub total: f64,
}

/// Classification of a ray sample against the observed depth. Free-space
/// and truncation-band samples both carry the signed along-ray distance
/// `depth - t`: in front of the surface it is the exact directional
/// distance, inside the band it additionally serves as the clamped
/// position-head target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleClass {
    /// Well in front of the surface: `t < depth - tr`.
    FreeSpace { target: f64 },
    /// Inside the truncation band: `|t - depth| <= tr`.
    Truncation { target: f64 },
    /// Behind the surface by more than the band; receives no distance
    /// supervision (occluded, unknown geometry).
    Behind,
    /// The observation had no valid depth; excluded from all
    /// depth-dependent terms.
    Unsupervised,
}

/// Partitions samples along a ray by the observed depth. An invalid
/// (zero/negative/non-finite) depth excludes every sample.
pub fn classify_samples(sample_ts: &[f64], depth: f64, tr: f64) -> Vec<SampleClass> {
    if !depth.is_finite() || depth <= 0.0 {
        return vec![SampleClass::Unsupervised; sample_ts.len()];
    }
    sample_ts
        .iter()
        .map(|&t| {
            if t < depth - tr {
                SampleClass::FreeSpace { target: depth - t }
            } else if t <= depth + tr {
                SampleClass::Truncation { target: depth - t }
            } else {
                SampleClass::Behind
            }
        })
        .collect()
}

/// Mean squared error over all color components of a batch.
pub fn color_loss(rendered: &[[f64; 3]], observed: &[[f64; 3]]) -> Result<f64> {
    if rendered.len() != observed.len() {
        return Err(Error::Usage(format!(
            "color batch lengths differ: {} vs {}",
            rendered.len(),
            observed.len()
        )));
    }
    if rendered.is_empty() {
        return Err(Error::Usage("color loss needs at least one ray".into()));
    }
    let mut acc = 0.0;
    for (r, o) in rendered.iter().zip(observed) {
        for k in 0..3 {
            let e = r[k] - o[k];
            acc += e * e;
        }
    }
    Ok(acc / (3.0 * rendered.len() as f64))
}

/// Mean squared depth error over entries marked valid; (0, false) when no
/// entry is valid ("no depth supervision").
pub fn depth_loss(rendered: &[f64], observed: &[f64], valid: &[bool]) -> Result<(f64, bool)> {
    if rendered.len() != observed.len() || rendered.len() != valid.len() {
        return Err(Error::Usage("depth batch lengths differ".into()));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((&r, &o), &m) in rendered.iter().zip(observed).zip(valid) {
        if m {
            let e = r - o;
            acc += e * e;
            n += 1;
        }
    }
    if n == 0 {
        Ok((0.0, false))
    } else {
        Ok((acc / n as f64, true))
    }
}

/// One sample's field outputs for the distance losses.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSample {
    /// Position-only head value (or the full value when the variant has no
    /// explicit position head).
    pub tsdf: f64,
    /// Full directional distance value along the supervising ray.
    pub odf: f64,
    pub class: SampleClass,
}

/// Distance supervision terms: free-space saturation of the position head
/// toward `+tr`, truncation-band regression of the clamped position head,
/// and the directional distance target on the full value. The directional
/// term covers free-space samples as well as the band: in front of the
/// surface the along-ray distance is exactly known, and supervising it
/// there is what drives free-space rendering weights toward zero (a
/// position-only truncated head saturates at `tr`, which still carries 79%
/// of the peak weight). Empty classes contribute zero.
pub fn odf_losses(samples: &[DistanceSample], tr: f64) -> (f64, f64, f64) {
    let (mut fs_acc, mut fs_n) = (0.0, 0usize);
    let (mut tr_acc, mut band_n) = (0.0, 0usize);
    let (mut odf_acc, mut odf_n) = (0.0, 0usize);
    for s in samples {
        match s.class {
            SampleClass::FreeSpace { target } => {
                let e = s.tsdf - tr;
                fs_acc += e * e;
                fs_n += 1;
                let eo = s.odf - target;
                odf_acc += eo * eo;
                odf_n += 1;
            }
            SampleClass::Truncation { target } => {
                let e = s.tsdf.clamp(-tr, tr) - target;
                tr_acc += e * e;
                band_n += 1;
                let eo = s.odf - target;
                odf_acc += eo * eo;
                odf_n += 1;
            }
            SampleClass::Behind | SampleClass::Unsupervised => {}
        }
    }
    let fs = if fs_n > 0 { fs_acc / fs_n as f64 } else { 0.0 };
    let trl = if band_n > 0 { tr_acc / band_n as f64 } else { 0.0 };
    let odf = if odf_n > 0 { odf_acc / odf_n as f64 } else { 0.0 };
    (fs, trl, odf)
}

/// Combines the term values into the weighted total. Any non-finite part is
/// a numerical failure naming the offending term.
pub fn total_loss(
    color: f64,
    depth: f64,
    free_space: f64,
    truncation: f64,
    odf_bias: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("color", color),
        ("depth", depth),
        ("free-space", free_space),
        ("truncation", truncation),
        ("odf-bias", odf_bias),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss term '{name}' is {v}")));
        }
    }
    let total = weights.color * color
        + weights.depth * depth
        + weights.odf * (free_space + truncation + odf_bias);
    Ok(LossBreakdown {
        color,
        depth,
        free_space,
        truncation,
        odf_bias,
        total,
    })
}
