//! Image and depth evaluation metrics: PSNR plus the standard depth-map
//! accuracy set (RMSE, Abs Rel, Sq Rel, and the nested delta thresholds).

use crate::image::RgbImage;
use crate::{Error, Result};

/// PSNR cap returned for identical images; keeps metric tables finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in decibels with peak value 1.0.
pub fn psnr(image: &RgbImage, reference: &RgbImage) -> Result<f64> {
    image.check_same_shape(reference)?;
    let mut acc = 0.0;
    for (a, b) in image.pixels.iter().zip(&reference.pixels) {
        for k in 0..3 {
            let e = a[k] - b[k];
            acc += e * e;
        }
    }
    let mse = acc / (3.0 * image.pixels.len() as f64);
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Depth accuracy metrics over the valid entries of a prediction/reference
/// pair. The delta fractions nest: delta1 <= delta2 <= delta3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    /// Valid entries with a nonpositive prediction: counted as failing all
    /// delta thresholds and skipped by the relative metrics.
    pub n_nonpositive_predictions: usize,
}

/// Computes RMSE, Abs Rel, Sq Rel, and delta_i = fraction of entries with
/// `max(ref/pred, pred/ref) < 1.25^i`. `valid` excludes sentinel and
/// non-finite references; zero valid entries is an error.
pub fn depth_metrics(predicted: &[f64], reference: &[f64], valid: &[bool]) -> Result<DepthMetrics> {
    if predicted.len() != reference.len() || predicted.len() != valid.len() {
        return Err(Error::Usage("depth metric input lengths differ".into()));
    }
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    let mut n = 0usize;
    let mut n_rel = 0usize;
    let mut nonpositive = 0usize;
    let mut sq_acc = 0.0;
    let mut abs_rel_acc = 0.0;
    let mut sq_rel_acc = 0.0;
    let mut delta_counts = [0usize; 3];
    for ((&d, &d_ref), &m) in predicted.iter().zip(reference).zip(valid) {
        if !m || !d_ref.is_finite() || d_ref <= 0.0 {
            continue;
        }
        n += 1;
        let err = d_ref - d;
        sq_acc += err * err;
        if d <= 0.0 || !d.is_finite() {
            nonpositive += 1;
            continue; // fails every delta threshold, excluded from relatives
        }
        n_rel += 1;
        abs_rel_acc += err.abs() / d_ref;
        sq_rel_acc += err * err / d_ref;
        let ratio = (d_ref / d).max(d / d_ref);
        for (k, &th) in thresholds.iter().enumerate() {
            if ratio < th {
                delta_counts[k] += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Data("no valid depth entries to evaluate".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        rmse: (sq_acc / nf).sqrt(),
        abs_rel: if n_rel > 0 { abs_rel_acc / n_rel as f64 } else { 0.0 },
        sq_rel: if n_rel > 0 { sq_rel_acc / n_rel as f64 } else { 0.0 },
        delta1: delta_counts[0] as f64 / nf,
        delta2: delta_counts[1] as f64 / nf,
        delta3: delta_counts[2] as f64 / nf,
        n_valid: n,
        n_nonpositive_predictions: nonpositive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_image(rng: &mut StdRng, w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for p in img.pixels.iter_mut() {
            *p = [rng.gen(), rng.gen(), rng.gen()];
        }
        img
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let mut rng = StdRng::seed_from_u64(1);
        let img = random_image(&mut rng, 8, 8);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn known_mse_maps_to_20_db() {
        // Uniform offset of 0.1 in every component: MSE = 0.01 -> 20 dB.
        let a = RgbImage::filled(4, 4, [0.5, 0.5, 0.5]);
        let b = RgbImage::filled(4, 4, [0.6, 0.6, 0.6]);
        let db = psnr(&a, &b).unwrap();
        assert!((db - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_per_pixel_loop_and_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_image(&mut rng, 7, 5);
        let b = random_image(&mut rng, 7, 5);
        let mut acc = 0.0;
        let mut n = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                let (pa, pb) = (a.get(x, y), b.get(x, y));
                for k in 0..3 {
                    acc += (pa[k] - pb[k]) * (pa[k] - pb[k]);
                    n += 1.0;
                }
            }
        }
        let oracle = 10.0 * (n / acc).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - oracle).abs() < 1e-9);
        assert_eq!(got.to_bits(), psnr(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn psnr_rejects_dimension_mismatch() {
        let a = RgbImage::new(2, 2);
        let b = RgbImage::new(3, 2);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn perfect_depth_prediction() {
        let d = [1.0, 2.0, 3.0];
        let m = depth_metrics(&d, &d, &[true; 3]).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.sq_rel, 0.0);
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
        assert_eq!(m.n_valid, 3);
    }

    #[test]
    fn single_pair_at_ratio_1_3() {
        let m = depth_metrics(&[1.3], &[1.0], &[true]).unwrap();
        assert!((m.rmse - 0.3).abs() < 1e-12);
        assert!((m.abs_rel - 0.3).abs() < 1e-12);
        assert!((m.sq_rel - 0.09).abs() < 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 1.0, 1.0));
    }

    #[test]
    fn matches_brute_force_loop() {
        let mut rng = StdRng::seed_from_u64(3);
        let n = 257;
        let reference: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let predicted: Vec<f64> = reference
            .iter()
            .map(|r| r * rng.gen_range(0.7..1.4))
            .collect();
        let valid = vec![true; n];
        let m = depth_metrics(&predicted, &reference, &valid).unwrap();

        let mut sq = 0.0;
        let mut abs_rel = 0.0;
        let mut sq_rel = 0.0;
        let mut deltas = [0.0; 3];
        for i in 0..n {
            let e = reference[i] - predicted[i];
            sq += e * e;
            abs_rel += e.abs() / reference[i];
            sq_rel += e * e / reference[i];
            let ratio = (reference[i] / predicted[i]).max(predicted[i] / reference[i]);
            for k in 0..3 {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    deltas[k] += 1.0;
                }
            }
        }
        let nf = n as f64;
        assert!((m.rmse - (sq / nf).sqrt()).abs() < 1e-12);
        assert!((m.abs_rel - abs_rel / nf).abs() < 1e-12);
        assert!((m.sq_rel - sq_rel / nf).abs() < 1e-12);
        assert!((m.delta1 - deltas[0] / nf).abs() < 1e-12);
        assert!((m.delta2 - deltas[1] / nf).abs() < 1e-12);
        assert!((m.delta3 - deltas[2] / nf).abs() < 1e-12);
    }

    #[test]
    fn deltas_nest_on_random_batches() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(1..64);
            let reference: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..5.0)).collect();
            let predicted: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..6.0)).collect();
            let valid = vec![true; n];
            let m = depth_metrics(&predicted, &reference, &valid).unwrap();
            assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3);
            for d in [m.delta1, m.delta2, m.delta3] {
                assert!((0.0..=1.0).contains(&d));
            }
        }
    }

    #[test]
    fn scale_invariance_of_relative_metrics() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 64;
        let reference: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let predicted: Vec<f64> = reference
            .iter()
            .map(|r| r * rng.gen_range(0.8..1.3))
            .collect();
        let valid = vec![true; n];
        let base = depth_metrics(&predicted, &reference, &valid).unwrap();
        for k in [0.5, 2.0, 17.0] {
            let p2: Vec<f64> = predicted.iter().map(|d| d * k).collect();
            let r2: Vec<f64> = reference.iter().map(|d| d * k).collect();
            let scaled = depth_metrics(&p2, &r2, &valid).unwrap();
            assert!((scaled.abs_rel - base.abs_rel).abs() < 1e-12);
            assert_eq!(scaled.delta1, base.delta1);
            assert_eq!(scaled.delta2, base.delta2);
            assert_eq!(scaled.delta3, base.delta3);
            assert!((scaled.rmse - k * base.rmse).abs() < 1e-9 * k);
            assert!((scaled.sq_rel - k * base.sq_rel).abs() < 1e-9 * k);
        }
    }

    #[test]
    fn nonpositive_predictions_fail_deltas_and_skip_relatives() {
        let m = depth_metrics(&[-1.0, 1.0], &[1.0, 1.0], &[true, true]).unwrap();
        assert_eq!(m.n_valid, 2);
        assert_eq!(m.n_nonpositive_predictions, 1);
        assert_eq!(m.delta1, 0.5);
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn no_valid_entries_is_an_error() {
        assert!(depth_metrics(&[1.0], &[0.0], &[true]).is_err());
        assert!(depth_metrics(&[1.0], &[2.0], &[false]).is_err());
    }
}
