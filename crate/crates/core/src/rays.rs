//! Pinhole camera model, ray generation, and sample placement along rays:
//! stratified coarse samples plus inverse-CDF importance samples driven by
//! the coarse rendering weights.

use crate::math::{self, Mat3, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics in pixel units. Pixel (0, 0) is top-left; +z is the
/// camera's forward axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Data("focal lengths must be positive".into()));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(Error::Data(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Camera-to-world pose: `x_world = rotation * x_camera + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    /// Validates orthonormality (RᵀR = I) and a positive determinant at the
    /// given tolerance.
    pub fn checked(rotation: Mat3, translation: Vec3, tol: f64) -> Result<Self> {
        let rtr = math::mat_mul(&math::mat_transpose(&rotation), &rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr[i][j] - expect).abs() > tol {
                    return Err(Error::Data(format!(
                        "rotation is not orthonormal: (RtR)[{i}][{j}] = {}",
                        rtr[i][j]
                    )));
                }
            }
        }
        let det = math::mat_det(&rotation);
        if (det - 1.0).abs() > tol.max(1e-6) {
            return Err(Error::Data(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        Self::checked(rotation, translation, 1e-9)
    }

    /// Camera placed at `eye` with +z looking at `target`. `up_hint` breaks
    /// the roll ambiguity and may not be parallel to the view direction.
    pub fn look_at(eye: Vec3, target: Vec3, up_hint: Vec3) -> Result<Self> {
        let forward = math::normalize(math::sub(target, eye));
        let right_raw = math::cross(up_hint, forward);
        if math::norm(right_raw) < 1e-9 {
            return Err(Error::Data(
                "up hint is parallel to the viewing direction".into(),
            ));
        }
        let right = math::normalize(right_raw);
        // Image +v points down, so the camera's +y axis is "down" in world
        // terms; build it right-handed from forward and right.
        let down = math::cross(forward, right);
        let rotation = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        Pose::new(rotation, eye)
    }

    /// Flattened row-major 4x4 homogeneous matrix (manifest format).
    pub fn to_matrix4(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0],
            r[1][0], r[1][1], r[1][2], t[1],
            r[2][0], r[2][1], r[2][2], t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix4(m: &[f64; 16], tol: f64) -> Result<Self> {
        let rotation = [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ];
        let translation = [m[3], m[7], m[11]];
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::Data(
                "pose matrix bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        Pose::checked(rotation, translation, tol)
    }
}

/// A camera ray with its sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, near: f64, far: f64) -> Result<Self> {
        if (math::norm(direction) - 1.0).abs() > 1e-9 {
            return Err(Error::Data("ray direction must be unit length".into()));
        }
        if !(0.0 <= near && near < far) {
            return Err(Error::Data(format!(
                "ray interval [{near}, {far}] must satisfy 0 <= near < far"
            )));
        }
        Ok(Ray {
            origin,
            direction,
            near,
            far,
        })
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> Vec3 {
        math::add(self.origin, math::scale(self.direction, t))
    }
}

/// Coarse and importance sample positions along one ray.
#[derive(Debug, Clone, Default)]
pub struct RaySampleBatch {
    pub coarse_ts: Vec<f64>,
    pub fine_ts: Vec<f64>,
    /// Sorted union of the coarse and fine positions.
    pub merged_ts: Vec<f64>,
}

impl RaySampleBatch {
    pub fn merge(coarse_ts: Vec<f64>, fine_ts: Vec<f64>) -> Self {
        let mut merged_ts = Vec::with_capacity(coarse_ts.len() + fine_ts.len());
        merged_ts.extend_from_slice(&coarse_ts);
        merged_ts.extend_from_slice(&fine_ts);
        merged_ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        RaySampleBatch {
            coarse_ts,
            fine_ts,
            merged_ts,
        }
    }
}

/// Back-projects a (sub)pixel through the camera. `pixel` is real-valued;
/// integer coordinates address pixel grid points directly, so the principal
/// point maps exactly onto the optical axis.
pub fn generate_ray(
    intr: &CameraIntrinsics,
    pose: &Pose,
    pixel: (f64, f64),
    near: f64,
    far: f64,
) -> Result<Ray> {
    let (u, v) = pixel;
    if !(0.0 <= u && u <= intr.width as f64) || !(0.0 <= v && v <= intr.height as f64) {
        return Err(Error::Usage(format!(
            "pixel ({u}, {v}) outside the {}x{} image",
            intr.width, intr.height
        )));
    }
    let cam_dir = [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0];
    let world_dir = math::normalize(math::mat_mul_vec(&pose.rotation, cam_dir));
    Ray::new(pose.translation, world_dir, near, far)
}

/// Unit direction to spherical angles: polar angle from +z in [0, pi] and
/// azimuth in (-pi, pi]. The +z pole maps to (0, 0).
pub fn direction_to_spherical(d: Vec3) -> (f64, f64) {
    let theta = d[2].clamp(-1.0, 1.0).acos();
    let phi = if d[0] == 0.0 && d[1] == 0.0 {
        0.0
    } else {
        d[1].atan2(d[0])
    };
    (theta, phi)
}

/// Inverse of [`direction_to_spherical`].
pub fn spherical_to_direction(theta: f64, phi: f64) -> Vec3 {
    let st = theta.sin();
    [st * phi.cos(), st * phi.sin(), theta.cos()]
}

/// One uniform draw inside each of `n` equal bins of `[near, far]`; output
/// is strictly increasing and fully determined by the seed.
pub fn stratified_samples(ray: &Ray, n: usize, rng_seed: u64) -> Vec<f64> {
    assert!(n >= 1, "need at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let span = (ray.far - ray.near) / n as f64;
    (0..n)
        .map(|i| {
            let lo = ray.near + i as f64 * span;
            lo + span * rng.gen_range(0.0..1.0)
        })
        .collect()
}

/// Draws `n_fine` positions by inverse-CDF sampling of the piecewise-constant
/// density proportional to `bin_weights` over the inter-sample bins
/// `[coarse_ts[i], coarse_ts[i+1])`. `bin_weights.len()` must equal
/// `coarse_ts.len() - 1`. All-zero weights fall back to stratified sampling
/// over the coarse span (documented fallback, not an error).
pub fn importance_samples(
    coarse_ts: &[f64],
    bin_weights: &[f64],
    n_fine: usize,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    if coarse_ts.len() < 2 {
        return Err(Error::Usage(
            "importance sampling needs at least two coarse positions".into(),
        ));
    }
    if bin_weights.len() + 1 != coarse_ts.len() {
        return Err(Error::Usage(format!(
            "expected {} bin weights for {} coarse positions, got {}",
            coarse_ts.len() - 1,
            coarse_ts.len(),
            bin_weights.len()
        )));
    }
    if coarse_ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Usage("coarse positions must be sorted".into()));
    }
    if bin_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Numerical("bin weights must be finite and nonnegative".into()));
    }

    let total: f64 = bin_weights.iter().sum();
    if total <= 0.0 {
        let span = Ray::new(
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            coarse_ts[0],
            *coarse_ts.last().unwrap(),
        )?;
        return Ok(stratified_samples(&span, n_fine, rng_seed));
    }

    // Normalized cumulative distribution over the bins.
    let mut cdf = Vec::with_capacity(bin_weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for &w in bin_weights {
        acc += w / total;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out: Vec<f64> = (0..n_fine)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            // Last bin whose CDF start is <= u.
            let k = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                Ok(i) => i.min(bin_weights.len() - 1),
                Err(i) => i - 1,
            };
            let k = k.min(bin_weights.len() - 1);
            let lo = cdf[k];
            let hi = cdf[k + 1];
            let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
            coarse_ts[k] + frac * (coarse_ts[k + 1] - coarse_ts[k])
        })
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(out)
}

/// Converts per-sample rendering weights to per-bin densities by averaging
/// the weights at each bin's endpoints.
pub fn sample_weights_to_bin_weights(sample_weights: &[f64]) -> Vec<f64> {
    sample_weights
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect()
}

/// Sharpening exponent applied to bin densities before importance sampling.
pub const IMPORTANCE_SHARPNESS: i32 = 2;

/// Bin densities for the fine pass: endpoint-averaged coarse weights raised
/// to [`IMPORTANCE_SHARPNESS`]. The truncation weight kernel holds over half
/// of its mass outside one truncation distance of the surface, so sampling
/// proportionally to the raw weights spreads fine samples along the whole
/// ray; squaring the density concentrates them in the band while the coarse
/// stratified set keeps the rest of the ray covered for the render
/// integral.
pub fn importance_bin_weights(sample_weights: &[f64]) -> Vec<f64> {
    sample_weights
        .windows(2)
        .map(|w| (0.5 * (w[0] + w[1])).powi(IMPORTANCE_SHARPNESS))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::normalize;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 300.0,
            fy: 300.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    fn identity_pose() -> Pose {
        Pose::new(math::IDENTITY, [0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let intr = test_intrinsics();
        let ray = generate_ray(&intr, &identity_pose(), (intr.cx, intr.cy), 0.1, 10.0).unwrap();
        assert_eq!(ray.origin, [0.0, 0.0, 0.0]);
        assert_eq!(ray.direction, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_focal_length_off_axis_gives_45_degrees() {
        let intr = test_intrinsics();
        let ray =
            generate_ray(&intr, &identity_pose(), (intr.cx + intr.fx, intr.cy), 0.1, 10.0).unwrap();
        let expect = 0.5f64.sqrt();
        assert!((ray.direction[0] - expect).abs() < 1e-12);
        assert!(ray.direction[1].abs() < 1e-12);
        assert!((ray.direction[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn ray_directions_are_unit_norm() {
        let intr = test_intrinsics();
        let pose = Pose::look_at([2.0, -1.0, 3.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let u = rng.gen_range(0.0..intr.width as f64);
            let v = rng.gen_range(0.0..intr.height as f64);
            let ray = generate_ray(&intr, &pose, (u, v), 0.1, 10.0).unwrap();
            assert!((math::norm(ray.direction) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_pixel_is_an_error() {
        let intr = test_intrinsics();
        assert!(generate_ray(&intr, &identity_pose(), (-1.0, 0.0), 0.1, 10.0).is_err());
        assert!(generate_ray(&intr, &identity_pose(), (0.0, 481.0), 0.1, 10.0).is_err());
    }

    #[test]
    fn spherical_poles_and_equator() {
        let (theta, phi) = direction_to_spherical([0.0, 0.0, 1.0]);
        assert_eq!((theta, phi), (0.0, 0.0));
        let (theta, phi) = direction_to_spherical([1.0, 0.0, 0.0]);
        assert!((theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn spherical_round_trip() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            let d = normalize([
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]);
            let (theta, phi) = direction_to_spherical(d);
            assert!((0.0..=PI).contains(&theta));
            assert!(-PI < phi && phi <= PI);
            let back = spherical_to_direction(theta, phi);
            for k in 0..3 {
                assert!((back[k] - d[k]).abs() < 1e-9, "{d:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn stratified_samples_stay_in_their_bins() {
        let ray = Ray::new([0.0; 3], [0.0, 0.0, 1.0], 0.0, 1.0).unwrap();
        let ts = stratified_samples(&ray, 4, 9);
        for (i, &t) in ts.iter().enumerate() {
            let lo = i as f64 / 4.0;
            let hi = (i + 1) as f64 / 4.0;
            assert!(lo <= t && t < hi, "sample {t} escaped bin [{lo}, {hi})");
        }
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(stratified_samples(&ray, 4, 42), stratified_samples(&ray, 4, 42));
    }

    #[test]
    fn importance_concentrates_on_the_heavy_bin() {
        let coarse = [0.0, 1.0, 2.0, 3.0, 4.0];
        let weights = [0.0, 0.0, 1.0, 0.0];
        let fine = importance_samples(&coarse, &weights, 64, 3).unwrap();
        assert_eq!(fine.len(), 64);
        for t in fine {
            assert!((2.0..3.0).contains(&t), "sample {t} escaped the only weighted bin");
        }
    }

    #[test]
    fn importance_matches_dense_cdf_oracle() {
        // Brute-force oracle: walk the bins linearly for each quantile and
        // solve the piecewise-linear CDF directly.
        let coarse = [0.5, 0.9, 1.7, 2.0, 3.1, 4.0];
        let weights = [0.2, 1.4, 0.0, 0.7, 0.35];
        let total: f64 = weights.iter().sum();
        let inverse_cdf = |u: f64| -> f64 {
            let mut acc = 0.0;
            for (i, &w) in weights.iter().enumerate() {
                let p = w / total;
                if u <= acc + p && p > 0.0 {
                    let frac = (u - acc) / p;
                    return coarse[i] + frac * (coarse[i + 1] - coarse[i]);
                }
                acc += p;
            }
            *coarse.last().unwrap()
        };

        // Re-derive the exact uniform draws by replaying the seeded stream,
        // then compare the implementation against the oracle per draw.
        let seed = 17;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut expected: Vec<f64> = (0..n).map(|_| inverse_cdf(rng.gen_range(0.0..1.0))).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let actual = importance_samples(&coarse, &weights, n, seed).unwrap();
        for (a, e) in actual.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs oracle {e}");
        }
    }

    #[test]
    fn uniform_weights_draw_uniformly() {
        // Kolmogorov-Smirnov statistic of 1e5 draws against the uniform CDF.
        let coarse = [0.0, 0.25, 0.5, 0.75, 1.0];
        let weights = [1.0, 1.0, 1.0, 1.0];
        let n = 100_000;
        let draws = importance_samples(&coarse, &weights, n, 5).unwrap();
        let mut ks = 0.0f64;
        for (i, &t) in draws.iter().enumerate() {
            let empirical_hi = (i + 1) as f64 / n as f64;
            let empirical_lo = i as f64 / n as f64;
            ks = ks.max((empirical_hi - t).abs()).max((t - empirical_lo).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn all_zero_weights_fall_back_to_stratified() {
        let coarse = [1.0, 2.0, 3.0];
        let weights = [0.0, 0.0];
        let fine = importance_samples(&coarse, &weights, 8, 21).unwrap();
        assert_eq!(fine.len(), 8);
        assert!(fine.windows(2).all(|w| w[0] < w[1]));
        assert!(fine.iter().all(|&t| (1.0..=3.0).contains(&t)));
    }

    #[test]
    fn merged_batches_are_sorted_and_bounded() {
        let ray = Ray::new([0.0; 3], [0.0, 0.0, 1.0], 1.0, 5.0).unwrap();
        let coarse = stratified_samples(&ray, 16, 7);
        let bins = vec![1.0; 15];
        let fine = importance_samples(&coarse, &bins, 16, 8).unwrap();
        let batch = RaySampleBatch::merge(coarse, fine);
        assert_eq!(batch.merged_ts.len(), 32);
        assert!(batch.merged_ts.windows(2).all(|w| w[0] <= w[1]));
        assert!(batch
            .merged_ts
            .iter()
            .all(|&t| (ray.near..=ray.far).contains(&t)));
    }

    #[test]
    fn bad_pose_is_rejected() {
        // Reflection: orthonormal but det = -1.
        let reflection = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        assert!(Pose::new(reflection, [0.0; 3]).is_err());
        let skewed = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(skewed, [0.0; 3]).is_err());
    }

    #[test]
    fn pose_matrix_round_trip() {
        let pose = Pose::look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.5], [0.0, 0.0, 1.0]).unwrap();
        let m = pose.to_matrix4();
        let back = Pose::from_matrix4(&m, 1e-9).unwrap();
        assert_eq!(pose, back);
    }
}
