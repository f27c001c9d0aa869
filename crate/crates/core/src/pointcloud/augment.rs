use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Point, PointCloud};
use crate::error::{Error, Result};

/// Bounds for the point-cloud augmentations, applied in the order
/// yaw rotation, jitter, axis flips, scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Yaw angle drawn uniformly from `[lo, hi]` radians.
    pub yaw_range: (f64, f64),
    /// Per-coordinate Gaussian jitter, meters.
    pub jitter_sigma: f64,
    /// Probability of negating x.
    pub flip_x_prob: f64,
    /// Probability of negating y.
    pub flip_y_prob: f64,
    /// Isotropic scale drawn uniformly from `[lo, hi]`.
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            yaw_range: (-std::f64::consts::PI, std::f64::consts::PI),
            jitter_sigma: 0.01,
            flip_x_prob: 0.5,
            flip_y_prob: 0.5,
            scale_range: (0.95, 1.05),
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            yaw_range: (0.0, 0.0),
            jitter_sigma: 0.0,
            flip_x_prob: 0.0,
            flip_y_prob: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (slo, shi) = self.scale_range;
        if !(slo > 0.0 && shi >= slo && shi.is_finite()) {
            return Err(Error::Config(format!(
                "scale range ({slo}, {shi}) must be positive and ordered"
            )));
        }
        let (ylo, yhi) = self.yaw_range;
        if !(ylo.is_finite() && yhi.is_finite() && yhi >= ylo) {
            return Err(Error::Config(format!("yaw range ({ylo}, {yhi}) must be ordered")));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::Config(format!("jitter sigma {} must be >= 0", self.jitter_sigma)));
        }
        for p in [self.flip_x_prob, self.flip_y_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("flip probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi == lo {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Apply the configured random transforms. Deterministic in `seed`; labels
/// are carried through untouched.
pub fn augment_cloud(cloud: &PointCloud, seed: u64, params: &AugmentConfig) -> Result<PointCloud> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = uniform(&mut rng, params.yaw_range);
    let (sin, cos) = yaw.sin_cos();

    let mut points: Vec<[f64; 3]> = cloud
        .points()
        .iter()
        .map(|p| {
            let (x, y) = (p.x as f64, p.y as f64);
            [cos * x - sin * y, sin * x + cos * y, p.z as f64]
        })
        .collect();

    if params.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, params.jitter_sigma).expect("validated sigma");
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let flip_x = rng.random::<f64>() < params.flip_x_prob;
    let flip_y = rng.random::<f64>() < params.flip_y_prob;
    let scale = uniform(&mut rng, params.scale_range);

    let out = points
        .into_iter()
        .zip(cloud.points())
        .map(|([x, y, z], src)| {
            let x = if flip_x { -x } else { x };
            let y = if flip_y { -y } else { y };
            Point::new((x * scale) as f32, (y * scale) as f32, (z * scale) as f32, src.intensity)
        })
        .collect();
    Ok(PointCloud::from_parts_unchecked(out, cloud.labels().map(<[_]>::to_vec)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::with_labels(
            vec![Point::new(1.0, 2.0, -0.5, 0.3), Point::new(-4.0, 0.5, 1.0, 0.9)],
            vec![0, 3],
        )
        .unwrap()
    }

    #[test]
    fn identity_params_leave_cloud_unchanged() {
        let c = cloud();
        assert_eq!(augment_cloud(&c, 7, &AugmentConfig::identity()).unwrap(), c);
    }

    #[test]
    fn yaw_by_pi_negates_xy() {
        let c = PointCloud::new(vec![Point::new(1.0, 0.0, 0.0, 0.0)]).unwrap();
        let params = AugmentConfig {
            yaw_range: (std::f64::consts::PI, std::f64::consts::PI),
            ..AugmentConfig::identity()
        };
        let out = augment_cloud(&c, 0, &params).unwrap();
        let p = out.points()[0];
        assert!((p.x as f64 + 1.0).abs() < 1e-9);
        assert!((p.y as f64).abs() < 1e-9);
        assert_eq!(p.z, 0.0);
    }

    #[test]
    fn jitter_is_deterministic_per_seed() {
        let params = AugmentConfig {
            jitter_sigma: 0.01,
            ..AugmentConfig::identity()
        };
        let a = augment_cloud(&cloud(), 42, &params).unwrap();
        let b = augment_cloud(&cloud(), 42, &params).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, cloud());
        assert_eq!(a.labels(), cloud().labels());
    }

    #[test]
    fn non_positive_scale_rejected() {
        for range in [(0.0, 1.0), (-1.0, 1.0), (1.2, 1.1)] {
            let params = AugmentConfig {
                scale_range: range,
                ..AugmentConfig::identity()
            };
            assert!(matches!(augment_cloud(&cloud(), 0, &params), Err(Error::Config(_))));
        }
    }
}
