use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use crate::error::{Error, Result};

/// Per-pixel distance between two feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelMetric {
    /// `1 - <a, b>`, for unit vectors.
    #[default]
    Cosine,
    Euclidean,
}

impl PixelMetric {
    /// Distance in `f32`, accumulated in feature order and clamped at zero.
    pub fn distance(self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            PixelMetric::Cosine => {
                let mut dot = 0.0f32;
                for k in 0..a.len() {
                    dot += a[k] * b[k];
                }
                (1.0 - dot).max(0.0)
            }
            PixelMetric::Euclidean => {
                let mut acc = 0.0f32;
                for k in 0..a.len() {
                    let d = a[k] - b[k];
                    acc += d * d;
                }
                acc.sqrt()
            }
        }
    }
}

fn check(a: &FeatureMap, b: &FeatureMap, metric: PixelMetric) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("feature dims {} vs {}", a.dim(), b.dim())));
    }
    if metric == PixelMetric::Cosine && (!a.is_normalized() || !b.is_normalized()) {
        return Err(Error::invalid("cosine distance needs normalized features"));
    }
    Ok(())
}

fn nearest(a: &[f32], b: &FeatureMap, metric: PixelMetric) -> f32 {
    b.vectors().map(|v| metric.distance(a, v)).fold(f32::INFINITY, f32::min)
}

/// Directed Hausdorff distance `sup_a inf_b D(a, b)`.
pub fn hausdorff_distance(a: &FeatureMap, b: &FeatureMap, metric: PixelMetric) -> Result<f64> {
    check(a, b, metric)?;
    Ok(a.vectors().map(|v| f64::from(nearest(v, b, metric))).fold(0.0, f64::max))
}

/// Sum over `a` of the distance to the nearest pixel of `b`. With the cosine
/// metric this equals the summed distances of the correspondence search.
pub fn directed_sum_distance(a: &FeatureMap, b: &FeatureMap, metric: PixelMetric) -> Result<f64> {
    check(a, b, metric)?;
    Ok(a.vectors().map(|v| f64::from(nearest(v, b, metric))).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::features::{normalize_features, DEFAULT_NORM_EPS};
    use crate::correspondence::search::find_correspondence_bruteforce;
    use proptest::prelude::*;

    fn fm(h: usize, w: usize, d: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, d, data).unwrap()
    }

    #[test]
    fn euclidean_hand_value() {
        let a = fm(1, 2, 2, vec![0.0, 0.0, 3.0, 4.0]);
        let b = fm(1, 1, 2, vec![0.0, 0.0]);
        assert_eq!(hausdorff_distance(&a, &b, PixelMetric::Euclidean).unwrap(), 5.0);
        assert_eq!(hausdorff_distance(&b, &a, PixelMetric::Euclidean).unwrap(), 0.0);
        assert_eq!(directed_sum_distance(&a, &b, PixelMetric::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn cosine_needs_normalized() {
        let a = fm(1, 1, 2, vec![1.0, 0.0]);
        assert!(hausdorff_distance(&a, &a, PixelMetric::Cosine).is_err());
        let n = normalize_features(&a, DEFAULT_NORM_EPS);
        assert_eq!(hausdorff_distance(&n, &n, PixelMetric::Cosine).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn self_distance_is_zero(data in proptest::collection::vec(-1.0f32..1.0, 3 * 4 * 4)) {
            let a = fm(3, 4, 4, data);
            prop_assert_eq!(hausdorff_distance(&a, &a, PixelMetric::Euclidean).unwrap(), 0.0);
            let n = normalize_features(&a, DEFAULT_NORM_EPS);
            prop_assert!(hausdorff_distance(&n, &n, PixelMetric::Cosine).unwrap() <= 1e-6);
        }

        #[test]
        fn sum_matches_search(data in proptest::collection::vec(-1.0f32..1.0, 2 * 3 * 5 * 2)) {
            let a = normalize_features(&fm(3, 5, 2, data[..30].to_vec()), DEFAULT_NORM_EPS);
            let b = normalize_features(&fm(3, 5, 2, data[30..].to_vec()), DEFAULT_NORM_EPS);
            let c = find_correspondence_bruteforce(&a, &b).unwrap();
            let total: f64 = c.distances().iter().map(|&d| f64::from(d)).sum();
            let h = directed_sum_distance(&b, &a, PixelMetric::Cosine).unwrap();
            prop_assert!((total - h).abs() <= 1e-9);
            let sup = hausdorff_distance(&b, &a, PixelMetric::Cosine).unwrap();
            prop_assert!(sup <= h + 1e-12);
        }
    }
}
