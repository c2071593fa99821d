//! Dense feature correspondence between an image and its reconstruction, and
//! the confidence-filtered probability mixing built on it.

mod features;
mod hausdorff;
mod mixing;
mod refine;
mod search;

pub use features::{
    normalize_features, FeatureExtractor, FeatureKey, FeatureMap, FeatureRole, ToyFeatureExtractor,
    DEFAULT_NORM_EPS, DEFAULT_POS_WEIGHT,
};
pub use hausdorff::{directed_sum_distance, hausdorff_distance, PixelMetric};
pub use mixing::{mix_probabilities, MixConfig, DEFAULT_BETA, DEFAULT_CF_HIGH, DEFAULT_CF_LOW, WEAK_BETA};
pub use refine::{refine_all_classes, refine_mask, refine_mask_detailed, ClassMap, Refinement};
pub use search::{
    find_correspondence, find_correspondence_bruteforce, find_correspondence_parallel, CorrespondenceMap,
};
