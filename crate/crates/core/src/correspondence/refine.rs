use std::collections::BTreeMap;

use super::features::{normalize_features, FeatureExtractor, FeatureKey, FeatureMap, FeatureRole, DEFAULT_NORM_EPS};
use super::mixing::{mix_probabilities, MixConfig};
use super::search::{find_correspondence, CorrespondenceMap};
use crate::error::{Error, Result};
use crate::resample::resample_mask;
use crate::types::{ImageTensor, SoftMask};

/// Intermediate products of one refinement, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct Refinement {
    /// Refined map at the input mask's resolution.
    pub refined: SoftMask,
    /// Input map resampled onto the feature grid.
    pub grid_before: SoftMask,
    /// Mixed map on the feature grid.
    pub grid_after: SoftMask,
    pub correspondence: CorrespondenceMap,
}

fn embed_pair(
    extractor: &dyn FeatureExtractor,
    img: &ImageTensor,
    sample_id: &str,
    role: FeatureRole<'_>,
) -> Result<FeatureMap> {
    let fm = extractor.embed(img, &FeatureKey { sample_id, role })?;
    Ok(if fm.is_normalized() {
        fm
    } else {
        normalize_features(&fm, DEFAULT_NORM_EPS)
    })
}

fn refine_with_features(
    f_orig: &FeatureMap,
    f_gen: &FeatureMap,
    s: &SoftMask,
    cfg: &MixConfig,
) -> Result<Refinement> {
    if f_orig.grid() != f_gen.grid() {
        return Err(Error::shape(format!(
            "original features on {:?}, generated on {:?}",
            f_orig.grid(),
            f_gen.grid()
        )));
    }
    let (gh, gw) = f_orig.grid();
    let correspondence = find_correspondence(f_orig, f_gen)?;
    let grid_before = resample_mask(s, gh, gw)?;
    let grid_after = mix_probabilities(&grid_before, &correspondence, cfg)?;
    let refined = resample_mask(&grid_after, s.height(), s.width())?;
    Ok(Refinement {
        refined,
        grid_before,
        grid_after,
        correspondence,
    })
}

/// Refines one class map against its generated image, returning all
/// intermediate products.
pub fn refine_mask_detailed(
    x: &ImageTensor,
    x_gen: &ImageTensor,
    s: &SoftMask,
    extractor: &dyn FeatureExtractor,
    cfg: &MixConfig,
    sample_id: &str,
    class_name: &str,
) -> Result<Refinement> {
    x.same_shape(x_gen, "original and generated image")?;
    cfg.validate()?;
    let f_orig = embed_pair(extractor, x, sample_id, FeatureRole::Original)?;
    let f_gen = embed_pair(extractor, x_gen, sample_id, FeatureRole::Generated { class: class_name })?;
    refine_with_features(&f_orig, &f_gen, s, cfg)
}

/// Embed both images, match every generated pixel to an original pixel, and
/// mix the class map along the matches on the feature grid.
pub fn refine_mask(
    x: &ImageTensor,
    x_gen: &ImageTensor,
    s: &SoftMask,
    extractor: &dyn FeatureExtractor,
    cfg: &MixConfig,
    sample_id: &str,
    class_name: &str,
) -> Result<SoftMask> {
    refine_mask_detailed(x, x_gen, s, extractor, cfg, sample_id, class_name).map(|r| r.refined)
}

/// One foreground class of a sample: its label, name and soft map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub label: u8,
    pub name: String,
    pub soft: SoftMask,
}

/// Refines every class independently. `generated` maps class labels to the
/// generated image for that class. Original features are computed once.
pub fn refine_all_classes(
    x: &ImageTensor,
    generated: &BTreeMap<u8, ImageTensor>,
    classes: &[ClassMap],
    extractor: &dyn FeatureExtractor,
    cfg: &MixConfig,
    sample_id: &str,
) -> Result<Vec<ClassMap>> {
    cfg.validate()?;
    if classes.is_empty() {
        return Ok(Vec::new());
    }
    let f_orig = embed_pair(extractor, x, sample_id, FeatureRole::Original)?;
    classes
        .iter()
        .map(|c| {
            let x_gen = generated.get(&c.label).ok_or_else(|| {
                Error::invalid(format!("no generated image for class {} ({})", c.label, c.name))
            })?;
            x.same_shape(x_gen, "original and generated image")?;
            let f_gen = embed_pair(extractor, x_gen, sample_id, FeatureRole::Generated { class: &c.name })?;
            let r = refine_with_features(&f_orig, &f_gen, &c.soft, cfg)?;
            Ok(ClassMap {
                label: c.label,
                name: c.name.clone(),
                soft: r.refined,
            })
        })
        .collect()
}
