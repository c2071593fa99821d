use crate::error::{Error, Result};
use crate::types::ImageTensor;

/// Norm guard used when normalizing feature vectors.
pub const DEFAULT_NORM_EPS: f32 = 1e-8;

/// Per-pixel feature vectors on an `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature map dims {height}x{width}x{dim} must be positive"
            )));
        }
        if data.len() != height * width * dim {
            return Err(Error::LengthMismatch {
                expected: height * width * dim,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vectors(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Reorders pixels so that output pixel `i` is input pixel `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<FeatureMap> {
        if order.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: order.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            if i >= self.len() {
                return Err(Error::invalid(format!("permutation index {i} out of range")));
            }
            data.extend_from_slice(self.vector(i));
        }
        Ok(FeatureMap {
            data,
            ..self.clone()
        })
    }
}

/// Divides every pixel vector by `max(norm, eps)`; zero vectors stay zero.
pub fn normalize_features(fm: &FeatureMap, eps: f32) -> FeatureMap {
    let mut data = fm.data.clone();
    for v in data.chunks_exact_mut(fm.dim) {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt() as f32;
        let denom = norm.max(eps);
        for x in v.iter_mut() {
            *x /= denom;
        }
    }
    FeatureMap {
        data,
        normalized: true,
        ..fm.clone()
    }
}

/// Which image of a pair is being embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole<'a> {
    Original,
    Generated { class: &'a str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureKey<'a> {
    pub sample_id: &'a str,
    pub role: FeatureRole<'a>,
}

impl std::fmt::Display for FeatureRole<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureRole::Original => write!(f, "original"),
            FeatureRole::Generated { class } => write!(f, "generated/{class}"),
        }
    }
}

/// Embeds an image into a dense feature grid.
///
/// Both images of a pair must come back on the same grid, and repeated calls
/// must agree. The key lets recorded extractors look up exported features;
/// computing extractors ignore it.
pub trait FeatureExtractor: Send + Sync {
    fn embed(&self, img: &ImageTensor, key: &FeatureKey<'_>) -> Result<FeatureMap>;
}

/// Color plus weighted position, L2-normalized.
///
/// Each grid cell averages a `stride x stride` block of pixels and appends
/// `pos_weight * ((x + 0.5) / w, (y + 0.5) / h)`. Matches between images are
/// driven by color, with position breaking near-ties toward nearby pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyFeatureExtractor {
    pub pos_weight: f32,
    pub stride: usize,
}

pub const DEFAULT_POS_WEIGHT: f32 = 0.25;

impl Default for ToyFeatureExtractor {
    fn default() -> Self {
        Self {
            pos_weight: DEFAULT_POS_WEIGHT,
            stride: 1,
        }
    }
}

impl ToyFeatureExtractor {
    pub fn grid_for(&self, img: &ImageTensor) -> (usize, usize) {
        let s = self.stride.max(1);
        (img.height().div_ceil(s), img.width().div_ceil(s))
    }
}

impl FeatureExtractor for ToyFeatureExtractor {
    fn embed(&self, img: &ImageTensor, _key: &FeatureKey<'_>) -> Result<FeatureMap> {
        let s = self.stride.max(1);
        let (gh, gw) = self.grid_for(img);
        let c = img.channels();
        let dim = c + 2;
        let mut data = Vec::with_capacity(gh * gw * dim);
        for gy in 0..gh {
            for gx in 0..gw {
                let mut acc = vec![0.0f64; c];
                let mut n = 0usize;
                for y in gy * s..((gy + 1) * s).min(img.height()) {
                    for x in gx * s..((gx + 1) * s).min(img.width()) {
                        for (a, &v) in acc.iter_mut().zip(img.pixel(y, x)) {
                            *a += v;
                        }
                        n += 1;
                    }
                }
                data.extend(acc.iter().map(|&a| (a / n as f64) as f32));
                data.push(self.pos_weight * (gx as f32 + 0.5) / gw as f32);
                data.push(self.pos_weight * (gy as f32 + 0.5) / gh as f32);
            }
        }
        let fm = FeatureMap::new(gh, gw, dim, data)?;
        Ok(normalize_features(&fm, DEFAULT_NORM_EPS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_three_four() {
        let fm = FeatureMap::new(1, 1, 2, vec![3.0, 4.0]).unwrap();
        let n = normalize_features(&fm, DEFAULT_NORM_EPS);
        assert!(n.is_normalized());
        assert!((n.data()[0] - 0.6).abs() < 1e-7);
        assert!((n.data()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let fm = FeatureMap::new(1, 2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let n = normalize_features(&fm, 1e-8);
        assert_eq!(n.vector(0), &[0.0, 0.0]);
    }

    #[test]
    fn normalization_is_idempotent() {
        let fm = FeatureMap::new(2, 2, 3, (0..12).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        let once = normalize_features(&fm, DEFAULT_NORM_EPS);
        let twice = normalize_features(&once, DEFAULT_NORM_EPS);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        for v in once.vectors() {
            let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn toy_features_layout() {
        let img = ImageTensor::from_fn(2, 4, 3, |y, x, c| if c == 0 { (x + y) as f64 / 4.0 } else { 0.0 }).unwrap();
        let key = FeatureKey {
            sample_id: "s",
            role: FeatureRole::Original,
        };
        let f = ToyFeatureExtractor::default().embed(&img, &key).unwrap();
        assert_eq!((f.height(), f.width(), f.dim()), (2, 4, 5));
        // pixel (0, 0): color (0, 0, 0), position 0.25 * (0.125, 0.25)
        let v = f.vector(0);
        let (px, py) = (0.25f32 * 0.125, 0.25f32 * 0.25);
        let n = (px * px + py * py).sqrt();
        assert!((v[3] - px / n).abs() < 1e-6 && (v[4] - py / n).abs() < 1e-6);

        let strided = ToyFeatureExtractor { stride: 2, ..Default::default() }.embed(&img, &key).unwrap();
        assert_eq!(strided.grid(), (1, 2));
    }

    #[test]
    fn permutation_reorders_vectors() {
        let fm = FeatureMap::new(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(fm.permuted(&[2, 0, 1]).unwrap().data(), &[3.0, 1.0, 2.0]);
        assert!(fm.permuted(&[0, 1]).is_err());
    }
}
