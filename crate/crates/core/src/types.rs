//! Dense value types shared by every stage of the pipeline.
//!
//! All grids are flattened row-major: pixel `(y, x)` lives at `y * width + x`,
//! and for multi-channel images channel `c` of that pixel at
//! `(y * width + x) * channels + c`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn check_dims(dims: &[(&str, usize)]) -> Result<()> {
    for (name, v) in dims {
        if *v == 0 {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_finite64(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_unit_range64(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::OutOfRange {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

fn check_unit_range(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::OutOfRange {
            index,
            value: f64::from(data[index]),
        }),
        None => Ok(()),
    }
}

/// An `height x width x channels` float image.
///
/// Samples are held in `f64`: dividing by `sqrt(alpha_bar)` near the end of
/// the schedule amplifies storage rounding by two orders of magnitude.
///
/// Construction only enforces shape and finiteness: noisy samples and noise
/// fields share this type and are not confined to `[0, 1]`. Use
/// [`validate_image`] for pixel-space images.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(&[("height", height), ("width", width), ("channels", channels)])?;
        check_len(height * width * channels, data.len())?;
        check_finite64(&data)?;
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub(crate) fn same_shape(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Checks every pixel-space image invariant and hands the image back.
pub fn validate_image(img: ImageTensor) -> Result<ImageTensor> {
    check_dims(&[
        ("height", img.height),
        ("width", img.width),
        ("channels", img.channels),
    ])?;
    check_len(img.height * img.width * img.channels, img.data.len())?;
    check_finite64(&img.data)?;
    check_unit_range64(&img.data)?;
    Ok(img)
}

/// Per-pixel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(&[("height", height), ("width", width)])?;
        check_len(height * width, values.len())?;
        check_finite(&values)?;
        check_unit_range(&values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Foreground where the probability reaches `threshold`.
    pub fn binarize(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.values.iter().map(|&v| u8::from(v >= threshold)).collect(),
        }
    }
}

/// A `{0, 1}` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        check_dims(&[("height", height), ("width", width)])?;
        check_len(height * width, bits.len())?;
        if let Some(index) = bits.iter().position(|&b| b > 1) {
            return Err(Error::invalid(format!(
                "binary mask value {} at index {index}",
                bits[index]
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(u8::from(f(y, x)));
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// The row-major 1-D view of the mask.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            values: self.bits.iter().map(|&b| f32::from(b)).collect(),
        }
    }
}

/// Sorted, de-duplicated indices into the text-token axis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenIndexSet(BTreeSet<usize>);

impl TokenIndexSet {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        Self(indices.into_iter().collect())
    }

    /// Rejects any index that does not address one of `key_len` tokens.
    pub fn check_bound(&self, key_len: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i >= key_len) {
            Some(i) => Err(Error::invalid(format!(
                "token index {i} out of range for key length {key_len}"
            ))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

/// Label value excluded from every evaluation count.
pub const IGNORE_LABEL: u8 = 255;

/// Per-pixel class labels, `0` being background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndexMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ClassIndexMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(&[("height", height), ("width", width)])?;
        check_len(height * width, labels.len())?;
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Like [`ClassIndexMask::new`] but also rejects labels outside
    /// `0..num_classes` (the ignore label is allowed).
    pub fn with_class_count(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        num_classes: usize,
    ) -> Result<Self> {
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != IGNORE_LABEL && usize::from(l) >= num_classes)
        {
            return Err(Error::invalid(format!(
                "label {bad} not below class count {num_classes}"
            )));
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// `{0, 1}` soft map of the pixels carrying `label`.
    pub fn class_map(&self, label: u8) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            values: self
                .labels
                .iter()
                .map(|&l| if l == label { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}
