//! Nearest-neighbor grid resampling.
//!
//! Destination cell `i` reads source cell `floor((i + 0.5) * src / dst)` on
//! each axis. Nearest sampling never invents values, so `{0, 1}` masks stay
//! binary.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ClassIndexMask, SoftMask};

/// Source index sampled by destination index `i`.
pub fn source_index(i: usize, src: usize, dst: usize) -> usize {
    // (2i + 1) * src / (2 dst) in integers avoids float rounding.
    (((2 * i + 1) * src) / (2 * dst)).min(src - 1)
}

fn index_map(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|i| source_index(i, src, dst)).collect()
}

fn resample_grid<T: Copy>(
    values: &[T],
    (src_h, src_w): (usize, usize),
    (dst_h, dst_w): (usize, usize),
) -> Result<Vec<T>> {
    if dst_h == 0 || dst_w == 0 {
        return Err(Error::invalid(format!(
            "resample target {dst_h}x{dst_w} has a zero dimension"
        )));
    }
    let rows = index_map(src_h, dst_h);
    let cols = index_map(src_w, dst_w);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for &sy in &rows {
        let row = &values[sy * src_w..(sy + 1) * src_w];
        out.extend(cols.iter().map(|&sx| row[sx]));
    }
    Ok(out)
}

pub fn resample_mask(mask: &SoftMask, target_h: usize, target_w: usize) -> Result<SoftMask> {
    if mask.dims() == (target_h, target_w) {
        return Ok(mask.clone());
    }
    let values = resample_grid(mask.values(), mask.dims(), (target_h, target_w))?;
    SoftMask::new(target_h, target_w, values)
}

pub fn resample_binary(mask: &BinaryMask, target_h: usize, target_w: usize) -> Result<BinaryMask> {
    if mask.dims() == (target_h, target_w) {
        return Ok(mask.clone());
    }
    let bits = resample_grid(mask.bits(), mask.dims(), (target_h, target_w))?;
    BinaryMask::new(target_h, target_w, bits)
}

pub fn resample_labels(
    mask: &ClassIndexMask,
    target_h: usize,
    target_w: usize,
) -> Result<ClassIndexMask> {
    if mask.dims() == (target_h, target_w) {
        return Ok(mask.clone());
    }
    let labels = resample_grid(mask.labels(), mask.dims(), (target_h, target_w))?;
    ClassIndexMask::new(target_h, target_w, labels)
}
