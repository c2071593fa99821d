//! Dense nearest-neighbor search under cosine distance.
//!
//! For every generated pixel `j` the search returns the original pixel `j'`
//! minimizing `1 - <F_orig[j'], F_gen[j]>`, ties going to the lowest `j'`.
//!
//! Both routes accumulate each dot product in `f32`, strictly in feature
//! order, so the tiled kernel reproduces the brute-force distances bit for bit
//! and the two agree on every index, ties included.

use rayon::prelude::*;

use super::features::FeatureMap;
use crate::error::{Error, Result};

/// For each generated pixel, the index of its best original pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    height: usize,
    width: usize,
    indices: Vec<usize>,
    distances: Vec<f32>,
}

impl CorrespondenceMap {
    pub fn new(height: usize, width: usize, indices: Vec<usize>) -> Result<Self> {
        let n = height * width;
        if indices.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("correspondence index {bad} outside 0..{n}")));
        }
        Ok(Self {
            height,
            width,
            indices,
            distances: vec![f32::NAN; n],
        })
    }

    /// The identity map on an `height x width` grid.
    pub fn identity(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            indices: (0..n).collect(),
            distances: vec![f32::NAN; n],
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Best-match distance per generated pixel, clamped at zero; NaN when the
    /// map was not produced by a search.
    pub fn distances(&self) -> &[f32] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_pair(orig: &FeatureMap, gen: &FeatureMap) -> Result<()> {
    if orig.grid() != gen.grid() || orig.dim() != gen.dim() {
        return Err(Error::shape(format!(
            "feature maps {}x{}x{} vs {}x{}x{}",
            orig.height(),
            orig.width(),
            orig.dim(),
            gen.height(),
            gen.width(),
            gen.dim()
        )));
    }
    if !orig.is_normalized() || !gen.is_normalized() {
        return Err(Error::invalid("correspondence search needs normalized features"));
    }
    Ok(())
}

fn finish(gen: &FeatureMap, indices: Vec<usize>, raw: Vec<f32>) -> CorrespondenceMap {
    CorrespondenceMap {
        height: gen.height(),
        width: gen.width(),
        indices,
        distances: raw.into_iter().map(|d| d.max(0.0)).collect(),
    }
}

/// Exhaustive double loop; the reference every other route is checked against.
pub fn find_correspondence_bruteforce(orig: &FeatureMap, gen: &FeatureMap) -> Result<CorrespondenceMap> {
    check_pair(orig, gen)?;
    let mut indices = Vec::with_capacity(gen.len());
    let mut dists = Vec::with_capacity(gen.len());
    for g in gen.vectors() {
        let mut best = f32::INFINITY;
        let mut best_idx = 0;
        for (j, o) in orig.vectors().enumerate() {
            let mut dot = 0.0f32;
            for k in 0..g.len() {
                dot += g[k] * o[k];
            }
            let dist = 1.0 - dot;
            if dist < best {
                best = dist;
                best_idx = j;
            }
        }
        indices.push(best_idx);
        dists.push(best);
    }
    Ok(finish(gen, indices, dists))
}

const LANES: usize = 16;
const ROWS: usize = 4;

/// Original features rearranged into tiles of `LANES` pixels, each tile laid
/// out feature-major so one feature of all lanes is contiguous.
struct PackedOriginals {
    tiles: usize,
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl PackedOriginals {
    fn new(orig: &FeatureMap) -> Self {
        let (n, d) = (orig.len(), orig.dim());
        let tiles = n.div_ceil(LANES);
        let mut data = vec![0.0f32; tiles * d * LANES];
        for (j, v) in orig.vectors().enumerate() {
            let (t, l) = (j / LANES, j % LANES);
            for (k, &x) in v.iter().enumerate() {
                data[(t * d + k) * LANES + l] = x;
            }
        }
        Self {
            tiles,
            dim: d,
            count: n,
            data,
        }
    }

    fn tile(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim * LANES..(t + 1) * self.dim * LANES]
    }
}

/// Best matches for up to `ROWS` generated vectors packed row-major in `group`.
fn search_group(packed: &PackedOriginals, group: &[f32], rows: usize) -> ([usize; ROWS], [f32; ROWS]) {
    let d = packed.dim;
    let mut best = [f32::INFINITY; ROWS];
    let mut best_idx = [0usize; ROWS];
    for t in 0..packed.tiles {
        let tile = packed.tile(t);
        let mut acc = [[0.0f32; LANES]; ROWS];
        for k in 0..d {
            let o: &[f32; LANES] = tile[k * LANES..(k + 1) * LANES]
                .try_into()
                .expect("tile row has LANES entries");
            for r in 0..ROWS {
                let g = group[r * d + k];
                let a = &mut acc[r];
                for l in 0..LANES {
                    a[l] += g * o[l];
                }
            }
        }
        let valid = LANES.min(packed.count - t * LANES);
        for r in 0..rows {
            for (l, &dot) in acc[r][..valid].iter().enumerate() {
                let dist = 1.0 - dot;
                if dist < best[r] {
                    best[r] = dist;
                    best_idx[r] = t * LANES + l;
                }
            }
        }
    }
    (best_idx, best)
}

fn search_range(packed: &PackedOriginals, gen: &FeatureMap, start: usize, end: usize) -> (Vec<usize>, Vec<f32>) {
    let d = gen.dim();
    let mut indices = Vec::with_capacity(end - start);
    let mut dists = Vec::with_capacity(end - start);
    let mut group = vec![0.0f32; ROWS * d];
    let mut j = start;
    while j < end {
        let rows = ROWS.min(end - j);
        group.fill(0.0);
        group[..rows * d].copy_from_slice(&gen.data()[j * d..(j + rows) * d]);
        let (idx, best) = search_group(packed, &group, rows);
        indices.extend_from_slice(&idx[..rows]);
        dists.extend_from_slice(&best[..rows]);
        j += rows;
    }
    (indices, dists)
}

/// Tiled search, single-threaded. Output is identical to
/// [`find_correspondence_bruteforce`].
pub fn find_correspondence(orig: &FeatureMap, gen: &FeatureMap) -> Result<CorrespondenceMap> {
    check_pair(orig, gen)?;
    let packed = PackedOriginals::new(orig);
    let (indices, dists) = search_range(&packed, gen, 0, gen.len());
    Ok(finish(gen, indices, dists))
}

/// Tiled search split over `workers` threads by generated-pixel blocks. The
/// result does not depend on the worker count.
pub fn find_correspondence_parallel(
    orig: &FeatureMap,
    gen: &FeatureMap,
    workers: usize,
) -> Result<CorrespondenceMap> {
    check_pair(orig, gen)?;
    let packed = PackedOriginals::new(orig);
    let block = 64 * ROWS;
    let starts: Vec<usize> = (0..gen.len()).step_by(block).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let parts: Vec<(Vec<usize>, Vec<f32>)> = pool.install(|| {
        starts
            .par_iter()
            .map(|&s| search_range(&packed, gen, s, (s + block).min(gen.len())))
            .collect()
    });
    let mut indices = Vec::with_capacity(gen.len());
    let mut dists = Vec::with_capacity(gen.len());
    for (i, d) in parts {
        indices.extend(i);
        dists.extend(d);
    }
    Ok(finish(gen, indices, dists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::features::{normalize_features, DEFAULT_NORM_EPS};
    use proptest::prelude::*;

    fn normed(h: usize, w: usize, d: usize, data: Vec<f32>) -> FeatureMap {
        normalize_features(&FeatureMap::new(h, w, d, data).unwrap(), DEFAULT_NORM_EPS)
    }

    #[test]
    fn identical_distinct_maps_give_identity() {
        let f = normed(2, 3, 2, (0..6).flat_map(|i| {
            let a = i as f32 * 0.4;
            [a.cos(), a.sin()]
        }).collect());
        let c = find_correspondence_bruteforce(&f, &f).unwrap();
        assert_eq!(c.indices(), &[0, 1, 2, 3, 4, 5]);
        assert_eq!(find_correspondence(&f, &f).unwrap(), c);
    }

    #[test]
    fn hand_chosen_two_by_two() {
        // Original: axis-aligned unit vectors and a diagonal; each generated
        // vector's best match is found by enumerating all 16 cosines.
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let orig = normed(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, s, s, -1.0, 0.0]);
        let gen = normed(2, 2, 2, vec![0.9, 0.1, 0.2, 0.9, -0.8, 0.3, 0.5, 0.55]);
        let c = find_correspondence_bruteforce(&orig, &gen).unwrap();
        assert_eq!(c.indices(), &[0, 1, 3, 2]);
        assert_eq!(find_correspondence(&orig, &gen).unwrap(), c);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let orig = normed(1, 3, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        let gen = normed(1, 3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let c = find_correspondence(&orig, &gen).unwrap();
        assert_eq!(c.indices(), &[1, 1, 0]);
        assert_eq!(find_correspondence_bruteforce(&orig, &gen).unwrap(), c);
    }

    #[test]
    fn single_pixel() {
        let f = normed(1, 1, 3, vec![0.2, 0.3, 0.4]);
        assert_eq!(find_correspondence(&f, &f).unwrap().indices(), &[0]);
    }

    #[test]
    fn zero_vectors_match_nothing_preferentially() {
        let orig = normed(1, 3, 2, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let gen = normed(1, 3, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let c = find_correspondence(&orig, &gen).unwrap();
        assert_eq!(c.indices(), &[0, 0, 0]);
        assert!(c.distances().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn rejects_mismatch_and_unnormalized() {
        let a = normed(2, 2, 2, vec![1.0; 8]);
        let b = normed(1, 4, 2, vec![1.0; 8]);
        assert!(find_correspondence(&a, &b).is_err());
        let raw = FeatureMap::new(2, 2, 2, vec![1.0; 8]).unwrap();
        assert!(find_correspondence(&raw, &a).is_err());
        assert!(find_correspondence_bruteforce(&a, &raw).is_err());
    }

    proptest! {
        #[test]
        fn tiled_and_parallel_equal_bruteforce(
            h in 1usize..12, w in 1usize..12, d in 1usize..20,
            discrete in any::<bool>(),
            seed in any::<u64>(),
            workers in 1usize..5,
        ) {
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state
            };
            let n = h * w * d;
            let data: Vec<f32> = (0..2 * n)
                .map(|_| {
                    let r = next();
                    if discrete { (r % 3) as f32 - 1.0 } else { (r >> 40) as f32 / (1u64 << 23) as f32 - 1.0 }
                })
                .collect();
            let orig = normed(h, w, d, data[..n].to_vec());
            let gen = normed(h, w, d, data[n..].to_vec());
            let brute = find_correspondence_bruteforce(&orig, &gen).unwrap();
            let tiled = find_correspondence(&orig, &gen).unwrap();
            prop_assert_eq!(brute.indices(), tiled.indices());
            prop_assert!(brute.distances().iter().zip(tiled.distances()).all(|(a, b)| a.to_bits() == b.to_bits()));
            let par = find_correspondence_parallel(&orig, &gen, workers).unwrap();
            prop_assert_eq!(par.indices(), brute.indices());
        }
    }
}
