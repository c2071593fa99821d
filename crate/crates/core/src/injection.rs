//! Explicit mask injection into cross- and self-attention.
//!
//! A binarized coarse mask, flattened row-major to one entry per image
//! token, becomes two bias matrices:
//!
//! * cross: `A[i, j] = 1` iff token `j` belongs to the class name and image
//!   token `i` is foreground,
//! * self: `A[i, j] = 1` iff image tokens `i` and `j` are both foreground,
//!
//! which are added to the attention logits as
//! `softmax((Q K^T + alpha A) / sqrt(d))`.

use crate::error::{Error, Result};
use crate::resample::resample_binary;
use crate::types::{BinaryMask, SoftMask, TokenIndexSet};

/// Default soft-to-binary threshold for coarse masks.
pub const DEFAULT_BIN_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionKind {
    Cross,
    SelfAttention,
}

/// A `{0, 1}` attention bias matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectionMask {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    kind: InjectionKind,
}

impl InjectionMask {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>, kind: InjectionKind) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("injection mask must be binary"));
        }
        if kind == InjectionKind::SelfAttention {
            if rows != cols {
                return Err(Error::shape(format!(
                    "self-attention mask must be square, got {rows}x{cols}"
                )));
            }
            for i in 0..rows {
                for j in (i + 1)..cols {
                    if bits[i * cols + j] != bits[j * cols + i] {
                        return Err(Error::invalid("self-attention mask must be symmetric"));
                    }
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            bits,
            kind,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> InjectionKind {
        self.kind
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| usize::from(b)).sum()
    }
}

pub fn build_cross_injection(
    s1d: &BinaryMask,
    tokens: &TokenIndexSet,
    key_len: usize,
) -> Result<InjectionMask> {
    tokens.check_bound(key_len)?;
    let q = s1d.bits().len();
    let mut bits = vec![0u8; q * key_len];
    for (i, &fg) in s1d.bits().iter().enumerate() {
        if fg == 1 {
            let row = &mut bits[i * key_len..(i + 1) * key_len];
            for j in tokens.iter() {
                row[j] = 1;
            }
        }
    }
    InjectionMask::new(q, key_len, bits, InjectionKind::Cross)
}

pub fn build_self_injection(s1d: &BinaryMask) -> InjectionMask {
    let s = s1d.bits();
    let q = s.len();
    let mut bits = vec![0u8; q * q];
    for (i, &si) in s.iter().enumerate() {
        if si == 1 {
            bits[i * q..(i + 1) * q].copy_from_slice(s);
        }
    }
    InjectionMask {
        rows: q,
        cols: q,
        bits,
        kind: InjectionKind::SelfAttention,
    }
}

/// Query/key matrices of one attention head, both row-major with width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits {
    queries: Vec<f32>,
    keys: Vec<f32>,
    q_len: usize,
    k_len: usize,
    dim: usize,
}

impl AttentionLogits {
    pub fn new(queries: Vec<f32>, keys: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("attention dim must be positive"));
        }
        if !queries.len().is_multiple_of(dim) || !keys.len().is_multiple_of(dim) {
            return Err(Error::shape(format!(
                "Q ({}) and K ({}) lengths must be multiples of d = {dim}",
                queries.len(),
                keys.len()
            )));
        }
        if queries.iter().chain(&keys).any(|v| !v.is_finite()) {
            return Err(Error::invalid("attention inputs must be finite"));
        }
        Ok(Self {
            q_len: queries.len() / dim,
            k_len: keys.len() / dim,
            queries,
            keys,
            dim,
        })
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn k_len(&self) -> usize {
        self.k_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    /// Raw `Q K^T` in f64.
    pub fn scores(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.q_len * self.k_len);
        for q in self.queries.chunks_exact(d) {
            for k in self.keys.chunks_exact(d) {
                out.push(q.iter().zip(k).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum());
            }
        }
        out
    }
}

/// A row-stochastic `rows x cols` attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl AttentionWeights {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn softmax_rows(mut logits: Vec<f64>, rows: usize, cols: usize) -> AttentionWeights {
    for row in logits.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    AttentionWeights {
        rows,
        cols,
        data: logits,
    }
}

/// `softmax(Q K^T / sqrt(d))` row by row.
pub fn vanilla_attention(logits: &AttentionLogits) -> AttentionWeights {
    let scale = logits.scale();
    let scaled = logits.scores().into_iter().map(|s| s * scale).collect();
    softmax_rows(scaled, logits.q_len, logits.k_len)
}

/// `softmax((Q K^T + alpha A) / sqrt(d))` row by row.
pub fn inject_attention(
    logits: &AttentionLogits,
    mask: &InjectionMask,
    alpha: f32,
) -> Result<AttentionWeights> {
    if (mask.rows, mask.cols) != (logits.q_len, logits.k_len) {
        return Err(Error::shape(format!(
            "injection mask {}x{} vs attention {}x{}",
            mask.rows, mask.cols, logits.q_len, logits.k_len
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::invalid("injection weight must be finite"));
    }
    let scale = logits.scale();
    let alpha = f64::from(alpha);
    let biased = logits
        .scores()
        .into_iter()
        .zip(&mask.bits)
        .map(|(s, &a)| (s + alpha * f64::from(a)) * scale)
        .collect();
    Ok(softmax_rows(biased, logits.q_len, logits.k_len))
}

/// How the injection weight is chosen for a layer of head width `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InjectionWeight {
    /// The same weight for every layer.
    Absolute(f32),
    /// `factor * sqrt(d)`, keeping the bias on the scale of the raw logits.
    SqrtDimScaled(f32),
}

impl Default for InjectionWeight {
    fn default() -> Self {
        InjectionWeight::SqrtDimScaled(1.0)
    }
}

impl InjectionWeight {
    pub fn resolve(&self, dim: usize) -> f32 {
        match *self {
            InjectionWeight::Absolute(a) => a,
            InjectionWeight::SqrtDimScaled(f) => f * (dim as f32).sqrt(),
        }
    }
}

/// Both injection masks for one attention grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionLayer {
    pub mask: BinaryMask,
    pub cross: InjectionMask,
    pub self_attention: InjectionMask,
}

impl InjectionLayer {
    pub fn grid(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

/// Injection masks for every attention grid, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    pub layers: Vec<InjectionLayer>,
}

impl InjectionSet {
    pub fn finest(&self) -> Option<&InjectionLayer> {
        self.layers.first()
    }

    pub fn layer(&self, grid: (usize, usize)) -> Option<&InjectionLayer> {
        self.layers.iter().find(|l| l.grid() == grid)
    }
}

/// Binarizes `coarse`, then builds cross/self masks at each attention grid.
pub fn prepare_injection_set(
    coarse: &SoftMask,
    bin_threshold: f32,
    tokens: &TokenIndexSet,
    key_len: usize,
    grids: &[(usize, usize)],
) -> Result<InjectionSet> {
    if grids.is_empty() {
        return Err(Error::invalid("no attention resolutions given"));
    }
    let binary = coarse.binarize(bin_threshold);
    let mut grids = grids.to_vec();
    grids.sort_by_key(|&(h, w)| std::cmp::Reverse(h * w));
    grids.dedup();
    let layers = grids
        .into_iter()
        .map(|(h, w)| {
            let mask = resample_binary(&binary, h, w)?;
            Ok(InjectionLayer {
                cross: build_cross_injection(&mask, tokens, key_len)?,
                self_attention: build_self_injection(&mask),
                mask,
            })
        })
        .collect::<Result<_>>()?;
    Ok(InjectionSet { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask1d(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(1, bits.len(), bits.to_vec()).unwrap()
    }

    #[test]
    fn cross_single_token() {
        let a = build_cross_injection(&mask1d(&[1, 0, 1, 0]), &TokenIndexSet::new([1]), 3).unwrap();
        assert_eq!(a.count_ones(), 2);
        assert_eq!(a.bits(), &[0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn cross_empty_foreground() {
        let a = build_cross_injection(&mask1d(&[0, 0, 0]), &TokenIndexSet::new([0, 2]), 3).unwrap();
        assert_eq!(a.count_ones(), 0);
    }

    #[test]
    fn cross_all_foreground_two_tokens() {
        let q = 5;
        let a = build_cross_injection(&mask1d(&[1; 5]), &TokenIndexSet::new([0, 2]), 3).unwrap();
        let brute = (0..q)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(_, j)| j == 0 || j == 2)
            .count();
        assert_eq!(brute, 2 * q);
        assert_eq!(a.count_ones(), brute);
    }

    #[test]
    fn cross_rejects_token_out_of_range() {
        assert!(build_cross_injection(&mask1d(&[1]), &TokenIndexSet::new([3]), 3).is_err());
    }

    #[test]
    fn self_outer_product() {
        let a = build_self_injection(&mask1d(&[1, 0, 1]));
        assert_eq!(a.bits(), &[1, 0, 1, 0, 0, 0, 1, 0, 1]);
        assert_eq!(build_self_injection(&mask1d(&[0, 0])).count_ones(), 0);
    }

    #[test]
    fn self_matches_double_loop() {
        let s: Vec<u8> = (0..16u32).map(|i| ((i * 7 + 3) % 5 < 2) as u8).collect();
        let a = build_self_injection(&mask1d(&s));
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(a.get(i, j), s[i] == 1 && s[j] == 1);
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn zero_weight_is_vanilla() {
        let logits = AttentionLogits::new(vec![0.3, -1.0, 2.0, 0.5], vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5], 2).unwrap();
        let a = build_cross_injection(&mask1d(&[1, 0]), &TokenIndexSet::new([2]), 3).unwrap();
        let injected = inject_attention(&logits, &a, 0.0).unwrap();
        let vanilla = vanilla_attention(&logits);
        for (x, y) in injected.data().iter().zip(vanilla.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn positive_weight_moves_mass() {
        // One query, two keys with equal scores: mass on column 0 goes from
        // 1/2 to 1 / (1 + exp(-20 / sqrt(2))).
        let logits = AttentionLogits::new(vec![1.0, 1.0], vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let a = InjectionMask::new(1, 2, vec![1, 0], InjectionKind::Cross).unwrap();
        let base = inject_attention(&logits, &a, 0.0).unwrap().row(0)[0];
        let biased = inject_attention(&logits, &a, 20.0).unwrap().row(0)[0];
        assert!((base - 0.5).abs() < 1e-15);
        let expected = 1.0 / (1.0 + (-20.0 / 2f64.sqrt()).exp());
        assert!((biased - expected).abs() < 1e-12);
        assert!(biased > base);
    }

    #[test]
    fn zero_qk_gives_uniform_rows() {
        let logits = AttentionLogits::new(vec![0.0; 6], vec![0.0; 8], 2).unwrap();
        let a = InjectionMask::new(3, 4, vec![0; 12], InjectionKind::Cross).unwrap();
        let w = inject_attention(&logits, &a, 5.0).unwrap();
        assert!(w.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch() {
        let logits = AttentionLogits::new(vec![0.0; 4], vec![0.0; 4], 2).unwrap();
        let a = InjectionMask::new(2, 3, vec![0; 6], InjectionKind::Cross).unwrap();
        assert!(inject_attention(&logits, &a, 1.0).is_err());
    }

    #[test]
    fn self_mask_validation() {
        assert!(InjectionMask::new(2, 2, vec![0, 1, 0, 0], InjectionKind::SelfAttention).is_err());
        assert!(InjectionMask::new(2, 3, vec![0; 6], InjectionKind::SelfAttention).is_err());
    }

    #[test]
    fn weight_resolution() {
        assert_eq!(InjectionWeight::Absolute(3.0).resolve(64), 3.0);
        assert_eq!(InjectionWeight::default().resolve(64), 8.0);
    }

    #[test]
    fn prepare_identity_grid() {
        let coarse = SoftMask::from_fn(4, 4, |y, x| if y < 2 && x > 0 { 1.0 } else { 0.0 }).unwrap();
        let tokens = TokenIndexSet::new([4]);
        let set = prepare_injection_set(&coarse, 0.5, &tokens, 77, &[(4, 4)]).unwrap();
        let direct = coarse.binarize(0.5);
        let layer = set.finest().unwrap();
        assert_eq!(layer.mask, direct);
        assert_eq!(layer.cross, build_cross_injection(&direct, &tokens, 77).unwrap());
        assert_eq!(layer.self_attention, build_self_injection(&direct));
    }

    #[test]
    fn prepare_below_threshold_is_background() {
        let coarse = SoftMask::filled(8, 8, 0.4).unwrap();
        let set = prepare_injection_set(&coarse, 0.5, &TokenIndexSet::new([4]), 77, &[(8, 8), (4, 4)]).unwrap();
        for layer in &set.layers {
            assert_eq!(layer.cross.count_ones(), 0);
            assert_eq!(layer.self_attention.count_ones(), 0);
        }
    }

    #[test]
    fn prepare_requires_resolutions() {
        let coarse = SoftMask::filled(2, 2, 1.0).unwrap();
        assert!(prepare_injection_set(&coarse, 0.5, &TokenIndexSet::new([1]), 4, &[]).is_err());
    }
}
