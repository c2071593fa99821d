//! C ABI over the `segrefine` engine.
//!
//! Every fallible function returns a [`SegStatus`]. On failure a message is
//! kept per thread and can be read with [`seg_last_error`]. Handles are
//! opaque, created by `*_new`/`*_read` functions and released by the
//! matching `*_free`. Output buffers are caller-allocated; their required
//! length is stated on each function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use segrefine::correspondence::{
    find_correspondence, find_correspondence_parallel, mix_probabilities, normalize_features, CorrespondenceMap,
    FeatureMap, MixConfig, DEFAULT_NORM_EPS,
};
use segrefine::diffusion::{add_noise, predict_x0, NoiseSchedule};
use segrefine::evaluation::{mean_iou, IouMode};
use segrefine::injection::{
    build_cross_injection, build_self_injection, inject_attention, AttentionLogits, InjectionKind, InjectionMask,
};
use segrefine::tensor_file::{self, Tensor};
use segrefine::types::{BinaryMask, ClassIndexMask, ImageTensor, SoftMask, TokenIndexSet};
use segrefine::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Format = 4,
    Io = 5,
    Missing = 6,
    Panic = 7,
}

const UNIT_NORM_TOL: f64 = 1e-4;

/// A feature map of unit-norm pixel vectors.
pub struct SegFeatureMap(FeatureMap);

/// A cumulative noise schedule.
pub struct SegSchedule(NoiseSchedule);

/// A dense `f32` tensor in interchange layout.
pub struct SegTensor(Tensor);

/// Attention mask kind for [`seg_inject_attention`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegAttentionKind {
    Cross = 0,
    SelfAttention = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::ShapeMismatch(_) | Error::LengthMismatch { .. } => SegStatus::ShapeMismatch,
            Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Malformed(_)
            | Error::Manifest(_)
            | Error::Json { .. }
            | Error::Png(_) => SegStatus::Format,
            Error::Io { .. } => SegStatus::Io,
            Error::MissingRecord { .. } | Error::MissingFeatures { .. } => SegStatus::Missing,
            _ => SegStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SegStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SegStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SegStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SegStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn area(parts: &[usize]) -> Result<usize, Fail> {
    parts
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| invalid(format!("dims {parts:?} overflow")))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn seg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn seg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a feature map from `h * w * d` row-major floats. With `normalize`
/// set, pixel vectors are scaled to unit norm; otherwise each must already
/// have norm within `1e-4` of one and is rescaled exactly.
///
/// # Safety
/// `data` must point to `h * w * d` floats and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seg_feature_map_new(
    h: usize,
    w: usize,
    d: usize,
    data: *const f32,
    normalize: bool,
    out: *mut *mut SegFeatureMap,
) -> SegStatus {
    guard(|| {
        let n = area(&[h, w, d])?;
        let fm = FeatureMap::new(h, w, d, input(data, n, "data")?.to_vec())?;
        if !normalize {
            let norm = |v: &[f32]| v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if let Some(i) = fm.vectors().position(|v| (norm(v) - 1.0).abs() > UNIT_NORM_TOL) {
                return Err(invalid(format!("feature vector {i} is not unit-norm")));
            }
        }
        put(out, SegFeatureMap(normalize_features(&fm, DEFAULT_NORM_EPS)))
    })
}

/// # Safety
/// `fm` must be null or a handle from [`seg_feature_map_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn seg_feature_map_free(fm: *mut SegFeatureMap) {
    free(fm)
}

/// For each generated pixel, the index of the nearest original pixel under
/// cosine distance (ties to the lowest index). `workers` of 0 or 1 searches
/// on the calling thread. `indices` holds `h * w` entries; `distances` may be
/// null or hold `h * w` entries.
///
/// # Safety
/// Handles must be live; buffers must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn seg_find_correspondence(
    orig: *const SegFeatureMap,
    gen: *const SegFeatureMap,
    workers: usize,
    indices: *mut usize,
    distances: *mut f32,
    len: usize,
) -> SegStatus {
    guard(|| {
        let (o, g) = (&handle(orig, "orig")?.0, &handle(gen, "gen")?.0);
        if len != g.len() {
            return Err(Fail(SegStatus::ShapeMismatch, format!("buffer length {len}, grid has {} pixels", g.len())));
        }
        let m = if workers > 1 { find_correspondence_parallel(o, g, workers)? } else { find_correspondence(o, g)? };
        output(indices, len, "indices")?.copy_from_slice(m.indices());
        if !distances.is_null() {
            output(distances, len, "distances")?.copy_from_slice(m.distances());
        }
        Ok(())
    })
}

/// Mixes an `h * w` soft mask with itself at the matched locations `delta`,
/// writing `h * w` values to `out`.
///
/// # Safety
/// `mask`, `delta` and `out` must hold `h * w` elements.
#[no_mangle]
pub unsafe extern "C" fn seg_mix_probabilities(
    h: usize,
    w: usize,
    mask: *const f32,
    delta: *const usize,
    beta: f32,
    cf_low: f32,
    cf_high: f32,
    out: *mut f32,
) -> SegStatus {
    guard(|| {
        let n = area(&[h, w])?;
        let s = SoftMask::new(h, w, input(mask, n, "mask")?.to_vec())?;
        let d = CorrespondenceMap::new(h, w, input(delta, n, "delta")?.to_vec())?;
        let cfg = MixConfig { beta, cf_low, cf_high };
        let mixed = mix_probabilities(&s, &d, &cfg)?;
        output(out, n, "out")?.copy_from_slice(mixed.values());
        Ok(())
    })
}

/// Cross-attention injection mask for an `h * w` binary mask: row `i` is one
/// at the `tokens` columns when pixel `i` is foreground. Writes
/// `h * w * key_len` bytes.
///
/// # Safety
/// `bits` holds `h * w` bytes, `tokens` holds `n_tokens` entries, `out`
/// holds `h * w * key_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn seg_cross_injection(
    h: usize,
    w: usize,
    bits: *const u8,
    tokens: *const usize,
    n_tokens: usize,
    key_len: usize,
    out: *mut u8,
) -> SegStatus {
    guard(|| {
        let n = area(&[h, w])?;
        let m = BinaryMask::new(h, w, input(bits, n, "bits")?.to_vec())?;
        let t = TokenIndexSet::new(input(tokens, n_tokens, "tokens")?.iter().copied());
        let a = build_cross_injection(&m, &t, key_len)?;
        output(out, area(&[n, key_len])?, "out")?.copy_from_slice(a.bits());
        Ok(())
    })
}

/// Self-attention injection mask `S S^T` for an `h * w` binary mask. Writes
/// `(h * w)^2` bytes.
///
/// # Safety
/// `bits` holds `h * w` bytes and `out` holds `(h * w)^2` bytes.
#[no_mangle]
pub unsafe extern "C" fn seg_self_injection(h: usize, w: usize, bits: *const u8, out: *mut u8) -> SegStatus {
    guard(|| {
        let n = area(&[h, w])?;
        let m = BinaryMask::new(h, w, input(bits, n, "bits")?.to_vec())?;
        let a = build_self_injection(&m);
        output(out, area(&[n, n])?, "out")?.copy_from_slice(a.bits());
        Ok(())
    })
}

/// `softmax((Q K^T + alpha A) / sqrt(dim))` for `q_len x dim` queries and
/// `k_len x dim` keys. `mask` holds `q_len * k_len` bytes; `out` receives
/// `q_len * k_len` weights.
///
/// # Safety
/// Buffers must hold the lengths stated above.
#[no_mangle]
pub unsafe extern "C" fn seg_inject_attention(
    q_len: usize,
    k_len: usize,
    dim: usize,
    queries: *const f32,
    keys: *const f32,
    mask: *const u8,
    kind: SegAttentionKind,
    alpha: f32,
    out: *mut f64,
) -> SegStatus {
    guard(|| {
        let q = input(queries, area(&[q_len, dim])?, "queries")?.to_vec();
        let k = input(keys, area(&[k_len, dim])?, "keys")?.to_vec();
        let logits = AttentionLogits::new(q, k, dim)?;
        if logits.q_len() != q_len || logits.k_len() != k_len {
            return Err(Fail(SegStatus::ShapeMismatch, "query or key count mismatch".into()));
        }
        let cells = area(&[q_len, k_len])?;
        let kind = match kind {
            SegAttentionKind::Cross => InjectionKind::Cross,
            SegAttentionKind::SelfAttention => InjectionKind::SelfAttention,
        };
        let a = InjectionMask::new(q_len, k_len, input(mask, cells, "mask")?.to_vec(), kind)?;
        let wts = inject_attention(&logits, &a, alpha)?;
        output(out, cells, "out")?.copy_from_slice(wts.data());
        Ok(())
    })
}

/// Linear-beta schedule over `steps` training steps.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seg_schedule_linear(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut SegSchedule,
) -> SegStatus {
    guard(|| put(out, SegSchedule(NoiseSchedule::linear(steps, beta_start, beta_end)?)))
}

/// The default 1000-step schedule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn seg_schedule_default(out: *mut *mut SegSchedule) -> SegStatus {
    guard(|| put(out, SegSchedule(NoiseSchedule::default())))
}

/// # Safety
/// `s` must be null or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn seg_schedule_free(s: *mut SegSchedule) {
    free(s)
}

/// Cumulative signal fraction at timestep `t`.
///
/// # Safety
/// `s` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seg_schedule_alpha_bar(s: *const SegSchedule, t: usize, out: *mut f64) -> SegStatus {
    guard(|| {
        let v = handle(s, "schedule")?.0.alpha_bar(t)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

unsafe fn image(h: usize, w: usize, c: usize, p: *const f64, what: &str) -> Result<ImageTensor, Fail> {
    Ok(ImageTensor::new(h, w, c, input(p, area(&[h, w, c])?, what)?.to_vec())?)
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps` over `h * w * c` values.
///
/// # Safety
/// `x0`, `eps` and `out` must hold `h * w * c` values; `s` must be live.
#[no_mangle]
pub unsafe extern "C" fn seg_add_noise(
    s: *const SegSchedule,
    h: usize,
    w: usize,
    c: usize,
    x0: *const f64,
    eps: *const f64,
    t: usize,
    out: *mut f64,
) -> SegStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        let r = add_noise(&image(h, w, c, x0, "x0")?, t, &image(h, w, c, eps, "eps")?, s)?;
        output(out, r.data().len(), "out")?.copy_from_slice(r.data());
        Ok(())
    })
}

/// `x0_hat = (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)` over `h * w * c` values.
///
/// # Safety
/// `x_t`, `eps` and `out` must hold `h * w * c` values; `s` must be live.
#[no_mangle]
pub unsafe extern "C" fn seg_predict_x0(
    s: *const SegSchedule,
    h: usize,
    w: usize,
    c: usize,
    x_t: *const f64,
    eps: *const f64,
    t: usize,
    out: *mut f64,
) -> SegStatus {
    guard(|| {
        let s = &handle(s, "schedule")?.0;
        let r = predict_x0(&image(h, w, c, x_t, "x_t")?, &image(h, w, c, eps, "eps")?, t, s)?;
        output(out, r.data().len(), "out")?.copy_from_slice(r.data());
        Ok(())
    })
}

/// Tensor of `rank` dims with their product of floats.
///
/// # Safety
/// `dims` holds `rank` entries, `data` their product; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_new(
    rank: usize,
    dims: *const usize,
    data: *const f32,
    out: *mut *mut SegTensor,
) -> SegStatus {
    guard(|| {
        let dims = input(dims, rank, "dims")?.to_vec();
        let n = area(&dims)?;
        put(out, SegTensor(Tensor::new(dims, input(data, n, "data")?.to_vec())?))
    })
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))
}

/// Reads a tensor file.
///
/// # Safety
/// `file` is a nul-terminated path; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_read(file: *const c_char, out: *mut *mut SegTensor) -> SegStatus {
    guard(|| put(out, SegTensor(tensor_file::load(path(file)?)?)))
}

/// Writes a tensor file.
///
/// # Safety
/// `t` must be live; `file` is a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_write(t: *const SegTensor, file: *const c_char) -> SegStatus {
    guard(|| Ok(tensor_file::save(path(file)?, &handle(t, "tensor")?.0)?))
}

/// Rank of a tensor, 0 for a null handle.
///
/// # Safety
/// `t` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_rank(t: *const SegTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// Number of floats in a tensor, 0 for a null handle.
///
/// # Safety
/// `t` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_len(t: *const SegTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.data().len())
}

/// Copies the dims into `dims`, which holds `cap` entries.
///
/// # Safety
/// `t` must be live; `dims` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_dims(t: *const SegTensor, dims: *mut usize, cap: usize) -> SegStatus {
    guard(|| {
        let d = handle(t, "tensor")?.0.dims();
        if cap < d.len() {
            return Err(Fail(SegStatus::ShapeMismatch, format!("rank {} exceeds capacity {cap}", d.len())));
        }
        output(dims, d.len(), "dims")?.copy_from_slice(d);
        Ok(())
    })
}

/// Borrowed pointer to the tensor payload, valid until the handle is freed.
///
/// # Safety
/// `t` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_data(t: *const SegTensor) -> *const f32 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn seg_tensor_free(t: *mut SegTensor) {
    free(t)
}

/// Mean IoU over `n` label masks of `h * w` pixels, stored back to back.
/// Ground-truth label 255 is ignored. Classes absent from both masks drop
/// out of the mean.
///
/// # Safety
/// `preds` and `gts` hold `n * h * w` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn seg_mean_iou(
    n: usize,
    h: usize,
    w: usize,
    preds: *const u8,
    gts: *const u8,
    num_classes: usize,
    per_image: bool,
    out: *mut f64,
) -> SegStatus {
    guard(|| {
        let px = area(&[h, w])?;
        let total = area(&[n, px])?;
        let split = |buf: &[u8]| {
            buf.chunks_exact(px.max(1))
                .take(n)
                .map(|c| ClassIndexMask::new(h, w, c[..px].to_vec()))
                .collect::<segrefine::Result<Vec<_>>>()
        };
        let p = split(input(preds, total, "preds")?)?;
        let g = split(input(gts, total, "gts")?)?;
        let mode = if per_image { IouMode::PerImage } else { IouMode::Accumulated };
        let r = mean_iou(&p, &g, num_classes, mode)?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.mean_iou;
        Ok(())
    })
}
