//! Mask assembly, IoU metrics and quality-stratified gain reports.

mod assemble;
mod metrics;
mod stratified;

pub use assemble::{assemble_class_mask, DEFAULT_BG_THRESHOLD};
pub use metrics::{class_counts, iou, mean_iou, sample_foreground_iou, ClassCounts, ClassIou, IoUReport, IouMode};
pub use stratified::{stratified_gain, stratify_scores, Band, BandGain, StratifiedGainReport, DEFAULT_BANDS};
