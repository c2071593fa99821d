use serde::{Deserialize, Serialize};

use super::metrics::sample_foreground_iou;
use crate::error::{Error, Result};
use crate::types::ClassIndexMask;

/// A half-open IoU range in points; the last band of a partition also
/// includes its upper edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

pub const DEFAULT_BANDS: [Band; 3] = [
    Band { low: 0.0, high: 40.0 },
    Band { low: 40.0, high: 80.0 },
    Band { low: 80.0, high: 100.0 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandGain {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub mean_initial: Option<f64>,
    pub mean_refined: Option<f64>,
    /// Mean of `refined - initial` in IoU points; `None` for an empty band.
    pub mean_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedGainReport {
    pub total: usize,
    pub bands: Vec<BandGain>,
}

impl StratifiedGainReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, signed: bool| match v {
            Some(v) if signed => format!("{v:+.2}"),
            Some(v) => format!("{v:.2}"),
            None => "-".into(),
        };
        let mut s = format!(
            "{:<12} {:>7} {:>9} {:>9} {:>8}\n",
            "initial IoU", "samples", "initial", "refined", "gain"
        );
        for (i, b) in self.bands.iter().enumerate() {
            let close = if i + 1 == self.bands.len() { ']' } else { ')' };
            s += &format!(
                "{:<12} {:>7} {:>9} {:>9} {:>8}\n",
                format!("[{}, {}{close}", b.low, b.high),
                b.count,
                opt(b.mean_initial, false),
                opt(b.mean_refined, false),
                opt(b.mean_gain, true)
            );
        }
        s + &format!("{:<12} {:>7}\n", "total", self.total)
    }
}

fn check_partition(bands: &[Band]) -> Result<()> {
    let ok = !bands.is_empty()
        && bands[0].low == 0.0
        && bands[bands.len() - 1].high == 100.0
        && bands.iter().all(|b| b.low < b.high)
        && bands.windows(2).all(|w| w[0].high == w[1].low);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("bands {bands:?} do not partition [0, 100]")))
    }
}

fn band_of(bands: &[Band], v: f64) -> usize {
    bands
        .iter()
        .position(|b| v >= b.low && v < b.high)
        .unwrap_or(bands.len() - 1)
}

/// Buckets per-sample `(initial, refined)` foreground IoUs, in points, by
/// the initial value and averages each band.
pub fn stratify_scores(scores: &[(f64, f64)], bands: &[Band]) -> Result<StratifiedGainReport> {
    check_partition(bands)?;
    if scores.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if let Some(&(a, b)) = scores
        .iter()
        .find(|(a, b)| !(0.0..=100.0).contains(a) || !(0.0..=100.0).contains(b))
    {
        return Err(Error::invalid(format!("IoU pair ({a}, {b}) outside [0, 100]")));
    }
    let mut acc = vec![(0usize, 0.0f64, 0.0f64, 0.0f64); bands.len()];
    for &(init, refined) in scores {
        let a = &mut acc[band_of(bands, init)];
        a.0 += 1;
        a.1 += init;
        a.2 += refined;
        a.3 += refined - init;
    }
    let bands = bands
        .iter()
        .zip(acc)
        .map(|(b, (n, i, r, g))| {
            let avg = |v: f64| (n > 0).then(|| v / n as f64);
            BandGain {
                low: b.low,
                high: b.high,
                count: n,
                mean_initial: avg(i),
                mean_refined: avg(r),
                mean_gain: avg(g),
            }
        })
        .collect();
    Ok(StratifiedGainReport {
        total: scores.len(),
        bands,
    })
}

/// Gain of refined over initial masks, stratified by initial quality.
pub fn stratified_gain(
    initial: &[ClassIndexMask],
    refined: &[ClassIndexMask],
    gts: &[ClassIndexMask],
    bands: &[Band],
) -> Result<StratifiedGainReport> {
    if initial.len() != gts.len() || refined.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} initial, {} refined, {} ground-truth masks",
            initial.len(),
            refined.len(),
            gts.len()
        )));
    }
    let scores = initial
        .iter()
        .zip(refined)
        .zip(gts)
        .map(|((i, r), g)| Ok((sample_foreground_iou(i, g)?, sample_foreground_iou(r, g)?)))
        .collect::<Result<Vec<_>>>()?;
    stratify_scores(&scores, bands)
}
