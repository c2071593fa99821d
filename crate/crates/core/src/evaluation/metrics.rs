use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassIndexMask, IGNORE_LABEL};

/// Intersection and union pixel counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub intersection: u64,
    pub union: u64,
}

impl ClassCounts {
    /// `None` when the union is empty: the class does not enter averages.
    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }

    fn add(&mut self, other: ClassCounts) {
        self.intersection += other.intersection;
        self.union += other.union;
    }
}

fn check_pair(pred: &ClassIndexMask, gt: &ClassIndexMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Per-class counts of one mask pair. Ground-truth pixels carrying the
/// ignore label are skipped.
pub fn class_counts(pred: &ClassIndexMask, gt: &ClassIndexMask, num_classes: usize) -> Result<Vec<ClassCounts>> {
    check_pair(pred, gt)?;
    let mut counts = vec![ClassCounts::default(); num_classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == IGNORE_LABEL {
            continue;
        }
        for l in [p, g] {
            if usize::from(l) >= num_classes {
                return Err(Error::invalid(format!("label {l} not below class count {num_classes}")));
            }
        }
        if p == g {
            let c = &mut counts[usize::from(p)];
            c.intersection += 1;
            c.union += 1;
        } else {
            counts[usize::from(p)].union += 1;
            counts[usize::from(g)].union += 1;
        }
    }
    Ok(counts)
}

/// IoU of one class, `None` when the class is absent from both masks.
pub fn iou(pred: &ClassIndexMask, gt: &ClassIndexMask, class: u8) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let mut c = ClassCounts::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == IGNORE_LABEL {
            continue;
        }
        let (a, b) = (p == class, g == class);
        c.intersection += u64::from(a && b);
        c.union += u64::from(a || b);
    }
    Ok(c.iou())
}

/// How per-class IoU is averaged over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// Sum counts over all samples, then divide.
    #[default]
    Accumulated,
    /// Mean IoU per image, then the mean over images.
    PerImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub intersection: u64,
    pub union: u64,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub mode: IouMode,
    pub num_samples: usize,
    pub num_classes: usize,
    pub per_class: Vec<ClassIou>,
    /// In `[0, 1]`.
    pub mean_iou: f64,
}

impl IoUReport {
    pub fn with_names(mut self, names: &[String]) -> Self {
        for c in &mut self.per_class {
            c.name = names.get(usize::from(c.class)).cloned();
        }
        self
    }

    /// Table of the classes with a non-empty union.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "mIoU {:.2} over {} samples ({})\n{:>5}  {:<16} {:>10} {:>10} {:>7}\n",
            100.0 * self.mean_iou,
            self.num_samples,
            match self.mode {
                IouMode::Accumulated => "accumulated",
                IouMode::PerImage => "per image",
            },
            "class",
            "name",
            "inter",
            "union",
            "IoU"
        );
        for c in self.per_class.iter().filter(|c| c.union > 0) {
            let iou = c.iou.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
            s += &format!(
                "{:>5}  {:<16} {:>10} {:>10} {:>7}\n",
                c.class,
                c.name.as_deref().unwrap_or(""),
                c.intersection,
                c.union,
                iou
            );
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean IoU over classes whose union is non-empty.
pub fn mean_iou(
    preds: &[ClassIndexMask],
    gts: &[ClassIndexMask],
    num_classes: usize,
    mode: IouMode,
) -> Result<IoUReport> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if num_classes == 0 || num_classes > usize::from(IGNORE_LABEL) {
        return Err(Error::invalid(format!("class count {num_classes}")));
    }
    let per_sample = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| class_counts(p, g, num_classes))
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![ClassCounts::default(); num_classes];
    for counts in &per_sample {
        for (t, &c) in total.iter_mut().zip(counts) {
            t.add(c);
        }
    }
    let per_class: Vec<ClassIou> = match mode {
        IouMode::Accumulated => total
            .iter()
            .enumerate()
            .map(|(k, c)| ClassIou {
                class: k as u8,
                name: None,
                intersection: c.intersection,
                union: c.union,
                iou: c.iou(),
            })
            .collect(),
        IouMode::PerImage => total
            .iter()
            .enumerate()
            .map(|(k, c)| ClassIou {
                class: k as u8,
                name: None,
                intersection: c.intersection,
                union: c.union,
                iou: mean(per_sample.iter().filter_map(|s| s[k].iou())),
            })
            .collect(),
    };
    let mean_iou = match mode {
        IouMode::Accumulated => mean(per_class.iter().filter_map(|c| c.iou)),
        IouMode::PerImage => mean(per_sample.iter().filter_map(|s| mean(s.iter().filter_map(ClassCounts::iou)))),
    }
    .ok_or_else(|| Error::invalid("no evaluable pixels"))?;
    Ok(IoUReport {
        mode,
        num_samples: preds.len(),
        num_classes,
        per_class,
        mean_iou,
    })
}

/// Foreground IoU of one sample in points (`0..=100`): the mean IoU over
/// foreground classes present in either mask, or 100 when there are none.
pub fn sample_foreground_iou(pred: &ClassIndexMask, gt: &ClassIndexMask) -> Result<f64> {
    let counts = class_counts(pred, gt, usize::from(IGNORE_LABEL))?;
    Ok(100.0 * mean(counts[1..].iter().filter_map(ClassCounts::iou)).unwrap_or(1.0))
}
