use crate::correspondence::ClassMap;
use crate::error::{Error, Result};
use crate::types::ClassIndexMask;

/// Default probability below which a pixel falls back to background.
pub const DEFAULT_BG_THRESHOLD: f32 = 0.5;

/// Labels each pixel with the class of highest probability, or background (0)
/// when that probability is below `tau_bg`. Ties go to the lowest label.
pub fn assemble_class_mask(maps: &[ClassMap], tau_bg: f32, num_classes: usize) -> Result<ClassIndexMask> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("no class maps to assemble"))?;
    let dims = first.soft.dims();
    for m in maps {
        if m.soft.dims() != dims {
            return Err(Error::shape(format!(
                "class {} map is {:?}, class {} map is {:?}",
                first.label,
                dims,
                m.label,
                m.soft.dims()
            )));
        }
        if m.label == 0 || usize::from(m.label) >= num_classes {
            return Err(Error::invalid(format!(
                "foreground label {} outside 1..{num_classes}",
                m.label
            )));
        }
    }
    let mut order: Vec<&ClassMap> = maps.iter().collect();
    order.sort_by_key(|m| m.label);
    let (h, w) = dims;
    let labels = (0..h * w)
        .map(|i| {
            let mut best = order[0];
            for m in &order[1..] {
                if m.soft.values()[i] > best.soft.values()[i] {
                    best = m;
                }
            }
            if best.soft.values()[i] < tau_bg {
                0
            } else {
                best.label
            }
        })
        .collect();
    ClassIndexMask::with_class_count(h, w, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SoftMask;
    use proptest::prelude::*;

    fn cm(label: u8, soft: SoftMask) -> ClassMap {
        ClassMap {
            label,
            name: format!("c{label}"),
            soft,
        }
    }

    #[test]
    fn single_class_above_threshold() {
        let m = assemble_class_mask(&[cm(3, SoftMask::filled(2, 2, 0.9).unwrap())], 0.5, 21).unwrap();
        assert_eq!(m.labels(), &[3, 3, 3, 3]);
    }

    #[test]
    fn all_below_threshold_is_background() {
        let maps = [cm(1, SoftMask::filled(2, 2, 0.4).unwrap()), cm(2, SoftMask::filled(2, 2, 0.49).unwrap())];
        assert_eq!(assemble_class_mask(&maps, 0.5, 3).unwrap().labels(), &[0; 4]);
    }

    #[test]
    fn ties_go_to_lowest_label_regardless_of_order() {
        let maps = [cm(5, SoftMask::filled(1, 1, 0.7).unwrap()), cm(2, SoftMask::filled(1, 1, 0.7).unwrap())];
        assert_eq!(assemble_class_mask(&maps, 0.5, 6).unwrap().labels(), &[2]);
    }

    #[test]
    fn errors() {
        assert!(assemble_class_mask(&[], 0.5, 21).is_err());
        let maps = [cm(1, SoftMask::filled(1, 1, 0.7).unwrap()), cm(2, SoftMask::filled(1, 2, 0.7).unwrap())];
        assert!(assemble_class_mask(&maps, 0.5, 21).is_err());
        assert!(assemble_class_mask(&[cm(4, SoftMask::filled(1, 1, 0.7).unwrap())], 0.5, 4).is_err());
        assert!(assemble_class_mask(&[cm(0, SoftMask::filled(1, 1, 0.7).unwrap())], 0.5, 4).is_err());
    }

    proptest! {
        #[test]
        fn matches_argmax_oracle(
            a in proptest::collection::vec(0.0f32..=1.0, 20),
            b in proptest::collection::vec(0.0f32..=1.0, 20),
            tau in 0.0f32..=1.0,
        ) {
            let maps = [cm(1, SoftMask::new(4, 5, a.clone()).unwrap()), cm(2, SoftMask::new(4, 5, b.clone()).unwrap())];
            let m = assemble_class_mask(&maps, tau, 3).unwrap();
            for i in 0..20 {
                let want = if a[i].max(b[i]) < tau { 0 } else if b[i] > a[i] { 2 } else { 1 };
                prop_assert_eq!(m.labels()[i], want);
            }
            // Halving every map and the threshold is exact in binary floating point.
            let halved: Vec<ClassMap> = maps
                .iter()
                .map(|c| cm(c.label, SoftMask::new(4, 5, c.soft.values().iter().map(|v| v * 0.5).collect()).unwrap()))
                .collect();
            prop_assert_eq!(assemble_class_mask(&halved, tau * 0.5, 3).unwrap(), m);
        }
    }
}
