//! Synthetic scenes with analytically known correspondences.
//!
//! Every object is an axis-aligned square of color `A` on a `B` background.
//! Its coarse map is defective by `margin` pixels:
//!
//! * over-segmentation: the coarse map covers the square dilated by
//!   `margin`; the extra ring is colored `H` in the image and has
//!   probability 0.55. The toy denoiser draws `B` on the ring, so ring pixels
//!   of the generated image match background pixels (probability 0.1).
//! * under-segmentation: the coarse map covers the square eroded by
//!   `margin`; the missing band is colored `H` and has probability 0.45. The
//!   toy denoiser draws `A` over the whole square, so band pixels match the
//!   object core (probability 0.9).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::png_io::{write_label_png, write_rgb_png};
use crate::recorded::sanitize_class;
use crate::tensor_file::{self, Tensor};
use crate::types::{ClassIndexMask, ImageTensor, SoftMask};

pub const COLOR_OBJECT: [u8; 3] = [230, 26, 26];
pub const COLOR_DEFECT: [u8; 3] = [26, 230, 26];
pub const COLOR_BACKGROUND: [u8; 3] = [26, 26, 230];

pub const P_CORE: f32 = 0.9;
pub const P_OVER: f32 = 0.55;
pub const P_UNDER: f32 = 0.45;
pub const P_BACKGROUND: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Defect {
    Over,
    Under,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquareObject {
    pub label: u8,
    pub name: String,
    /// Square `[lo, hi)` on both axes.
    pub lo: usize,
    pub hi: usize,
    pub defect: Defect,
    pub margin: usize,
}

impl SquareObject {
    fn inside(&self, y: usize, x: usize, grow: isize) -> bool {
        let lo = self.lo as isize - grow;
        let hi = self.hi as isize + grow;
        let (y, x) = (y as isize, x as isize);
        y >= lo && y < hi && x >= lo && x < hi
    }

    pub fn in_gt(&self, y: usize, x: usize) -> bool {
        self.inside(y, x, 0)
    }

    /// Pixels the coarse map gets wrong.
    pub fn in_defect(&self, y: usize, x: usize) -> bool {
        let m = self.margin as isize;
        match self.defect {
            Defect::Over => self.inside(y, x, m) && !self.in_gt(y, x),
            Defect::Under => self.in_gt(y, x) && !self.inside(y, x, -m),
        }
    }

    pub fn coarse_probability(&self, y: usize, x: usize) -> f32 {
        match (self.defect, self.in_gt(y, x), self.in_defect(y, x)) {
            (Defect::Over, _, true) => P_OVER,
            (Defect::Under, _, true) => P_UNDER,
            (_, true, false) => P_CORE,
            _ => P_BACKGROUND,
        }
    }
}

fn rgb(c: [u8; 3], ch: usize) -> f64 {
    f64::from(c[ch]) / 255.0
}

/// A scene and everything needed to refine it with the toy backends.
#[derive(Debug, Clone)]
pub struct Scene {
    pub size: usize,
    pub objects: Vec<SquareObject>,
    pub image: ImageTensor,
    pub gt: ClassIndexMask,
}

impl Scene {
    pub fn new(size: usize, objects: Vec<SquareObject>) -> Result<Self> {
        let image = ImageTensor::from_fn(size, size, 3, |y, x, c| {
            let color = if objects.iter().any(|o| o.in_defect(y, x)) {
                COLOR_DEFECT
            } else if objects.iter().any(|o| o.in_gt(y, x)) {
                COLOR_OBJECT
            } else {
                COLOR_BACKGROUND
            };
            rgb(color, c)
        })?;
        let labels = (0..size * size)
            .map(|i| {
                objects
                    .iter()
                    .find(|o| o.in_gt(i / size, i % size))
                    .map_or(0, |o| o.label)
            })
            .collect();
        let gt = ClassIndexMask::new(size, size, labels)?;
        Ok(Self {
            size,
            objects,
            image,
            gt,
        })
    }

    pub fn coarse(&self, object: &SquareObject) -> Result<SoftMask> {
        SoftMask::from_fn(self.size, self.size, |y, x| object.coarse_probability(y, x))
    }

    /// Toy denoiser `(fg, bg)` textures for one object.
    pub fn textures(&self, object: &SquareObject) -> Result<(ImageTensor, ImageTensor)> {
        let s = self.size;
        let object_or_bg = |y: usize, x: usize, c: usize| {
            rgb(if object.in_gt(y, x) { COLOR_OBJECT } else { COLOR_BACKGROUND }, c)
        };
        match object.defect {
            Defect::Over => Ok((
                ImageTensor::from_fn(s, s, 3, object_or_bg)?,
                ImageTensor::from_fn(s, s, 3, |_, _, c| rgb(COLOR_BACKGROUND, c))?,
            )),
            Defect::Under => Ok((
                ImageTensor::from_fn(s, s, 3, |_, _, c| rgb(COLOR_OBJECT, c))?,
                ImageTensor::from_fn(s, s, 3, object_or_bg)?,
            )),
        }
    }
}

fn object(cfg: &RunConfig, name: &str, lo: usize, hi: usize, defect: Defect) -> Result<SquareObject> {
    Ok(SquareObject {
        label: cfg.label_of(name)?,
        name: name.to_string(),
        lo,
        hi,
        defect,
        margin: 4,
    })
}

/// The three fixture scenes: one over-segmented object, one
/// under-segmented object, and one of each side by side.
pub fn fixture_scenes() -> Result<BTreeMap<String, Scene>> {
    let cfg = RunConfig::default();
    let mut scenes = BTreeMap::new();
    scenes.insert("over".to_string(), Scene::new(64, vec![object(&cfg, "cat", 20, 44, Defect::Over)?])?);
    scenes.insert("under".to_string(), Scene::new(64, vec![object(&cfg, "dog", 20, 44, Defect::Under)?])?);
    scenes.insert(
        "multi".to_string(),
        Scene::new(
            64,
            vec![
                object(&cfg, "cat", 4, 24, Defect::Over)?,
                object(&cfg, "dog", 36, 60, Defect::Under)?,
            ],
        )?,
    );
    Ok(scenes)
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `scenes` as a dataset under `root` (soft coarse maps, ground truth
/// and toy textures included).
pub fn write_dataset(root: &Path, scenes: &BTreeMap<String, Scene>) -> Result<()> {
    for d in ["images", "coarse_masks", "gt", "toy"] {
        mkdir(&root.join(d))?;
    }
    let mut prompts = BTreeMap::new();
    for (id, scene) in scenes {
        write_rgb_png(root.join("images").join(format!("{id}.png")), &scene.image)?;
        write_label_png(root.join("gt").join(format!("{id}.png")), &scene.gt)?;
        let coarse_dir = root.join("coarse_masks").join(id);
        let toy_dir = root.join("toy").join(id);
        mkdir(&coarse_dir)?;
        mkdir(&toy_dir)?;
        for o in &scene.objects {
            let name = sanitize_class(&o.name);
            tensor_file::save(coarse_dir.join(format!("{name}.g4tn")), &Tensor::from(&scene.coarse(o)?))?;
            let (fg, bg) = scene.textures(o)?;
            tensor_file::save(toy_dir.join(format!("fg_{name}.g4tn")), &Tensor::from(&fg))?;
            tensor_file::save(toy_dir.join(format!("bg_{name}.g4tn")), &Tensor::from(&bg))?;
        }
        prompts.insert(id.clone(), scene.objects.iter().map(|o| o.name.clone()).collect::<Vec<_>>());
    }
    let path = root.join("prompts.json");
    let text = serde_json::to_string_pretty(&prompts).expect("prompts serialize") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_fixture_dataset(root: &Path) -> Result<()> {
    write_dataset(root, &fixture_scenes()?)
}
