//! Dataset directory layout.
//!
//! ```text
//! <root>/
//!   prompts.json                 {"<id>": ["cat", "dog"], ...}
//!   images/<id>.png              RGB input
//!   coarse_masks/<id>/<class>.g4tn   soft class maps, dims [h, w]   (preferred)
//!   coarse_masks/<id>.png        indexed labels, used when no soft maps exist
//!   gt/<id>.png                  optional indexed ground truth
//!   toy/<id>/fg_<class>.g4tn     optional toy denoiser textures, dims [h, w, c]
//!   toy/<id>/bg_<class>.g4tn
//!   recorded/<id>/...            exports for the recorded backends
//!   out/                         the only directory ever written
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::correspondence::ClassMap;
use crate::error::{Error, Result};
use crate::png_io::{read_label_png, read_rgb_png};
use crate::recorded::sanitize_class;
use crate::tensor_file;
use crate::types::{ClassIndexMask, ImageTensor};

use super::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub out: PathBuf,
}

/// The inputs of one sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    /// Coarse soft maps of the listed classes, in prompt order.
    pub coarse: Vec<ClassMap>,
    pub gt: Option<ClassIndexMask>,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let out = root.join("out");
        Self { root, out }
    }

    pub fn with_out(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }

    pub fn prompts_path(&self) -> PathBuf {
        self.root.join("prompts.json")
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn coarse_png_path(&self, id: &str) -> PathBuf {
        self.root.join("coarse_masks").join(format!("{id}.png"))
    }

    pub fn coarse_soft_path(&self, id: &str, class: &str) -> PathBuf {
        self.root
            .join("coarse_masks")
            .join(id)
            .join(format!("{}.g4tn", sanitize_class(class)))
    }

    pub fn gt_path(&self, id: &str) -> PathBuf {
        self.root.join("gt").join(format!("{id}.png"))
    }

    pub fn toy_texture_path(&self, id: &str, which: &str, class: &str) -> PathBuf {
        self.root
            .join("toy")
            .join(id)
            .join(format!("{which}_{}.g4tn", sanitize_class(class)))
    }

    pub fn recorded_dir(&self) -> PathBuf {
        self.root.join("recorded")
    }

    pub fn refined_mask_path(&self, id: &str) -> PathBuf {
        self.out.join("masks").join(format!("{id}.png"))
    }

    /// Sample ids with their class names, ordered by id.
    pub fn prompts(&self) -> Result<BTreeMap<String, Vec<String>>> {
        let path = self.prompts_path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let prompts: BTreeMap<String, Vec<String>> =
            serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
        for id in prompts.keys() {
            if id.is_empty() || id.contains(['/', '\\']) || id == ".." || id == "." {
                return Err(Error::invalid(format!("sample id {id:?} is not a plain file stem")));
            }
        }
        Ok(prompts)
    }

    /// Loads one sample. Classes are resolved to labels through `cfg.classes`.
    pub fn load_sample(&self, id: &str, classes: &[String], cfg: &RunConfig) -> Result<Sample> {
        let image = read_rgb_png(self.image_path(id))?;
        let soft_dir = self.root.join("coarse_masks").join(id);
        let png = self.coarse_png_path(id);
        let labels_png = if soft_dir.is_dir() {
            None
        } else if png.is_file() {
            Some(read_label_png(&png)?)
        } else {
            return Err(Error::invalid(format!("sample {id:?} has no coarse mask")));
        };
        let mut coarse = Vec::with_capacity(classes.len());
        for name in classes {
            let label = cfg.label_of(name)?;
            if coarse.iter().any(|c: &ClassMap| c.label == label) {
                return Err(Error::invalid(format!("class {name:?} listed twice for {id:?}")));
            }
            let soft = match &labels_png {
                Some(l) => l.class_map(label),
                None => tensor_file::load(self.coarse_soft_path(id, name))?.into_soft_mask()?,
            };
            coarse.push(ClassMap {
                label,
                name: name.clone(),
                soft,
            });
        }
        let gt_path = self.gt_path(id);
        let gt = if gt_path.is_file() {
            Some(read_label_png(&gt_path)?)
        } else {
            None
        };
        Ok(Sample { id: id.to_string(), image, coarse, gt })
    }

    /// Toy denoiser textures for one class; the original image stands in for
    /// any texture that is not provided.
    pub fn toy_textures(&self, sample: &Sample, class: &str) -> Result<(ImageTensor, ImageTensor)> {
        let load = |which: &str| -> Result<ImageTensor> {
            let p = self.toy_texture_path(&sample.id, which, class);
            if p.is_file() {
                let t = tensor_file::load(&p)?.into_image()?;
                t.same_shape(&sample.image, "toy texture and image")?;
                Ok(t)
            } else {
                Ok(sample.image.clone())
            }
        };
        Ok((load("fg")?, load("bg")?))
    }
}

/// Reads every `<id>.png` label mask in `dir`, ordered by id.
pub fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, ClassIndexMask>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), read_label_png(&path)?);
            }
        }
    }
    Ok(out)
}
