//! Exported generations and features consumed in place of live models.
//!
//! Layout, one directory per sample:
//!
//! ```text
//! recorded/
//!   <sample_id>/
//!     manifest.json
//!     gen_<class>_t<t>.g4tn     generated image or eps, dims [h, w, c]
//!     feat_orig.g4tn            original-image features, dims [h, w, d]
//!     feat_gen_<class>.g4tn     generated-image features, dims [h, w, d]
//! ```
//!
//! File names are only defaults; the manifest is authoritative and every path
//! in it is relative to the sample directory. Class names are sanitized for
//! file names by replacing anything outside `[A-Za-z0-9-]` with `_`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correspondence::{FeatureExtractor, FeatureKey, FeatureMap, FeatureRole};
use crate::diffusion::{ConditionSpec, DenoiserBackend, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor_file::{self, Tensor};
use crate::types::ImageTensor;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const FEATURE_ORIG_FILE: &str = "feat_orig.g4tn";

pub fn sanitize_class(class: &str) -> String {
    class
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn generation_file_name(class: &str, timestep: usize) -> String {
    format!("gen_{}_t{timestep}.g4tn", sanitize_class(class))
}

pub fn feature_gen_file_name(class: &str) -> String {
    format!("feat_gen_{}.g4tn", sanitize_class(class))
}

/// What a generation record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// The one-step prediction of the clean image.
    X0,
    /// The predicted noise at the record's timestep.
    Eps,
}

/// A tensor file and its declared dims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub class: String,
    pub timestep: usize,
    pub kind: RecordKind,
    #[serde(flatten)]
    pub entry: FileEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Class token positions under the exporting model's tokenizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_inject: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureRecords {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orig: Option<FileEntry>,
    #[serde(default)]
    pub generated: BTreeMap<String, FileEntry>,
}

/// Per-sample export manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub format_version: u32,
    pub sample_id: String,
    pub classes: Vec<String>,
    /// Dims `[h, w, c]` of every generation record.
    pub image_shape: [usize; 3],
    /// Dims `[h, w, d]` of every feature record.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_shape: Option<[usize; 3]>,
    #[serde(default)]
    pub generations: Vec<GenerationRecord>,
    #[serde(default)]
    pub features: FeatureRecords,
    /// Free-form model identifiers and export settings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model: BTreeMap<String, serde_json::Value>,
}

impl SampleManifest {
    pub fn new(sample_id: impl Into<String>, image_shape: [usize; 3]) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            sample_id: sample_id.into(),
            classes: Vec::new(),
            image_shape,
            feature_shape: None,
            generations: Vec::new(),
            features: FeatureRecords::default(),
            model: BTreeMap::new(),
        }
    }

    pub fn generation(&self, class: &str, timestep: usize) -> Option<&GenerationRecord> {
        self.generations
            .iter()
            .find(|g| g.class == class && g.timestep == timestep)
    }

    pub fn timesteps(&self) -> Vec<usize> {
        let mut ts: Vec<usize> = self.generations.iter().map(|g| g.timestep).collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    fn entries(&self) -> impl Iterator<Item = (&FileEntry, Vec<usize>)> {
        let img = self.image_shape.to_vec();
        let feat = self.feature_shape.map(|s| s.to_vec());
        let gens = self.generations.iter().map(move |g| (&g.entry, img.clone()));
        let feats = self
            .features
            .orig
            .iter()
            .chain(self.features.generated.values())
            .map(move |e| (e, feat.clone().unwrap_or_default()));
        gens.chain(feats)
    }

    /// Checks internal consistency without touching the files.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Manifest(format!("manifest of {:?}: {msg}", self.sample_id)));
        if self.format_version != MANIFEST_VERSION {
            return bad(format!("format_version {}", self.format_version));
        }
        if self.sample_id.is_empty() || self.sample_id.contains(['/', '\\']) {
            return bad("sample_id must be a plain non-empty name".into());
        }
        if self.image_shape.contains(&0) {
            return bad(format!("image_shape {:?}", self.image_shape));
        }
        let has_features = self.features.orig.is_some() || !self.features.generated.is_empty();
        match self.feature_shape {
            Some(s) if s.contains(&0) => return bad(format!("feature_shape {s:?}")),
            None if has_features => return bad("feature records without feature_shape".into()),
            _ => {}
        }
        for (i, g) in self.generations.iter().enumerate() {
            if !self.classes.contains(&g.class) {
                return bad(format!("generation {i} has undeclared class {:?}", g.class));
            }
            if self.generations[..i].iter().any(|o| o.class == g.class && o.timestep == g.timestep) {
                return bad(format!("duplicate generation for {:?} at t={}", g.class, g.timestep));
            }
        }
        for class in self.features.generated.keys() {
            if !self.classes.contains(class) {
                return bad(format!("features for undeclared class {class:?}"));
            }
        }
        for (entry, want) in self.entries() {
            if entry.shape != want {
                return bad(format!("{} declares {:?}, expected {:?}", entry.file, entry.shape, want));
            }
            let p = Path::new(&entry.file);
            if entry.file.is_empty() || p.is_absolute() || p.components().any(|c| c.as_os_str() == "..") {
                return bad(format!("file path {:?} must be relative and inside the sample", entry.file));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SampleManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.check()?;
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Index over a `recorded/` directory. Tensors are read on demand.
#[derive(Debug, Clone)]
pub struct RecordedStore {
    root: PathBuf,
    manifests: BTreeMap<String, SampleManifest>,
}

impl RecordedStore {
    /// Reads every `<root>/<id>/manifest.json`. A missing root gives an empty store.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let mut manifests = BTreeMap::new();
        if root.is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
                .map_err(|e| Error::io(&root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(MANIFEST_NAME).is_file())
                .collect();
            dirs.sort();
            for dir in dirs {
                let m = SampleManifest::load(dir.join(MANIFEST_NAME))?;
                let dir_name = dir.file_name().map(|n| n.to_string_lossy().into_owned());
                if dir_name.as_deref() != Some(m.sample_id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "{} holds manifest for sample {:?}",
                        dir.display(),
                        m.sample_id
                    )));
                }
                manifests.insert(m.sample_id.clone(), m);
            }
        }
        Ok(Self { root, manifests })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn samples(&self) -> impl Iterator<Item = &str> {
        self.manifests.keys().map(String::as_str)
    }

    pub fn manifest(&self, sample_id: &str) -> Option<&SampleManifest> {
        self.manifests.get(sample_id)
    }

    pub fn sample_dir(&self, sample_id: &str) -> PathBuf {
        self.root.join(sample_id)
    }

    fn load_entry(&self, sample_id: &str, entry: &FileEntry) -> Result<Tensor> {
        let t = tensor_file::load(self.sample_dir(sample_id).join(&entry.file))?;
        if t.dims() != entry.shape.as_slice() {
            return Err(Error::shape(format!(
                "{sample_id}/{} has dims {:?}, manifest declares {:?}",
                entry.file,
                t.dims(),
                entry.shape
            )));
        }
        Ok(t)
    }

    /// Parses every referenced file and checks its dims against the manifest.
    pub fn validate(&self) -> Result<usize> {
        let mut n = 0;
        for m in self.manifests.values() {
            for (entry, _) in m.entries() {
                self.load_entry(&m.sample_id, entry)?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn generation(&self, sample_id: &str, class: &str, timestep: usize) -> Result<(RecordKind, ImageTensor)> {
        let missing = || Error::MissingRecord {
            sample: sample_id.to_string(),
            class: class.to_string(),
            timestep,
        };
        let m = self.manifest(sample_id).ok_or_else(missing)?;
        let g = m.generation(class, timestep).ok_or_else(missing)?;
        Ok((g.kind, self.load_entry(sample_id, &g.entry)?.into_image()?))
    }

    pub fn features(&self, sample_id: &str, role: FeatureRole<'_>) -> Result<FeatureMap> {
        let missing = || Error::MissingFeatures {
            sample: sample_id.to_string(),
            role: role.to_string(),
        };
        let m = self.manifest(sample_id).ok_or_else(missing)?;
        let entry = match role {
            FeatureRole::Original => m.features.orig.as_ref(),
            FeatureRole::Generated { class } => m.features.generated.get(class),
        }
        .ok_or_else(missing)?;
        self.load_entry(sample_id, entry)?.into_feature_map()
    }
}

/// Serves exported predictions as a denoiser.
///
/// An `eps` record is returned as is. An `x0` record is converted to the noise
/// that maps the given `x_t` onto it, so a one-step reconstruction returns the
/// recorded image. A missing record is an error.
#[derive(Debug, Clone)]
pub struct RecordedBackend {
    store: Arc<RecordedStore>,
    schedule: NoiseSchedule,
}

impl RecordedBackend {
    pub fn new(store: Arc<RecordedStore>, schedule: NoiseSchedule) -> Self {
        Self { store, schedule }
    }
}

impl DenoiserBackend for RecordedBackend {
    fn predict_eps(&self, x_t: &ImageTensor, t: usize, cond: &ConditionSpec) -> Result<ImageTensor> {
        let (kind, rec) = self.store.generation(&cond.sample_id, &cond.class_name, t)?;
        if rec.shape() != x_t.shape() {
            return Err(Error::shape(format!(
                "recorded {}/{} at t={t} is {:?}, input is {:?}",
                cond.sample_id,
                cond.class_name,
                rec.shape(),
                x_t.shape()
            )));
        }
        match kind {
            RecordKind::Eps => Ok(rec),
            RecordKind::X0 => {
                let ab = self.schedule.alpha_bar(t)?;
                if ab >= 1.0 {
                    return Err(Error::invalid("x0 records need t > 0"));
                }
                let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
                let (h, w, c) = x_t.shape();
                let data = x_t
                    .data()
                    .iter()
                    .zip(rec.data())
                    .map(|(&x, &r)| (x - signal * r) / noise)
                    .collect();
                ImageTensor::new(h, w, c, data)
            }
        }
    }
}

/// Serves exported feature maps, ignoring the image it is handed.
#[derive(Debug, Clone)]
pub struct RecordedFeatureExtractor {
    store: Arc<RecordedStore>,
}

impl RecordedFeatureExtractor {
    pub fn new(store: Arc<RecordedStore>) -> Self {
        Self { store }
    }
}

impl FeatureExtractor for RecordedFeatureExtractor {
    fn embed(&self, _img: &ImageTensor, key: &FeatureKey<'_>) -> Result<FeatureMap> {
        self.store.features(key.sample_id, key.role)
    }
}

/// Writes one sample's tensors and manifest; used by fixtures and tests.
pub struct SampleWriter {
    dir: PathBuf,
    manifest: SampleManifest,
}

impl SampleWriter {
    pub fn new(root: impl AsRef<Path>, sample_id: &str, image_shape: [usize; 3]) -> Result<Self> {
        let dir = root.as_ref().join(sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            manifest: SampleManifest::new(sample_id, image_shape),
        })
    }

    pub fn manifest_mut(&mut self) -> &mut SampleManifest {
        &mut self.manifest
    }

    fn declare_class(&mut self, class: &str) {
        if !self.manifest.classes.iter().any(|c| c == class) {
            self.manifest.classes.push(class.to_string());
        }
    }

    fn put(&self, name: &str, tensor: &Tensor) -> Result<FileEntry> {
        tensor_file::save(self.dir.join(name), tensor)?;
        Ok(FileEntry {
            file: name.to_string(),
            shape: tensor.dims().to_vec(),
        })
    }

    pub fn add_generation(&mut self, class: &str, timestep: usize, kind: RecordKind, img: &ImageTensor) -> Result<()> {
        self.declare_class(class);
        let entry = self.put(&generation_file_name(class, timestep), &Tensor::from(img))?;
        self.manifest.generations.retain(|g| !(g.class == class && g.timestep == timestep));
        self.manifest.generations.push(GenerationRecord {
            class: class.to_string(),
            timestep,
            kind,
            entry,
            prompt: None,
            token_indices: None,
            alpha_inject: None,
        });
        Ok(())
    }

    pub fn set_features(&mut self, role: FeatureRole<'_>, fm: &FeatureMap) -> Result<()> {
        self.manifest.feature_shape = Some([fm.height(), fm.width(), fm.dim()]);
        match role {
            FeatureRole::Original => {
                self.manifest.features.orig = Some(self.put(FEATURE_ORIG_FILE, &Tensor::from(fm))?);
            }
            FeatureRole::Generated { class } => {
                self.declare_class(class);
                let entry = self.put(&feature_gen_file_name(class), &Tensor::from(fm))?;
                self.manifest.features.generated.insert(class.to_string(), entry);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<SampleManifest> {
        self.manifest.save(self.dir.join(MANIFEST_NAME))?;
        Ok(self.manifest)
    }
}
