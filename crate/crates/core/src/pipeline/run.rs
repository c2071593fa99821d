use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{BackendKind, ExtractorKind, RunConfig};
use super::dataset::{DatasetLayout, Sample};
use crate::correspondence::{
    refine_all_classes, ClassMap, FeatureExtractor, ToyFeatureExtractor,
};
use crate::diffusion::{noise::stream_id, one_step_reconstruct, ConditionSpec, DenoiserBackend, NoiseSchedule, ToyDenoiser};
use crate::error::{Error, Result};
use crate::evaluation::{
    assemble_class_mask, mean_iou, sample_foreground_iou, stratified_gain, IoUReport, StratifiedGainReport,
    DEFAULT_BANDS,
};
use crate::injection::prepare_injection_set;
use crate::png_io::write_label_png;
use crate::prompt::{class_prompt, class_token_indices, CONTEXT_LEN};
use crate::recorded::{RecordedBackend, RecordedFeatureExtractor, RecordedStore};
use crate::types::{ClassIndexMask, ImageTensor, TokenIndexSet};

/// Read-only state shared by all workers of a run.
pub struct Engine {
    layout: DatasetLayout,
    cfg: RunConfig,
    schedule: NoiseSchedule,
    store: Option<Arc<RecordedStore>>,
    extractor: Box<dyn FeatureExtractor>,
}

/// Everything produced for one class of one sample.
#[derive(Debug, Clone)]
pub struct ClassOutcome {
    pub coarse: ClassMap,
    pub refined: ClassMap,
    pub generated: ImageTensor,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub id: String,
    pub image: ImageTensor,
    pub classes: Vec<ClassOutcome>,
    pub coarse: ClassIndexMask,
    pub refined: ClassIndexMask,
    pub gt: Option<ClassIndexMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SampleStatus {
    Ok {
        id: String,
        classes: Vec<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        coarse_iou: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        refined_iou: Option<f64>,
    },
    Error {
        id: String,
        error: String,
    },
}

/// The machine-readable run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub num_samples: usize,
    pub failed: usize,
    pub samples: Vec<SampleStatus>,
    pub coarse: Option<IoUReport>,
    pub refined: Option<IoUReport>,
    pub stratified: Option<StratifiedGainReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "samples {}  failed {}  t_s {}  beta {}  cf [{}, {}]\n",
            self.num_samples, self.failed, self.config.t_s, self.config.beta, self.config.cf[0], self.config.cf[1]
        );
        for st in &self.samples {
            if let SampleStatus::Error { id, error } = st {
                s += &format!("FAILED {id}: {error}\n");
            }
        }
        if let (Some(c), Some(r)) = (&self.coarse, &self.refined) {
            s += &format!(
                "\ncoarse mIoU {:.2}  refined mIoU {:.2}  gain {:+.2}\n\n[coarse]\n{}\n[refined]\n{}",
                100.0 * c.mean_iou,
                100.0 * r.mean_iou,
                100.0 * (r.mean_iou - c.mean_iou),
                c.to_text(),
                r.to_text()
            );
        }
        if let Some(st) = &self.stratified {
            s += &format!("\n[gain by initial quality]\n{}", st.to_text());
        }
        s
    }
}

pub struct RunResult {
    pub report: RunReport,
    pub outputs: Vec<SampleOutput>,
}

fn empty_mask(sample: &Sample) -> Result<ClassIndexMask> {
    let (h, w) = match &sample.gt {
        Some(g) => g.dims(),
        None => (sample.image.height(), sample.image.width()),
    };
    ClassIndexMask::new(h, w, vec![0; h * w])
}

impl Engine {
    pub fn new(layout: DatasetLayout, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::default();
        let needs_store = cfg.backend == BackendKind::Recorded || cfg.extractor == ExtractorKind::Recorded;
        let store = if needs_store {
            Some(Arc::new(RecordedStore::open(layout.recorded_dir())?))
        } else {
            None
        };
        let extractor: Box<dyn FeatureExtractor> = match (cfg.extractor, &store) {
            (ExtractorKind::Recorded, Some(s)) => Box::new(RecordedFeatureExtractor::new(s.clone())),
            _ => Box::new(ToyFeatureExtractor {
                pos_weight: cfg.pos_weight,
                stride: cfg.feature_stride,
            }),
        };
        Ok(Self {
            layout,
            cfg,
            schedule,
            store,
            extractor,
        })
    }

    pub fn layout(&self) -> &DatasetLayout {
        &self.layout
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn extractor(&self) -> &dyn FeatureExtractor {
        self.extractor.as_ref()
    }

    fn prompt_and_tokens(&self, id: &str, class: &str) -> Result<(String, TokenIndexSet)> {
        let record = self
            .store
            .as_ref()
            .and_then(|s| s.manifest(id))
            .and_then(|m| m.generation(class, self.cfg.t_s));
        let prompt = record
            .and_then(|r| r.prompt.clone())
            .unwrap_or_else(|| class_prompt(class));
        let tokens = match record.and_then(|r| r.token_indices.clone()) {
            Some(idx) => {
                let t = TokenIndexSet::new(idx);
                t.check_bound(CONTEXT_LEN)?;
                t
            }
            None => class_token_indices(&prompt, class)?,
        };
        Ok((prompt, tokens))
    }

    /// Injects the class map and reconstructs the image in one step.
    pub fn generate(&self, sample: &Sample, class: &ClassMap) -> Result<ImageTensor> {
        let (prompt, tokens) = self.prompt_and_tokens(&sample.id, &class.name)?;
        let injection = prepare_injection_set(
            &class.soft,
            self.cfg.tau_bin,
            &tokens,
            CONTEXT_LEN,
            &self.cfg.attention_grids(),
        )?;
        let cond = ConditionSpec {
            sample_id: sample.id.clone(),
            class_name: class.name.clone(),
            prompt,
            tokens,
            injection: Some(injection),
            weight: self.cfg.injection_weight(),
        };
        let stream = stream_id(&format!("{}/{}", sample.id, class.name));
        let toy;
        let recorded;
        let backend: &dyn DenoiserBackend = match (self.cfg.backend, &self.store) {
            (BackendKind::Recorded, Some(store)) => {
                recorded = RecordedBackend::new(store.clone(), self.schedule.clone());
                &recorded
            }
            _ => {
                let (fg, bg) = self.layout.toy_textures(sample, &class.name)?;
                toy = ToyDenoiser::new(fg, bg, self.schedule.clone())?;
                &toy
            }
        };
        one_step_reconstruct(&sample.image, self.cfg.t_s, &cond, backend, &self.schedule, self.cfg.seed, stream)
    }

    pub fn load_sample(&self, id: &str, classes: &[String]) -> Result<Sample> {
        self.layout.load_sample(id, classes, &self.cfg)
    }

    /// Runs one sample end to end.
    pub fn process(&self, id: &str, classes: &[String]) -> Result<SampleOutput> {
        let sample = self.load_sample(id, classes)?;
        let num_classes = self.cfg.classes.len();
        if let Some(gt) = &sample.gt {
            ClassIndexMask::with_class_count(gt.height(), gt.width(), gt.labels().to_vec(), num_classes)?;
        }
        let (coarse, refined, outcomes) = if sample.coarse.is_empty() {
            let m = empty_mask(&sample)?;
            (m.clone(), m, Vec::new())
        } else {
            let generated = sample
                .coarse
                .iter()
                .map(|c| Ok((c.label, self.generate(&sample, c)?)))
                .collect::<Result<BTreeMap<u8, ImageTensor>>>()?;
            let mix = self.cfg.mix();
            let refined_maps = refine_all_classes(&sample.image, &generated, &sample.coarse, self.extractor(), &mix, id)?;
            let coarse = assemble_class_mask(&sample.coarse, self.cfg.tau_bg, num_classes)?;
            let refined = assemble_class_mask(&refined_maps, self.cfg.tau_bg, num_classes)?;
            let outcomes = sample
                .coarse
                .iter()
                .zip(refined_maps)
                .map(|(c, r)| ClassOutcome {
                    coarse: c.clone(),
                    generated: generated[&c.label].clone(),
                    refined: r,
                })
                .collect();
            (coarse, refined, outcomes)
        };
        if let Some(gt) = &sample.gt {
            if gt.dims() != refined.dims() {
                return Err(Error::shape(format!(
                    "ground truth {:?} vs masks {:?}",
                    gt.dims(),
                    refined.dims()
                )));
            }
        }
        Ok(SampleOutput {
            id: sample.id,
            image: sample.image,
            classes: outcomes,
            coarse,
            refined,
            gt: sample.gt,
        })
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))
    }

    /// Processes every sample and evaluates, writing nothing.
    pub fn run(&self) -> Result<RunResult> {
        let prompts = self.layout.prompts()?;
        let jobs: Vec<(&String, &Vec<String>)> = prompts.iter().collect();
        let results: Vec<Result<SampleOutput>> = self
            .pool()?
            .install(|| jobs.par_iter().map(|(id, classes)| self.process(id, classes)).collect());

        let mut samples = Vec::with_capacity(results.len());
        let mut outputs = Vec::new();
        for ((id, classes), r) in jobs.iter().zip(results) {
            match r {
                Ok(out) => {
                    let scores = match &out.gt {
                        Some(gt) => Some((sample_foreground_iou(&out.coarse, gt)?, sample_foreground_iou(&out.refined, gt)?)),
                        None => None,
                    };
                    samples.push(SampleStatus::Ok {
                        id: id.to_string(),
                        classes: classes.to_vec(),
                        coarse_iou: scores.map(|s| s.0),
                        refined_iou: scores.map(|s| s.1),
                    });
                    outputs.push(out);
                }
                Err(e) => {
                    log::error!("sample {id}: {e}");
                    samples.push(SampleStatus::Error {
                        id: id.to_string(),
                        error: e.to_string(),
                    });
                }
            }
        }
        let failed = samples.iter().filter(|s| matches!(s, SampleStatus::Error { .. })).count();

        let evaluated: Vec<&SampleOutput> = outputs.iter().filter(|o| o.gt.is_some()).collect();
        let (coarse, refined, stratified) = if evaluated.is_empty() {
            (None, None, None)
        } else {
            let gts: Vec<ClassIndexMask> = evaluated.iter().map(|o| o.gt.clone().expect("filtered")).collect();
            let c: Vec<ClassIndexMask> = evaluated.iter().map(|o| o.coarse.clone()).collect();
            let r: Vec<ClassIndexMask> = evaluated.iter().map(|o| o.refined.clone()).collect();
            let n = self.cfg.classes.len();
            let mode = self.cfg.iou_mode;
            (
                Some(mean_iou(&c, &gts, n, mode)?.with_names(&self.cfg.classes)),
                Some(mean_iou(&r, &gts, n, mode)?.with_names(&self.cfg.classes)),
                Some(stratified_gain(&c, &r, &gts, &DEFAULT_BANDS)?),
            )
        };
        Ok(RunResult {
            report: RunReport {
                config: self.cfg.clone(),
                num_samples: samples.len(),
                failed,
                samples,
                coarse,
                refined,
                stratified,
            },
            outputs,
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the dataset and writes refined masks plus `report.json` and
/// `report.txt` under the layout's output directory.
pub fn run_refinement(layout: &DatasetLayout, cfg: &RunConfig) -> Result<RunReport> {
    let engine = Engine::new(layout.clone(), cfg.clone())?;
    let result = engine.run()?;
    let masks = layout.out.join("masks");
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    for out in &result.outputs {
        write_label_png(layout.refined_mask_path(&out.id), &out.refined)?;
    }
    write_text(&layout.out.join("report.json"), &result.report.to_json())?;
    write_text(&layout.out.join("report.txt"), &result.report.to_text())?;
    Ok(result.report)
}

/// One row of a timestep sweep; IoUs in points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub t_s: usize,
    pub samples: usize,
    pub failed: usize,
    pub coarse_miou: Option<f64>,
    pub refined_miou: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
    let mut s = String::from("t_s,samples,failed,coarse_miou,refined_miou\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{}\n",
            r.t_s,
            r.samples,
            r.failed,
            cell(r.coarse_miou),
            cell(r.refined_miou)
        );
    }
    s
}

/// One full run per timestep; writes `sweep.csv` under the output directory.
pub fn timestep_sweep(layout: &DatasetLayout, cfg: &RunConfig, steps: &[usize]) -> Result<Vec<SweepRow>> {
    if steps.is_empty() {
        return Err(Error::invalid("no timesteps to sweep"));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for &t_s in steps {
        let step_cfg = RunConfig { t_s, ..cfg.clone() };
        let report = Engine::new(layout.clone(), step_cfg)?.run()?.report;
        rows.push(SweepRow {
            t_s,
            samples: report.num_samples,
            failed: report.failed,
            coarse_miou: report.coarse.map(|r| 100.0 * r.mean_iou),
            refined_miou: report.refined.map(|r| 100.0 * r.mean_iou),
        });
    }
    write_text(&layout.out.join("sweep.csv"), &sweep_csv(&rows))?;
    Ok(rows)
}
