use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use segrefine::evaluation::{mean_iou, stratified_gain, IouMode, DEFAULT_BANDS};
use segrefine::pipeline::{
    dump_diagnostics, read_label_dir, run_refinement, synth, timestep_sweep, DatasetLayout, Engine, RunConfig,
    DEFAULT_DIAG_POINTS,
};
use segrefine::recorded::RecordedStore;

/// Training-free refinement of coarse segmentation masks.
#[derive(Parser)]
#[command(name = "segrefine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset root (images/, coarse_masks/, prompts.json, ...).
    #[arg(long)]
    root: PathBuf,
    /// TOML config. Keys: t_s, beta, cf, alpha_inject, alpha_scale, tau_bin,
    /// tau_bg, backend, extractor, seed, workers, attn_resolutions,
    /// pos_weight, feature_stride, classes, iou_mode.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set beta=0.9 --set 'cf=[0.2, 0.6]'.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default <root>/out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(DatasetLayout, RunConfig)> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.set)?;
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        let mut layout = DatasetLayout::new(&self.root);
        if let Some(out) = &self.out {
            layout = layout.with_out(out);
        }
        Ok((layout, cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Refine every sample; writes out/masks/*.png, out/report.json, out/report.txt.
    Refine(RunArgs),
    /// One full run per noising timestep; writes out/sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated timesteps.
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
    },
    /// Correspondence and mask overlays for one sample under out/diag/<id>/.
    Diag {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        sample: String,
        #[arg(long, default_value_t = DEFAULT_DIAG_POINTS)]
        points: usize,
    },
    /// Score a directory of indexed PNG masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Optional initial masks; adds the gain report by initial quality.
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Number of classes including background.
        #[arg(long, default_value_t = 21)]
        num_classes: usize,
        /// Average per image instead of accumulating counts.
        #[arg(long)]
        per_image: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the synthetic fixture dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse every file of a recorded/ export directory against its manifests.
    Validate {
        #[arg(long)]
        recorded: PathBuf,
    },
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn eval(
    pred: &Path,
    gt: &Path,
    initial: Option<&Path>,
    num_classes: usize,
    per_image: bool,
    json: Option<&Path>,
) -> Result<()> {
    let preds = read_label_dir(pred)?;
    let gts = read_label_dir(gt)?;
    let ids: Vec<&String> = gts.keys().filter(|id| preds.contains_key(*id)).collect();
    if ids.is_empty() {
        bail!("no prediction in {} has a ground truth in {}", pred.display(), gt.display());
    }
    for id in gts.keys().filter(|id| !preds.contains_key(*id)) {
        log::warn!("no prediction for {id}");
    }
    let p: Vec<_> = ids.iter().map(|id| preds[*id].clone()).collect();
    let g: Vec<_> = ids.iter().map(|id| gts[*id].clone()).collect();
    let mode = if per_image { IouMode::PerImage } else { IouMode::Accumulated };
    let report = mean_iou(&p, &g, num_classes, mode)?;
    emit(&report.to_text())?;
    let mut doc = serde_json::json!({ "iou": report });
    if let Some(dir) = initial {
        let init = read_label_dir(dir)?;
        let i = ids
            .iter()
            .map(|id| init.get(*id).cloned().with_context(|| format!("no initial mask for {id}")))
            .collect::<Result<Vec<_>>>()?;
        let st = stratified_gain(&i, &p, &g, &DEFAULT_BANDS)?;
        emit(&format!("\n{}", st.to_text()))?;
        doc["stratified"] = serde_json::to_value(&st)?;
    }
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Refine(args) => {
            let (layout, cfg) = args.resolve()?;
            let report = run_refinement(&layout, &cfg)?;
            emit(&report.to_text())?;
            emit(&format!("wrote {}\n", layout.out.display()))?;
            if report.failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { run, steps } => {
            let (layout, cfg) = run.resolve()?;
            let rows = timestep_sweep(&layout, &cfg, &steps)?;
            emit(&segrefine::pipeline::sweep_csv(&rows))?;
            if rows.iter().any(|r| r.failed > 0) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Diag { run, sample, points } => {
            let (layout, cfg) = run.resolve()?;
            let engine = Engine::new(layout, cfg)?;
            let dir = dump_diagnostics(&engine, &sample, points)?;
            emit(&format!("wrote {}\n", dir.display()))?;
        }
        Command::Eval {
            pred,
            gt,
            initial,
            num_classes,
            per_image,
            json,
        } => eval(&pred, &gt, initial.as_deref(), num_classes, per_image, json.as_deref())?,
        Command::Synth { out } => {
            synth::write_fixture_dataset(&out)?;
            emit(&format!("wrote {}\n", out.display()))?;
        }
        Command::Validate { recorded } => {
            let store = RecordedStore::open(&recorded)?;
            let n = store.validate()?;
            emit(&format!("{} samples, {n} files ok\n", store.samples().count()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
