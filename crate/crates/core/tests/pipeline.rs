use std::fs;
use std::path::Path;
use std::process::Command;

use segrefine::pipeline::{
    dump_diagnostics, run_refinement, synth, timestep_sweep, DatasetLayout, Engine, RunConfig, SampleStatus,
};

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    synth::write_fixture_dataset(dir.path()).unwrap();
    dir
}

fn cli(args: &[&str], root: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(args)
        .arg("--root")
        .arg(root)
        .output()
        .unwrap()
}

#[test]
fn fixture_run_improves_every_sample() {
    let dir = fixture();
    let layout = DatasetLayout::new(dir.path());
    let report = run_refinement(&layout, &RunConfig::default()).unwrap();
    assert_eq!((report.num_samples, report.failed), (3, 0));
    for s in &report.samples {
        match s {
            SampleStatus::Ok { id, coarse_iou: Some(c), refined_iou: Some(r), .. } => {
                assert!(r > c, "{id}: {c} -> {r}")
            }
            other => panic!("unexpected status {other:?}"),
        }
    }
    assert!(report.refined.unwrap().mean_iou > report.coarse.unwrap().mean_iou);
    for id in ["multi", "over", "under"] {
        assert!(layout.refined_mask_path(id).is_file());
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(layout.out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["failed"], 0);
    assert!(json["config"].get("workers").is_none());
}

#[test]
fn missing_coarse_mask_fails_only_that_sample() {
    let dir = fixture();
    fs::remove_dir_all(dir.path().join("coarse_masks").join("under")).unwrap();
    let report = run_refinement(&DatasetLayout::new(dir.path()), &RunConfig::default()).unwrap();
    assert_eq!((report.num_samples, report.failed), (3, 1));
    let failed: Vec<_> = report
        .samples
        .iter()
        .filter_map(|s| match s {
            SampleStatus::Error { id, .. } => Some(id.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(failed, ["under"]);
    assert!(report.to_text().contains("FAILED under"));

    let out = cli(&["refine"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_is_an_error() {
    let dir = fixture();
    let out = cli(&["refine", "--set", "beta=1.5"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["refine", "--set", "no_such_key=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_step() {
    let dir = fixture();
    let layout = DatasetLayout::new(dir.path());
    let rows = timestep_sweep(&layout, &RunConfig::default(), &[100, 400, 700]).unwrap();
    assert_eq!(rows.iter().map(|r| r.t_s).collect::<Vec<_>>(), [100, 400, 700]);
    assert!(rows.iter().all(|r| r.samples == 3 && r.failed == 0));
    let csv = fs::read_to_string(layout.out.join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "t_s,samples,failed,coarse_miou,refined_miou");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("400,3,0,"));
}

#[test]
fn diag_with_no_points_still_writes_overlays() {
    let dir = fixture();
    let engine = Engine::new(DatasetLayout::new(dir.path()), RunConfig::default()).unwrap();
    let out = dump_diagnostics(&engine, "multi", 0).unwrap();
    for f in ["image.png", "before.png", "after.png", "arrows.json", "arrows_cat.png", "soft_after_dog.png", "generated_dog.png"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let arrows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("arrows.json")).unwrap()).unwrap();
    assert_eq!(arrows.as_array().unwrap().len(), 2);
    assert!(arrows.as_array().unwrap().iter().all(|c| c["arrows"].as_array().unwrap().is_empty()));
    assert!(dump_diagnostics(&engine, "nope", 3).is_err());
}

#[test]
fn unchanged_generation_gives_zero_length_arrows() {
    let dir = fixture();
    // Without toy textures the generated image is the original one.
    fs::remove_dir_all(dir.path().join("toy")).unwrap();
    let engine = Engine::new(DatasetLayout::new(dir.path()), RunConfig::default()).unwrap();
    let out = dump_diagnostics(&engine, "over", 15).unwrap();
    let arrows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("arrows.json")).unwrap()).unwrap();
    let list = arrows[0]["arrows"].as_array().unwrap();
    assert_eq!(list.len(), 15);
    for a in list {
        assert_eq!(a["from"], a["to"]);
    }
}

#[test]
fn eval_and_validate_commands() {
    let dir = fixture();
    assert!(cli(&["refine"], dir.path()).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(["eval", "--pred"])
        .arg(dir.path().join("out/masks"))
        .arg("--gt")
        .arg(dir.path().join("gt"))
        .arg("--json")
        .arg(dir.path().join("eval.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mIoU 100.00 over 3 samples"));
    assert!(dir.path().join("eval.json").is_file());

    let out = Command::new(env!("CARGO_BIN_EXE_segrefine"))
        .args(["validate", "--recorded"])
        .arg(dir.path().join("recorded"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0 samples, 0 files ok");
}
