use std::path::Path;
use std::process::Command;

use pco_cli::config::{GtSource, RunConfig};
use pco_cli::pipeline::{
    self, checkpoint_paths, load_fold_checkpoint, read_segmentation_folds, summarize,
};
use pco_core::synth::DatasetSynthSpec;
use pco_unet::UNetConfig;

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 4;
    cfg.out = out.to_path_buf();
    cfg.dataset.synth = Some(DatasetSynthSpec {
        count: 20,
        ..DatasetSynthSpec::default()
    });
    cfg.unet = UNetConfig {
        depth: 2,
        base_channels: 4,
        input_size: 32,
        in_channels: 1,
    };
    cfg.train.epochs = 2;
    cfg.train.steps_per_epoch = 2;
    cfg.train.batch_size = 2;
    cfg
}

#[test]
fn run_all_layout_and_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let report = pipeline::run_pipeline(&cfg).unwrap();

    assert_eq!(checkpoint_paths(dir.path()).len(), 10);
    for gt in [GtSource::Gt1, GtSource::Gt2] {
        for fold in 0..5 {
            let f = dir.path().join(gt.dir_name()).join(format!("fold{fold}"));
            assert!(f.join("history.csv").is_file());
            assert_eq!(std::fs::read_dir(f.join("preds")).unwrap().count(), 4);
        }
    }
    assert!(report.segmentation_folds.iter().all(|r| r.n_test == 4));
    assert_eq!(report.cases, 20);

    // Aggregates are recomputable from the persisted per-fold table.
    let folds = read_segmentation_folds(&cfg).unwrap();
    for s in &report.segmentation_summary {
        assert_eq!(&summarize(s.gt, &folds), s);
    }
    for c in &report.classification {
        assert_eq!(c.counts.total(), 20);
    }
    for sub in [
        "curves/pr.svg",
        "curves/roc.svg",
        "scatter/scatter.svg",
        "report.json",
        "tables/classification.csv",
    ] {
        assert!(dir.path().join("report").join(sub).is_file(), "{sub}");
    }

    // Stages rerun on their own give the same tables.
    let before = std::fs::read(dir.path().join("report/tables/areas.csv")).unwrap();
    let prep = pipeline::prepare(&cfg).unwrap();
    pipeline::evaluate(&cfg, &prep).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("report/tables/areas.csv")).unwrap(),
        before
    );

    // A checkpoint read with a different architecture fails loudly.
    assert!(load_fold_checkpoint(&cfg, GtSource::Gt1, 0).is_ok());
    let mut other = cfg.clone();
    other.unet.base_channels = 8;
    assert!(load_fold_checkpoint(&other, GtSource::Gt1, 0).is_err());
}

#[test]
fn stages_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let prep = pipeline::prepare(&cfg).unwrap();
    let err = format!("{:#}", pipeline::evaluate(&cfg, &prep).unwrap_err());
    assert!(err.contains("fold0") || err.contains("fold 0"), "{err}");
    assert!(pipeline::select_cutoffs(&cfg).is_err());
    assert!(pipeline::train_fold(&cfg, &prep, GtSource::Gt1, 5).is_err());
}

#[test]
fn cli_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(&dir.path().join("run"));
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let pco = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_pco"))
            .arg("--config")
            .arg(&cfg_path)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    };
    let out = pco(&["synth"]);
    assert!(out.status.success());
    assert!(dir.path().join("run/dataset/manifest.json").is_file());
    assert!(pco(&["gt2"]).status.success());
    assert_eq!(
        std::fs::read_dir(dir.path().join("run/gt2_masks"))
            .unwrap()
            .count(),
        20
    );
    let out = pco(&["train", "--gt", "2", "--fold", "1"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("run/gt2/fold1/checkpoint.bin").is_file());

    let bad = pco(&["train", "--gt", "3", "--fold", "0"]);
    assert!(!bad.status.success());
    let out = pco(&["evaluate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage evaluate"), "{err}");

    let out = pco(&["--seed", "9", "show-config"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seed = 9"), "{text}");
}
