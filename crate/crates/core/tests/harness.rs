use std::fs;

use dpleak::data::DatasetSource;
use dpleak::harness::{
    emit_report, execute, report_rows, run_experiment, run_grid, ExperimentConfig, GridSpec,
    RunManifest, MANIFEST_FORMAT,
};
use dpleak::models::ModelFamily;
use dpleak::ErrorClass;

fn tiny(family: ModelFamily, epsilon: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(family, epsilon);
    cfg.data = DatasetSource::SyntheticDigits8x8 { n: 300, seed: 2 };
    cfg.training.steps = 20;
    cfg.training.batch_size = 8;
    cfg.split.members = 0.2;
    cfg.split.nonmembers = 0.2;
    cfg.shadows = 2;
    cfg.probes = 4;
    cfg.gan.disc_hidden = vec![16];
    cfg.gan.gen_hidden = vec![16];
    cfg.diffusion.hidden = vec![16];
    cfg.sampler.steps = 8;
    cfg.quality.samples = 40;
    cfg.stability.enabled = true;
    cfg.stability.removed = 2;
    cfg.stability.replicas = 1;
    cfg.stability.probes = 6;
    cfg.stability.lipschitz_directions = 2;
    cfg
}

#[test]
fn run_persists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&tiny(ModelFamily::Diffusion, 5.0), dir.path()).unwrap();
    assert_eq!(m.format, MANIFEST_FORMAT);
    for key in [
        "config",
        "target_model",
        "target_scores",
        "shadow_scores",
        "attack",
        "metrics",
        "samples",
        "bounds",
        "manifest",
    ] {
        let rel = m
            .artifacts
            .get(key)
            .unwrap_or_else(|| panic!("missing artifact {key}"));
        assert!(dir.path().join(rel).is_file(), "{key} not on disk");
    }
    let back = RunManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(back, m);
    let cfg = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg.hash().unwrap(), m.config_hash);
    assert!(m.accountant.achieved_epsilon <= 5.0);
    assert!(m.accountant.noise_multiplier > 0.0);
    let bounds = m.bounds.unwrap();
    assert!(bounds.diffusion_gan_ratio.unwrap() > 1.0);
    assert!(bounds.empirical.is_some());
    assert!(m.frechet.unwrap() >= 0.0);
}

#[test]
fn nonprivate_run_reports_the_sentinel() {
    let mut cfg = tiny(ModelFamily::Gan, f64::INFINITY);
    cfg.quality.enabled = false;
    let m = execute(&cfg, None).unwrap().manifest;
    assert_eq!(m.accountant.noise_multiplier, 0.0);
    assert!(m.accountant.achieved_epsilon.is_infinite());
    assert!(m.artifacts.is_empty());
    let json = serde_json::to_string(&m).unwrap();
    assert!(json.contains("\"inf\""));
    let bounds = m.bounds.unwrap();
    assert!(bounds.inputs.loss_range.is_some());
    assert_eq!(bounds.diffusion_gan_ratio, None);
}

#[test]
fn rerun_is_byte_identical() {
    let cfg = tiny(ModelFamily::Gan, 10.0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, a.path()).unwrap();
    let first = RunManifest::load(&a.path().join("manifest.json")).unwrap();
    run_experiment(&first.config, b.path()).unwrap();
    for f in [
        "target_scores.jsonl",
        "shadow_scores.jsonl",
        "metrics.csv",
        "bounds.csv",
        "target_model.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn failing_stage_is_tagged_and_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelFamily::Gan, 5.0);
    cfg.stability.enabled = false;
    let mut bad = cfg.clone();
    cfg.data = DatasetSource::IdxFiles {
        images: dir.path().join("missing-images"),
        labels: dir.path().join("missing-labels"),
    };
    let err = run_experiment(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("stage `data`"), "{err}");
    assert_eq!(err.class(), ErrorClass::Io);
    assert!(dir.path().exists());

    bad.training.learning_rate = dpleak::dp::LearningRate::Constant(1e300);
    let err = run_experiment(&bad, dir.path()).unwrap_err();
    assert!(err.to_string().contains("stage `target`"), "{err}");
    assert!(dir.path().join("config.toml").is_file());
}

#[test]
fn grid_cells_and_report_order() {
    let mut base = tiny(ModelFamily::Gan, 1.0);
    base.quality.enabled = false;
    base.stability.enabled = false;
    let mut spec = GridSpec::standard(base, 1);
    spec.skip_nonprivate_gan = true;
    let names: Vec<String> = spec.cells().into_iter().map(|c| c.name).collect();
    assert_eq!(names.len(), 7);
    assert!(!names.contains(&"gan-epsinf-seed0".to_string()));
    assert!(names.contains(&"diffusion-epsinf-seed0".to_string()));

    spec.skip_nonprivate_gan = false;
    let dir = tempfile::tempdir().unwrap();
    let manifests = run_grid(&spec, Some(dir.path())).unwrap();
    assert_eq!(manifests.len(), 8);
    assert!(dir
        .path()
        .join("diffusion-eps10-seed0/manifest.json")
        .is_file());

    let rows = report_rows(&manifests).unwrap();
    let order: Vec<(ModelFamily, f64)> = rows.iter().map(|r| (r.family, r.epsilon)).collect();
    let mut expected = Vec::new();
    for f in [ModelFamily::Gan, ModelFamily::Diffusion] {
        for e in [f64::INFINITY, 10.0, 5.0, 1.0] {
            expected.push((f, e));
        }
    }
    assert_eq!(order, expected);
    for r in &rows {
        assert_eq!(r.advantage, r.tpr - r.fpr);
    }

    let files = emit_report(&manifests[..1], &dir.path().join("report")).unwrap();
    let csv = fs::read_to_string(files.csv).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(fs::read_to_string(files.table).unwrap().contains("AUC"));
    assert!(emit_report(&[], dir.path()).is_err());
}
