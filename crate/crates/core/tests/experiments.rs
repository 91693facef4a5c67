use std::fs;
use std::path::Path;

use hashwh::experiments::{self, ExperimentKind, MethodSpec, RunConfig, RunManifest, RunOptions, SeedGrid, Summary};
use hashwh::synth::SyntheticMode;
use hashwh::tree::AblationOrder;
use hashwh::Error;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn tiny_evolution(epochs: usize) -> RunConfig {
    let mut c = RunConfig::new(ExperimentKind::SpectrumEvolution);
    c.data.n = vec![6];
    c.data.train_size = vec![40];
    c.train.max_epochs = epochs;
    c.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[4], &[1e-3, 1e-2])];
    c
}

#[test]
fn smoke_run_emits_one_snapshot_row_per_epoch_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let report = experiments::run(tiny_evolution(3), &RunOptions::new(dir.path())).unwrap();
    let (header, rows) = read_csv(&dir.path().join("snapshots.csv"));
    let (run, set, epoch) = (column(&header, "run_id"), column(&header, "set_name"), column(&header, "epoch"));
    // all, target_support, degree_0..=6
    let sets = 2 + 7;
    assert_eq!(rows.len(), 2 * 3 * sets);
    for id in ["t0_d0_r0_standard", "t0_d0_r0_hashwh_b4"] {
        let all: Vec<_> = rows.iter().filter(|r| r[run] == id && r[set] == "all").collect();
        assert_eq!(all.len(), 3);
        assert_eq!(all.iter().map(|r| r[epoch].as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
    }
    let Summary::Evolution(s) = report.summary else { panic!() };
    assert_eq!(s.runs.len(), 2);
}

#[test]
fn every_row_carries_run_id_seeds_and_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_evolution(2);
    config.seeds.data = vec![4, 5];
    let report = experiments::run(config, &RunOptions::new(dir.path())).unwrap();
    let hash = &report.manifest.config_hash;
    for file in &report.manifest.outputs {
        if !file.path.ends_with(".csv") {
            continue;
        }
        let (header, rows) = read_csv(&dir.path().join(&file.path));
        assert_eq!(&header[..5], ["run_id", "seed_target", "seed_data", "seed_train", "config_hash"]);
        assert_eq!(rows.len(), file.rows);
        for row in rows {
            assert!(!row[0].is_empty());
            assert_eq!(&row[4], hash);
            if row[0] != "mean" {
                for seed in &row[1..4] {
                    seed.parse::<u64>().unwrap();
                }
            }
        }
    }
}

#[test]
fn sae_on_target_support_drops_from_initialisation_to_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ExperimentKind::SpectrumEvolution);
    c.data.n = vec![8];
    c.data.train_size = vec![120];
    c.train.max_epochs = 60;
    c.methods = vec![MethodSpec::standard()];
    let report = experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let Summary::Evolution(s) = report.summary else { panic!() };
    let r = &s.runs[0];
    assert!(r.best_sae("target_support").unwrap() < r.sae(0, "target_support").unwrap());
}

#[test]
fn lambda_is_selected_on_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_evolution(8);
    c.methods = vec![MethodSpec::hashwh(&[4], &[1e-4, 1e-2, 1.0])];
    experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let (header, rows) = read_csv(&dir.path().join("selection.csv"));
    let (val, selected) = (column(&header, "best_val_mse"), column(&header, "selected"));
    let min = rows.iter().map(|r| r[val].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    let chosen: Vec<_> = rows.iter().filter(|r| r[selected] == "true").collect();
    assert_eq!(chosen.len(), 1);
    assert_eq!(chosen[0][val].parse::<f64>().unwrap(), min);
}

#[test]
fn invalid_configs_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut c = tiny_evolution(3);
    c.data.n = vec![20];
    c.train.learning_rate = -1.0;
    c.methods.push(MethodSpec::fullwh(&[0.1]));
    match experiments::run(c, &RunOptions::new(&out)) {
        Err(Error::Config(problems)) => assert!(problems.len() >= 2, "{problems:?}"),
        other => panic!("{other:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn config_files_round_trip_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        r#"
experiment = "hash_study"
out_dir = "results"
[hash_study]
k = 5
b = [5, 6]
rounds = 200
"#,
    )
    .unwrap();
    let config = RunConfig::load(&path).unwrap();
    assert_eq!(config.out_dir.as_deref(), Some(dir.path().join("results").as_path()));
    let out = config.out_dir.clone().unwrap();
    let report = experiments::run(config, &RunOptions::new(&out)).unwrap();
    let manifest = RunManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(manifest, report.manifest);
    assert_eq!(manifest.library_version, experiments::LIBRARY_VERSION);
    assert_eq!(manifest.config.hash(), manifest.config_hash);
}

#[test]
fn hash_study_reports_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ExperimentKind::HashStudy);
    c.hash_study.rounds = 2000;
    let report = experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let Summary::HashStudy(s) = report.summary else { panic!() };
    assert_eq!(s.cell(5, 5).unwrap().report.expected, 0.5);
    let (header, rows) = read_csv(&dir.path().join("collisions.csv"));
    let (k, b, expected) = (column(&header, "k"), column(&header, "b"), column(&header, "expected"));
    let lookup = |kk: &str, bb: &str| -> f64 {
        rows.iter().find(|r| r[k] == kk && r[b] == bb).unwrap()[expected].parse().unwrap()
    };
    assert_eq!(lookup("5", "5"), 0.5);
    for kk in ["5", "17", "25"] {
        // 2^b grows by 4 then 8 across the default b grid
        assert!((lookup(kk, "5") / lookup(kk, "7") - 4.0).abs() < 1e-12);
        assert!((lookup(kk, "7") / lookup(kk, "10") - 8.0).abs() < 1e-12);
    }
    // b chosen by the ε rule is reported as its own cell
    assert!(rows.iter().any(|r| r[column(&header, "epsilon_rule")] == "true"));
}

#[test]
fn ablation_curves_share_their_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ExperimentKind::Ablation);
    c.data.mode = Some(SyntheticMode::SparseInteractions);
    c.data.n = vec![8];
    c.data.train_size = vec![160];
    c.forest.trees = 10;
    c.forest.max_depth = 4;
    c.ablation.tie_seeds = vec![0, 1];
    let report = experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let Summary::Ablation(s) = report.summary else { panic!() };
    let run = &s.runs[0];
    assert_eq!(run.curves.len(), 4);
    let first = run.curves[0].steps[0].r2;
    let last = run.curves[0].steps.last().unwrap().r2;
    for curve in &run.curves {
        assert_eq!(curve.steps[0].r2, first);
        assert!((curve.steps.last().unwrap().r2 - last).abs() < 1e-9);
        assert_eq!(curve.steps.last().unwrap().support_size, 0);
    }
    assert!(s.mean_r2(AblationOrder::AmplitudeAsc).is_finite());
    assert!(dir.path().join("forests/t0_d0_r0.txt").is_file());
    assert!(dir.path().join("spectra/t0_d0_r0.txt").is_file());
}

#[test]
fn synth_large_reports_one_row_per_seed_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ExperimentKind::SynthLarge);
    c.data.n = vec![25];
    c.data.c = vec![1];
    c.train.max_epochs = 2;
    c.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[7], &[1e-3])];
    c.seeds = SeedGrid {
        target: vec![0, 1, 2],
        data: vec![0, 1, 2],
        train: vec![0, 1, 2],
        zip: true,
    };
    experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let (header, rows) = read_csv(&dir.path().join("results.csv"));
    let method = column(&header, "method");
    for m in ["standard", "hashwh_b7"] {
        assert_eq!(rows.iter().filter(|r| r[method] == m).count(), 3);
    }
    let (header, rows) = read_csv(&dir.path().join("curves.csv"));
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert!(header.contains(&"best_so_far_test_r2".to_string()));
}

#[test]
fn epoch_time_grows_with_hash_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ExperimentKind::SynthLarge);
    c.data.n = vec![14];
    c.train.max_epochs = 2;
    c.train.early_stopping = Some(false);
    c.methods = vec![MethodSpec::hashwh(&[4, 8, 12], &[1e-3])];
    let report = experiments::run(c, &RunOptions::new(dir.path())).unwrap();
    let Summary::Scores(s) = report.summary else { panic!() };
    let seconds: Vec<f64> = s.runs.iter().map(|r| r.records.last().unwrap().wall_time).collect();
    assert!(seconds.windows(2).all(|w| w[0] < w[1]), "{seconds:?}");
    let timings: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings["runs"].as_object().unwrap().len(), 3);
}

#[test]
fn real_csv_uses_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("variants.csv");
    let mut text = String::from("site1,site2,flag,fitness\n");
    let letters = ["A", "C", "D"];
    for i in 0..90 {
        let y = if letters[i % 3] == "A" { 1.0 } else { 0.0 } + (i % 2) as f64 * 0.5 + (i % 7) as f64 * 0.01;
        text.push_str(&format!("{},{},{},{y}\n", letters[i % 3], letters[(i / 3) % 3], i % 2));
    }
    fs::write(&csv, text).unwrap();
    let schema = dir.path().join("schema.toml");
    fs::write(&schema, "target = \"fitness\"\ncategorical = [\"site1\", \"site2\"]\n").unwrap();
    let mut c = RunConfig::new(ExperimentKind::RealCsv);
    c.data.csv = Some(csv);
    c.data.schema = Some(schema);
    c.data.train_size = vec![30];
    c.train.max_epochs = 30;
    c.methods = vec![
        MethodSpec::standard(),
        MethodSpec {
            tune_b: true,
            ..MethodSpec::hashwh(&[2, 3], &[1e-4])
        },
    ];
    let report = experiments::run(c, &RunOptions::new(dir.path().join("out"))).unwrap();
    let Summary::Scores(s) = report.summary else { panic!() };
    assert_eq!(s.methods, ["standard", "hashwh"]);
    assert_eq!(s.runs.len(), 2);
    assert!(s.runs.iter().all(|r| r.test_r2.is_finite()));
}
