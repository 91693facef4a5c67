//! Test-R² experiments: large synthetic cubes and ingested CSV data.

use serde_json::json;

use super::{
    real, regularizer_b, select_by_validation, selection_rows, Context, Method, Output, Outputs, RunConfig, SeedTriple,
    Table, SELECTION_COLUMNS,
};
use crate::error::{Error, Result};
use crate::fourier::CubeFunction;
use crate::metrics::{mean_std, r2_score};
use crate::mlp::{EpochRecord, MlpModel};
use crate::regularizers::Regularizer;
use crate::synth::{generate_target, sample_dataset, scaled_train_size, Dataset, DatasetSplit, SyntheticSpec};

/// Test R² of one selected run.
#[derive(Clone, Debug)]
pub struct ScoreRun {
    pub run_id: String,
    pub seeds: SeedTriple,
    /// Grid coordinates, e.g. `[("n", "25"), ("c", "1")]`.
    pub labels: Vec<(String, String)>,
    pub method: String,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_mse: f64,
    pub test_r2: f64,
    pub records: Vec<EpochRecord>,
    /// Test R² after each epoch.
    pub test_r2_curve: Vec<f64>,
}

impl ScoreRun {
    pub fn label(&self, name: &str) -> Option<&str> {
        self.labels.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct ScoreSummary {
    pub methods: Vec<String>,
    pub runs: Vec<ScoreRun>,
}

impl ScoreSummary {
    /// Mean test R² of `method` over runs whose labels include `filter`.
    pub fn mean_r2(&self, method: &str, filter: &[(&str, &str)]) -> Option<f64> {
        let vals: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.method == method && filter.iter().all(|(k, v)| r.label(k) == Some(*v)))
            .map(|r| r.test_r2)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// One grid cell.
struct Task {
    seeds: SeedTriple,
    labels: Vec<(String, String)>,
    n: usize,
}

struct CellResult {
    runs: Vec<ScoreRun>,
    selection: Vec<Vec<String>>,
    timings: Vec<(String, serde_json::Value)>,
}

fn run_cell(
    ctx: &Context,
    task: &Task,
    methods: &[Method],
    (train, validation, test): (Dataset, Dataset, Dataset),
) -> Result<CellResult> {
    let config = ctx.config;
    let dims = config.layer_dims(task.n);
    let label_values: Vec<String> = task.labels.iter().map(|(_, v)| v.clone()).collect();
    let tag = task
        .labels
        .iter()
        .map(|(k, v)| format!("{k}{v}"))
        .collect::<Vec<_>>()
        .join("_");
    let mut out = CellResult {
        runs: vec![],
        selection: vec![],
        timings: vec![],
    };
    let observe = |_: &EpochRecord, model: &MlpModel| -> Result<f64> {
        r2_score(&model.evaluate_many(test.inputs()), test.targets())
    };
    for method in methods {
        let run_id = format!("{tag}_{}_{}", task.seeds.tag(), method.name);
        let mut labels = label_values.clone();
        labels.push(method.name.clone());
        let s = select_by_validation(config, method, &dims, task.seeds.train, &train, &validation, observe)?;
        out.selection.extend(selection_rows(&ctx.key(&run_id, &task.seeds), &labels, &s));
        let test_r2 = r2_score(&s.outcome.best_model.evaluate_many(test.inputs()), test.targets())?;
        out.timings.push((
            run_id.clone(),
            json!({ "candidate_seconds": s.seconds, "epoch_wall_time": s.epoch_seconds }),
        ));
        out.runs.push(ScoreRun {
            run_id,
            seeds: task.seeds,
            labels: task.labels.clone(),
            method: method.name.clone(),
            regularizer: s.regularizer,
            lambda: s.lambda,
            best_epoch: s.outcome.best_epoch,
            epochs_run: s.outcome.records.len(),
            best_val_mse: s.outcome.best_val_mse,
            test_r2,
            records: s.outcome.records,
            test_r2_curve: s.observations,
        });
    }
    Ok(out)
}

fn collect(ctx: &Context, label_names: &[&str], methods: &[Method], cells: Vec<CellResult>) -> (ScoreSummary, Outputs) {
    let with_labels = |cols: &[&str]| -> Vec<String> {
        label_names.iter().chain(cols).map(|s| s.to_string()).collect()
    };
    let results_cols = with_labels(&[
        "method",
        "regularizer",
        "b",
        "lambda",
        "best_epoch",
        "epochs_run",
        "best_val_mse",
        "test_r2",
    ]);
    let curve_cols = with_labels(&["method", "epoch", "train_mse", "val_mse", "penalty", "test_r2", "best_so_far_test_r2"]);
    let selection_cols = with_labels(&[&["method"][..], &SELECTION_COLUMNS[..]].concat());
    let aggregate_cols = with_labels(&["method", "test_r2_mean", "test_r2_std", "runs"]);
    let mut results = table("results.csv", results_cols);
    let mut curves = table("curves.csv", curve_cols);
    let mut selection = table("selection.csv", selection_cols);
    let mut aggregate = table("aggregate.csv", aggregate_cols);
    let mut outputs = Outputs::default();
    let mut runs = Vec::new();
    for cell in cells {
        selection.rows.extend(cell.selection);
        outputs.timings.extend(cell.timings);
        for r in cell.runs {
            let key = ctx.key(&r.run_id, &r.seeds);
            let labels: Vec<String> = r.labels.iter().map(|(_, v)| v.clone()).collect();
            let mut rest = labels.clone();
            rest.extend([
                r.method.clone(),
                r.regularizer.name(),
                regularizer_b(&r.regularizer),
                real(r.lambda),
                r.best_epoch.to_string(),
                r.epochs_run.to_string(),
                real(r.best_val_mse),
                real(r.test_r2),
            ]);
            results.push(key.clone(), rest);
            // R² of the model early stopping would return after each epoch.
            let mut best: Option<(f64, f64)> = None;
            for (rec, r2) in r.records.iter().zip(&r.test_r2_curve) {
                if best.is_none_or(|(v, _)| rec.val_mse < v) {
                    best = Some((rec.val_mse, *r2));
                }
                let mut rest = labels.clone();
                rest.extend([
                    r.method.clone(),
                    rec.epoch.to_string(),
                    real(rec.train_mse),
                    real(rec.val_mse),
                    real(rec.penalty),
                    real(*r2),
                    real(best.map(|(_, r2)| r2).unwrap_or(f64::NAN)),
                ]);
                curves.push(key.clone(), rest);
            }
            runs.push(r);
        }
    }
    let mut groups: Vec<(Vec<(String, String)>, String)> = Vec::new();
    for r in &runs {
        let g = (r.labels.clone(), r.method.clone());
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    for (labels, method) in groups {
        let vals: Vec<f64> = runs
            .iter()
            .filter(|r| r.labels == labels && r.method == method)
            .map(|r| r.test_r2)
            .collect();
        let (m, s) = mean_std(&vals);
        let mut rest: Vec<String> = labels.into_iter().map(|(_, v)| v).collect();
        rest.extend([method, real(m), real(s), vals.len().to_string()]);
        aggregate.push(ctx.aggregate_key(), rest);
    }
    outputs
        .files
        .extend([results, curves, selection, aggregate].map(Output::Table));
    let summary = ScoreSummary {
        methods: methods.iter().map(|m| m.name.clone()).collect(),
        runs,
    };
    (summary, outputs)
}

fn table(path: &str, columns: Vec<String>) -> Table {
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    Table::new(path, &cols)
}

pub(crate) fn run_synth_large(ctx: &Context) -> Result<(ScoreSummary, Outputs)> {
    let config = ctx.config;
    let d = &config.data;
    let mode = d.mode.expect("resolved");
    let multiple = d.multiple.expect("resolved");
    let methods = config.methods();
    let mut tasks = Vec::new();
    for &n in &d.n {
        for &c in &d.c {
            for seeds in config.seeds.triples() {
                tasks.push(Task {
                    seeds,
                    labels: vec![("n".into(), n.to_string()), ("c".into(), c.to_string())],
                    n,
                });
            }
        }
    }
    let cells = ctx.par_map(tasks, |task| {
        let c: usize = task.labels[1].1.parse().expect("formatted above");
        let target = generate_target(&SyntheticSpec {
            mode,
            n: task.n,
            seed: task.seeds.target,
        })?;
        let split = DatasetSplit::with_multiples(scaled_train_size(task.n, c), multiple);
        let data = sample_dataset(&target, split.total(), task.seeds.data)?;
        run_cell(ctx, task, &methods, split.apply(&data)?)
    })?;
    Ok(collect(ctx, &["n", "c"], &methods, cells))
}

pub(crate) fn run_real_csv(ctx: &Context) -> Result<(ScoreSummary, Outputs)> {
    let config = ctx.config;
    let data = config.load_csv()?;
    check_real_methods(config, data.dimension())?;
    let methods = config.methods();
    let mut tasks = Vec::new();
    for &m in &config.data.train_size {
        if m + 2 > data.len() {
            return Err(Error::Config(vec![format!(
                "data.train_size = {m} leaves no validation or test rows in a dataset of {} rows",
                data.len()
            )]));
        }
        for seeds in config.seeds.triples() {
            tasks.push(Task {
                seeds,
                labels: vec![("train_size".into(), m.to_string())],
                n: data.dimension(),
            });
        }
    }
    let cells = ctx.par_map(tasks, |task| {
        let m: usize = task.labels[0].1.parse().expect("formatted above");
        let split = DatasetSplit::shuffled_halves(data.len(), m, task.seeds.data)?;
        run_cell(ctx, task, &methods, split.apply(&data)?)
    })?;
    Ok(collect(ctx, &["train_size"], &methods, cells))
}

/// Dimension checks that need the loaded data.
fn check_real_methods(config: &RunConfig, n: usize) -> Result<()> {
    let mut errors = Vec::new();
    config.check_methods_for(n, &mut errors);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors))
    }
}
