//! Spectrum evolution on a small cube: per-epoch SAE and energy of the
//! network's full spectrum.

use std::collections::BTreeMap;

use serde_json::json;

use super::{real, opt_real, select_by_validation, selection_rows, Context, Output, Outputs, SeedTriple, Table, SELECTION_COLUMNS};
use crate::error::Result;
use crate::fourier::{fwht, sparse_from_dense, DenseFunction, Frequency, SparseFourierFunction};
use crate::metrics::{mean_std, snapshot_hook, FrequencySet, SetMetrics, SnapshotMode};
use crate::mlp::{EpochRecord, MlpModel, TrainSeeds};
use crate::regularizers::Regularizer;
use crate::synth::{cube_complement_split, generate_target, SyntheticSpec};

/// One selected training run.
#[derive(Clone, Debug)]
pub struct EvolutionRun {
    pub run_id: String,
    pub seeds: SeedTriple,
    pub method: String,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub records: Vec<EpochRecord>,
    /// Metrics of the initial network.
    pub initial: Vec<SetMetrics>,
    /// Metrics after each epoch; entry `e - 1` belongs to epoch `e`.
    pub epochs: Vec<Vec<SetMetrics>>,
    pub support: Vec<Frequency>,
    /// Orthonormal target coefficients on `support`.
    pub target_coefficients: Vec<f64>,
    /// Orthonormal network coefficients on `support`, per epoch.
    pub learned: Vec<Vec<f64>>,
}

fn find(metrics: &[SetMetrics], set: &str) -> Option<f64> {
    metrics.iter().find(|m| m.set_name == set).and_then(|m| m.sae)
}

impl EvolutionRun {
    pub fn sae(&self, epoch: usize, set: &str) -> Option<f64> {
        if epoch == 0 {
            return find(&self.initial, set);
        }
        self.epochs.get(epoch - 1).and_then(|m| find(m, set))
    }

    pub fn best_sae(&self, set: &str) -> Option<f64> {
        self.sae(self.best_epoch, set)
    }

    /// Mean `|learned coefficient|` over the support frequencies of degree
    /// `degree` after `epoch`.
    pub fn support_amplitude(&self, epoch: usize, degree: usize) -> Option<f64> {
        let row = self.learned.get(epoch.checked_sub(1)?)?;
        let vals: Vec<f64> = self
            .support
            .iter()
            .zip(row)
            .filter(|(f, _)| f.degree() == degree)
            .map(|(_, c)| c.abs())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionSummary {
    pub methods: Vec<String>,
    pub runs: Vec<EvolutionRun>,
}

impl EvolutionSummary {
    pub fn runs_of<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a EvolutionRun> + 'a {
        self.runs.iter().filter(move |r| r.method == method)
    }

    /// Mean SAE on `set` across the method's runs at each epoch, over the
    /// runs that reached the epoch and have a defined SAE.
    pub fn mean_curve(&self, method: &str, set: &str) -> Vec<(usize, f64)> {
        let max_epoch = self.runs_of(method).map(|r| r.epochs.len()).max().unwrap_or(0);
        (1..=max_epoch)
            .filter_map(|e| {
                let vals: Vec<f64> = self.runs_of(method).filter_map(|r| r.sae(e, set)).collect();
                (!vals.is_empty()).then(|| (e, vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect()
    }
}

fn frequency_sets(n: usize, target: &SparseFourierFunction) -> Vec<FrequencySet> {
    let mut sets = vec![FrequencySet::all(), FrequencySet::support(target)];
    sets.extend((0..=n).map(FrequencySet::degree));
    sets
}

type SetSamples = (String, Vec<f64>, Vec<f64>);

struct Observation {
    sets: Vec<SetMetrics>,
    learned: Vec<f64>,
}

struct Cell {
    seeds: SeedTriple,
    runs: Vec<EvolutionRun>,
    selection: Vec<Vec<String>>,
    dumps: Vec<(String, String)>,
    timings: Vec<(String, serde_json::Value)>,
}

pub(crate) fn run(ctx: &Context) -> Result<(EvolutionSummary, Outputs)> {
    let config = ctx.config;
    let n = config.data.n[0];
    let train_size = config.data.train_size[0];
    let mode = config.data.mode.expect("resolved");
    let methods = config.methods();
    let dims = config.layer_dims(n);

    let cells = ctx.par_map(config.seeds.triples(), |seeds| {
        let target = generate_target(&SyntheticSpec {
            mode,
            n,
            seed: seeds.target,
        })?;
        let (train, validation) = cube_complement_split(&target, train_size, seeds.data)?;
        let sets = frequency_sets(n, &target);
        let support: Vec<Frequency> = target.support().cloned().collect();
        let target_spectrum = target.to_spectrum()?;
        let target_coefficients: Vec<f64> = support.iter().map(|f| target_spectrum.coefficient(f)).collect();
        let observe = |record: &EpochRecord, model: &MlpModel| -> Result<Observation> {
            let snap = snapshot_hook(model, &target, &sets, &SnapshotMode::Full, record.epoch)?;
            let learned = support.iter().map(|f| snap.coefficient(f).unwrap_or(0.0)).collect();
            Ok(Observation {
                sets: snap.sets,
                learned,
            })
        };
        let mut cell = Cell {
            seeds: *seeds,
            runs: vec![],
            selection: vec![],
            dumps: vec![],
            timings: vec![],
        };
        for method in &methods {
            let run_id = format!("{}_{}", seeds.tag(), method.name);
            let s = select_by_validation(config, method, &dims, seeds.train, &train, &validation, observe)?;
            cell.selection
                .extend(selection_rows(&ctx.key(&run_id, seeds), std::slice::from_ref(&method.name), &s));
            let mut init_rng = crate::rng::stream(TrainSeeds::from_seed(seeds.train).init);
            let initial_model = MlpModel::new(&dims, config.model.negative_slope, &mut init_rng)?;
            let initial = snapshot_hook(&initial_model, &target, &sets, &SnapshotMode::Full, 0)?.sets;
            if let Some(threshold) = config.snapshot.dump_threshold {
                let spectrum = fwht(&DenseFunction::densify(&s.outcome.best_model)?)?;
                let sparse = sparse_from_dense(&spectrum, threshold)?;
                cell.dumps.push((format!("spectra/{run_id}.txt"), sparse.to_text()));
            }
            cell.timings.push((
                run_id.clone(),
                json!({ "candidate_seconds": s.seconds, "epoch_wall_time": s.epoch_seconds }),
            ));
            let (sets_per_epoch, learned) = s.observations.into_iter().map(|o| (o.sets, o.learned)).unzip();
            cell.runs.push(EvolutionRun {
                run_id,
                seeds: *seeds,
                method: method.name.clone(),
                regularizer: s.regularizer,
                lambda: s.lambda,
                best_epoch: s.outcome.best_epoch,
                best_val_mse: s.outcome.best_val_mse,
                records: s.outcome.records,
                initial,
                epochs: sets_per_epoch,
                support: support.clone(),
                target_coefficients: target_coefficients.clone(),
                learned,
            });
        }
        Ok(cell)
    })?;

    let mut snapshots = Table::new(
        "snapshots.csv",
        &["method", "regularizer", "lambda", "epoch", "set_name", "sae", "energy"],
    );
    let mut support = Table::new(
        "support.csv",
        &["method", "lambda", "epoch", "frequency", "degree", "target", "learned"],
    );
    let mut epochs = Table::new(
        "epochs.csv",
        &["method", "regularizer", "lambda", "epoch", "train_mse", "val_mse", "penalty"],
    );
    let mut runs_table = Table::new(
        "runs.csv",
        &["method", "regularizer", "lambda", "best_epoch", "best_val_mse", "epochs_run", "sae_all_best", "sae_support_best"],
    );
    let mut selection = Table::new("selection.csv", &[&["method"][..], &SELECTION_COLUMNS[..]].concat());
    let mut outputs = Outputs::default();
    let mut runs = Vec::new();
    for cell in cells {
        selection.rows.extend(cell.selection);
        for (path, contents) in cell.dumps {
            outputs.files.push(Output::Text { path, contents });
        }
        for (id, t) in cell.timings {
            outputs.timings.insert(id, t);
        }
        for r in cell.runs {
            let key = ctx.key(&r.run_id, &cell.seeds);
            let reg = r.regularizer.name();
            let lambda = real(r.lambda);
            for (i, (metrics, rec)) in r.epochs.iter().zip(&r.records).enumerate() {
                let epoch = (i + 1).to_string();
                for m in metrics {
                    snapshots.push(
                        key.clone(),
                        vec![
                            r.method.clone(),
                            reg.clone(),
                            lambda.clone(),
                            epoch.clone(),
                            m.set_name.clone(),
                            opt_real(m.sae),
                            real(m.energy),
                        ],
                    );
                }
                for ((f, t), l) in r.support.iter().zip(&r.target_coefficients).zip(&r.learned[i]) {
                    support.push(
                        key.clone(),
                        vec![
                            r.method.clone(),
                            lambda.clone(),
                            epoch.clone(),
                            f.to_string(),
                            f.degree().to_string(),
                            real(*t),
                            real(*l),
                        ],
                    );
                }
                epochs.push(
                    key.clone(),
                    vec![
                        r.method.clone(),
                        reg.clone(),
                        lambda.clone(),
                        epoch,
                        real(rec.train_mse),
                        real(rec.val_mse),
                        real(rec.penalty),
                    ],
                );
            }
            runs_table.push(
                key,
                vec![
                    r.method.clone(),
                    reg,
                    lambda,
                    r.best_epoch.to_string(),
                    real(r.best_val_mse),
                    r.records.len().to_string(),
                    opt_real(r.best_sae("all")),
                    opt_real(r.best_sae("target_support")),
                ],
            );
            runs.push(r);
        }
    }

    let summary = EvolutionSummary {
        methods: methods.iter().map(|m| m.name.clone()).collect(),
        runs,
    };
    let mut aggregate = Table::new(
        "aggregate.csv",
        &["method", "epoch", "set_name", "sae_mean", "sae_std", "energy_mean", "energy_std", "runs"],
    );
    for method in &summary.methods {
        // (epoch, set index) -> (set name, SAEs, energies)
        let mut by_key: BTreeMap<(usize, usize), SetSamples> = BTreeMap::new();
        for r in summary.runs_of(method) {
            for (i, metrics) in r.epochs.iter().enumerate() {
                for (j, m) in metrics.iter().enumerate() {
                    let entry = by_key.entry((i + 1, j)).or_insert_with(|| (m.set_name.clone(), vec![], vec![]));
                    if let Some(s) = m.sae {
                        entry.1.push(s);
                    }
                    entry.2.push(m.energy);
                }
            }
        }
        for ((epoch, _), (set_name, saes, energies)) in by_key {
            let (sm, ss) = mean_std(&saes);
            let (em, es) = mean_std(&energies);
            let defined = !saes.is_empty();
            aggregate.push(
                ctx.aggregate_key(),
                vec![
                    method.clone(),
                    epoch.to_string(),
                    set_name,
                    if defined { real(sm) } else { String::new() },
                    if defined { real(ss) } else { String::new() },
                    real(em),
                    real(es),
                    energies.len().to_string(),
                ],
            );
        }
    }
    outputs.files.splice(
        0..0,
        [snapshots, support, epochs, runs_table, selection, aggregate].map(Output::Table),
    );
    Ok((summary, outputs))
}
