//! Forest fit, exact forest spectrum and coefficient-deletion ablation.

use serde_json::json;

use super::{real, Context, Output, Outputs, SeedTriple, Table};
use crate::error::Result;
use crate::fourier::CubeFunction;
use crate::metrics::{mean_std, r2_score};
use crate::synth::{cube_complement_split, generate_target, Dataset, DatasetSplit, SyntheticSpec};
use crate::tree::{ablate, fit_forest, forest_to_fourier, mean_r2, AblationOrder, AblationStep, ForestParams};

pub const ORDERS: [AblationOrder; 2] = [AblationOrder::AmplitudeAsc, AblationOrder::DegreeDesc];

#[derive(Clone, Debug)]
pub struct AblationCurve {
    pub tie_seed: u64,
    pub order: AblationOrder,
    pub steps: Vec<AblationStep>,
    pub mean_r2: f64,
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub run_id: String,
    pub seeds: SeedTriple,
    /// Hold-out R² of the fitted forest.
    pub forest_r2: f64,
    pub support_size: usize,
    pub curves: Vec<AblationCurve>,
}

#[derive(Clone, Debug)]
pub struct AblationSummary {
    pub runs: Vec<AblationRun>,
}

impl AblationSummary {
    /// Mean over every run and tie seed of the curve's mean R².
    pub fn mean_r2(&self, order: AblationOrder) -> f64 {
        let vals: Vec<f64> = self
            .runs
            .iter()
            .flat_map(|r| &r.curves)
            .filter(|c| c.order == order)
            .map(|c| c.mean_r2)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

struct Cell {
    run: AblationRun,
    forest_text: String,
    spectrum_text: String,
    seconds: (f64, f64),
}

pub(crate) fn run(ctx: &Context) -> Result<(AblationSummary, Outputs)> {
    let config = ctx.config;
    let f = &config.forest;
    let params = ForestParams {
        bootstrap: f.bootstrap,
        ..ForestParams::new(f.trees, f.max_depth)
    };
    let train_size = config.data.train_size[0];
    let csv_data = match config.data.csv {
        Some(_) => Some(config.load_csv()?),
        None => None,
    };
    let cells = ctx.par_map(config.seeds.triples(), |seeds| {
        let clock = std::time::Instant::now();
        let (train, holdout) = match &csv_data {
            Some(data) => split_rows(data, train_size, seeds.data)?,
            None => {
                let target = generate_target(&SyntheticSpec {
                    mode: config.data.mode.expect("resolved"),
                    n: config.data.n[0],
                    seed: seeds.target,
                })?;
                cube_complement_split(&target, train_size, seeds.data)?
            }
        };
        let forest = fit_forest(&train, &params, seeds.train)?;
        let forest_r2 = r2_score(&forest.evaluate_many(holdout.inputs()), holdout.targets())?;
        let spectrum = forest_to_fourier(&forest);
        let fit_seconds = clock.elapsed().as_secs_f64();
        let mut curves = Vec::new();
        for &tie_seed in &config.ablation.tie_seeds {
            for order in ORDERS {
                let steps = ablate(&spectrum, order, &holdout, tie_seed)?;
                curves.push(AblationCurve {
                    tie_seed,
                    order,
                    mean_r2: mean_r2(&steps),
                    steps,
                });
            }
        }
        Ok(Cell {
            run: AblationRun {
                run_id: seeds.tag(),
                seeds: *seeds,
                forest_r2,
                support_size: spectrum.len(),
                curves,
            },
            forest_text: forest.to_text(),
            spectrum_text: spectrum.to_text(),
            seconds: (fit_seconds, clock.elapsed().as_secs_f64() - fit_seconds),
        })
    })?;

    let mut steps_table = Table::new("ablation.csv", &["tie_seed", "order", "step", "support_size", "r2"]);
    let mut summary_table = Table::new(
        "summary.csv",
        &["tie_seed", "order", "mean_r2", "forest_r2", "support_size"],
    );
    let mut aggregate = Table::new("aggregate.csv", &["order", "mean_r2_mean", "mean_r2_std", "curves"]);
    let mut outputs = Outputs::default();
    let mut texts = Vec::new();
    let mut runs = Vec::new();
    for cell in cells {
        let r = cell.run;
        let key = ctx.key(&r.run_id, &r.seeds);
        for c in &r.curves {
            for s in &c.steps {
                steps_table.push(
                    key.clone(),
                    vec![
                        c.tie_seed.to_string(),
                        c.order.name().into(),
                        s.step.to_string(),
                        s.support_size.to_string(),
                        real(s.r2),
                    ],
                );
            }
            summary_table.push(
                key.clone(),
                vec![
                    c.tie_seed.to_string(),
                    c.order.name().into(),
                    real(c.mean_r2),
                    real(r.forest_r2),
                    r.support_size.to_string(),
                ],
            );
        }
        texts.push(Output::Text {
            path: format!("forests/{}.txt", r.run_id),
            contents: cell.forest_text,
        });
        texts.push(Output::Text {
            path: format!("spectra/{}.txt", r.run_id),
            contents: cell.spectrum_text,
        });
        outputs.timings.insert(
            r.run_id.clone(),
            json!({ "fit_seconds": cell.seconds.0, "ablation_seconds": cell.seconds.1 }),
        );
        runs.push(r);
    }
    for order in ORDERS {
        let vals: Vec<f64> = runs
            .iter()
            .flat_map(|r| &r.curves)
            .filter(|c| c.order == order)
            .map(|c| c.mean_r2)
            .collect();
        let (m, s) = mean_std(&vals);
        aggregate.push(
            ctx.aggregate_key(),
            vec![order.name().into(), real(m), real(s), vals.len().to_string()],
        );
    }
    outputs
        .files
        .extend([steps_table, summary_table, aggregate].map(Output::Table));
    outputs.files.extend(texts);
    Ok((AblationSummary { runs }, outputs))
}

/// Random `train` rows for fitting; every other row is held out.
fn split_rows(data: &Dataset, train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = DatasetSplit::shuffled_halves(data.len(), train, seed)?;
    let holdout: Vec<usize> = split.validation.iter().chain(&split.test).copied().collect();
    Ok((data.subset(&split.train), data.subset(&holdout)))
}
