//! Monte Carlo collision study of random hashing matrices.

use std::collections::BTreeSet;

use serde_json::json;

use super::{real, Context, Output, Outputs, SeedTriple, Table};
use crate::error::Result;
use crate::fourier::Frequency;
use crate::gf2::{buckets_for_collision_rate, collision_rate_study, CollisionReport};
use crate::rng;
use crate::synth::random_point;

#[derive(Clone, Debug)]
pub struct HashStudyCell {
    pub seeds: SeedTriple,
    pub frequencies: Vec<Frequency>,
    /// `b` was chosen by the `ε` rule rather than listed in the grid.
    pub epsilon_rule: bool,
    pub report: CollisionReport,
}

#[derive(Clone, Debug)]
pub struct HashStudySummary {
    pub cells: Vec<HashStudyCell>,
}

impl HashStudySummary {
    pub fn cell(&self, k: usize, b: usize) -> Option<&HashStudyCell> {
        self.cells.iter().find(|c| c.report.k == k && c.report.b == b)
    }
}

/// `k` distinct frequencies drawn uniformly from `{0,1}^n`.
pub fn random_frequencies(n: usize, k: usize, seed: u64) -> Vec<Frequency> {
    let mut r = rng::stream(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let f = random_point(n, &mut r);
        if seen.insert(f.clone()) {
            out.push(f);
        }
    }
    out
}

pub(crate) fn run(ctx: &Context) -> Result<(HashStudySummary, Outputs)> {
    let h = &ctx.config.hash_study;
    let mut tasks = Vec::new();
    for seeds in ctx.config.seeds.triples() {
        for &k in &h.k {
            for &b in &h.b {
                tasks.push((seeds, k, b, false));
            }
            let b = buckets_for_collision_rate(k, h.epsilon).min(h.n);
            if !h.b.contains(&b) {
                tasks.push((seeds, k, b, true));
            }
        }
    }
    let cells = ctx.par_map(tasks, |&(seeds, k, b, epsilon_rule)| {
        let clock = std::time::Instant::now();
        let frequencies = random_frequencies(h.n, k, rng::derive(seeds.target, &format!("k{k}")));
        let mut r = rng::stream(rng::derive(seeds.data, &format!("k{k}_b{b}")));
        let report = collision_rate_study(&frequencies, b, h.rounds, &mut r)?;
        Ok((
            HashStudyCell {
                seeds,
                frequencies,
                epsilon_rule,
                report,
            },
            clock.elapsed().as_secs_f64(),
        ))
    })?;

    let mut collisions = Table::new(
        "collisions.csv",
        &[
            "k",
            "b",
            "rounds",
            "epsilon_rule",
            "mean_collisions",
            "stderr",
            "expected",
            "z_expected",
            "expected_ordered_pairs",
            "z_ordered_pairs",
            "union_bound",
            "max_rate",
        ],
    );
    let mut per_frequency = Table::new("per_frequency.csv", &["k", "b", "frequency", "rate", "union_bound"]);
    let mut outputs = Outputs::default();
    let mut summary = HashStudySummary { cells: vec![] };
    for (cell, seconds) in cells {
        let r = &cell.report;
        let run_id = format!("{}_k{}_b{}", cell.seeds.tag(), r.k, r.b);
        let key = ctx.key(&run_id, &cell.seeds);
        let z = |expected: f64| (r.mean_collisions - expected) / r.collisions_stderr;
        collisions.push(
            key.clone(),
            vec![
                r.k.to_string(),
                r.b.to_string(),
                r.trials.to_string(),
                cell.epsilon_rule.to_string(),
                real(r.mean_collisions),
                real(r.collisions_stderr),
                real(r.expected),
                real(z(r.expected)),
                real(r.expected_ordered_pairs),
                real(z(r.expected_ordered_pairs)),
                real(r.union_bound),
                real(r.max_rate()),
            ],
        );
        for (f, rate) in cell.frequencies.iter().zip(&r.per_frequency_rates) {
            per_frequency.push(
                key.clone(),
                vec![
                    r.k.to_string(),
                    r.b.to_string(),
                    f.to_string(),
                    real(*rate),
                    real(r.union_bound),
                ],
            );
        }
        outputs.timings.insert(run_id, json!({ "seconds": seconds }));
        summary.cells.push(cell);
    }
    outputs.files.extend([collisions, per_frequency].map(Output::Table));
    Ok((summary, outputs))
}
