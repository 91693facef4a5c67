//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --test acceptance` runs all of them; trailing numbers
//! (`cargo test --test acceptance -- 5 8`) select a subset.

use std::fs;
use std::path::Path;
use std::time::Instant;

use hashwh::experiments::{self, ExperimentKind, MethodSpec, RunConfig, RunOptions, SeedGrid, Summary};
use hashwh::fourier::{cube_points, fwht, DenseFunction, Spectrum};
use hashwh::gf2::{bucket_spectrum, buckets_for_collision_rate, subsample, HashingMatrix};
use hashwh::mlp::{bits_to_matrix, MlpModel};
use hashwh::regularizers::{fullwh_penalty, hashwh_penalty, hashwh_value};
use hashwh::rng::stream;
use hashwh::synth::SyntheticMode;
use hashwh::tree::{forest_to_fourier, random_tree, tree_to_fourier, AblationOrder, Forest};
use hashwh::{BitVector, CubeFunction};
use ndarray::Array1;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn random_values(n: usize, r: &mut impl Rng) -> Vec<f64> {
    (0..1usize << n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Orthonormal Hadamard matrix applied row by row.
fn naive_transform(values: &[f64]) -> Vec<f64> {
    let size = values.len();
    let scale = (size as f64).sqrt().recip();
    (0..size)
        .map(|f| {
            values
                .iter()
                .enumerate()
                .map(|(x, v)| if (f & x).count_ones() % 2 == 0 { *v } else { -*v })
                .sum::<f64>()
                * scale
        })
        .collect()
}

fn transform_oracle() -> Verdict {
    let mut r = stream(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = 1 + i % 12;
        let values = random_values(n, &mut r);
        let fast = fwht(&DenseFunction::new(n, values.clone()).unwrap()).unwrap();
        for (a, b) in fast.coefficients().iter().zip(naive_transform(&values)) {
            worst = worst.max((a - b).abs());
        }
    }
    let g = DenseFunction::new(12, random_values(12, &mut r)).unwrap();
    let clock = Instant::now();
    fwht(&g).unwrap();
    let seconds = clock.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-9 && seconds < 1.0,
        format!("max abs error {worst:.2e} (tol 1e-9), n=12 transform {seconds:.4}s (limit 1s)"),
    )
}

fn parseval() -> Verdict {
    let mut r = stream(2);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = 1 + i % 12;
        let g = DenseFunction::new(n, random_values(n, &mut r)).unwrap();
        let a = g.squared_norm();
        let b = fwht(&g).unwrap().squared_norm();
        worst = worst.max((a - b).abs() / a);
    }
    verdict(worst <= 1e-9, format!("max relative gap {worst:.2e} (tol 1e-9)"))
}

fn hash_sum_identity() -> Verdict {
    let mut r = stream(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=10);
        let b = r.random_range(1..=n.min(6));
        let g = DenseFunction::new(n, random_values(n, &mut r)).unwrap();
        let sigma = HashingMatrix::sample(n, b, &mut r).unwrap();
        let lhs = bucket_spectrum(&fwht(&g).unwrap(), &sigma).unwrap();
        let rhs = fwht(&subsample(&g, &sigma).unwrap()).unwrap();
        for (a, b) in lhs.coefficients().iter().zip(rhs.coefficients()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-9, format!("max abs error {worst:.2e} (tol 1e-9)"))
}

fn fullwh_equivalence() -> Verdict {
    let mut r = stream(4);
    let mut worst = 0.0f64;
    for n in 1..=8 {
        for _ in 0..10 {
            let sigma = loop {
                let s = HashingMatrix::sample(n, n, &mut r).unwrap();
                if s.is_invertible() {
                    break s;
                }
            };
            let g = DenseFunction::new(n, random_values(n, &mut r)).unwrap();
            let hashed = hashwh_penalty(&g, &sigma).unwrap().value;
            let full = fullwh_penalty(g.values()).unwrap().value;
            let expected = ((1usize << n) as f64).sqrt() * full;
            worst = worst.max((hashed - expected).abs() / expected);
        }
    }
    verdict(worst <= 1e-9, format!("max relative gap {worst:.2e} (tol 1e-9)"))
}

fn collision_statistics(out: &Path) -> Verdict {
    let mut config = RunConfig::new(ExperimentKind::HashStudy);
    config.seeds = SeedGrid::uniform(5);
    let report = experiments::run(config, &RunOptions { out_dir: out.join("hash"), jobs: jobs() }).unwrap();
    let Summary::HashStudy(summary) = report.summary else { unreachable!() };
    let h = &report.manifest.config.hash_study;
    let mut within = true;
    let mut worst_z = 0.0f64;
    let mut notes = Vec::new();
    for &k in &h.k {
        for &b in &h.b {
            let r = &summary.cell(k, b).unwrap().report;
            let z = (r.mean_collisions - r.expected) / r.collisions_stderr;
            worst_z = worst_z.max(z.abs());
            within &= z.abs() <= 3.0;
            notes.push(format!("(k={k},b={b}) z={z:.1}"));
        }
    }
    let mut rates_ok = true;
    let mut worst_rate = 0.0f64;
    for &k in &h.k {
        let b = buckets_for_collision_rate(k, h.epsilon);
        let r = &summary.cell(k, b).unwrap().report;
        for &p in &r.per_frequency_rates {
            let se = (p * (1.0 - p) / r.trials as f64).sqrt();
            rates_ok &= p <= 2.0 * h.epsilon + 3.0 * se;
            worst_rate = worst_rate.max(p);
        }
    }
    verdict(
        within && rates_ok,
        format!(
            "mean collisions vs (k-1)^2/2^b: max |z| {worst_z:.1} (limit 3) [{}]; \
             per-frequency rates at the epsilon rule: max {worst_rate:.3} (limit {:.1} + 3 se) {}",
            notes.join(" "),
            2.0 * h.epsilon,
            if rates_ok { "ok" } else { "exceeded" }
        ),
    )
}

/// MSE on a batch plus `λ‖H_b f(σ probes)‖₁` with `σ` fixed, and the
/// pattern of signs the loss is piecewise smooth in: every hidden unit's
/// activation on batch and probes, and every hashed coefficient.
fn total_loss(
    model: &MlpModel,
    x: &ndarray::Array2<f64>,
    y: &Array1<f64>,
    probes: &ndarray::Array2<f64>,
    lambda: f64,
) -> (f64, Vec<bool>) {
    let mse = model.mse(x.view(), y.view()).unwrap();
    let cache = model.forward_cached(probes.view()).unwrap();
    let out = cache.output.as_slice().unwrap();
    let penalty = hashwh_value(out).unwrap().value;
    let mut t = out.to_vec();
    hashwh::fourier::wht_in_place(&mut t);
    let mut pattern: Vec<bool> = t.iter().map(|v| *v > 0.0).collect();
    for c in [model.forward_cached(x.view()).unwrap(), cache] {
        for z in c.pre_activations() {
            pattern.extend(z.iter().map(|v| *v > 0.0));
        }
    }
    (mse + lambda * penalty, pattern)
}

fn gradient_correctness() -> Verdict {
    let n = 8;
    let lambda = 0.05;
    let mut model = MlpModel::seeded(&[n, 16, 16, 8, 1], 6).unwrap();
    let mut r = stream(7);
    // move biases off zero so probes do not start on activation kinks
    for i in 0..model.parameter_count() {
        model.set_parameter(i, model.parameter(i) + r.random_range(-0.1..0.1));
    }
    let points: Vec<BitVector> = (0..48).map(|_| hashwh::synth::random_point(n, &mut r)).collect();
    let x = bits_to_matrix(&points, n);
    let y = Array1::from_iter((0..points.len()).map(|_| r.random_range(-1.0..1.0)));
    let sigma = HashingMatrix::sample(n, 4, &mut r).unwrap();
    let probes = bits_to_matrix(&sigma.probe_points(), n);

    let (_, mut grads) = model.mse_gradients(x.view(), y.view()).unwrap();
    let cache = model.forward_cached(probes.view()).unwrap();
    let pen = hashwh_value(cache.output.as_slice().unwrap()).unwrap();
    grads.add_scaled(lambda, &model.backward(&cache, Array1::from(pen.grad_wrt_outputs).view()));
    let analytic = grads.flatten();
    let (_, signs) = total_loss(&model, &x, &y, &probes, lambda);

    let h = 1e-5;
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    while checked < 200 {
        let idx = r.random_range(0..model.parameter_count());
        let orig = model.parameter(idx);
        model.set_parameter(idx, orig + h);
        let (plus, s_plus) = total_loss(&model, &x, &y, &probes, lambda);
        model.set_parameter(idx, orig - h);
        let (minus, s_minus) = total_loss(&model, &x, &y, &probes, lambda);
        model.set_parameter(idx, orig);
        if s_plus != signs || s_minus != signs {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic[idx].abs().max(numeric.abs());
        let err = if scale < 1e-7 {
            (analytic[idx] - numeric).abs()
        } else {
            (analytic[idx] - numeric).abs() / scale
        };
        worst = worst.max(err);
        checked += 1;
    }
    verdict(
        worst < 1e-4,
        format!("200 parameters, max relative error {worst:.2e} (limit 1e-4), {skipped} probes crossing a sign boundary skipped"),
    )
}

fn tree_oracle() -> Verdict {
    let mut r = stream(8);
    let mut worst = 0.0f64;
    let mut bounds = true;
    let compare = |g: &hashwh::SparseFourierFunction, h: &dyn Fn(&BitVector) -> f64, n: usize| -> f64 {
        let values: Vec<f64> = cube_points(n).unwrap().iter().map(h).collect();
        let brute = fwht(&DenseFunction::new(n, values).unwrap()).unwrap();
        let exact: Spectrum = g.to_spectrum().unwrap();
        brute
            .coefficients()
            .iter()
            .zip(exact.coefficients())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    for i in 0..50 {
        let n = r.random_range(1..=10);
        let depth = r.random_range(0..=5);
        if i % 2 == 0 {
            let t = random_tree(n, depth, 0.2, &mut r);
            let g = tree_to_fourier(&t);
            worst = worst.max(compare(&g, &|x| t.evaluate(x), n));
            bounds &= g.max_degree() <= t.depth() && g.len() <= 4usize.pow(t.depth() as u32);
        } else {
            let trees = r.random_range(1..=20);
            let forest = Forest::new((0..trees).map(|_| random_tree(n, depth, 0.2, &mut r)).collect()).unwrap();
            let g = forest_to_fourier(&forest);
            worst = worst.max(compare(&g, &|x| forest.evaluate(x), n));
            let d = forest.max_depth();
            bounds &= g.max_degree() <= d && g.len() <= trees * 4usize.pow(d as u32);
        }
    }
    verdict(
        worst <= 1e-10 && bounds,
        format!("max abs error {worst:.2e} (tol 1e-10), degree and support bounds {}", if bounds { "hold" } else { "violated" }),
    )
}

/// Largest relative rise of a curve after its minimum.
fn rise_after_minimum(curve: &[(usize, f64)]) -> (usize, f64) {
    let (argmin, min) = curve
        .iter()
        .copied()
        .fold((0, f64::INFINITY), |acc, (e, v)| if v < acc.1 { (e, v) } else { acc });
    let later = curve.iter().filter(|(e, _)| *e > argmin).map(|(_, v)| *v).fold(min, f64::max);
    (argmin, later / min - 1.0)
}

fn spectral_bias(out: &Path) -> Verdict {
    let mut config = RunConfig::new(ExperimentKind::SpectrumEvolution);
    config.data.mode = Some(SyntheticMode::DegreeLadder);
    config.data.n = vec![10];
    config.data.train_size = vec![200];
    config.train.max_epochs = 300;
    config.train.early_stopping = Some(false);
    config.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[8], &[])];
    config.seeds = SeedGrid {
        target: vec![0, 1, 2],
        data: vec![0, 1, 2],
        train: vec![0, 1, 2],
        zip: false,
    };
    let report = experiments::run(config, &RunOptions { out_dir: out.join("evolution"), jobs: jobs() }).unwrap();
    let Summary::Evolution(s) = report.summary else { unreachable!() };
    let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;

    let amp1 = mean(s.runs_of("standard").map(|r| r.support_amplitude(r.best_epoch, 1).unwrap()).collect());
    let amp5 = mean(s.runs_of("standard").map(|r| r.support_amplitude(r.best_epoch, 5).unwrap()).collect());
    let a = amp5 < amp1;

    let sae_std = mean(s.runs_of("standard").map(|r| r.best_sae("all").unwrap()).collect());
    let sae_hash = mean(s.runs_of("hashwh_b8").map(|r| r.best_sae("all").unwrap()).collect());
    let b = sae_hash < sae_std;

    let (min_std, rise_std) = rise_after_minimum(&s.mean_curve("standard", "all"));
    let (min_hash, rise_hash) = rise_after_minimum(&s.mean_curve("hashwh_b8", "all"));
    let c = rise_std >= 0.05 && rise_hash < 0.05;

    verdict(
        a && b && c,
        format!(
            "(a) {} degree-1 amplitude {amp1:.3} vs degree-5 {amp5:.3}; \
             (b) {} SAE at best epoch hashwh_b8 {sae_hash:.4} vs standard {sae_std:.4}; \
             (c) {} mean SAE rise after minimum: standard {:.2}% (min at epoch {min_std}, need >= 5%), \
             hashwh_b8 {:.2}% (min at epoch {min_hash}, need < 5%)",
            ok(a),
            ok(b),
            ok(c),
            100.0 * rise_std,
            100.0 * rise_hash
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn high_dimensional(out: &Path) -> Verdict {
    let mut config = RunConfig::new(ExperimentKind::SynthLarge);
    config.data.mode = Some(SyntheticMode::Random25);
    config.data.n = vec![25];
    config.data.c = vec![2];
    let lambdas = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    config.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[7, 10, 13], &lambdas)];
    config.seeds = SeedGrid {
        target: vec![0, 1, 2],
        data: vec![0, 1, 2],
        train: vec![0, 1, 2],
        zip: true,
    };
    let clock = Instant::now();
    let report = experiments::run(config, &RunOptions { out_dir: out.join("synth_large"), jobs: jobs() }).unwrap();
    let minutes = clock.elapsed().as_secs_f64() / 60.0;
    let Summary::Scores(s) = report.summary else { unreachable!() };
    let r2 = |m: &str| s.mean_r2(m, &[("n", "25"), ("c", "2")]).unwrap();
    let (standard, b7, b10, b13) = (r2("standard"), r2("hashwh_b7"), r2("hashwh_b10"), r2("hashwh_b13"));
    let first = b10 > standard;
    let second = b13 >= b7;
    verdict(
        first && second && minutes < 20.0,
        format!(
            "mean test R2 standard {standard:.4}, hashwh b7 {b7:.4}, b10 {b10:.4}, b13 {b13:.4}; \
             b10 > standard {}; b13 >= b7 {}; {minutes:.1} min (limit 20)",
            ok(first),
            ok(second)
        ),
    )
}

fn ablation(out: &Path) -> Verdict {
    let mut config = RunConfig::new(ExperimentKind::Ablation);
    config.data.mode = Some(SyntheticMode::SparseInteractions);
    config.data.n = vec![13];
    config.data.train_size = vec![4096];
    config.seeds = SeedGrid::uniform(0);
    let report = experiments::run(config, &RunOptions { out_dir: out.join("ablation"), jobs: jobs() }).unwrap();
    let Summary::Ablation(s) = report.summary else { unreachable!() };
    let forest_r2 = s.runs[0].forest_r2;
    let amp = s.mean_r2(AblationOrder::AmplitudeAsc);
    let deg = s.mean_r2(AblationOrder::DegreeDesc);
    let fit = forest_r2 > 0.9;
    let order = amp > deg;
    verdict(
        fit && order,
        format!(
            "forest hold-out R2 {forest_r2:.4} (need > 0.9) {}; mean curve R2 amplitude-first {amp:.4} vs degree-first {deg:.4} {}",
            ok(fit),
            ok(order)
        ),
    )
}

/// Relative path and contents of every CSV and text output under `dir`.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "txt")) {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism(out: &Path) -> Verdict {
    let data_dir = out.join("determinism-data");
    fs::create_dir_all(&data_dir).unwrap();
    let target = hashwh::synth::generate_target(&hashwh::synth::SyntheticSpec {
        mode: SyntheticMode::Random25,
        n: 8,
        seed: 3,
    })
    .unwrap();
    let csv = data_dir.join("data.csv");
    hashwh::synth::sample_dataset(&target, 300, 3).unwrap().save_csv(&csv).unwrap();

    let mut configs = Vec::new();
    let mut evo = RunConfig::new(ExperimentKind::SpectrumEvolution);
    evo.data.n = vec![6];
    evo.data.train_size = vec![30];
    evo.train.max_epochs = 5;
    evo.methods = vec![MethodSpec::standard(), MethodSpec::fullwh(&[0.01]), MethodSpec::hashwh(&[3], &[1e-3, 1e-2])];
    evo.seeds.train = vec![0, 1];
    evo.snapshot.dump_threshold = Some(1e-3);
    configs.push(evo);
    let mut large = RunConfig::new(ExperimentKind::SynthLarge);
    large.data.n = vec![8];
    large.train.max_epochs = 5;
    large.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[4], &[1e-3])];
    large.seeds.data = vec![0, 1];
    configs.push(large);
    let mut real = RunConfig::new(ExperimentKind::RealCsv);
    real.data.csv = Some(csv);
    real.data.train_size = vec![50];
    real.train.max_epochs = 5;
    real.methods = vec![
        MethodSpec::standard(),
        MethodSpec {
            tune_b: true,
            ..MethodSpec::hashwh(&[3, 4], &[1e-3])
        },
    ];
    configs.push(real);
    let mut abl = RunConfig::new(ExperimentKind::Ablation);
    abl.data.n = vec![8];
    abl.data.train_size = vec![128];
    abl.forest.trees = 5;
    configs.push(abl);
    let mut hash = RunConfig::new(ExperimentKind::HashStudy);
    hash.hash_study.rounds = 500;
    configs.push(hash);

    let mut mismatches = Vec::new();
    let mut compared = 0;
    for (i, config) in configs.into_iter().enumerate() {
        let name = config.experiment.unwrap().name();
        let first = out.join(format!("determinism-{i}-a"));
        let second = out.join(format!("determinism-{i}-b"));
        let report = experiments::run(config, &RunOptions { out_dir: first.clone(), jobs: jobs().max(2) }).unwrap();
        experiments::replay(report.out_dir.join("manifest.json"), &RunOptions { out_dir: second.clone(), jobs: 1 }).unwrap();
        let (a, b) = (outputs(&first), outputs(&second));
        compared += a.len();
        if a != b {
            mismatches.push(name);
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{compared} output files across 5 experiment kinds replayed; mismatches: {mismatches:?}"),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        (1, "transform oracle", Box::new(transform_oracle)),
        (2, "Parseval", Box::new(parseval)),
        (3, "hash-sum identity", Box::new(hash_sum_identity)),
        (4, "FullWH equivalence", Box::new(fullwh_equivalence)),
        (5, "collision statistics", Box::new(|| collision_statistics(out))),
        (6, "gradient correctness", Box::new(gradient_correctness)),
        (7, "tree oracle", Box::new(tree_oracle)),
        (8, "desk-scale spectral bias", Box::new(|| spectral_bias(out))),
        (9, "high-dimensional directional check", Box::new(|| high_dimensional(out))),
        (10, "ablation", Box::new(|| ablation(out))),
        (11, "determinism", Box::new(|| determinism(out))),
    ];
    let mut failures = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let clock = Instant::now();
        let v = check();
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {name}: {} ({:.1}s) {}",
            if v.pass { "PASS" } else { "FAIL" },
            clock.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
