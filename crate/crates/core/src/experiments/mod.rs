//! Experiment configs, run manifests and the experiment runners.
//!
//! A run is described by a TOML [`RunConfig`]. Running it writes CSV files
//! and a `manifest.json` into the output directory; the manifest holds the
//! resolved config and is enough to re-execute the run with identical CSV
//! output (see [`replay`]). Wall-clock measurements never enter a CSV: they go
//! to `timings.json`.

mod ablation;
mod evolution;
mod hash_study;
mod scores;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mlp::{self, EpochRecord, MlpModel, TrainConfig, TrainOutcome, TrainSeeds};
use crate::regularizers::{Regularizer, FULLWH_MAX_DIMENSION};
use crate::synth::{format_real, Dataset, DatasetSchema, SyntheticMode};

pub use ablation::{AblationCurve, AblationRun, AblationSummary};
pub use evolution::{EvolutionRun, EvolutionSummary};
pub use hash_study::{random_frequencies, HashStudyCell, HashStudySummary};
pub use scores::{ScoreRun, ScoreSummary};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FORMAT: &str = "hashwh-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SpectrumEvolution,
    SynthLarge,
    RealCsv,
    Ablation,
    HashStudy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SpectrumEvolution => "spectrum_evolution",
            ExperimentKind::SynthLarge => "synth_large",
            ExperimentKind::RealCsv => "real_csv",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::HashStudy => "hash_study",
        }
    }
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match Either::deserialize(d)? {
        Either::One(x) => vec![x],
        Either::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden widths; omitted means the default for the experiment
    /// (`[100, 100, 10]`, `[2n, 2n, n]` or `[10n, 10n, n]`).
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default = "default_slope")]
    pub negative_slope: f64,
}

fn default_slope() -> f64 {
    mlp::DEFAULT_NEGATIVE_SLOPE
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden: None,
            negative_slope: default_slope(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Defaults to off for spectrum evolution and on elsewhere.
    #[serde(default)]
    pub early_stopping: Option<bool>,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
}

fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    10
}
fn default_lr() -> f64 {
    mlp::DEFAULT_LEARNING_RATE
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            early_stopping: None,
            patience: default_patience(),
            learning_rate: default_lr(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerName {
    None,
    FullWh,
    HashWh,
}

/// One `[[methods]]` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub regularizer: RegularizerName,
    /// Hash sizes; each is reported as its own method unless `tune_b`.
    #[serde(default, deserialize_with = "one_or_many")]
    pub b: Vec<usize>,
    /// Candidate multipliers, selected on validation loss.
    #[serde(default, deserialize_with = "one_or_many")]
    pub lambda: Vec<f64>,
    /// Treat `b` as a hyperparameter selected on validation loss.
    #[serde(default)]
    pub tune_b: bool,
}

pub const HASHWH_LAMBDAS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];
pub const FULLWH_LAMBDAS: [f64; 3] = [0.01, 0.1, 1.0];

impl MethodSpec {
    pub fn standard() -> Self {
        MethodSpec {
            regularizer: RegularizerName::None,
            b: vec![],
            lambda: vec![],
            tune_b: false,
        }
    }

    pub fn hashwh(b: &[usize], lambda: &[f64]) -> Self {
        MethodSpec {
            regularizer: RegularizerName::HashWh,
            b: b.to_vec(),
            lambda: lambda.to_vec(),
            tune_b: false,
        }
    }

    pub fn fullwh(lambda: &[f64]) -> Self {
        MethodSpec {
            regularizer: RegularizerName::FullWh,
            b: vec![],
            lambda: lambda.to_vec(),
            tune_b: false,
        }
    }
}

/// A reported method with its hyperparameter candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct Method {
    pub name: String,
    pub candidates: Vec<(Regularizer, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub mode: Option<SyntheticMode>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub n: Vec<usize>,
    /// Training size multipliers `c` (train size `c·25n`).
    #[serde(default, deserialize_with = "one_or_many")]
    pub c: Vec<usize>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub train_size: Vec<usize>,
    /// Validation and test size as a multiple of the train size.
    #[serde(default)]
    pub multiple: Option<usize>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// TOML schema file for `csv`; omitted means binary features and a
    /// target column `y`.
    #[serde(default)]
    pub schema: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedGrid {
    #[serde(default = "zero_seed", deserialize_with = "one_or_many")]
    pub target: Vec<u64>,
    #[serde(default = "zero_seed", deserialize_with = "one_or_many")]
    pub data: Vec<u64>,
    #[serde(default = "zero_seed", deserialize_with = "one_or_many")]
    pub train: Vec<u64>,
    /// Pair the lists element-wise instead of taking their product.
    #[serde(default)]
    pub zip: bool,
}

fn zero_seed() -> Vec<u64> {
    vec![0]
}

impl Default for SeedGrid {
    fn default() -> Self {
        SeedGrid {
            target: zero_seed(),
            data: zero_seed(),
            train: zero_seed(),
            zip: false,
        }
    }
}

/// Seeds of the target draw, the data draw and the training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedTriple {
    pub target: u64,
    pub data: u64,
    pub train: u64,
}

impl SeedTriple {
    pub fn tag(&self) -> String {
        format!("t{}_d{}_r{}", self.target, self.data, self.train)
    }
}

impl SeedGrid {
    pub fn uniform(seed: u64) -> Self {
        SeedGrid {
            target: vec![seed],
            data: vec![seed],
            train: vec![seed],
            zip: false,
        }
    }

    pub fn triples(&self) -> Vec<SeedTriple> {
        if self.zip {
            return self
                .target
                .iter()
                .zip(&self.data)
                .zip(&self.train)
                .map(|((&target, &data), &train)| SeedTriple { target, data, train })
                .collect();
        }
        let mut out = Vec::new();
        for &target in &self.target {
            for &data in &self.data {
                for &train in &self.train {
                    out.push(SeedTriple { target, data, train });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSettings {
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
}

fn default_trees() -> usize {
    100
}
fn default_depth() -> usize {
    7
}
fn default_true() -> bool {
    true
}

impl Default for ForestSettings {
    fn default() -> Self {
        ForestSettings {
            trees: default_trees(),
            max_depth: default_depth(),
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    #[serde(default = "default_tie_seeds", deserialize_with = "one_or_many")]
    pub tie_seeds: Vec<u64>,
}

fn default_tie_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            tie_seeds: default_tie_seeds(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashStudySettings {
    #[serde(default = "default_ks", deserialize_with = "one_or_many")]
    pub k: Vec<usize>,
    #[serde(default = "default_bs", deserialize_with = "one_or_many")]
    pub b: Vec<usize>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Ambient dimension of the tracked frequencies.
    #[serde(default = "default_study_n")]
    pub n: usize,
}

fn default_ks() -> Vec<usize> {
    vec![5, 17, 25]
}
fn default_bs() -> Vec<usize> {
    vec![5, 7, 10]
}
fn default_rounds() -> usize {
    100_000
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_study_n() -> usize {
    20
}

impl Default for HashStudySettings {
    fn default() -> Self {
        HashStudySettings {
            k: default_ks(),
            b: default_bs(),
            rounds: default_rounds(),
            epsilon: default_epsilon(),
            n: default_study_n(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSettings {
    /// Dump each run's best-epoch spectrum, keeping `|ĝ(f)| > threshold`.
    #[serde(default)]
    pub dump_threshold: Option<f64>,
}

/// Everything needed to run an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    /// Output directory; the `--out-dir` flag takes precedence.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub seeds: SeedGrid,
    #[serde(default)]
    pub forest: ForestSettings,
    #[serde(default)]
    pub ablation: AblationSettings,
    #[serde(default)]
    pub hash_study: HashStudySettings,
    #[serde(default)]
    pub snapshot: SnapshotSettings,
}

impl RunConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        RunConfig {
            experiment: Some(kind),
            out_dir: None,
            model: ModelSpec::default(),
            train: TrainSettings::default(),
            methods: vec![],
            data: DataSpec::default(),
            seeds: SeedGrid::default(),
            forest: ForestSettings::default(),
            ablation: AblationSettings::default(),
            hash_study: HashStudySettings::default(),
            snapshot: SnapshotSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Reads a config file; relative data paths are taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.csv, &mut config.data.schema, &mut config.out_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment
            .ok_or_else(|| Error::Config(vec!["`experiment` is not set".into()]))
    }

    /// Fills every default that does not depend on loaded data.
    pub fn resolve(mut self) -> Result<Self> {
        let kind = self.kind()?;
        let d = &mut self.data;
        match kind {
            ExperimentKind::SpectrumEvolution => {
                d.mode.get_or_insert(SyntheticMode::DegreeLadder);
                if d.n.is_empty() {
                    d.n = vec![10];
                }
                if d.train_size.is_empty() {
                    d.train_size = vec![200];
                }
                self.train.early_stopping.get_or_insert(false);
                if self.methods.is_empty() {
                    self.methods = vec![
                        MethodSpec::standard(),
                        MethodSpec::fullwh(&[]),
                        MethodSpec::hashwh(&[5, 7, 8], &[]),
                    ];
                }
            }
            ExperimentKind::SynthLarge => {
                d.mode.get_or_insert(SyntheticMode::Random25);
                if d.n.is_empty() {
                    d.n = vec![25];
                }
                if d.c.is_empty() {
                    d.c = vec![1];
                }
                d.multiple.get_or_insert(5);
                if self.methods.is_empty() {
                    self.methods = vec![MethodSpec::standard(), MethodSpec::hashwh(&[7, 10, 13], &[])];
                }
            }
            ExperimentKind::RealCsv => {
                if self.methods.is_empty() {
                    self.methods = vec![
                        MethodSpec::standard(),
                        MethodSpec {
                            tune_b: true,
                            ..MethodSpec::hashwh(&[7, 10, 13], &[])
                        },
                    ];
                }
            }
            ExperimentKind::Ablation => {
                if d.csv.is_none() {
                    d.mode.get_or_insert(SyntheticMode::SparseInteractions);
                    if d.n.is_empty() {
                        d.n = vec![13];
                    }
                }
            }
            ExperimentKind::HashStudy => {}
        }
        self.train.early_stopping.get_or_insert(true);
        for m in &mut self.methods {
            if m.lambda.is_empty() {
                m.lambda = match m.regularizer {
                    RegularizerName::None => vec![0.0],
                    RegularizerName::FullWh => FULLWH_LAMBDAS.to_vec(),
                    RegularizerName::HashWh => HASHWH_LAMBDAS.to_vec(),
                };
            }
        }
        Ok(self)
    }

    /// Every problem with the config, checked before anything runs.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let kind = match self.kind() {
            Ok(k) => k,
            Err(_) => return Err(Error::Config(vec!["`experiment` is not set".into()])),
        };
        let t = &self.train;
        if t.batch_size == 0 {
            errors.push("train.batch_size must be positive".into());
        }
        if t.max_epochs == 0 {
            errors.push("train.max_epochs must be positive".into());
        }
        if t.patience == 0 {
            errors.push("train.patience must be at least 1".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            errors.push("train.learning_rate must be positive".into());
        }
        if !(self.model.negative_slope.is_finite()) {
            errors.push("model.negative_slope must be finite".into());
        }
        if self.model.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            errors.push("model.hidden widths must be positive".into());
        }
        let s = &self.seeds;
        for (name, list) in [("target", &s.target), ("data", &s.data), ("train", &s.train)] {
            if list.is_empty() {
                errors.push(format!("seeds.{name} must list at least one seed"));
            }
        }
        if s.zip && !(s.target.len() == s.data.len() && s.data.len() == s.train.len()) {
            errors.push("seeds.zip needs target, data and train lists of equal length".into());
        }
        let d = &self.data;
        let trainable = matches!(
            kind,
            ExperimentKind::SpectrumEvolution | ExperimentKind::SynthLarge | ExperimentKind::RealCsv
        );
        if trainable {
            if self.methods.is_empty() {
                errors.push("at least one [[methods]] entry is required".into());
            }
            for (i, m) in self.methods.iter().enumerate() {
                if m.lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    errors.push(format!("methods[{i}].lambda values must be finite and non-negative"));
                }
                match m.regularizer {
                    RegularizerName::HashWh if m.b.is_empty() => {
                        errors.push(format!("methods[{i}] (hashwh) needs at least one b"))
                    }
                    RegularizerName::HashWh if m.b.contains(&0) => {
                        errors.push(format!("methods[{i}].b must be at least 1"))
                    }
                    RegularizerName::None | RegularizerName::FullWh if !m.b.is_empty() => {
                        errors.push(format!("methods[{i}].b only applies to hashwh"))
                    }
                    _ => {}
                }
            }
        }
        let single = |what: &str, list: &[usize], errors: &mut Vec<String>| {
            if list.len() != 1 {
                errors.push(format!("data.{what} must be a single value for {}", kind.name()));
            }
        };
        match kind {
            ExperimentKind::SpectrumEvolution => {
                single("n", &d.n, &mut errors);
                single("train_size", &d.train_size, &mut errors);
                if d.csv.is_some() {
                    errors.push("spectrum_evolution uses a synthetic target; remove data.csv".into());
                }
                if let (Some(&n), Some(&m)) = (d.n.first(), d.train_size.first()) {
                    if n > FULLWH_MAX_DIMENSION {
                        errors.push(format!("spectrum_evolution needs n <= {FULLWH_MAX_DIMENSION}, got {n}"));
                    } else if m == 0 || m >= 1 << n {
                        errors.push(format!("data.train_size must be in 1..{} for n = {n}", 1usize << n));
                    }
                    self.check_methods_for(n, &mut errors);
                }
            }
            ExperimentKind::SynthLarge => {
                if d.n.is_empty() || d.c.is_empty() {
                    errors.push("synth_large needs data.n and data.c".into());
                }
                if d.c.contains(&0) {
                    errors.push("data.c values must be positive".into());
                }
                if d.multiple == Some(0) {
                    errors.push("data.multiple must be positive".into());
                }
                for &n in &d.n {
                    self.check_methods_for(n, &mut errors);
                }
            }
            ExperimentKind::RealCsv => {
                match &d.csv {
                    None => errors.push("real_csv needs data.csv".into()),
                    Some(p) if !p.is_file() => errors.push(format!("data.csv `{}` does not exist", p.display())),
                    _ => {}
                }
                if let Some(p) = d.schema.as_ref().filter(|p| !p.is_file()) {
                    errors.push(format!("data.schema `{}` does not exist", p.display()));
                }
                if d.train_size.is_empty() || d.train_size.contains(&0) {
                    errors.push("real_csv needs positive data.train_size values".into());
                }
            }
            ExperimentKind::Ablation => {
                single("train_size", &d.train_size, &mut errors);
                if d.csv.is_none() {
                    single("n", &d.n, &mut errors);
                    if let (Some(&n), Some(&m)) = (d.n.first(), d.train_size.first()) {
                        if n > 24 {
                            errors.push(format!("synthetic ablation enumerates the cube; n = {n} exceeds 24"));
                        } else if m == 0 || m >= 1 << n {
                            errors.push(format!("data.train_size must be in 1..{} for n = {n}", 1usize << n));
                        }
                    }
                } else if d.csv.as_ref().is_some_and(|p| !p.is_file()) {
                    errors.push("data.csv does not exist".into());
                }
                if self.forest.trees == 0 {
                    errors.push("forest.trees must be positive".into());
                }
                if self.ablation.tie_seeds.is_empty() {
                    errors.push("ablation.tie_seeds must list at least one seed".into());
                }
            }
            ExperimentKind::HashStudy => {
                let h = &self.hash_study;
                if h.k.iter().any(|&k| k < 2) {
                    errors.push("hash_study.k values must be at least 2".into());
                }
                if h.b.is_empty() || h.b.contains(&0) {
                    errors.push("hash_study.b values must be positive".into());
                }
                if h.rounds == 0 {
                    errors.push("hash_study.rounds must be positive".into());
                }
                if !(h.epsilon > 0.0) {
                    errors.push("hash_study.epsilon must be positive".into());
                }
                if h.n == 0 || h.n > 62 {
                    errors.push("hash_study.n must be in 1..=62".into());
                } else {
                    if let Some(&b) = h.b.iter().find(|&&b| b > h.n) {
                        errors.push(format!("hash_study.b = {b} exceeds n = {}", h.n));
                    }
                    if let Some(&k) = h.k.iter().find(|&&k| k as u128 > 1u128 << h.n) {
                        errors.push(format!("hash_study.k = {k} exceeds the 2^{} available frequencies", h.n));
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    fn check_methods_for(&self, n: usize, errors: &mut Vec<String>) {
        for m in &self.methods {
            match m.regularizer {
                RegularizerName::FullWh if n > FULLWH_MAX_DIMENSION => errors.push(format!(
                    "fullwh is limited to n <= {FULLWH_MAX_DIMENSION} (n = {n}); use hashwh"
                )),
                RegularizerName::HashWh => {
                    if let Some(&b) = m.b.iter().find(|&&b| b > n) {
                        errors.push(format!("hashwh b = {b} exceeds n = {n}"));
                    }
                }
                _ => {}
            }
        }
    }

    /// Methods with their hyperparameter candidates, in config order.
    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for m in &self.methods {
            match m.regularizer {
                RegularizerName::None => out.push(Method {
                    name: "standard".into(),
                    candidates: vec![(Regularizer::None, 0.0)],
                }),
                RegularizerName::FullWh => out.push(Method {
                    name: "fullwh".into(),
                    candidates: m.lambda.iter().map(|&l| (Regularizer::FullWh, l)).collect(),
                }),
                RegularizerName::HashWh if m.tune_b => out.push(Method {
                    name: "hashwh".into(),
                    candidates: m
                        .b
                        .iter()
                        .flat_map(|&b| m.lambda.iter().map(move |&l| (Regularizer::HashWh { b }, l)))
                        .collect(),
                }),
                RegularizerName::HashWh => {
                    for &b in &m.b {
                        out.push(Method {
                            name: format!("hashwh_b{b}"),
                            candidates: m.lambda.iter().map(|&l| (Regularizer::HashWh { b }, l)).collect(),
                        });
                    }
                }
            }
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form
    /// (the output directory is not part of it).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn train_config(&self, regularizer: Regularizer, lambda: f64, train_seed: u64) -> TrainConfig {
        TrainConfig {
            regularizer,
            lambda,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            early_stop_patience: self.train.early_stopping.unwrap_or(true).then_some(self.train.patience),
            learning_rate: self.train.learning_rate,
            seeds: TrainSeeds::from_seed(train_seed),
        }
    }

    fn layer_dims(&self, n: usize) -> Vec<usize> {
        let hidden = self.model.hidden.clone().unwrap_or_else(|| match self.experiment {
            Some(ExperimentKind::SpectrumEvolution) => vec![100, 100, 10],
            Some(ExperimentKind::RealCsv) => vec![10 * n, 10 * n, n],
            _ => vec![2 * n, 2 * n, n],
        });
        let mut dims = vec![n];
        dims.extend(hidden);
        dims.push(1);
        dims
    }

    fn load_csv(&self) -> Result<Dataset> {
        let path = self.data.csv.as_ref().ok_or_else(|| Error::Config(vec!["data.csv is not set".into()]))?;
        let schema = match &self.data.schema {
            Some(p) => DatasetSchema::load(p)?,
            None => DatasetSchema::with_target("y"),
        };
        crate::synth::load_csv_dataset(path, &schema)
    }
}

/// Runtime options that do not change any output.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for independent grid cells.
    pub jobs: usize,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub rows: usize,
}

/// Record of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub manifest_version: u32,
    pub library_version: String,
    pub experiment: ExperimentKind,
    pub config: RunConfig,
    pub config_hash: String,
    pub started_unix_seconds: u64,
    pub wall_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.format != MANIFEST_FORMAT || manifest.manifest_version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!(
                "{} is not a v{MANIFEST_VERSION} run manifest",
                path.display()
            )));
        }
        Ok(manifest)
    }
}

#[derive(Clone, Debug)]
pub enum Summary {
    Evolution(EvolutionSummary),
    Scores(ScoreSummary),
    Ablation(AblationSummary),
    HashStudy(HashStudySummary),
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
    pub summary: Summary,
}

/// Validates, runs and records an experiment.
pub fn run(config: RunConfig, options: &RunOptions) -> Result<RunReport> {
    let config = config.resolve()?;
    config.validate()?;
    let kind = config.kind()?;
    if options.jobs == 0 {
        return Err(Error::Config(vec!["jobs must be at least 1".into()]));
    }
    let out_dir = options.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let probe = out_dir.join(".write-test");
    fs::write(&probe, b"").map_err(|e| Error::io(&out_dir, e))?;
    let _ = fs::remove_file(&probe);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let started_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let ctx = Context {
        config: &config,
        hash: config.hash(),
        pool: &pool,
    };
    let (summary, outputs) = match kind {
        ExperimentKind::SpectrumEvolution => {
            let (s, o) = evolution::run(&ctx)?;
            (Summary::Evolution(s), o)
        }
        ExperimentKind::SynthLarge => {
            let (s, o) = scores::run_synth_large(&ctx)?;
            (Summary::Scores(s), o)
        }
        ExperimentKind::RealCsv => {
            let (s, o) = scores::run_real_csv(&ctx)?;
            (Summary::Scores(s), o)
        }
        ExperimentKind::Ablation => {
            let (s, o) = ablation::run(&ctx)?;
            (Summary::Ablation(s), o)
        }
        ExperimentKind::HashStudy => {
            let (s, o) = hash_study::run(&ctx)?;
            (Summary::HashStudy(s), o)
        }
    };
    let mut files = Vec::new();
    for output in &outputs.files {
        files.push(output.write(&out_dir)?);
    }
    let wall_seconds = clock.elapsed().as_secs_f64();
    let timings = serde_json::json!({
        "total_seconds": wall_seconds,
        "runs": outputs.timings,
    });
    write_file(&out_dir.join("timings.json"), serde_json::to_string_pretty(&timings)?.as_bytes())?;
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        manifest_version: MANIFEST_VERSION,
        library_version: LIBRARY_VERSION.into(),
        experiment: kind,
        config_hash: ctx.hash.clone(),
        config: RunConfig {
            out_dir: None,
            ..config.clone()
        },
        started_unix_seconds,
        wall_seconds,
        outputs: files,
    };
    write_file(&out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(RunReport {
        manifest,
        out_dir,
        summary,
    })
}

/// Re-executes the run recorded in a manifest.
pub fn replay(manifest_path: impl AsRef<Path>, options: &RunOptions) -> Result<RunReport> {
    let manifest = RunManifest::load(manifest_path)?;
    let report = run(manifest.config.clone(), options)?;
    if report.manifest.config_hash != manifest.config_hash {
        return Err(Error::InvalidArgument(format!(
            "replayed config hash {} differs from the recorded {}",
            report.manifest.config_hash, manifest.config_hash
        )));
    }
    Ok(report)
}

pub(crate) struct Context<'a> {
    pub config: &'a RunConfig,
    pub hash: String,
    pub pool: &'a rayon::ThreadPool,
}

impl Context<'_> {
    /// Runs independent cells on the worker pool, keeping their order.
    pub fn par_map<T, R, F>(&self, cells: Vec<T>, f: F) -> Result<Vec<R>>
    where
        T: Send + Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Send + Sync,
    {
        self.pool.install(|| cells.par_iter().map(&f).collect())
    }

    /// Leading columns of every row.
    pub fn key(&self, run_id: &str, seeds: &SeedTriple) -> Vec<String> {
        vec![
            run_id.to_string(),
            seeds.target.to_string(),
            seeds.data.to_string(),
            seeds.train.to_string(),
            self.hash.clone(),
        ]
    }

    /// Leading columns of aggregate rows.
    pub fn aggregate_key(&self) -> Vec<String> {
        vec!["mean".into(), "*".into(), "*".into(), "*".into(), self.hash.clone()]
    }
}

pub(crate) const KEY_COLUMNS: [&str; 5] = ["run_id", "seed_target", "seed_data", "seed_train", "config_hash"];

/// An in-memory CSV file.
pub(crate) struct Table {
    pub path: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(path: &str, columns: &[&str]) -> Self {
        Table {
            path: path.into(),
            header: KEY_COLUMNS.iter().chain(columns).map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, mut key: Vec<String>, rest: Vec<String>) {
        key.extend(rest);
        debug_assert_eq!(key.len(), self.header.len());
        self.rows.push(key);
    }
}

pub(crate) enum Output {
    Table(Table),
    Text { path: String, contents: String },
}

impl Output {
    fn write(&self, dir: &Path) -> Result<OutputFile> {
        match self {
            Output::Table(t) => {
                let path = dir.join(&t.path);
                ensure_parent(&path)?;
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(&t.header)?;
                for row in &t.rows {
                    w.write_record(row)?;
                }
                w.flush().map_err(|e| Error::io(&path, e))?;
                Ok(OutputFile {
                    path: t.path.clone(),
                    rows: t.rows.len(),
                })
            }
            Output::Text { path: rel, contents } => {
                let path = dir.join(rel);
                ensure_parent(&path)?;
                write_file(&path, contents.as_bytes())?;
                Ok(OutputFile {
                    path: rel.clone(),
                    rows: contents.lines().count(),
                })
            }
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Default)]
pub(crate) struct Outputs {
    pub files: Vec<Output>,
    /// Wall-clock seconds per run, kept out of every CSV.
    pub timings: BTreeMap<String, serde_json::Value>,
}

pub(crate) fn real(v: f64) -> String {
    format_real(v)
}

pub(crate) fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

/// The winning candidate of a validation-loss selection.
pub(crate) struct Selected<X> {
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub outcome: TrainOutcome,
    pub observations: Vec<X>,
    /// `(regularizer, lambda, best_epoch, best_val_mse)` for every candidate.
    pub candidates: Vec<(Regularizer, f64, usize, f64)>,
    /// Wall-clock seconds per candidate, and per-epoch times of the winner.
    pub seconds: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

/// Trains every candidate of `method` from the same initialisation and keeps
/// the one with the lowest best-epoch validation MSE (earliest on ties).
pub(crate) fn select_by_validation<X, F>(
    config: &RunConfig,
    method: &Method,
    dims: &[usize],
    train_seed: u64,
    train_set: &Dataset,
    validation: &Dataset,
    observe: F,
) -> Result<Selected<X>>
where
    F: Fn(&EpochRecord, &MlpModel) -> Result<X>,
{
    let mut best: Option<Selected<X>> = None;
    let mut candidates = Vec::new();
    let mut seconds = Vec::new();
    for (regularizer, lambda) in &method.candidates {
        let clock = Instant::now();
        let tc = config.train_config(regularizer.clone(), *lambda, train_seed);
        let mut rng = crate::rng::stream(tc.seeds.init);
        let model = MlpModel::new(dims, config.model.negative_slope, &mut rng)?;
        let mut observations = Vec::new();
        let outcome = mlp::train(model, train_set, validation, &tc, |record, model| {
            observations.push(observe(record, model)?);
            Ok(())
        })?;
        seconds.push(clock.elapsed().as_secs_f64());
        candidates.push((regularizer.clone(), *lambda, outcome.best_epoch, outcome.best_val_mse));
        if best.as_ref().is_none_or(|b| outcome.best_val_mse < b.outcome.best_val_mse) {
            let epoch_seconds = outcome.records.iter().map(|r| r.wall_time).collect();
            best = Some(Selected {
                regularizer: regularizer.clone(),
                lambda: *lambda,
                outcome,
                observations,
                candidates: vec![],
                seconds: vec![],
                epoch_seconds,
            });
        }
    }
    let mut best = best.ok_or_else(|| Error::Config(vec![format!("method {} has no candidates", method.name)]))?;
    best.candidates = candidates;
    best.seconds = seconds;
    Ok(best)
}

/// `selection.csv` rows for one selection: every candidate, with the winner
/// flagged.
pub(crate) fn selection_rows<X>(key: &[String], labels: &[String], s: &Selected<X>) -> Vec<Vec<String>> {
    s.candidates
        .iter()
        .map(|(reg, lambda, best_epoch, val)| {
            let selected = *reg == s.regularizer && *lambda == s.lambda;
            let mut row = key.to_vec();
            row.extend(labels.iter().cloned());
            row.extend([
                reg.name(),
                regularizer_b(reg),
                real(*lambda),
                best_epoch.to_string(),
                real(*val),
                selected.to_string(),
            ]);
            row
        })
        .collect()
}

pub(crate) const SELECTION_COLUMNS: [&str; 6] = ["candidate", "b", "lambda", "best_epoch", "best_val_mse", "selected"];

pub(crate) fn regularizer_b(r: &Regularizer) -> String {
    match r {
        Regularizer::HashWh { b } => b.to_string(),
        _ => String::new(),
    }
}
