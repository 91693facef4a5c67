//! Synthetic sparse targets, uniform cube sampling, reproducible splits and
//! CSV datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{BitVector, CubeFunction, Frequency, SparseFourierFunction, MAX_DENSE_DIMENSION};
use crate::rng;

/// Labeled points of the cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dimension: usize,
    inputs: Vec<BitVector>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(dimension: usize, inputs: Vec<BitVector>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "dataset targets",
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != dimension) {
            return Err(Error::LengthMismatch {
                what: "dataset input",
                expected: dimension,
                actual: x.len(),
            });
        }
        if let Some(index) = targets.iter().position(|y| !y.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Dataset {
            dimension,
            inputs,
            targets,
        })
    }

    /// Labels `inputs` with `g`.
    pub fn labeled(g: &impl CubeFunction, inputs: Vec<BitVector>) -> Result<Self> {
        let targets = g.evaluate_many(&inputs);
        Self::new(g.dimension(), inputs, targets)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn inputs(&self) -> &[BitVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dimension: self.dimension,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Writes the `x0..x{n-1},y` CSV form.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dimension).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            let mut row: Vec<String> = x.to_bits().iter().map(|b| b.to_string()).collect();
            row.push(format_real(*y));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the `x0..x{n-1},y` CSV form.
    pub fn read_csv(input: impl Read) -> Result<Self> {
        load_csv(input, &DatasetSchema::with_target("y"))
    }
}

/// Shortest representation that parses back to the same value.
pub(crate) fn format_real(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    /// One frequency of each degree 1..5, all coefficients 1.
    DegreeLadder,
    /// 25 distinct frequencies, degree uniform in 1..5, amplitude
    /// uniform in [-1, 1].
    Random25,
    /// Sum of 10 random interaction terms `a·Π_{i∈S} x_i` with `|S|` uniform
    /// in 1..5 and `a` uniform in [-1, 1]. Each term spreads over all
    /// `2^|S|` parities of its subsets, so energy decays with degree.
    SparseInteractions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub mode: SyntheticMode,
    pub n: usize,
    pub seed: u64,
}

pub const LADDER_MAX_DEGREE: usize = 5;
pub const RANDOM_TERMS: usize = 25;
pub const INTERACTION_TERMS: usize = 10;

fn random_frequency_of_degree(n: usize, d: usize, r: &mut impl Rng) -> Frequency {
    let ones: Vec<usize> = index::sample(r, n, d).into_vec();
    BitVector::from_indices(n, &ones).expect("indices below n")
}

/// Sparse target with coefficients in the evaluation convention.
pub fn generate_target(spec: &SyntheticSpec) -> Result<SparseFourierFunction> {
    let n = spec.n;
    if n < LADDER_MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "synthetic targets need n >= {LADDER_MAX_DEGREE}, got {n}"
        )));
    }
    let mut r = rng::stream(spec.seed);
    let mut terms: BTreeMap<Frequency, f64> = BTreeMap::new();
    match spec.mode {
        SyntheticMode::DegreeLadder => {
            for d in 1..=LADDER_MAX_DEGREE {
                terms.insert(random_frequency_of_degree(n, d, &mut r), 1.0);
            }
        }
        SyntheticMode::Random25 => {
            while terms.len() < RANDOM_TERMS {
                let d = r.random_range(1..=LADDER_MAX_DEGREE);
                let f = random_frequency_of_degree(n, d, &mut r);
                let c: f64 = r.random_range(-1.0..=1.0);
                if terms.contains_key(&f) || c == 0.0 {
                    continue;
                }
                terms.insert(f, c);
            }
        }
        SyntheticMode::SparseInteractions => {
            for _ in 0..INTERACTION_TERMS {
                let d = r.random_range(1..=LADDER_MAX_DEGREE);
                let vars: Vec<usize> = index::sample(&mut r, n, d).into_vec();
                let a: f64 = r.random_range(-1.0..=1.0);
                // Π x_i = Π (1 - χ_i)/2 = 2^{-d} Σ_{T⊆S} (-1)^{|T|} χ_T
                let scale = a / (1u64 << d) as f64;
                for mask in 0u32..1 << d {
                    let subset: Vec<usize> = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| vars[j]).collect();
                    let sign = if subset.len() % 2 == 0 { 1.0 } else { -1.0 };
                    let f = BitVector::from_indices(n, &subset).expect("indices below n");
                    *terms.entry(f).or_insert(0.0) += sign * scale;
                }
            }
        }
    }
    SparseFourierFunction::from_terms(n, terms)
}

/// Uniform random point of `{0,1}^n`.
pub fn random_point(n: usize, r: &mut impl Rng) -> BitVector {
    let mut x = BitVector::zeros(n);
    for i in 0..n {
        x.set(i, r.random());
    }
    x
}

/// `size` uniform draws (with replacement) labeled by `g`.
pub fn sample_dataset(g: &impl CubeFunction, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let mut r = rng::stream(seed);
    let inputs = (0..size).map(|_| random_point(g.dimension(), &mut r)).collect();
    Dataset::labeled(g, inputs)
}

/// `c · 25n` rows.
pub fn scaled_train_size(n: usize, c: usize) -> usize {
    c * RANDOM_TERMS * n
}

/// Disjoint train/validation/test index sets into one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    /// Consecutive blocks of an i.i.d. sample.
    pub fn sequential(train: usize, validation: usize, test: usize) -> Self {
        DatasetSplit {
            train: (0..train).collect(),
            validation: (train..train + validation).collect(),
            test: (train + validation..train + validation + test).collect(),
        }
    }

    /// Train of size `train`, validation and test each `multiple × train`.
    pub fn with_multiples(train: usize, multiple: usize) -> Self {
        Self::sequential(train, multiple * train, multiple * train)
    }

    /// A random permutation of `total` rows: `train` rows for training, the
    /// rest halved into validation and test.
    pub fn shuffled_halves(total: usize, train: usize, seed: u64) -> Result<Self> {
        if train > total {
            return Err(Error::InvalidArgument(format!(
                "train size {train} exceeds dataset size {total}"
            )));
        }
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng::stream(seed));
        let rest = total - train;
        let validation_end = train + rest / 2;
        Ok(DatasetSplit {
            train: order[..train].to_vec(),
            validation: order[train..validation_end].to_vec(),
            test: order[validation_end..].to_vec(),
        })
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .all(|i| seen.insert(*i))
    }

    pub fn apply(&self, data: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
        if let Some(&i) = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .find(|&&i| i >= data.len())
        {
            return Err(Error::InvalidArgument(format!(
                "split index {i} is outside a dataset of {} rows",
                data.len()
            )));
        }
        Ok((data.subset(&self.train), data.subset(&self.validation), data.subset(&self.test)))
    }
}

/// Every point of the cube in random order; the first `train` form the
/// training set and the remaining points the validation set.
pub fn cube_complement_split(g: &impl CubeFunction, train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = g.dimension();
    if n > MAX_DENSE_DIMENSION {
        return Err(Error::Capacity {
            what: "cube enumeration",
            dimension: n,
            max: MAX_DENSE_DIMENSION,
        });
    }
    let size = 1usize << n;
    if train == 0 || train > size {
        return Err(Error::InvalidArgument(format!(
            "train size must be in 1..={size}, got {train}"
        )));
    }
    let mut order: Vec<usize> = (0..size).collect();
    order.shuffle(&mut rng::stream(seed));
    let points = |idx: &[usize]| idx.iter().map(|&j| BitVector::from_index(n, j)).collect();
    Ok((
        Dataset::labeled(g, points(&order[..train]))?,
        Dataset::labeled(g, points(&order[train..]))?,
    ))
}

/// Column layout of an external CSV file.
///
/// ```toml
/// target = "fitness"
/// features = ["m1", "m2"]        # optional; defaults to every other column
/// categorical = ["site1", "site2"]
///
/// [levels]                        # optional; defaults to sorted distinct values
/// site1 = ["A", "C", "D"]
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub target: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub levels: BTreeMap<String, Vec<String>>,
}

impl DatasetSchema {
    pub fn with_target(target: &str) -> Self {
        DatasetSchema {
            target: Some(target.into()),
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

enum ColumnPlan {
    Binary { column: usize, name: String },
    OneHot { column: usize, name: String, levels: Vec<String> },
}

/// Reads a CSV file under `schema`. Binary features must be exactly `0` or
/// `1`; categorical columns expand to one indicator per level.
pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv(std::io::BufReader::new(file), schema)
}

pub fn load_csv(input: impl Read, schema: &DatasetSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let target_name = schema
        .target
        .as_deref()
        .ok_or_else(|| Error::Schema("no target column declared".into()))?;
    let target = position(target_name)
        .ok_or_else(|| Error::Schema(format!("target column `{target_name}` is missing from the header")))?;

    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;

    for name in &schema.categorical {
        if position(name).is_none() {
            return Err(Error::Schema(format!("categorical column `{name}` is missing from the header")));
        }
    }
    let features: Vec<String> = match &schema.features {
        Some(list) => list.clone(),
        None => header
            .iter()
            .filter(|h| h.as_str() != target_name && !schema.categorical.contains(h))
            .cloned()
            .collect(),
    };
    let mut plan = Vec::new();
    for name in &features {
        let column = position(name).ok_or_else(|| Error::Schema(format!("feature column `{name}` is missing from the header")))?;
        plan.push(ColumnPlan::Binary { column, name: name.clone() });
    }
    for name in &schema.categorical {
        let column = position(name).expect("checked above");
        let levels = match schema.levels.get(name) {
            Some(levels) => levels.clone(),
            None => records
                .iter()
                .map(|r| r[column].to_owned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        plan.push(ColumnPlan::OneHot { column, name: name.clone(), levels });
    }
    let dimension: usize = plan
        .iter()
        .map(|p| match p {
            ColumnPlan::Binary { .. } => 1,
            ColumnPlan::OneHot { levels, .. } => levels.len(),
        })
        .sum();

    let mut inputs = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let row = i + 1;
        let cell_error = |column: &str, message: String| Error::Cell {
            row,
            column: column.to_owned(),
            message,
        };
        let mut x = BitVector::zeros(dimension);
        let mut offset = 0;
        for p in &plan {
            match p {
                ColumnPlan::Binary { column, name } => {
                    match &record[*column] {
                        "0" => {}
                        "1" => x.set(offset, true),
                        other => return Err(cell_error(name, format!("expected 0 or 1, found `{other}`"))),
                    }
                    offset += 1;
                }
                ColumnPlan::OneHot { column, name, levels } => {
                    let value = &record[*column];
                    let level = levels
                        .iter()
                        .position(|l| l == value)
                        .ok_or_else(|| cell_error(name, format!("unknown level `{value}`")))?;
                    x.set(offset + level, true);
                    offset += levels.len();
                }
            }
        }
        let raw = &record[target];
        let y: f64 = raw
            .parse()
            .map_err(|_| cell_error(target_name, format!("expected a real number, found `{raw}`")))?;
        if !y.is_finite() {
            return Err(cell_error(target_name, format!("target `{raw}` is not finite")));
        }
        inputs.push(x);
        targets.push(y);
    }
    Dataset::new(dimension, inputs, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::fourier::FnCubeFunction;
    use proptest::prelude::*;

    #[test]
    fn ladder_has_one_frequency_per_degree() {
        let g = generate_target(&SyntheticSpec { mode: SyntheticMode::DegreeLadder, n: 10, seed: 4 }).unwrap();
        let mut degrees: Vec<usize> = g.support().map(BitVector::degree).collect();
        degrees.sort();
        assert_eq!(degrees, vec![1, 2, 3, 4, 5]);
        assert!(g.iter().all(|(_, c)| c == 1.0));
    }

    #[test]
    fn random25_examples() {
        let spec = SyntheticSpec { mode: SyntheticMode::Random25, n: 25, seed: 9 };
        let g = generate_target(&spec).unwrap();
        assert_eq!(g.len(), 25);
        assert!(g.max_degree() <= 5);
        assert!(g.support().all(|f| f.degree() >= 1));
        assert!(g.iter().all(|(_, c)| (-1.0..=1.0).contains(&c)));
        assert_eq!(generate_target(&spec).unwrap(), g);
        // small n forces collisions that must be resampled
        let tight = generate_target(&SyntheticSpec { mode: SyntheticMode::Random25, n: 5, seed: 1 }).unwrap();
        assert_eq!(tight.len(), 25);
    }

    #[test]
    fn interaction_terms_expand_exactly() {
        let g = generate_target(&SyntheticSpec { mode: SyntheticMode::SparseInteractions, n: 9, seed: 2 }).unwrap();
        // rebuild the monomials from the same stream and compare pointwise
        let mut r = rng::stream(2);
        let monomials: Vec<(Vec<usize>, f64)> = (0..INTERACTION_TERMS)
            .map(|_| {
                let d = r.random_range(1..=LADDER_MAX_DEGREE);
                let vars = index::sample(&mut r, 9, d).into_vec();
                (vars, r.random_range(-1.0..=1.0))
            })
            .collect();
        for x in crate::fourier::cube_points(9).unwrap() {
            let direct: f64 = monomials.iter().filter(|(v, _)| v.iter().all(|&i| x.get(i))).map(|(_, a)| a).sum();
            assert!((g.evaluate(&x) - direct).abs() < 1e-12);
        }
        assert!(g.max_degree() <= 5);
    }

    #[test]
    fn small_dimension_rejected() {
        for mode in [SyntheticMode::DegreeLadder, SyntheticMode::Random25, SyntheticMode::SparseInteractions] {
            assert!(generate_target(&SyntheticSpec { mode, n: 4, seed: 0 }).is_err());
        }
    }

    #[test]
    fn sampling_examples() {
        let g = FnCubeFunction::new(12, |x: &BitVector| x.degree() as f64);
        assert!(sample_dataset(&g, 0, 0).is_err());
        let d = sample_dataset(&g, 100_000, 17).unwrap();
        for i in 0..12 {
            let mean = d.inputs().iter().filter(|x| x.get(i)).count() as f64 / d.len() as f64;
            assert!((mean - 0.5).abs() < 0.01, "bit {i}: {mean}");
        }
        for (x, y) in d.inputs().iter().zip(d.targets()).take(50) {
            assert_eq!(*y, x.degree() as f64);
        }
        assert_eq!(scaled_train_size(50, 5), 6250);
        assert_eq!(sample_dataset(&g, 30, 5).unwrap(), sample_dataset(&g, 30, 5).unwrap());
    }

    #[test]
    fn cube_complement_covers_the_cube() {
        let g = FnCubeFunction::new(10, |x: &BitVector| x.to_index() as f64);
        let (train, val) = cube_complement_split(&g, 200, 3).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(val.len(), 824);
        let all: BTreeSet<usize> = train.inputs().iter().chain(val.inputs()).map(BitVector::to_index).collect();
        assert_eq!(all.len(), 1024);
        assert!(cube_complement_split(&g, 1025, 3).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let s = DatasetSplit::with_multiples(250, 5);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (250, 1250, 1250));
        assert!(s.is_disjoint());
        let h = DatasetSplit::shuffled_halves(101, 40, 2).unwrap();
        assert_eq!((h.train.len(), h.validation.len(), h.test.len()), (40, 30, 31));
        assert!(h.is_disjoint());
        assert_eq!(h.total(), 101);
    }

    #[test]
    fn hand_written_csv() {
        let text = "a,b,c,y\n0,1,1,2.5\n1,0,0,-1\n1,1,1,0\n";
        let d = load_csv(text.as_bytes(), &DatasetSchema::with_target("y")).unwrap();
        assert_eq!(d.dimension(), 3);
        assert_eq!(d.targets(), &[2.5, -1.0, 0.0]);
        assert_eq!(d.inputs()[0].to_bits(), vec![0, 1, 1]);
        assert_eq!(d.inputs()[1].to_bits(), vec![1, 0, 0]);
        assert_eq!(d.inputs()[2].to_bits(), vec![1, 1, 1]);
    }

    #[test]
    fn malformed_cell_names_row_and_column() {
        let text = "a,b,y\n0,1,2.5\n1,2,1\n";
        match load_csv(text.as_bytes(), &DatasetSchema::with_target("y")) {
            Err(Error::Cell { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "b")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_csv(text.as_bytes(), &DatasetSchema::with_target("z")),
            Err(Error::Schema(_))
        ));
        assert!(matches!(load_csv(text.as_bytes(), &DatasetSchema::default()), Err(Error::Schema(_))));
    }

    #[test]
    fn categorical_columns_expand_to_one_hot() {
        let amino: Vec<String> = "ACDEFGHIKLMNPQRSTVWY".chars().map(String::from).collect();
        let mut text = String::from("s1,s2,s3,s4,fitness\n");
        text.push_str("A,C,D,Y,0.5\nW,W,A,C,1.5\n");
        let schema = DatasetSchema {
            target: Some("fitness".into()),
            features: Some(vec![]),
            categorical: vec!["s1".into(), "s2".into(), "s3".into(), "s4".into()],
            levels: ["s1", "s2", "s3", "s4"].iter().map(|s| (s.to_string(), amino.clone())).collect(),
        };
        let d = load_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.dimension(), 80);
        assert!(d.inputs().iter().all(|x| x.degree() == 4));
        let ones: Vec<usize> = d.inputs()[0].iter_ones().collect();
        assert_eq!(ones, vec![0, 20 + 1, 40 + 2, 60 + 19]);
        let toml = "target = \"fitness\"\nfeatures = []\ncategorical = [\"s1\"]\n";
        let inferred = load_csv(text.as_bytes(), &DatasetSchema::from_toml(toml).unwrap()).unwrap();
        assert_eq!(inferred.dimension(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let g = FnCubeFunction::new(7, |x: &BitVector| (x.to_index() as f64).sqrt() - 1.0 / 3.0);
        let d = sample_dataset(&g, 40, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x0,x1,x2,x3,x4,x5,x6,y\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    proptest! {
        #[test]
        fn generation_is_pure_and_distinct(seed in any::<u64>(), n in 5usize..30, ladder in any::<bool>()) {
            let mode = if ladder { SyntheticMode::DegreeLadder } else { SyntheticMode::Random25 };
            let spec = SyntheticSpec { mode, n, seed };
            let g = generate_target(&spec).unwrap();
            prop_assert_eq!(&g, &generate_target(&spec).unwrap());
            prop_assert_eq!(g.len(), if ladder { 5 } else { 25 });
            prop_assert!(g.support().all(|f| (1..=5).contains(&f.degree())));
        }

        #[test]
        fn shuffled_splits_partition(total in 1usize..500, frac in 0.0f64..1.0, seed in any::<u64>()) {
            let train = (total as f64 * frac) as usize;
            let s = DatasetSplit::shuffled_halves(total, train, seed).unwrap();
            prop_assert!(s.is_disjoint());
            prop_assert_eq!(s.total(), total);
            prop_assert_eq!(s.train.len(), train);
        }
    }
}
