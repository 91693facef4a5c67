//! Regression trees and forests on binary features, their exact sparse
//! Fourier spectra, a bagged greedy trainer and coefficient-deletion
//! ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{BitVector, CubeFunction, Frequency, SparseFourierFunction};
use crate::metrics::r2_score;
use crate::rng;
use crate::synth::{format_real, Dataset};

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf(f64),
    /// `left` handles `x_feature = 0`, `right` handles `x_feature = 1`.
    Internal {
        feature: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn split(feature: usize, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Internal {
            feature,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf(_) => None,
            TreeNode::Internal { feature, left, right } => {
                [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max()
            }
        }
    }

    fn write_preorder(&self, out: &mut String) {
        match self {
            TreeNode::Leaf(v) => {
                out.push_str("L ");
                out.push_str(&format_real(*v));
                out.push('\n');
            }
            TreeNode::Internal { feature, left, right } => {
                out.push_str(&format!("I {feature}\n"));
                left.write_preorder(out);
                right.write_preorder(out);
            }
        }
    }
}

/// A binary regression tree over `{0,1}^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    dimension: usize,
    root: TreeNode,
}

impl DecisionTree {
    pub fn new(dimension: usize, root: TreeNode) -> Result<Self> {
        if let Some(f) = root.max_feature().filter(|&f| f >= dimension) {
            return Err(Error::InvalidArgument(format!(
                "tree splits on feature {f} but the dimension is {dimension}"
            )));
        }
        Ok(DecisionTree { dimension, root })
    }

    pub fn leaf(dimension: usize, value: f64) -> Self {
        DecisionTree {
            dimension,
            root: TreeNode::Leaf(value),
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tree n={}\n", self.dimension);
        self.root.write_preorder(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, header) = lines.next_nonempty().ok_or(Error::Parse {
            line: 1,
            message: "missing tree header".into(),
        })?;
        let n = parse_header(header, "tree", &["n"], line)?[0];
        let root = lines.parse_node(n)?;
        if let Some((line, extra)) = lines.next_nonempty() {
            return Err(Error::Parse {
                line,
                message: format!("unexpected trailing line `{extra}`"),
            });
        }
        Ok(DecisionTree { dimension: n, root })
    }
}

impl CubeFunction for DecisionTree {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf(v) => return *v,
                TreeNode::Internal { feature, left, right } => {
                    node = if x.get(*feature) { right } else { left };
                }
            }
        }
    }
}

impl fmt::Display for DecisionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for DecisionTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_text(s)
    }
}

/// Mean of its trees.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn new(trees: Vec<DecisionTree>) -> Result<Self> {
        let Some(first) = trees.first() else {
            return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
        };
        if let Some(t) = trees.iter().find(|t| t.dimension != first.dimension) {
            return Err(Error::LengthMismatch {
                what: "tree dimension",
                expected: first.dimension,
                actual: t.dimension,
            });
        }
        Ok(Forest { trees })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(DecisionTree::depth).max().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("forest n={} trees={}\n", self.dimension(), self.trees.len());
        for t in &self.trees {
            t.root.write_preorder(&mut out);
        }
        out
    }

    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        out.write_all(self.to_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, header) = lines.next_nonempty().ok_or(Error::Parse {
            line: 1,
            message: "missing forest header".into(),
        })?;
        let fields = parse_header(header, "forest", &["n", "trees"], line)?;
        let (n, count) = (fields[0], fields[1]);
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            trees.push(DecisionTree {
                dimension: n,
                root: lines.parse_node(n)?,
            });
        }
        if let Some((line, extra)) = lines.next_nonempty() {
            return Err(Error::Parse {
                line,
                message: format!("unexpected trailing line `{extra}`"),
            });
        }
        Forest::new(trees)
    }
}

impl CubeFunction for Forest {
    fn dimension(&self) -> usize {
        self.trees[0].dimension
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        self.trees.iter().map(|t| t.evaluate(x)).sum::<f64>() / self.trees.len() as f64
    }
}

impl FromStr for Forest {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_text(s)
    }
}

fn parse_header(header: &str, kind: &str, keys: &[&str], line: usize) -> Result<Vec<usize>> {
    let err = |message: String| Error::Parse { line, message };
    let mut parts = header.split_whitespace();
    if parts.next() != Some(kind) {
        return Err(err(format!("expected a `{kind}` header, found `{header}`")));
    }
    let mut values = Vec::new();
    for key in keys {
        let part = parts.next().ok_or_else(|| err(format!("header is missing `{key}=`")))?;
        let value = part
            .strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| err(format!("expected `{key}=<count>`, found `{part}`")))?;
        values.push(value.parse().map_err(|_| err(format!("bad {key} `{value}`")))?);
    }
    Ok(values)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty())
    }

    fn parse_node(&mut self, n: usize) -> Result<TreeNode> {
        let (line, text) = self.next_nonempty().ok_or(Error::Parse {
            line: 0,
            message: "tree ended before all nodes were read".into(),
        })?;
        let err = |message: String| Error::Parse { line, message };
        let (tag, rest) = text.split_once(' ').ok_or_else(|| err(format!("malformed node `{text}`")))?;
        match tag {
            "L" => {
                let v: f64 = rest.trim().parse().map_err(|_| err(format!("bad leaf value `{rest}`")))?;
                Ok(TreeNode::Leaf(v))
            }
            "I" => {
                let feature: usize = rest.trim().parse().map_err(|_| err(format!("bad feature `{rest}`")))?;
                if feature >= n {
                    return Err(err(format!("feature {feature} out of range for n={n}")));
                }
                let left = self.parse_node(n)?;
                let right = self.parse_node(n)?;
                Ok(TreeNode::split(feature, left, right))
            }
            _ => Err(err(format!("unknown node tag `{tag}`"))),
        }
    }
}

type Terms = BTreeMap<Frequency, f64>;

fn node_spectrum(node: &TreeNode, n: usize) -> Terms {
    match node {
        TreeNode::Leaf(v) => {
            let mut t = Terms::new();
            t.insert(BitVector::zeros(n), *v);
            t
        }
        TreeNode::Internal { feature, left, right } => {
            let l = node_spectrum(left, n);
            let r = node_spectrum(right, n);
            let e = BitVector::unit(n, *feature);
            let mut out = Terms::new();
            // t = (L + R)/2 + χ_{e_i} (L - R)/2
            for (f, c) in &l {
                *out.entry(f.clone()).or_insert(0.0) += 0.5 * c;
                *out.entry(f.xor(&e)).or_insert(0.0) += 0.5 * c;
            }
            for (f, c) in &r {
                *out.entry(f.clone()).or_insert(0.0) += 0.5 * c;
                *out.entry(f.xor(&e)).or_insert(0.0) -= 0.5 * c;
            }
            out.retain(|_, c| *c != 0.0);
            out
        }
    }
}

/// Exact spectrum of `t` in the evaluation convention.
pub fn tree_to_fourier(t: &DecisionTree) -> SparseFourierFunction {
    SparseFourierFunction::from_terms(t.dimension, node_spectrum(&t.root, t.dimension))
        .expect("frequencies have the tree's dimension")
}

/// Coefficient-wise mean of the tree spectra.
pub fn forest_to_fourier(forest: &Forest) -> SparseFourierFunction {
    let n = forest.dimension();
    let scale = 1.0 / forest.len() as f64;
    let mut total = Terms::new();
    for t in &forest.trees {
        for (f, c) in node_spectrum(&t.root, n) {
            *total.entry(f).or_insert(0.0) += c * scale;
        }
    }
    SparseFourierFunction::from_terms(n, total).expect("frequencies have the forest's dimension")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    /// Resample the data with replacement for each tree.
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    /// Nodes with fewer samples become leaves.
    #[serde(default = "default_min_split")]
    pub min_samples_split: usize,
}

fn default_true() -> bool {
    true
}

fn default_min_split() -> usize {
    2
}

impl ForestParams {
    pub fn new(trees: usize, max_depth: usize) -> Self {
        ForestParams {
            trees,
            max_depth,
            bootstrap: true,
            min_samples_split: 2,
        }
    }
}

struct Grower<'a> {
    data: &'a Dataset,
    max_depth: usize,
    min_samples_split: usize,
}

impl Grower<'_> {
    fn grow(&self, rows: &mut [usize], depth: usize) -> TreeNode {
        let y = self.data.targets();
        let count = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| y[r]).sum();
        let mean = sum / count;
        let pure = rows.iter().all(|&r| y[r] == y[rows[0]]);
        if depth >= self.max_depth || rows.len() < self.min_samples_split || pure {
            return TreeNode::Leaf(mean);
        }
        // maximise Σ_side (Σy)²/count, equivalent to minimising the
        // within-child squared error
        let n = self.data.dimension();
        let mut ones_count = vec![0usize; n];
        let mut ones_sum = vec![0.0; n];
        for &r in rows.iter() {
            let x = &self.data.inputs()[r];
            for i in x.iter_ones() {
                ones_count[i] += 1;
                ones_sum[i] += y[r];
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let c1 = ones_count[i] as f64;
            let c0 = count - c1;
            if ones_count[i] == 0 || ones_count[i] == rows.len() {
                continue;
            }
            let s1 = ones_sum[i];
            let s0 = sum - s1;
            let score = s0 * s0 / c0 + s1 * s1 / c1;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((feature, _)) = best else {
            return TreeNode::Leaf(mean);
        };
        let inputs = self.data.inputs();
        let mut split = 0;
        for k in 0..rows.len() {
            if !inputs[rows[k]].get(feature) {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (left, right) = rows.split_at_mut(split);
        TreeNode::split(feature, self.grow(left, depth + 1), self.grow(right, depth + 1))
    }
}

/// Bagged greedy variance-reduction trees. Deterministic under `seed`.
pub fn fit_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<Forest> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.trees == 0 {
        return Err(Error::InvalidArgument("a forest needs at least one tree".into()));
    }
    let grower = Grower {
        data,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split.max(2),
    };
    let mut r = rng::stream(seed);
    let m = data.len();
    let trees = (0..params.trees)
        .map(|_| {
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..m).map(|_| r.random_range(0..m)).collect()
            } else {
                (0..m).collect()
            };
            DecisionTree {
                dimension: data.dimension(),
                root: grower.grow(&mut rows, 0),
            }
        })
        .collect();
    Forest::new(trees)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationOrder {
    /// Smallest |coefficient| removed first.
    AmplitudeAsc,
    /// Highest degree removed first.
    DegreeDesc,
}

impl AblationOrder {
    pub fn name(self) -> &'static str {
        match self {
            AblationOrder::AmplitudeAsc => "amplitude_asc",
            AblationOrder::DegreeDesc => "degree_desc",
        }
    }
}

impl fmt::Display for AblationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationStep {
    pub step: usize,
    pub support_size: usize,
    pub r2: f64,
}

/// Order in which `ablate` removes the terms of `g`. Ties are broken
/// uniformly at random under `seed`.
pub fn removal_order(g: &SparseFourierFunction, order: AblationOrder, seed: u64) -> Vec<(Frequency, f64)> {
    let mut terms: Vec<(Frequency, f64)> = g.iter().map(|(f, c)| (f.clone(), c)).collect();
    terms.shuffle(&mut rng::stream(seed));
    match order {
        AblationOrder::AmplitudeAsc => terms.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs())),
        AblationOrder::DegreeDesc => terms.sort_by_key(|t| std::cmp::Reverse(t.0.degree())),
    }
    terms
}

/// Removes the terms of `g` one at a time and records hold-out R² of each
/// truncation, starting with the untouched function at step 0.
pub fn ablate(g: &SparseFourierFunction, order: AblationOrder, eval: &Dataset, seed: u64) -> Result<Vec<AblationStep>> {
    if g.is_empty() {
        return Err(Error::InvalidArgument("ablation needs a nonempty support".into()));
    }
    if eval.dimension() != g.dimension() {
        return Err(Error::LengthMismatch {
            what: "evaluation set dimension",
            expected: g.dimension(),
            actual: eval.dimension(),
        });
    }
    let mut predictions = g.evaluate_many(eval.inputs());
    let mut steps = vec![AblationStep {
        step: 0,
        support_size: g.len(),
        r2: r2_score(&predictions, eval.targets())?,
    }];
    for (k, (f, c)) in removal_order(g, order, seed).into_iter().enumerate() {
        for (p, x) in predictions.iter_mut().zip(eval.inputs()) {
            *p -= c * f.character(x);
        }
        steps.push(AblationStep {
            step: k + 1,
            support_size: g.len() - k - 1,
            r2: r2_score(&predictions, eval.targets())?,
        });
    }
    Ok(steps)
}

/// Mean R² over all steps of an ablation curve.
pub fn mean_r2(steps: &[AblationStep]) -> f64 {
    steps.iter().map(|s| s.r2).sum::<f64>() / steps.len() as f64
}

/// Writes `order,step,support_size,r2` rows.
pub fn write_ablation_csv(curves: &[(AblationOrder, Vec<AblationStep>)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["order", "step", "support_size", "r2"])?;
    for (order, steps) in curves {
        for s in steps {
            w.write_record([order.name().to_string(), s.step.to_string(), s.support_size.to_string(), format_real(s.r2)])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Random tree with every internal node splitting on a uniform feature and
/// leaves uniform in `[-1, 1]`. Branches stop early with probability
/// `stop` at each level below the root.
pub fn random_tree(n: usize, depth: usize, stop: f64, r: &mut impl Rng) -> DecisionTree {
    fn node(n: usize, depth: usize, stop: f64, top: bool, r: &mut impl Rng) -> TreeNode {
        if depth == 0 || (!top && r.random_bool(stop)) {
            return TreeNode::Leaf(r.random_range(-1.0..1.0));
        }
        let feature = r.random_range(0..n);
        let left = node(n, depth - 1, stop, false, r);
        let right = node(n, depth - 1, stop, false, r);
        TreeNode::split(feature, left, right)
    }
    DecisionTree {
        dimension: n,
        root: node(n, depth, stop, true, r),
    }
}
