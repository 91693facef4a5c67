//! Spectral approximation error, spectral energy, R² and per-epoch spectrum
//! snapshots of a network.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{cube_points, fwht, BitVector, CubeFunction, DenseFunction, Frequency, SparseFourierFunction, Spectrum};
use crate::rng;

/// Largest input dimension for full-spectrum snapshots.
pub const FULL_SNAPSHOT_MAX_DIMENSION: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub enum Membership {
    All,
    Degree(usize),
    Explicit(Vec<Frequency>),
}

/// A named subset of frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencySet {
    pub name: String,
    pub membership: Membership,
}

impl FrequencySet {
    pub fn all() -> Self {
        FrequencySet {
            name: "all".into(),
            membership: Membership::All,
        }
    }

    pub fn degree(d: usize) -> Self {
        FrequencySet {
            name: format!("degree_{d}"),
            membership: Membership::Degree(d),
        }
    }

    pub fn explicit(name: impl Into<String>, freqs: Vec<Frequency>) -> Self {
        FrequencySet {
            name: name.into(),
            membership: Membership::Explicit(freqs),
        }
    }

    /// The support of `g`.
    pub fn support(g: &SparseFourierFunction) -> Self {
        Self::explicit("target_support", g.support().cloned().collect())
    }

    pub fn contains(&self, f: &Frequency) -> bool {
        match &self.membership {
            Membership::All => true,
            Membership::Degree(d) => f.degree() == *d,
            Membership::Explicit(list) => list.contains(f),
        }
    }

    /// Dense indices of the members for an `n`-dimensional spectrum.
    fn indices(&self, n: usize) -> Vec<usize> {
        match &self.membership {
            Membership::All => (0..1usize << n).collect(),
            Membership::Degree(d) => (0..1usize << n)
                .filter(|j| j.count_ones() as usize == *d)
                .collect(),
            Membership::Explicit(list) => {
                let mut idx: Vec<usize> = list.iter().map(BitVector::to_index).collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            }
        }
    }
}

fn sae_from_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> Result<f64> {
    let (num, den) = pairs.fold((0.0, 0.0), |(num, den), (net, target)| {
        (num + (net - target).powi(2), den + target * target)
    });
    if den == 0.0 {
        return Err(Error::UndefinedMetric("target has zero energy on the frequency set"));
    }
    Ok(num / den)
}

/// `‖ĝ_N|_S - ĝ*|_S‖² / ‖ĝ*|_S‖²`.
pub fn sae(net: &Spectrum, target: &Spectrum, set: &FrequencySet) -> Result<f64> {
    if net.dimension() != target.dimension() {
        return Err(Error::LengthMismatch {
            what: "spectrum dimension",
            expected: target.dimension(),
            actual: net.dimension(),
        });
    }
    let (a, b) = (net.coefficients(), target.coefficients());
    sae_from_pairs(set.indices(net.dimension()).into_iter().map(|j| (a[j], b[j])))
}

/// `Σ_{f∈S} ĝ(f)²`.
pub fn energy(spectrum: &Spectrum, set: &FrequencySet) -> f64 {
    let c = spectrum.coefficients();
    set.indices(spectrum.dimension())
        .into_iter()
        .map(|j| c[j] * c[j])
        .sum()
}

/// `1 - Σ(y - ŷ)² / Σ(y - ȳ)²`.
pub fn r2_score(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    if targets.len() < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two targets"));
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let total: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if total == 0.0 {
        return Err(Error::UndefinedMetric("R² is undefined for constant targets"));
    }
    let resid: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (y - p).powi(2))
        .sum();
    Ok(1.0 - resid / total)
}

/// How a snapshot obtains the network's coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum SnapshotMode {
    /// Densify over the whole cube and transform (`n ≤ 16`).
    Full,
    /// Analysis sums for the listed frequencies only, over the whole cube
    /// (`samples = None`) or over uniformly sampled points.
    Restricted { samples: Option<usize>, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SnapshotCoefficients {
    Full(Spectrum),
    Restricted(Vec<(Frequency, f64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetMetrics {
    pub set_name: String,
    /// `None` when the target has no energy on the set.
    pub sae: Option<f64>,
    pub energy: f64,
}

/// The network's spectrum at the end of an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSnapshot {
    pub run_id: String,
    pub seeds: [u64; 3],
    pub epoch: usize,
    pub coefficients: SnapshotCoefficients,
    pub sets: Vec<SetMetrics>,
}

impl SpectrumSnapshot {
    /// Orthonormal coefficient of `f`, if recorded.
    pub fn coefficient(&self, f: &Frequency) -> Option<f64> {
        match &self.coefficients {
            SnapshotCoefficients::Full(s) => Some(s.coefficient(f)),
            SnapshotCoefficients::Restricted(list) => list.iter().find(|(g, _)| g == f).map(|(_, c)| *c),
        }
    }

    pub fn metrics(&self, set_name: &str) -> Option<&SetMetrics> {
        self.sets.iter().find(|m| m.set_name == set_name)
    }
}

/// Spectrum of `net` with SAE and energy on each set, measured against
/// `target`.
pub fn snapshot_hook(
    net: &impl CubeFunction,
    target: &SparseFourierFunction,
    sets: &[FrequencySet],
    mode: &SnapshotMode,
    epoch: usize,
) -> Result<SpectrumSnapshot> {
    let n = net.dimension();
    if target.dimension() != n {
        return Err(Error::LengthMismatch {
            what: "target dimension",
            expected: n,
            actual: target.dimension(),
        });
    }
    match mode {
        SnapshotMode::Full => {
            if n > FULL_SNAPSHOT_MAX_DIMENSION {
                return Err(Error::Capacity {
                    what: "full-spectrum snapshot",
                    dimension: n,
                    max: FULL_SNAPSHOT_MAX_DIMENSION,
                });
            }
            let spectrum = fwht(&DenseFunction::densify(net)?)?;
            let target_spectrum = target.to_spectrum()?;
            let metrics = sets
                .iter()
                .map(|s| SetMetrics {
                    set_name: s.name.clone(),
                    sae: sae(&spectrum, &target_spectrum, s).ok(),
                    energy: energy(&spectrum, s),
                })
                .collect();
            Ok(SpectrumSnapshot {
                run_id: String::new(),
                seeds: [0; 3],
                epoch,
                coefficients: SnapshotCoefficients::Full(spectrum),
                sets: metrics,
            })
        }
        SnapshotMode::Restricted { samples, seed } => {
            let mut freqs: Vec<Frequency> = Vec::new();
            for s in sets {
                match &s.membership {
                    Membership::Explicit(list) => freqs.extend(list.iter().cloned()),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "restricted snapshots need explicit frequency sets; `{}` is a predicate",
                            s.name
                        )))
                    }
                }
            }
            freqs.sort();
            freqs.dedup();
            let coefficients = analysis_sums(net, &freqs, *samples, *seed)?;
            let lookup = |f: &Frequency| {
                coefficients
                    .binary_search_by(|(g, _)| g.cmp(f))
                    .map(|i| coefficients[i].1)
                    .unwrap_or(0.0)
            };
            let scale = 2f64.powf(n as f64 / 2.0);
            let metrics = sets
                .iter()
                .map(|s| {
                    let Membership::Explicit(list) = &s.membership else {
                        unreachable!("checked above")
                    };
                    let pairs = list.iter().map(|f| (lookup(f), target.coefficient(f) * scale));
                    SetMetrics {
                        set_name: s.name.clone(),
                        sae: sae_from_pairs(pairs).ok(),
                        energy: list.iter().map(|f| lookup(f).powi(2)).sum(),
                    }
                })
                .collect();
            Ok(SpectrumSnapshot {
                run_id: String::new(),
                seeds: [0; 3],
                epoch,
                coefficients: SnapshotCoefficients::Restricted(coefficients),
                sets: metrics,
            })
        }
    }
}

/// Orthonormal coefficients of the listed frequencies by explicit analysis
/// sums. With `samples = Some(m)` the sum runs over `m` uniform points and is
/// rescaled to an unbiased estimate.
fn analysis_sums(
    net: &impl CubeFunction,
    freqs: &[Frequency],
    samples: Option<usize>,
    seed: u64,
) -> Result<Vec<(Frequency, f64)>> {
    let n = net.dimension();
    let points = match samples {
        None => cube_points(n)?,
        Some(0) => return Err(Error::InvalidArgument("sampled snapshots need at least one point".into())),
        Some(m) => {
            let mut r = rng::stream(seed);
            (0..m)
                .map(|_| {
                    let mut x = BitVector::zeros(n);
                    for i in 0..n {
                        x.set(i, r.random());
                    }
                    x
                })
                .collect()
        }
    };
    let values = net.evaluate_many(&points);
    // ĝ(f) = 2^{-n/2} Σ_x g(x)χ_f(x) = 2^{n/2} E_x[g(x)χ_f(x)]
    let scale = 2f64.powf(n as f64 / 2.0) / points.len() as f64;
    Ok(freqs
        .iter()
        .map(|f| {
            let sum: f64 = points.iter().zip(&values).map(|(x, v)| v * f.character(x)).sum();
            (f.clone(), sum * scale)
        })
        .collect())
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::fourier::FnCubeFunction;
    use crate::mlp::MlpModel;
    use proptest::prelude::*;

    fn ladder_target() -> SparseFourierFunction {
        let n = 10;
        SparseFourierFunction::from_terms(
            n,
            [
                (BitVector::from_indices(n, &[2]).unwrap(), 1.0),
                (BitVector::from_indices(n, &[0, 5]).unwrap(), 1.0),
                (BitVector::from_indices(n, &[1, 3, 9]).unwrap(), 1.0),
                (BitVector::from_indices(n, &[4, 6, 7, 8]).unwrap(), 1.0),
                (BitVector::from_indices(n, &[0, 1, 2, 3, 4]).unwrap(), 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn sae_examples() {
        let target = ladder_target().to_spectrum().unwrap();
        let all = FrequencySet::all();
        assert_eq!(sae(&target, &target, &all).unwrap(), 0.0);
        let zero = Spectrum::zeros(10).unwrap();
        assert_eq!(sae(&zero, &target, &all).unwrap(), 1.0);
        let double = Spectrum::new(10, target.coefficients().iter().map(|c| 2.0 * c).collect()).unwrap();
        assert!((sae(&double, &target, &all).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            sae(&double, &target, &FrequencySet::degree(7)),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn energy_examples() {
        let g = ladder_target();
        let s = g.to_spectrum().unwrap();
        let g_dense = DenseFunction::densify(&g).unwrap();
        assert!((energy(&s, &FrequencySet::all()) - g_dense.squared_norm()).abs() < 1e-9);
        let by_degree: f64 = (0..=10).map(|d| energy(&s, &FrequencySet::degree(d))).sum();
        assert!((by_degree - energy(&s, &FrequencySet::all())).abs() < 1e-9);
        let support = FrequencySet::support(&g);
        assert!((energy(&s, &support) - 5.0 * 1024.0).abs() < 1e-9);
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 4.0, -3.0];
        assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        let mean = y.iter().sum::<f64>() / 4.0;
        assert!(r2_score(&[mean; 4], &y).unwrap().abs() < 1e-15);
        let flipped: Vec<f64> = y.iter().map(|v| 2.0 * mean - v).collect();
        assert!(r2_score(&flipped, &y).unwrap() < 0.0);
        assert!(r2_score(&[1.0, 1.0], &[3.0, 3.0]).is_err());
        assert!(r2_score(&[1.0], &[3.0]).is_err());
    }

    #[test]
    fn snapshot_of_zero_network_is_zero() {
        let net = MlpModel::zeroed(&[10, 4, 1], 0.01).unwrap();
        let snap = snapshot_hook(&net, &ladder_target(), &[FrequencySet::all()], &SnapshotMode::Full, 0).unwrap();
        let SnapshotCoefficients::Full(s) = &snap.coefficients else { panic!() };
        assert!(s.coefficients().iter().all(|&c| c == 0.0));
        assert_eq!(snap.metrics("all").unwrap().sae, Some(1.0));
    }

    #[test]
    fn snapshot_of_target_is_exact() {
        let g = ladder_target();
        let sets = vec![FrequencySet::all(), FrequencySet::support(&g), FrequencySet::degree(3)];
        let snap = snapshot_hook(&g, &g, &sets, &SnapshotMode::Full, 1).unwrap();
        for m in &snap.sets {
            assert!(m.sae.unwrap() < 1e-20, "{m:?}");
        }
        for (f, c) in g.iter() {
            assert!((snap.coefficient(f).unwrap() - 32.0 * c).abs() < 1e-10);
        }
        let restricted = snapshot_hook(
            &g,
            &g,
            &[FrequencySet::support(&g)],
            &SnapshotMode::Restricted { samples: None, seed: 0 },
            1,
        )
        .unwrap();
        assert!(restricted.sets[0].sae.unwrap() < 1e-20);
    }

    #[test]
    fn snapshot_capacity_and_restricted_sampling() {
        let n = 20;
        let f = BitVector::from_indices(n, &[1, 17]).unwrap();
        let g = SparseFourierFunction::from_terms(n, [(f.clone(), 0.5)]).unwrap();
        let net = FnCubeFunction::new(n, |x| g.evaluate(x));
        assert!(matches!(
            snapshot_hook(&net, &g, &[FrequencySet::support(&g)], &SnapshotMode::Full, 0),
            Err(Error::Capacity { .. })
        ));
        let snap = snapshot_hook(
            &net,
            &g,
            &[FrequencySet::support(&g)],
            &SnapshotMode::Restricted { samples: Some(500), seed: 3 },
            0,
        )
        .unwrap();
        // a pure character is estimated exactly from any sample
        let want = 0.5 * 2f64.powi(10);
        assert!((snap.coefficient(&f).unwrap() - want).abs() < 1e-9);
        assert!(snapshot_hook(&net, &g, &[FrequencySet::degree(2)], &SnapshotMode::Restricted { samples: Some(5), seed: 0 }, 0).is_err());
    }

    proptest! {
        #[test]
        fn r2_shift_invariant(ys in proptest::collection::vec(-10.0f64..10.0, 3..30), shift in -50.0f64..50.0, noise in -1.0f64..1.0) {
            let preds: Vec<f64> = ys.iter().enumerate().map(|(i, y)| y + noise * (i as f64).sin()).collect();
            prop_assume!(ys.iter().any(|y| (y - ys[0]).abs() > 1e-6));
            let a = r2_score(&preds, &ys).unwrap();
            let sp: Vec<f64> = preds.iter().map(|p| p + shift).collect();
            let sy: Vec<f64> = ys.iter().map(|y| y + shift).collect();
            let b = r2_score(&sp, &sy).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn degree_partition_reconciles_full_sae(seed in any::<u64>()) {
            let mut r = rng::stream(seed);
            let n = 6;
            let net = Spectrum::new(n, (0..64).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let target = Spectrum::new(n, (0..64).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
            let full = sae(&net, &target, &FrequencySet::all()).unwrap();
            let total_energy = energy(&target, &FrequencySet::all());
            let combined: f64 = (0..=n)
                .map(|d| {
                    let set = FrequencySet::degree(d);
                    sae(&net, &target, &set).unwrap() * energy(&target, &set)
                })
                .sum::<f64>() / total_energy;
            prop_assert!((full - combined).abs() < 1e-9);
        }
    }
}
