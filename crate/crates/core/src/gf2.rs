//! Hashing matrices over GF(2) and the hashed view of a spectrum.
//!
//! A hashing matrix `σ ∈ {0,1}^{n×b}` maps frequencies to buckets via
//! `f ↦ σᵀf` and maps `b`-dimensional points into the cube via `x̃ ↦ σx̃`,
//! both mod 2. Both directions only need the `b` columns of `σ` (the rows of
//! `σᵀ`), which are stored as packed [`BitVector`]s.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fourier::{BitVector, CubeFunction, DenseFunction, Frequency, Spectrum, MAX_DENSE_DIMENSION};

#[derive(Clone, PartialEq, Eq)]
pub struct HashingMatrix {
    n: usize,
    /// Row `r` of `σᵀ`, i.e. column `r` of `σ`, as an `n`-bit vector.
    columns: Vec<BitVector>,
}

impl HashingMatrix {
    /// Samples every entry independently and uniformly from `{0,1}`.
    pub fn sample<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Result<Self> {
        check_shape(n, b)?;
        let columns = (0..b)
            .map(|_| {
                let mut col = BitVector::zeros(n);
                for i in 0..n {
                    col.set(i, rng.random::<bool>());
                }
                col
            })
            .collect();
        Ok(HashingMatrix { n, columns })
    }

    /// Builds `σ` from the rows of `σᵀ` (each an `n`-bit vector).
    pub fn from_columns(n: usize, columns: Vec<BitVector>) -> Result<Self> {
        check_shape(n, columns.len())?;
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::LengthMismatch {
                what: "hashing matrix row",
                expected: n,
                actual: bad.len(),
            });
        }
        Ok(HashingMatrix { n, columns })
    }

    /// The `n×n` identity.
    pub fn identity(n: usize) -> Result<Self> {
        Self::from_columns(n, (0..n).map(|i| BitVector::unit(n, i)).collect())
    }

    pub fn zeros(n: usize, b: usize) -> Result<Self> {
        Self::from_columns(n, vec![BitVector::zeros(n); b])
    }

    /// Entry `σ[i][r]`.
    pub fn entry(&self, i: usize, r: usize) -> bool {
        self.columns[r].get(i)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn b(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[BitVector] {
        &self.columns
    }

    /// `σᵀf mod 2` as a `b`-bit vector.
    pub fn bucket(&self, f: &Frequency) -> BitVector {
        debug_assert_eq!(f.len(), self.n);
        let mut out = BitVector::zeros(self.b());
        for (r, col) in self.columns.iter().enumerate() {
            if col.dot_parity(f) {
                out.set(r, true);
            }
        }
        out
    }

    /// Binary-counting index of [`HashingMatrix::bucket`].
    pub fn bucket_index(&self, f: &Frequency) -> usize {
        let b = self.b();
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, col)| col.dot_parity(f))
            .fold(0, |acc, (r, _)| acc | (1 << (b - 1 - r)))
    }

    /// `σx̃ mod 2` for a `b`-bit point.
    pub fn map_point(&self, x: &BitVector) -> BitVector {
        debug_assert_eq!(x.len(), self.b());
        let mut out = BitVector::zeros(self.n);
        for r in x.iter_ones() {
            out.xor_assign(&self.columns[r]);
        }
        out
    }

    /// `X_b σᵀ mod 2`: the images of all `2^b` points in binary-counting order.
    pub fn probe_points(&self) -> Vec<BitVector> {
        let b = self.b();
        let count = 1usize << b;
        let mut points = Vec::with_capacity(count);
        points.push(BitVector::zeros(self.n));
        for j in 1..count {
            let low = j.trailing_zeros() as usize;
            let mut p = points[j & (j - 1)].clone();
            p.xor_assign(&self.columns[b - 1 - low]);
            points.push(p);
        }
        points
    }

    /// Rank over GF(2).
    pub fn rank(&self) -> usize {
        let mut basis: Vec<BitVector> = Vec::new();
        for col in &self.columns {
            let mut v = col.clone();
            for pivot_vec in &basis {
                let pivot = pivot_vec.iter_ones().next().expect("basis vectors are nonzero");
                if v.get(pivot) {
                    v.xor_assign(pivot_vec);
                }
            }
            if !v.is_zero() {
                // keep the basis in reduced form so each pivot is unique
                let pivot = v.iter_ones().next().unwrap();
                for other in basis.iter_mut() {
                    if other.get(pivot) {
                        other.xor_assign(&v);
                    }
                }
                basis.push(v);
            }
        }
        basis.len()
    }

    pub fn is_invertible(&self) -> bool {
        self.b() == self.n && self.rank() == self.n
    }

    /// `b` lines, each the `n`-bit row of `σᵀ`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for col in &self.columns {
            s.push_str(&col.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            columns.push(line.parse::<BitVector>().map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        let n = columns.first().map(BitVector::len).ok_or(Error::Parse {
            line: 1,
            message: "empty hashing matrix".into(),
        })?;
        Self::from_columns(n, columns)
    }
}

impl fmt::Debug for HashingMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashingMatrix(n={}, b={}, σᵀ=[", self.n, self.b())?;
        for (r, col) in self.columns.iter().enumerate() {
            if r > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{col}")?;
        }
        f.write_str("])")
    }
}

impl FromStr for HashingMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_text(s)
    }
}

fn check_shape(n: usize, b: usize) -> Result<()> {
    if b == 0 || b > n {
        return Err(Error::InvalidArgument(format!(
            "hashing exponent b={b} must satisfy 1 <= b <= n={n}"
        )));
    }
    if b > MAX_DENSE_DIMENSION {
        return Err(Error::Capacity {
            what: "hashing exponent",
            dimension: b,
            max: MAX_DENSE_DIMENSION,
        });
    }
    Ok(())
}

/// `u_σ(x̃) = 2^{(n-b)/2} g(σx̃)` on all `2^b` points.
pub fn subsample(g: &impl CubeFunction, sigma: &HashingMatrix) -> Result<DenseFunction> {
    if g.dimension() != sigma.n() {
        return Err(Error::LengthMismatch {
            what: "function dimension vs hashing matrix",
            expected: sigma.n(),
            actual: g.dimension(),
        });
    }
    let scale = 2f64.powf((sigma.n() - sigma.b()) as f64 / 2.0);
    let mut values = g.evaluate_many(&sigma.probe_points());
    values.iter_mut().for_each(|v| *v *= scale);
    DenseFunction::new(sigma.b(), values)
}

/// Bucketed spectrum `û_σ(f̃) = Σ_{σᵀf = f̃} ĝ(f)`, accumulated over all `2^n`
/// frequencies.
pub fn bucket_spectrum(spectrum: &Spectrum, sigma: &HashingMatrix) -> Result<Spectrum> {
    let n = spectrum.dimension();
    if n != sigma.n() {
        return Err(Error::LengthMismatch {
            what: "spectrum dimension vs hashing matrix",
            expected: sigma.n(),
            actual: n,
        });
    }
    // bucket index of each frequency index, built by GF(2) linearity from the
    // images of the unit vectors
    let unit_images: Vec<usize> = (0..n)
        .map(|i| sigma.bucket_index(&BitVector::unit(n, i)))
        .collect();
    let mut buckets = vec![0.0; 1 << sigma.b()];
    let mut bucket_of = vec![0usize; 1 << n];
    for (j, &c) in spectrum.coefficients().iter().enumerate() {
        if j > 0 {
            let low = j.trailing_zeros() as usize;
            // bit `low` of the index is feature n-1-low
            bucket_of[j] = bucket_of[j & (j - 1)] ^ unit_images[n - 1 - low];
        }
        buckets[bucket_of[j]] += c;
    }
    Spectrum::new(sigma.b(), buckets)
}

/// Number of ordered pairs `i ≠ j` with `σᵀf_i = σᵀf_j`.
///
/// The frequencies are expected to be distinct.
pub fn count_collisions(freqs: &[Frequency], sigma: &HashingMatrix) -> usize {
    bucket_occupancy(freqs, sigma)
        .values()
        .map(|&m| m * (m - 1))
        .sum()
}

fn bucket_occupancy(freqs: &[Frequency], sigma: &HashingMatrix) -> HashMap<BitVector, usize> {
    let mut counts = HashMap::new();
    for f in freqs {
        *counts.entry(sigma.bucket(f)).or_insert(0) += 1;
    }
    counts
}

/// Outcome of a collision Monte Carlo study.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionReport {
    pub k: usize,
    pub b: usize,
    pub trials: usize,
    /// Mean number of ordered colliding pairs per draw of `σ`.
    pub mean_collisions: f64,
    /// Standard error of `mean_collisions`.
    pub collisions_stderr: f64,
    /// Fraction of rounds in which frequency `i` shared its bucket.
    pub per_frequency_rates: Vec<f64>,
    /// Closed form `(k-1)^2 / 2^b`.
    pub expected: f64,
    /// Sum of the pairwise collision probabilities, `k(k-1) / 2^b`.
    pub expected_ordered_pairs: f64,
    /// Union bound `(k-1) / 2^b` on a single frequency's collision probability.
    pub union_bound: f64,
}

impl CollisionReport {
    pub fn closed_form(k: usize, b: usize) -> f64 {
        let km1 = k.saturating_sub(1) as f64;
        km1 * km1 / 2f64.powi(b as i32)
    }

    pub fn ordered_pair_expectation(k: usize, b: usize) -> f64 {
        (k * k.saturating_sub(1)) as f64 / 2f64.powi(b as i32)
    }

    /// Largest per-frequency collision rate.
    pub fn max_rate(&self) -> f64 {
        self.per_frequency_rates.iter().copied().fold(0.0, f64::max)
    }

    /// Chernoff check at `δ = 1`: every per-frequency rate is at most twice the
    /// union bound. Only meaningful for `trials >= 10^4`.
    pub fn rates_within_chernoff_bound(&self) -> bool {
        self.per_frequency_rates
            .iter()
            .all(|&r| r <= 2.0 * self.union_bound)
    }
}

/// Smallest `b` with `b >= log2((k-1)/ε)`.
pub fn buckets_for_collision_rate(k: usize, epsilon: f64) -> usize {
    let ratio = k.saturating_sub(1) as f64 / epsilon;
    if ratio <= 1.0 {
        1
    } else {
        ratio.log2().ceil().max(1.0) as usize
    }
}

/// Resamples `σ` for each of `rounds` rounds and records collisions.
pub fn collision_rate_study<R: Rng + ?Sized>(
    freqs: &[Frequency],
    b: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<CollisionReport> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("collision study needs at least one round".into()));
    }
    let k = freqs.len();
    let n = freqs.first().map(BitVector::len).unwrap_or(b);
    let mut per_frequency = vec![0usize; k];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut buckets = vec![0usize; k];
    let mut occupancy: HashMap<usize, usize> = HashMap::new();
    for _ in 0..rounds {
        let sigma = HashingMatrix::sample(n, b, rng)?;
        occupancy.clear();
        for (slot, f) in buckets.iter_mut().zip(freqs) {
            *slot = sigma.bucket_index(f);
            *occupancy.entry(*slot).or_insert(0) += 1;
        }
        let c: usize = occupancy.values().map(|&m| m * (m - 1)).sum();
        sum += c as f64;
        sum_sq += (c * c) as f64;
        for (hits, bucket) in per_frequency.iter_mut().zip(&buckets) {
            if occupancy[bucket] > 1 {
                *hits += 1;
            }
        }
    }
    let t = rounds as f64;
    let mean = sum / t;
    let variance = if rounds > 1 {
        ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(CollisionReport {
        k,
        b,
        trials: rounds,
        mean_collisions: mean,
        collisions_stderr: (variance / t).sqrt(),
        per_frequency_rates: per_frequency.iter().map(|&h| h as f64 / t).collect(),
        expected: CollisionReport::closed_form(k, b),
        expected_ordered_pairs: CollisionReport::ordered_pair_expectation(k, b),
        union_bound: k.saturating_sub(1) as f64 / 2f64.powi(b as i32),
    })
}
