//! Pseudo-boolean functions and the Walsh-Hadamard transform.
//!
//! Dense vectors of length `2^n` use binary-counting order: index `j`
//! encodes the cube point (or frequency) whose feature `i` equals bit
//! `n - 1 - i` of `j`. Feature 0 is therefore the most significant bit, so
//! `index(e_{n-1}) = 1` and `index(e_0) = 2^{n-1}`.
//!
//! Two coefficient conventions are used:
//!
//! * [`Spectrum`] holds orthonormal coefficients,
//!   `ĝ(f) = 2^{-n/2} Σ_x g(x) (-1)^{<f,x>}`.
//! * [`SparseFourierFunction`] holds evaluation-convention coefficients,
//!   `g(x) = Σ_f c(f) (-1)^{<f,x>}`, so `ĝ(f) = 2^{n/2} c(f)`.
//!
//! [`SparseFourierFunction::to_spectrum`] and [`sparse_from_dense`] are the
//! only conversions between the two.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest dimension accepted by the dense transforms.
pub const MAX_DENSE_DIMENSION: usize = 30;

/// A packed zero-one vector of fixed length.
///
/// Used both for frequencies and for points of the Boolean cube. Bit `i` of
/// the vector is feature `i`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

/// A frequency indexing the Walsh basis function `(-1)^{<f,x>}`.
pub type Frequency = BitVector;

fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector {
            len,
            words: vec![0; word_count(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.set(i, true);
        }
        v
    }

    /// The standard basis vector `e_i`.
    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(i, true);
        v
    }

    /// Builds a vector from `0`/`1` entries.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => v.set(i, true),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "bit {i} has value {other}, expected 0 or 1"
                    )))
                }
            }
        }
        Ok(v)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn from_indices(len: usize, ones: &[usize]) -> Result<Self> {
        let mut v = Self::zeros(len);
        for &i in ones {
            if i >= len {
                return Err(Error::InvalidArgument(format!(
                    "feature index {i} out of range for dimension {len}"
                )));
            }
            v.set(i, true);
        }
        Ok(v)
    }

    /// Inverse of [`BitVector::to_index`].
    pub fn from_index(len: usize, index: usize) -> Self {
        debug_assert!(len <= 63 && index < (1usize << len));
        let mut v = Self::zeros(len);
        for i in 0..len {
            if (index >> (len - 1 - i)) & 1 == 1 {
                v.set(i, true);
            }
        }
        v
    }

    /// Binary-counting index: feature `i` is bit `len - 1 - i`.
    pub fn to_index(&self) -> usize {
        debug_assert!(self.len <= 63);
        self.iter_ones()
            .fold(0usize, |acc, i| acc | (1usize << (self.len - 1 - i)))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let current = self.get(i);
        self.set(i, !current);
    }

    /// Number of ones.
    pub fn degree(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `<self, other> mod 2`.
    #[inline]
    pub fn dot_parity(&self, other: &BitVector) -> bool {
        debug_assert_eq!(self.len, other.len);
        let ones: u32 = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        ones & 1 == 1
    }

    /// `(-1)^{<self, other>}`.
    #[inline]
    pub fn character(&self, x: &BitVector) -> f64 {
        if self.dot_parity(x) {
            -1.0
        } else {
            1.0
        }
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        debug_assert_eq!(self.len, other.len);
        BitVector {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    pub fn xor_assign(&mut self, other: &BitVector) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let bit = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(w * 64 + bit)
                }
            })
        })
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| u8::from(self.get(i))).collect()
    }

    /// Writes the vector as `0.0`/`1.0` network inputs.
    pub fn write_row(&self, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.len);
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = if self.get(i) { 1.0 } else { 0.0 };
        }
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidArgument(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        BitVector::from_bits(&bits)
    }
}

/// All points of `{0,1}^n` in binary-counting order.
pub fn cube_points(n: usize) -> Result<Vec<BitVector>> {
    check_dense_dimension(n, "cube enumeration")?;
    Ok((0..1usize << n).map(|j| BitVector::from_index(n, j)).collect())
}

fn check_dense_dimension(n: usize, what: &'static str) -> Result<()> {
    if n > MAX_DENSE_DIMENSION {
        return Err(Error::Capacity {
            what,
            dimension: n,
            max: MAX_DENSE_DIMENSION,
        });
    }
    Ok(())
}

fn dimension_of_length(len: usize, what: &'static str) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "{what}: length {len} is not a power of two"
        )));
    }
    Ok(len.trailing_zeros() as usize)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// A real-valued function on `{0,1}^n`.
pub trait CubeFunction {
    fn dimension(&self) -> usize;

    fn evaluate(&self, x: &BitVector) -> f64;

    /// Batched evaluation; implementors with a faster batched path override it.
    fn evaluate_many(&self, xs: &[BitVector]) -> Vec<f64> {
        xs.iter().map(|x| self.evaluate(x)).collect()
    }
}

impl<T: CubeFunction + ?Sized> CubeFunction for &T {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        (**self).evaluate(x)
    }

    fn evaluate_many(&self, xs: &[BitVector]) -> Vec<f64> {
        (**self).evaluate_many(xs)
    }
}

/// Adapts a closure into a [`CubeFunction`].
pub struct FnCubeFunction<F> {
    dimension: usize,
    f: F,
}

impl<F: Fn(&BitVector) -> f64> FnCubeFunction<F> {
    pub fn new(dimension: usize, f: F) -> Self {
        FnCubeFunction { dimension, f }
    }
}

impl<F: Fn(&BitVector) -> f64> CubeFunction for FnCubeFunction<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        (self.f)(x)
    }
}

/// Time-domain values on the whole cube.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFunction {
    dimension: usize,
    values: Vec<f64>,
}

impl DenseFunction {
    pub fn new(dimension: usize, values: Vec<f64>) -> Result<Self> {
        check_dense_dimension(dimension, "dense function")?;
        if values.len() != 1 << dimension {
            return Err(Error::LengthMismatch {
                what: "dense function values",
                expected: 1 << dimension,
                actual: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(DenseFunction { dimension, values })
    }

    /// Infers the dimension from a power-of-two length.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = dimension_of_length(values.len(), "dense function")?;
        Self::new(n, values)
    }

    pub fn zeros(dimension: usize) -> Result<Self> {
        check_dense_dimension(dimension, "dense function")?;
        Ok(DenseFunction {
            dimension,
            values: vec![0.0; 1 << dimension],
        })
    }

    /// Evaluates `g` on every cube point.
    pub fn densify(g: &impl CubeFunction) -> Result<Self> {
        let points = cube_points(g.dimension())?;
        Self::new(g.dimension(), g.evaluate_many(&points))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

impl CubeFunction for DenseFunction {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        self.values[x.to_index()]
    }
}

/// Orthonormal Walsh-Hadamard coefficients in binary-counting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    dimension: usize,
    coefficients: Vec<f64>,
}

impl Spectrum {
    pub fn new(dimension: usize, coefficients: Vec<f64>) -> Result<Self> {
        check_dense_dimension(dimension, "spectrum")?;
        if coefficients.len() != 1 << dimension {
            return Err(Error::LengthMismatch {
                what: "spectrum coefficients",
                expected: 1 << dimension,
                actual: coefficients.len(),
            });
        }
        check_finite(&coefficients)?;
        Ok(Spectrum {
            dimension,
            coefficients,
        })
    }

    pub fn from_coefficients(coefficients: Vec<f64>) -> Result<Self> {
        let n = dimension_of_length(coefficients.len(), "spectrum")?;
        Self::new(n, coefficients)
    }

    pub fn zeros(dimension: usize) -> Result<Self> {
        check_dense_dimension(dimension, "spectrum")?;
        Ok(Spectrum {
            dimension,
            coefficients: vec![0.0; 1 << dimension],
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn coefficient(&self, f: &Frequency) -> f64 {
        self.coefficients[f.to_index()]
    }

    pub fn squared_norm(&self) -> f64 {
        self.coefficients.iter().map(|v| v * v).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|v| v.abs()).sum()
    }
}

/// Unnormalized in-place Walsh-Hadamard butterfly (multiplication by `H_n`).
///
/// `data.len()` must be a power of two.
pub fn wht_in_place(data: &mut [f64]) {
    let len = data.len();
    assert!(len.is_power_of_two(), "length {len} is not a power of two");
    let mut half = 1;
    while half < len {
        for block in data.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
}

/// Orthonormal transform `ĝ = 2^{-n/2} H_n g(X)`; the input is not modified.
pub fn fwht(g: &DenseFunction) -> Result<Spectrum> {
    check_dense_dimension(g.dimension, "fwht")?;
    let mut coefficients = g.values.clone();
    wht_in_place(&mut coefficients);
    let scale = (g.values.len() as f64).sqrt().recip();
    coefficients.iter_mut().for_each(|c| *c *= scale);
    Ok(Spectrum {
        dimension: g.dimension,
        coefficients,
    })
}

/// Inverse of [`fwht`]; the orthonormal transform is its own inverse.
pub fn ifwht(s: &Spectrum) -> Result<DenseFunction> {
    check_dense_dimension(s.dimension, "ifwht")?;
    let mut values = s.coefficients.clone();
    wht_in_place(&mut values);
    let scale = (values.len() as f64).sqrt().recip();
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(DenseFunction {
        dimension: s.dimension,
        values,
    })
}

/// Degree of a frequency (number of ones).
pub fn degree(f: &Frequency) -> usize {
    f.degree()
}

/// Keeps coefficients with `|ĝ(f)| > threshold`, converted to the evaluation
/// convention.
pub fn sparse_from_dense(s: &Spectrum, threshold: f64) -> Result<SparseFourierFunction> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    let scale = ((1usize << s.dimension) as f64).sqrt().recip();
    let mut out = SparseFourierFunction::zero(s.dimension);
    for (j, &c) in s.coefficients.iter().enumerate() {
        if c.abs() > threshold {
            out.add_term(BitVector::from_index(s.dimension, j), c * scale);
        }
    }
    Ok(out)
}

/// A Fourier-sparse function stored in the evaluation convention.
///
/// No stored coefficient is exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFourierFunction {
    dimension: usize,
    terms: BTreeMap<Frequency, f64>,
}

impl SparseFourierFunction {
    pub fn zero(dimension: usize) -> Self {
        SparseFourierFunction {
            dimension,
            terms: BTreeMap::new(),
        }
    }

    /// Builds a function from `(frequency, coefficient)` pairs; repeated
    /// frequencies are summed.
    pub fn from_terms(
        dimension: usize,
        terms: impl IntoIterator<Item = (Frequency, f64)>,
    ) -> Result<Self> {
        let mut out = Self::zero(dimension);
        for (f, c) in terms {
            if f.len() != dimension {
                return Err(Error::LengthMismatch {
                    what: "frequency",
                    expected: dimension,
                    actual: f.len(),
                });
            }
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "coefficient for {f} is not finite"
                )));
            }
            out.add_term(f, c);
        }
        Ok(out)
    }

    /// Adds `c` to the coefficient of `f`, dropping the term if it becomes zero.
    pub fn add_term(&mut self, f: Frequency, c: f64) {
        debug_assert_eq!(f.len(), self.dimension);
        if c == 0.0 {
            return;
        }
        match self.terms.entry(f) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                let sum = *slot.get() + c;
                if sum == 0.0 {
                    slot.remove();
                } else {
                    *slot.get_mut() = sum;
                }
            }
        }
    }

    pub fn remove_term(&mut self, f: &Frequency) -> Option<f64> {
        self.terms.remove(f)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn coefficient(&self, f: &Frequency) -> f64 {
        self.terms.get(f).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> &BTreeMap<Frequency, f64> {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Frequency, f64)> + '_ {
        self.terms.iter().map(|(f, &c)| (f, c))
    }

    pub fn support(&self) -> impl Iterator<Item = &Frequency> + '_ {
        self.terms.keys()
    }

    /// Sparsity `k = |supp|`.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> usize {
        self.terms.keys().map(BitVector::degree).max().unwrap_or(0)
    }

    /// `Σ_f c(f) (-1)^{<f,x>}`.
    pub fn evaluate_checked(&self, x: &BitVector) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::LengthMismatch {
                what: "input",
                expected: self.dimension,
                actual: x.len(),
            });
        }
        Ok(self.evaluate(x))
    }

    /// Multiplies every coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = Self::zero(self.dimension);
        for (f, c) in self.iter() {
            out.add_term(f.clone(), c * factor);
        }
        out
    }

    /// Orthonormal spectrum: each coefficient is multiplied by `2^{n/2}`.
    pub fn to_spectrum(&self) -> Result<Spectrum> {
        let mut s = Spectrum::zeros(self.dimension)?;
        let scale = ((1usize << self.dimension) as f64).sqrt();
        for (f, c) in self.iter() {
            s.coefficients[f.to_index()] = c * scale;
        }
        Ok(s)
    }

    /// Writes the `n=<dim>,convention=evaluation` text format.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "n={},convention=evaluation", self.dimension)?;
        for (f, c) in self.iter() {
            writeln!(out, "{f},{c}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("text format is ASCII")
    }

    pub fn read_text(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header = header.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let dimension = parse_sparse_header(&header)?;
        let mut out = Self::zero(dimension);
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (bits, coef) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected `bitstring,coefficient`".into(),
            })?;
            let f: Frequency = bits.parse().map_err(|e: Error| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if f.len() != dimension {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("bit string has length {}, header says {dimension}", f.len()),
                });
            }
            let c: f64 = coef.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid coefficient {coef:?}"),
            })?;
            if !c.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "coefficient is not finite".into(),
                });
            }
            out.add_term(f, c);
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::read_text(text.as_bytes())
    }
}

fn parse_sparse_header(header: &str) -> Result<usize> {
    let mut dimension = None;
    for field in header.trim().split(',') {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("malformed header field {field:?}"),
        })?;
        match key.trim() {
            "n" => {
                dimension = Some(value.trim().parse::<usize>().map_err(|_| Error::Parse {
                    line: 1,
                    message: format!("invalid dimension {value:?}"),
                })?)
            }
            "convention" if value.trim() == "evaluation" => {}
            "convention" => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unsupported convention {value:?}"),
                })
            }
            other => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unknown header key {other:?}"),
                })
            }
        }
    }
    dimension.ok_or(Error::Parse {
        line: 1,
        message: "header lacks `n=`".into(),
    })
}

impl CubeFunction for SparseFourierFunction {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        self.terms.iter().map(|(f, &c)| c * f.character(x)).sum()
    }
}
