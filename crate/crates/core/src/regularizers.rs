//! L1 penalties on the network's Walsh-Hadamard spectrum.
//!
//! * `fullwh`: `‖ĝ_N‖₁` on the orthonormal spectrum of the network over the
//!   whole cube.
//! * `hashwh`: `‖H_b g_N(X_b σᵀ)‖₁`, unnormalized, on `2^b` probe points
//!   drawn from the column space of a hashing matrix `σ`.
//!
//! With `b = n` and invertible `σ` the hashed value is exactly `2^{n/2}` times
//! the full value; the constant is absorbed into `λ`.
//!
//! Gradients are taken with respect to the network outputs on the probe
//! inputs, using `sign(0) = 0`. The training loop chains them through
//! [`crate::mlp::MlpModel::backward`].

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{cube_points, wht_in_place, BitVector, CubeFunction};
use crate::gf2::HashingMatrix;
use crate::mlp::bits_to_matrix;

/// Largest input dimension for which `fullwh` is evaluated.
pub const FULLWH_MAX_DIMENSION: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularizer {
    None,
    FullWh,
    HashWh { b: usize },
}

impl Regularizer {
    pub fn name(&self) -> String {
        match self {
            Regularizer::None => "standard".into(),
            Regularizer::FullWh => "fullwh".into(),
            Regularizer::HashWh { b } => format!("hashwh_b{b}"),
        }
    }

    pub fn check_dimension(&self, n: usize) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::FullWh if n > FULLWH_MAX_DIMENSION => Err(Error::Capacity {
                what: "fullwh penalty (use hashwh for larger inputs)",
                dimension: n,
                max: FULLWH_MAX_DIMENSION,
            }),
            Regularizer::FullWh => Ok(()),
            Regularizer::HashWh { b } if b == 0 || b > n => Err(Error::InvalidArgument(format!(
                "hashwh needs 1 <= b <= n, got b={b}, n={n}"
            ))),
            Regularizer::HashWh { .. } => Ok(()),
        }
    }
}

/// λ-free penalty value with its gradient on the probe outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    pub grad_wrt_outputs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyEvaluation {
    pub value: f64,
    pub grad_wrt_outputs: Vec<f64>,
    pub probe_inputs: Vec<BitVector>,
    /// The hashing matrix, for `hashwh`.
    pub sigma: Option<HashingMatrix>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `‖scale · H y‖₁` and its gradient `scale · H sign(H y)`.
fn l1_of_transform(outputs: &[f64], scale: f64) -> PenaltyValue {
    let mut t = outputs.to_vec();
    wht_in_place(&mut t);
    let value = t.iter().map(|v| (v * scale).abs()).sum();
    let mut grad: Vec<f64> = t.iter().map(|&v| sign(v)).collect();
    wht_in_place(&mut grad);
    grad.iter_mut().for_each(|g| *g *= scale);
    PenaltyValue {
        value,
        grad_wrt_outputs: grad,
    }
}

fn power_of_two_dimension(len: usize) -> Result<usize> {
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "probe output count {len} is not a power of two"
        )));
    }
    Ok(len.trailing_zeros() as usize)
}

/// `‖2^{-n/2} H_n y‖₁` for outputs `y` on the full cube (binary-counting order).
pub fn fullwh_value(outputs: &[f64]) -> Result<PenaltyValue> {
    let n = power_of_two_dimension(outputs.len())?;
    Regularizer::FullWh.check_dimension(n)?;
    Ok(l1_of_transform(outputs, ((1usize << n) as f64).sqrt().recip()))
}

/// `‖H_b y‖₁` for outputs `y` on the `2^b` hashed probes.
pub fn hashwh_value(outputs: &[f64]) -> Result<PenaltyValue> {
    power_of_two_dimension(outputs.len())?;
    Ok(l1_of_transform(outputs, 1.0))
}

pub fn fullwh_penalty(outputs_on_full_cube: &[f64]) -> Result<PenaltyEvaluation> {
    let PenaltyValue {
        value,
        grad_wrt_outputs,
    } = fullwh_value(outputs_on_full_cube)?;
    let n = outputs_on_full_cube.len().trailing_zeros() as usize;
    Ok(PenaltyEvaluation {
        value,
        grad_wrt_outputs,
        probe_inputs: cube_points(n)?,
        sigma: None,
    })
}

pub fn hashwh_penalty(net: &impl CubeFunction, sigma: &HashingMatrix) -> Result<PenaltyEvaluation> {
    if net.dimension() != sigma.n() {
        return Err(Error::LengthMismatch {
            what: "network input width vs hashing matrix",
            expected: sigma.n(),
            actual: net.dimension(),
        });
    }
    let probes = sigma.probe_points();
    let outputs = net.evaluate_many(&probes);
    let PenaltyValue {
        value,
        grad_wrt_outputs,
    } = hashwh_value(&outputs)?;
    Ok(PenaltyEvaluation {
        value,
        grad_wrt_outputs,
        probe_inputs: probes,
        sigma: Some(sigma.clone()),
    })
}

/// Penalty for one optimization step; samples a fresh `σ` for `hashwh`.
pub fn penalty_for_step<R: Rng + ?Sized>(
    regularizer: &Regularizer,
    net: &impl CubeFunction,
    rng: &mut R,
) -> Result<PenaltyEvaluation> {
    let n = net.dimension();
    regularizer.check_dimension(n)?;
    match *regularizer {
        Regularizer::None => Ok(PenaltyEvaluation {
            value: 0.0,
            grad_wrt_outputs: Vec::new(),
            probe_inputs: Vec::new(),
            sigma: None,
        }),
        Regularizer::FullWh => {
            let outputs = net.evaluate_many(&cube_points(n)?);
            fullwh_penalty(&outputs)
        }
        Regularizer::HashWh { b } => {
            let sigma = HashingMatrix::sample(n, b, rng)?;
            hashwh_penalty(net, &sigma)
        }
    }
}

/// Probe matrix that stays fixed across steps (the whole cube for `fullwh`).
pub fn fixed_probe_matrix(regularizer: &Regularizer, n: usize) -> Result<Option<Array2<f64>>> {
    regularizer.check_dimension(n)?;
    match regularizer {
        Regularizer::FullWh => Ok(Some(bits_to_matrix(&cube_points(n)?, n))),
        _ => Ok(None),
    }
}

/// Freshly hashed probe matrix `X_b σᵀ` for `hashwh`.
pub fn sampled_probe_matrix<R: Rng + ?Sized>(regularizer: &Regularizer, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    match *regularizer {
        Regularizer::HashWh { b } => {
            let sigma = HashingMatrix::sample(n, b, rng)?;
            Ok(bits_to_matrix(&sigma.probe_points(), n))
        }
        _ => Err(Error::InvalidArgument(format!(
            "{} has no sampled probes",
            regularizer.name()
        ))),
    }
}

/// Dispatches to [`fullwh_value`] or [`hashwh_value`].
pub fn penalty_from_outputs(regularizer: &Regularizer, outputs: &[f64]) -> Result<PenaltyValue> {
    match regularizer {
        Regularizer::None => Ok(PenaltyValue {
            value: 0.0,
            grad_wrt_outputs: vec![0.0; outputs.len()],
        }),
        Regularizer::FullWh => fullwh_value(outputs),
        Regularizer::HashWh { .. } => hashwh_value(outputs),
    }
}
