//! Fully-connected regression network with exact reverse-mode gradients.
//!
//! Hidden layers are `affine → LeakyReLU`; the output layer is affine with a
//! single unit. The loss is mean squared error, optionally plus a spectral
//! penalty evaluated on probe inputs (see [`crate::regularizers`]).

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{BitVector, CubeFunction};
use crate::regularizers::{self, Regularizer};
use crate::rng;
use crate::synth::Dataset;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    negative_slope: f64,
}

/// Activations kept from a forward pass for [`MlpModel::backward`].
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Array2<f64>>,
    pub output: Array1<f64>,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

/// Gradients shaped like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

#[inline]
fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

impl MlpModel {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], negative_slope: f64, rng: &mut R) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound));
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            layers,
            negative_slope,
        })
    }

    pub fn seeded(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::new(layer_dims, DEFAULT_NEGATIVE_SLOPE, &mut rng::stream(seed))
    }

    /// A model with every parameter zero.
    pub fn zeroed(layer_dims: &[usize], negative_slope: f64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(MlpModel {
            layer_dims: layer_dims.to_vec(),
            layers,
            negative_slope,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, negative_slope: f64) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            let (fan_in, fan_out) = l.weights.dim();
            if i == 0 {
                dims.push(fan_in);
            } else if dims[i] != fan_in {
                return Err(Error::LengthMismatch {
                    what: "layer fan-in",
                    expected: dims[i],
                    actual: fan_in,
                });
            }
            if l.bias.len() != fan_out {
                return Err(Error::LengthMismatch {
                    what: "bias",
                    expected: fan_out,
                    actual: l.bias.len(),
                });
            }
            dims.push(fan_out);
        }
        validate_dims(&dims)?;
        if layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(MlpModel {
            layer_dims: dims,
            layers,
            negative_slope,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn negative_slope(&self) -> f64 {
        self.negative_slope
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Reads one parameter in [`MlpModel::parameters`] order.
    pub fn parameter(&self, mut index: usize) -> f64 {
        for l in &self.layers {
            if index < l.weights.len() {
                return l.weights.as_slice().expect("standard layout")[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_parameter(&mut self, mut index: usize, value: f64) {
        for l in &mut self.layers {
            if index < l.weights.len() {
                l.weights.as_slice_mut().expect("standard layout")[index] = value;
                return;
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                l.bias[index] = value;
                return;
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn check_width(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::LengthMismatch {
                what: "input row width",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_width(&x)?;
        let last = self.layers.len() - 1;
        let mut h: Option<Array2<f64>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = h.as_ref().map_or(x.view(), |a| a.view());
            let mut z = input.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                let slope = self.negative_slope;
                z.mapv_inplace(|v| leaky(v, slope));
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer").column(0).to_owned())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_width(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        inputs.push(x.to_owned());
        let mut output = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[i].dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                let slope = self.negative_slope;
                let a = z.mapv(|v| leaky(v, slope));
                pre_activations.push(z);
                inputs.push(a);
            } else {
                output = Some(z.column(0).to_owned());
            }
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            output: output.expect("at least one layer"),
        })
    }

    /// Gradients of `Σ_i d_output[i] · ŷ_i` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView1<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.to_owned().insert_axis(Axis(1));
        for i in (0..self.layers.len()).rev() {
            let weights = cache.inputs[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].weights.t());
                let slope = self.negative_slope;
                Zip::from(&mut back)
                    .and(&cache.pre_activations[i - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d *= slope;
                        }
                    });
                delta = back;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Mean squared error and its gradient.
    pub fn mse_gradients(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Gradients)> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                what: "targets",
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        let cache = self.forward_cached(x)?;
        let (mse, d) = mse_and_grad(cache.output.view(), y);
        Ok((mse, self.backward(&cache, d.view())))
    }

    pub fn mse(&self, x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let pred = self.forward(x)?;
        Ok(mse_and_grad(pred.view(), y).0)
    }

    pub fn apply_update(&mut self, delta: &Gradients) {
        for (l, d) in self.layers.iter_mut().zip(&delta.layers) {
            l.weights += &d.weights;
            l.bias += &d.bias;
        }
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument("a model needs at least one layer".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive".into()));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::InvalidArgument("the output layer must have width 1".into()));
    }
    Ok(())
}

/// `(mean (ŷ - y)², 2(ŷ - y)/m)`.
pub fn mse_and_grad(pred: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let m = pred.len() as f64;
    let resid = &pred - &y;
    let mse = resid.dot(&resid) / m;
    (mse, resid * (2.0 / m))
}

/// Encodes bit vectors as a `rows × n` matrix of zeros and ones.
pub fn bits_to_matrix(rows: &[BitVector], n: usize) -> Array2<f64> {
    let mut x = Array2::zeros((rows.len(), n));
    for (mut row, bits) in x.axis_iter_mut(Axis(0)).zip(rows) {
        bits.write_row(row.as_slice_mut().expect("standard layout"));
    }
    x
}

impl CubeFunction for MlpModel {
    fn dimension(&self) -> usize {
        self.input_dim()
    }

    fn evaluate(&self, x: &BitVector) -> f64 {
        self.evaluate_many(std::slice::from_ref(x))[0]
    }

    fn evaluate_many(&self, xs: &[BitVector]) -> Vec<f64> {
        let x = bits_to_matrix(xs, self.input_dim());
        self.forward(x.view())
            .expect("bit vectors match the input width")
            .to_vec()
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Gradients,
    second_moment: Gradients,
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Gradients::zeros_like(model),
            second_moment: Gradients::zeros_like(model),
        }
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second_moment
    }
}

pub fn adam_step(state: &mut AdamState, model: &mut MlpModel, grads: &Gradients) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, m), v), g) in model
        .layers
        .iter_mut()
        .zip(state.first_moment.layers.iter_mut())
        .zip(state.second_moment.layers.iter_mut())
        .zip(&grads.layers)
    {
        Zip::from(&mut layer.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(update);
    }
}

/// Seeds of the three random streams of a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSeeds {
    /// Weight initialisation.
    pub init: u64,
    /// Minibatch order.
    pub data: u64,
    /// Hashing-matrix stream.
    pub sigma: u64,
}

impl TrainSeeds {
    /// Derives the three streams from one seed.
    pub fn from_seed(seed: u64) -> Self {
        TrainSeeds {
            init: rng::derive(seed, "init"),
            data: rng::derive(seed, "data"),
            sigma: rng::derive(seed, "sigma"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` runs all `max_epochs` epochs.
    pub early_stop_patience: Option<usize>,
    pub learning_rate: f64,
    pub seeds: TrainSeeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regularizer: Regularizer::None,
            lambda: 0.0,
            batch_size: 64,
            max_epochs: 500,
            early_stop_patience: Some(10),
            learning_rate: DEFAULT_LEARNING_RATE,
            seeds: TrainSeeds::from_seed(0),
        }
    }
}

impl TrainConfig {
    /// Rejects invalid settings and returns warnings for suspicious ones.
    pub fn validate(&self, input_dim: usize) -> Result<Vec<String>> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        if self.batch_size == 0 {
            errors.push("batch_size must be positive".to_string());
        }
        if self.max_epochs == 0 {
            errors.push("max_epochs must be positive".to_string());
        }
        if self.early_stop_patience == Some(0) {
            errors.push("early_stop_patience must be at least 1".to_string());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            errors.push(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0) {
            errors.push("learning_rate must be positive".to_string());
        }
        if let Err(e) = self.regularizer.check_dimension(input_dim) {
            errors.push(e.to_string());
        }
        match (&self.regularizer, self.lambda == 0.0) {
            (Regularizer::None, false) => warnings.push("lambda is ignored without a regularizer".to_string()),
            (Regularizer::FullWh | Regularizer::HashWh { .. }, true) => {
                warnings.push("regularizer selected with lambda = 0 behaves like no regularizer".to_string())
            }
            _ => {}
        }
        if errors.is_empty() {
            Ok(warnings)
        } else {
            Err(Error::Config(errors))
        }
    }
}

/// Statistics of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// MSE on the whole training set after the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    /// Mean λ-free penalty over the epoch's steps (0 without a regularizer).
    pub penalty: f64,
    /// Seconds since training started; not part of any deterministic output.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub best_model: MlpModel,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub final_model: MlpModel,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Precomputed matrices for a dataset.
struct Tensors {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Tensors {
    fn new(data: &Dataset) -> Self {
        Tensors {
            x: bits_to_matrix(data.inputs(), data.dimension()),
            y: Array1::from(data.targets().to_vec()),
        }
    }
}

/// Minibatch Adam training with per-epoch validation and early stopping.
///
/// `hook` runs at the end of every epoch with the current parameters.
pub fn train<H>(
    mut model: MlpModel,
    train_set: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    mut hook: H,
) -> Result<TrainOutcome>
where
    H: FnMut(&EpochRecord, &MlpModel) -> Result<()>,
{
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = model.input_dim();
    for d in [train_set, validation] {
        if d.dimension() != n {
            return Err(Error::LengthMismatch {
                what: "dataset dimension",
                expected: n,
                actual: d.dimension(),
            });
        }
    }
    config.validate(n)?;

    let started = Instant::now();
    let train_t = Tensors::new(train_set);
    let val_t = Tensors::new(validation);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut data_rng = rng::stream(config.seeds.data);
    let mut sigma_rng = rng::stream(config.seeds.sigma);
    let mut adam = AdamState::new(&model, config.learning_rate);
    let fixed_probes = regularizers::fixed_probe_matrix(&config.regularizer, n)?;

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, MlpModel)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut data_rng);
        let mut penalty_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = train_t.x.select(Axis(0), chunk);
            let yb = train_t.y.select(Axis(0), chunk);
            let (mse, mut grads) = model.mse_gradients(xb.view(), yb.view())?;

            let mut penalty = 0.0;
            if config.regularizer != Regularizer::None {
                let probes = match &fixed_probes {
                    Some(x) => x.clone(),
                    None => regularizers::sampled_probe_matrix(&config.regularizer, n, &mut sigma_rng)?,
                };
                let cache = model.forward_cached(probes.view())?;
                let eval = regularizers::penalty_from_outputs(&config.regularizer, cache.output.as_slice().unwrap())?;
                penalty = eval.value;
                if config.lambda != 0.0 {
                    let d = Array1::from(eval.grad_wrt_outputs);
                    grads.add_scaled(config.lambda, &model.backward(&cache, d.view()));
                }
            }
            if !mse.is_finite() || !penalty.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    mse,
                    penalty,
                });
            }
            penalty_sum += penalty;
            steps += 1;
            adam_step(&mut adam, &mut model, &grads);
        }

        let train_mse = model.mse(train_t.x.view(), train_t.y.view())?;
        let val_mse = model.mse(val_t.x.view(), val_t.y.view())?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: steps,
                mse: val_mse,
                penalty: penalty_sum,
            });
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            penalty: penalty_sum / steps as f64,
            wall_time: started.elapsed().as_secs_f64(),
        };
        hook(&record, &model)?;
        records.push(record);

        let improved = best.as_ref().is_none_or(|(_, v, _)| val_mse < *v);
        if improved {
            best = Some((epoch, val_mse, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.early_stop_patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_mse, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_model,
        best_epoch,
        best_val_mse,
        final_model: model,
        records,
        stopped_early,
    })
}

/// Writes `epoch,train_mse,val_mse,penalty` rows.
pub fn write_records_csv(records: &[EpochRecord], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

const CHECKPOINT_FORMAT: &str = "hashwh-mlp-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerData {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `fan_in × fan_out`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AdamData {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first_moment: Vec<LayerData>,
    second_moment: Vec<LayerData>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointData {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    negative_slope: f64,
    layers: Vec<LayerData>,
    adam: Option<AdamData>,
}

fn layers_to_data(layers: &[Layer]) -> Vec<LayerData> {
    layers
        .iter()
        .map(|l| LayerData {
            fan_in: l.weights.nrows(),
            fan_out: l.weights.ncols(),
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect()
}

fn layers_from_data(data: Vec<LayerData>) -> Result<Vec<Layer>> {
    data.into_iter()
        .map(|d| {
            let weights = Array2::from_shape_vec((d.fan_in, d.fan_out), d.weights)
                .map_err(|e| Error::InvalidArgument(format!("checkpoint weights: {e}")))?;
            Ok(Layer {
                weights,
                bias: Array1::from(d.bias),
            })
        })
        .collect()
}

/// Serializes the model and optional optimizer state as versioned JSON.
pub fn save_checkpoint(model: &MlpModel, adam: Option<&AdamState>) -> Result<String> {
    let data = CheckpointData {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layer_dims: model.layer_dims.clone(),
        negative_slope: model.negative_slope,
        layers: layers_to_data(&model.layers),
        adam: adam.map(|a| AdamData {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            step: a.step,
            first_moment: layers_to_data(&a.first_moment.layers),
            second_moment: layers_to_data(&a.second_moment.layers),
        }),
    };
    Ok(serde_json::to_string(&data)?)
}

pub fn load_checkpoint(text: &str) -> Result<(MlpModel, Option<AdamState>)> {
    let data: CheckpointData = serde_json::from_str(text)?;
    if data.format != CHECKPOINT_FORMAT || data.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported checkpoint {} v{}",
            data.format, data.version
        )));
    }
    let model = MlpModel::from_layers(layers_from_data(data.layers)?, data.negative_slope)?;
    if model.layer_dims != data.layer_dims {
        return Err(Error::InvalidArgument("checkpoint layer_dims disagree with its layers".into()));
    }
    let adam = match data.adam {
        Some(a) => {
            let first = Gradients {
                layers: layers_from_data(a.first_moment)?,
            };
            let second = Gradients {
                layers: layers_from_data(a.second_moment)?,
            };
            let shape_ok = |g: &Gradients| {
                g.layers.len() == model.layers.len()
                    && g.layers
                        .iter()
                        .zip(&model.layers)
                        .all(|(x, y)| x.weights.dim() == y.weights.dim() && x.bias.len() == y.bias.len())
            };
            if !shape_ok(&first) || !shape_ok(&second) {
                return Err(Error::InvalidArgument("optimizer state does not match the model".into()));
            }
            Some(AdamState {
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                step: a.step,
                first_moment: first,
                second_moment: second,
            })
        }
        None => None,
    };
    Ok((model, adam))
}
