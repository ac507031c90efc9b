use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Sigmoid,
    Tanh,
    Elu,
}

impl Activation {
    fn apply(self, z: f64, slope: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    fn derivative(self, z: f64, slope: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
        }
    }

    /// Whether the activation has a kink at zero.
    pub fn is_piecewise(self) -> bool {
        matches!(self, Activation::LeakyRelu | Activation::Relu | Activation::Elu)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "leakyrelu" | "leaky_relu" => Ok(Activation::LeakyRelu),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub leaky_slope: f64,
    pub output_bias: bool,
    pub hidden_bias: bool,
}

impl MlpSpec {
    /// LeakyReLU network without an output bias.
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_width,
            activation: Activation::LeakyRelu,
            leaky_slope: 0.01,
            output_bias: false,
            hidden_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::InvalidArgument(format!("degenerate network shape {self:?}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidArgument(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out, has_bias)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.hidden_width, self.hidden_bias));
            fan_in = self.hidden_width;
        }
        shapes.push((fan_in, self.output_dim, self.output_bias));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o, b)| i * o + if b { o } else { 0 }).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`, so a batch propagates as `Z = A W + b`.
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o, b)| Layer {
                    weight: Array2::zeros((i, o)),
                    bias: b.then(|| Array1::zeros(o)),
                })
                .collect(),
        }
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        let shapes = spec.layer_shapes();
        shapes.len() == self.layers.len()
            && shapes.iter().zip(&self.layers).all(|(&(i, o, b), l)| {
                l.weight.dim() == (i, o) && l.bias.as_ref().map(|b| b.len()) == b.then_some(o)
            })
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite())))
    }

    /// Cheap bit-level fingerprint, used to detect caches of outdated parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            let bias = l.bias.iter().flat_map(|b| b.iter());
            for v in l.weight.iter().chain(bias) {
                h = (h ^ v.to_bits()).wrapping_mul(0x1000_0000_01b3).rotate_left(5);
            }
        }
        h
    }

    pub fn scale_weights(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|w| w * c);
        }
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn init_mlp<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<MlpParams> {
    spec.validate()?;
    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(i, o, b)| {
            let bound = 1.0 / (i as f64).sqrt();
            Layer {
                weight: Array2::from_shape_simple_fn((i, o), || rng.random_range(-bound..bound)),
                bias: b.then(|| Array1::zeros(o)),
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

impl MlpParams {
    pub fn init_seeded(spec: &MlpSpec, seed: u64) -> Result<Self> {
        init_mlp(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

/// Intermediate values of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to every layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    fingerprint: u64,
}

impl ForwardCache {
    /// Hash of the sign pattern of every hidden pre-activation.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
        for z in &self.pre {
            for v in z.iter() {
                h = (h ^ u64::from(*v > 0.0)).wrapping_mul(0x1000_0000_01b3).rotate_left(1);
            }
        }
        h
    }

    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

pub fn forward(params: &MlpParams, spec: &MlpSpec, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != spec.input_dim {
        return Err(Error::Shape(format!("expected {} input columns, got {}", spec.input_dim, x.ncols())));
    }
    if !params.matches(spec) {
        return Err(Error::Shape("parameters do not match the network spec".into()));
    }
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    let mut a = x.to_owned();
    for (idx, layer) in params.layers.iter().enumerate() {
        let mut z = a.dot(&layer.weight);
        if let Some(b) = &layer.bias {
            z += b;
        }
        inputs.push(a);
        if idx + 1 == n_layers {
            return Ok((
                z,
                ForwardCache {
                    inputs,
                    pre,
                    fingerprint: params.fingerprint(),
                },
            ));
        }
        a = z.mapv(|v| spec.activation.apply(v, spec.leaky_slope));
        pre.push(z);
    }
    unreachable!("a network has at least one layer")
}

pub fn forward_vec(params: &MlpParams, spec: &MlpSpec, x: &[f64]) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(forward(params, spec, view)?.0.into_raw_vec_and_offset().0)
}

// Matrix products with transposed operands may come back column-major.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Gradients of a scalar loss given `dL/dY`; also returns `dL/dX`.
pub fn backward(
    params: &MlpParams,
    spec: &MlpSpec,
    cache: &ForwardCache,
    d_y: ArrayView2<f64>,
) -> Result<(MlpParams, Array2<f64>)> {
    if cache.fingerprint != params.fingerprint() || cache.inputs.len() != params.layers.len() {
        return Err(Error::InvalidArgument("forward cache does not belong to these parameters".into()));
    }
    if d_y.dim() != (cache.batch_size(), spec.output_dim) {
        return Err(Error::Shape(format!(
            "upstream gradient has shape {:?}, expected ({}, {})",
            d_y.dim(),
            cache.batch_size(),
            spec.output_dim
        )));
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut d_z = d_y.to_owned();
    for idx in (0..params.layers.len()).rev() {
        let layer = &params.layers[idx];
        let d_w = standard(cache.inputs[idx].t().dot(&d_z));
        let d_b = layer.bias.as_ref().map(|_| d_z.sum_axis(Axis(0)));
        let d_a = d_z.dot(&layer.weight.t());
        grads.push(Layer { weight: d_w, bias: d_b });
        if idx == 0 {
            grads.reverse();
            return Ok((MlpParams { layers: grads }, d_a));
        }
        let z = &cache.pre[idx - 1];
        let (act, slope) = (spec.activation, spec.leaky_slope);
        d_z = d_a;
        d_z.zip_mut_with(z, |g, &zv| *g *= act.derivative(zv, slope));
    }
    unreachable!("a network has at least one layer")
}
