use super::binary::{
    binarize_weights, binary_conv_backward, binary_conv_forward, binary_linear_backward,
    binary_linear_forward, BinaryConvCache, BinaryLinearCache,
};
use super::layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_forward, flatten, hardtanh_backward, hardtanh_forward,
    linear_backward, linear_forward, maxpool_backward, maxpool_forward, BatchNormCache, BatchNormState,
    MaxPoolCache,
};
use super::{Parameter, PrecisionContext};
use crate::error::{Error, Result};
use crate::quant::sign_tensor;
use crate::rng::Prng;
use crate::tensor::{conv2d_grad_input, conv2d_grad_weight, conv2d_ref, conv_out_size, matmul, transpose, Tensor};

/// Architecture description of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    FpConv { c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize },
    BinaryConv { c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize },
    FpLinear { in_features: usize, out_features: usize },
    BinaryLinear { in_features: usize, out_features: usize },
    BatchNorm { channels: usize, eps: f32, momentum: f32 },
    Hardtanh,
    MaxPool { size: usize },
    Flatten,
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::FpConv { .. } => "fp_conv",
            LayerSpec::BinaryConv { .. } => "binary_conv",
            LayerSpec::FpLinear { .. } => "fp_linear",
            LayerSpec::BinaryLinear { .. } => "binary_linear",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Hardtanh => "hardtanh",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, LayerSpec::BinaryConv { .. } | LayerSpec::BinaryLinear { .. })
    }

    /// Convolution and linear layers; the ones that perform multiply-accumulates.
    pub fn is_mac_layer(&self) -> bool {
        matches!(
            self,
            LayerSpec::FpConv { .. }
                | LayerSpec::BinaryConv { .. }
                | LayerSpec::FpLinear { .. }
                | LayerSpec::BinaryLinear { .. }
        )
    }

    /// Per-sample output dims for per-sample input dims.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::IncompatibleShapes(format!("{} cannot take input {input:?}", self.kind()));
        match *self {
            LayerSpec::FpConv { c_in, c_out, kernel, stride, padding }
            | LayerSpec::BinaryConv { c_in, c_out, kernel, stride, padding } => {
                let &[c, h, w] = input else { return Err(mismatch()) };
                if c != c_in {
                    return Err(mismatch());
                }
                Ok(vec![
                    c_out,
                    conv_out_size(h, kernel, stride, padding)?,
                    conv_out_size(w, kernel, stride, padding)?,
                ])
            }
            LayerSpec::FpLinear { in_features, out_features }
            | LayerSpec::BinaryLinear { in_features, out_features } => {
                if input != [in_features] {
                    return Err(mismatch());
                }
                Ok(vec![out_features])
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if input.is_empty() || input[0] != channels {
                    return Err(mismatch());
                }
                Ok(input.to_vec())
            }
            LayerSpec::Hardtanh => Ok(input.to_vec()),
            LayerSpec::MaxPool { size } => {
                let &[c, h, w] = input else { return Err(mismatch()) };
                if size == 0 || size > h || size > w {
                    return Err(Error::KernelTooLarge(format!("pool {size} over {h}x{w}")));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// The small convolutional network used for training runs.
///
/// conv3x3(16) → BN → Hardtanh → bconv3x3(32) → BN → Hardtanh → pool2 →
/// bconv3x3(64) → BN → Hardtanh → pool2 → flatten → linear(classes).
/// The first and last layers are full precision unless `binarize_first_last`.
pub fn convnet_small(in_dims: [usize; 3], classes: usize, binarize_first_last: bool) -> Vec<LayerSpec> {
    let [c, h, w] = in_dims;
    let conv = |c_in, c_out, binary: bool| {
        if binary {
            LayerSpec::BinaryConv { c_in, c_out, kernel: 3, stride: 1, padding: 1 }
        } else {
            LayerSpec::FpConv { c_in, c_out, kernel: 3, stride: 1, padding: 1 }
        }
    };
    let bn = |channels| LayerSpec::BatchNorm { channels, eps: BN_EPS, momentum: BN_MOMENTUM };
    let features = 64 * (h / 4) * (w / 4);
    vec![
        conv(c, 16, binarize_first_last),
        bn(16),
        LayerSpec::Hardtanh,
        conv(16, 32, true),
        bn(32),
        LayerSpec::Hardtanh,
        LayerSpec::MaxPool { size: 2 },
        conv(32, 64, true),
        bn(64),
        LayerSpec::Hardtanh,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
        if binarize_first_last {
            LayerSpec::BinaryLinear { in_features: features, out_features: classes }
        } else {
            LayerSpec::FpLinear { in_features: features, out_features: classes }
        },
    ]
}

/// A layer with its parameters and the activations cached by the last
/// training-mode forward pass.
#[derive(Debug, Clone)]
pub enum Layer {
    FpConv { weight: Parameter, stride: usize, padding: usize, cache: Option<Tensor> },
    BinaryConv { weight: Parameter, stride: usize, padding: usize, cache: Option<BinaryConvCache> },
    FpLinear { weight: Parameter, bias: Parameter, cache: Option<Tensor> },
    BinaryLinear { weight: Parameter, cache: Option<BinaryLinearCache> },
    BatchNorm { state: BatchNormState, cache: Option<BatchNormCache> },
    Hardtanh { cache: Option<Tensor> },
    MaxPool { size: usize, cache: Option<MaxPoolCache> },
    Flatten { cache: Option<Vec<usize>> },
}

fn uniform_tensor(dims: &[usize], bound: f64, rng: &mut Prng) -> Result<Tensor> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.uniform_in(-bound, bound) as f32).collect())
}

impl Layer {
    fn init(spec: &LayerSpec, index: usize, rng: &mut Prng) -> Result<Layer> {
        let name = |p: &str| format!("{index}.{}.{p}", spec.kind());
        Ok(match *spec {
            LayerSpec::FpConv { c_in, c_out, kernel, stride, padding }
            | LayerSpec::BinaryConv { c_in, c_out, kernel, stride, padding } => {
                let dims = [c_out, c_in, kernel, kernel];
                let bound = (1.0 / (c_in * kernel * kernel) as f64).sqrt();
                let weight = Parameter::new(name("weight"), uniform_tensor(&dims, bound, rng)?);
                if spec.is_binary() {
                    Layer::BinaryConv { weight, stride, padding, cache: None }
                } else {
                    Layer::FpConv { weight, stride, padding, cache: None }
                }
            }
            LayerSpec::FpLinear { in_features, out_features } => {
                let bound = (1.0 / in_features as f64).sqrt();
                Layer::FpLinear {
                    weight: Parameter::new(name("weight"), uniform_tensor(&[out_features, in_features], bound, rng)?),
                    bias: Parameter::new(name("bias"), uniform_tensor(&[out_features], bound, rng)?),
                    cache: None,
                }
            }
            LayerSpec::BinaryLinear { in_features, out_features } => {
                let bound = (1.0 / in_features as f64).sqrt();
                Layer::BinaryLinear {
                    weight: Parameter::new(name("weight"), uniform_tensor(&[out_features, in_features], bound, rng)?),
                    cache: None,
                }
            }
            LayerSpec::BatchNorm { channels, eps, momentum } => Layer::BatchNorm {
                state: BatchNormState::new(&format!("{index}.batchnorm"), channels, eps, momentum)?,
                cache: None,
            },
            LayerSpec::Hardtanh => Layer::Hardtanh { cache: None },
            LayerSpec::MaxPool { size } => Layer::MaxPool { size, cache: None },
            LayerSpec::Flatten => Layer::Flatten { cache: None },
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::FpConv { weight, stride, padding, .. } | Layer::BinaryConv { weight, stride, padding, .. } => {
                let d = weight.real.dims();
                let (c_out, c_in, kernel, stride, padding) = (d[0], d[1], d[2], *stride, *padding);
                if matches!(self, Layer::FpConv { .. }) {
                    LayerSpec::FpConv { c_in, c_out, kernel, stride, padding }
                } else {
                    LayerSpec::BinaryConv { c_in, c_out, kernel, stride, padding }
                }
            }
            Layer::FpLinear { weight, .. } => {
                let d = weight.real.dims();
                LayerSpec::FpLinear { in_features: d[1], out_features: d[0] }
            }
            Layer::BinaryLinear { weight, .. } => {
                let d = weight.real.dims();
                LayerSpec::BinaryLinear { in_features: d[1], out_features: d[0] }
            }
            Layer::BatchNorm { state, .. } => {
                LayerSpec::BatchNorm { channels: state.channels(), eps: state.eps, momentum: state.momentum }
            }
            Layer::Hardtanh { .. } => LayerSpec::Hardtanh,
            Layer::MaxPool { size, .. } => LayerSpec::MaxPool { size: *size },
            Layer::Flatten { .. } => LayerSpec::Flatten,
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::FpConv { weight, .. } | Layer::BinaryConv { weight, .. } | Layer::BinaryLinear { weight, .. } => {
                vec![weight]
            }
            Layer::FpLinear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { state, .. } => vec![&state.gamma, &state.beta],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::FpConv { weight, .. } | Layer::BinaryConv { weight, .. } | Layer::BinaryLinear { weight, .. } => {
                vec![weight]
            }
            Layer::FpLinear { weight, bias, .. } => vec![weight, bias],
            Layer::BatchNorm { state, .. } => vec![&mut state.gamma, &mut state.beta],
            _ => Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor, ctx: &PrecisionContext) -> Result<Tensor> {
        match self {
            Layer::FpConv { weight, stride, padding, cache } => {
                let out = conv2d_ref(x, &weight.real, *stride, *padding)?;
                *cache = Some(x.clone());
                Ok(out)
            }
            Layer::BinaryConv { weight, stride, padding, cache } => {
                let (out, c) = binary_conv_forward(x, weight, ctx, *stride, *padding)?;
                *cache = Some(c);
                Ok(out)
            }
            Layer::FpLinear { weight, bias, cache } => {
                let out = linear_forward(x, &weight.real, Some(&bias.real))?;
                *cache = Some(x.clone());
                Ok(out)
            }
            Layer::BinaryLinear { weight, cache } => {
                let (out, c) = binary_linear_forward(x, weight, ctx)?;
                *cache = Some(c);
                Ok(out)
            }
            Layer::BatchNorm { state, cache } => {
                let (out, c) = batchnorm_forward(x, state, true)?;
                *cache = c;
                Ok(out)
            }
            Layer::Hardtanh { cache } => {
                *cache = Some(x.clone());
                Ok(hardtanh_forward(x))
            }
            Layer::MaxPool { size, cache } => {
                let (out, c) = maxpool_forward(x, *size)?;
                *cache = Some(c);
                Ok(out)
            }
            Layer::Flatten { cache } => {
                *cache = Some(x.dims().to_vec());
                flatten(x)
            }
        }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::FpConv { weight, stride, padding, .. } => conv2d_ref(x, &weight.real, *stride, *padding),
            Layer::BinaryConv { weight, stride, padding, .. } => {
                let (_, w_bin) = binarize_weights(weight)?;
                conv2d_ref(&sign_tensor(x), &w_bin, *stride, *padding)
            }
            Layer::FpLinear { weight, bias, .. } => linear_forward(x, &weight.real, Some(&bias.real)),
            Layer::BinaryLinear { weight, .. } => {
                let (_, w_bin) = binarize_weights(weight)?;
                matmul(&sign_tensor(x), &transpose(&w_bin)?)
            }
            Layer::BatchNorm { state, .. } => batchnorm_eval(x, state),
            Layer::Hardtanh { .. } => Ok(hardtanh_forward(x)),
            Layer::MaxPool { size, .. } => Ok(maxpool_forward(x, *size)?.0),
            Layer::Flatten { .. } => flatten(x),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient
    /// (`None` when `need_input_grad` is false). Consumes the cache.
    fn backward(&mut self, g: &Tensor, ctx: &PrecisionContext, need_input_grad: bool) -> Result<Option<Tensor>> {
        let stale = Error::StaleCache;
        match self {
            Layer::FpConv { weight, stride, padding, cache } => {
                let x = cache.take().ok_or(stale("fp_conv"))?;
                weight.accumulate(&conv2d_grad_weight(g, &x, weight.real.dims(), *stride, *padding)?)?;
                if need_input_grad {
                    return Ok(Some(conv2d_grad_input(g, &weight.real, x.dims(), *stride, *padding)?));
                }
                Ok(None)
            }
            Layer::BinaryConv { weight, cache, .. } => {
                let (gi, gw) = binary_conv_backward(g, cache.take().as_ref(), ctx)?;
                weight.accumulate(&gw)?;
                Ok(Some(gi))
            }
            Layer::FpLinear { weight, bias, cache } => {
                let x = cache.take().ok_or(stale("fp_linear"))?;
                let (gi, gw, gb) = linear_backward(g, &x, &weight.real)?;
                weight.accumulate(&gw)?;
                bias.accumulate(&gb)?;
                Ok(Some(gi))
            }
            Layer::BinaryLinear { weight, cache } => {
                let (gi, gw) = binary_linear_backward(g, cache.take().as_ref(), ctx)?;
                weight.accumulate(&gw)?;
                Ok(Some(gi))
            }
            Layer::BatchNorm { state, cache } => {
                let (gi, gg, gb) = batchnorm_backward(g, cache.take().as_ref(), &state.gamma.real)?;
                state.gamma.accumulate(&gg)?;
                state.beta.accumulate(&gb)?;
                Ok(Some(gi))
            }
            Layer::Hardtanh { cache } => {
                let x = cache.take().ok_or(stale("hardtanh"))?;
                Ok(Some(hardtanh_backward(g, &x)?))
            }
            Layer::MaxPool { cache, .. } => Ok(Some(maxpool_backward(g, cache.take().as_ref())?)),
            Layer::Flatten { cache } => {
                let dims = cache.take().ok_or(stale("flatten"))?;
                Ok(Some(g.clone().reshape(&dims)?))
            }
        }
    }
}

/// A sequential network over per-sample inputs of fixed shape.
#[derive(Debug, Clone)]
pub struct Network {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Validates the shape chain and initializes weights from `seed`.
    ///
    /// The first and last multiply-accumulate layers must be full precision
    /// unless `binarize_first_last` is set.
    pub fn new(specs: &[LayerSpec], input_dims: &[usize], seed: u64, binarize_first_last: bool) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut dims = input_dims.to_vec();
        for spec in specs {
            dims = spec.output_dims(&dims)?;
        }
        if !binarize_first_last {
            let mac: Vec<&LayerSpec> = specs.iter().filter(|s| s.is_mac_layer()).collect();
            if mac.first().is_some_and(|s| s.is_binary()) || mac.last().is_some_and(|s| s.is_binary()) {
                return Err(Error::InvalidConfig(
                    "first and last layers must be full precision unless binarize_first_last is set".into(),
                ));
            }
        }
        let mut rng = Prng::new(seed);
        let layers = specs.iter().enumerate().map(|(i, s)| Layer::init(s, i, &mut rng)).collect::<Result<_>>()?;
        Ok(Network { input_dims: input_dims.to_vec(), layers })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Per-sample input dims of every layer, followed by the output dims.
    pub fn shape_trace(&self) -> Vec<Vec<usize>> {
        let mut dims = vec![self.input_dims.clone()];
        for layer in &self.layers {
            let next = layer.spec().output_dims(dims.last().unwrap()).expect("validated at construction");
            dims.push(next);
        }
        dims
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dims().len() != self.input_dims.len() + 1 || x.dims()[1..] != self.input_dims[..] {
            return Err(Error::IncompatibleShapes(format!(
                "network expects [n, {:?}], got {:?}",
                self.input_dims,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Training-mode forward; caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor, ctx: &PrecisionContext) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }

    /// Evaluation-mode forward with running batch-norm statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Accumulates gradients for the last training forward. Calling it twice
    /// without a new forward fails with `stale-cache`.
    pub fn backward(&mut self, grad_output: &Tensor, ctx: &PrecisionContext) -> Result<()> {
        let mut g = grad_output.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            match layer.backward(&g, ctx, i > 0)? {
                Some(next) => g = next,
                None => debug_assert_eq!(i, 0),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// All persistent tensors (parameters and batch-norm running statistics) by name.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                out.push((p.name.clone(), &p.real));
            }
            if let Layer::BatchNorm { state, .. } = layer {
                out.push((format!("{i}.batchnorm.running_mean"), &state.running_mean));
                out.push((format!("{i}.batchnorm.running_var"), &state.running_var));
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::BatchNorm { state, .. } => {
                    out.push((state.gamma.name.clone(), &mut state.gamma.real));
                    out.push((state.beta.name.clone(), &mut state.beta.real));
                    out.push((format!("{i}.batchnorm.running_mean"), &mut state.running_mean));
                    out.push((format!("{i}.batchnorm.running_var"), &mut state.running_var));
                }
                other => {
                    for p in other.params_mut() {
                        out.push((p.name.clone(), &mut p.real));
                    }
                }
            }
        }
        out
    }
}
