//! A [`ModelConfig`] instantiated with weights: float forward/backward with
//! optional fake quantization, and the integer-only [`QuantizedModel`].
//!
//! A ReLU directly after a conv or fc layer is fused into that layer. Each
//! fused layer's output, and the network input, is an activation
//! quantization point; pooling and flatten preserve quantization exactly and
//! need no point of their own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LayerSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool2x2_backward, maxpool2x2_forward,
    maxpool2x2_int8, relu_backward, relu_forward, ConvWeights, FcWeights, PoolCache,
};
use crate::quant::{
    choose_scale, fake_quant_backward, fake_quant_forward, qconv2d_int8, qfc_int8, scale_for_max, QuantParams,
    QuantizedLayer, QuantizedTensor,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Conv(ConvWeights),
    Fc(FcWeights),
}

impl LayerWeights {
    pub fn zeros_for(spec: &LayerSpec) -> Option<Self> {
        match *spec {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
            } => Some(LayerWeights::Conv(ConvWeights::zeros(out_channels, in_channels))),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => Some(LayerWeights::Fc(FcWeights::zeros(out_features, in_features))),
            _ => None,
        }
    }

    pub fn weight(&self) -> &[f32] {
        match self {
            LayerWeights::Conv(w) => &w.weight,
            LayerWeights::Fc(w) => &w.weight,
        }
    }

    pub fn bias(&self) -> &[f32] {
        match self {
            LayerWeights::Conv(w) => &w.bias,
            LayerWeights::Fc(w) => &w.bias,
        }
    }

    pub fn parts_mut(&mut self) -> (&mut Vec<f32>, &mut Vec<f32>) {
        match self {
            LayerWeights::Conv(w) => (&mut w.weight, &mut w.bias),
            LayerWeights::Fc(w) => (&mut w.weight, &mut w.bias),
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerWeights::Conv(w) => w.in_channels * 9,
            LayerWeights::Fc(w) => w.in_features,
        }
    }

    fn with_weight(&self, weight: Vec<f32>) -> Self {
        let mut out = self.clone();
        *out.parts_mut().0 = weight;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Conv { layer: usize, relu: bool },
    Fc { layer: usize, relu: bool },
    Pool,
    Flatten,
    Relu,
}

pub(crate) fn plan(cfg: &ModelConfig) -> Vec<Stage> {
    let layers = cfg.layers();
    let mut stages = Vec::new();
    let mut weighted = 0;
    let mut i = 0;
    while i < layers.len() {
        let fused = matches!(layers.get(i + 1), Some(LayerSpec::Relu));
        let stage = match layers[i] {
            LayerSpec::Conv3x3 { .. } => Stage::Conv {
                layer: weighted,
                relu: fused,
            },
            LayerSpec::Fc { .. } => Stage::Fc {
                layer: weighted,
                relu: fused,
            },
            LayerSpec::MaxPool2x2 => Stage::Pool,
            LayerSpec::Flatten => Stage::Flatten,
            LayerSpec::Relu => Stage::Relu,
        };
        if matches!(stage, Stage::Conv { .. } | Stage::Fc { .. }) {
            weighted += 1;
            if fused {
                i += 1;
            }
        }
        stages.push(stage);
        i += 1;
    }
    stages
}

/// Frozen quantization parameters for a network: one weight scale per
/// weighted layer and one activation scale per quantization point (index 0 is
/// the network input, index `k + 1` the output of weighted layer `k`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantScales {
    pub weights: Vec<QuantParams>,
    pub activations: Vec<QuantParams>,
}

/// Numeric regime of a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Precision<'a> {
    Float,
    /// Weights fake-quantized with frozen scales; each activation point uses
    /// the larger of its running maximum and the tensor's own maximum.
    Calibrating {
        weights: &'a [QuantParams],
        running_max: &'a [f32],
    },
    FakeQuant(&'a QuantScales),
}

impl Precision<'_> {
    fn weight_scales(&self) -> Option<&[QuantParams]> {
        match self {
            Precision::Float => None,
            Precision::Calibrating { weights, .. } => Some(weights),
            Precision::FakeQuant(s) => Some(&s.weights),
        }
    }

    /// Scale for activation point `k`, given the tensor at that point.
    fn activation(&self, k: usize, observed_max: f32) -> Option<QuantParams> {
        match self {
            Precision::Float => None,
            Precision::Calibrating { running_max, .. } => Some(scale_for_max(running_max[k].max(observed_max))),
            Precision::FakeQuant(s) => Some(s.activations[k]),
        }
    }
}

fn max_abs(x: &[f32]) -> f32 {
    x.iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

enum StageCache {
    Weighted {
        input: Tensor,
        /// Post-ReLU, pre-fake-quant output.
        output: Tensor,
        act: Option<QuantParams>,
    },
    Pool(PoolCache),
    Flatten(Vec<usize>),
    Relu(Tensor),
}

/// Everything [`Network::backward`] needs from a forward pass.
pub struct Trace {
    caches: Vec<StageCache>,
    /// Max |x| seen at each activation point.
    pub observed_max: Vec<f32>,
}

/// Gradients with the same layout as the network's weights.
pub type Gradients = Vec<LayerWeights>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    weights: Vec<LayerWeights>,
}

impl Network {
    pub fn new(config: ModelConfig, weights: Vec<LayerWeights>) -> Result<Self> {
        let specs: Vec<&LayerSpec> = config.weighted_layers().collect();
        if specs.len() != weights.len() {
            return Err(Error::shape(
                "network",
                format!("{} weighted layers, {} weight blocks", specs.len(), weights.len()),
            ));
        }
        for (spec, w) in specs.iter().zip(&weights) {
            let (nw, nb) = spec.param_shape();
            let kind_ok = matches!(
                (spec, w),
                (LayerSpec::Conv3x3 { .. }, LayerWeights::Conv(_)) | (LayerSpec::Fc { .. }, LayerWeights::Fc(_))
            );
            if !kind_ok || w.weight().len() != nw || w.bias().len() != nb {
                return Err(Error::shape("network", format!("weights do not fit {spec:?}")));
            }
        }
        Ok(Self { config, weights })
    }

    /// Kaiming-uniform (fan-in, ReLU gain) weights and zero biases, drawn in
    /// declaration order from a seeded ChaCha8 stream.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = config
            .weighted_layers()
            .map(|spec| {
                let mut w = LayerWeights::zeros_for(spec).expect("weighted");
                let bound = (6.0 / w.fan_in() as f32).sqrt();
                for v in w.parts_mut().0.iter_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
                w
            })
            .collect();
        Self { config, weights }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[LayerWeights] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [LayerWeights] {
        &mut self.weights
    }

    pub fn activation_points(&self) -> usize {
        self.weights.len() + 1
    }

    /// Weights as seen by the forward pass: fake-quantized when the
    /// precision calls for it.
    pub fn effective_weights(&self, precision: Precision<'_>) -> Vec<LayerWeights> {
        match precision.weight_scales() {
            None => self.weights.clone(),
            Some(scales) => self
                .weights
                .iter()
                .zip(scales)
                .map(|(w, &q)| w.with_weight(fake_quant_forward(w.weight(), q)))
                .collect(),
        }
    }

    /// Weight scales from the current weights, `max|w| / 127` per layer.
    pub fn weight_scales(&self) -> Vec<QuantParams> {
        self.weights.iter().map(|w| choose_scale(w.weight())).collect()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, h, w) = self.config.input();
        if input.shape() != [c, h, w] {
            return Err(Error::shape(
                "network input",
                format!("expected {:?}, got {:?}", [c, h, w], input.shape()),
            ));
        }
        Ok(())
    }

    /// Forward pass keeping the intermediates needed for backprop.
    /// `weights` must come from [`Network::effective_weights`] with the same
    /// precision.
    pub fn forward_traced(&self, input: &Tensor, weights: &[LayerWeights], precision: Precision<'_>) -> Result<(Tensor, Trace)> {
        self.check_input(input)?;
        let mut observed_max = vec![0.0f32; self.activation_points()];
        let mut caches = Vec::new();

        observed_max[0] = max_abs(input.data());
        let mut x = match precision.activation(0, observed_max[0]) {
            Some(q) => Tensor::new(input.shape().to_vec(), fake_quant_forward(input.data(), q))?,
            None => input.clone(),
        };

        for stage in plan(&self.config) {
            x = match stage {
                Stage::Conv { layer, relu } | Stage::Fc { layer, relu } => {
                    let z = match &weights[layer] {
                        LayerWeights::Conv(w) => conv2d_forward(&x, w)?,
                        LayerWeights::Fc(w) => fc_forward(&x, w)?,
                    };
                    let y = if relu { relu_forward(&z) } else { z };
                    let point = layer + 1;
                    observed_max[point] = max_abs(y.data());
                    let act = precision.activation(point, observed_max[point]);
                    let out = match act {
                        Some(q) => Tensor::new(y.shape().to_vec(), fake_quant_forward(y.data(), q))?,
                        None => y.clone(),
                    };
                    caches.push(StageCache::Weighted {
                        input: x,
                        output: y,
                        act,
                    });
                    out
                }
                Stage::Pool => {
                    let (out, cache) = maxpool2x2_forward(&x)?;
                    caches.push(StageCache::Pool(cache));
                    out
                }
                Stage::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = x.len();
                    caches.push(StageCache::Flatten(shape));
                    x.reshape(vec![n])?
                }
                Stage::Relu => {
                    let out = relu_forward(&x);
                    caches.push(StageCache::Relu(x));
                    out
                }
            };
        }
        Ok((x, Trace { caches, observed_max }))
    }

    /// The tensor fed into each weighted layer, in order.
    pub fn layer_inputs(&self, input: &Tensor, precision: Precision<'_>) -> Result<Vec<Tensor>> {
        let weights = self.effective_weights(precision);
        let (_, trace) = self.forward_traced(input, &weights, precision)?;
        Ok(trace
            .caches
            .into_iter()
            .filter_map(|c| match c {
                StageCache::Weighted { input, .. } => Some(input),
                _ => None,
            })
            .collect())
    }

    pub fn forward(&self, input: &Tensor, precision: Precision<'_>) -> Result<Tensor> {
        let weights = self.effective_weights(precision);
        Ok(self.forward_traced(input, &weights, precision)?.0)
    }

    /// Backprop of `grad_out` (w.r.t. the network output) through a traced
    /// forward pass. Returns gradients w.r.t. the effective weights; apply
    /// [`Network::mask_weight_gradients`] to map them onto master weights
    /// under fake quantization.
    pub fn backward(&self, trace: Trace, weights: &[LayerWeights], grad_out: &Tensor) -> Result<Gradients> {
        let stages = plan(&self.config);
        if stages.len() != trace.caches.len() {
            return Err(Error::shape("network backward", "trace does not belong to this network"));
        }
        let mut grads: Vec<Option<LayerWeights>> = vec![None; weights.len()];
        let mut g = grad_out.clone();
        for (stage, cache) in stages.iter().zip(trace.caches).rev() {
            g = match (stage, cache) {
                (
                    Stage::Conv { layer, relu } | Stage::Fc { layer, relu },
                    StageCache::Weighted { input, output, act },
                ) => {
                    if let Some(q) = act {
                        g = Tensor::new(g.shape().to_vec(), fake_quant_backward(g.data(), output.data(), q))?;
                    }
                    if *relu {
                        g = relu_backward(&g, &output)?;
                    }
                    match &weights[*layer] {
                        LayerWeights::Conv(w) => {
                            let cg = conv2d_backward(&g, &input, w)?;
                            grads[*layer] = Some(LayerWeights::Conv(ConvWeights {
                                out_channels: w.out_channels,
                                in_channels: w.in_channels,
                                weight: cg.weight,
                                bias: cg.bias,
                            }));
                            cg.input
                        }
                        LayerWeights::Fc(w) => {
                            let fg = fc_backward(&g, &input, w)?;
                            grads[*layer] = Some(LayerWeights::Fc(FcWeights {
                                out_features: w.out_features,
                                in_features: w.in_features,
                                weight: fg.weight,
                                bias: fg.bias,
                            }));
                            fg.input
                        }
                    }
                }
                (Stage::Pool, StageCache::Pool(cache)) => maxpool2x2_backward(&g, &cache)?,
                (Stage::Flatten, StageCache::Flatten(shape)) => g.reshape(shape)?,
                (Stage::Relu, StageCache::Relu(input)) => relu_backward(&g, &input)?,
                _ => return Err(Error::shape("network backward", "trace does not match plan")),
            };
        }
        Ok(grads.into_iter().map(|g| g.expect("every weighted stage visited")).collect())
    }

    /// Straight-through estimator for weight fake quantization: zero the
    /// gradient of master weights that saturated.
    pub fn mask_weight_gradients(&self, grads: &mut Gradients, scales: &[QuantParams]) {
        for ((g, w), &q) in grads.iter_mut().zip(&self.weights).zip(scales) {
            let masked = fake_quant_backward(g.weight(), w.weight(), q);
            *g.parts_mut().0 = masked;
        }
    }
}

/// Integer-only network: int8 activations and weights, i32 accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    config: ModelConfig,
    input: QuantParams,
    layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn new(config: ModelConfig, input: QuantParams, layers: Vec<QuantizedLayer>) -> Result<Self> {
        let stages = plan(&config);
        let weighted: Vec<(usize, bool)> = stages
            .iter()
            .filter_map(|s| match *s {
                Stage::Conv { layer, relu } | Stage::Fc { layer, relu } => Some((layer, relu)),
                _ => None,
            })
            .collect();
        if weighted.len() != layers.len() {
            return Err(Error::Quant(format!(
                "config has {} weighted layers, got {}",
                weighted.len(),
                layers.len()
            )));
        }
        let mut prev = input;
        for ((spec, &(_, relu)), layer) in config.weighted_layers().zip(&weighted).zip(&layers) {
            let kind_ok = match (*spec, layer.kind) {
                (
                    LayerSpec::Conv3x3 {
                        in_channels,
                        out_channels,
                    },
                    crate::quant::QuantizedKind::Conv {
                        in_channels: i,
                        out_channels: o,
                    },
                ) => in_channels == i && out_channels == o,
                (
                    LayerSpec::Fc {
                        in_features,
                        out_features,
                    },
                    crate::quant::QuantizedKind::Fc {
                        in_features: i,
                        out_features: o,
                    },
                ) => in_features == i && out_features == o,
                _ => false,
            };
            if !kind_ok || layer.relu != relu || !layer.input.same_as(&prev) {
                return Err(Error::Quant(format!("quantized layer does not fit {spec:?}")));
            }
            prev = layer.output;
        }
        Ok(Self { config, input, layers })
    }

    /// Converts a network with frozen scales. Biases are rounded to i32 at
    /// `input_scale · weight_scale`.
    pub fn from_network(net: &Network, scales: &QuantScales) -> Result<Self> {
        if scales.weights.len() != net.weights.len() || scales.activations.len() != net.activation_points() {
            return Err(Error::Quant("scale count does not match the network".into()));
        }
        let mut layers = Vec::with_capacity(net.weights.len());
        for stage in plan(&net.config) {
            if let Stage::Conv { layer, relu } | Stage::Fc { layer, relu } = stage {
                let (qi, qw, qo) = (scales.activations[layer], scales.weights[layer], scales.activations[layer + 1]);
                layers.push(match &net.weights[layer] {
                    LayerWeights::Conv(w) => QuantizedLayer::conv(w, qi, qw, qo, relu)?,
                    LayerWeights::Fc(w) => QuantizedLayer::fc(w, qi, qw, qo, relu)?,
                });
            }
        }
        Self::new(net.config.clone(), scales.activations[0], layers)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_params(&self) -> QuantParams {
        self.input
    }

    pub fn layers(&self) -> &[QuantizedLayer] {
        &self.layers
    }

    /// Runs the integer pipeline, returning the final int8 codes.
    pub fn forward_codes(&self, input: &Tensor) -> Result<QuantizedTensor> {
        let (c, h, w) = self.config.input();
        if input.shape() != [c, h, w] {
            return Err(Error::shape(
                "quantized input",
                format!("expected {:?}, got {:?}", [c, h, w], input.shape()),
            ));
        }
        let mut x = QuantizedTensor::quantize(input, self.input);
        for stage in plan(&self.config) {
            x = match stage {
                Stage::Conv { layer, .. } => qconv2d_int8(&x, &self.layers[layer])?,
                Stage::Fc { layer, .. } => qfc_int8(&x, &self.layers[layer])?,
                Stage::Pool => QuantizedTensor {
                    codes: maxpool2x2_int8(&x.codes)?,
                    params: x.params,
                },
                Stage::Flatten => {
                    let n = x.codes.len();
                    QuantizedTensor {
                        codes: x.codes.reshape(vec![n])?,
                        params: x.params,
                    }
                }
                Stage::Relu => {
                    let shape = x.codes.shape().to_vec();
                    let codes = x.codes.into_data().into_iter().map(|c| c.max(0)).collect();
                    QuantizedTensor {
                        codes: Tensor::new(shape, codes)?,
                        params: x.params,
                    }
                }
            };
        }
        Ok(x)
    }

    /// Integer inference followed by a single dequantization of the head.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_codes(input)?.dequantize())
    }
}
