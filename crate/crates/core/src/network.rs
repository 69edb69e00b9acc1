//! The ten-layer segmentation network.
//!
//! Layers 1-3 (downscale) are depthwise-separable, layers 4-9 (context) are
//! full 3x3 convolutions with dilations growing to 16, layer 10 is a 1x1
//! classifier emitting `1 + n_classes` channels. The overall stride is 4, so
//! every output cell describes a 4x4 block of input pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    activation, activation_grad, conv2d, conv2d_backward, Activation, ConvParams, Scalar,
    Shape, Tensor,
};

/// Output cells are `SCALE x SCALE` pixel blocks.
pub const SCALE: usize = 4;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BSEG";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Width of every hidden layer.
    pub channels: usize,
    /// Number of barcode types predicted next to the detection channel.
    pub n_classes: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            channels: 24,
            n_classes: 0,
            input_channels: 1,
        }
    }
}

impl NetworkConfig {
    pub fn with_classes(n_classes: usize) -> Self {
        NetworkConfig {
            n_classes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.input_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs channels >= 1 and input_channels >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        1 + self.n_classes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerActivation {
    Relu,
    /// Sigmoid on channel 0, softmax over the remaining channels.
    DetectAndClassify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 1-based position in the stack.
    pub index: usize,
    pub stride: usize,
    pub dilation: usize,
    pub separable: bool,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: LayerActivation,
}

impl LayerSpec {
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        if self.separable {
            // depthwise taps (no bias) + pointwise weights + pointwise bias
            self.in_channels * k2 + self.in_channels * self.out_channels + self.out_channels
        } else {
            self.in_channels * self.out_channels * k2 + self.out_channels
        }
    }
}

const STRIDES: [usize; 10] = [2, 1, 2, 1, 1, 1, 1, 1, 1, 1];
const DILATIONS: [usize; 10] = [1, 1, 1, 1, 2, 4, 8, 16, 1, 1];

/// Layer table for `config`.
pub fn build_network(config: &NetworkConfig) -> Vec<LayerSpec> {
    (0..10)
        .map(|i| {
            let last = i == 9;
            LayerSpec {
                index: i + 1,
                stride: STRIDES[i],
                dilation: DILATIONS[i],
                separable: i < 3,
                kernel: if last { 1 } else { 3 },
                in_channels: if i == 0 {
                    config.input_channels
                } else {
                    config.channels
                },
                out_channels: if last {
                    config.output_channels()
                } else {
                    config.channels
                },
                activation: if last {
                    LayerActivation::DetectAndClassify
                } else {
                    LayerActivation::Relu
                },
            }
        })
        .collect()
}

/// Weights plus biases, from the layer table alone.
pub fn count_parameters(config: &NetworkConfig) -> usize {
    build_network(config)
        .iter()
        .map(LayerSpec::parameter_count)
        .sum()
}

/// Receptive field (in input pixels) after each layer.
pub fn receptive_fields(layers: &[LayerSpec]) -> Vec<usize> {
    let mut rf = 1;
    let mut jump = 1;
    layers
        .iter()
        .map(|l| {
            rf += (l.kernel - 1) * l.dilation * jump;
            jump *= l.stride;
            rf
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T = f32> {
    Separable {
        depthwise: ConvParams<T>,
        pointwise: ConvParams<T>,
    },
    Full(ConvParams<T>),
}

impl<T> LayerParams<T> {
    pub fn convs(&self) -> Vec<&ConvParams<T>> {
        match self {
            LayerParams::Separable {
                depthwise,
                pointwise,
            } => vec![depthwise, pointwise],
            LayerParams::Full(c) => vec![c],
        }
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        match self {
            LayerParams::Separable {
                depthwise,
                pointwise,
            } => vec![depthwise, pointwise],
            LayerParams::Full(c) => vec![c],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub spec: LayerSpec,
    pub params: LayerParams<T>,
}

/// Network output at 1/4 input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMap<T = f32> {
    /// `(batch, 1, H/4, W/4)` barcode probability.
    pub detect_prob: Tensor<T>,
    /// `(batch, N, H/4, W/4)` type distribution; `None` when `N = 0`.
    pub class_prob: Option<Tensor<T>>,
}

impl<T: Scalar> SegmentationMap<T> {
    pub fn height(&self) -> usize {
        self.detect_prob.shape().height
    }

    pub fn width(&self) -> usize {
        self.detect_prob.shape().width
    }

    pub fn n_classes(&self) -> usize {
        self.class_prob.as_ref().map_or(0, |t| t.shape().channels)
    }
}

/// Activations kept from a forward pass for [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    /// Input of every convolution, in execution order.
    conv_inputs: Vec<Tensor<T>>,
    /// Pre-activation output of every layer.
    pre_activations: Vec<Tensor<T>>,
}

/// Gradient of every convolution's weights and bias, in [`Network::convs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        let convs = net.convs();
        Gradients {
            weights: convs.iter().map(|c| vec![T::zero(); c.weights.len()]).collect(),
            biases: convs
                .iter()
                .map(|c| c.bias.as_ref().map(|b| vec![T::zero(); b.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Weight and bias buffers interleaved per convolution, matching
    /// [`Network::parameter_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            if let Some(b) = b {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            if let Some(b) = b {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// All parameters zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = build_network(&config)
            .into_iter()
            .map(|spec| {
                let k = (spec.kernel, spec.kernel);
                let params = if spec.separable {
                    LayerParams::Separable {
                        depthwise: ConvParams::new(
                            spec.in_channels,
                            spec.in_channels,
                            k,
                            spec.stride,
                            spec.dilation,
                            spec.in_channels,
                            false,
                        )?,
                        pointwise: ConvParams::new(
                            spec.in_channels,
                            spec.out_channels,
                            (1, 1),
                            1,
                            1,
                            1,
                            true,
                        )?,
                    }
                } else {
                    LayerParams::Full(ConvParams::new(
                        spec.in_channels,
                        spec.out_channels,
                        k,
                        spec.stride,
                        spec.dilation,
                        1,
                        true,
                    )?)
                };
                Ok(Layer { spec, params })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { config, layers })
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in net.convs_mut() {
            let s = conv.weights.shape();
            let fan_in = s.channels * s.height * s.width;
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in conv.weights.data_mut() {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn convs(&self) -> Vec<&ConvParams<T>> {
        self.layers.iter().flat_map(|l| l.params.convs()).collect()
    }

    pub fn convs_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.convs_mut())
            .collect()
    }

    /// Counted from the allocated tensors.
    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(|c| c.parameter_count()).sum()
    }

    pub fn parameter_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.push(c.weights.data());
            if let Some(b) = &c.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn parameter_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for c in self.convs_mut() {
            let ConvParams { weights, bias, .. } = c;
            out.push(weights.data_mut());
            if let Some(b) = bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let cast_conv = |c: &ConvParams<T>| ConvParams {
            kernel: c.kernel,
            stride: c.stride,
            dilation: c.dilation,
            groups: c.groups,
            weights: c.weights.cast(),
            bias: c
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        };
        Network {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    params: match &l.params {
                        LayerParams::Separable {
                            depthwise,
                            pointwise,
                        } => LayerParams::Separable {
                            depthwise: cast_conv(depthwise),
                            pointwise: cast_conv(pointwise),
                        },
                        LayerParams::Full(c) => LayerParams::Full(cast_conv(c)),
                    },
                })
                .collect(),
        }
    }

    fn check_input(&self, images: &Tensor<T>) -> Result<()> {
        let s = images.shape();
        if s.channels != self.config.input_channels {
            return Err(Error::shape(
                "forward",
                format!("{} input channels", self.config.input_channels),
                s,
            ));
        }
        if s.height == 0 || s.width == 0 || s.height % SCALE != 0 || s.width % SCALE != 0 {
            return Err(Error::shape(
                "forward",
                format!("spatial dims divisible by {SCALE}"),
                s,
            ));
        }
        Ok(())
    }

    pub fn forward(&self, images: &Tensor<T>) -> Result<SegmentationMap<T>> {
        self.run(images, None)
    }

    /// Forward pass that also records what [`Network::backward`] needs.
    pub fn forward_cached(&self, images: &Tensor<T>) -> Result<(SegmentationMap<T>, ForwardCache<T>)> {
        let mut cache = ForwardCache {
            conv_inputs: Vec::with_capacity(13),
            pre_activations: Vec::with_capacity(10),
        };
        let map = self.run(images, Some(&mut cache))?;
        Ok((map, cache))
    }

    fn run(
        &self,
        images: &Tensor<T>,
        mut cache: Option<&mut ForwardCache<T>>,
    ) -> Result<SegmentationMap<T>> {
        self.check_input(images)?;
        let mut x = images.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = match &layer.params {
                LayerParams::Separable {
                    depthwise,
                    pointwise,
                } => {
                    let d = conv2d(&x, depthwise)?;
                    let z = conv2d(&d, pointwise)?;
                    if let Some(c) = cache.as_deref_mut() {
                        c.conv_inputs.push(std::mem::take(&mut x));
                        c.conv_inputs.push(d);
                    }
                    z
                }
                LayerParams::Full(conv) => {
                    let z = conv2d(&x, conv)?;
                    if let Some(c) = cache.as_deref_mut() {
                        c.conv_inputs.push(std::mem::take(&mut x));
                    }
                    z
                }
            };
            if i == last {
                let map = self.head(&z)?;
                if let Some(c) = cache.as_deref_mut() {
                    c.pre_activations.push(z);
                }
                return Ok(map);
            }
            x = activation(&z, Activation::Relu, 0..z.shape().channels)?;
            if let Some(c) = cache.as_deref_mut() {
                c.pre_activations.push(z);
            }
        }
        unreachable!("network has a final layer")
    }

    fn head(&self, logits: &Tensor<T>) -> Result<SegmentationMap<T>> {
        let n = self.config.n_classes;
        let detect_prob = activation(&logits.select_channels(0..1)?, Activation::Sigmoid, 0..1)?;
        let class_prob = if n > 0 {
            let cls = logits.select_channels(1..1 + n)?;
            Some(activation(&cls, Activation::ChannelSoftmax, 0..n)?)
        } else {
            None
        };
        Ok(SegmentationMap {
            detect_prob,
            class_prob,
        })
    }

    /// Back-propagates gradients with respect to the output probabilities.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_detect: &Tensor<T>,
        grad_class: Option<&Tensor<T>>,
    ) -> Result<Gradients<T>> {
        let logits = cache
            .pre_activations
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty forward cache".into()))?;
        let s = logits.shape();
        let n = self.config.n_classes;
        let det_shape = Shape::new(s.batch, 1, s.height, s.width);
        if grad_detect.shape() != det_shape {
            return Err(Error::shape("backward detect grad", det_shape, grad_detect.shape()));
        }
        // Stack probability gradients back into the logit layout.
        let mut g = Tensor::zeros(s);
        for b in 0..s.batch {
            g.plane_mut(b, 0).copy_from_slice(grad_detect.plane(b, 0));
        }
        if n > 0 {
            let gc = grad_class.ok_or_else(|| {
                Error::InvalidArgument("class gradient required when n_classes > 0".into())
            })?;
            let cls_shape = Shape::new(s.batch, n, s.height, s.width);
            if gc.shape() != cls_shape {
                return Err(Error::shape("backward class grad", cls_shape, gc.shape()));
            }
            for b in 0..s.batch {
                for c in 0..n {
                    g.plane_mut(b, c + 1).copy_from_slice(gc.plane(b, c));
                }
            }
        }
        g = activation_grad(logits, Activation::Sigmoid, 0..1, &g)?;
        if n > 0 {
            g = activation_grad(logits, Activation::ChannelSoftmax, 1..1 + n, &g)?;
        }

        let mut grads = Gradients::zeros_like(self);
        let mut conv_idx = cache.conv_inputs.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != self.layers.len() - 1 {
                let z = &cache.pre_activations[i];
                g = activation_grad(z, Activation::Relu, 0..z.shape().channels, &g)?;
            }
            let convs = layer.params.convs();
            for (j, conv) in convs.iter().enumerate().rev() {
                conv_idx -= 1;
                let input = &cache.conv_inputs[conv_idx];
                let first = i == 0 && j == 0;
                let (gx, gw, gb) = conv2d_backward(input, conv, &g, !first)?;
                grads.weights[conv_idx] = gw.into_data();
                if conv.bias.is_some() {
                    grads.biases[conv_idx] = Some(gb);
                }
                if let Some(gx) = gx {
                    g = gx;
                }
            }
        }
        Ok(grads)
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn write_f32s<T: Scalar>(w: &mut impl Write, values: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

struct Reader<'a, R> {
    inner: &'a mut R,
    path: &'a Path,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.path, "weight file truncated")
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes::<4>()?) as usize)
    }

    fn f32s<T: Scalar>(&mut self, out: &mut [T]) -> Result<()> {
        for v in out {
            *v = T::from_f64(f32::from_le_bytes(self.bytes::<4>()?) as f64);
        }
        Ok(())
    }
}

impl Network<f32> {
    /// Serializes config and parameters in the `BSEG` weight format.
    pub fn write_weights(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        write_u32(w, self.config.channels)?;
        write_u32(w, self.config.input_channels)?;
        write_u32(w, self.config.n_classes)?;
        for conv in self.convs() {
            for d in conv.weights.shape().dims() {
                write_u32(w, d)?;
            }
            write_f32s(w, conv.weights.data())?;
            match &conv.bias {
                Some(b) => {
                    write_u32(w, b.len())?;
                    write_f32s(w, b)?;
                }
                None => write_u32(w, 0)?,
            }
        }
        Ok(())
    }

    /// Parses the `BSEG` weight format. `path` only labels diagnostics.
    pub fn read_weights(r: &mut impl Read, path: &Path) -> Result<Self> {
        let mut rd = Reader { inner: r, path };
        if &rd.bytes::<4>()? != WEIGHTS_MAGIC {
            return Err(Error::format(path, "bad magic, not a BSEG weight file"));
        }
        let version = u16::from_le_bytes(rd.bytes::<2>()?);
        if version != WEIGHTS_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported weight format version {version} (expected {WEIGHTS_VERSION})"),
            ));
        }
        let config = NetworkConfig {
            channels: rd.u32()?,
            input_channels: rd.u32()?,
            n_classes: rd.u32()?,
        };
        config
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut net = Network::zeros(config)?;
        for (i, conv) in net.convs_mut().into_iter().enumerate() {
            let expected = conv.weights.shape();
            let dims = [rd.u32()?, rd.u32()?, rd.u32()?, rd.u32()?];
            if dims != expected.dims() {
                return Err(Error::format(
                    path,
                    format!(
                        "convolution {i}: weight shape {dims:?} does not match expected {:?}",
                        expected.dims()
                    ),
                ));
            }
            rd.f32s(conv.weights.data_mut())?;
            let bias_len = rd.u32()?;
            let expected_bias = conv.bias.as_ref().map_or(0, Vec::len);
            if bias_len != expected_bias {
                return Err(Error::format(
                    path,
                    format!("convolution {i}: bias length {bias_len}, expected {expected_bias}"),
                ));
            }
            if let Some(b) = conv.bias.as_mut() {
                rd.f32s(b)?;
            }
        }
        Ok(net)
    }
}

pub fn save_weights(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    net.write_weights(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    Network::read_weights(&mut r, path)
}

/// Loads weights and insists they were trained for `expected`.
pub fn load_weights_expecting(
    path: impl AsRef<Path>,
    expected: &NetworkConfig,
) -> Result<Network<f32>> {
    let net = load_weights(path)?;
    check_config(expected, net.config())?;
    Ok(net)
}

pub fn check_config(expected: &NetworkConfig, actual: &NetworkConfig) -> Result<()> {
    let fields = [
        ("channels", expected.channels, actual.channels),
        ("input_channels", expected.input_channels, actual.input_channels),
        ("n_classes", expected.n_classes, actual.n_classes),
    ];
    for (field, e, a) in fields {
        if e != a {
            return Err(Error::ConfigMismatch {
                field,
                expected: e as u64,
                actual: a as u64,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilations_and_strides_follow_the_table() {
        let layers = build_network(&NetworkConfig::default());
        assert_eq!(layers.len(), 10);
        assert_eq!(layers[4].dilation, 2);
        assert_eq!(layers[7].dilation, 16);
        let strides: Vec<_> = layers.iter().map(|l| l.stride).collect();
        assert_eq!(strides, [2, 1, 2, 1, 1, 1, 1, 1, 1, 1]);
        let separable: Vec<_> = layers.iter().map(|l| l.separable).collect();
        assert_eq!(separable, [true, true, true, false, false, false, false, false, false, false]);
        assert_eq!(layers[9].kernel, 1);
        assert!(layers[..9].iter().all(|l| l.kernel == 3 && l.out_channels == 24));
    }

    #[test]
    fn no_classes_means_single_output() {
        let layers = build_network(&NetworkConfig::default());
        assert_eq!(layers[9].out_channels, 1);
        let layers = build_network(&NetworkConfig::with_classes(5));
        assert_eq!(layers[9].out_channels, 6);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_parameters(&NetworkConfig::default()), 32962);
        let tiny = NetworkConfig {
            channels: 1,
            n_classes: 0,
            input_channels: 1,
        };
        assert_eq!(count_parameters(&tiny), 95);
        assert_eq!(count_parameters(&NetworkConfig::with_classes(5)), 33087);
    }

    #[test]
    fn receptive_field_small_cases() {
        let one = LayerSpec {
            index: 1,
            stride: 1,
            dilation: 1,
            separable: false,
            kernel: 3,
            in_channels: 1,
            out_channels: 1,
            activation: LayerActivation::Relu,
        };
        assert_eq!(receptive_fields(&[one]), [3]);
        let two = [LayerSpec { stride: 2, ..one }, one];
        assert_eq!(receptive_fields(&two), [3, 7]);
        assert_eq!(
            receptive_fields(&build_network(&NetworkConfig::default())),
            [3, 7, 11, 19, 35, 67, 131, 259, 267, 267]
        );
    }

    #[test]
    fn forward_rejects_non_divisible_input() {
        let net = Network::<f32>::init(NetworkConfig::default(), 1).unwrap();
        assert!(net.forward(&Tensor::zeros(Shape::new(1, 1, 30, 32))).is_err());
        assert!(net.forward(&Tensor::zeros(Shape::new(1, 3, 32, 32))).is_err());
    }

    #[test]
    fn zero_channels_rejected() {
        let cfg = NetworkConfig {
            channels: 0,
            ..Default::default()
        };
        assert!(Network::<f32>::zeros(cfg).is_err());
    }

    #[test]
    fn config_mismatch_names_field() {
        let err = check_config(&NetworkConfig::default(), &NetworkConfig {
            channels: 16,
            ..Default::default()
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channels") && msg.contains("24") && msg.contains("16"), "{msg}");
    }
}
