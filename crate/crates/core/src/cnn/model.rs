//! Network architecture, parameter storage and whole-network passes.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Conv2d, Dense, ParamGrad};
use super::tensor::{Shape, Tensor};
use super::{CnnError, Result, OUTPUTS};
use crate::binio::{ByteReader, ByteWriter, DecodeError};

pub const CNN_MAGIC: &[u8; 8] = b"SONOCNN\0";
pub const CNN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv { kernel: usize, out_channels: usize },
    Relu,
    MaxPool2,
    Flatten,
    Dense { outputs: usize },
    /// Fixed, non-trainable output multiplier.
    Scale(f64),
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { kernel, out_channels } => write!(f, "conv{kernel}:{out_channels}"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool2 => write!(f, "pool2"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::Dense { outputs } => write!(f, "dense:{outputs}"),
            LayerSpec::Scale(s) => write!(f, "scale:{s}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = CnnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CnnError::Architecture(format!("unknown layer `{s}`"));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad());
        Ok(match s {
            "relu" => LayerSpec::Relu,
            "pool2" => LayerSpec::MaxPool2,
            "flatten" => LayerSpec::Flatten,
            _ => {
                let (head, arg) = s.split_once(':').ok_or_else(bad)?;
                if let Some(k) = head.strip_prefix("conv") {
                    LayerSpec::Conv {
                        kernel: parse_usize(k)?,
                        out_channels: parse_usize(arg)?,
                    }
                } else if head == "dense" {
                    LayerSpec::Dense {
                        outputs: parse_usize(arg)?,
                    }
                } else if head == "scale" {
                    LayerSpec::Scale(arg.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

/// Input shape plus an ordered layer list. The text form is
/// `input=CxHxW;layer;layer;...`, e.g.
/// `input=1x32x32;conv3:8;relu;pool2;flatten;dense:4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input={}", self.input)?;
        for l in &self.layers {
            write!(f, ";{l}")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = CnnError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(';').map(str::trim);
        let input = parts
            .next()
            .and_then(|p| p.strip_prefix("input="))
            .ok_or_else(|| CnnError::Architecture("descriptor must start with input=CxHxW".into()))?;
        let dims: Vec<usize> = input
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CnnError::Architecture(format!("bad input shape `{input}`")))?;
        let [c, h, w] = dims[..] else {
            return Err(CnnError::Architecture(format!("bad input shape `{input}`")));
        };
        let layers = parts.map(LayerSpec::from_str).collect::<Result<Vec<_>>>()?;
        let arch = Self {
            input: Shape::image(c, h, w),
            layers,
        };
        arch.shapes()?;
        Ok(arch)
    }
}

impl Architecture {
    /// The default regression network for a single-channel `height x width`
    /// input: two conv/ReLU/pool stages, a hidden dense layer and a linear
    /// 4-output head in degrees.
    pub fn micro(height: usize, width: usize) -> Self {
        Self {
            input: Shape::image(1, height, width),
            layers: vec![
                LayerSpec::Conv { kernel: 3, out_channels: 8 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Conv { kernel: 3, out_channels: 16 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { outputs: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { outputs: OUTPUTS },
            ],
        }
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let err = |i: usize, msg: String| CnnError::Architecture(format!("layer {i}: {msg}"));
        if self.input.is_empty() {
            return Err(CnnError::Architecture("empty input shape".into()));
        }
        let mut shapes = vec![self.input];
        let mut cur = self.input;
        for (i, l) in self.layers.iter().enumerate() {
            cur = match (*l, cur) {
                (LayerSpec::Conv { kernel, out_channels }, Shape::Image { height, width, .. }) => {
                    if kernel % 2 == 0 || kernel == 0 || out_channels == 0 {
                        return Err(err(i, format!("{l} needs an odd kernel and at least one channel")));
                    }
                    Shape::image(out_channels, height, width)
                }
                (LayerSpec::MaxPool2, Shape::Image { channels, height, width }) => {
                    if height < 2 || width < 2 {
                        return Err(err(i, format!("cannot pool a {cur} activation")));
                    }
                    Shape::image(channels, height / 2, width / 2)
                }
                (LayerSpec::Flatten, s) => Shape::Flat(s.len()),
                (LayerSpec::Dense { outputs }, Shape::Flat(_)) if outputs > 0 => Shape::Flat(outputs),
                (LayerSpec::Relu | LayerSpec::Scale(_), s) => s,
                _ => return Err(err(i, format!("{l} cannot take a {cur} input"))),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("input shape present"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2,
    Flatten,
    Dense(Dense),
    Scale(f64),
}

impl Layer {
    /// Weights and bias of a parameterised layer.
    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv2d(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv2d(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(0);

fn next_instance() -> u64 {
    NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed)
}

/// A 4-output regression network.
#[derive(Debug)]
pub struct CnnModel {
    arch: Architecture,
    shapes: Vec<Shape>,
    layers: Vec<Layer>,
    /// Process-unique id plus a counter bumped on every parameter change;
    /// [`CnnModel::backward`] rejects caches stamped with anything else.
    instance: u64,
    revision: u64,
}

impl Clone for CnnModel {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            layers: self.layers.clone(),
            instance: next_instance(),
            revision: 0,
        }
    }
}

/// Equal when architecture and every parameter match; the revision counter
/// is bookkeeping and not compared.
impl PartialEq for CnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers
    }
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    instance: u64,
    revision: u64,
    descriptor: String,
    inputs: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
}

/// Per-layer parameter gradients (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(model: &CnnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| l.params().map(|(w, b)| ParamGrad::zeros(w.len(), b.len())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.layers.iter_mut().flatten().for_each(|g| g.scale(k));
    }

    /// All gradient values, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
    }
}

impl CnnModel {
    /// Build with He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.shapes()?;
        if shapes.last() != Some(&Shape::Flat(OUTPUTS)) {
            return Err(CnnError::Architecture(format!(
                "network must end in {OUTPUTS} outputs, got {}",
                shapes.last().expect("input shape present")
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<f64> {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let layers = arch
            .layers
            .iter()
            .zip(&shapes)
            .map(|(spec, &input)| match *spec {
                LayerSpec::Conv { kernel, out_channels } => {
                    let Shape::Image { channels, .. } = input else { unreachable!() };
                    let mut conv = Conv2d::new(channels, out_channels, kernel);
                    conv.weights = he(channels * kernel * kernel, conv.weights.len());
                    Layer::Conv2d(conv)
                }
                LayerSpec::Dense { outputs } => {
                    let mut dense = Dense::new(input.len(), outputs);
                    dense.weights = he(input.len(), dense.weights.len());
                    Layer::Dense(dense)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2 => Layer::MaxPool2,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Scale(s) => Layer::Scale(s),
            })
            .collect();
        Ok(Self {
            arch,
            shapes,
            layers,
            instance: next_instance(),
            revision: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn descriptor(&self) -> String {
        self.arch.to_string()
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::params).map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Visit every trainable parameter buffer mutably, in a fixed order
    /// matching [`Gradients::layers`]. Invalidates outstanding caches.
    pub fn update_params(&mut self, mut f: impl FnMut(usize, &mut [f64], &mut [f64])) {
        self.revision += 1;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Some((w, b)) = layer.params_mut() {
                f(i, w, b);
            }
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input.len() {
            return Err(CnnError::Shape {
                expected: self.arch.input.to_string(),
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::Data("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Inference only.
    pub fn predict(&self, input: &[f64]) -> Result<[f64; OUTPUTS]> {
        self.check_input(input)?;
        let mut x = Tensor::new(self.arch.input, input.to_vec());
        for layer in &self.layers {
            x = match layer {
                Layer::Conv2d(c) => c.forward(&x),
                Layer::Relu => layers::relu_forward(&x),
                Layer::MaxPool2 => layers::maxpool_forward(&x).0,
                Layer::Flatten => Tensor::new(Shape::Flat(x.data.len()), x.data),
                Layer::Dense(d) => d.forward(&x),
                Layer::Scale(s) => Tensor::new(x.shape, x.data.iter().map(|v| v * s).collect()),
            };
        }
        Ok(x.data.try_into().expect("output length checked at construction"))
    }

    /// Forward pass that also records what [`CnnModel::backward`] needs.
    pub fn forward(&self, input: &[f64]) -> Result<([f64; OUTPUTS], ForwardCache)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pool_argmax = Vec::new();
        let mut x = Tensor::new(self.arch.input, input.to_vec());
        for layer in &self.layers {
            let next = match layer {
                Layer::Conv2d(c) => c.forward(&x),
                Layer::Relu => layers::relu_forward(&x),
                Layer::MaxPool2 => {
                    let (y, arg) = layers::maxpool_forward(&x);
                    pool_argmax.push(arg);
                    y
                }
                Layer::Flatten => Tensor::new(Shape::Flat(x.data.len()), x.data.clone()),
                Layer::Dense(d) => d.forward(&x),
                Layer::Scale(s) => Tensor::new(x.shape, x.data.iter().map(|v| v * s).collect()),
            };
            inputs.push(std::mem::replace(&mut x, next));
        }
        let out = x.data.try_into().expect("output length checked at construction");
        Ok((
            out,
            ForwardCache {
                instance: self.instance,
                revision: self.revision,
                descriptor: self.descriptor(),
                inputs,
                pool_argmax,
            },
        ))
    }

    /// Parameter gradients given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64; OUTPUTS]) -> Result<Gradients> {
        if cache.instance != self.instance
            || cache.revision != self.revision
            || cache.descriptor != self.descriptor()
            || cache.inputs.len() != self.layers.len()
            || cache.inputs.iter().zip(&self.shapes).any(|(t, s)| t.shape != *s)
        {
            return Err(CnnError::StaleCache);
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = Tensor::new(Shape::Flat(OUTPUTS), grad_output.to_vec());
        let mut pools = cache.pool_argmax.iter().rev();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            // The input gradient of the first layer is never needed.
            let want_input = i > 0;
            g = match layer {
                Layer::Conv2d(c) => {
                    let (gi, gp) = c.backward(input, &g, want_input);
                    grads[i] = Some(gp);
                    match gi {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                Layer::Dense(d) => {
                    let (gi, gp) = d.backward(input, &g, want_input);
                    grads[i] = Some(gp);
                    match gi {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                Layer::Relu => layers::relu_backward(input, &g),
                Layer::MaxPool2 => {
                    let arg = pools.next().ok_or(CnnError::StaleCache)?;
                    layers::maxpool_backward(input.shape, arg, &g)
                }
                Layer::Flatten => Tensor::new(input.shape, g.data),
                Layer::Scale(s) => Tensor::new(g.shape, g.data.iter().map(|v| v * s).collect()),
            };
        }
        Ok(Gradients { layers: grads })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CNN_MAGIC);
        w.u32(CNN_VERSION);
        w.str(&self.descriptor());
        for (weights, bias) in self.layers.iter().filter_map(Layer::params) {
            w.u64(weights.len() as u64);
            w.f64s(weights);
            w.u64(bias.len() as u64);
            w.f64s(bias);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CNN_MAGIC)?;
        r.version(CNN_VERSION)?;
        let arch: Architecture = r.str()?.parse()?;
        let mut model = Self::new(arch, 0)?;
        for layer in &mut model.layers {
            if let Some((weights, bias)) = layer.params_mut() {
                for buf in [weights, bias] {
                    let n = r.u64()? as usize;
                    if n != buf.len() {
                        return Err(DecodeError::Invalid(format!(
                            "parameter block of {n} values, architecture expects {}",
                            buf.len()
                        ))
                        .into());
                    }
                    *buf = r.f64s(n)?;
                }
            }
        }
        r.finish()?;
        Ok(model)
    }

    /// Decode and additionally require a specific architecture.
    pub fn from_bytes_expecting(bytes: &[u8], expected: &Architecture) -> Result<Self> {
        let model = Self::from_bytes(bytes)?;
        if model.arch != *expected {
            return Err(CnnError::ArchitectureMismatch {
                expected: expected.to_string(),
                found: model.descriptor(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Architecture {
        "input=1x6x5;conv3:3;relu;pool2;conv3:2;relu;flatten;dense:5;relu;dense:4;scale:10"
            .parse()
            .unwrap()
    }

    fn input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn descriptor_round_trip() {
        let a = Architecture::micro(32, 32);
        let s = a.to_string();
        assert_eq!(
            s,
            "input=1x32x32;conv3:8;relu;pool2;conv3:16;relu;pool2;flatten;dense:64;relu;dense:4"
        );
        assert_eq!(s.parse::<Architecture>().unwrap(), a);
        assert_eq!(a.output_shape().unwrap(), Shape::Flat(4));
    }

    #[test]
    fn bad_descriptors_rejected() {
        for d in [
            "conv3:8",
            "input=1x8;relu",
            "input=1x8x8;conv2:4",
            "input=1x8x8;dense:4",
            "input=1x8x8;wat",
            "input=1x1x1;pool2",
        ] {
            assert!(d.parse::<Architecture>().is_err(), "{d}");
        }
        let no_head: Architecture = "input=1x4x4;flatten;dense:3".parse().unwrap();
        assert!(matches!(CnnModel::new(no_head, 0), Err(CnnError::Architecture(_))));
    }

    #[test]
    fn he_init_bounds_and_zero_bias() {
        let m = CnnModel::new(Architecture::micro(16, 16), 3).unwrap();
        for layer in m.layers() {
            if let Layer::Conv2d(c) = layer {
                let bound = (6.0 / (c.in_channels * 9) as f64).sqrt();
                assert!(c.weights.iter().all(|w| w.abs() <= bound));
                assert!(c.bias.iter().all(|&b| b == 0.0));
            }
            if let Layer::Dense(d) = layer {
                let bound = (6.0 / d.inputs as f64).sqrt();
                assert!(d.weights.iter().all(|w| w.abs() <= bound));
            }
        }
        assert_eq!(m, CnnModel::new(Architecture::micro(16, 16), 3).unwrap());
        assert_ne!(m, CnnModel::new(Architecture::micro(16, 16), 4).unwrap());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut model = CnnModel::new(tiny(), 1).unwrap();
        let (_, cache) = model.forward(&input(1, 30)).unwrap();
        assert!(model.backward(&cache, &[1.0; 4]).is_ok());
        model.update_params(|_, w, _| w[0] += 0.1);
        assert!(matches!(model.backward(&cache, &[1.0; 4]), Err(CnnError::StaleCache)));
        let other = CnnModel::new(Architecture::micro(8, 8), 1).unwrap();
        assert!(matches!(other.backward(&cache, &[1.0; 4]), Err(CnnError::StaleCache)));
        let twin = CnnModel::new(tiny(), 1).unwrap();
        let (_, fresh) = twin.forward(&input(1, 30)).unwrap();
        assert!(matches!(twin.clone().backward(&fresh, &[1.0; 4]), Err(CnnError::StaleCache)));
        assert!(matches!(
            CnnModel::new(tiny(), 1).unwrap().backward(&fresh, &[1.0; 4]),
            Err(CnnError::StaleCache)
        ));
    }

    #[test]
    fn forward_matches_predict_and_rejects_bad_input() {
        let model = CnnModel::new(tiny(), 2).unwrap();
        let x = input(5, 30);
        assert_eq!(model.forward(&x).unwrap().0, model.predict(&x).unwrap());
        assert!(matches!(model.predict(&x[..29]), Err(CnnError::Shape { .. })));
        let mut nan = x.clone();
        nan[3] = f64::NAN;
        assert!(matches!(model.predict(&nan), Err(CnnError::Data(_))));
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let mut model = CnnModel::new(Architecture::micro(8, 8), 5).unwrap();
        model.update_params(|_, w, b| {
            w.fill(0.0);
            b.fill(0.0);
        });
        assert_eq!(model.predict(&input(3, 64)).unwrap(), [0.0; 4]);
        let (_, cache) = model.forward(&input(3, 64)).unwrap();
        let g = model.backward(&cache, &[0.0; 4]).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn hand_traced_passthrough() {
        // 2x2 input -> 1x1 conv (weight 1) -> relu -> pool -> dense with unit
        // weights and biases 0..3: every output is max(input) + its bias.
        let arch: Architecture = "input=1x2x2;conv1:1;relu;pool2;flatten;dense:4".parse().unwrap();
        let mut model = CnnModel::new(arch, 0).unwrap();
        model.update_params(|i, w, b| {
            w.fill(1.0);
            if i == 4 {
                b.copy_from_slice(&[0.0, 1.0, 2.0, 3.0]);
            } else {
                b.fill(0.0);
            }
        });
        assert_eq!(model.predict(&[0.1, 0.7, 0.4, 0.2]).unwrap(), [0.7, 1.7, 2.7, 3.7]);
    }

    #[test]
    fn random_models_stay_finite() {
        for seed in 0..10 {
            let model = CnnModel::new(Architecture::micro(16, 12), seed).unwrap();
            let out = model.predict(&input(seed, 192)).unwrap();
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn file_round_trip_and_architecture_check() {
        let model = CnnModel::new(tiny(), 9).unwrap();
        let bytes = model.to_bytes();
        let back = CnnModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let x = input(2, 30);
        assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
        assert!(CnnModel::from_bytes_expecting(&bytes, &tiny()).is_ok());
        assert!(matches!(
            CnnModel::from_bytes_expecting(&bytes, &Architecture::micro(8, 8)),
            Err(CnnError::ArchitectureMismatch { .. })
        ));
        assert!(matches!(CnnModel::from_bytes(&bytes[..bytes.len() - 3]), Err(CnnError::Format(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(CnnModel::from_bytes(&wrong), Err(CnnError::Format(DecodeError::Magic { .. }))));
    }
}
