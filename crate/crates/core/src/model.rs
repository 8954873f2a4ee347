//! Declarative architectures and the networks built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    he_normal, l2_value, pooled_dims, softmax, BatchNorm, Conv2d, Dense, Dropout, Layer, LayerCache, Mode,
    NoSampling,
};
use crate::tensor::{Scalar, Shape4, Tensor};

pub const NUM_CLASSES: usize = 7;

/// FER-2013 class names in label order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["angry", "disgust", "fear", "happy", "sad", "surprise", "neutral"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default)]
        l2_lambda: f64,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool2d,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

/// Per-example input geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: InputShape,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Per-example activation shape while walking a spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl ModelSpec {
    pub const FER_INPUT: InputShape = InputShape {
        channels: 1,
        height: 48,
        width: 48,
    };

    /// Conv pairs/singles with BN before ReLU, three pools, then dropout 0.2
    /// and a single classifier layer.
    pub fn baseline() -> Self {
        use LayerSpec::*;
        let conv = |i, o| Conv2d { in_channels: i, out_channels: o, kernel: 3, l2_lambda: 0.0 };
        let layers = vec![
            conv(1, 32),
            BatchNorm { channels: 32 },
            Relu,
            conv(32, 32),
            BatchNorm { channels: 32 },
            Relu,
            MaxPool2d,
            conv(32, 64),
            BatchNorm { channels: 64 },
            Relu,
            MaxPool2d,
            conv(64, 64),
            BatchNorm { channels: 64 },
            Relu,
            MaxPool2d,
            Flatten,
            Dropout { rate: 0.2 },
            Dense { in_features: 64 * 6 * 6, out_features: NUM_CLASSES },
        ];
        ModelSpec {
            name: "baseline".into(),
            input: Self::FER_INPUT,
            num_classes: NUM_CLASSES,
            layers,
        }
    }

    /// Four stages of two 32-filter convolutions, 2x2 pooling and dropout 0.5.
    /// The first convolution carries L2 0.01 instead of batch normalization.
    pub fn five_layer() -> Self {
        use LayerSpec::*;
        let mut layers = vec![
            Conv2d { in_channels: 1, out_channels: 32, kernel: 3, l2_lambda: 0.01 },
            Relu,
        ];
        for stage in 0..4 {
            let convs = if stage == 0 { 1 } else { 2 };
            for _ in 0..convs {
                layers.extend([
                    Conv2d { in_channels: 32, out_channels: 32, kernel: 3, l2_lambda: 0.0 },
                    BatchNorm { channels: 32 },
                    Relu,
                ]);
            }
            layers.extend([MaxPool2d, Dropout { rate: 0.5 }]);
        }
        layers.extend([
            Flatten,
            Dense { in_features: 32 * 3 * 3, out_features: 512 },
            Relu,
            Dropout { rate: 0.5 },
            Dense { in_features: 512, out_features: NUM_CLASSES },
        ]);
        ModelSpec {
            name: "five-layer".into(),
            input: Self::FER_INPUT,
            num_classes: NUM_CLASSES,
            layers,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::baseline()),
            "five-layer" | "five_layer" => Ok(Self::five_layer()),
            other => Err(Error::Spec(format!("unknown model `{other}` (expected baseline or five-layer)"))),
        }
    }

    /// Walks the layer list and returns the activation shape after every
    /// layer. Fails on the first layer whose declared input does not match.
    pub fn shape_trace(&self) -> Result<Vec<Activation>> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Spec(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes)));
        }
        let InputShape { channels, height, width } = self.input;
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Spec(format!("input extents must be positive: {:?}", self.input)));
        }
        let mut cur = Activation::Image { c: channels, h: height, w: width };
        let mut trace = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Spec(format!("layer {i} ({layer:?}): {msg}"));
            cur = match (*layer, cur) {
                (LayerSpec::Conv2d { in_channels, out_channels, kernel, l2_lambda }, Activation::Image { c, h, w }) => {
                    if in_channels != c {
                        return Err(bad(format!("expects {in_channels} channels, receives {c}")));
                    }
                    if kernel % 2 == 0 || out_channels == 0 || !(l2_lambda >= 0.0) {
                        return Err(bad("kernel must be odd, filters positive, lambda >= 0".into()));
                    }
                    Activation::Image { c: out_channels, h, w }
                }
                (LayerSpec::BatchNorm { channels }, Activation::Image { c, .. })
                | (LayerSpec::BatchNorm { channels }, Activation::Flat(c)) => {
                    if channels != c {
                        return Err(bad(format!("normalizes {channels} channels, receives {c}")));
                    }
                    cur
                }
                (LayerSpec::Relu, a) => a,
                (LayerSpec::MaxPool2d, Activation::Image { c, h, w }) => {
                    let p = pooled_dims(Shape4 { n: 1, c, h, w }).map_err(|e| bad(e.to_string()))?;
                    Activation::Image { c, h: p.h, w: p.w }
                }
                (LayerSpec::Dropout { rate }, a) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    a
                }
                (LayerSpec::Flatten, Activation::Image { c, h, w }) => Activation::Flat(c * h * w),
                (LayerSpec::Flatten, a @ Activation::Flat(_)) => a,
                (LayerSpec::Dense { in_features, out_features }, Activation::Flat(f)) => {
                    if in_features != f {
                        return Err(bad(format!("expects {in_features} features, receives {f}")));
                    }
                    Activation::Flat(out_features)
                }
                (_, a) => return Err(bad(format!("cannot consume activation {a:?}"))),
            };
            trace.push(cur);
        }
        if cur != Activation::Flat(self.num_classes) {
            return Err(Error::Spec(format!(
                "network ends in {cur:?}, expected {} logits",
                self.num_classes
            )));
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape_trace().map(|_| ())
    }

    /// Number of trainable scalars (weights, biases, gamma and beta).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    out_channels * in_channels * kernel * kernel + out_channels
                }
                LayerSpec::BatchNorm { channels } => 2 * channels,
                LayerSpec::Dense { in_features, out_features } => out_features * in_features + out_features,
                _ => 0,
            })
            .sum()
    }
}

/// A network instantiated from a [`ModelSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    layers: Vec<Layer<T>>,
}

/// Gradients from one backward pass: the network input and every layer's
/// parameters (outer index = layer).
pub struct ModelGrads<T> {
    pub input: Tensor<T>,
    pub params: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Model<T> {
    /// He-normal weights, zero biases, identity batch norm; determined by `rng`.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| -> Result<Layer<T>> {
                Ok(match *l {
                    LayerSpec::Conv2d { in_channels, out_channels, kernel, l2_lambda } => {
                        let fan_in = in_channels * kernel * kernel;
                        Layer::Conv2d(Conv2d::new(
                            he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
                            Tensor::zeros(&[out_channels]),
                            l2_lambda,
                        )?)
                    }
                    LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)),
                    LayerSpec::Relu => Layer::Relu,
                    LayerSpec::MaxPool2d => Layer::MaxPool2d,
                    LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
                    LayerSpec::Flatten => Layer::Flatten,
                    LayerSpec::Dense { in_features, out_features } => Layer::Dense(Dense::new(
                        he_normal(&[out_features, in_features], in_features, rng),
                        Tensor::zeros(&[out_features]),
                    )?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { spec, layers })
    }

    pub fn from_seed(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::init(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<Shape4> {
        let dims = x.dims4()?;
        let InputShape { channels, height, width } = self.spec.input;
        if (dims.c, dims.h, dims.w) != (channels, height, width) {
            return Err(Error::shape(
                "model input",
                format!(
                    "batch {:?} does not match {} input {channels}x{height}x{width}",
                    x.shape(),
                    self.spec.name
                ),
            ));
        }
        Ok(dims)
    }

    /// Runs every layer in order, returning logits and per-layer caches.
    pub fn forward_logits<R: Rng + ?Sized>(
        &mut self,
        batch: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        self.check_input(&batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            let (y, cache) = layer.forward(x, mode, rng).map_err(|e| Error::Layer {
                layer: i,
                kind,
                source: Box::new(e),
            })?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Class probabilities, `[n, 7]`, rows summing to 1.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        let (logits, caches) = self.forward_logits(batch, mode, rng)?;
        Ok((softmax(&logits)?, caches))
    }

    /// Inference-mode probabilities; no randomness is consumed.
    pub fn predict(&mut self, batch: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(batch, Mode::Infer, &mut NoSampling)?.0)
    }

    /// Back-propagates `grad_logits` through the cached forward pass.
    pub fn backward(&self, caches: &[LayerCache<T>], grad_logits: Tensor<T>) -> Result<ModelGrads<T>> {
        if caches.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut params = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_logits;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let g = layer.backward(cache, &grad).map_err(|e| Error::Layer {
                layer: i,
                kind: layer.kind(),
                source: Box::new(e),
            })?;
            params[i] = g.params;
            grad = g.input;
        }
        Ok(ModelGrads { input: grad, params })
    }

    /// Total L2 penalty; when `grads` is given, adds `2 lambda W` to the
    /// matching weight gradients.
    pub fn l2_penalty(&self, grads: Option<&mut ModelGrads<T>>) -> f64 {
        let mut total = 0.0;
        let mut grads = grads;
        for (i, layer) in self.layers.iter().enumerate() {
            let lambda = layer.l2_lambda();
            if lambda == 0.0 {
                continue;
            }
            let w = layer.params()[0];
            total += l2_value(w, lambda);
            if let Some(g) = grads.as_deref_mut() {
                let k = T::lit(2.0 * lambda);
                for (gv, &wv) in g.params[i][0].as_mut_slice().iter_mut().zip(w.as_slice()) {
                    *gv = *gv + k * wv;
                }
            }
        }
        total
    }
}

pub fn build_baseline<T: Scalar>(seed: u64) -> Model<T> {
    Model::from_seed(ModelSpec::baseline(), seed).expect("baseline spec is valid")
}

pub fn build_five_layer<T: Scalar>(seed: u64) -> Model<T> {
    Model::from_seed(ModelSpec::five_layer(), seed).expect("five-layer spec is valid")
}
