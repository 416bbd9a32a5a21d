//! Declarative model configs, the layer plan built from them, and the trainable network.
//!
//! A config expands to
//! `[conv3x3 -> ReLU -> maxpool2x2 -> dropout] x n -> flatten -> [dense -> ReLU -> dropout] x m -> dense -> softmax`.
//! [`build_model`] only plans shapes, so huge presets can be checked without
//! allocating their weights; [`Network::init`] allocates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward, flatten, he_init,
    maxpool_backward, maxpool_forward, relu, relu_backward, softmax, unflatten, ConvParams, DenseParams, LayerCache,
    Mode, KERNEL_SIZE, POOL_SIZE,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub conv_kernels: Vec<usize>,
    pub conv_dropout_pct: Vec<u32>,
    pub hidden_units: Vec<usize>,
    pub hidden_dropout_pct: Vec<u32>,
    pub num_classes: usize,
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_kernels.len() != self.conv_dropout_pct.len() {
            return Err(Error::Config(format!(
                "{} conv layers but {} conv dropout values",
                self.conv_kernels.len(),
                self.conv_dropout_pct.len()
            )));
        }
        if self.hidden_units.len() != self.hidden_dropout_pct.len() {
            return Err(Error::Config(format!(
                "{} hidden layers but {} hidden dropout values",
                self.hidden_units.len(),
                self.hidden_dropout_pct.len()
            )));
        }
        if self.conv_kernels.iter().chain(&self.hidden_units).any(|&n| n == 0) {
            return Err(Error::Config("kernel and unit counts must be at least 1".into()));
        }
        if let Some(p) = self.conv_dropout_pct.iter().chain(&self.hidden_dropout_pct).find(|&&p| p >= 100) {
            return Err(Error::Config(format!("dropout percentage {p} outside [0, 100)")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.input.contains(&0) {
            return Err(Error::Config(format!("input extents must be positive, got {:?}", self.input)));
        }
        Ok(())
    }

    pub fn with_input(mut self, input: [usize; 3]) -> Self {
        self.input = input;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }
}

/// Final `(C, H, W)` before flattening, by the same-padding / floor-pool recurrence.
pub fn feature_shape(cfg: &ModelConfig) -> Option<[usize; 3]> {
    let [mut c, mut h, mut w] = cfg.input;
    for &k in &cfg.conv_kernels {
        c = k;
        h /= POOL_SIZE;
        w /= POOL_SIZE;
        if h == 0 || w == 0 {
            return None;
        }
    }
    Some([c, h, w])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv { in_channels: usize, out_channels: usize },
    Relu,
    MaxPool,
    Dropout { pct: u32 },
    Flatten { chw: [usize; 3] },
    Dense { in_units: usize, out_units: usize },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_channels, out_channels } => {
                out_channels * in_channels * KERNEL_SIZE * KERNEL_SIZE + out_channels
            }
            LayerSpec::Dense { in_units, out_units } => out_units * in_units + out_units,
            _ => 0,
        }
    }
}

/// One planned layer with the per-sample shape it produces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedLayer {
    pub spec: LayerSpec,
    pub output: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub config: ModelConfig,
    pub layers: Vec<PlannedLayer>,
}

impl ModelPlan {
    pub fn flatten_width(&self) -> usize {
        self.layers
            .iter()
            .find(|l| matches!(l.spec, LayerSpec::Flatten { .. }))
            .map(|l| l.output[0])
            .unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.output[0]).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Output shape of the `n`-th (0-based) layer of the given kind.
    pub fn nth_output(&self, name: &str, n: usize) -> Option<&[usize]> {
        self.layers
            .iter()
            .filter(|l| l.spec.name() == name)
            .nth(n)
            .map(|l| l.output.as_slice())
    }
}

/// Plans the layer stack and every intermediate shape for `cfg`.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelPlan> {
    cfg.validate()?;
    let [mut c, mut h, mut w] = cfg.input;
    let mut layers = Vec::new();
    for (i, (&k, &pct)) in cfg.conv_kernels.iter().zip(&cfg.conv_dropout_pct).enumerate() {
        layers.push(PlannedLayer {
            spec: LayerSpec::Conv { in_channels: c, out_channels: k },
            output: vec![k, h, w],
        });
        c = k;
        layers.push(PlannedLayer { spec: LayerSpec::Relu, output: vec![c, h, w] });
        if h < POOL_SIZE || w < POOL_SIZE {
            return Err(Error::Config(format!(
                "maxpool after conv layer {} receives {h}x{w}; spatial size collapses below 1x1",
                i + 1
            )));
        }
        h /= POOL_SIZE;
        w /= POOL_SIZE;
        layers.push(PlannedLayer { spec: LayerSpec::MaxPool, output: vec![c, h, w] });
        if pct > 0 {
            layers.push(PlannedLayer { spec: LayerSpec::Dropout { pct }, output: vec![c, h, w] });
        }
    }
    let mut units = c * h * w;
    layers.push(PlannedLayer {
        spec: LayerSpec::Flatten { chw: [c, h, w] },
        output: vec![units],
    });
    for (&n, &pct) in cfg.hidden_units.iter().zip(&cfg.hidden_dropout_pct) {
        layers.push(PlannedLayer {
            spec: LayerSpec::Dense { in_units: units, out_units: n },
            output: vec![n],
        });
        units = n;
        layers.push(PlannedLayer { spec: LayerSpec::Relu, output: vec![n] });
        if pct > 0 {
            layers.push(PlannedLayer { spec: LayerSpec::Dropout { pct }, output: vec![n] });
        }
    }
    layers.push(PlannedLayer {
        spec: LayerSpec::Dense { in_units: units, out_units: cfg.num_classes },
        output: vec![cfg.num_classes],
    });
    layers.push(PlannedLayer { spec: LayerSpec::Softmax, output: vec![cfg.num_classes] });
    Ok(ModelPlan {
        config: cfg.clone(),
        layers,
    })
}

#[derive(Clone, Debug)]
enum Layer {
    Conv(ConvParams),
    Relu,
    MaxPool,
    Dropout(f64),
    Flatten([usize; 3]),
    Dense(DenseParams),
}

/// Initialized model: parameters plus per-layer forward caches.
///
/// The trailing softmax is applied by [`Network::predict`]; `forward` returns logits.
#[derive(Clone, Debug)]
pub struct Network {
    plan: ModelPlan,
    layers: Vec<Layer>,
    caches: Vec<LayerCache>,
}

impl Network {
    /// He-initialized weights, zero biases. Layer `i` draws from `init.derive("layer", i)`.
    pub fn init(plan: &ModelPlan, init: &RngStream) -> Result<Self> {
        let mut layers = Vec::with_capacity(plan.layers.len());
        for (i, planned) in plan.layers.iter().enumerate() {
            let mut stream = init.derive("layer", i as u64);
            let layer = match planned.spec {
                LayerSpec::Conv { in_channels, out_channels } => {
                    let fan_in = in_channels * KERNEL_SIZE * KERNEL_SIZE;
                    Layer::Conv(ConvParams::new(
                        he_init(&[out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE], fan_in, &mut stream)?,
                        Tensor::zeros(&[out_channels])?,
                    )?)
                }
                LayerSpec::Dense { in_units, out_units } => Layer::Dense(DenseParams::new(
                    he_init(&[out_units, in_units], in_units, &mut stream)?,
                    Tensor::zeros(&[out_units])?,
                )?),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::Dropout { pct } => Layer::Dropout(pct as f64 / 100.0),
                LayerSpec::Flatten { chw } => Layer::Flatten(chw),
                LayerSpec::Softmax => continue,
            };
            layers.push(layer);
        }
        let caches = vec![LayerCache::new(); layers.len()];
        Ok(Network {
            plan: plan.clone(),
            layers,
            caches,
        })
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn config(&self) -> &ModelConfig {
        &self.plan.config
    }

    pub fn num_classes(&self) -> usize {
        self.plan.config.num_classes
    }

    /// Logits for a `(B, C, H, W)` batch. Dropout layer `i` draws from
    /// `dropout.derive("layer", i)` in train mode.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, dropout_stream: Option<&RngStream>) -> Result<Tensor> {
        let [c, h, w] = self.plan.config.input;
        if x.rank() != 4 || x.shape()[1..] != [c, h, w] {
            return Err(Error::Shape(format!(
                "network expects (B,{c},{h},{w}), got {:?}",
                x.shape()
            )));
        }
        let mut act = x.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(self.caches.iter_mut()).enumerate() {
            act = match layer {
                Layer::Conv(p) => conv2d_forward(&act, p, cache)?,
                Layer::Relu => relu(&act, cache),
                Layer::MaxPool => maxpool_forward(&act, cache)?,
                Layer::Dropout(rate) => {
                    let mut stream = dropout_stream.map(|s| s.derive("layer", i as u64));
                    dropout(&act, *rate, mode, stream.as_mut(), cache)?
                }
                Layer::Flatten(_) => flatten(&act)?,
                Layer::Dense(p) => dense_forward(&act, p, cache)?,
            };
        }
        Ok(act)
    }

    /// Class probabilities in eval mode.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let logits = self.forward(x, Mode::Eval, None)?;
        softmax(&logits)
    }

    /// Back-propagates `grad_logits` through the last forward pass.
    /// Returns gradients in [`Network::params`] order.
    pub fn backward(&self, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let mut grads = Vec::new();
        let mut g = grad_logits.clone();
        for (layer, cache) in self.layers.iter().zip(&self.caches).rev() {
            g = match layer {
                Layer::Conv(p) => {
                    let (gx, gw, gb) = conv2d_backward(&g, cache, p)?;
                    grads.push(gb);
                    grads.push(gw);
                    gx
                }
                Layer::Dense(p) => {
                    let (gx, gw, gb) = dense_backward(&g, cache, p)?;
                    grads.push(gb);
                    grads.push(gw);
                    gx
                }
                Layer::Relu => relu_backward(&g, cache)?,
                Layer::MaxPool => maxpool_backward(&g, cache)?,
                Layer::Dropout(_) => dropout_backward(&g, cache)?,
                Layer::Flatten(chw) => unflatten(&g, *chw)?,
            };
        }
        grads.reverse();
        Ok(grads)
    }

    /// Parameters as `[w0, b0, w1, b1, ...]` in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(p) => out.extend([&p.weights, &p.bias]),
                Layer::Dense(p) => out.extend([&p.weights, &p.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(p) => out.extend([&mut p.weights, &mut p.bias]),
                Layer::Dense(p) => out.extend([&mut p.weights, &mut p.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    /// Replaces every parameter; shapes must match.
    pub fn load_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut targets = self.params_mut();
        if targets.len() != values.len() {
            return Err(Error::Compatibility(format!(
                "model has {} parameter tensors, got {}",
                targets.len(),
                values.len()
            )));
        }
        for (i, (t, v)) in targets.iter().zip(&values).enumerate() {
            if t.shape() != v.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {i}: expected shape {:?}, got {:?}",
                    t.shape(),
                    v.shape()
                )));
            }
        }
        for (t, v) in targets.iter_mut().zip(values) {
            **t = v;
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        self.caches.iter_mut().for_each(LayerCache::clear);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::*;
    use crate::metrics::{cross_entropy, softmax_ce_backward};
    use proptest::prelude::*;

    fn tiny(hidden_drop: u32) -> ModelConfig {
        ModelConfig {
            conv_kernels: vec![2, 3],
            conv_dropout_pct: vec![0, 0],
            hidden_units: vec![5],
            hidden_dropout_pct: vec![hidden_drop],
            num_classes: 3,
            input: [2, 6, 5],
        }
    }

    #[test]
    fn base_figure_shapes() {
        let cfg = ModelConfig {
            conv_kernels: vec![32, 64],
            conv_dropout_pct: vec![20, 30],
            hidden_units: vec![256, 128],
            hidden_dropout_pct: vec![0, 0],
            num_classes: 48,
            input: [3, 144, 144],
        };
        let plan = build_model(&cfg).unwrap();
        assert_eq!(plan.nth_output("conv2d", 1).unwrap(), &[64, 72, 72]);
        assert_eq!(plan.nth_output("maxpool2d", 1).unwrap(), &[64, 36, 36]);
        assert_eq!(plan.flatten_width(), 82944);
        assert_eq!(plan.output_width(), 48);
    }

    #[test]
    fn collapse_names_layer() {
        let cfg = tiny(0).with_input([1, 3, 3]);
        match build_model(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("conv layer 2"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = tiny(0);
        cfg.conv_dropout_pct.push(0);
        assert!(build_model(&cfg).is_err());
        let mut cfg = tiny(0);
        cfg.hidden_dropout_pct[0] = 100;
        assert!(build_model(&cfg).is_err());
        assert!(build_model(&tiny(0).with_classes(1)).is_err());
        let mut cfg = tiny(0);
        cfg.conv_kernels[0] = 0;
        assert!(build_model(&cfg).is_err());
    }

    #[test]
    fn network_forward_shapes_and_param_order() {
        let plan = build_model(&tiny(50)).unwrap();
        let mut net = Network::init(&plan, &RngStream::new(1, "init", 0)).unwrap();
        let x = random(&[4, 2, 6, 5], 3);
        let y = net.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
        let shapes: Vec<Vec<usize>> = net.params().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![2, 2, 3, 3], vec![2], vec![3, 2, 3, 3], vec![3], vec![5, 3], vec![5], vec![3, 5], vec![3]]
        );
        assert_eq!(plan.param_count(), shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>());
    }

    #[test]
    fn whole_network_gradients_match_finite_differences() {
        let plan = build_model(&tiny(30)).unwrap();
        let mut net = Network::init(&plan, &RngStream::new(5, "init", 0)).unwrap();
        // Nudge biases off zero so no ReLU sits exactly on its kink.
        for (i, p) in net.params_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                *p = random(p.shape(), 100 + i as u64).map(|v| v * 0.1);
            }
        }
        let x = random(&[2, 2, 6, 5], 7);
        let labels = [2, 0];
        let drop = RngStream::new(5, "dropout", 0);
        let logits = net.forward(&x, Mode::Train, Some(&drop)).unwrap();
        let g = softmax_ce_backward(&softmax(&logits).unwrap(), &labels).unwrap();
        let grads = net.backward(&g).unwrap();
        let base = net.snapshot();
        for (pi, analytic) in grads.iter().enumerate() {
            let numeric = numeric_grad(&base[pi], 1e-5, |probe| {
                let mut params = base.clone();
                params[pi] = probe.clone();
                let mut n2 = net.clone();
                n2.load_params(params).unwrap();
                let z = n2.forward(&x, Mode::Train, Some(&drop)).unwrap();
                cross_entropy(&softmax(&z).unwrap(), &labels).unwrap()
            });
            let err = rel_error(analytic.data(), &numeric);
            assert!(err <= 1e-5, "param {pi}: rel error {err}");
        }
    }

    #[test]
    fn dropout_masks_change_between_steps() {
        let plan = build_model(&tiny(50)).unwrap();
        let mut net = Network::init(&plan, &RngStream::new(1, "init", 0)).unwrap();
        let x = random(&[4, 2, 6, 5], 3);
        let a = net.forward(&x, Mode::Train, Some(&RngStream::new(7, "dropout", 0))).unwrap();
        let b = net.forward(&x, Mode::Train, Some(&RngStream::new(7, "dropout", 1))).unwrap();
        let again = net.forward(&x, Mode::Train, Some(&RngStream::new(7, "dropout", 0))).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, again);
    }

    #[test]
    fn load_params_checks_shapes() {
        let plan = build_model(&tiny(0)).unwrap();
        let mut net = Network::init(&plan, &RngStream::new(1, "init", 0)).unwrap();
        let mut params = net.snapshot();
        params.pop();
        assert!(matches!(net.load_params(params), Err(Error::Compatibility(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn flatten_width_matches_recurrence(
            convs in proptest::collection::vec(1usize..300, 1..6),
            hidden in proptest::collection::vec(1usize..600, 0..4),
            c in 1usize..4, h in 1usize..300, w in 1usize..300,
        ) {
            let cfg = ModelConfig {
                conv_dropout_pct: vec![10; convs.len()],
                conv_kernels: convs,
                hidden_dropout_pct: vec![0; hidden.len()],
                hidden_units: hidden,
                num_classes: 48,
                input: [c, h, w],
            };
            match (build_model(&cfg), feature_shape(&cfg)) {
                (Ok(plan), Some(shape)) => prop_assert_eq!(plan.flatten_width(), shape.iter().product::<usize>()),
                (Err(Error::Config(_)), None) => {}
                (a, b) => prop_assert!(false, "disagreement: {:?} vs {:?}", a.map(|p| p.flatten_width()), b),
            }
        }
    }
}
