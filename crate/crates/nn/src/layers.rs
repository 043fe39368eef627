use rand::Rng;

use crate::conv::ConvGeom;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Parameter store plus whether its tensors should receive gradients in this pass.
#[derive(Clone, Copy)]
pub struct Bind<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Bind<'a> {
    pub fn train(store: &'a ParamStore) -> Self {
        Self { store, trainable: true }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, trainable: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    weight: usize,
    bias: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add_uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng);
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom,
        }
    }

    /// Same as [`Conv2d::new`] but with all weights and biases zero.
    pub fn zeroed(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            crate::Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
        );
        let bias = store.add(format!("{name}.bias"), crate::Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind<'_>, x: Var) -> Var {
        let w = g.param(p.store, self.weight, p.trainable);
        let b = g.param(p.store, self.bias, p.trainable);
        g.conv2d(x, w, Some(b), self.geom)
    }

    /// Pixels of context this layer adds on each side.
    pub fn radius(&self) -> usize {
        self.geom.dilation * (self.kernel - 1) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    weight: usize,
    bias: usize,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self::with_bound(store, name, in_features, out_features, 1.0 / (in_features.max(1) as f32).sqrt(), rng)
    }

    pub fn with_bound(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        bound: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_scaled_uniform(format!("{name}.weight"), &[in_features, out_features], bound, rng);
        let bias = store.add_scaled_uniform(format!("{name}.bias"), &[out_features], bound, rng);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind<'_>, x: Var) -> Var {
        let w = g.param(p.store, self.weight, p.trainable);
        let b = g.param(p.store, self.bias, p.trainable);
        g.linear(x, w, b)
    }
}

/// Gated convolution: `leaky_relu(conv_f(x)) * sigmoid(conv_g(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedConv2d {
    feature: Conv2d,
    gate: Conv2d,
}

impl GatedConv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            feature: Conv2d::new(store, &format!("{name}.feature"), in_channels, out_channels, kernel, geom, rng),
            gate: Conv2d::new(store, &format!("{name}.gate"), in_channels, out_channels, kernel, geom, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: Bind<'_>, x: Var) -> Var {
        let f = self.feature.forward(g, p, x);
        let f = g.leaky_relu(f, 0.2);
        let gate = self.gate.forward(g, p, x);
        let gate = g.sigmoid(gate);
        g.mul(f, gate)
    }

    pub fn radius(&self) -> usize {
        self.feature.radius()
    }
}
