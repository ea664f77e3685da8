//! The deblurring network: a 15-channel early-fusion encoder-decoder with
//! symmetric skip sums, a residual path from the central input frame and a
//! sigmoid output.

mod filters;
mod network;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{AdamState, BatchNormState, ConvSpec, Real, Tensor};
use crate::{Error, Result};

pub use filters::{dump_filters, min_max_to_u8, render_filter, FilterDump};
pub use network::{backward, forward, infer, ForwardCache, ForwardOutput, LayerOutput, ModelGrads, Observer};

/// Input channels: five RGB frames.
pub const INPUT_CHANNELS: usize = 15;
/// Spatial extents must be divisible by this (three stride-2 stages).
pub const SPATIAL_MULTIPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// No activation of its own; the network output sigmoid follows.
    None,
}

/// Where a skip sum comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipSource {
    /// Post-BN, pre-ReLU output of an earlier layer.
    Layer(&'static str),
    /// The central RGB frame of the input stack.
    InputCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDef {
    pub name: &'static str,
    pub spec: ConvSpec,
    pub activation: Activation,
    pub skip_source: Option<SkipSource>,
    pub skip_target: Option<&'static str>,
}

const fn flat(name: &'static str, cin: usize, cout: usize) -> LayerDef {
    LayerDef {
        name,
        spec: ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (3, 3),
            stride: 1,
            padding: 1,
            transposed: false,
        },
        activation: Activation::Relu,
        skip_source: None,
        skip_target: None,
    }
}

const fn down(name: &'static str, cin: usize, cout: usize) -> LayerDef {
    let mut l = flat(name, cin, cout);
    l.spec.stride = 2;
    l
}

const fn up(name: &'static str, cin: usize, cout: usize, from: &'static str) -> LayerDef {
    LayerDef {
        name,
        spec: ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (4, 4),
            stride: 2,
            padding: 1,
            transposed: true,
        },
        activation: Activation::Relu,
        skip_source: Some(SkipSource::Layer(from)),
        skip_target: None,
    }
}

const fn source(mut l: LayerDef, to: &'static str) -> LayerDef {
    l.skip_target = Some(to);
    l
}

/// Layer table in execution order.
pub const ARCHITECTURE: [LayerDef; 22] = [
    source(
        LayerDef {
            name: "F0",
            spec: ConvSpec {
                in_channels: 15,
                out_channels: 64,
                kernel: (5, 5),
                stride: 1,
                padding: 2,
                transposed: false,
            },
            activation: Activation::Relu,
            skip_source: None,
            skip_target: None,
        },
        "U3",
    ),
    down("D1", 64, 64),
    flat("F1_1", 64, 128),
    source(flat("F1_2", 128, 128), "U2"),
    down("D2", 128, 256),
    flat("F2_1", 256, 256),
    flat("F2_2", 256, 256),
    source(flat("F2_3", 256, 256), "U1"),
    down("D3", 256, 512),
    flat("F3_1", 512, 512),
    flat("F3_2", 512, 512),
    flat("F3_3", 512, 512),
    up("U1", 512, 256, "F2_3"),
    flat("F4_1", 256, 256),
    flat("F4_2", 256, 256),
    flat("F4_3", 256, 256),
    up("U2", 256, 128, "F1_2"),
    flat("F5_1", 128, 128),
    flat("F5_2", 128, 64),
    up("U3", 64, 64, "F0"),
    flat("F6_1", 64, 15),
    LayerDef {
        name: "F6_2",
        spec: ConvSpec {
            in_channels: 15,
            out_channels: 3,
            kernel: (3, 3),
            stride: 1,
            padding: 1,
            transposed: false,
        },
        activation: Activation::None,
        skip_source: Some(SkipSource::InputCenter),
        skip_target: None,
    },
];

pub fn layer_index(name: &str) -> Option<usize> {
    ARCHITECTURE.iter().position(|l| l.name == name)
}

/// Output shape `(channels, height, width)` of every layer for an `h x w` input.
pub fn activation_shapes(h: usize, w: usize) -> Result<Vec<(&'static str, [usize; 3])>> {
    check_extents(h, w)?;
    let (mut h, mut w) = (h, w);
    ARCHITECTURE
        .iter()
        .map(|l| {
            (h, w) = l.spec.output_extent(h, w)?;
            Ok((l.name, [l.spec.out_channels, h, w]))
        })
        .collect()
}

pub(crate) fn check_extents(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(SPATIAL_MULTIPLE) || !w.is_multiple_of(SPATIAL_MULTIPLE) {
        return Err(Error::Indivisible { height: h, width: w });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f32> {
    pub def: LayerDef,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: BatchNormState<T>,
}

/// All learned state of the network plus the training iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub layers: Vec<LayerParams<T>>,
    pub iteration: u64,
}

/// Allocate the network with fan-in scaled normal weights
/// (`std = sqrt(2 / fan_in)`), zero biases and identity batch norms.
pub fn build_model<T: Real>(seed: u64) -> ModelParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = ARCHITECTURE
        .iter()
        .map(|def| {
            let std = (2.0 / def.spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let shape = def.spec.weight_shape();
            let data = (0..shape.iter().product())
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect();
            LayerParams {
                def: *def,
                weight: Tensor::from_vec(&shape, data).expect("weight shape"),
                bias: Tensor::zeros(&[def.spec.out_channels]),
                bn: BatchNormState::new(def.spec.out_channels),
            }
        })
        .collect();
    ModelParams { layers, iteration: 0 }
}

impl<T: Real> ModelParams<T> {
    pub fn layer(&self, name: &str) -> Option<&LayerParams<T>> {
        self.layers.iter().find(|l| l.def.name == name)
    }

    /// Weights, biases, and batch-norm scales and shifts.
    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + 2 * l.bn.channels())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    def: l.def,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    bn: l.bn.cast(),
                })
                .collect(),
            iteration: self.iteration,
        }
    }

    /// Trainable parameter groups in a fixed order: per layer weight, bias,
    /// gamma, beta.
    pub fn groups_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.data_mut(),
                    l.bias.data_mut(),
                    l.bn.gamma.as_mut_slice(),
                    l.bn.beta.as_mut_slice(),
                ]
            })
            .collect()
    }

    pub fn group_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .flat_map(|l| {
                let c = l.bn.channels();
                [l.weight.shape().to_vec(), l.bias.shape().to_vec(), vec![c], vec![c]]
            })
            .collect()
    }

    pub fn group_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| {
                let n = l.def.name;
                [format!("{n}.weight"), format!("{n}.bias"), format!("{n}.bn.gamma"), format!("{n}.bn.beta")]
            })
            .collect()
    }
}

/// ADAM state for every trainable group of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptimizer<T = f32> {
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> ModelOptimizer<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        ModelOptimizer {
            states: params.group_shapes().iter().map(|s| AdamState::new(s)).collect(),
        }
    }

    /// Apply one update at learning rate `lr`. All gradients are checked for
    /// finiteness first so a failing step leaves the model untouched.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelGrads<T>, lr: f64) -> Result<()> {
        let gs = grads.groups();
        if let Some((i, _)) = gs.iter().enumerate().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(crate::tensor::TensorError::NonFinite {
                op: "adam_step",
                what: format!("gradient group {i}"),
            }
            .into());
        }
        for ((p, g), st) in params.groups_mut().into_iter().zip(gs).zip(&mut self.states) {
            crate::tensor::adam_step(p, g, st, lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_table_rows() {
        let names: Vec<_> = ARCHITECTURE.iter().map(|l| l.name).collect();
        assert_eq!(
            names,
            [
                "F0", "D1", "F1_1", "F1_2", "D2", "F2_1", "F2_2", "F2_3", "D3", "F3_1", "F3_2", "F3_3", "U1", "F4_1",
                "F4_2", "F4_3", "U2", "F5_1", "F5_2", "U3", "F6_1", "F6_2"
            ]
        );
        // consecutive layers chain channel counts
        for pair in ARCHITECTURE.windows(2) {
            assert_eq!(pair[0].spec.out_channels, pair[1].spec.in_channels, "{}", pair[1].name);
        }
        let skips: Vec<_> = ARCHITECTURE
            .iter()
            .filter_map(|l| l.skip_source.map(|s| (s, l.name)))
            .collect();
        assert_eq!(
            skips,
            [
                (SkipSource::Layer("F2_3"), "U1"),
                (SkipSource::Layer("F1_2"), "U2"),
                (SkipSource::Layer("F0"), "U3"),
                (SkipSource::InputCenter, "F6_2")
            ]
        );
        for l in ARCHITECTURE.iter().filter(|l| l.skip_target.is_some()) {
            let target = layer_index(l.skip_target.unwrap()).unwrap();
            assert_eq!(ARCHITECTURE[target].skip_source, Some(SkipSource::Layer(l.name)));
        }
    }

    #[test]
    fn parameter_counts_follow_layer_table() {
        let p = build_model::<f32>(1);
        let f0 = p.layer("F0").unwrap();
        assert_eq!(f0.weight.shape(), &[64, 15, 5, 5]);
        assert_eq!(f0.weight.len(), 24_000);
        assert_eq!(f0.weight.len() + f0.bias.len(), 24_064);
        assert_eq!(p.layer("F6_2").unwrap().weight.shape(), &[3, 15, 3, 3]);
        assert!(p.layers.iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        assert!(p.layers.iter().all(|l| l.bn.gamma.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn equal_seeds_give_identical_parameters() {
        assert_eq!(build_model::<f32>(7), build_model::<f32>(7));
        assert_ne!(build_model::<f32>(7), build_model::<f32>(8));
        // both precisions draw the same underlying values
        let a = build_model::<f32>(3);
        let b: ModelParams<f32> = build_model::<f64>(3).cast();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_extents_rejected() {
        assert!(matches!(activation_shapes(960, 540), Err(Error::Indivisible { .. })));
        let shapes = activation_shapes(544, 960).unwrap();
        assert_eq!(shapes.last().unwrap().1, [3, 544, 960]);
    }
}
