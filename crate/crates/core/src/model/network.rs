use crate::tensor::{
    add, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, conv2d_transpose_backward,
    conv2d_transpose_forward, relu, relu_backward, sigmoid, sigmoid_backward, BatchNormCache, Real, Tensor,
};
use crate::{Error, Result};

use super::{check_extents, layer_index, Activation, LayerParams, ModelParams, SkipSource, INPUT_CHANNELS};

/// Everything backward needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every layer; entry 0 is the network input.
    inputs: Vec<Tensor<T>>,
    bn: Vec<BatchNormCache<T>>,
    output: Tensor<T>,
}

impl<T> ForwardCache<T> {
    pub fn layer_count(&self) -> usize {
        self.bn.len()
    }
}

pub struct ForwardOutput<T> {
    pub output: Tensor<T>,
    pub cache: ForwardCache<T>,
    /// Running statistics after this batch, per layer. Only meaningful in
    /// training mode; [`ModelParams::commit_running_stats`] stores them.
    pub running_stats: Vec<(Vec<T>, Vec<T>)>,
}

/// One layer's result as seen by a forward observer.
pub struct LayerOutput<'a, T> {
    pub name: &'static str,
    /// After batch norm and any skip sum, before the activation.
    pub pre_activation: &'a Tensor<T>,
    /// What the next layer receives (or the sigmoid output for the last layer).
    pub activation: &'a Tensor<T>,
}

/// Parameter gradients, in the same group order as [`ModelParams::groups_mut`].
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn groups(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data(), l.gamma.as_slice(), l.beta.as_slice()])
            .collect()
    }
}

impl<T: Real> ModelParams<T> {
    pub fn commit_running_stats(&mut self, stats: Vec<(Vec<T>, Vec<T>)>) {
        for (layer, (mean, var)) in self.layers.iter_mut().zip(stats) {
            layer.bn.running_mean = mean;
            layer.bn.running_var = var;
        }
    }
}

/// Channels 6..9 of a `[N, 15, H, W]` stack tensor: the central RGB frame.
fn central_frame<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (n, _, h, w) = input.dims4("central_frame").expect("checked rank");
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, 3, h, w]);
    for s in 0..n {
        let src = &input.outer(s)[6 * plane..9 * plane];
        out.outer_mut(s).copy_from_slice(src);
    }
    out
}

fn conv_forward<T: Real>(layer: &LayerParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(if layer.def.spec.transposed {
        conv2d_transpose_forward(x, &layer.weight, &layer.bias, &layer.def.spec)?
    } else {
        conv2d_forward(x, &layer.weight, &layer.bias, &layer.def.spec)?
    })
}

fn check_input<T: Real>(input: &Tensor<T>) -> Result<()> {
    let (_, c, h, w) = input.dims4("forward")?;
    if c != INPUT_CHANNELS {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "forward",
            expected: vec![input.shape()[0], INPUT_CHANNELS, h, w],
            found: input.shape().to_vec(),
        }
        .into());
    }
    check_extents(h, w)
}

/// Callback receiving each layer's output as it is produced.
pub type Observer<'a, T> = &'a mut dyn FnMut(LayerOutput<'_, T>);

/// Run the network on a `[N, 15, H, W]` batch.
///
/// Layers execute in table order. Skip sources hand their post-BN,
/// pre-ReLU value to the target, which adds it after its own batch norm and
/// then applies ReLU. The last layer adds the central input frame and the
/// result goes through a sigmoid. In training mode batch statistics are
/// used; the updated running statistics are returned, not written.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    training: bool,
    observe: Option<Observer<'_, T>>,
) -> Result<ForwardOutput<T>> {
    run(params, input, training, observe, true)
}

fn run<T: Real>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    training: bool,
    mut observe: Option<Observer<'_, T>>,
    keep_cache: bool,
) -> Result<ForwardOutput<T>> {
    check_input(input)?;
    let n_layers = params.layers.len();
    let mut inputs = Vec::with_capacity(n_layers + 1);
    let mut bn_caches = Vec::with_capacity(n_layers);
    let mut running = Vec::with_capacity(n_layers);
    let mut skips: Vec<Option<Tensor<T>>> = vec![None; n_layers];
    let mut h = input.clone();
    let mut output = None;

    for (i, layer) in params.layers.iter().enumerate() {
        let z = conv_forward(layer, &h)?;
        let mut bn = layer.bn.clone();
        let (mut y, cache) = batchnorm_forward(&z, &mut bn, training)?;
        drop(z);
        running.push((bn.running_mean, bn.running_var));
        match layer.def.skip_source {
            Some(SkipSource::Layer(name)) => {
                let j = layer_index(name).expect("skip source exists");
                let s = skips[j].take().expect("skip source runs before its target");
                y = add(&y, &s)?;
            }
            Some(SkipSource::InputCenter) => y = add(&y, &central_frame(input))?,
            None => {}
        }
        let a = match layer.def.activation {
            Activation::Relu => relu(&y),
            Activation::None if i + 1 == n_layers => sigmoid(&y),
            Activation::None => y.clone(),
        };
        if let Some(f) = observe.as_mut() {
            f(LayerOutput {
                name: layer.def.name,
                pre_activation: &y,
                activation: &a,
            });
        }
        if layer.def.skip_target.is_some() {
            skips[i] = Some(y);
        }
        if keep_cache {
            bn_caches.push(cache);
            inputs.push(std::mem::replace(&mut h, a));
        } else {
            h = a;
        }
        if i + 1 == n_layers {
            output = Some(h.clone());
        }
    }
    let output = output.expect("non-empty network");
    Ok(ForwardOutput {
        cache: ForwardCache {
            inputs,
            bn: bn_caches,
            output: output.clone(),
        },
        output,
        running_stats: running,
    })
}

/// Inference-mode forward pass with running statistics. Intermediate
/// activations are released as soon as they are consumed.
pub fn infer<T: Real>(params: &ModelParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(run(params, input, false, None, false)?.output)
}

/// Gradients of every parameter given the gradient of the loss with respect
/// to the network output. With `want_input_grad` the gradient with respect to
/// the input stack is also returned.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    grad_output: &Tensor<T>,
    want_input_grad: bool,
) -> Result<ModelGrads<T>> {
    let n_layers = params.layers.len();
    if cache.bn.len() != n_layers || cache.inputs.len() != n_layers {
        return Err(Error::Invalid(format!(
            "activation cache holds {} layers, model has {n_layers}",
            cache.bn.len()
        )));
    }
    for (layer, x) in params.layers.iter().zip(&cache.inputs) {
        if x.shape()[1] != layer.def.spec.in_channels {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "backward",
                expected: vec![x.shape()[0], layer.def.spec.in_channels],
                found: x.shape().to_vec(),
            }
            .into());
        }
    }
    grad_output.expect_shape("backward", cache.output.shape())?;

    let mut grads: Vec<Option<LayerGrads<T>>> = vec![None; n_layers];
    let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; n_layers];
    let mut center_grad = None;
    let mut g_act = grad_output.clone();

    for i in (0..n_layers).rev() {
        let layer = &params.layers[i];
        // gradient with respect to the pre-activation value y
        let mut gy = if i + 1 == n_layers {
            match layer.def.activation {
                Activation::None => sigmoid_backward(&g_act, &cache.output)?,
                Activation::Relu => relu_backward(&g_act, &cache.output)?,
            }
        } else {
            // the layer's activation is the next layer's input, and a > 0 iff y > 0
            relu_backward(&g_act, &cache.inputs[i + 1])?
        };
        if let Some(g) = skip_grads[i].take() {
            gy = add(&gy, &g)?;
        }
        match layer.def.skip_source {
            Some(SkipSource::Layer(name)) => {
                let j = layer_index(name).expect("skip source exists");
                skip_grads[j] = Some(gy.clone());
            }
            Some(SkipSource::InputCenter) => center_grad = Some(gy.clone()),
            None => {}
        }
        let (gz, dgamma, dbeta) = batchnorm_backward(&gy, &cache.bn[i], &layer.bn)?;
        drop(gy);
        let need_input = i > 0 || want_input_grad;
        let cg = if layer.def.spec.transposed {
            conv2d_transpose_backward(&gz, &cache.inputs[i], &layer.weight, &layer.def.spec, need_input)?
        } else {
            conv2d_backward(&gz, &cache.inputs[i], &layer.weight, &layer.def.spec, need_input)?
        };
        grads[i] = Some(LayerGrads {
            weight: cg.weights,
            bias: cg.bias,
            gamma: dgamma,
            beta: dbeta,
        });
        if let Some(gx) = cg.input {
            g_act = gx;
        }
    }

    let input = if want_input_grad {
        let mut gx = g_act;
        if let Some(gc) = center_grad {
            let (n, _, h, w) = gx.dims4("backward")?;
            let plane = h * w;
            for s in 0..n {
                let dst = &mut gx.outer_mut(s)[6 * plane..9 * plane];
                for (d, &g) in dst.iter_mut().zip(gc.outer(s)) {
                    *d += g;
                }
            }
        }
        Some(gx)
    } else {
        None
    };

    Ok(ModelGrads {
        layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        input,
    })
}
