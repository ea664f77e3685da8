use super::{Real, Result, Tensor, TensorError};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected ADAM update of `params` in place.
///
/// Gradients are checked for finiteness before anything is modified, so a
/// failed step leaves both the parameters and the state untouched.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            expected: state.m.shape().to_vec(),
            found: vec![grads.len()],
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TensorError::NonFinite {
            op: "adam_step",
            what: format!("gradient element {i}"),
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let (eps, wd) = (state.epsilon, state.weight_decay);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..params.len() {
        let p = params[i].as_f64();
        let g = grads[i].as_f64() + wd * p;
        let mi = b1 * m[i].as_f64() + (1.0 - b1) * g;
        let vi = b2 * v[i].as_f64() + (1.0 - b2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        params[i] = T::from_f64(p - step);
    }
    Ok(())
}
