use super::{Real, Result, Tensor, TensorError};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-channel affine parameters and running statistics of a batch
/// normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Real>(&self) -> BatchNormState<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        BatchNormState {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: self.momentum,
            epsilon: self.epsilon,
        }
    }
}

/// What the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

/// Normalize `[N, C, H, W]` input per channel.
///
/// In training mode batch statistics are used and the running statistics are
/// updated (`running = (1 - momentum) * running + momentum * batch`, with the
/// unbiased batch variance); in inference mode the running statistics are used.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4("batchnorm")?;
    if c != state.channels() {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            expected: vec![n, state.channels(), h, w],
            found: input.shape().to_vec(),
        });
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();

    let mut inv_std = Vec::with_capacity(c);
    let mut shift = Vec::with_capacity(c);
    for ch in 0..c {
        let (mean, var) = if training {
            if count < 2 {
                return Err(TensorError::BatchTooSmall { channel: ch, count });
            }
            let planes = || (0..n).flat_map(move |s| x[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter());
            let mean = planes().map(|v| v.as_f64()).sum::<f64>() / count as f64;
            let var = planes().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count as f64;
            let m = state.momentum;
            let unbiased = var * count as f64 / (count - 1) as f64;
            state.running_mean[ch] = T::from_f64((1.0 - m) * state.running_mean[ch].as_f64() + m * mean);
            state.running_var[ch] = T::from_f64((1.0 - m) * state.running_var[ch].as_f64() + m * unbiased);
            (mean, var)
        } else {
            (state.running_mean[ch].as_f64(), state.running_var[ch].as_f64())
        };
        inv_std.push(1.0 / (var + state.epsilon).sqrt());
        shift.push(mean);
    }

    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            let (mu, is) = (T::from_f64(shift[ch]), T::from_f64(inv_std[ch]));
            let (g, b) = (state.gamma[ch], state.beta[ch]);
            for ((xh, o), &v) in xhat.data_mut()[range.clone()]
                .iter_mut()
                .zip(&mut out.data_mut()[range.clone()])
                .zip(&x[range])
            {
                *xh = (v - mu) * is;
                *o = *xh * g + b;
            }
        }
    }
    let cache = BatchNormCache {
        xhat,
        inv_std: inv_std.into_iter().map(T::from_f64).collect(),
        training,
    };
    Ok((out, cache))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    grad_out.expect_shape("batchnorm_backward", cache.xhat.shape())?;
    let (n, c, h, w) = grad_out.dims4("batchnorm_backward")?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.xhat.data();

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut grad_in = Tensor::zeros(grad_out.shape());
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
        let sum_g: f64 = idx().map(|i| g[i].as_f64()).sum();
        let sum_gx: f64 = idx().map(|i| (g[i] * xh[i]).as_f64()).sum();
        dbeta[ch] = T::from_f64(sum_g);
        dgamma[ch] = T::from_f64(sum_gx);
        let scale = state.gamma[ch] * cache.inv_std[ch];
        let out = grad_in.data_mut();
        if cache.training {
            let mean_g = T::from_f64(sum_g / count);
            let mean_gx = T::from_f64(sum_gx / count);
            for i in idx() {
                out[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
            }
        } else {
            for i in idx() {
                out[i] = scale * g[i];
            }
        }
    }
    Ok((grad_in, dgamma, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    fn channel_stats(t: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let (n, c, h, w) = t.dims4("stats").unwrap();
        let vals: Vec<f64> = (0..n)
            .flat_map(|s| t.data()[(s * c + ch) * h * w..(s * c + ch + 1) * h * w].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn training_output_is_standardized() {
        let x = random_tensor(&[2, 4, 8, 8], 3).map(|v| 3.0 * v + 1.5);
        let mut st = BatchNormState::<f64>::new(4);
        st.epsilon = 0.0;
        let (y, _) = batchnorm_forward(&x, &mut st, true).unwrap();
        for ch in 0..4 {
            let (m, v) = channel_stats(&y, ch);
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4, "{m} {v}");
        }
        // Default epsilon, single precision.
        let xf: Tensor<f32> = x.cast();
        let mut st = BatchNormState::<f32>::new(4);
        let (y, _) = batchnorm_forward(&xf, &mut st, true).unwrap();
        for ch in 0..4 {
            let (m, v) = channel_stats(&y.cast(), ch);
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4, "{m} {v}");
        }
    }

    #[test]
    fn affine_applies_after_normalization() {
        let x = random_tensor(&[2, 3, 4, 4], 11);
        let mut st = BatchNormState::<f64>::new(3);
        st.epsilon = 0.0;
        let (z, _) = batchnorm_forward(&x, &mut st, true).unwrap();
        let mut st = BatchNormState::<f64>::new(3);
        st.epsilon = 0.0;
        st.gamma = vec![2.0; 3];
        st.beta = vec![3.0; 3];
        let (y, _) = batchnorm_forward(&z, &mut st, true).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_stats(&y, ch);
            assert!((m - 3.0).abs() < 1e-9 && (v.sqrt() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut st = BatchNormState::<f64>::new(1);
        batchnorm_forward(&x, &mut st, true).unwrap();
        assert!((st.running_mean[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((st.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert!(st.running_var.iter().all(|&v| v > 0.0));

        // Inference mode uses the running statistics verbatim.
        let (y, _) = batchnorm_forward(&x, &mut st.clone(), false).unwrap();
        let expect = (1.0 - 0.25) / (st.running_var[0] + 1e-5f64).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn single_element_channel_rejected_in_training() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let mut st = BatchNormState::new(2);
        assert!(matches!(
            batchnorm_forward(&x, &mut st, true),
            Err(TensorError::BatchTooSmall { count: 1, .. })
        ));
        assert!(batchnorm_forward(&x, &mut st, false).is_ok());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let x = random_tensor(&[2, 4, 8, 8], seed);
            let mut st = BatchNormState::<f64>::new(4);
            st.gamma = random_tensor(&[4], seed + 50).into_data();
            st.beta = random_tensor(&[4], seed + 60).into_data();
            for training in [true, false] {
                if !training {
                    st.running_mean = vec![0.1, -0.2, 0.0, 0.3];
                    st.running_var = vec![0.5, 1.5, 2.0, 0.8];
                }
                let (y, cache) = batchnorm_forward(&x, &mut st.clone(), training).unwrap();
                let probe = random_tensor(y.shape(), seed + 7);
                let (gx, gg, gb) = batchnorm_backward(&probe, &cache, &st).unwrap();
                let f = |x: &Tensor<f64>, s: &BatchNormState<f64>| dot(&batchnorm_forward(x, &mut s.clone(), training).unwrap().0, &probe);
                let nx = numeric_grad(&x, 1e-3, |x| f(x, &st));
                assert!(rel_error(gx.data(), &nx) < 1e-4, "seed {seed} training {training}");
                let gam = Tensor::from_vec(&[4], st.gamma.clone()).unwrap();
                let ng = numeric_grad(&gam, 1e-3, |g| {
                    let mut s = st.clone();
                    s.gamma = g.data().to_vec();
                    f(&x, &s)
                });
                assert!(rel_error(&gg, &ng) < 1e-4);
                let bet = Tensor::from_vec(&[4], st.beta.clone()).unwrap();
                let nb = numeric_grad(&bet, 1e-3, |b| {
                    let mut s = st.clone();
                    s.beta = b.data().to_vec();
                    f(&x, &s)
                });
                assert!(rel_error(&gb, &nb) < 1e-4);
            }
        }
    }
}
