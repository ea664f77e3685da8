use super::{Real, Result, Tensor, TensorError};

/// Mean squared error over all elements and its gradient with respect to the
/// prediction, `2 (prediction - target) / count`.
pub fn mse_loss<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if prediction.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            expected: prediction.shape().to_vec(),
            found: target.shape().to_vec(),
        });
    }
    let count = prediction.len() as f64;
    let mut loss = 0.0f64;
    let scale = T::from_f64(2.0 / count);
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((loss / count, Tensor::from_vec(prediction.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    #[test]
    fn closed_forms() {
        let a = random_tensor(&[2, 3, 4], 1);
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let b = a.map(|v| v + 0.1);
        let (l, _) = mse_loss(&b, &a).unwrap();
        assert!((l - 0.01).abs() < 1e-12);

        assert!(mse_loss(&a, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let p = random_tensor(&[2, 3, 5, 5], seed);
            let t = random_tensor(&[2, 3, 5, 5], seed + 100);
            let (_, g) = mse_loss(&p, &t).unwrap();
            let n = numeric_grad(&p, 1e-3, |p| mse_loss(p, &t).unwrap().0);
            assert!(rel_error(g.data(), &n) < 1e-5);
        }
    }
}
