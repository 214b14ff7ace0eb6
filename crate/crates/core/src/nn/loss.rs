use super::tensor::{Scalar, Tensor};
use super::NnError;

pub const PROB_CLAMP: f64 = 1e-7;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "loss operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64, NnError> {
    Ok(mse_with_grad(pred, truth)?.0)
}

pub fn mse_with_grad<T: Scalar>(
    pred: &Tensor<T>,
    truth: &Tensor<T>,
) -> Result<(f64, Tensor<T>), NnError> {
    same_shape(pred, truth)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            loss += d * d;
            T::of_f64(2.0 * d / n)
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Batch-mean of −log p(true class), with probabilities clamped to
/// `[1e-7, 1 − 1e-7]`. `probs` and `one_hot` are `[N, k]` (or `[k]`).
pub fn categorical_crossentropy<T: Scalar>(
    probs: &Tensor<T>,
    one_hot: &Tensor<T>,
) -> Result<f64, NnError> {
    Ok(crossentropy_with_grad(probs, one_hot)?.0)
}

pub fn crossentropy_with_grad<T: Scalar>(
    probs: &Tensor<T>,
    one_hot: &Tensor<T>,
) -> Result<(f64, Tensor<T>), NnError> {
    same_shape(probs, one_hot)?;
    let width = *probs.shape().last().expect("non-empty shape");
    let rows = (probs.len() / width) as f64;
    let mut loss = 0.0;
    let grad = probs
        .data()
        .iter()
        .zip(one_hot.data())
        .map(|(&p, &y)| {
            let (p, y) = (p.as_f64(), y.as_f64());
            let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= y * clamped.ln();
            if y == 0.0 || clamped != p {
                T::zero()
            } else {
                T::of_f64(-y / (clamped * rows))
            }
        })
        .collect();
    Ok((loss / rows, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// One-hot rows for 1-based class labels.
pub fn one_hot<T: Scalar>(classes: &[u8], num_classes: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); classes.len() * num_classes];
    for (row, &c) in classes.iter().enumerate() {
        data[row * num_classes + (c as usize - 1)] = T::one();
    }
    Tensor::new(vec![classes.len(), num_classes], data).expect("consistent one-hot shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_values() {
        let p = Tensor::<f64>::from_f64_slice(&[2], &[1.0, 3.0]).unwrap();
        let t = Tensor::<f64>::from_f64_slice(&[2], &[1.0, 1.0]).unwrap();
        assert_eq!(mse(&p, &t).unwrap(), 2.0);
        assert_eq!(mse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn crossentropy_of_certain_correct_prediction_is_tiny() {
        let p = Tensor::<f32>::from_f64_slice(&[1, 3], &[0.0, 1.0, 0.0]).unwrap();
        let y = one_hot::<f32>(&[2], 3);
        let loss = categorical_crossentropy(&p, &y).unwrap();
        assert!(loss <= 1e-6, "{loss}");
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let p = Tensor::<f32>::zeros(&[3]);
        let t = Tensor::<f32>::zeros(&[2]);
        assert!(mse(&p, &t).is_err());
    }
}
