use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Mean negative log-likelihood of integer labels under log-probabilities.
    CrossEntropy,
    MeanSquaredError,
}

pub(crate) fn check_labels(logprobs: &Tensor, labels: &[usize]) -> Result<()> {
    if logprobs.ndim() != 2 || logprobs.dim(0) != labels.len() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            detail: format!(
                "log-probabilities {:?} vs {} labels",
                logprobs.shape(),
                labels.len()
            ),
        });
    }
    let classes = logprobs.dim(1);
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

pub fn cross_entropy(logprobs: &Tensor, labels: &[usize]) -> Result<f32> {
    check_labels(logprobs, labels)?;
    let k = logprobs.dim(1);
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -(logprobs.data()[b * k + l] as f64))
        .sum();
    Ok((total / labels.len() as f64) as f32)
}

pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<f32> {
    if prediction.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse",
            detail: format!("{:?} vs {:?}", prediction.shape(), target.shape()),
        });
    }
    let total: f64 = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok((total / prediction.len() as f64) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let lp = Tensor::new(&[1, 3], vec![0.0, f32::MIN / 2.0, f32::MIN / 2.0]).unwrap();
        assert_eq!(cross_entropy(&lp, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_four_way_is_ln_four() {
        let lp = Tensor::full(&[3, 4], 0.25f32.ln()).unwrap();
        let l = cross_entropy(&lp, &[0, 1, 3]).unwrap();
        assert!((l - 1.386_294_4).abs() < 1e-6);
    }

    #[test]
    fn labels_out_of_range_are_rejected() {
        let lp = Tensor::zeros(&[1, 4]).unwrap();
        assert_eq!(
            cross_entropy(&lp, &[4]),
            Err(TensorError::LabelOutOfRange { label: 4, classes: 4 })
        );
    }

    #[test]
    fn mse_of_identical_tensors_is_zero() {
        let t = Tensor::from_fn(&[2, 5], |i| i as f32 * 0.3).unwrap();
        assert_eq!(mse(&t, &t).unwrap(), 0.0);
    }
}
