use super::LossKind;

/// `logsumexp(z) - z[label]` and its gradient `softmax(z) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// `sum (p - y)^2` and its gradient `2 (p - y)`.
pub fn squared_error(prediction: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let r = p - y;
            loss += r * r;
            2.0 * r
        })
        .collect();
    (loss, grad)
}

impl LossKind {
    /// Loss against a class label. Squared error uses a one-hot target.
    pub fn evaluate(self, prediction: &[f64], label: usize) -> (f64, Vec<f64>) {
        match self {
            LossKind::CrossEntropy => cross_entropy(prediction, label),
            LossKind::SquaredError => {
                let mut target = vec![0.0; prediction.len()];
                target[label] = 1.0;
                squared_error(prediction, &target)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.0, 0.0, 0.0, 0.0], 2);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[2] + 0.75).abs() < 1e-15);
        assert!((grad[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let (a, _) = cross_entropy(&[1.0, 2.0, 3.0], 0);
        let (b, _) = cross_entropy(&[1001.0, 1002.0, 1003.0], 0);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn squared_error_scalar() {
        let (loss, grad) = squared_error(&[3.0], &[1.0]);
        assert_eq!(loss, 4.0);
        assert_eq!(grad, vec![4.0]);
    }
}
