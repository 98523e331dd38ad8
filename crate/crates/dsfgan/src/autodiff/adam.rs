//! Adam optimizer with bias correction.

use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Optimizer state for one parameter group. Moment tensors mirror the
/// parameter shapes; the step counter increases by one per update.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_shapes: &[Vec<usize>], learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        AdamState {
            first_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: param_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            step: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }

    pub fn for_params(params: &[Tensor], learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape().to_vec()).collect();
        Self::new(&shapes, learning_rate, beta1, beta2)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over a parameter group: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                detail: format!(
                    "{} params, {} grads, {} state slots",
                    params.len(),
                    grads.len(),
                    self.first_moment.len()
                ),
            });
        }
        for (i, p) in params.iter().enumerate() {
            if grads[i].shape() != p.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!("param {:?} vs grad {:?}", p.shape(), grads[i].shape()),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let pd = param.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for k in 0..pd.len() {
                let g = grad.data()[k];
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * g;
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * g * g;
                let m_hat = md[k] / bias1;
                let v_hat = vd[k] / bias2;
                pd[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.0])];
        let mut state = AdamState::for_params(&params, 0.01, 0.9, 0.999);
        let zero = Tensor::zeros(vec![3]);
        state.step(&mut params, &[&zero]).unwrap();
        for (&p, &orig) in params[0].data().iter().zip(&[1.0, -2.0, 3.0]) {
            assert!((p - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias-corrected first step with g = 1: m_hat / sqrt(v_hat) = 1,
        // so the parameter drops by lr / (1 + eps-correction) ~ lr.
        let lr = 0.05;
        let mut params = vec![Tensor::scalar(2.0)];
        let mut state = AdamState::for_params(&params, lr, 0.9, 0.999);
        let g = Tensor::scalar(1.0);
        state.step(&mut params, &[&g]).unwrap();
        let delta = 2.0 - params[0].item();
        assert!((delta - lr).abs() < 1e-6);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn hundred_step_trajectory_matches_scalar_reference() {
        // Independent scalar Adam, written without the Tensor machinery.
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let grad_at = |x: f64| 2.0 * (x - 1.5); // d/dx (x - 1.5)^2
        let (mut xr, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=100 {
            let g = grad_at(xr);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            xr -= lr * m_hat / (v_hat.sqrt() + eps);
            reference.push(xr);
        }

        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::for_params(&params, lr, b1, b2);
        for want in reference {
            let g = Tensor::scalar(grad_at(params[0].item()));
            state.step(&mut params, &[&g]).unwrap();
            assert!((params[0].item() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_grad_shape_is_an_error() {
        let mut params = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut state = AdamState::for_params(&params, 0.01, 0.9, 0.999);
        let bad = Tensor::vector(vec![0.0; 3]);
        assert!(state.step(&mut params, &[&bad]).is_err());
    }
}
