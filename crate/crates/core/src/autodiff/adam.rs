use super::tensor::Tensor;
use crate::error::{LicapError, Result};

/// Bias-corrected Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_hyperparameters(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. Moment buffers are allocated on the first call and
    /// must keep matching the parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(LicapError::invalid(format!(
                "adam: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(LicapError::ShapeMismatch {
                    op: "adam",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(LicapError::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(LicapError::invalid("adam: parameter layout changed between steps"));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *x -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.01);
        let mut p = Tensor::column(vec![1.0, -2.0]);
        let g = Tensor::column(vec![0.3, -40.0]);
        adam.step(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p.data()[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::column(vec![0.5, 1.5]);
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[Tensor::zeros(2, 1)]).unwrap();
        }
        assert_eq!(p.data(), &[0.5, 1.5]);
    }

    #[test]
    fn identical_problems_identical_trajectories() {
        let run = || {
            let mut adam = Adam::new(0.05);
            let mut x = Tensor::scalar(3.0);
            let mut trace = Vec::new();
            for _ in 0..50 {
                let g = Tensor::scalar(2.0 * x.item());
                adam.step(&mut [&mut x], &[g]).unwrap();
                trace.push(x.item());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn minimises_quadratic() {
        let mut adam = Adam::new(0.1);
        let mut x = Tensor::scalar(3.0);
        for _ in 0..500 {
            let g = Tensor::scalar(2.0 * (x.item() - 1.0));
            adam.step(&mut [&mut x], &[g]).unwrap();
        }
        assert!((x.item() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut adam = Adam::new(0.1);
        let mut x = Tensor::scalar(1.0);
        let err = adam.step(&mut [&mut x], &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(LicapError::NonFinite(_))));
        assert_eq!(x.item(), 1.0);
    }
}
