//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam step on `params` in place.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != moments.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            moments.len()
        )));
    }
    moments.steps += 1;
    let t = moments.steps as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut m = AdamMoments::zeros(3);
        for _ in 0..10 {
            adam_update(&mut p, &[0.0; 3], &mut m, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = vec![0.0, 0.0];
        let mut m = AdamMoments::zeros(2);
        adam_update(&mut p, &[3.0, -0.5], &mut m, 0.01, &AdamConfig::default()).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn scalar_quadratic_converges() {
        // f(x) = (x - 3)^2 from x = -2.
        let mut p = vec![-2.0];
        let mut m = AdamMoments::zeros(1);
        for _ in 0..500 {
            let g = 2.0 * (p[0] - 3.0);
            adam_update(&mut p, &[g], &mut m, 0.1, &AdamConfig::default()).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![0.0; 2];
        let mut m = AdamMoments::zeros(3);
        assert!(adam_update(&mut p, &[0.0; 2], &mut m, 0.1, &AdamConfig::default()).is_err());
    }
}
