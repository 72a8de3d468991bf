use super::params::ModelParams;
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must be in [0, 1)"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every trainable tensor from its
/// gradient buffer. Nothing is modified if any gradient is non-finite.
pub fn adam_step<S: Real>(params: &mut ModelParams<S>, cfg: &AdamConfig) -> Result<()> {
    let step = params.step + 1;
    let finite = params
        .params
        .iter()
        .filter(|p| p.trainable)
        .all(|p| p.grad.iter().all(|g| g.is_finite()));
    if !finite {
        return Err(Error::NonFinite {
            what: "gradient",
            step,
        });
    }
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let step_size = cfg.lr / (1.0 - b1.powf(step as f64));
    let v_correction = 1.0 - b2.powf(step as f64);
    let (b1s, b2s) = (S::from_f64_lossy(b1), S::from_f64_lossy(b2));
    for p in params.params.iter_mut().filter(|p| p.trainable) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = b1s * p.m[i] + (S::one() - b1s) * g;
            p.v[i] = b2s * p.v[i] + (S::one() - b2s) * g * g;
            let v_hat = p.v[i].to_f64().unwrap() / v_correction;
            let delta = step_size * p.m[i].to_f64().unwrap() / (v_hat.sqrt() + cfg.eps);
            p.value[i] -= S::from_f64_lossy(delta);
        }
    }
    params.step = step;
    if !params.all_finite() {
        return Err(Error::NonFinite {
            what: "parameter",
            step,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ModelParams<f64> {
        let mut p = ModelParams::empty();
        p.push("w".into(), vec![1], true, vec![value]);
        p.push("running".into(), vec![1], false, vec![5.0]);
        p
    }

    #[test]
    fn constant_gradient_moves_by_lr_each_step() {
        // with a constant gradient, m_hat = g and v_hat = g^2 at every step
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut p = single(1.0);
        for k in 1..=5 {
            p.params[0].grad[0] = 3.0;
            adam_step(&mut p, &cfg).unwrap();
            let expected = 1.0 - k as f64 * 0.01 * 3.0 / (3.0 + 1e-8);
            assert!((p.params[0].value[0] - expected).abs() < 1e-12);
        }
        assert_eq!(p.params[1].value[0], 5.0);
        assert_eq!(p.step, 5);
    }

    #[test]
    fn matches_closed_form_for_alternating_gradients() {
        let cfg = AdamConfig::default();
        let mut p = single(0.0);
        let grads = [1.0, -2.0, 0.5];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            x -= 2e-4 * m_hat / (v_hat.sqrt() + 1e-8);
            p.params[0].grad[0] = g;
            adam_step(&mut p, &cfg).unwrap();
            assert!((p.params[0].value[0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_and_zero_gradient_leave_values() {
        let mut p = single(0.7);
        p.params[0].grad[0] = 4.0;
        adam_step(&mut p, &AdamConfig { lr: 0.0, ..Default::default() }).unwrap();
        assert_eq!(p.params[0].value[0], 0.7);
        let mut p = single(0.7);
        adam_step(&mut p, &AdamConfig::default()).unwrap();
        assert_eq!(p.params[0].value[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = single(0.7);
        p.params[0].grad[0] = f64::NAN;
        let err = adam_step(&mut p, &AdamConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert_eq!(p.params[0].value[0], 0.7);
        assert_eq!(p.step, 0);
    }
}
