use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Param;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adam with variance rectification.
    #[default]
    Radam,
    Adam,
}

/// Moment buffers and hyperparameters for Adam / rectified Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Whether the adaptive (rectified) branch ran on the latest step.
    #[serde(default)]
    pub last_rectified: Option<bool>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[Param]) -> Self {
        Self {
            kind,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
            first_moment: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            last_rectified: None,
        }
    }

    /// Length of the approximated simple moving average at step `t`.
    pub fn rho(&self, t: u64) -> f64 {
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let bt = libm::pow(self.beta2, t as f64);
        rho_inf - 2.0 * t as f64 * bt / (1.0 - bt)
    }

    fn rectification(&self, t: u64) -> Option<f64> {
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = self.rho(t);
        if rho_t <= 4.0 {
            return None;
        }
        let num = (rho_t - 4.0) * (rho_t - 2.0) * rho_inf;
        let den = (rho_inf - 4.0) * (rho_inf - 2.0) * rho_t;
        Some(libm::sqrt(num / den))
    }
}

/// Applies one Adam or rectified-Adam update using each parameter's `grad`.
///
/// In rectified mode the adaptive step is used only once the moving-average
/// length exceeds 4; before that the bias-corrected momentum is applied
/// directly.
pub fn radam_step(params: &mut [Param], state: &mut OptimizerState) -> Result<()> {
    if state.learning_rate < 0.0 || !state.learning_rate.is_finite() {
        return Err(Error::Config(format!(
            "learning rate {} must be finite and non-negative",
            state.learning_rate
        )));
    }
    if params.len() != state.first_moment.len() {
        return Err(Error::Config(format!(
            "optimizer tracks {} parameters, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for p in params.iter() {
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient of {}[{i}]", p.name)));
        }
    }
    let t = state
        .step
        .checked_add(1)
        .ok_or_else(|| Error::Numeric("optimizer step counter overflow".into()))?;
    state.step = t;

    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let bias1 = 1.0 - libm::pow(b1, t as f64);
    let bias2 = 1.0 - libm::pow(b2, t as f64);
    let rect = match state.kind {
        OptimizerKind::Adam => Some(1.0),
        OptimizerKind::Radam => state.rectification(t),
    };
    state.last_rectified = Some(rect.is_some());

    for ((p, m), v) in params
        .iter_mut()
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bias1;
            let delta = match rect {
                Some(r) => {
                    let v_hat = v[i] / bias2;
                    r * m_hat / (libm::sqrt(v_hat) + eps)
                }
                None => m_hat,
            };
            values[i] -= lr * delta;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64, grad: f64) -> Vec<Param> {
        let mut p = Param::new("w", Tensor::vector(vec![value]));
        p.grad[0] = grad;
        vec![p]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Radam] {
            let mut ps = one_param(1.25, 0.0);
            let mut st = OptimizerState::new(kind, 1e-3, &ps);
            for _ in 0..10 {
                radam_step(&mut ps, &mut st).unwrap();
            }
            assert_eq!(ps[0].value.data(), &[1.25]);
            assert_eq!(st.step, 10);
        }
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut ps = one_param(0.0, 3.7);
        let mut st = OptimizerState::new(OptimizerKind::Adam, 1e-3, &ps);
        radam_step(&mut ps, &mut st).unwrap();
        // m̂ = g, v̂ = g², step = lr·g/(|g|+eps)
        let expected = -1e-3 * 3.7 / (3.7 + 1e-8);
        assert!((ps[0].value.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn rectification_inactive_for_first_four_steps() {
        let mut ps = one_param(0.0, 0.5);
        let mut st = OptimizerState::new(OptimizerKind::Radam, 1e-3, &ps);
        for t in 1..=6u64 {
            let before = ps[0].value.data()[0];
            radam_step(&mut ps, &mut st).unwrap();
            let rect = st.last_rectified.unwrap();
            assert_eq!(rect, t >= 5, "step {t}");
            if !rect {
                // constant gradient: m̂ = g exactly, plain momentum step
                let delta = before - ps[0].value.data()[0];
                assert!((delta - 1e-3 * 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = one_param(0.0, f64::NAN);
        let mut st = OptimizerState::new(OptimizerKind::Radam, 1e-3, &ps);
        match radam_step(&mut ps, &mut st) {
            Err(Error::Numeric(msg)) => assert!(msg.contains('w')),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.step, 0);
    }

    #[test]
    fn step_overflow_is_reported() {
        let mut ps = one_param(0.0, 1.0);
        let mut st = OptimizerState::new(OptimizerKind::Adam, 1e-3, &ps);
        st.step = u64::MAX;
        assert!(radam_step(&mut ps, &mut st).is_err());
    }
}
