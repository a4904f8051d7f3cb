//! Adaptive-moment optimizer with decoupled weight decay.

use alloc::vec::Vec;

#[allow(unused_imports)] // std-linked builds resolve float math inherently
use num_traits::Float;

use crate::contract_error;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Optimizer state: first/second moment estimates per parameter plus a
/// strictly increasing step counter. Moments are allocated on the first
/// step and must mirror parameter shapes from then on.
pub struct AdamW<T: Scalar> {
    pub cfg: AdamWConfig,
    step_count: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Moment buffers in parameter order (empty before the first step).
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restores state saved from [`AdamW::moments`] and [`AdamW::step_count`].
    pub fn restore(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step_count: u64) -> Result<()> {
        if m.len() != v.len() {
            return Err(contract_error!(
                "moment lists disagree: {} first vs {} second",
                m.len(),
                v.len()
            ));
        }
        for (a, b) in m.iter().zip(&v) {
            if a.shape() != b.shape() {
                return Err(contract_error!(
                    "moment shapes disagree: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                ));
            }
        }
        self.m = m;
        self.v = v;
        self.step_count = step_count;
        Ok(())
    }

    /// One update over all parameters. `grads[i]` of `None` means the
    /// parameter saw no gradient this step and is treated as zero (moments
    /// decay, weight decay still applies).
    pub fn step(
        &mut self,
        lr: f64,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(contract_error!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            ));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(alloc::format!("learning rate {lr} invalid")));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.m.len() != params.len() {
            return Err(contract_error!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        let b1 = T::from_f64_lossy(self.cfg.beta1);
        let b2 = T::from_f64_lossy(self.cfg.beta2);
        let one_m_b1 = T::from_f64_lossy(1.0 - self.cfg.beta1);
        let one_m_b2 = T::from_f64_lossy(1.0 - self.cfg.beta2);
        let inv_bc1 = T::from_f64_lossy(1.0 / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let eps = T::from_f64_lossy(self.cfg.eps);
        let lr_t = T::from_f64_lossy(lr);
        let decay = T::from_f64_lossy(lr * self.cfg.weight_decay);

        for (i, param) in params.iter_mut().enumerate() {
            if let Some(gt) = &grads[i] {
                if gt.shape() != param.shape() {
                    return Err(contract_error!(
                        "gradient shape {:?} does not mirror parameter shape {:?}",
                        gt.shape(),
                        param.shape()
                    ));
                }
            }
            if self.m[i].shape() != param.shape() {
                return Err(contract_error!(
                    "moment shape {:?} does not mirror parameter shape {:?}",
                    self.m[i].shape(),
                    param.shape()
                ));
            }
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let pd = param.data_mut();
            let zero = T::zero();
            for j in 0..pd.len() {
                let g = grads[i].as_ref().map_or(zero, |t| t.data()[j]);
                md[j] = b1 * md[j] + one_m_b1 * g;
                vd[j] = b2 * vd[j] + one_m_b2 * g * g;
                let m_hat = md[j] * inv_bc1;
                let v_hat = vd[j] * inv_bc2;
                pd[j] = pd[j] - lr_t * (m_hat / (v_hat.sqrt() + eps)) - decay * pd[j];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_apply_only_decay() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default());
        let mut p = Tensor::from_slice(&[2.0f64, -3.0]);
        let lr = 0.1;
        opt.step(lr, &mut [&mut p], &[None]).unwrap();
        let shrink = 1.0 - lr * 0.05;
        assert_eq!(p.data(), &[2.0 * shrink, -3.0 * shrink]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_by_about_lr() {
        let mut opt = AdamW::<f64>::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = Tensor::from_slice(&[1.0f64]);
        let g = Tensor::from_slice(&[0.5f64]);
        opt.step(0.01, &mut [&mut p], &[Some(g)]).unwrap();
        // bias-corrected first step: update ≈ lr · g/|g|
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-6, "{}", p.data()[0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut opt = AdamW::<f64>::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        });
        let mut p = Tensor::from_slice(&[5.0f64]);
        for _ in 0..400 {
            let g = Tensor::from_slice(&[2.0 * p.data()[0]]);
            opt.step(0.05, &mut [&mut p], &[Some(g)]).unwrap();
        }
        assert!(p.data()[0].abs() < 1e-2, "{}", p.data()[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default());
        let mut p = Tensor::from_slice(&[1.0f64, 2.0]);
        let g = Tensor::from_slice(&[1.0f64]);
        assert!(opt.step(0.1, &mut [&mut p], &[Some(g)]).is_err());
    }

    #[test]
    fn restore_round_trip() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default());
        let mut p = Tensor::from_slice(&[1.0f64]);
        let g = Tensor::from_slice(&[0.3f64]);
        opt.step(0.01, &mut [&mut p], &[Some(g.clone())]).unwrap();
        let (m, v) = opt.moments();
        let (m, v) = (m.to_vec(), v.to_vec());
        let step = opt.step_count();
        let mut p_a = p.clone();
        opt.step(0.01, &mut [&mut p_a], &[Some(g.clone())]).unwrap();

        let mut opt2 = AdamW::<f64>::new(AdamWConfig::default());
        opt2.restore(m, v, step).unwrap();
        let mut p_b = p.clone();
        opt2.step(0.01, &mut [&mut p_b], &[Some(g)]).unwrap();
        assert_eq!(p_a.data(), p_b.data());
    }

    #[test]
    fn moment_count_mismatch_rejected() {
        let mut opt = AdamW::<f64>::new(AdamWConfig::default());
        let mut a = Tensor::from_slice(&[1.0f64]);
        let mut b = Tensor::from_slice(&[1.0f64]);
        opt.step(0.1, &mut [&mut a], &[None]).unwrap();
        assert!(matches!(
            opt.step(0.1, &mut [&mut a, &mut b], &[None, None]),
            Err(Error::Contract(_))
        ));
    }
}
