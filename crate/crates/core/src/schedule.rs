//! Learning-rate schedule: linear warmup into a cosine decay.

#[allow(unused_imports)] // std-linked builds resolve float math inherently
use num_traits::Float;

use crate::contract_error;
use crate::error::{Error, Result};

/// Piecewise schedule over optimizer steps `0..=total_steps`: linear from
/// `warmup_lr` at step 0 to `init_lr` at `warmup_steps`, then a half cosine
/// down to `min_lr` at `total_steps`. All arithmetic in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub warmup_lr: f64,
    pub init_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(
        warmup_lr: f64,
        init_lr: f64,
        min_lr: f64,
        warmup_steps: u64,
        total_steps: u64,
    ) -> Result<Self> {
        if !(warmup_lr.is_finite() && init_lr.is_finite() && min_lr.is_finite()) {
            return Err(Error::Config("learning rates must be finite".into()));
        }
        if warmup_lr < 0.0 || init_lr < 0.0 || min_lr < 0.0 {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if min_lr > init_lr {
            return Err(Error::Config(alloc::format!(
                "min_lr {min_lr} must not exceed init_lr {init_lr}"
            )));
        }
        if warmup_steps >= total_steps {
            return Err(Error::Config(alloc::format!(
                "warmup_steps {warmup_steps} must be < total_steps {total_steps}"
            )));
        }
        Ok(Self {
            warmup_lr,
            init_lr,
            min_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Learning rate at an optimizer step in `0..=total_steps`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(contract_error!(
                "schedule step {} out of range 0..={}",
                step,
                self.total_steps
            ));
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return Ok(self.init_lr);
            }
            let t = step as f64 / self.warmup_steps as f64;
            return Ok(self.warmup_lr + (self.init_lr - self.warmup_lr) * t);
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let t = (step - self.warmup_steps) as f64 / span;
        Ok(self.min_lr + 0.5 * (self.init_lr - self.min_lr) * (1.0 + (core::f64::consts::PI * t).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_schedule() -> LrSchedule {
        LrSchedule::new(1e-6, 1e-5, 1e-6, 100, 1000).unwrap()
    }

    #[test]
    fn endpoints() {
        let s = paper_schedule();
        assert_eq!(s.lr_at(0).unwrap(), 1e-6);
        assert_eq!(s.lr_at(100).unwrap(), 1e-5);
        assert!((s.lr_at(1000).unwrap() - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn cosine_midpoint() {
        let s = paper_schedule();
        let mid = s.lr_at(100 + 450).unwrap();
        assert!((mid - (1e-5 + 1e-6) / 2.0).abs() < 1e-12, "{mid}");
    }

    #[test]
    fn continuous_and_piecewise_monotone() {
        let s = LrSchedule::new(3e-5, 3e-4, 3e-5, 50, 500).unwrap();
        let mut prev = s.lr_at(0).unwrap();
        let slope_bound = (3e-4 - 3e-5) / 50.0 + (3e-4 - 3e-5) / 450.0;
        for step in 1..=500u64 {
            let lr = s.lr_at(step).unwrap();
            assert!((lr - prev).abs() <= slope_bound * 1.6, "jump at {step}");
            if step <= 50 {
                assert!(lr >= prev);
            } else {
                assert!(lr <= prev);
            }
            prev = lr;
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let s = paper_schedule();
        assert!(matches!(s.lr_at(1001), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_config_rejected() {
        assert!(LrSchedule::new(1e-6, 1e-5, 2e-5, 10, 100).is_err());
        assert!(LrSchedule::new(1e-6, 1e-5, 1e-6, 100, 100).is_err());
    }

    #[test]
    fn zero_warmup_starts_at_init() {
        let s = LrSchedule::new(0.0, 1e-3, 1e-4, 0, 10).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 1e-3);
    }
}
