//! Learning-rate schedule: linear warmup into a cosine decay that ends at a
//! fixed fraction of the peak rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub max_lr: f64,
    pub warmup_init_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    #[serde(default = "default_final_fraction")]
    pub final_lr_fraction: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,
}

fn default_final_fraction() -> f64 {
    0.1
}
fn default_weight_decay() -> f64 {
    0.1
}
fn default_clip_norm() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_epsilon() -> f64 {
    1e-8
}

impl TrainSchedule {
    /// Schedule with the standard optimizer defaults; callers set the rates and
    /// step counts.
    pub fn new(max_lr: f64, warmup_init_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        TrainSchedule {
            max_lr,
            warmup_init_lr,
            warmup_steps,
            total_steps,
            final_lr_fraction: default_final_fraction(),
            weight_decay: default_weight_decay(),
            clip_norm: default_clip_norm(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |why: String| Err(Error::Schedule(why));
        if !(self.max_lr > 0.0 && self.warmup_init_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.warmup_init_lr > self.max_lr {
            return fail(format!(
                "warmup_init_lr {} exceeds max_lr {}",
                self.warmup_init_lr, self.max_lr
            ));
        }
        if self.total_steps == 0 || self.warmup_steps >= self.total_steps {
            return fail(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return fail(format!("final_lr_fraction {} outside (0, 1]", self.final_lr_fraction));
        }
        if self.weight_decay < 0.0 {
            return fail(format!("weight_decay {} is negative", self.weight_decay));
        }
        if self.clip_norm <= 0.0 {
            return fail(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }
}

/// Learning rate at a step in [0, total_steps]. Warmup is linear from
/// warmup_init_lr to max_lr; afterwards the rate follows
/// min + 0.5*(max - min)*(1 + cos(pi*p)) down to min = final_fraction*max.
/// Both branches give exactly max_lr at the warmup boundary.
pub fn lr_at(step: usize, sched: &TrainSchedule) -> Result<f64> {
    sched.validate()?;
    if step > sched.total_steps {
        return Err(Error::Schedule(format!(
            "step {step} is beyond the schedule's {} steps",
            sched.total_steps
        )));
    }
    if step < sched.warmup_steps {
        let progress = step as f64 / sched.warmup_steps as f64;
        return Ok(sched.warmup_init_lr + (sched.max_lr - sched.warmup_init_lr) * progress);
    }
    let min_lr = sched.final_lr_fraction * sched.max_lr;
    let p = (step - sched.warmup_steps) as f64 / (sched.total_steps - sched.warmup_steps) as f64;
    Ok(min_lr + 0.5 * (sched.max_lr - min_lr) * (1.0 + (std::f64::consts::PI * p).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> TrainSchedule {
        TrainSchedule::new(0.0053, 1e-6, 5000, 350_000)
    }

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn default_hyperparameters_are_pinned() {
        let s = reference();
        assert_eq!(s.adam_beta1, 0.9);
        assert_eq!(s.adam_beta2, 0.95);
        assert_eq!(s.adam_epsilon, 1e-8);
        assert_eq!(s.weight_decay, 0.1);
        assert_eq!(s.clip_norm, 1.0);
        assert_eq!(s.final_lr_fraction, 0.1);
    }

    #[test]
    fn warmup_endpoints_are_exact() {
        let s = reference();
        close(lr_at(0, &s).unwrap(), 1e-6);
        close(lr_at(s.warmup_steps, &s).unwrap(), s.max_lr);
        close(lr_at(s.total_steps, &s).unwrap(), 0.1 * s.max_lr);
    }

    #[test]
    fn cosine_midpoint_hits_the_closed_form() {
        // warmup 100, total 300: step 200 sits at p = 0.5.
        let s = TrainSchedule::new(0.004, 1e-6, 100, 300);
        close(lr_at(200, &s).unwrap(), 0.55 * s.max_lr);
    }

    #[test]
    fn schedule_is_continuous_at_the_warmup_boundary() {
        let s = TrainSchedule::new(0.002, 1e-6, 7, 31);
        let before = lr_at(6, &s).unwrap();
        let at = lr_at(7, &s).unwrap();
        let after = lr_at(8, &s).unwrap();
        assert_eq!(at, s.max_lr);
        assert!(before < at);
        assert!(after < at);
        // No jump larger than one warmup increment on either side.
        let warmup_increment = (s.max_lr - s.warmup_init_lr) / 7.0;
        assert!(at - before <= warmup_increment + 1e-18);
    }

    #[test]
    fn rate_is_monotone_up_then_down() {
        let s = TrainSchedule::new(0.01, 1e-6, 10, 50);
        let rates: Vec<f64> = (0..=50).map(|i| lr_at(i, &s).unwrap()).collect();
        for i in 0..10 {
            assert!(rates[i] < rates[i + 1], "warmup not increasing at {i}");
        }
        for i in 10..50 {
            assert!(rates[i] >= rates[i + 1], "decay not decreasing at {i}");
        }
    }

    #[test]
    fn out_of_range_step_is_a_schedule_error() {
        let s = reference();
        assert!(matches!(lr_at(350_001, &s), Err(Error::Schedule(_))));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = reference();
        s.warmup_steps = s.total_steps;
        assert!(s.validate().is_err());
        let mut s = reference();
        s.warmup_init_lr = 1.0;
        assert!(s.validate().is_err());
        let mut s = reference();
        s.final_lr_fraction = 0.0;
        assert!(s.validate().is_err());
    }
}
