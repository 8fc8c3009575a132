//! Adam and the warmup-stable-decay learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Layout, ModelState};
use crate::{math, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Warmup-stable-decay schedule.
///
/// `warmup` is the step at which warmup ends (W), `stable_end` the step at
/// which decay starts (S), `decay` the length of the decay phase (D), and
/// `max_lr` the plateau value (η).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsdConfig {
    pub warmup: u64,
    pub stable_end: u64,
    pub decay: u64,
    pub max_lr: f64,
}

impl WsdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 || self.warmup > self.stable_end {
            return Err(Error::config(format!(
                "WSD requires 0 < W <= S (W={}, S={})",
                self.warmup, self.stable_end
            )));
        }
        if self.decay == 0 {
            return Err(Error::config("WSD decay length must be >= 1"));
        }
        if !(self.max_lr > 0.0) {
            return Err(Error::config("WSD max_lr must be positive"));
        }
        Ok(())
    }

    /// Same warmup and peak, with the decay phase starting at `start`.
    pub fn decaying_from(&self, start: u64) -> WsdConfig {
        WsdConfig {
            stable_end: start.max(self.warmup),
            ..*self
        }
    }

    pub fn end(&self) -> u64 {
        self.stable_end + self.decay
    }
}

/// Learning rate at step `t`:
/// `t/W·η` during warmup, `η` on the plateau, `0.5^(4(t−S)/D)·η` while decaying.
pub fn wsd_lr(t: u64, cfg: &WsdConfig) -> Result<f64> {
    cfg.validate()?;
    if t >= cfg.end() {
        return Err(Error::Range { step: t, end: cfg.end() });
    }
    Ok(wsd_lr_unchecked(t as f64, cfg))
}

/// The schedule evaluated at a real-valued step, without range checks.
pub fn wsd_lr_unchecked(t: f64, cfg: &WsdConfig) -> f64 {
    let (w, s, d) = (cfg.warmup as f64, cfg.stable_end as f64, cfg.decay as f64);
    if t < w {
        t / w * cfg.max_lr
    } else if t < s {
        cfg.max_lr
    } else {
        math::powf(0.5, 4.0 * (t - s) / d) * cfg.max_lr
    }
}

/// First and second moment estimates plus the update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn clone_optimizer(&self) -> AdamState {
        self.clone()
    }

    pub fn bitwise_eq(&self, other: &AdamState) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.t == other.t
            && same(&self.m, &other.m)
            && same(&self.v, &other.v)
            && self.beta1.to_bits() == other.beta1.to_bits()
            && self.beta2.to_bits() == other.beta2.to_bits()
            && self.eps.to_bits() == other.eps.to_bits()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - math::powf(self.beta1, self.t as f64);
        let bc2 = 1.0 - math::powf(self.beta2, self.t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
}

fn check_finite(layout: &Layout, grads: &[f64]) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let name = layout.segment_of(i).map_or("<unknown>", |s| s.name.as_str());
        return Err(Error::Numeric(format!("gradient segment `{name}` (index {i})")));
    }
    Ok(())
}

/// Adam step on a model state. The pretraining step counter is not touched;
/// callers that advance training own that.
pub fn adam_step(state: &mut ModelState, grads: &[f64], adam: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != state.params.len() || adam.len() != state.params.len() {
        return Err(Error::contract(format!(
            "adam_step: params {}, grads {}, moments {}",
            state.params.len(),
            grads.len(),
            adam.len()
        )));
    }
    check_finite(state.layout(), grads)?;
    adam.update(&mut state.params, grads, lr);
    Ok(())
}

/// Plain gradient step `p -= lr·g`.
pub fn sgd_step(state: &mut ModelState, grads: &[f64], lr: f64) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(Error::contract("sgd_step: gradient length mismatch"));
    }
    check_finite(state.layout(), grads)?;
    state.params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g);
    Ok(())
}
