//! Learning-rate schedule and the two optimizers.
//!
//! Both optimizers round parameters to `f32`-representable values after each
//! update so checkpoints round-trip exactly.

use crate::encoder::EncoderParams;

/// Linear warmup from 0 to `base` over `warmup` steps, then half-cosine
/// decay reaching 0 at `total` steps.
pub fn lr_schedule(step: usize, base: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    if span == 0 {
        return base;
    }
    let x = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * x).cos())
}

/// Decoupled weight decay applies to linear weight matrices only.
pub fn decays(name: &str) -> bool {
    name.ends_with(".w")
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: EncoderParams,
    v: EncoderParams,
    t: i32,
}

impl AdamW {
    pub fn new(like: &EncoderParams, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    /// Updates tensors whose name passes `trainable`.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64, trainable: impl Fn(&str) -> bool) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for ((((name, p), (_, g)), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(g).zip(m).zip(v) {
            if !trainable(&name) {
                continue;
            }
            let wd = if decays(&name) { self.weight_decay } else { 0.0 };
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let upd = (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + self.eps) + wd * p.data[i];
                p.data[i] = round_f32(p.data[i] - lr * upd);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: EncoderParams,
}

impl Sgd {
    pub fn new(like: &EncoderParams, momentum: f64) -> Self {
        Self { momentum, velocity: like.zeros_like() }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64, trainable: impl Fn(&str) -> bool) {
        let g = grads.tensors();
        let vel = self.velocity.tensors_mut();
        for (((name, p), (_, g)), (_, v)) in params.tensors_mut().into_iter().zip(g).zip(vel) {
            if !trainable(&name) {
                continue;
            }
            for i in 0..p.data.len() {
                v.data[i] = self.momentum * v.data[i] + g.data[i];
                p.data[i] = round_f32(p.data[i] - lr * v.data[i]);
            }
        }
    }
}
