//! Adam with bias correction, and Polyak soft updates for target copies.

use crate::layers::Param;
use crate::{NnError, Real};

/// Adam state for one set of parameters. Moment buffers are laid out in
/// the same order the parameters are passed to [`Adam::step`], which must
/// stay stable across calls.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: F) -> Self {
        Adam {
            lr,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Moment buffers, exposed for checkpointing.
    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, t: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    /// One update from the gradients currently held in `params`. Buffers
    /// are sized on first use and must match on every later call.
    pub fn step(&mut self, params: &mut [&mut Param<F>]) -> Result<(), NnError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
            self.v = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(NnError::Contract(format!(
                "adam state holds {} parameter buffers, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = F::from_f64(self.t as f64);
        let one = F::one();
        let bc1 = one - self.beta1.powf(t);
        let bc2 = one - self.beta2.powf(t);
        for (i, p) in params.iter_mut().enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(NnError::Contract(format!(
                    "adam buffer {i} holds {} entries, parameter has {}",
                    self.m[i].len(),
                    p.numel()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..p.numel() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (one - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (one - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p.value[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `target <- (1 - tau) * target + tau * source`, elementwise over aligned
/// parameter lists.
pub fn soft_update<F: Real>(
    target: &mut [&mut Param<F>],
    source: &[&Param<F>],
    tau: F,
) -> Result<(), NnError> {
    if target.len() != source.len() {
        return Err(NnError::Contract(format!(
            "soft update over mismatched parameter lists: {} vs {}",
            target.len(),
            source.len()
        )));
    }
    let one = F::one();
    for (t, s) in target.iter_mut().zip(source.iter()) {
        if t.numel() != s.numel() {
            return Err(NnError::Contract(format!(
                "soft update shape mismatch: {} vs {} entries",
                t.numel(),
                s.numel()
            )));
        }
        for (tv, &sv) in t.value.iter_mut().zip(s.value.iter()) {
            *tv = (one - tau) * *tv + tau * sv;
        }
    }
    Ok(())
}
