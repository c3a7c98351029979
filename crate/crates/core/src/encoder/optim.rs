use serde::{Deserialize, Serialize};

use crate::tensor::{Mat, Scalar};

/// Adam with linear warmup followed by linear decay to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of `total_steps` spent warming up.
    pub warmup_frac: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// A batch loss above this multiple of the first batch loss (or a
    /// non-finite loss) aborts training.
    pub max_loss_ratio: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_frac: 0.1,
            total_steps: 1000,
            batch_size: 24,
            clip_norm: 1.0,
            max_loss_ratio: 10.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warm = (self.warmup_frac * total).round();
        let s = step as f64;
        if warm > 0.0 && s < warm {
            self.lr * (s + 1.0) / warm
        } else {
            self.lr * ((total - s) / (total - warm).max(1.0)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    /// Applies one update. `params` and `grads` must list tensors in the same
    /// order on every call; entries with `trainable[i] == false` are skipped.
    pub fn step(
        &mut self,
        params: Vec<&mut Mat<F>>,
        grads: Vec<&Mat<F>>,
        trainable: &[bool],
        lr: f64,
    ) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| vec![F::zero(); g.data.len()])
                .collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let b1 = F::lit(self.beta1);
        let b2 = F::lit(self.beta2);
        let one = F::one();
        let c1 = F::lit(1.0 - self.beta1.powi(self.t));
        let c2 = F::lit(1.0 - self.beta2.powi(self.t));
        let lr = F::lit(lr);
        let eps = F::lit(self.eps);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if !trainable[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p.data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: Vec<&mut Mat<F>>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|x| x.to_f64().unwrap().powi(2))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::lit(max_norm / norm);
        for g in grads {
            g.scale(s);
        }
    }
    norm
}
