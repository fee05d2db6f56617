//! Weighted binary cross-entropy over constraint nodes, with an optional sparsity penalty.

use super::layers::sigmoid;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight on the positive (active) class.
    pub pos_weight: f64,
    /// Coefficient on the mean predicted probability.
    pub reg_coefficient: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            pos_weight: 1.0,
            reg_coefficient: 0.0,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `mean(−[w·y·log p + (1−y)·log(1−p)]) + reg·mean(p)` with `p` clamped to `[1e-7, 1−1e-7]`.
pub fn weighted_bce(probs: &[f64], labels: &[f64], cfg: &LossConfig) -> f64 {
    assert_eq!(probs.len(), labels.len());
    if probs.is_empty() {
        return 0.0;
    }
    let sum = LossSum::from_probs(probs, labels, cfg);
    sum.mean(cfg)
}

/// Unnormalized loss accumulator so that several batches average exactly like one.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSum {
    pub bce: f64,
    pub prob: f64,
    pub count: usize,
}

impl LossSum {
    pub fn from_probs(probs: &[f64], labels: &[f64], cfg: &LossConfig) -> Self {
        let mut sum = LossSum::default();
        for (&p, &y) in probs.iter().zip(labels) {
            let pc = clamp_prob(p);
            sum.bce -= cfg.pos_weight * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            sum.prob += pc;
            sum.count += 1;
        }
        sum
    }

    pub fn add(&mut self, other: LossSum) {
        self.bce += other.bce;
        self.prob += other.prob;
        self.count += other.count;
    }

    pub fn mean(&self, cfg: &LossConfig) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let c = self.count as f64;
        self.bce / c + cfg.reg_coefficient * self.prob / c
    }
}

/// Loss on sigmoid outputs of `logits` and its gradient with respect to those logits. The value
/// uses the clamped probabilities; the gradient is that of the unclamped logit form, so a
/// confidently wrong prediction still gets pushed back.
pub fn weighted_bce_logits(logits: &[f64], labels: &[f64], cfg: &LossConfig) -> (LossSum, Vec<f64>) {
    assert_eq!(logits.len(), labels.len());
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let sum = LossSum::from_probs(&probs, labels, cfg);
    let c = logits.len().max(1) as f64;
    let grads = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            // d/dz of −w·y·log σ(z) − (1−y)·log(1−σ(z)) + reg·σ(z).
            let d_z = -cfg.pos_weight * y * (1.0 - p) + (1.0 - y) * p
                + cfg.reg_coefficient * p * (1.0 - p);
            d_z / c
        })
        .collect();
    (sum, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn scalar_values() {
        let cfg = LossConfig::default();
        assert!((weighted_bce(&[0.5], &[1.0], &cfg) - LN2).abs() < 1e-15);
        assert!(weighted_bce(&[1.0 - 1e-7], &[1.0], &cfg) < 1.1e-7);
        let weighted = LossConfig {
            pos_weight: 3.0,
            ..cfg
        };
        assert!((weighted_bce(&[0.5], &[1.0], &weighted) - 3.0 * LN2).abs() < 1e-15);
        let reg = LossConfig {
            reg_coefficient: 0.5,
            ..cfg
        };
        assert!((weighted_bce(&[0.5, 0.5], &[0.0, 1.0], &reg) - (LN2 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let cfg = LossConfig {
            pos_weight: 2.5,
            reg_coefficient: 0.01,
        };
        let logits = [0.3, -1.2, 2.0];
        let labels = [1.0, 0.0, 1.0];
        let (_, grads) = weighted_bce_logits(&logits, &labels, &cfg);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = logits;
            let mut down = logits;
            up[i] += h;
            down[i] -= h;
            let f = |z: &[f64]| {
                let (s, _) = weighted_bce_logits(z, &labels, &cfg);
                s.mean(&cfg)
            };
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-8, "{i}: {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn saturated_predictions() {
        let cfg = LossConfig::default();
        let (sum, grads) = weighted_bce_logits(&[40.0, -40.0], &[1.0, 0.0], &cfg);
        assert!(sum.mean(&cfg) < 1.1e-7);
        assert!(grads.iter().all(|g| g.abs() < 1e-17));
        // Wrong and saturated: the value is capped by the clamp, the gradient is not lost.
        let (sum, grads) = weighted_bce_logits(&[-40.0, 40.0], &[1.0, 0.0], &cfg);
        assert!((sum.mean(&cfg) + PROB_CLAMP.ln()).abs() < 1e-6);
        assert!((grads[0] + 0.5).abs() < 1e-12 && (grads[1] - 0.5).abs() < 1e-12);
    }
}
