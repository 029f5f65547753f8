//! Categorical distributions over head logits, with invalid-action masking.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::NnError;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to entries with `mask[i]`; masked entries get exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, NnError> {
    if !mask.iter().any(|&m| m) {
        return Err(NnError::AllActionsMasked);
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Zeroes masked entries of an existing distribution and rescales the rest
/// to sum to one.
pub fn renormalize(probs: &[f64], mask: &[bool]) -> Result<Vec<f64>, NnError> {
    let kept: f64 = probs.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| p).sum();
    if !mask.iter().any(|&m| m) || !(kept > 0.0) {
        return Err(NnError::AllActionsMasked);
    }
    Ok(probs
        .iter()
        .zip(mask)
        .map(|(&p, &m)| if m { p / kept } else { 0.0 })
        .collect())
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Gradient of `log p[k]` with respect to the logits of a (masked) softmax.
pub fn log_prob_grad(probs: &[f64], k: usize, mask: Option<&[bool]>) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if mask.is_some_and(|m| !m[j]) {
                0.0
            } else {
                f64::from(u8::from(j == k)) - p
            }
        })
        .collect()
}

/// Gradient of the entropy with respect to the logits of a (masked) softmax.
pub fn entropy_grad(probs: &[f64]) -> Vec<f64> {
    let h = entropy(probs);
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}

/// Draws an index with probability `probs[i]`.
pub fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    match WeightedIndex::new(probs) {
        Ok(dist) => dist.sample(rng),
        Err(_) => 0,
    }
}

/// Index of the largest probability, first on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
