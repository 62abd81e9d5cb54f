//! Temperature-scaled categorical draws.

use rand::Rng;

/// Index of the largest weight, lowest index on ties.
pub fn argmax(weights: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 && best.is_none_or(|b| w > weights[b]) {
            best = Some(i);
        }
    }
    best
}

/// Draws an index with probability proportional to `weights[i]^(1/temperature)`.
///
/// Zero weights are never drawn. A temperature of exactly zero is the argmax
/// limit. Returns `None` when every weight is zero.
pub fn sample_tempered<R: Rng + ?Sized>(
    weights: &[f64],
    temperature: f64,
    rng: &mut R,
) -> Option<usize> {
    if temperature == 0.0 {
        return argmax(weights);
    }
    debug_assert!(temperature > 0.0);
    let max_log = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| w.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if max_log == f64::NEG_INFINITY {
        return None;
    }
    let scaled: Vec<f64> = if temperature == 1.0 {
        weights.to_vec()
    } else {
        weights
            .iter()
            .map(|&w| {
                if w > 0.0 {
                    ((w.ln() - max_log) / temperature).exp()
                } else {
                    0.0
                }
            })
            .collect()
    };
    let total: f64 = scaled.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in scaled.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}
