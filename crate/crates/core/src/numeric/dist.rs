use rand::Rng;

use super::NumericError;

/// Draws an index from `probs` and returns it with its log-probability.
///
/// Zero-probability entries are never returned.
pub fn categorical_sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<(usize, f64), NumericError> {
    validate_distribution(probs)?;
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_nonzero = i;
        cum += p;
        if u < cum {
            return Ok((i, p.ln()));
        }
    }
    Ok((last_nonzero, probs[last_nonzero].ln()))
}

/// Index of the largest probability (first on ties) and its log-probability.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn validate_distribution(probs: &[f64]) -> Result<(), NumericError> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(NumericError::NotNormalized(sum));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}
