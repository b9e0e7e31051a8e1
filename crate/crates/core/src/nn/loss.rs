/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-12;

/// `weight * Σ_levels BCE(ŷ, y)` for one instance.
pub fn weighted_bce(y_hat: &[f64], y: &[f64], weight: f64) -> f64 {
    let total: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    weight * total
}

/// Batch mean of [`weighted_bce`] over `(ŷ, y, weight)` triples.
pub fn mean_weighted_bce<'a, I>(batch: I) -> f64
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64], f64)>,
{
    let mut n = 0usize;
    let mut sum = 0.0;
    for (p, y, w) in batch {
        sum += weighted_bce(p, y, w);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
