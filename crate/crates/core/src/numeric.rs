//! Small numeric helpers: deterministic summation and percentiles.

/// Pairwise sum with a fixed chunk size.
///
/// The reduction tree depends only on the slice length, so results are
/// reproducible across platforms and independent of any outer parallelism.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const CHUNK: usize = 128;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let mid = (values.len() / 2).next_multiple_of(CHUNK);
    let (lo, hi) = values.split_at(mid.min(values.len()));
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// Mean of a slice via pairwise summation.
pub fn pairwise_mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of empty slice");
    pairwise_sum(values) / values.len() as f64
}

/// Mean and standard error of the mean (two-pass, pairwise sums).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "need at least two samples");
    let mean = pairwise_mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Percentile with linear interpolation between order statistics
/// (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&q), "q out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Median (50th percentile).
pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}
