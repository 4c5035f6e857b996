//! Order-stable summation and sample statistics.

/// Pairwise (tree) summation in slice order. The result depends only on the
/// values and their order, not on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; NaN for fewer than two samples.
    pub variance: f64,
    pub std_error: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let variance = if n < 2 {
        f64::NAN
    } else {
        let sq: alloc::vec::Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        pairwise_sum(&sq) / (n - 1) as f64
    };
    Summary { n, mean, variance, std_error: libm::sqrt(variance / n as f64) }
}
