//! Batch-means interval estimation for steady-state simulation output.
//!
//! Autocorrelated per-transaction observations are grouped into a fixed
//! number of contiguous batches; batch averages are treated as
//! approximately independent and fed through a Student-t interval.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Point estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiEstimate {
    pub mean: f64,
    pub half_width: f64,
}

fn t_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df >= 1")
        .inverse_cdf(0.975)
}

fn interval(batch_means: &[f64]) -> Option<CiEstimate> {
    let b = batch_means.len();
    if b < 2 {
        return None;
    }
    let mean = batch_means.iter().sum::<f64>() / b as f64;
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    let half_width = t_975(b as f64 - 1.0) * (var / b as f64).sqrt();
    Some(CiEstimate { mean, half_width })
}

/// Index range of batch `i` of `b` over `n` observations.
fn batch_bounds(n: usize, b: usize, i: usize) -> (usize, usize) {
    (i * n / b, (i + 1) * n / b)
}

/// Mean of per-transaction values with a batch-means interval. Returns
/// `None` when there are too few observations for two per batch.
pub fn batch_means(values: &[f64], batches: usize) -> Option<CiEstimate> {
    let n = values.len();
    if n < 2 * batches {
        return None;
    }
    let means: Vec<f64> = (0..batches)
        .map(|i| {
            let (lo, hi) = batch_bounds(n, batches, i);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    interval(&means)
}

/// Throughput with a batch-means interval, from the (ascending)
/// completion instants observed after `measure_start`.
pub fn batch_throughput(
    finish_times: &[f64],
    measure_start: f64,
    batches: usize,
) -> Option<CiEstimate> {
    let n = finish_times.len();
    if n < 2 * batches {
        return None;
    }
    let mut means = Vec::with_capacity(batches);
    let mut start = measure_start;
    for i in 0..batches {
        let (lo, hi) = batch_bounds(n, batches, i);
        let end = finish_times[hi - 1];
        if end <= start {
            return None;
        }
        means.push((hi - lo) as f64 / (end - start));
        start = end;
    }
    interval(&means)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_give_zero_width() {
        let est = batch_means(&[2.0; 200], 20).unwrap();
        assert_eq!(est.mean, 2.0);
        assert_eq!(est.half_width, 0.0);
    }

    #[test]
    fn too_few_samples_give_no_interval() {
        assert!(batch_means(&[1.0; 39], 20).is_none());
        assert!(batch_throughput(&[1.0; 39], 0.0, 20).is_none());
    }

    #[test]
    fn regular_completions_estimate_their_rate() {
        // One completion every 0.25 time units: throughput 4.
        let times: Vec<f64> = (1..=400).map(|i| i as f64 * 0.25).collect();
        let est = batch_throughput(&times, 0.0, 20).unwrap();
        assert!((est.mean - 4.0).abs() < 1e-9, "{}", est.mean);
    }

    #[test]
    fn interval_tracks_known_t_quantile() {
        // Two-point batches alternating 0/1 have mean 0.5; with known df
        // the half-width is t * s / sqrt(b).
        let values: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let est = batch_means(&values, 20).unwrap();
        assert!((est.mean - 0.5).abs() < 1e-12);
        assert_eq!(est.half_width, 0.0); // every batch mean is exactly 0.5
    }
}
