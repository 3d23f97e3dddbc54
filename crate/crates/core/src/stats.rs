use rayon::prelude::*;

/// Fixed chunk size for parallel reductions; keeps sums independent of the
/// number of worker threads.
pub(crate) const CHUNK: usize = 4096;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = deterministic_sum(values) / n as f64;
        let sq: f64 = values
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let var = if n > 1 { sq / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// `|mean - target| <= k * SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }

    /// Standard error of the difference of two independent estimates.
    pub fn combined_se(&self, other: &MeanEstimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

/// Parallel sum with a reduction order that depends only on the input length.
pub(crate) fn deterministic_sum(values: &[f64]) -> f64 {
    values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}
