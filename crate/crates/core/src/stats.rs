//! Latency summaries: mean, sample standard deviation, nearest-rank
//! percentiles and the empirical CDF.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geo::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no samples to summarize")]
    EmptySamples,
    #[error("sample is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats<T> {
    pub n: usize,
    pub mean_ms: T,
    pub std_ms: T,
    pub p50_ms: T,
    pub p90_ms: T,
    pub p99_ms: T,
    pub max_ms: T,
    /// `(latency_ms, cumulative_fraction)`, one point per sample.
    pub cdf: Vec<(T, T)>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank<T: Scalar>(sorted: &[T], pct: f64) -> T {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn summarize<T: Scalar>(samples: &[T]) -> Result<LatencyStats<T>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = samples.len();
    let nt = T::from_usize(n).expect("sample count representable");
    let mean = samples.iter().fold(T::zero(), |a, &b| a + b) / nt;
    let std = if n > 1 {
        let ss = samples.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean));
        (ss / (nt - T::one())).sqrt()
    } else {
        T::zero()
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let cdf = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, T::from_usize(i + 1).expect("rank representable") / nt))
        .collect();
    Ok(LatencyStats {
        n,
        mean_ms: mean,
        std_ms: std,
        p50_ms: nearest_rank(&sorted, 50.0),
        p90_ms: nearest_rank(&sorted, 90.0),
        p99_ms: nearest_rank(&sorted, 99.0),
        max_ms: sorted[n - 1],
        cdf,
    })
}

impl<T: Scalar> LatencyStats<T> {
    /// All-zero summary used for empty inputs such as batch size 0.
    pub fn zero() -> Self {
        Self {
            n: 0,
            mean_ms: T::zero(),
            std_ms: T::zero(),
            p50_ms: T::zero(),
            p90_ms: T::zero(),
            p99_ms: T::zero(),
            max_ms: T::zero(),
            cdf: Vec::new(),
        }
    }

    /// CDF point file: header `latency_ms,fraction`.
    pub fn cdf_csv(&self) -> String {
        let mut out = String::with_capacity(24 * (self.cdf.len() + 1));
        out.push_str("latency_ms,fraction\n");
        for (v, f) in &self.cdf {
            let _ = writeln!(out, "{v:.6},{f:.6}");
        }
        out
    }
}
