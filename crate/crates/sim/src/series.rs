use std::fmt::Write as _;

use crate::SimError;

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Window start, seconds.
    pub t: f64,
    pub qps: f64,
    pub errors: u64,
}

/// Completed requests per second over contiguous fixed-length windows.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputSeries {
    pub window_s: f64,
    pub windows: Vec<Window>,
}

impl ThroughputSeries {
    pub fn from_counts(window_s: f64, completions: &[u64], errors: &[u64]) -> Self {
        let windows = completions
            .iter()
            .enumerate()
            .map(|(i, &c)| Window {
                t: i as f64 * window_s,
                qps: c as f64 / window_s,
                errors: errors.get(i).copied().unwrap_or(0),
            })
            .collect();
        Self { window_s, windows }
    }

    /// Windows whose start lies in `[from_s, to_s)`.
    pub fn range(&self, from_s: f64, to_s: f64) -> impl Iterator<Item = &Window> {
        self.windows
            .iter()
            .filter(move |w| w.t >= from_s - 1e-9 && w.t < to_s - 1e-9)
    }

    pub fn mean_qps(&self, from_s: f64, to_s: f64) -> f64 {
        let (sum, n) = self
            .range(from_s, to_s)
            .fold((0.0, 0usize), |(s, n), w| (s + w.qps, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Coefficient of variation of window qps in `[from_s, to_s)`.
    pub fn cv(&self, from_s: f64, to_s: f64) -> f64 {
        let xs: Vec<f64> = self.range(from_s, to_s).map(|w| w.qps).collect();
        if xs.len() < 2 {
            return 0.0;
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        if mean == 0.0 {
            0.0
        } else {
            var.sqrt() / mean
        }
    }

    pub fn errors(&self, from_s: f64, to_s: f64) -> u64 {
        self.range(from_s, to_s).map(|w| w.errors).sum()
    }

    /// `t_seconds,qps,errors` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_seconds,qps,errors\n");
        for w in &self.windows {
            let _ = writeln!(out, "{},{:.3},{}", fmt_secs(w.t), w.qps, w.errors);
        }
        out
    }
}

fn fmt_secs(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Buckets completion and error timestamps (seconds) into windows covering
/// `[0, duration_s)`. Timestamps outside that span are ignored.
pub fn measure(
    completions: &[f64],
    errors: &[f64],
    window_s: f64,
    duration_s: f64,
) -> Result<ThroughputSeries, SimError> {
    if !(window_s > 0.0) || !(duration_s >= 0.0) {
        return Err(SimError::Config(
            "window and duration must be positive".into(),
        ));
    }
    let n = (duration_s / window_s).ceil() as usize;
    let bucket = |xs: &[f64]| {
        let mut counts = vec![0u64; n];
        for &t in xs {
            if t >= 0.0 && t < duration_s {
                counts[((t / window_s) as usize).min(n - 1)] += 1;
            }
        }
        counts
    };
    Ok(ThroughputSeries::from_counts(
        window_s,
        &bucket(completions),
        &bucket(errors),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Exp};

    #[test]
    fn constant_stream() {
        let times: Vec<f64> = (0..6000).map(|i| i as f64 / 100.0 + 0.001).collect();
        let s = measure(&times, &[], 5.0, 60.0).unwrap();
        assert_eq!(s.windows.len(), 12);
        assert!(s.windows.iter().all(|w| w.qps == 100.0 && w.errors == 0));
        assert!(s
            .to_csv()
            .starts_with("t_seconds,qps,errors\n0,100.000,0\n5,100.000,0\n"));
    }

    #[test]
    fn empty_stream() {
        let s = measure(&[], &[], 5.0, 20.0).unwrap();
        assert_eq!(s.windows.len(), 4);
        assert!(s.windows.iter().all(|w| w.qps == 0.0));
        assert!(measure(&[], &[], 0.0, 20.0).is_err());
    }

    #[test]
    fn poisson_stream_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let lambda = 250.0;
        let exp = Exp::new(lambda).unwrap();
        let mut t = 0.0;
        let mut times = Vec::new();
        while t < 400.0 {
            t += exp.sample(&mut rng);
            times.push(t);
        }
        let errs: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..400.0)).collect();
        let s = measure(&times, &errs, 5.0, 400.0).unwrap();
        // the mean of 80 windows has standard error sqrt(lambda / 5 / 80)
        let sigma = (lambda / 5.0 / 80.0).sqrt();
        assert!((s.mean_qps(0.0, 400.0) - lambda).abs() < 3.0 * sigma);
        assert_eq!(s.errors(0.0, 400.0), 10);
    }
}
