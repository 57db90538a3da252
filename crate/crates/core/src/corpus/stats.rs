use std::borrow::Borrow;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{stored_archive_len, CorpusError, VolumeRecord};

/// Five-number summary plus mean of compressed volume sizes, in KiB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl SizeStats {
    /// Quartiles interpolate linearly between the closest ranks: the `p`
    /// quantile of `n` sorted values sits at fractional index `(n - 1) * p`.
    pub fn from_sizes_kb<I: IntoIterator<Item = f64>>(sizes: I) -> Result<Self, CorpusError> {
        let mut v: Vec<f64> = sizes.into_iter().collect();
        if v.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        v.sort_by(f64::total_cmp);
        let quantile = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            min: v[0],
            q1: quantile(0.25),
            median: quantile(0.5),
            // clamp absorbs summation rounding
            mean: (v.iter().sum::<f64>() / v.len() as f64).clamp(v[0], v[v.len() - 1]),
            q3: quantile(0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn rows(&self) -> [(&'static str, f64); 6] {
        [
            ("min", self.min),
            ("q1", self.q1),
            ("median", self.median),
            ("mean", self.mean),
            ("q3", self.q3),
            ("max", self.max),
        ]
    }

    pub fn is_ordered(&self) -> bool {
        self.min <= self.q1
            && self.q1 <= self.median
            && self.median <= self.q3
            && self.q3 <= self.max
            && self.min <= self.mean
            && self.mean <= self.max
    }
}

/// Summarizes the stored zip size of each volume.
pub fn corpus_stats<I>(volumes: I) -> Result<SizeStats, CorpusError>
where
    I: IntoIterator,
    I::Item: Borrow<VolumeRecord>,
{
    SizeStats::from_sizes_kb(
        volumes
            .into_iter()
            .map(|v| stored_archive_len(v.borrow()) as f64 / 1024.0),
    )
}

/// Writes the `stat,kb` CSV.
pub fn write_stats_csv<W: Write>(stats: &SizeStats, out: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CorpusError::Io(e.into());
    w.write_record(["stat", "kb"]).map_err(io)?;
    for (name, kb) in stats.rows() {
        w.write_record([name, &format!("{kb:.3}")]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
