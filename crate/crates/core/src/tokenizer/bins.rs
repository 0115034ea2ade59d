//! Per-channel scalar quantization with equal-mass bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bins for one scalar channel. `edges[i]` is the lower bound of bin `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBins {
    pub edges: Vec<f64>,
    pub centroids: Vec<f64>,
    /// Largest distance from a centroid to any point of its bin's covered range.
    pub max_spread: f64,
}

impl ChannelBins {
    /// Equal-mass bins over `values`; fewer than `bins` when values repeat.
    pub fn fit(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 {
            return Err(Error::InsufficientData("binning needs at least one value and one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("binning input".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut edges: Vec<f64> = Vec::with_capacity(bins.saturating_sub(1));
        for i in 1..bins {
            let e = sorted[i * n / bins];
            if e > sorted[0] && edges.last().is_none_or(|l| e > *l) {
                edges.push(e);
            }
        }
        let mut centroids = Vec::with_capacity(edges.len() + 1);
        let mut max_spread: f64 = 0.0;
        let mut start = 0;
        for b in 0..=edges.len() {
            let end = if b < edges.len() { sorted.partition_point(|v| *v < edges[b]) } else { n };
            let members = &sorted[start..end];
            let c = members.iter().sum::<f64>() / members.len() as f64;
            let lo = if b == 0 { sorted[0] } else { edges[b - 1] };
            let hi = if b < edges.len() { edges[b] } else { sorted[n - 1] };
            max_spread = max_spread.max((c - lo).max(hi - c));
            centroids.push(c);
            start = end;
        }
        Ok(ChannelBins { edges, centroids, max_spread })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Bin index; values beyond the outer edges clamp to the boundary bins.
    pub fn quantize(&self, v: f64) -> usize {
        self.edges.partition_point(|e| *e <= v)
    }

    /// Centroid of `bin`, clamped to the effective bin count.
    pub fn dequantize(&self, bin: usize) -> f64 {
        self.centroids[bin.min(self.centroids.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Std,
}

/// μ and σ bins for every root channel, addressed by composite ids
/// `channel * bins + bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinQuantizer {
    pub bins: usize,
    pub mean: Vec<ChannelBins>,
    pub std: Vec<ChannelBins>,
}

impl BinQuantizer {
    /// Fits from per-window statistics, one row per window.
    pub fn fit<const C: usize>(means: &[[f64; C]], stds: &[[f64; C]], bins: usize) -> Result<Self> {
        let column = |rows: &[[f64; C]], c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
        let mean = (0..C).map(|c| ChannelBins::fit(&column(means, c), bins)).collect::<Result<Vec<_>>>()?;
        let std = (0..C).map(|c| ChannelBins::fit(&column(stds, c), bins)).collect::<Result<Vec<_>>>()?;
        Ok(BinQuantizer { bins, mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Size of the composite vocabulary of one statistic.
    pub fn vocab_size(&self) -> usize {
        self.channels() * self.bins
    }

    fn table(&self, stat: Stat) -> &[ChannelBins] {
        match stat {
            Stat::Mean => &self.mean,
            Stat::Std => &self.std,
        }
    }

    pub fn quantize_stat(&self, stat: Stat, channel: usize, v: f64) -> usize {
        self.table(stat)[channel].quantize(v)
    }

    pub fn dequantize_stat(&self, stat: Stat, channel: usize, bin: usize) -> f64 {
        self.table(stat)[channel].dequantize(bin)
    }

    pub fn composite(&self, channel: usize, bin: usize) -> usize {
        channel * self.bins + bin
    }

    /// Splits a composite id into (channel, bin).
    pub fn split(&self, id: usize) -> Result<(usize, usize)> {
        if id >= self.vocab_size() {
            return Err(Error::InvalidToken { id, vocab: self.vocab_size() });
        }
        Ok((id / self.bins, id % self.bins))
    }
}
