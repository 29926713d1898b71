//! Offline analysis of per-page profiles.

use crate::device::DevTiming;
use crate::sim::PageProfile;

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Correlations of per-page stall cycles with two predictors: the NVM read
/// latency implied by each page's read count and row-buffer outcomes, and
/// the same latency scaled by the page's read MLP ratio. Stores retire once
/// buffered, so writes are left out of both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorCorrelation {
    pub latency: f64,
    pub exposed_latency: f64,
    pub pages: usize,
}

pub fn predictor_correlation(profile: &[PageProfile], nvm: &DevTiming) -> Option<PredictorCorrelation> {
    let pages: Vec<&PageProfile> = profile.iter().filter(|p| p.accesses > 0).collect();
    let stall: Vec<f64> = pages.iter().map(|p| p.stall_cycles as f64).collect();
    let latency: Vec<f64> = pages
        .iter()
        .map(|p| p.latency(nvm).0)
        .collect();
    let exposed: Vec<f64> = pages.iter().map(|p| p.latency(nvm).0 * p.read_mlp_ratio()).collect();
    Some(PredictorCorrelation {
        latency: spearman(&stall, &latency)?,
        exposed_latency: spearman(&stall, &exposed)?,
        pages: pages.len(),
    })
}

/// Histogram of per-page read MLP ratios over `bins` equal-width bins of
/// (0, 1].
pub fn mlp_distribution(profile: &[PageProfile], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins.max(1)];
    for p in profile.iter().filter(|p| p.read_mlp_weight > 0) {
        let r = p.read_mlp_ratio().clamp(0.0, 1.0);
        let b = ((r * h.len() as f64).ceil() as usize).clamp(1, h.len()) - 1;
        h[b] += 1;
    }
    h
}
