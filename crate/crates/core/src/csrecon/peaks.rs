//! Peak tables from gridded estimates.

use serde::{Deserialize, Serialize};

use crate::spectra::FrequencyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    /// Points at or below `threshold · max` are ignored.
    pub threshold: f64,
    /// Points whose indices differ by at most this much share a cluster.
    pub max_step: usize,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            max_step: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// Amplitude-weighted mean frequency of the cluster.
    pub center: f64,
    /// `Σ S*_i·Δω` over the cluster.
    pub mass: f64,
    pub height: f64,
    pub first: usize,
    pub last: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    /// Sorted by center.
    pub peaks: Vec<PeakEstimate>,
    /// False when fewer clusters than requested were found.
    pub complete: bool,
}

impl PeakTable {
    pub fn centers(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.center).collect()
    }
}

/// Clusters above-threshold points and keeps the `top` heaviest clusters.
pub fn extract_peaks(
    grid: &FrequencyGrid,
    values: &[f64],
    top: usize,
    options: PeakOptions,
) -> PeakTable {
    assert_eq!(values.len(), grid.len(), "estimate must match grid");
    let max = values.iter().copied().fold(0.0, f64::max);
    let cut = options.threshold * max;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v <= cut || v <= 0.0 {
            continue;
        }
        match clusters.last_mut() {
            Some(c) if i - c[c.len() - 1] <= options.max_step => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    let h = grid.spacing();
    let mut peaks: Vec<PeakEstimate> = clusters
        .iter()
        .map(|c| {
            let weight: f64 = c.iter().map(|&i| values[i]).sum();
            let center = c.iter().map(|&i| values[i] * grid.point(i)).sum::<f64>() / weight;
            PeakEstimate {
                center,
                mass: weight * h,
                height: c.iter().map(|&i| values[i]).fold(0.0, f64::max),
                first: c[0],
                last: c[c.len() - 1],
            }
        })
        .collect();
    peaks.sort_by(|a, b| {
        b.mass
            .total_cmp(&a.mass)
            .then(a.center.total_cmp(&b.center))
    });
    let complete = peaks.len() >= top;
    peaks.truncate(top);
    peaks.sort_by(|a, b| a.center.total_cmp(&b.center));
    PeakTable { peaks, complete }
}

/// `|ω̂* - ω̂_th|_∞` after pairing sorted centers. When peaks have merged
/// (fewer estimates than true centers) each true center is scored against
/// its nearest estimate; with no estimates the error is infinite.
pub fn linf_center_error(estimated: &[f64], truth: &[f64]) -> f64 {
    if estimated.is_empty() && !truth.is_empty() {
        return f64::INFINITY;
    }
    if estimated.len() < truth.len() {
        return truth
            .iter()
            .map(|t| {
                estimated
                    .iter()
                    .map(|e| (e - t).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
    }
    let mut e = estimated.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter()
        .zip(&t)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin() {
        let g = FrequencyGrid::new(10, 10.0).unwrap();
        let mut v = vec![0.0; 10];
        v[4] = 0.7;
        let t = extract_peaks(&g, &v, 1, PeakOptions::default());
        assert_eq!(t.peaks[0].center, g.point(4));
        assert!(t.complete);
    }

    #[test]
    fn adjacent_bins_give_midpoint() {
        let g = FrequencyGrid::new(10, 10.0).unwrap();
        let mut v = vec![0.0; 10];
        v[4] = 1.0;
        v[5] = 1.0;
        let t = extract_peaks(&g, &v, 1, PeakOptions::default());
        assert_eq!(t.peaks.len(), 1);
        assert_eq!(t.peaks[0].center, 0.5 * (g.point(4) + g.point(5)));
    }

    #[test]
    fn keeps_heaviest_and_flags_shortfall() {
        let g = FrequencyGrid::new(20, 20.0).unwrap();
        let mut v = vec![0.0; 20];
        v[2] = 0.1;
        v[8] = 1.0;
        v[15] = 0.5;
        let t = extract_peaks(&g, &v, 2, PeakOptions::default());
        assert_eq!(t.centers(), vec![g.point(8), g.point(15)]);
        let t = extract_peaks(&g, &v, 4, PeakOptions::default());
        assert_eq!(t.peaks.len(), 3);
        assert!(!t.complete);
        let t = extract_peaks(
            &g,
            &v,
            4,
            PeakOptions {
                threshold: 0.2,
                max_step: 1,
            },
        );
        assert_eq!(t.peaks.len(), 2);
    }

    #[test]
    fn linf_pairs_sorted() {
        assert_eq!(linf_center_error(&[3.0, 1.0], &[1.1, 2.5]), 0.5);
        assert_eq!(linf_center_error(&[1.2], &[1.0, 2.0]), 0.8);
        assert!(linf_center_error(&[], &[1.0]).is_infinite());
    }
}
