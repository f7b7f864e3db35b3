use serde::{Deserialize, Serialize};

use super::ConvergenceCurve;
use crate::error::{Error, Result};

/// First and last step of one `(w, tau)` curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub w: f64,
    pub tau: f64,
    pub first: f64,
    pub last: f64,
    /// `(first - last) / first`.
    pub relative_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFindings {
    pub pairs: Vec<PairSummary>,
    /// Per `w`, the `tau` grid sorted by final discrepancy (best first).
    pub tau_ranking: Vec<(f64, Vec<f64>)>,
    /// Per `tau`, the `w` grid sorted by final discrepancy (best first).
    pub w_ranking: Vec<(f64, Vec<f64>)>,
    /// Every `tau < 0.5` curve ends at or below `decrease_ratio` times its start.
    pub small_tau_decreasing: bool,
    /// For every `w` the largest `tau` ends above the smallest `tau`.
    pub large_tau_fails: bool,
    /// `N'_T / (N_1 + N_2 + N'_T)` at the final step.
    pub tau_reference: f64,
    pub nearest_tau: f64,
    /// For every `w` the grid `tau` nearest `tau_reference` ends lowest.
    pub nearest_tau_best: bool,
    /// For every `tau < 0.5` the grid `w` nearest 0.5 ends lowest.
    pub half_w_best: bool,
    pub decrease_ratio: f64,
}

impl CurveFindings {
    pub fn all_consistent(&self) -> bool {
        self.small_tau_decreasing && self.large_tau_fails && self.nearest_tau_best && self.half_w_best
    }
}

fn nearest(grid: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - x).abs() < (grid[best] - x).abs() {
            best = i;
        }
    }
    best
}

fn ranking(grid: &[f64], finals: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    idx.sort_by(|a, b| finals(*a).total_cmp(&finals(*b)).then(a.cmp(b)));
    idx.into_iter().map(|i| grid[i]).collect()
}

/// Checks a finished curve against the qualitative findings of the
/// experiment, with `decrease_ratio` the required `last / first` ceiling for
/// small `tau`.
pub fn analyze_curve(curve: &ConvergenceCurve, decrease_ratio: f64) -> Result<CurveFindings> {
    if !curve.is_complete() {
        return Err(Error::invalid("convergence curve is incomplete"));
    }
    let last = curve.n_totals.len() - 1;
    let (nw, nt) = (curve.w_grid.len(), curve.tau_grid.len());
    let fin = |i: usize, j: usize| curve.row(i, j, last).mean_discrepancy;

    let mut pairs = Vec::with_capacity(nw * nt);
    for i in 0..nw {
        for j in 0..nt {
            let first = curve.row(i, j, 0).mean_discrepancy;
            let l = fin(i, j);
            pairs.push(PairSummary {
                w: curve.w_grid[i],
                tau: curve.tau_grid[j],
                first,
                last: l,
                relative_decrease: if first > 0.0 { (first - l) / first } else { 0.0 },
            });
        }
    }
    let small_tau_decreasing = pairs
        .iter()
        .filter(|p| p.tau < 0.5)
        .all(|p| p.first > 0.0 && p.last <= decrease_ratio * p.first);

    let by_tau: Vec<usize> = {
        let mut idx: Vec<usize> = (0..nt).collect();
        idx.sort_by(|a, b| curve.tau_grid[*a].total_cmp(&curve.tau_grid[*b]));
        idx
    };
    let (j_lo, j_hi) = (by_tau[0], by_tau[nt - 1]);
    let large_tau_fails = curve.tau_grid[j_hi] > 0.5 && (0..nw).all(|i| fin(i, j_hi) > fin(i, j_lo));

    let n_total = curve.n_totals[last] as f64;
    let tau_reference = curve.target_fit as f64 / (n_total + curve.target_fit as f64);
    let j_ref = nearest(&curve.tau_grid, tau_reference);
    let nearest_tau_best = (0..nw).all(|i| (0..nt).all(|j| fin(i, j_ref) <= fin(i, j)));

    let i_half = nearest(&curve.w_grid, 0.5);
    let half_w_best = (0..nt)
        .filter(|&j| curve.tau_grid[j] < 0.5)
        .all(|j| (0..nw).all(|i| fin(i_half, j) <= fin(i, j)));

    let tau_ranking = (0..nw)
        .map(|i| (curve.w_grid[i], ranking(&curve.tau_grid, |j| fin(i, j))))
        .collect();
    let w_ranking = (0..nt)
        .map(|j| (curve.tau_grid[j], ranking(&curve.w_grid, |i| fin(i, j))))
        .collect();

    Ok(CurveFindings {
        pairs,
        tau_ranking,
        w_ranking,
        small_tau_decreasing,
        large_tau_fails,
        tau_reference,
        nearest_tau: curve.tau_grid[j_ref],
        nearest_tau_best,
        half_w_best,
        decrease_ratio,
    })
}
