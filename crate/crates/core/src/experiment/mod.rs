//! Synthetic convergence experiment with two Gaussian sources and a
//! Gaussian target, fitted by weighted least squares.

mod analysis;
mod report;
mod svg;

pub use analysis::{analyze_curve, CurveFindings, PairSummary};
pub use report::{bounds_csv, curve_csv, emit_bounds, emit_report, emit_tail_report, Format, ReportFiles};
pub use svg::{LinePlot, Series};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{synthesize_domain_with, BetaDraw, DomainDataset, DomainId, GaussianDomainSpec};
use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, LossFunction, LossKind};
use crate::risk::{combined_risk, solve_from_moments, LeastSquaresOptions, MixtureWeights, Moments};
use crate::rng::{derive_seed, rng_for, stream};

/// Input distribution of one domain; labels follow `y = <x, beta> + R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputShape {
    pub mean: f64,
    pub var: f64,
    pub noise_var: f64,
}

/// Whether `beta` is shared by every sample of a repeat or redrawn per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    SharedPerRepeat,
    PerSample,
}

/// Whether source data are redrawn at every size step or taken as
/// prefixes of one pool drawn per repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSampling {
    Redraw,
    FixedPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dim: usize,
    /// `N_T`, split into `target_fit` fitting samples and the rest held out.
    pub target_size: usize,
    pub target_fit: usize,
    pub target: InputShape,
    pub sources: Vec<InputShape>,
    pub source_initial: usize,
    pub source_max: usize,
    pub source_step: usize,
    pub repeats: usize,
    pub w_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub beta_mean: f64,
    pub beta_var: f64,
    pub beta_mode: BetaMode,
    pub source_sampling: SourceSampling,
    pub fit_intercept: bool,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ExperimentConfig {
    /// Full-scale protocol: 100 dimensions, 4000 target samples, sources
    /// growing from 200 to 2000 in steps of 200, 100 repeats.
    pub fn paper() -> Self {
        Self {
            dim: 100,
            target_size: 4000,
            target_fit: 100,
            target: InputShape {
                mean: 0.0,
                var: 1.0,
                noise_var: 0.5,
            },
            sources: vec![
                InputShape {
                    mean: 0.2,
                    var: 0.9,
                    noise_var: 0.5,
                },
                InputShape {
                    mean: -0.2,
                    var: 1.2,
                    noise_var: 0.5,
                },
            ],
            source_initial: 200,
            source_max: 2000,
            source_step: 200,
            repeats: 100,
            w_grid: vec![0.1, 0.25, 0.5, 0.8],
            tau_grid: vec![0.025, 0.3, 0.5, 0.8],
            beta_mean: 1.0,
            beta_var: 5.0,
            beta_mode: BetaMode::SharedPerRepeat,
            source_sampling: SourceSampling::Redraw,
            fit_intercept: false,
            ridge: 1e-10,
            seed: 0,
        }
    }

    /// Reduced protocol: 20 dimensions, 1000 target samples, sources from
    /// 200 to 800, 20 repeats.
    pub fn desk() -> Self {
        Self {
            dim: 20,
            target_size: 1000,
            source_max: 800,
            repeats: 20,
            ..Self::paper()
        }
    }

    pub fn target_holdout(&self) -> usize {
        self.target_size.saturating_sub(self.target_fit)
    }

    /// Per-source sample sizes at every step.
    pub fn steps(&self) -> Vec<usize> {
        (0..)
            .map(|i| self.source_initial + i * self.source_step)
            .take_while(|n| *n <= self.source_max)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if self.target_fit == 0 || self.target_fit >= self.target_size {
            return Err(Error::invalid(format!(
                "need 0 < N'_T < N_T, got N'_T = {} and N_T = {}",
                self.target_fit, self.target_size
            )));
        }
        if self.sources.len() != 2 {
            return Err(Error::invalid("the experiment uses exactly two sources with weights (w, 1 - w)"));
        }
        if self.source_initial == 0 || self.source_step == 0 || self.source_max < self.source_initial {
            return Err(Error::invalid("need 0 < source_initial <= source_max and source_step > 0"));
        }
        if (self.source_max - self.source_initial) % self.source_step != 0 {
            return Err(Error::invalid("source_step must divide source_max - source_initial"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.w_grid.is_empty() || self.tau_grid.is_empty() {
            return Err(Error::invalid("w and tau grids must be nonempty"));
        }
        for &w in &self.w_grid {
            MixtureWeights::two_source(0.0, w)?;
        }
        for &t in &self.tau_grid {
            MixtureWeights::two_source(t, 0.5)?;
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be finite and nonnegative"));
        }
        for shape in std::iter::once(&self.target).chain(&self.sources) {
            self.spec(shape).validate()?;
        }
        Ok(())
    }

    fn spec(&self, shape: &InputShape) -> GaussianDomainSpec {
        GaussianDomainSpec {
            input_mean: shape.mean,
            input_var: shape.var,
            dim: self.dim,
            beta_mean: self.beta_mean,
            beta_var: self.beta_var,
            noise_mean: 0.0,
            noise_var: shape.noise_var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n_total: usize,
    pub w: f64,
    pub tau: f64,
    pub mean_discrepancy: f64,
    pub std_discrepancy: f64,
    pub repeats: usize,
}

/// `|E^tau_w f - E^(T)_{N''_T} f|` averaged over repeats, ordered by
/// `w`, then `tau`, then source total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub target_fit: usize,
    pub w_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub n_totals: Vec<usize>,
    pub rows: Vec<CurveRow>,
}

impl ConvergenceCurve {
    pub fn row(&self, w: usize, tau: usize, step: usize) -> &CurveRow {
        let steps = self.n_totals.len();
        &self.rows[(w * self.tau_grid.len() + tau) * steps + step]
    }

    pub fn is_complete(&self) -> bool {
        let steps = self.n_totals.len();
        if self.rows.len() != self.w_grid.len() * self.tau_grid.len() * steps || steps == 0 {
            return false;
        }
        for (i, w) in self.w_grid.iter().enumerate() {
            for (j, t) in self.tau_grid.iter().enumerate() {
                for (s, n) in self.n_totals.iter().enumerate() {
                    let r = self.row(i, j, s);
                    if r.w != *w || r.tau != *t || r.n_total != *n || !r.mean_discrepancy.is_finite() {
                        return false;
                    }
                }
            }
        }
        true
    }
}

struct RepeatData {
    fit: DomainDataset,
    holdout: DomainDataset,
    sources: Vec<DomainDataset>,
}

fn draw_repeat(cfg: &ExperimentConfig, step: usize, n_source: usize, repeat: usize) -> Result<RepeatData> {
    let beta = match cfg.beta_mode {
        BetaMode::SharedPerRepeat => {
            let mut rng = rng_for(cfg.seed, &[stream::BETA, repeat as u64]);
            BetaDraw::Fixed(cfg.spec(&cfg.target).draw_beta(&mut rng))
        }
        BetaMode::PerSample => BetaDraw::PerSample,
    };
    let repeat_seed = derive_seed(cfg.seed, &[stream::DATA, repeat as u64]);
    let target = synthesize_domain_with(&cfg.spec(&cfg.target), DomainId::Target, cfg.target_size, repeat_seed, &beta)?;
    let (fit, holdout) = target.split_at(cfg.target_fit);
    let mut sources = Vec::with_capacity(cfg.sources.len());
    for (k, shape) in cfg.sources.iter().enumerate() {
        let id = DomainId::Source(k);
        let d = match cfg.source_sampling {
            SourceSampling::Redraw => {
                let seed = derive_seed(cfg.seed, &[stream::DATA, repeat as u64, step as u64 + 1]);
                synthesize_domain_with(&cfg.spec(shape), id, n_source, seed, &beta)?
            }
            SourceSampling::FixedPool => {
                synthesize_domain_with(&cfg.spec(shape), id, cfg.source_max, repeat_seed, &beta)?.head(n_source)
            }
        };
        sources.push(d);
    }
    Ok(RepeatData { fit, holdout, sources })
}

fn losses(h: &Hypothesis, loss: &LossFunction, d: &DomainDataset) -> Result<Vec<f64>> {
    d.samples().iter().map(|z| loss.at(h, z)).collect()
}

/// Discrepancies of one repeat at one step for every `(w, tau)`, `w` major.
fn repeat_discrepancies(cfg: &ExperimentConfig, data: &RepeatData) -> Result<Vec<f64>> {
    let opts = LeastSquaresOptions {
        ridge: cfg.ridge,
        fit_intercept: cfg.fit_intercept,
    };
    let loss = LossFunction::unclamped(LossKind::Squared);
    let target_m = Moments::of(&data.fit, cfg.fit_intercept)?;
    let source_m = data
        .sources
        .iter()
        .map(|d| Moments::of(d, cfg.fit_intercept))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(cfg.w_grid.len() * cfg.tau_grid.len());
    for &w in &cfg.w_grid {
        for &tau in &cfg.tau_grid {
            let weights = MixtureWeights::two_source(tau, w)?;
            let h: Hypothesis = solve_from_moments(&target_m, &source_m, &weights, &opts)?.into();
            let fit_losses = losses(&h, &loss, &data.fit)?;
            let src_losses = data
                .sources
                .iter()
                .map(|d| losses(&h, &loss, d))
                .collect::<Result<Vec<_>>>()?;
            let combined = combined_risk(&fit_losses, &src_losses, &weights)?.combined;
            let held = crate::linalg::mean(&losses(&h, &loss, &data.holdout)?);
            out.push((combined - held).abs());
        }
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = crate::linalg::mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (m, (ss / (values.len() - 1) as f64).sqrt())
}

/// Runs every `(step, repeat)` cell in parallel; every `(w, tau)` of a cell
/// is fitted on the same data. Output is independent of the thread count.
pub fn run_convergence_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceCurve> {
    cfg.validate()?;
    let steps = cfg.steps();
    let cells: Vec<(usize, usize)> = (0..steps.len())
        .flat_map(|s| (0..cfg.repeats).map(move |r| (s, r)))
        .collect();
    let results: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(s, r)| {
            let data = draw_repeat(cfg, s, steps[s], r)?;
            repeat_discrepancies(cfg, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_totals: Vec<usize> = steps.iter().map(|n| n * cfg.sources.len()).collect();
    let mut rows = Vec::with_capacity(cfg.w_grid.len() * cfg.tau_grid.len() * steps.len());
    let per_grid = cfg.tau_grid.len();
    for (i, &w) in cfg.w_grid.iter().enumerate() {
        for (j, &tau) in cfg.tau_grid.iter().enumerate() {
            for (s, &n_total) in n_totals.iter().enumerate() {
                let vals: Vec<f64> = (0..cfg.repeats)
                    .map(|r| results[s * cfg.repeats + r][i * per_grid + j])
                    .collect();
                let (mean, std) = mean_std(&vals);
                rows.push(CurveRow {
                    n_total,
                    w,
                    tau,
                    mean_discrepancy: mean,
                    std_discrepancy: std,
                    repeats: cfg.repeats,
                });
            }
        }
    }
    Ok(ConvergenceCurve {
        target_fit: cfg.target_fit,
        w_grid: cfg.w_grid.clone(),
        tau_grid: cfg.tau_grid.clone(),
        n_totals,
        rows,
    })
}
