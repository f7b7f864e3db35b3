//! Multi-domain deviation inequalities and Monte Carlo checks of them.
//!
//! Statistics are linear in per-domain sums of a bounded function, so their
//! exact expectations come from per-atom means of discrete domains.

use std::io::Write;
use std::path::Path;

use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{gamma_fn, variance_factor, weighted_condition};
use crate::divergence::{weighted_ipm, Dist};
use crate::domain::{atom_sampler, DiscreteDomainSpec};
use crate::error::{Error, Result};
use crate::hypothesis::{FiniteHypothesisClass, Hypothesis, LossFunction, LossRange};
use crate::risk::{MixtureWeights, SampleSizes};
use crate::rng::{blocks, rng_for, stream, SimRng};

/// Two-sided standard normal quantile for 99% intervals.
pub const Z99: f64 = 2.5758293035489;
/// Largest number of sources for the scaled statistic.
pub const MAX_SOURCES: usize = 3;
/// Largest per-domain sample size for the scaled statistic.
pub const MAX_DOMAIN_SIZE: usize = 8;

const TRIAL_BLOCK: usize = 1024;

fn check_sizes(sizes: &SampleSizes, weights: Option<&MixtureWeights>) -> Result<()> {
    if sizes.target == 0 || sizes.sources.is_empty() || sizes.sources.contains(&0) {
        return Err(Error::invalid("need N_T >= 1, K >= 1 and every N_k >= 1"));
    }
    if let Some(w) = weights {
        if w.num_sources() != sizes.num_sources() {
            return Err(Error::CountMismatch {
                what: "source weights",
                expected: sizes.num_sources(),
                found: w.num_sources(),
            });
        }
    }
    Ok(())
}

/// Per-domain multipliers of `F`: `tau prod N_k` on the target and
/// `(1 - tau) N_T w_k prod_{i != k} N_i` on source `k`.
pub fn f_statistic_coefficients(sizes: &SampleSizes, weights: &MixtureWeights) -> Result<Vec<f64>> {
    check_sizes(sizes, Some(weights))?;
    let tau = weights.tau();
    let mut out = vec![tau * sizes.source_product()];
    for (k, w) in weights.w().iter().enumerate() {
        out.push((1.0 - tau) * sizes.target as f64 * w * sizes.product_except(k));
    }
    Ok(out)
}

/// `F = tau (prod N_k) sum_T f + (1 - tau) N_T sum_k w_k (prod_{i != k} N_i) sum_k f`.
pub fn f_statistic<S: AsRef<[f64]>>(target: &[f64], sources: &[S], weights: &MixtureWeights) -> Result<f64> {
    let sizes = SampleSizes::new(target.len(), sources.iter().map(|s| s.as_ref().len()).collect())?;
    let coeffs = f_statistic_coefficients(&sizes, weights)?;
    let mut total = coeffs[0] * target.iter().sum::<f64>();
    for (c, s) in coeffs[1..].iter().zip(sources) {
        total += c * s.as_ref().iter().sum::<f64>();
    }
    Ok(total)
}

/// `F / (N_T prod N_k)`, which is the combined empirical risk.
///
/// A convenience rescaling; the inequalities below are stated for `F`.
pub fn f_statistic_normalized<S: AsRef<[f64]>>(target: &[f64], sources: &[S], weights: &MixtureWeights) -> Result<f64> {
    let total = f_statistic(target, sources, weights)?;
    let scale = target.len() as f64 * sources.iter().map(|s| s.as_ref().len() as f64).product::<f64>();
    Ok(total / scale)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Hoeffding-type bound on `Pr{|E F - F| > xi}`:
/// `2 exp(-2 xi^2 / (N_T (b-a)^2 prod N (tau^2 prod N + sum (1-tau)^2 N_T w_k^2 prod_{i != k} N_i)))`.
///
/// Unclamped; can reach 2.
pub fn hoeffding_dev_bound(sizes: &SampleSizes, weights: &MixtureWeights, range: LossRange, xi: f64) -> Result<f64> {
    check_sizes(sizes, Some(weights))?;
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("xi must be positive, got {xi}")));
    }
    let ln_n: Vec<f64> = sizes.sources.iter().map(|&n| (n as f64).ln()).collect();
    let ln_prod: f64 = ln_n.iter().sum();
    let ln_nt = (sizes.target as f64).ln();
    let tau = weights.tau();
    let mut inner = Vec::with_capacity(ln_n.len() + 1);
    if tau > 0.0 {
        inner.push(2.0 * tau.ln() + ln_prod);
    }
    for (k, &w) in weights.w().iter().enumerate() {
        if w > 0.0 {
            inner.push(2.0 * (1.0 - tau).ln() + ln_nt + 2.0 * w.ln() + ln_prod - ln_n[k]);
        }
    }
    let ln_denom = ln_nt + 2.0 * range.width().ln() + ln_prod + log_sum_exp(&inner);
    Ok((2f64.ln() - 2.0 * (2.0 * xi.ln() - ln_denom).exp()).exp())
}

/// [`hoeffding_dev_bound`] for the normalized statistic, i.e. at `xi (N_T prod N)`.
pub fn normalized_hoeffding_dev_bound(sizes: &SampleSizes, weights: &MixtureWeights, range: LossRange, xi: f64) -> Result<f64> {
    hoeffding_dev_bound(sizes, weights, range, xi * sizes.target as f64 * sizes.source_product())
}

/// Bennett-type bound at the optimal weights:
/// `2 exp(N_total Gamma(xi / (N_T prod N (b-a))))`. Unclamped.
pub fn bennett_dev_bound(sizes: &SampleSizes, range: LossRange, xi: f64) -> Result<f64> {
    check_sizes(sizes, None)?;
    if !(xi > 0.0) {
        return Err(Error::invalid(format!("xi must be positive, got {xi}")));
    }
    let scale = sizes.target as f64 * sizes.source_product() * range.width();
    Ok((2f64.ln() + sizes.total() as f64 * gamma_fn(xi / scale)?).exp())
}

/// One-sided McDiarmid bounds on `Pr{H - E H >= xi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McDiarmidBound {
    /// `exp(-2 xi^2 / sum sum c^2)`.
    pub quadratic: f64,
    /// `exp(N Gamma(xi / (c N)))`, present only when all differences equal `c`.
    pub bennett: Option<f64>,
}

pub fn mcdiarmid_bound<S: AsRef<[f64]>>(c_table: &[S], xi: f64) -> Result<McDiarmidBound> {
    let all: Vec<f64> = c_table.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::invalid("bounded-difference table is empty"));
    }
    if let Some(c) = all.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
        return Err(Error::invalid(format!("bounded differences must be positive, got {c}")));
    }
    if !(xi >= 0.0) {
        return Err(Error::invalid(format!("xi must be nonnegative, got {xi}")));
    }
    let sum_sq: f64 = all.iter().map(|c| c * c).sum();
    let quadratic = (-2.0 * xi * xi / sum_sq).exp();
    let c0 = all[0];
    let equal = all.iter().all(|c| (c - c0).abs() <= 1e-12 * c0.abs().max(1.0));
    let bennett = if equal {
        let n = all.len() as f64;
        Some((n * gamma_fn(xi / (c0 * n))?).exp())
    } else {
        None
    };
    Ok(McDiarmidBound { quadratic, bennett })
}

/// Bounded differences of `F`: target row then one row per source.
pub fn f_statistic_differences(sizes: &SampleSizes, weights: &MixtureWeights, range: LossRange) -> Result<Vec<Vec<f64>>> {
    let coeffs = f_statistic_coefficients(sizes, weights)?;
    let mut counts = vec![sizes.target];
    counts.extend(&sizes.sources);
    Ok(coeffs
        .iter()
        .zip(counts)
        .map(|(c, n)| vec![c * range.width(); n])
        .collect())
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TailStatistic {
    /// The scaled statistic `F` of one bounded function.
    FStatistic { hypothesis: Hypothesis, loss: LossFunction },
    /// `sum_d c_d sum_n f(z_n^(d))` with coefficients target first.
    CustomBoundedDifference {
        hypothesis: Hypothesis,
        loss: LossFunction,
        coefficients: Vec<f64>,
    },
    /// `sup_f |E^(T) f - E^tau_w f|` over a finite class.
    SupDeviation { class: FiniteHypothesisClass },
}

/// Which tail is counted: `|D| > xi` or `D >= xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    TwoSided,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailExperiment {
    pub statistic: TailStatistic,
    pub target: DiscreteDomainSpec,
    pub sources: Vec<DiscreteDomainSpec>,
    pub sizes: SampleSizes,
    pub weights: MixtureWeights,
    pub thresholds: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub xi: f64,
    pub empirical_p: f64,
    pub wilson99: f64,
    /// Clamped to `[0, 1]`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub trials: usize,
    pub rows: Vec<TailRow>,
}

impl TailReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(["xi", "empirical_p", "wilson99", "bound", "pass"])?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Value of a function at every atom of every domain, target first.
fn atom_values(
    h: &Hypothesis,
    loss: &LossFunction,
    target: &DiscreteDomainSpec,
    sources: &[DiscreteDomainSpec],
) -> Result<Vec<Vec<f64>>> {
    std::iter::once(target)
        .chain(sources)
        .map(|d| d.atoms().iter().map(|a| loss.at(h, &a.sample)).collect())
        .collect()
}

fn domain_mean(values: &[f64], spec: &DiscreteDomainSpec) -> f64 {
    values.iter().zip(spec.atoms()).map(|(v, a)| v * a.prob).sum()
}

fn bounded_range(loss: &LossFunction) -> Result<LossRange> {
    loss.clamp
        .ok_or_else(|| Error::invalid("deviation statistics need a clamped loss with a known range"))
}

struct Frame<'a> {
    specs: Vec<&'a DiscreteDomainSpec>,
    counts: Vec<usize>,
}

impl<'a> Frame<'a> {
    fn new(target: &'a DiscreteDomainSpec, sources: &'a [DiscreteDomainSpec], sizes: &SampleSizes) -> Result<Self> {
        if sources.len() != sizes.num_sources() {
            return Err(Error::CountMismatch {
                what: "source domains",
                expected: sizes.num_sources(),
                found: sources.len(),
            });
        }
        check_sizes(sizes, None)?;
        let mut counts = vec![sizes.target];
        counts.extend(&sizes.sources);
        Ok(Self {
            specs: std::iter::once(target).chain(sources).collect(),
            counts,
        })
    }

    /// Atom histograms for one draw of every domain.
    fn draw(&self, samplers: &[rand::distr::weighted::WeightedIndex<f64>], rng: &mut SimRng) -> Vec<Vec<u32>> {
        self.specs
            .iter()
            .zip(&self.counts)
            .zip(samplers)
            .map(|((spec, &n), s)| {
                let mut hist = vec![0u32; spec.len()];
                for _ in 0..n {
                    hist[s.sample(rng)] += 1;
                }
                hist
            })
            .collect()
    }

    fn samplers(&self) -> Vec<rand::distr::weighted::WeightedIndex<f64>> {
        self.specs.iter().map(|s| atom_sampler(&s.probs())).collect()
    }
}

fn hist_sum(hist: &[u32], values: &[f64]) -> f64 {
    hist.iter().zip(values).map(|(&c, v)| c as f64 * v).sum()
}

/// Runs `trials` draws in fixed blocks and returns one value per trial in trial order.
fn run_trials<F>(trials: usize, seed: u64, tag: u64, trial: F) -> Vec<Vec<f64>>
where
    F: Fn(&mut SimRng) -> Vec<f64> + Sync,
{
    let parts: Vec<Vec<Vec<f64>>> = blocks(trials, TRIAL_BLOCK)
        .into_par_iter()
        .map(|(b, _, len)| {
            let mut rng = rng_for(seed, &[stream::TAIL, tag, b]);
            (0..len).map(|_| trial(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

impl TailExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::invalid(format!("need at least 100 trials, got {}", self.trials)));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("thresholds must be positive and finite"));
        }
        if self.thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("thresholds must be sorted ascending"));
        }
        check_sizes(&self.sizes, Some(&self.weights))?;
        if self.sources.len() != self.sizes.num_sources() {
            return Err(Error::CountMismatch {
                what: "source domains",
                expected: self.sizes.num_sources(),
                found: self.sources.len(),
            });
        }
        let dim = self.target.dim();
        if self.sources.iter().any(|s| s.dim() != dim) {
            return Err(Error::invalid("all domains must share the input dimension"));
        }
        match &self.statistic {
            TailStatistic::FStatistic { loss, .. } => {
                bounded_range(loss)?;
                let too_big = self.sizes.num_sources() > MAX_SOURCES
                    || self.sizes.target > MAX_DOMAIN_SIZE
                    || self.sizes.sources.iter().any(|&n| n > MAX_DOMAIN_SIZE);
                if too_big {
                    return Err(Error::Capacity(format!(
                        "the scaled statistic is limited to K <= {MAX_SOURCES} and N <= {MAX_DOMAIN_SIZE}; use a smaller instance"
                    )));
                }
            }
            TailStatistic::CustomBoundedDifference { loss, coefficients, .. } => {
                bounded_range(loss)?;
                if coefficients.len() != self.sizes.num_sources() + 1 {
                    return Err(Error::CountMismatch {
                        what: "statistic coefficients",
                        expected: self.sizes.num_sources() + 1,
                        found: coefficients.len(),
                    });
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("statistic coefficients must be finite"));
                }
            }
            TailStatistic::SupDeviation { class } => {
                bounded_range(class.loss())?;
            }
        }
        Ok(())
    }

    /// Bounded differences `c` of the statistic; `None` for the sup deviation.
    pub fn differences(&self) -> Result<Option<Vec<Vec<f64>>>> {
        match &self.statistic {
            TailStatistic::FStatistic { loss, .. } => {
                Ok(Some(f_statistic_differences(&self.sizes, &self.weights, bounded_range(loss)?)?))
            }
            TailStatistic::CustomBoundedDifference {
                loss, coefficients, ..
            } => {
                let width = bounded_range(loss)?.width();
                let mut counts = vec![self.sizes.target];
                counts.extend(&self.sizes.sources);
                Ok(Some(
                    coefficients
                        .iter()
                        .zip(counts)
                        .map(|(c, n)| vec![c.abs() * width; n])
                        .collect(),
                ))
            }
            TailStatistic::SupDeviation { .. } => Ok(None),
        }
    }

    fn coefficients(&self) -> Result<Vec<f64>> {
        match &self.statistic {
            TailStatistic::FStatistic { .. } => f_statistic_coefficients(&self.sizes, &self.weights),
            TailStatistic::CustomBoundedDifference { coefficients, .. } => Ok(coefficients.clone()),
            TailStatistic::SupDeviation { .. } => Err(Error::invalid("sup deviation has no coefficients")),
        }
    }

    /// Signed deviation `statistic - E statistic` for each trial, in order.
    pub fn deviations(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let frame = Frame::new(&self.target, &self.sources, &self.sizes)?;
        let samplers = frame.samplers();
        let out = match &self.statistic {
            TailStatistic::FStatistic { hypothesis, loss }
            | TailStatistic::CustomBoundedDifference { hypothesis, loss, .. } => {
                let vals = atom_values(hypothesis, loss, &self.target, &self.sources)?;
                let coeffs = self.coefficients()?;
                let expected: f64 = coeffs
                    .iter()
                    .zip(&vals)
                    .zip(&frame.specs)
                    .zip(&frame.counts)
                    .map(|(((c, v), s), &n)| c * n as f64 * domain_mean(v, s))
                    .sum();
                run_trials(self.trials, self.seed, 0, |rng| {
                    let hists = frame.draw(&samplers, rng);
                    let value: f64 = coeffs
                        .iter()
                        .zip(&hists)
                        .zip(&vals)
                        .map(|((c, h), v)| c * hist_sum(h, v))
                        .sum();
                    vec![value - expected]
                })
            }
            TailStatistic::SupDeviation { class } => {
                let table = class_tables(class, &self.target, &self.sources)?;
                let exact: Vec<f64> = table.iter().map(|v| domain_mean(&v[0], &self.target)).collect();
                run_trials(self.trials, self.seed, 0, |rng| {
                    let hists = frame.draw(&samplers, rng);
                    let emp = combined_means(&table, &hists, &frame.counts, &self.weights);
                    vec![sup_abs_diff(&exact, &emp)]
                })
            }
        };
        Ok(out.into_iter().map(|v| v[0]).collect())
    }
}

fn class_tables(
    class: &FiniteHypothesisClass,
    target: &DiscreteDomainSpec,
    sources: &[DiscreteDomainSpec],
) -> Result<Vec<Vec<Vec<f64>>>> {
    class
        .members()
        .iter()
        .map(|h| atom_values(h, class.loss(), target, sources))
        .collect()
}

/// `E^tau_w f` for every member from atom histograms.
fn combined_means(table: &[Vec<Vec<f64>>], hists: &[Vec<u32>], counts: &[usize], weights: &MixtureWeights) -> Vec<f64> {
    let tau = weights.tau();
    table
        .iter()
        .map(|vals| {
            let mut v = tau * hist_sum(&hists[0], &vals[0]) / counts[0] as f64;
            for (k, w) in weights.w().iter().enumerate() {
                v += (1.0 - tau) * w * hist_sum(&hists[k + 1], &vals[k + 1]) / counts[k + 1] as f64;
            }
            v
        })
        .collect()
}

fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exceeds(dev: f64, xi: f64, side: Side) -> bool {
    match side {
        Side::TwoSided => dev.abs() > xi,
        Side::Upper => dev >= xi,
    }
}

/// Monte Carlo tail frequencies against `bound(xi)` over the threshold grid.
///
/// A row passes when the Wilson 99% upper limit of the frequency is at
/// most the (unclamped) bound.
pub fn mc_tail_estimate<B>(exp: &TailExperiment, bound: B) -> Result<TailReport>
where
    B: Fn(f64) -> Result<f64>,
{
    let devs = exp.deviations()?;
    let mut rows = Vec::with_capacity(exp.thresholds.len());
    for &xi in &exp.thresholds {
        let k = devs.iter().filter(|d| exceeds(**d, xi, exp.side)).count();
        let (_, hi) = wilson_interval(k, devs.len(), Z99);
        let b = bound(xi)?;
        rows.push(TailRow {
            xi,
            empirical_p: k as f64 / devs.len() as f64,
            wilson99: hi,
            bound: b.clamp(0.0, 1.0),
            pass: hi <= b,
        });
    }
    Ok(TailReport {
        trials: devs.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationRow {
    pub xi: f64,
    pub xi_prime: f64,
    /// Left side of the sample-size condition, to be compared with 1/8.
    pub condition: f64,
    pub condition_ok: bool,
    /// `xi > (1 - tau) D`.
    pub applicable: bool,
    /// `Pr{sup |E^(T) f - E^tau_w f| > xi}`.
    pub lhs_p: f64,
    /// `2 Pr{sup |E'^tau_w f - E^tau_w f| > xi' / 2}`.
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrizationReport {
    pub trials: usize,
    pub divergence: f64,
    pub rows: Vec<SymmetrizationRow>,
}

impl SymmetrizationReport {
    /// Every applicable row that meets the condition passes.
    pub fn all_pass(&self) -> bool {
        self.rows
            .iter()
            .filter(|r| r.applicable && r.condition_ok)
            .all(|r| r.pass)
    }

    pub fn checked_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.applicable && r.condition_ok).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Monte Carlo check of the multi-domain symmetrization inequality.
///
/// The left side uses exact target expectations; the right side compares
/// the combined risk on an original and an independent ghost sample.
/// Rows that violate the sample-size condition, or have `xi <= (1 - tau) D`,
/// are reported with the flags cleared and `pass = false`. A checked row
/// passes when `lhs <= rhs + slack` with slack from 99% Wilson limits:
/// `(lhs - lower(lhs)) + 2 (upper(rhs / 2) - rhs / 2)`.
#[allow(clippy::too_many_arguments)]
pub fn symmetrization_check(
    class: &FiniteHypothesisClass,
    target: &DiscreteDomainSpec,
    sources: &[DiscreteDomainSpec],
    sizes: &SampleSizes,
    weights: &MixtureWeights,
    thresholds: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SymmetrizationReport> {
    check_sizes(sizes, Some(weights))?;
    if trials < 100 {
        return Err(Error::invalid(format!("need at least 100 trials, got {trials}")));
    }
    if thresholds.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::invalid("thresholds must be positive and finite"));
    }
    let range = bounded_range(class.loss())?;
    let frame = Frame::new(target, sources, sizes)?;
    let samplers = frame.samplers();
    let dists: Vec<Dist<'_>> = sources.iter().map(Dist::from).collect();
    let divergence = weighted_ipm(class, &dists, Dist::from(target), weights.w())?.value;
    let table = class_tables(class, target, sources)?;
    let exact: Vec<f64> = table.iter().map(|v| domain_mean(&v[0], target)).collect();
    let pairs = run_trials(trials, seed, 1, |rng| {
        let original = frame.draw(&samplers, rng);
        let ghost = frame.draw(&samplers, rng);
        let e = combined_means(&table, &original, &frame.counts, weights);
        let g = combined_means(&table, &ghost, &frame.counts, weights);
        vec![sup_abs_diff(&exact, &e), sup_abs_diff(&g, &e)]
    });
    let a = variance_factor(sizes, weights);
    let shift = (1.0 - weights.tau()) * divergence;
    let n = trials;
    let mut rows = Vec::with_capacity(thresholds.len());
    for &xi in thresholds {
        let xi_prime = xi - shift;
        let applicable = xi_prime > 0.0;
        let condition = if applicable {
            weighted_condition(range.width(), a, xi_prime)
        } else {
            f64::INFINITY
        };
        let condition_ok = condition <= 0.125;
        let kl = pairs.iter().filter(|p| p[0] > xi).count();
        let kr = pairs.iter().filter(|p| applicable && p[1] > xi_prime / 2.0).count();
        let lhs_p = kl as f64 / n as f64;
        let half = kr as f64 / n as f64;
        let (lhs_lo, _) = wilson_interval(kl, n, Z99);
        let (_, rhs_hi) = wilson_interval(kr, n, Z99);
        let slack = (lhs_p - lhs_lo) + 2.0 * (rhs_hi - half);
        let rhs = 2.0 * half;
        rows.push(SymmetrizationRow {
            xi,
            xi_prime,
            condition,
            condition_ok,
            applicable,
            lhs_p,
            rhs,
            slack,
            pass: applicable && condition_ok && lhs_p <= rhs + slack,
        });
    }
    Ok(SymmetrizationReport {
        trials: n,
        divergence,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Atom, LabeledSample};
    use crate::hypothesis::{LinearHypothesis, LossKind};
    use crate::risk::optimal_parameters;

    fn coin(p: f64) -> DiscreteDomainSpec {
        DiscreteDomainSpec::new(vec![
            Atom {
                sample: LabeledSample::new(vec![0.0], 0.0).unwrap(),
                prob: 1.0 - p,
            },
            Atom {
                sample: LabeledSample::new(vec![1.0], 0.0).unwrap(),
                prob: p,
            },
        ])
        .unwrap()
    }

    fn identity() -> (Hypothesis, LossFunction) {
        (
            LinearHypothesis::new(vec![1.0], 0.0).unwrap().into(),
            LossFunction::bounded(LossKind::Absolute, LossRange::unit()),
        )
    }

    #[test]
    fn f_statistic_small_cases() {
        let w = MixtureWeights::new(0.5, vec![1.0]).unwrap();
        assert_eq!(f_statistic(&[1.0], &[vec![1.0]], &w).unwrap(), 1.0);
        let w0 = MixtureWeights::new(0.0, vec![1.0]).unwrap();
        assert_eq!(f_statistic(&[5.0, 7.0], &[vec![1.0, 2.0]], &w0).unwrap(), 2.0 * 3.0);

        let t = [0.2, 0.4];
        let s1 = vec![0.1, 0.3, 0.5];
        let s2 = vec![0.9, 0.7];
        let w = MixtureWeights::new(0.3, vec![0.6, 0.4]).unwrap();
        let expand = 0.3 * 3.0 * 2.0 * (0.2 + 0.4)
            + 0.7 * 2.0 * 0.6 * 2.0 * (0.1 + 0.3 + 0.5)
            + 0.7 * 2.0 * 0.4 * 3.0 * (0.9 + 0.7);
        let f = f_statistic(&t, &[s1.clone(), s2.clone()], &w).unwrap();
        assert!((f - expand).abs() < 1e-12);
        let norm = f_statistic_normalized(&t, &[s1, s2], &w).unwrap();
        let combined = 0.3 * 0.3 + 0.7 * (0.6 * 0.3 + 0.4 * 0.8);
        assert!((norm - combined).abs() < 1e-12);

        let s = vec![0.25, 0.5, 1.0, 0.0];
        let f = f_statistic(&[0.0; 3], &[s.clone()], &w0).unwrap();
        assert!((f / (3.0 * 4.0) - 0.4375).abs() < 1e-12);
        assert!(f_statistic(&[], &[s], &w0).is_err());
    }

    #[test]
    fn hoeffding_dev_cases() {
        let sizes = SampleSizes::new(5, vec![12]).unwrap();
        let w = MixtureWeights::new(0.0, vec![1.0]).unwrap();
        let xi = 0.15;
        let b = normalized_hoeffding_dev_bound(&sizes, &w, LossRange::unit(), xi).unwrap();
        assert!((b - 2.0 * (-2.0 * 12.0 * xi * xi).exp()).abs() < 1e-12);

        let sizes = SampleSizes::new(2, vec![3, 2]).unwrap();
        let w = optimal_parameters(&sizes).unwrap();
        let (tau, w1, w2) = (w.tau(), w.w()[0], w.w()[1]);
        let xi: f64 = 7.0;
        let inner: f64 = tau * tau * 6.0 + (1.0 - tau).powi(2) * 2.0 * (w1 * w1 * 2.0 + w2 * w2 * 3.0);
        let expect = (2f64.ln() - 2.0 * xi * xi / (2.0 * 6.0 * inner)).exp();
        let got = hoeffding_dev_bound(&sizes, &w, LossRange::unit(), xi).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!(hoeffding_dev_bound(&sizes, &w, LossRange::unit(), 1e6).unwrap() < 1e-300);
        assert!(hoeffding_dev_bound(&sizes, &w, LossRange::unit(), 0.0).is_err());
        let mut prev = 2.0;
        for i in 1..50 {
            let v = hoeffding_dev_bound(&sizes, &w, LossRange::unit(), i as f64 * 0.5).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn bennett_dev_cases() {
        let sizes = SampleSizes::new(2, vec![3, 2]).unwrap();
        assert!((bennett_dev_bound(&sizes, LossRange::unit(), 1e-12).unwrap() - 2.0).abs() < 1e-9);
        let xi: f64 = 4.0;
        let x = xi / 12.0;
        let expect = 2.0 * (7.0 * (x - (1.0 + x) * (1.0 + x).ln())).exp();
        assert!((bennett_dev_bound(&sizes, LossRange::unit(), xi).unwrap() - expect).abs() < 1e-13);
        // bigger N at the same normalized threshold
        let mut prev = 2.0;
        for n in 1..=8 {
            let s = SampleSizes::new(n, vec![n, n]).unwrap();
            let v = bennett_dev_bound(&s, LossRange::unit(), 0.3 * (n * n * n) as f64).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn mcdiarmid_cases() {
        let c = vec![vec![1.0 / 200.0; 200]];
        let b = mcdiarmid_bound(&c, 0.1).unwrap();
        assert!((b.quadratic - (-4.0f64).exp()).abs() < 1e-12);
        assert!((b.quadratic - 0.0183156).abs() < 1e-7);
        assert!(b.bennett.unwrap() > 0.0);
        assert_eq!(mcdiarmid_bound(&c, 0.0).unwrap().quadratic, 1.0);
        let uneven = vec![vec![0.1, 0.2], vec![0.1]];
        assert!(mcdiarmid_bound(&uneven, 0.1).unwrap().bennett.is_none());
        assert!(mcdiarmid_bound(&[vec![0.0]], 0.1).is_err());
    }

    #[test]
    fn wilson_limits() {
        let (lo, hi) = wilson_interval(0, 100, Z99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.07);
        let (lo, hi) = wilson_interval(50, 100, Z99);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(wilson_interval(10, 10, Z99).1, 1.0);
    }

    #[test]
    fn degenerate_domain_never_deviates() {
        let (h, loss) = identity();
        let exp = TailExperiment {
            statistic: TailStatistic::FStatistic { hypothesis: h, loss },
            target: coin(1.0),
            sources: vec![coin(1.0), coin(0.0)],
            sizes: SampleSizes::new(3, vec![4, 2]).unwrap(),
            weights: MixtureWeights::new(0.2, vec![0.5, 0.5]).unwrap(),
            thresholds: vec![0.01, 0.1],
            trials: 200,
            seed: 1,
            side: Side::TwoSided,
        };
        let r = mc_tail_estimate(&exp, |_| Ok(0.05)).unwrap();
        assert!(r.rows.iter().all(|row| row.empirical_p == 0.0));
    }

    #[test]
    fn coin_instance_meets_bounds() {
        let (h, loss) = identity();
        let sizes = SampleSizes::new(4, vec![6, 5]).unwrap();
        let weights = optimal_parameters(&sizes).unwrap();
        let scale = 4.0 * 30.0;
        let mut exp = TailExperiment {
            statistic: TailStatistic::FStatistic { hypothesis: h, loss },
            target: coin(0.3),
            sources: vec![coin(0.5), coin(0.6)],
            sizes: sizes.clone(),
            weights: weights.clone(),
            thresholds: (1..=8).map(|i| scale * 0.05 * i as f64).collect(),
            trials: 10_000,
            seed: 3,
            side: Side::TwoSided,
        };
        let h = mc_tail_estimate(&exp, |xi| hoeffding_dev_bound(&sizes, &weights, LossRange::unit(), xi)).unwrap();
        assert!(h.all_pass(), "{h:?}");
        let b = mc_tail_estimate(&exp, |xi| bennett_dev_bound(&sizes, LossRange::unit(), xi)).unwrap();
        assert!(b.all_pass(), "{b:?}");
        let c = exp.differences().unwrap().unwrap();
        exp.side = Side::Upper;
        let m = mc_tail_estimate(&exp, |xi| Ok(mcdiarmid_bound(&c, xi)?.quadratic)).unwrap();
        assert!(m.all_pass());
        let mb = mc_tail_estimate(&exp, |xi| Ok(mcdiarmid_bound(&c, xi)?.bennett.unwrap())).unwrap();
        assert!(mb.all_pass());

        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("xi,empirical_p,wilson99,bound,pass\n"));
        assert_eq!(text.lines().count(), 9);

        exp.sizes = SampleSizes::new(9, vec![6, 5]).unwrap();
        assert!(matches!(exp.deviations(), Err(Error::Capacity(_))));
    }

    #[test]
    fn deviations_are_reproducible() {
        let (h, loss) = identity();
        let exp = TailExperiment {
            statistic: TailStatistic::CustomBoundedDifference {
                hypothesis: h,
                loss,
                coefficients: vec![1.0, 2.0],
            },
            target: coin(0.3),
            sources: vec![coin(0.5)],
            sizes: SampleSizes::new(20, vec![20]).unwrap(),
            weights: MixtureWeights::new(0.5, vec![1.0]).unwrap(),
            thresholds: vec![1.0],
            trials: 3000,
            seed: 11,
            side: Side::TwoSided,
        };
        let a = exp.deviations().unwrap();
        assert_eq!(a, exp.deviations().unwrap());
        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.2);
    }

    fn small_class() -> FiniteHypothesisClass {
        let members = [(1.0, 0.0), (0.5, 0.0), (0.0, 0.5), (-1.0, 1.0)]
            .iter()
            .map(|&(a, b)| LinearHypothesis::new(vec![a], b).unwrap())
            .collect();
        FiniteHypothesisClass::linear(members, LossFunction::bounded(LossKind::Absolute, LossRange::unit())).unwrap()
    }

    #[test]
    fn symmetrization_condition_and_matched_case() {
        for n in [7usize, 8] {
            let sizes = SampleSizes::new(1, vec![n]).unwrap();
            let w = MixtureWeights::new(0.0, vec![1.0]).unwrap();
            let c = weighted_condition(1.0, variance_factor(&sizes, &w), 1.0);
            assert_eq!(c <= 0.125, n >= 8);
        }
        let class = small_class();
        let sizes = SampleSizes::new(20, vec![40, 40]).unwrap();
        let weights = optimal_parameters(&sizes).unwrap();
        let thresholds: Vec<f64> = (1..=8).map(|i| 0.05 * i as f64).collect();
        let r = symmetrization_check(&class, &coin(0.4), &[coin(0.4), coin(0.4)], &sizes, &weights, &thresholds, 4000, 5)
            .unwrap();
        assert_eq!(r.divergence, 0.0);
        assert!(r.checked_rows() > 0);
        assert!(r.all_pass(), "{r:?}");
        let shifted = symmetrization_check(&class, &coin(0.2), &[coin(0.4), coin(0.7)], &sizes, &weights, &thresholds, 4000, 5)
            .unwrap();
        assert!(shifted.divergence > 0.0);
        assert!(shifted.rows.iter().any(|r| !r.applicable));
        assert!(shifted.all_pass());
    }
}
