//! Closed-form generalization bounds for the combined risk, with their
//! preconditions checked and reported.
//!
//! Every bound has the shape `value = (1 - tau) D + stochastic`. Entropy
//! based bounds take `ln N` (the log uniform entropy number at radius
//! `xi' / 8`) from the caller together with the radius it was computed at;
//! no fixed point between `xi'` and the radius is solved here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::LossRange;
use crate::risk::{optimal_parameters, MixtureWeights, SampleSizes};

/// Interval for the constant `c1` of the alternative Bennett bound.
pub const C1_INTERVAL: (f64, f64) = (0.0075, 0.4804);
/// Interval for the constant `c2` of the Rademacher Bennett bound.
pub const C2_INTERVAL: (f64, f64) = (0.0075, 0.3863);
/// Interval of `c1` on which `eta(c1; .)` is decreasing over `(0, 1/8]`.
pub const ETA_MONOTONE_C1_MAX: f64 = 0.4434;

/// `Gamma(x) = x - (x + 1) ln(x + 1)` for `x >= 0`.
///
/// Uses the alternating series `-sum_{n>=2} (-x)^n / (n (n - 1))` below
/// `x = 1/4`, where the closed form loses digits to cancellation.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("Gamma is defined for x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::NEG_INFINITY);
    }
    if x < 0.25 {
        let mut term = x; // (-1)^(n-1) x^n, starting at n = 1
        let mut sum = 0.0;
        for n in 2..200 {
            term *= -x;
            let t = term / (n * (n - 1)) as f64;
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return Ok(sum);
    }
    Ok(x - (x + 1.0) * x.ln_1p())
}

/// `eta` together with a flag raised when `x > 1`, outside the range the
/// theorems use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaValue {
    pub eta: f64,
    pub outside_unit_interval: bool,
}

/// `eta(c; x) = ln(((x + 1) ln(x + 1) - x) / c) / ln x`, so that
/// `Gamma(x) = -c x^eta`.
pub fn eta_fn(c: f64, x: f64) -> Result<EtaValue> {
    if !(c > C1_INTERVAL.0 && c < C1_INTERVAL.1) {
        return Err(Error::invalid(format!(
            "c = {c} outside ({}, {})",
            C1_INTERVAL.0, C1_INTERVAL.1
        )));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("eta needs x > 0, got {x}")));
    }
    if x == 1.0 {
        return Err(Error::Singular("eta(c; 1) divides by ln 1 = 0".into()));
    }
    let g = gamma_fn(x)?;
    Ok(EtaValue {
        eta: (-g / c).ln() / x.ln(),
        outside_unit_interval: x > 1.0,
    })
}

/// The complexity ingredient of a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Complexity {
    /// Log uniform entropy number at the stated radius.
    Entropy {
        ln_uen: f64,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        redraws: Option<usize>,
    },
    /// Expected Rademacher complexity per source and the empirical one on the target.
    Rademacher { sources: Vec<f64>, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInput {
    pub sizes: SampleSizes,
    pub weights: MixtureWeights,
    pub range: LossRange,
    /// `D^(w)`, the source-weighted IPM.
    pub divergence: f64,
    pub complexity: Complexity,
    /// `epsilon`, one minus the confidence level.
    pub confidence: f64,
    #[serde(default)]
    pub eta: Option<f64>,
    /// The `x` at which `eta` was obtained from `eta_fn`.
    #[serde(default)]
    pub eta_x: Option<f64>,
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default)]
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preconditions {
    pub ok: bool,
    pub notes: Vec<String>,
}

impl Preconditions {
    fn new() -> Self {
        Self {
            ok: true,
            notes: Vec::new(),
        }
    }

    fn fail(&mut self, note: impl Into<String>) {
        self.ok = false;
        self.notes.push(note.into());
    }

    fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub name: String,
    pub value: f64,
    pub discrepancy_term: f64,
    pub stochastic_term: f64,
    pub preconditions: Preconditions,
    /// Radius at which the entropy number was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Redraw count behind a redraw-max entropy estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub redraws: Option<usize>,
    /// `epsilon` implied by the `(c, x)` provenance of `eta`, when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub implied_confidence: Option<f64>,
}

impl BoundResult {
    fn new(name: &str, input: &BoundInput, stochastic: f64, pre: Preconditions) -> Self {
        let discrepancy = (1.0 - input.weights.tau()) * input.divergence;
        let (radius, redraws) = match &input.complexity {
            Complexity::Entropy { radius, redraws, .. } => (*radius, *redraws),
            Complexity::Rademacher { .. } => (None, None),
        };
        Self {
            name: name.to_string(),
            value: discrepancy + stochastic,
            discrepancy_term: discrepancy,
            stochastic_term: stochastic,
            preconditions: pre,
            radius,
            redraws,
            implied_confidence: None,
        }
    }
}

impl BoundInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if !(self.divergence.is_finite() && self.divergence >= 0.0) {
            return Err(Error::invalid(format!("divergence {} must be >= 0", self.divergence)));
        }
        if self.weights.num_sources() != self.sizes.num_sources() {
            return Err(Error::CountMismatch {
                what: "source weights",
                expected: self.sizes.num_sources(),
                found: self.weights.num_sources(),
            });
        }
        if self.sizes.target == 0 || self.sizes.sources.contains(&0) {
            return Err(Error::invalid("sample sizes must be at least 1"));
        }
        if let Some(c) = self.c1 {
            if !(c > C1_INTERVAL.0 && c < C1_INTERVAL.1) {
                return Err(Error::invalid(format!("c1 = {c} outside {C1_INTERVAL:?}")));
            }
        }
        if let Some(c) = self.c2 {
            if !(c > C2_INTERVAL.0 && c < C2_INTERVAL.1) {
                return Err(Error::invalid(format!("c2 = {c} outside {C2_INTERVAL:?}")));
            }
        }
        match &self.complexity {
            Complexity::Entropy { ln_uen, .. } => {
                if !ln_uen.is_finite() {
                    return Err(Error::invalid("ln UEN must be finite"));
                }
            }
            Complexity::Rademacher { sources, target } => {
                if sources.len() != self.sizes.num_sources() {
                    return Err(Error::CountMismatch {
                        what: "source Rademacher complexities",
                        expected: self.sizes.num_sources(),
                        found: sources.len(),
                    });
                }
                if sources.iter().chain(std::iter::once(target)).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("Rademacher complexities must be finite"));
                }
            }
        }
        Ok(())
    }

    /// `tau^2 / N_T + sum_k (1 - tau)^2 w_k^2 / N_k`.
    pub fn variance_factor(&self) -> f64 {
        variance_factor(&self.sizes, &self.weights)
    }

    fn ln_uen(&self) -> Result<f64> {
        match &self.complexity {
            Complexity::Entropy { ln_uen, .. } => Ok(*ln_uen),
            Complexity::Rademacher { .. } => Err(Error::invalid(
                "this bound needs an entropy number, got Rademacher complexities",
            )),
        }
    }

    /// `ln N - ln(epsilon / 8)`.
    fn log_term(&self) -> Result<f64> {
        Ok(self.ln_uen()? - (self.confidence / 8.0).ln())
    }

    fn rademacher(&self) -> Result<(&[f64], f64)> {
        match &self.complexity {
            Complexity::Rademacher { sources, target } => Ok((sources, *target)),
            Complexity::Entropy { .. } => Err(Error::invalid(
                "this bound needs Rademacher complexities, got an entropy number",
            )),
        }
    }

    fn total(&self) -> f64 {
        self.sizes.total() as f64
    }

    fn require_optimal(&self, theorem: &str) -> Result<()> {
        let opt = optimal_parameters(&self.sizes)?;
        let close = (opt.tau() - self.weights.tau()).abs() <= 1e-12
            && opt.w().iter().zip(self.weights.w()).all(|(a, b)| (a - b).abs() <= 1e-12);
        if !close {
            return Err(Error::Contract(format!(
                "{theorem} holds only at w_k = N_k / sum N and tau = N_T / (N_T + sum N)"
            )));
        }
        Ok(())
    }
}

fn note_entropy(pre: &mut Preconditions, input: &BoundInput) -> Result<()> {
    let ln_uen = input.ln_uen()?;
    if ln_uen < 0.0 {
        pre.fail(format!("ln UEN = {ln_uen} < 0 is not the log of a covering number"));
    }
    if let Complexity::Entropy { redraws: Some(r), .. } = &input.complexity {
        pre.note(format!("ln UEN is a lower estimate from the max over {r} redraws"));
    }
    Ok(())
}

/// Hoeffding-type bound:
/// `(1 - tau) D + sqrt((ln N - ln(eps / 8)) 32 (b - a)^2 A)` with
/// `A = tau^2 / N_T + sum (1 - tau)^2 w_k^2 / N_k`.
///
/// The sample-size condition `(b - a)^2 A / xi'^2 <= 1/8` is checked at
/// `xi'` equal to the stochastic term.
pub fn hoeffding_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    let mut pre = Preconditions::new();
    note_entropy(&mut pre, input)?;
    let l = input.log_term()?;
    let width = input.range.width();
    let a = input.variance_factor();
    let stochastic = (l.max(0.0) * 32.0 * width * width * a).sqrt();
    check_weighted_condition(&mut pre, width, a, stochastic);
    Ok(BoundResult::new("hoeffding", input, stochastic, pre))
}

/// `tau^2 / N_T + sum_k (1 - tau)^2 w_k^2 / N_k`.
pub fn variance_factor(sizes: &SampleSizes, weights: &MixtureWeights) -> f64 {
    let tau = weights.tau();
    let mut a = tau * tau / sizes.target as f64;
    for (w, &n) in weights.w().iter().zip(&sizes.sources) {
        a += (1.0 - tau).powi(2) * w * w / n as f64;
    }
    a
}

/// `tau^2 (b-a)^2 / (N_T xi'^2) + sum (1-tau)^2 w_k^2 (b-a)^2 / (N_k xi'^2) <= 1/8`.
pub fn weighted_condition(width: f64, variance_factor: f64, xi_prime: f64) -> f64 {
    width * width * variance_factor / (xi_prime * xi_prime)
}

fn check_weighted_condition(pre: &mut Preconditions, width: f64, a: f64, xi_prime: f64) {
    if !(xi_prime > 0.0) {
        pre.fail("xi' = 0: the sample-size condition cannot hold");
        return;
    }
    let lhs = weighted_condition(width, a, xi_prime);
    if lhs > 0.125 {
        pre.fail(format!("sample-size condition fails: {lhs:.6} > 1/8"));
    }
}

fn check_total_condition(pre: &mut Preconditions, width: f64, total: f64, xi_prime: f64) {
    if !(xi_prime > 0.0) {
        pre.fail("xi' = 0: the sample-size condition cannot hold");
        return;
    }
    let need = width * width / (8.0 * xi_prime * xi_prime);
    if total < need {
        pre.fail(format!("sample-size condition fails: N = {total} < {need:.3}"));
    }
}

/// Bennett-type tail probability at threshold `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    /// Clamped to `[0, 1]`.
    pub value: f64,
    /// Unclamped `8 N exp(N_total Gamma(xi' / (b - a)))`; may be infinite.
    pub raw: f64,
    pub log_raw: f64,
    pub xi_prime: f64,
    pub preconditions: Preconditions,
}

/// Bennett-type tail bound `8 N exp(N_total Gamma(xi' / (b - a)))`,
/// evaluated in log space. Only valid at the optimal weights.
pub fn bennett_tail(input: &BoundInput, xi: f64) -> Result<TailProbability> {
    input.validate()?;
    input.require_optimal("the Bennett-type tail bound")?;
    let xi_prime = xi - (1.0 - input.weights.tau()) * input.divergence;
    if !(xi_prime > 0.0) {
        return Err(Error::invalid(format!(
            "threshold {xi} must exceed (1 - tau) D = {}",
            xi - xi_prime
        )));
    }
    let mut pre = Preconditions::new();
    note_entropy(&mut pre, input)?;
    let width = input.range.width();
    check_total_condition(&mut pre, width, input.total(), xi_prime);
    let log_raw = 8f64.ln() + input.ln_uen()? + input.total() * gamma_fn(xi_prime / width)?;
    let raw = log_raw.exp();
    Ok(TailProbability {
        value: raw.clamp(0.0, 1.0),
        raw,
        log_raw,
        xi_prime,
        preconditions: pre,
    })
}

/// The same tail evaluated directly as a product, without logarithms.
/// Overflows or underflows where the log-space form does not.
pub fn bennett_tail_direct(input: &BoundInput, xi: f64) -> Result<f64> {
    input.validate()?;
    input.require_optimal("the Bennett-type tail bound")?;
    let xi_prime = xi - (1.0 - input.weights.tau()) * input.divergence;
    if !(xi_prime > 0.0) {
        return Err(Error::invalid("threshold must exceed (1 - tau) D"));
    }
    let uen = input.ln_uen()?.exp();
    let g = gamma_fn(xi_prime / input.range.width())?;
    Ok(8.0 * uen * (input.total() * g).exp())
}

/// Bernstein form of the Bennett bound:
/// `(1 - tau) D + 4 (b - a) L / (3 N) + (b - a) sqrt(2 L / N)`.
pub fn bernstein_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    input.require_optimal("the Bernstein-type bound")?;
    let mut pre = Preconditions::new();
    note_entropy(&mut pre, input)?;
    let l = input.log_term()?.max(0.0);
    let width = input.range.width();
    let n = input.total();
    let stochastic = 4.0 * width * l / (3.0 * n) + width * (2.0 * l).sqrt() / n.sqrt();
    check_total_condition(&mut pre, width, n, stochastic);
    Ok(BoundResult::new("bernstein", input, stochastic, pre))
}

fn checked_eta(input: &BoundInput, pre: &mut Preconditions) -> Result<f64> {
    let eta = input
        .eta
        .ok_or_else(|| Error::invalid("this bound needs an exponent eta"))?;
    if !(eta > 0.0 && eta <= 2.0) {
        return Err(Error::invalid(format!("eta = {eta} outside (0, 2)")));
    }
    if eta == 2.0 {
        pre.fail("eta = 2 is the boundary value, evaluated for comparison only");
    }
    Ok(eta)
}

/// Checks `eta >= eta(c; x)` for the supplied provenance `(c, x)` and `x` in `(0, x_max]`.
fn check_eta_provenance(pre: &mut Preconditions, eta: f64, c: Option<f64>, x: Option<f64>, x_max: f64) -> Result<()> {
    match (c, x) {
        (Some(c), Some(x)) => {
            if !(x > 0.0 && x <= x_max) {
                pre.fail(format!("x = {x} outside (0, {x_max}]"));
            }
            let lower = eta_fn(c, x)?.eta;
            if eta < lower {
                pre.fail(format!("eta = {eta} is below eta(c; x) = {lower:.6}"));
            }
        }
        _ => pre.note("no (c, x) provenance supplied for eta; confidence left implicit"),
    }
    Ok(())
}

/// Alternative Bennett-type bound `(1 - tau) D + (b - a) (L / N)^(1 / eta)`.
///
/// With `(c1, x)` supplied the result also reports the confidence
/// `8 N exp(N_total Gamma(x))` the exponent corresponds to.
pub fn alt_bennett_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    input.require_optimal("the alternative Bennett-type bound")?;
    let mut pre = Preconditions::new();
    note_entropy(&mut pre, input)?;
    let eta = checked_eta(input, &mut pre)?;
    check_eta_provenance(&mut pre, eta, input.c1, input.eta_x, 0.125)?;
    let l = input.log_term()?.max(0.0);
    let width = input.range.width();
    let n = input.total();
    let stochastic = width * (l / n).powf(1.0 / eta);
    check_total_condition(&mut pre, width, n, stochastic);
    let mut out = BoundResult::new("alt_bennett", input, stochastic, pre);
    if let Some(x) = input.eta_x {
        let log_eps = 8f64.ln() + input.ln_uen()? + n * gamma_fn(x)?;
        out.implied_confidence = Some(log_eps.exp());
    }
    Ok(out)
}

fn rademacher_common(input: &BoundInput) -> Result<f64> {
    let (sources, target) = input.rademacher()?;
    let tau = input.weights.tau();
    let src: f64 = sources.iter().zip(input.weights.w()).map(|(r, w)| w * r).sum();
    Ok(2.0 * (1.0 - tau) * src + 2.0 * tau * target)
}

/// Rademacher bound from McDiarmid's inequality.
pub fn rademacher_bound_hoeffding(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    let pre = Preconditions::new();
    let tau = input.weights.tau();
    let width = input.range.width();
    let eps = input.confidence;
    let nt = input.sizes.target as f64;
    let stochastic = rademacher_common(input)?
        + 2.0 * tau * (width * width * (4.0 / eps).ln() / (2.0 * nt)).sqrt()
        + (width * width * (2.0 / eps).ln() / 2.0 * input.variance_factor()).sqrt();
    Ok(BoundResult::new("rademacher_hoeffding", input, stochastic, pre))
}

/// Rademacher bound from the Bennett form of McDiarmid's inequality, with
/// `eta`-th roots in place of square roots.
pub fn rademacher_bound_bennett(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    let c2 = input
        .c2
        .ok_or_else(|| Error::invalid("the Rademacher Bennett bound needs c2"))?;
    let mut pre = Preconditions::new();
    let eta = checked_eta(input, &mut pre)?;
    check_eta_provenance(&mut pre, eta, Some(c2), input.eta_x, 1.0)?;
    let tau = input.weights.tau();
    let width = input.range.width();
    let eps = input.confidence;
    let nt = input.sizes.target as f64;
    let root = 1.0 / eta;
    let stochastic = rademacher_common(input)?
        + width
            * (2.0 * tau * ((4.0 / eps).ln() / (c2 * nt)).powf(root)
                + ((2.0 / eps).ln() / c2 * input.variance_factor()).powf(root));
    let mut out = BoundResult::new("rademacher_bennett", input, stochastic, pre);
    if let Some(x) = input.eta_x {
        out.implied_confidence = Some((input.total() * gamma_fn(x)?).exp());
    }
    Ok(out)
}

/// Hoeffding bound at the optimal weights:
/// `sum N_k D / N + sqrt(L 32 (b - a)^2 / N)`.
pub fn optimal_rate_bound(input: &BoundInput) -> Result<BoundResult> {
    input.validate()?;
    input.require_optimal("the optimal-rate bound")?;
    let mut pre = Preconditions::new();
    note_entropy(&mut pre, input)?;
    let l = input.log_term()?.max(0.0);
    let width = input.range.width();
    let n = input.total();
    let stochastic = (l * 32.0 * width * width / n).sqrt();
    check_weighted_condition(&mut pre, width, input.variance_factor(), stochastic);
    let discrepancy = input.sizes.source_total() as f64 * input.divergence / n;
    let (radius, redraws) = match &input.complexity {
        Complexity::Entropy { radius, redraws, .. } => (*radius, *redraws),
        Complexity::Rademacher { .. } => (None, None),
    };
    Ok(BoundResult {
        name: "optimal_rate".into(),
        value: discrepancy + stochastic,
        discrepancy_term: discrepancy,
        stochastic_term: stochastic,
        preconditions: pre,
        radius,
        redraws,
        implied_confidence: None,
    })
}

/// Ratio `ln N / (1 / A)` along a growth sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub ratios: Vec<f64>,
    pub running_max: Vec<f64>,
    /// Finite-sample heuristic: the last quarter of the ratios does not increase.
    pub bounded: bool,
    pub note: String,
}

/// Evaluates `ln N * A` with `A = tau^2 / N_T + sum (1 - tau)^2 w_k^2 / N_k`
/// at every step and calls the sequence bounded when its last quarter
/// (at least two points) is nonincreasing up to a relative `1e-9`.
pub fn asymptotic_condition(growth: &[(SampleSizes, MixtureWeights)], ln_uen: &[f64]) -> Result<AsymptoticReport> {
    if growth.len() != ln_uen.len() {
        return Err(Error::CountMismatch {
            what: "entropy values",
            expected: growth.len(),
            found: ln_uen.len(),
        });
    }
    if growth.len() < 2 {
        return Err(Error::invalid("asymptotic check needs at least two steps"));
    }
    let mut ratios = Vec::with_capacity(growth.len());
    for ((sizes, weights), &l) in growth.iter().zip(ln_uen) {
        let input = BoundInput {
            sizes: sizes.clone(),
            weights: weights.clone(),
            range: LossRange::unit(),
            divergence: 0.0,
            complexity: Complexity::Entropy {
                ln_uen: l,
                radius: None,
                redraws: None,
            },
            confidence: 0.5,
            eta: None,
            eta_x: None,
            c1: None,
            c2: None,
        };
        input.validate()?;
        ratios.push(l * input.variance_factor());
    }
    let mut running_max = Vec::with_capacity(ratios.len());
    let mut m = f64::NEG_INFINITY;
    for r in &ratios {
        m = m.max(*r);
        running_max.push(m);
    }
    let n = ratios.len();
    let start = (3 * n / 4).min(n - 2);
    let bounded = ratios[start..]
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-9 * w[0].abs());
    Ok(AsymptoticReport {
        ratios,
        running_max,
        bounded,
        note: "finite-sample trend heuristic, not a proof of a finite limit".into(),
    })
}
