//! The `l1^{w,tau}` empirical norm, covering numbers, the uniform entropy
//! number and Monte Carlo Rademacher complexity.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteDomainSpec, DomainId, DomainSampler, LabeledSample};
use crate::error::{Error, Result};
use crate::hypothesis::{evaluate_class, evaluate_tagged, FiniteHypothesisClass, FunctionValueMatrix, PointTag, Slot};
use crate::risk::{MixtureWeights, SampleSizes};
use crate::rng::{blocks, derive_seed, rng_for, stream};

/// Original and ghost samples for the target and every source.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostedSample {
    target: (Vec<LabeledSample>, Vec<LabeledSample>),
    sources: Vec<(Vec<LabeledSample>, Vec<LabeledSample>)>,
}

impl GhostedSample {
    pub fn new(
        target: (Vec<LabeledSample>, Vec<LabeledSample>),
        sources: Vec<(Vec<LabeledSample>, Vec<LabeledSample>)>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("ghosted sample needs at least one source"));
        }
        for (what, (o, g)) in std::iter::once(("target", &target))
            .chain(sources.iter().map(|s| ("source", s)))
        {
            if o.len() != g.len() {
                return Err(Error::CountMismatch {
                    what: if what == "target" { "target ghost points" } else { "source ghost points" },
                    expected: o.len(),
                    found: g.len(),
                });
            }
            if o.is_empty() {
                return Err(Error::EmptyDataset(format!("{what} ghosted sample")));
            }
        }
        Ok(Self { target, sources })
    }

    /// Draws originals and ghosts for every domain from independent child streams.
    pub fn draw<T: DomainSampler + ?Sized, S: DomainSampler>(
        target: &T,
        sources: &[S],
        sizes: &SampleSizes,
        seed: u64,
    ) -> Result<Self> {
        if sources.len() != sizes.num_sources() {
            return Err(Error::CountMismatch {
                what: "source samplers",
                expected: sizes.num_sources(),
                found: sources.len(),
            });
        }
        let pair = |s: &dyn Fn(usize, &mut crate::rng::SimRng) -> Vec<LabeledSample>, d: DomainId, n: usize| {
            let mut o = rng_for(seed, &[stream::DATA, d.seed_tag()]);
            let mut g = rng_for(seed, &[stream::GHOST, d.seed_tag()]);
            (s(n, &mut o), s(n, &mut g))
        };
        let t = pair(&|n, r| target.draw(n, r), DomainId::Target, sizes.target);
        let src = sources
            .iter()
            .zip(&sizes.sources)
            .enumerate()
            .map(|(k, (s, &n))| pair(&|n, r| s.draw(n, r), DomainId::Source(k), n))
            .collect();
        Self::new(t, src)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn sizes(&self) -> SampleSizes {
        SampleSizes {
            target: self.target.0.len(),
            sources: self.sources.iter().map(|s| s.0.len()).collect(),
        }
    }

    pub fn target(&self) -> (&[LabeledSample], &[LabeledSample]) {
        (&self.target.0, &self.target.1)
    }

    pub fn source(&self, k: usize) -> (&[LabeledSample], &[LabeledSample]) {
        (&self.sources[k].0, &self.sources[k].1)
    }

    /// Points in column order: target originals, target ghosts, then for
    /// each source its originals followed by its ghosts.
    pub fn tagged_points(&self) -> Vec<(PointTag, &LabeledSample)> {
        let mut out = Vec::new();
        let domains = std::iter::once((DomainId::Target, &self.target))
            .chain(self.sources.iter().enumerate().map(|(k, s)| (DomainId::Source(k), s)));
        for (d, (o, g)) in domains {
            out.extend(o.iter().map(|z| (PointTag::original(d), z)));
            out.extend(g.iter().map(|z| (PointTag::ghost(d), z)));
        }
        out
    }

    pub fn evaluate(&self, class: &FiniteHypothesisClass) -> Result<FunctionValueMatrix> {
        evaluate_tagged(class, &self.tagged_points())
    }
}

/// Per-column coefficients of the `l1^{w,tau}` norm: `tau / (2 N_T)` on
/// target columns and `(1 - tau) w_k / (2 N_k)` on source-`k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WTauL1 {
    coeffs: Vec<f64>,
}

impl WTauL1 {
    pub fn from_tags(tags: &[PointTag], weights: &MixtureWeights) -> Result<Self> {
        let mut counts: BTreeMap<DomainId, (usize, usize)> = BTreeMap::new();
        for t in tags {
            let e = counts.entry(t.domain).or_default();
            match t.slot {
                Slot::Original => e.0 += 1,
                Slot::Ghost => e.1 += 1,
            }
        }
        for (d, (o, g)) in &counts {
            if o != g {
                return Err(Error::invalid(format!(
                    "{d} has {o} original and {g} ghost points"
                )));
            }
            if let DomainId::Source(k) = d {
                if *k >= weights.num_sources() {
                    return Err(Error::CountMismatch {
                        what: "source weights",
                        expected: k + 1,
                        found: weights.num_sources(),
                    });
                }
            }
        }
        if !counts.contains_key(&DomainId::Target) && weights.tau() > 0.0 {
            return Err(Error::invalid("norm with tau > 0 needs target points"));
        }
        for k in 0..weights.num_sources() {
            if !counts.contains_key(&DomainId::Source(k)) && weights.w()[k] > 0.0 && weights.tau() < 1.0 {
                return Err(Error::invalid(format!("source{k} carries weight but has no points")));
            }
        }
        let coeffs = tags
            .iter()
            .map(|t| {
                let n2 = (counts[&t.domain].0 * 2) as f64;
                match t.domain {
                    DomainId::Target => weights.tau() / n2,
                    DomainId::Source(k) => (1.0 - weights.tau()) * weights.w()[k] / n2,
                }
            })
            .collect();
        Ok(Self { coeffs })
    }

    /// Norm with explicit column coefficients.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn norm(&self, f: &[f64]) -> f64 {
        self.coeffs.iter().zip(f).map(|(c, v)| c * v.abs()).sum()
    }

    pub fn distance(&self, f: &[f64], g: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(f.iter().zip(g))
            .map(|(c, (a, b))| c * (a - b).abs())
            .sum()
    }
}

/// The `l1^{w,tau}` norm of one function given its values on tagged points.
pub fn w_tau_l1_norm(values: &[f64], tags: &[PointTag], weights: &MixtureWeights) -> Result<f64> {
    if values.len() != tags.len() {
        return Err(Error::CountMismatch {
            what: "function values",
            expected: tags.len(),
            found: values.len(),
        });
    }
    Ok(WTauL1::from_tags(tags, weights)?.norm(values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityKind {
    CoveringNumber,
    Uen,
    RademacherEmpirical,
    RademacherExpected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub kind: ComplexityKind,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    /// Center indices of the cover, for covering numbers.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub centers: Vec<usize>,
    /// Set when the value is a lower estimate of a supremum (the UEN).
    #[serde(default)]
    pub lower_estimate: bool,
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid(format!("cover radius {radius} must be positive")));
    }
    Ok(())
}

fn check_norm(m: &FunctionValueMatrix, norm: &WTauL1) -> Result<()> {
    if norm.coeffs.len() != m.cols() {
        return Err(Error::CountMismatch {
            what: "norm coefficients",
            expected: m.cols(),
            found: norm.coeffs.len(),
        });
    }
    Ok(())
}

/// Farthest-point greedy internal cover. Starts from member 0 and keeps
/// adding the first member at maximal distance until every member is within
/// `radius` of a center.
pub fn greedy_centers(m: &FunctionValueMatrix, radius: f64, norm: &WTauL1) -> Vec<usize> {
    let n = m.rows();
    let mut centers = vec![0];
    let mut nearest: Vec<f64> = (0..n).map(|i| norm.distance(m.row(i), m.row(0))).collect();
    loop {
        let mut far = 0;
        for i in 1..n {
            if nearest[i] > nearest[far] {
                far = i;
            }
        }
        if nearest[far] <= radius {
            return centers;
        }
        centers.push(far);
        let c = m.row(far);
        for i in 0..n {
            let d = norm.distance(m.row(i), c);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
}

/// True when every member is within `radius` of some center.
pub fn is_cover(m: &FunctionValueMatrix, centers: &[usize], radius: f64, norm: &WTauL1) -> bool {
    (0..m.rows()).all(|i| centers.iter().any(|&c| norm.distance(m.row(i), m.row(c)) <= radius))
}

pub fn covering_number_greedy(m: &FunctionValueMatrix, radius: f64, norm: &WTauL1) -> Result<ComplexityEstimate> {
    check_radius(radius)?;
    check_norm(m, norm)?;
    let centers = greedy_centers(m, radius, norm);
    if !is_cover(m, &centers, radius, norm) {
        return Err(Error::Contract("greedy cover failed certification".into()));
    }
    Ok(ComplexityEstimate {
        kind: ComplexityKind::CoveringNumber,
        value: centers.len() as f64,
        radius: Some(radius),
        trials: 1,
        std_error: None,
        centers,
        lower_estimate: false,
    })
}

/// Largest class accepted by [`covering_number_exact`].
pub const EXACT_COVER_MAX: usize = 20;

/// Minimum internal cover by subset search, in order of increasing size.
pub fn covering_number_exact(m: &FunctionValueMatrix, radius: f64, norm: &WTauL1) -> Result<ComplexityEstimate> {
    check_radius(radius)?;
    check_norm(m, norm)?;
    let n = m.rows();
    if n > EXACT_COVER_MAX {
        return Err(Error::Capacity(format!(
            "exact cover supports at most {EXACT_COVER_MAX} members, got {n}"
        )));
    }
    let covers: Vec<u32> = (0..n)
        .map(|c| {
            (0..n)
                .filter(|&i| norm.distance(m.row(i), m.row(c)) <= radius)
                .fold(0u32, |acc, i| acc | (1 << i))
        })
        .collect();
    let centers = min_set_cover(&covers, n);
    Ok(ComplexityEstimate {
        kind: ComplexityKind::CoveringNumber,
        value: centers.len() as f64,
        radius: Some(radius),
        trials: 1,
        std_error: None,
        centers,
        lower_estimate: false,
    })
}

/// Smallest set of centers whose masks cover `0..n`; lexicographically first among minima.
fn min_set_cover(covers: &[u32], n: usize) -> Vec<usize> {
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    for size in 1..=n {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let mask = idx.iter().fold(0u32, |acc, &i| acc | covers[i]);
            if mask == full {
                return idx;
            }
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && idx[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    (0..n).collect()
}

/// Which cover routine to use inside entropy computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMethod {
    Greedy,
    Exact,
}

fn cover_size(m: &FunctionValueMatrix, radius: f64, norm: &WTauL1, method: CoverMethod) -> Result<usize> {
    let e = match method {
        CoverMethod::Greedy => covering_number_greedy(m, radius, norm)?,
        CoverMethod::Exact => covering_number_exact(m, radius, norm)?,
    };
    Ok(e.centers.len())
}

/// Max over `redraws` ghosted sample bundles of `ln` of the greedy cover size.
///
/// This is a lower estimate of the uniform entropy number, whose supremum
/// over all sample sets cannot be computed. Redraw `r` uses the child seed
/// `(seed, r)`, so the redraw sets for `R < R'` are nested and the estimate
/// is nondecreasing in `R`.
#[allow(clippy::too_many_arguments)]
pub fn uen_estimate<T: DomainSampler, S: DomainSampler>(
    class: &FiniteHypothesisClass,
    target: &T,
    sources: &[S],
    sizes: &SampleSizes,
    weights: &MixtureWeights,
    radius: f64,
    redraws: usize,
    seed: u64,
) -> Result<ComplexityEstimate> {
    if redraws == 0 {
        return Err(Error::invalid("UEN estimate needs at least one redraw"));
    }
    check_radius(radius)?;
    let logs = (0..redraws as u64)
        .into_par_iter()
        .map(|r| {
            let g = GhostedSample::draw(target, sources, sizes, derive_seed(seed, &[stream::UEN, r]))?;
            let m = g.evaluate(class)?;
            let norm = WTauL1::from_tags(m.tags(), weights)?;
            Ok((cover_size(&m, radius, &norm, CoverMethod::Greedy)? as f64).ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ComplexityEstimate {
        kind: ComplexityKind::Uen,
        value: logs.into_iter().fold(0.0, f64::max),
        radius: Some(radius),
        trials: redraws,
        std_error: None,
        centers: Vec::new(),
        lower_estimate: true,
    })
}

/// Default cap on the number of sample configurations visited by [`uen_exhaustive`].
pub const UEN_CONFIG_CAP: usize = 2_000_000;

/// All ways to place `total` indistinguishable draws on `parts` atoms.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            let mut v = Vec::with_capacity(parts);
            v.push(first);
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact supremum of `ln N(F, radius, l1^{w,tau})` over every sample set
/// supported on the atoms of discrete domains.
///
/// The norm only depends on how many of the `2 N` points of each domain
/// fall on each atom, so configurations are enumerated as per-domain atom
/// counts rather than ordered samples.
#[allow(clippy::too_many_arguments)]
pub fn uen_exhaustive(
    class: &FiniteHypothesisClass,
    target: &DiscreteDomainSpec,
    sources: &[DiscreteDomainSpec],
    sizes: &SampleSizes,
    weights: &MixtureWeights,
    radius: f64,
    method: CoverMethod,
    cap: usize,
) -> Result<ComplexityEstimate> {
    check_radius(radius)?;
    if sources.len() != sizes.num_sources() || weights.num_sources() != sizes.num_sources() {
        return Err(Error::CountMismatch {
            what: "sources",
            expected: sizes.num_sources(),
            found: sources.len(),
        });
    }
    let domains: Vec<(&DiscreteDomainSpec, usize, f64)> = std::iter::once((
        target,
        sizes.target,
        weights.tau() / (2 * sizes.target) as f64,
    ))
    .chain(sources.iter().zip(&sizes.sources).zip(weights.w()).map(|((s, &n), &wk)| {
        (s, n, (1.0 - weights.tau()) * wk / (2 * n) as f64)
    }))
    .collect();
    let mut total_configs = 1.0;
    for (spec, n, _) in &domains {
        total_configs *= binomial(2 * n + spec.len() - 1, spec.len() - 1);
    }
    if total_configs > cap as f64 {
        return Err(Error::Capacity(format!(
            "{total_configs:.0} sample configurations exceed the cap of {cap}"
        )));
    }
    // loss values of every member on every atom, domains concatenated
    let mut atom_points = Vec::new();
    for (spec, _, _) in &domains {
        atom_points.extend(spec.atoms().iter().map(|a| a.sample.clone()));
    }
    let values = evaluate_class(class, &atom_points)?;
    let per_domain: Vec<Vec<Vec<usize>>> = domains
        .iter()
        .map(|(spec, n, _)| compositions(2 * n, spec.len()))
        .collect();
    let radix: Vec<usize> = per_domain.iter().map(Vec::len).collect();
    let count = radix.iter().product::<usize>();
    let best = (0..count)
        .into_par_iter()
        .map(|mut idx| {
            let mut coeffs = Vec::with_capacity(values.cols());
            for (d, comps) in per_domain.iter().enumerate() {
                let comp = &comps[idx % radix[d]];
                idx /= radix[d];
                coeffs.extend(comp.iter().map(|&c| c as f64 * domains[d].2));
            }
            let norm = WTauL1::from_coeffs(coeffs);
            cover_size(&values, radius, &norm, method)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    Ok(ComplexityEstimate {
        kind: ComplexityKind::Uen,
        value: (best as f64).ln(),
        radius: Some(radius),
        trials: count,
        std_error: None,
        centers: Vec::new(),
        lower_estimate: method == CoverMethod::Greedy,
    })
}

const SIGMA_BLOCK: usize = 1024;

fn sigma_sup(m: &FunctionValueMatrix, sigma: &[f64]) -> f64 {
    let n = m.cols() as f64;
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(sigma).map(|(v, s)| v * s).sum::<f64>() / n)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(mean, std_error)` of i.i.d. values; the error is `None` for a single value.
fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = crate::linalg::mean(values);
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Monte Carlo `E_sigma sup_f (1/N) sum_n sigma_n f(z_n)` over the columns
/// of `m`, without an absolute value inside the supremum.
pub fn rademacher_empirical(m: &FunctionValueMatrix, trials: usize, seed: u64) -> Result<ComplexityEstimate> {
    if trials == 0 {
        return Err(Error::invalid("Rademacher estimate needs at least one trial"));
    }
    let sups: Vec<f64> = blocks(trials, SIGMA_BLOCK)
        .into_par_iter()
        .flat_map_iter(|(b, _, len)| {
            let mut rng = rng_for(seed, &[stream::SIGMA, b]);
            let mut sigma = vec![0.0; m.cols()];
            (0..len)
                .map(|_| {
                    for s in sigma.iter_mut() {
                        *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    }
                    sigma_sup(m, &sigma)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let (value, std_error) = mean_se(&sups);
    Ok(ComplexityEstimate {
        kind: ComplexityKind::RademacherEmpirical,
        value,
        radius: None,
        trials,
        std_error,
        centers: Vec::new(),
        lower_estimate: false,
    })
}

/// Outer Monte Carlo over `data_trials` samples of size `n` of the empirical
/// estimate. The reported error is the spread of the per-sample estimates,
/// which already contains the inner sign-vector noise; with one data trial
/// the inner error is reported.
pub fn rademacher_expected<S: DomainSampler + ?Sized>(
    class: &FiniteHypothesisClass,
    sampler: &S,
    n: usize,
    data_trials: usize,
    sigma_trials: usize,
    seed: u64,
) -> Result<ComplexityEstimate> {
    if n == 0 || data_trials == 0 || sigma_trials == 0 {
        return Err(Error::invalid("Rademacher budgets must be at least 1"));
    }
    let inner = (0..data_trials as u64)
        .into_par_iter()
        .map(|d| {
            let mut rng = rng_for(seed, &[stream::RADEMACHER_DATA, d]);
            let pts = sampler.draw(n, &mut rng);
            let m = evaluate_class(class, &pts)?;
            rademacher_empirical(&m, sigma_trials, derive_seed(seed, &[stream::SIGMA, d]))
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = inner.iter().map(|e| e.value).collect();
    let (value, outer_se) = mean_se(&values);
    let std_error = if data_trials == 1 { inner[0].std_error } else { outer_se };
    Ok(ComplexityEstimate {
        kind: ComplexityKind::RademacherExpected,
        value,
        radius: None,
        trials: data_trials * sigma_trials,
        std_error,
        centers: Vec::new(),
        lower_estimate: false,
    })
}
