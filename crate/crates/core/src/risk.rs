//! Empirical and expected risks, the weighted least-squares minimiser and
//! exact minimisation over finite classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteDomainSpec, DomainDataset, GaussianDomainSpec, MultiSourceBundle};
use crate::error::{Error, Result};
use crate::hypothesis::{evaluate_class, FiniteHypothesisClass, Hypothesis, LinearHypothesis, LossFunction};
use crate::linalg::{mean, norm2, SymMatrix};
use crate::rng::{blocks, rng_for, stream};

/// Tolerance on `sum_k w_k = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// The pair `(tau, w)` of the combined risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsRepr", into = "WeightsRepr")]
pub struct MixtureWeights {
    tau: f64,
    w: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsRepr {
    tau: f64,
    w: Vec<f64>,
}

impl TryFrom<WeightsRepr> for MixtureWeights {
    type Error = Error;

    fn try_from(r: WeightsRepr) -> Result<Self> {
        MixtureWeights::new(r.tau, r.w)
    }
}

impl From<MixtureWeights> for WeightsRepr {
    fn from(m: MixtureWeights) -> Self {
        WeightsRepr { tau: m.tau, w: m.w }
    }
}

impl MixtureWeights {
    pub fn new(tau: f64, w: Vec<f64>) -> Result<Self> {
        if !(tau.is_finite() && (0.0..1.0).contains(&tau)) {
            return Err(Error::invalid(format!("tau = {tau} must lie in [0, 1)")));
        }
        if w.is_empty() {
            return Err(Error::invalid("source weights must be nonempty"));
        }
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("source weight {v} outside [0, 1]")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("source weights sum to {total}, expected 1")));
        }
        Ok(Self { tau, w })
    }

    /// `w = (w_1, 1 - w_1)` for two sources.
    pub fn two_source(tau: f64, w1: f64) -> Result<Self> {
        Self::new(tau, vec![w1, 1.0 - w1])
    }

    pub fn uniform(tau: f64, k: usize) -> Result<Self> {
        Self::new(tau, vec![1.0 / k as f64; k])
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn num_sources(&self) -> usize {
        self.w.len()
    }

    fn check_sources(&self, k: usize) -> Result<()> {
        if k != self.w.len() {
            return Err(Error::CountMismatch {
                what: "source weights",
                expected: k,
                found: self.w.len(),
            });
        }
        Ok(())
    }
}

/// `(N_T, N_1, ..., N_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizes {
    pub target: usize,
    pub sources: Vec<usize>,
}

impl SampleSizes {
    pub fn new(target: usize, sources: Vec<usize>) -> Result<Self> {
        if target == 0 || sources.is_empty() || sources.contains(&0) {
            return Err(Error::invalid("all sample sizes must be at least 1 and K >= 1"));
        }
        Ok(Self { target, sources })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source_total(&self) -> usize {
        self.sources.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.target + self.source_total()
    }

    /// `prod_k N_k` over sources as a float.
    pub fn source_product(&self) -> f64 {
        self.sources.iter().map(|&n| n as f64).product()
    }

    /// `prod_{i != k} N_i` over sources only.
    pub fn product_except(&self, k: usize) -> f64 {
        self.sources
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, &n)| n as f64)
            .product()
    }
}

/// `(tau, w)` with `w_k = N_k / sum N` and `tau = N_T / (N_T + sum N)`.
pub fn optimal_parameters(sizes: &SampleSizes) -> Result<MixtureWeights> {
    if sizes.target == 0 || sizes.sources.is_empty() || sizes.sources.contains(&0) {
        return Err(Error::invalid("optimal parameters need every size >= 1"));
    }
    let src = sizes.source_total() as f64;
    let mut w: Vec<f64> = sizes.sources.iter().map(|&n| n as f64 / src).collect();
    // put the rounding residue on the largest weight so the sum is 1 to the ulp
    let residue = 1.0 - w.iter().sum::<f64>();
    if let Some(max) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max += residue;
    }
    let tau = sizes.target as f64 / (sizes.target as f64 + src);
    MixtureWeights::new(tau, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub target_empirical: f64,
    pub source_weighted: f64,
    pub combined: f64,
}

/// Mean loss on the target sample.
pub fn empirical_risk_target(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("target".into()));
    }
    Ok(mean(values))
}

/// `sum_k w_k * mean_k`. Sources with zero weight may be empty.
pub fn empirical_risk_sources<S: AsRef<[f64]>>(per_source: &[S], weights: &MixtureWeights) -> Result<f64> {
    weights.check_sources(per_source.len())?;
    let mut total = 0.0;
    for (k, (vals, &wk)) in per_source.iter().zip(weights.w()).enumerate() {
        let vals = vals.as_ref();
        if vals.is_empty() {
            if wk == 0.0 {
                continue;
            }
            return Err(Error::EmptyDataset(format!("source{k}")));
        }
        total += wk * mean(vals);
    }
    Ok(total)
}

/// `tau * target + (1 - tau) * weighted sources`.
pub fn combined_risk<S: AsRef<[f64]>>(
    target: &[f64],
    per_source: &[S],
    weights: &MixtureWeights,
) -> Result<RiskReport> {
    let source_weighted = empirical_risk_sources(per_source, weights)?;
    let tau = weights.tau();
    let target_empirical = if target.is_empty() && tau == 0.0 {
        0.0
    } else {
        empirical_risk_target(target)?
    };
    Ok(RiskReport {
        target_empirical,
        source_weighted,
        combined: tau * target_empirical + (1.0 - tau) * source_weighted,
    })
}

/// Combined risk of a hypothesis on a bundle under the given loss.
pub fn bundle_risk(
    bundle: &MultiSourceBundle,
    h: &Hypothesis,
    loss: &LossFunction,
    weights: &MixtureWeights,
) -> Result<RiskReport> {
    let eval = |d: &DomainDataset| -> Result<Vec<f64>> {
        d.samples().iter().map(|z| loss.at(h, z)).collect()
    };
    let target = eval(bundle.target())?;
    let sources = bundle.sources().iter().map(eval).collect::<Result<Vec<_>>>()?;
    combined_risk(&target, &sources, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresOptions {
    /// Relative ridge: `ridge * trace(A) / p` is added to the diagonal.
    pub ridge: f64,
    pub fit_intercept: bool,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-10,
            fit_intercept: true,
        }
    }
}

/// Sufficient statistics `sum x x^T`, `sum y x`, `sum y^2`, `n` of one
/// dataset, with the constant feature appended when an intercept is fitted.
#[derive(Debug, Clone)]
pub struct Moments {
    gram: SymMatrix,
    xty: Vec<f64>,
    n: usize,
}

impl Moments {
    pub fn of(data: &DomainDataset, fit_intercept: bool) -> Result<Self> {
        let dim = data.dim().unwrap_or(0);
        let p = dim + usize::from(fit_intercept);
        let mut gram = SymMatrix::zeros(p);
        let mut xty = vec![0.0; p];
        let mut row = vec![1.0; p];
        for z in data.samples() {
            row[..dim].copy_from_slice(&z.x);
            gram.rank_one_upper(&row, 1.0);
            for (acc, v) in xty.iter_mut().zip(&row) {
                *acc += z.y * v;
            }
        }
        gram.symmetrize();
        Ok(Self {
            gram,
            xty,
            n: data.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn weighted_system(
    target: &Moments,
    sources: &[Moments],
    weights: &MixtureWeights,
) -> Result<(SymMatrix, Vec<f64>)> {
    weights.check_sources(sources.len())?;
    let mut parts: Vec<(f64, &Moments)> = Vec::with_capacity(sources.len() + 1);
    if weights.tau() > 0.0 {
        if target.is_empty() {
            return Err(Error::EmptyDataset("target (tau > 0)".into()));
        }
        parts.push((weights.tau() / target.n as f64, target));
    }
    for (k, (m, &wk)) in sources.iter().zip(weights.w()).enumerate() {
        let c = (1.0 - weights.tau()) * wk;
        if c == 0.0 {
            continue;
        }
        if m.is_empty() {
            return Err(Error::EmptyDataset(format!("source{k}")));
        }
        parts.push((c / m.n as f64, m));
    }
    if parts.is_empty() {
        return Err(Error::EmptyDataset("no sample carries positive weight".into()));
    }
    let p = parts[0].1.xty.len();
    let mut a = SymMatrix::zeros(p);
    let mut b = vec![0.0; p];
    for (c, m) in parts {
        if m.xty.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: m.xty.len(),
            });
        }
        for i in 0..p {
            for j in 0..p {
                a.add(i, j, c * m.gram.get(i, j));
            }
            b[i] += c * m.xty[i];
        }
    }
    Ok((a, b))
}

/// Minimises the weighted squared loss from precomputed moments.
pub fn solve_from_moments(
    target: &Moments,
    sources: &[Moments],
    weights: &MixtureWeights,
    opts: &LeastSquaresOptions,
) -> Result<LinearHypothesis> {
    if !(opts.ridge.is_finite() && opts.ridge >= 0.0) {
        return Err(Error::invalid("ridge must be a finite nonnegative number"));
    }
    let (mut a, b) = weighted_system(target, sources, weights)?;
    let p = a.dim();
    if opts.ridge > 0.0 {
        let add = opts.ridge * a.trace() / p as f64;
        for i in 0..p {
            a.add(i, i, add);
        }
    }
    let theta = a.cholesky_solve(&b, 1e-12)?;
    let (weights_part, bias) = if opts.fit_intercept {
        (theta[..p - 1].to_vec(), theta[p - 1])
    } else {
        (theta, 0.0)
    };
    LinearHypothesis::new(weights_part, bias)
}

/// Minimiser of `tau/N_T sum_T (g(x)-y)^2 + (1-tau) sum_k w_k/N_k sum_k (g(x)-y)^2`.
pub fn solve_weighted_least_squares(
    bundle: &MultiSourceBundle,
    weights: &MixtureWeights,
    opts: &LeastSquaresOptions,
) -> Result<LinearHypothesis> {
    let dim = bundle
        .dim()
        .ok_or_else(|| Error::EmptyDataset("bundle has no samples".into()))?;
    let target = moments_with_dim(bundle.target(), dim, opts.fit_intercept)?;
    let sources = bundle
        .sources()
        .iter()
        .map(|d| moments_with_dim(d, dim, opts.fit_intercept))
        .collect::<Result<Vec<_>>>()?;
    solve_from_moments(&target, &sources, weights, opts)
}

fn moments_with_dim(d: &DomainDataset, dim: usize, fit_intercept: bool) -> Result<Moments> {
    if d.is_empty() {
        let p = dim + usize::from(fit_intercept);
        return Ok(Moments {
            gram: SymMatrix::zeros(p),
            xty: vec![0.0; p],
            n: 0,
        });
    }
    Moments::of(d, fit_intercept)
}

fn per_sample_weights<'a>(
    bundle: &'a MultiSourceBundle,
    weights: &MixtureWeights,
) -> Result<Vec<(f64, &'a DomainDataset)>> {
    weights.check_sources(bundle.num_sources())?;
    let mut out = Vec::new();
    if weights.tau() > 0.0 && !bundle.target().is_empty() {
        out.push((weights.tau() / bundle.target().len() as f64, bundle.target()));
    }
    for (d, &wk) in bundle.sources().iter().zip(weights.w()) {
        let c = (1.0 - weights.tau()) * wk;
        if c > 0.0 && !d.is_empty() {
            out.push((c / d.len() as f64, d));
        }
    }
    Ok(out)
}

/// Weighted squared-loss objective of `h` (no ridge term).
pub fn least_squares_objective(
    bundle: &MultiSourceBundle,
    weights: &MixtureWeights,
    h: &LinearHypothesis,
) -> Result<f64> {
    let mut total = 0.0;
    for (c, d) in per_sample_weights(bundle, weights)? {
        for z in d.samples() {
            let r = h.predict(&z.x)? - z.y;
            total += c * r * r;
        }
    }
    Ok(total)
}

/// Gradient of [`least_squares_objective`] with respect to `(weights, bias)`;
/// the bias component is last when `with_bias` is set.
pub fn least_squares_gradient(
    bundle: &MultiSourceBundle,
    weights: &MixtureWeights,
    h: &LinearHypothesis,
    with_bias: bool,
) -> Result<Vec<f64>> {
    let p = h.dim();
    let mut g = vec![0.0; p + usize::from(with_bias)];
    for (c, d) in per_sample_weights(bundle, weights)? {
        for z in d.samples() {
            let r = 2.0 * c * (h.predict(&z.x)? - z.y);
            for (gi, xi) in g.iter_mut().zip(&z.x) {
                *gi += r * xi;
            }
            if with_bias {
                g[p] += r;
            }
        }
    }
    Ok(g)
}

/// Relative first-order optimality measure `|grad| / (1 + |theta|)`.
pub fn optimality_residual(
    bundle: &MultiSourceBundle,
    weights: &MixtureWeights,
    h: &LinearHypothesis,
    with_bias: bool,
) -> Result<f64> {
    let g = least_squares_gradient(bundle, weights, h, with_bias)?;
    let mut theta = h.weights.clone();
    if with_bias {
        theta.push(h.bias);
    }
    Ok(norm2(&g) / (1.0 + norm2(&theta)))
}

/// Result of exact minimisation over a finite class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteErm {
    pub index: usize,
    pub risk: RiskReport,
    /// Combined risk of every member, in member order.
    pub risks: Vec<f64>,
}

/// Exact argmin of the combined risk over a finite class; ties go to the lowest index.
pub fn erm_finite(
    class: &FiniteHypothesisClass,
    bundle: &MultiSourceBundle,
    weights: &MixtureWeights,
) -> Result<FiniteErm> {
    weights.check_sources(bundle.num_sources())?;
    let eval = |d: &DomainDataset| -> Result<Option<Vec<Vec<f64>>>> {
        if d.is_empty() {
            return Ok(None);
        }
        let m = evaluate_class(class, d.samples())?;
        Ok(Some((0..m.rows()).map(|i| m.row(i).to_vec()).collect()))
    };
    let target = eval(bundle.target())?;
    let sources = bundle.sources().iter().map(eval).collect::<Result<Vec<_>>>()?;
    let reports = (0..class.len())
        .map(|i| {
            let t: &[f64] = target.as_ref().map(|m| m[i].as_slice()).unwrap_or(&[]);
            let s: Vec<&[f64]> = sources
                .iter()
                .map(|m| m.as_ref().map(|m| m[i].as_slice()).unwrap_or(&[]))
                .collect();
            combined_risk(t, &s, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let risks: Vec<f64> = reports.iter().map(|r| r.combined).collect();
    let index = argmin_first(&risks);
    Ok(FiniteErm {
        index,
        risk: reports[index],
        risks,
    })
}

/// Lowest index attaining the minimum.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Expected risk with an optional Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRisk {
    pub value: f64,
    pub std_error: Option<f64>,
    pub draws: Option<usize>,
}

/// Either an exact discrete domain or a Gaussian one with a Monte Carlo budget.
#[derive(Debug, Clone)]
pub enum RiskModel<'a> {
    Discrete(&'a DiscreteDomainSpec),
    Gaussian {
        spec: &'a GaussianDomainSpec,
        draws: usize,
        seed: u64,
    },
}

const MC_BLOCK: usize = 4096;

pub fn expected_risk(model: &RiskModel<'_>, h: &Hypothesis, loss: &LossFunction) -> Result<ExpectedRisk> {
    match model {
        RiskModel::Discrete(spec) => {
            let mut total = 0.0;
            for a in spec.atoms() {
                total += a.prob * loss.at(h, &a.sample)?;
            }
            Ok(ExpectedRisk {
                value: total,
                std_error: None,
                draws: None,
            })
        }
        RiskModel::Gaussian { spec, draws, seed } => {
            if *draws == 0 {
                return Err(Error::invalid("Monte Carlo budget must be at least 1"));
            }
            spec.validate()?;
            let parts = blocks(*draws, MC_BLOCK)
                .into_par_iter()
                .map(|(b, _, len)| {
                    let mut rng = rng_for(*seed, &[stream::RISK_MC, b]);
                    let samples = crate::domain::DomainSampler::draw(*spec, len, &mut rng);
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for z in &samples {
                        let v = loss.at(h, z)?;
                        s += v;
                        s2 += v * v;
                    }
                    Ok((s, s2))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            let (s, s2) = parts
                .iter()
                .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
            let n = *draws as f64;
            let mean = s / n;
            let var = if *draws > 1 {
                ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(ExpectedRisk {
                value: mean,
                std_error: Some((var / n).sqrt()),
                draws: Some(*draws),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{synthesize_domain, DomainId, LabeledSample};
    use crate::hypothesis::{LossKind, LossRange};
    use proptest::prelude::*;
    use rand::Rng;

    fn z(x: &[f64], y: f64) -> LabeledSample {
        LabeledSample::new(x.to_vec(), y).unwrap()
    }

    #[test]
    fn weights_validation() {
        assert!(MixtureWeights::new(1.0, vec![1.0]).is_err());
        assert!(MixtureWeights::new(0.5, vec![0.6, 0.6]).is_err());
        assert!(MixtureWeights::new(0.5, vec![1.2, -0.2]).is_err());
        assert!(MixtureWeights::uniform(0.0, 3).is_ok());
    }

    #[test]
    fn risk_examples() {
        assert!((empirical_risk_target(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(empirical_risk_target(&[0.37; 100]).unwrap(), 0.37);
        assert!(empirical_risk_target(&[]).is_err());

        let w = MixtureWeights::two_source(0.0, 0.5).unwrap();
        let s = empirical_risk_sources(&[vec![0.1], vec![0.5]], &w).unwrap();
        assert!((s - 0.3).abs() < 1e-15);
        let w1 = MixtureWeights::two_source(0.0, 1.0).unwrap();
        assert_eq!(empirical_risk_sources(&[vec![0.1, 0.3], vec![0.5]], &w1).unwrap(), 0.2);
        let bad = MixtureWeights::uniform(0.0, 3).unwrap();
        assert!(matches!(
            empirical_risk_sources(&[vec![0.1]], &bad),
            Err(Error::CountMismatch { .. })
        ));

        let r = combined_risk(&[0.9], &[vec![0.1], vec![0.5]], &w).unwrap();
        assert_eq!(r.combined, r.source_weighted);
        let half = MixtureWeights::new(0.5, vec![1.0]).unwrap();
        let r = combined_risk(&[0.2], &[vec![0.4]], &half).unwrap();
        assert!((r.combined - 0.3).abs() < 1e-15);
    }

    #[test]
    fn optimal_parameter_examples() {
        let w = optimal_parameters(&SampleSizes::new(100, vec![2000, 2000]).unwrap()).unwrap();
        assert_eq!(w.w(), &[0.5, 0.5]);
        assert!((w.tau() - 100.0 / 4100.0).abs() < 1e-15);
        let w = optimal_parameters(&SampleSizes::new(100, vec![1000, 3000]).unwrap()).unwrap();
        assert!((w.w()[0] - 0.25).abs() < 1e-15 && (w.w()[1] - 0.75).abs() < 1e-15);
        assert!((w.tau() - 0.024390243902439).abs() < 1e-12);
        let w = optimal_parameters(&SampleSizes::new(5, vec![7, 7, 7]).unwrap()).unwrap();
        for v in w.w() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    fn bundle(t: Vec<LabeledSample>, s: Vec<Vec<LabeledSample>>) -> MultiSourceBundle {
        MultiSourceBundle::new(
            s.into_iter()
                .enumerate()
                .map(|(k, v)| DomainDataset::new(DomainId::Source(k), v).unwrap())
                .collect(),
            DomainDataset::new(DomainId::Target, t).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn interpolates_square_system() {
        let b = bundle(
            vec![],
            vec![vec![z(&[1.0, 0.0], 2.0), z(&[0.0, 1.0], -1.0), z(&[1.0, 1.0], 4.0)]],
        );
        let w = MixtureWeights::new(0.0, vec![1.0]).unwrap();
        let opts = LeastSquaresOptions {
            ridge: 0.0,
            fit_intercept: true,
        };
        let h = solve_weighted_least_squares(&b, &w, &opts).unwrap();
        assert!(least_squares_objective(&b, &w, &h).unwrap() < 1e-20);
        assert!((h.weights[0] - 5.0).abs() < 1e-10);
        assert!((h.weights[1] - 2.0).abs() < 1e-10);
        assert!((h.bias + 3.0).abs() < 1e-10);
    }

    #[test]
    fn singular_without_ridge() {
        let b = bundle(vec![], vec![vec![z(&[1.0, 1.0], 1.0), z(&[2.0, 2.0], 2.0)]]);
        let w = MixtureWeights::new(0.0, vec![1.0]).unwrap();
        let opts = LeastSquaresOptions {
            ridge: 0.0,
            fit_intercept: false,
        };
        let err = solve_weighted_least_squares(&b, &w, &opts).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
        assert!(err.to_string().contains("ridge > 0"));
        let opts = LeastSquaresOptions {
            ridge: 1e-8,
            fit_intercept: false,
        };
        assert!(solve_weighted_least_squares(&b, &w, &opts).is_ok());
    }

    fn random_bundle(seed: u64, dim: usize) -> MultiSourceBundle {
        let spec = GaussianDomainSpec {
            input_mean: 0.0,
            input_var: 1.0,
            dim,
            beta_mean: 0.5,
            beta_var: 1.0,
            noise_mean: 0.0,
            noise_var: 0.1,
        };
        let mut s2 = spec.clone();
        s2.input_mean = 0.3;
        MultiSourceBundle::new(
            vec![
                synthesize_domain(&spec, DomainId::Source(0), 60, seed).unwrap(),
                synthesize_domain(&s2, DomainId::Source(1), 80, seed).unwrap(),
            ],
            synthesize_domain(&spec, DomainId::Target, 30, seed).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn duplication_invariance() {
        let b = random_bundle(3, 4);
        let w = MixtureWeights::new(0.3, vec![0.4, 0.6]).unwrap();
        let opts = LeastSquaresOptions::default();
        let h = solve_weighted_least_squares(&b, &w, &opts).unwrap();
        let dup = |d: &DomainDataset| {
            let mut v = d.samples().to_vec();
            v.extend_from_slice(d.samples());
            DomainDataset::new(d.domain(), v).unwrap()
        };
        let b2 = MultiSourceBundle::new(b.sources().iter().map(dup).collect(), dup(b.target())).unwrap();
        let h2 = solve_weighted_least_squares(&b2, &w, &opts).unwrap();
        for (a, c) in h.weights.iter().zip(&h2.weights) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_gradient_descent() {
        let b = random_bundle(11, 20);
        let w = MixtureWeights::new(0.2, vec![0.7, 0.3]).unwrap();
        let opts = LeastSquaresOptions::default();
        let h = solve_weighted_least_squares(&b, &w, &opts).unwrap();
        assert!(optimality_residual(&b, &w, &h, true).unwrap() <= 1e-6);

        // plain gradient descent with a fixed step below 1/L
        let mut g = LinearHypothesis::new(vec![0.0; 20], 0.0).unwrap();
        let step = 0.05;
        for _ in 0..20000 {
            let grad = least_squares_gradient(&b, &w, &g, true).unwrap();
            if norm2(&grad) < 1e-12 {
                break;
            }
            for (c, d) in g.weights.iter_mut().zip(&grad) {
                *c -= step * d;
            }
            g.bias -= step * grad[20];
        }
        for (a, c) in h.weights.iter().zip(&g.weights) {
            assert!((a - c).abs() < 1e-5, "{a} vs {c}");
        }
        assert!((h.bias - g.bias).abs() < 1e-5);

        let base = least_squares_objective(&b, &w, &h).unwrap();
        let mut rng = rng_for(5, &[]);
        for _ in 0..100 {
            let mut p = h.clone();
            for c in p.weights.iter_mut() {
                *c += rng.random_range(-1e-3..1e-3);
            }
            assert!(least_squares_objective(&b, &w, &p).unwrap() >= base);
        }
    }

    #[test]
    fn erm_ties_go_to_lowest_index() {
        let loss = LossFunction::bounded(LossKind::Absolute, LossRange::unit());
        let class = FiniteHypothesisClass::linear(
            vec![
                LinearHypothesis::new(vec![0.0], 0.5).unwrap(),
                LinearHypothesis::new(vec![0.0], 0.0).unwrap(),
                LinearHypothesis::new(vec![0.0], 1.0).unwrap(),
            ],
            loss,
        )
        .unwrap();
        // targets 0 and 1: constants 0, 0.5 and 1 all have mean absolute loss 0.5
        let b = bundle(vec![z(&[0.0], 0.0), z(&[0.0], 1.0)], vec![vec![z(&[0.0], 0.0), z(&[0.0], 1.0)]]);
        let w = MixtureWeights::new(0.5, vec![1.0]).unwrap();
        let res = erm_finite(&class, &b, &w).unwrap();
        assert_eq!(res.index, 0);
        assert_eq!(res.risks, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn expected_risk_discrete_and_gaussian() {
        let spec = DiscreteDomainSpec::from_pairs(vec![(z(&[1.0], 2.0), 0.25), (z(&[2.0], 4.0), 0.75)]).unwrap();
        let h: Hypothesis = LinearHypothesis::new(vec![2.0], 0.0).unwrap().into();
        let loss = LossFunction::unclamped(LossKind::Squared);
        let r = expected_risk(&RiskModel::Discrete(&spec), &h, &loss).unwrap();
        assert!(r.value <= 1e-20);
        let g: Hypothesis = LinearHypothesis::new(vec![1.0], 0.0).unwrap().into();
        let r = expected_risk(&RiskModel::Discrete(&spec), &g, &loss).unwrap();
        assert!((r.value - (0.25 * 1.0 + 0.75 * 4.0)).abs() < 1e-12);

        let gs = GaussianDomainSpec {
            input_mean: 0.0,
            input_var: 1.0,
            dim: 2,
            beta_mean: 1.0,
            beta_var: 0.5,
            noise_mean: 0.0,
            noise_var: 0.5,
        };
        let h: Hypothesis = LinearHypothesis::new(vec![1.0, 1.0], 0.0).unwrap().into();
        let a = expected_risk(&RiskModel::Gaussian { spec: &gs, draws: 100_000, seed: 1 }, &h, &loss).unwrap();
        let b = expected_risk(&RiskModel::Gaussian { spec: &gs, draws: 1_000_000, seed: 2 }, &h, &loss).unwrap();
        let se = (a.std_error.unwrap().powi(2) + b.std_error.unwrap().powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 4.0 * se);
        // E[(x.(1-beta))^2] + noise = 2 * 0.5 + 0.5
        assert!((b.value - 1.5).abs() < 0.02);
        assert!(expected_risk(&RiskModel::Gaussian { spec: &gs, draws: 0, seed: 2 }, &h, &loss).is_err());
    }

    proptest! {
        #[test]
        fn combined_is_affine_in_tau(
            t in prop::collection::vec(0.0f64..1.0, 1..10),
            s0 in prop::collection::vec(0.0f64..1.0, 1..10),
            s1 in prop::collection::vec(0.0f64..1.0, 1..10),
            w1 in 0.0f64..1.0, tau1 in 0.0f64..0.99, tau2 in 0.0f64..0.99,
        ) {
            let s = vec![s0, s1];
            let r = |tau: f64| combined_risk(&t, &s, &MixtureWeights::two_source(tau, w1).unwrap()).unwrap();
            let (a, b) = (r(tau1), r(tau2));
            let mid = r(0.5 * (tau1 + tau2));
            prop_assert!((mid.combined - 0.5 * (a.combined + b.combined)).abs() < 1e-12);
            prop_assert!((a.combined - (tau1 * a.target_empirical + (1.0 - tau1) * a.source_weighted)).abs() < 1e-12);
        }
    }
}
