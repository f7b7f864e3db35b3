//! Between-domain quantities over finite classes: the integral probability
//! metric, its source-weighted form, the discrepancy distance, the
//! labeling-function metric `Q` and the `H delta H` divergence.
//!
//! Every supremum is an exact maximum over the finite class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteDomainSpec, DomainDataset, LabeledSample};
use crate::error::{ensure_finite, Error, Result};
use crate::hypothesis::{FiniteHypothesisClass, Hypothesis, LossKind};

/// A distribution over labeled samples: uniform over a sample list, or an atom table.
#[derive(Debug, Clone, Copy)]
pub enum Dist<'a> {
    Empirical(&'a [LabeledSample]),
    Discrete(&'a DiscreteDomainSpec),
}

impl<'a> From<&'a DomainDataset> for Dist<'a> {
    fn from(d: &'a DomainDataset) -> Self {
        Dist::Empirical(d.samples())
    }
}

impl<'a> From<&'a DiscreteDomainSpec> for Dist<'a> {
    fn from(d: &'a DiscreteDomainSpec) -> Self {
        Dist::Discrete(d)
    }
}

impl<'a> Dist<'a> {
    fn len(&self) -> usize {
        match self {
            Dist::Empirical(s) => s.len(),
            Dist::Discrete(d) => d.len(),
        }
    }

    fn point(&self, j: usize) -> (f64, &'a LabeledSample) {
        match self {
            Dist::Empirical(s) => (1.0 / s.len() as f64, &s[j]),
            Dist::Discrete(d) => {
                let a = &d.atoms()[j];
                (a.prob, &a.sample)
            }
        }
    }

    fn check(&self) -> Result<()> {
        if self.len() == 0 {
            return Err(Error::EmptyDataset("distribution has no support points".into()));
        }
        Ok(())
    }

    /// `E f(z)`.
    pub fn expect(&self, f: impl Fn(&LabeledSample) -> Result<f64>) -> Result<f64> {
        self.check()?;
        let mut total = 0.0;
        for j in 0..self.len() {
            let (p, z) = self.point(j);
            total += p * ensure_finite(f(z)?, "function value")?;
        }
        Ok(total)
    }

    /// Predictions of every member at every support point (member-major).
    fn predictions(&self, class: &FiniteHypothesisClass) -> Result<Vec<Vec<f64>>> {
        class
            .members()
            .par_iter()
            .map(|h| (0..self.len()).map(|j| h.predict(&self.point(j).1.x)).collect())
            .collect()
    }

    fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.point(j).0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Ipm,
    WeightedIpm,
    Discrepancy,
    QMetric,
    HDeltaH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceValue {
    pub kind: DivergenceKind,
    pub value: f64,
    pub class_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Per-source IPMs for the weighted form.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub components: Vec<f64>,
}

impl DivergenceValue {
    fn new(kind: DivergenceKind, value: f64, class_size: usize) -> Self {
        Self {
            kind,
            value,
            class_size,
            lambda: None,
            components: Vec::new(),
        }
    }
}

/// `E f` under `dist` for every member's loss `f = loss(g(x), y)`.
pub fn member_expectations(class: &FiniteHypothesisClass, dist: Dist<'_>) -> Result<Vec<f64>> {
    dist.check()?;
    let loss = *class.loss();
    class
        .members()
        .par_iter()
        .map(|h| dist.expect(|z| loss.at(h, z)))
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `sup_f |E_S f - E_T f|`.
pub fn ipm(class: &FiniteHypothesisClass, s: Dist<'_>, t: Dist<'_>) -> Result<DivergenceValue> {
    let es = member_expectations(class, s)?;
    let et = member_expectations(class, t)?;
    Ok(DivergenceValue::new(DivergenceKind::Ipm, max_abs_diff(&es, &et), class.len()))
}

/// `sum_k w_k D_F(S_k, T)`.
pub fn weighted_ipm(
    class: &FiniteHypothesisClass,
    sources: &[Dist<'_>],
    t: Dist<'_>,
    w: &[f64],
) -> Result<DivergenceValue> {
    if sources.is_empty() {
        return Err(Error::invalid("weighted IPM needs at least one source"));
    }
    if sources.len() != w.len() {
        return Err(Error::CountMismatch {
            what: "source weights",
            expected: sources.len(),
            found: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("source weights must lie on the simplex"));
    }
    let et = member_expectations(class, t)?;
    let mut components = Vec::with_capacity(sources.len());
    for s in sources {
        components.push(max_abs_diff(&member_expectations(class, *s)?, &et));
    }
    let value = components.iter().zip(w).map(|(d, wk)| d * wk).sum();
    let mut out = DivergenceValue::new(DivergenceKind::WeightedIpm, value, class.len());
    out.components = components;
    Ok(out)
}

/// `E loss(g1(x), g2(x))` for every ordered pair, row-major `|G| x |G|`.
fn pair_expectations(class: &FiniteHypothesisClass, dist: Dist<'_>) -> Result<Vec<f64>> {
    dist.check()?;
    let preds = dist.predictions(class)?;
    let probs = dist.probs();
    let loss = *class.loss();
    let m = preds.len();
    (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / m, idx % m);
            let mut total = 0.0;
            for (j, p) in probs.iter().enumerate() {
                total += p * loss.eval(preds[a][j], preds[b][j])?;
            }
            Ok(total)
        })
        .collect()
}

/// `sup_{g1, g2} |E_S loss(g1, g2) - E_T loss(g1, g2)|` over ordered pairs.
pub fn discrepancy_distance(class: &FiniteHypothesisClass, s: Dist<'_>, t: Dist<'_>) -> Result<DivergenceValue> {
    let ps = pair_expectations(class, s)?;
    let pt = pair_expectations(class, t)?;
    Ok(DivergenceValue::new(
        DivergenceKind::Discrepancy,
        max_abs_diff(&ps, &pt),
        class.len(),
    ))
}

/// `sup_g |E_T loss(g(x), g*_T(x)) - E_T loss(g(x), g*_S(x))|`.
///
/// The labeling functions may lie outside the class.
pub fn q_label_metric(
    class: &FiniteHypothesisClass,
    t: Dist<'_>,
    g_star_s: &Hypothesis,
    g_star_t: &Hypothesis,
) -> Result<DivergenceValue> {
    t.check()?;
    let loss = *class.loss();
    let diffs = class
        .members()
        .par_iter()
        .map(|g| {
            let a = t.expect(|z| loss.eval(g.predict(&z.x)?, g_star_t.predict(&z.x)?))?;
            let b = t.expect(|z| loss.eval(g.predict(&z.x)?, g_star_s.predict(&z.x)?))?;
            Ok((a - b).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DivergenceValue::new(
        DivergenceKind::QMetric,
        diffs.into_iter().fold(0.0, f64::max),
        class.len(),
    ))
}

/// `inf_g { E_S loss(g, g*_S) + E_T loss(g, g*_T) }`.
pub fn lambda_close(
    class: &FiniteHypothesisClass,
    s: Dist<'_>,
    t: Dist<'_>,
    g_star_s: &Hypothesis,
    g_star_t: &Hypothesis,
) -> Result<f64> {
    s.check()?;
    t.check()?;
    let loss = *class.loss();
    let sums = class
        .members()
        .par_iter()
        .map(|g| {
            let a = s.expect(|z| loss.eval(g.predict(&z.x)?, g_star_s.predict(&z.x)?))?;
            let b = t.expect(|z| loss.eval(g.predict(&z.x)?, g_star_t.predict(&z.x)?))?;
            Ok(a + b)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.into_iter().fold(f64::INFINITY, f64::min))
}

/// The discrepancy scan restricted to absolute loss, with the optional
/// `lambda` of the `lambda`-close condition when labeling functions are given.
pub fn h_delta_h(
    class: &FiniteHypothesisClass,
    s: Dist<'_>,
    t: Dist<'_>,
    labeling: Option<(&Hypothesis, &Hypothesis)>,
) -> Result<DivergenceValue> {
    if class.loss().kind != LossKind::Absolute {
        return Err(Error::UnsupportedLoss(
            "the H delta H divergence is defined for the absolute loss".into(),
        ));
    }
    let mut d = discrepancy_distance(class, s, t)?;
    d.kind = DivergenceKind::HDeltaH;
    if let Some((gs, gt)) = labeling {
        d.lambda = Some(lambda_close(class, s, t, gs, gt)?);
    }
    Ok(d)
}
