//! Hypotheses, losses and the loss class `F = { z -> loss(g(x), y) : g in G }`
//! over an explicit finite set of hypotheses.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{read_json, DomainId, LabeledSample};
use crate::error::{Error, Result};
use crate::linalg::dot;

/// `g(x) = <weights, x> + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

impl LinearHypothesis {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
            return Err(Error::invalid("hypothesis coefficients must be finite"));
        }
        Ok(Self { weights, bias })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

/// A hypothesis given by an explicit table of `(x, g(x))` pairs.
///
/// Lookups compare inputs exactly; an input missing from the table is an
/// evaluation error. Meant for discrete domains where the support is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedHypothesis {
    pub table: Vec<(Vec<f64>, f64)>,
}

impl TabulatedHypothesis {
    pub fn new(table: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (x, v) in &table {
            if !v.is_finite() || x.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid("tabulated hypothesis entries must be finite"));
            }
            if !seen.insert(bits(x)) {
                return Err(Error::invalid("tabulated hypothesis lists an input twice"));
            }
        }
        Ok(Self { table })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.table
            .iter()
            .find(|(k, _)| k.as_slice() == x)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Evaluation(format!("tabulated hypothesis undefined at {x:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Linear(LinearHypothesis),
    Tabulated(TabulatedHypothesis),
}

impl Hypothesis {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Hypothesis::Linear(h) => h.predict(x),
            Hypothesis::Tabulated(h) => h.predict(x),
        }
    }

    fn key(&self) -> (u8, Vec<u64>) {
        match self {
            Hypothesis::Linear(h) => {
                let mut k = bits(&h.weights);
                k.push(h.bias.to_bits());
                (0, k)
            }
            Hypothesis::Tabulated(h) => {
                let mut rows: Vec<Vec<u64>> = h
                    .table
                    .iter()
                    .map(|(x, v)| {
                        let mut r = bits(x);
                        r.push(v.to_bits());
                        r
                    })
                    .collect();
                rows.sort();
                (1, rows.concat())
            }
        }
    }
}

impl From<LinearHypothesis> for Hypothesis {
    fn from(h: LinearHypothesis) -> Self {
        Hypothesis::Linear(h)
    }
}

impl From<TabulatedHypothesis> for Hypothesis {
    fn from(h: TabulatedHypothesis) -> Self {
        Hypothesis::Tabulated(h)
    }
}

fn bits(x: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, so normalise before hashing
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Absolute,
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct LossRange {
    lo: f64,
    hi: f64,
}

impl LossRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("loss range [{lo}, {hi}] needs a < b")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        self.lo.max(self.hi.min(v))
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

impl TryFrom<(f64, f64)> for LossRange {
    type Error = Error;

    fn try_from((lo, hi): (f64, f64)) -> Result<Self> {
        LossRange::new(lo, hi)
    }
}

impl From<LossRange> for (f64, f64) {
    fn from(r: LossRange) -> Self {
        (r.lo, r.hi)
    }
}

/// A loss with an optional clamp to `[a, b]` applied after evaluation.
///
/// The bounded default clamps to `[0, 1]`. Without a clamp the range is
/// recorded from observed values when a [`FunctionValueMatrix`] is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossFunction {
    pub kind: LossKind,
    #[serde(default)]
    pub clamp: Option<LossRange>,
}

impl Default for LossFunction {
    fn default() -> Self {
        Self::bounded(LossKind::Squared, LossRange::unit())
    }
}

impl LossFunction {
    pub fn bounded(kind: LossKind, range: LossRange) -> Self {
        Self {
            kind,
            clamp: Some(range),
        }
    }

    pub fn unclamped(kind: LossKind) -> Self {
        Self { kind, clamp: None }
    }

    pub fn raw(&self, prediction: f64, label: f64) -> f64 {
        let d = prediction - label;
        match self.kind {
            LossKind::Squared => d * d,
            LossKind::Absolute => d.abs(),
        }
    }

    pub fn eval(&self, prediction: f64, label: f64) -> Result<f64> {
        if !prediction.is_finite() || !label.is_finite() {
            return Err(Error::Evaluation(format!(
                "loss of prediction {prediction} against label {label}"
            )));
        }
        let v = self.raw(prediction, label);
        let v = match self.clamp {
            Some(r) => r.clamp(v),
            None => v,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("loss overflowed to {v}")))
        }
    }

    /// Loss of hypothesis `h` at sample `z`.
    pub fn at(&self, h: &Hypothesis, z: &LabeledSample) -> Result<f64> {
        self.eval(h.predict(&z.x)?, z.y)
    }
}

/// Nonempty list of pairwise distinct hypotheses together with their loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteHypothesisClass {
    members: Vec<Hypothesis>,
    loss: LossFunction,
}

impl FiniteHypothesisClass {
    pub fn new(members: Vec<Hypothesis>, loss: LossFunction) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("hypothesis class is empty"));
        }
        let mut seen = HashSet::with_capacity(members.len());
        for (i, m) in members.iter().enumerate() {
            if !seen.insert(m.key()) {
                return Err(Error::invalid(format!("hypothesis {i} duplicates an earlier member")));
            }
        }
        Ok(Self { members, loss })
    }

    pub fn linear(members: Vec<LinearHypothesis>, loss: LossFunction) -> Result<Self> {
        Self::new(members.into_iter().map(Hypothesis::Linear).collect(), loss)
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn loss(&self) -> &LossFunction {
        &self.loss
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: ClassFile = read_json(path)?;
        file.into_class()
    }
}

/// On-disk class description: a list of linear members and a loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFile {
    pub members: Vec<LinearHypothesis>,
    pub loss: LossFunction,
}

impl ClassFile {
    pub fn into_class(self) -> Result<FiniteHypothesisClass> {
        for m in &self.members {
            LinearHypothesis::new(m.weights.clone(), m.bias)?;
        }
        FiniteHypothesisClass::linear(self.members, self.loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Original,
    Ghost,
}

/// Provenance of one column of a [`FunctionValueMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointTag {
    pub domain: DomainId,
    pub slot: Slot,
}

impl PointTag {
    pub fn original(domain: DomainId) -> Self {
        Self {
            domain,
            slot: Slot::Original,
        }
    }

    pub fn ghost(domain: DomainId) -> Self {
        Self {
            domain,
            slot: Slot::Ghost,
        }
    }
}

/// Loss values of every class member (rows) on every point (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionValueMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    tags: Vec<PointTag>,
    range: LossRange,
}

impl FunctionValueMatrix {
    /// Builds a matrix from raw row-major values, checking every entry lies in `range`.
    pub fn from_rows(rows: Vec<Vec<f64>>, tags: Vec<PointTag>, range: LossRange) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("function value matrix needs at least one row"));
        }
        let cols = tags.len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in &rows {
            if r.len() != cols {
                return Err(Error::CountMismatch {
                    what: "matrix columns",
                    expected: cols,
                    found: r.len(),
                });
            }
            if let Some(v) = r.iter().find(|v| !range.contains(**v)) {
                return Err(Error::invalid(format!(
                    "value {v} outside [{}, {}]",
                    range.lo(),
                    range.hi()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
            tags,
            range,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn tags(&self) -> &[PointTag] {
        &self.tags
    }

    pub fn range(&self) -> LossRange {
        self.range
    }

    /// Column indices carrying the given tag, in column order.
    pub fn columns_with(&self, tag: PointTag) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.tags[j] == tag).collect()
    }
}

/// Evaluates every member on every point. All columns are tagged as original
/// target points; use [`evaluate_tagged`] to record other provenance.
pub fn evaluate_class(
    class: &FiniteHypothesisClass,
    points: &[LabeledSample],
) -> Result<FunctionValueMatrix> {
    let tagged: Vec<(PointTag, &LabeledSample)> = points
        .iter()
        .map(|p| (PointTag::original(DomainId::Target), p))
        .collect();
    evaluate_tagged(class, &tagged)
}

pub fn evaluate_tagged(
    class: &FiniteHypothesisClass,
    points: &[(PointTag, &LabeledSample)],
) -> Result<FunctionValueMatrix> {
    if points.is_empty() {
        return Err(Error::EmptyDataset("no evaluation points".into()));
    }
    let loss = class.loss;
    let rows: Vec<Vec<f64>> = class
        .members
        .par_iter()
        .map(|h| points.iter().map(|(_, z)| loss.at(h, z)).collect())
        .collect::<Result<_>>()?;
    let range = match loss.clamp {
        Some(r) => r,
        None => observed_range(&rows),
    };
    let tags = points.iter().map(|(t, _)| *t).collect();
    FunctionValueMatrix::from_rows(rows, tags, range)
}

/// `[0, max]` over observed values (losses are nonnegative), widened to
/// `[0, 1]` when every value is zero.
fn observed_range(rows: &[Vec<f64>]) -> LossRange {
    let hi = rows.iter().flatten().copied().fold(0.0, f64::max);
    if hi > 0.0 {
        LossRange { lo: 0.0, hi }
    } else {
        LossRange::unit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lin(w: &[f64], b: f64) -> LinearHypothesis {
        LinearHypothesis::new(w.to_vec(), b).unwrap()
    }

    fn z(x: &[f64], y: f64) -> LabeledSample {
        LabeledSample::new(x.to_vec(), y).unwrap()
    }

    #[test]
    fn predict_basics() {
        assert_eq!(lin(&[0.0, 0.0], 2.5).predict(&[7.0, -1.0]).unwrap(), 2.5);
        assert_eq!(lin(&[1.0, 0.0, 0.0], 0.0).predict(&[3.0, 4.0, 5.0]).unwrap(), 3.0);
        assert!(matches!(
            lin(&[1.0], 0.0).predict(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn loss_examples() {
        let abs = LossFunction::bounded(LossKind::Absolute, LossRange::new(0.0, 1.0).unwrap());
        assert_eq!(abs.eval(0.7, 0.7).unwrap(), 0.0);
        let shifted = LossFunction::bounded(LossKind::Absolute, LossRange::new(0.25, 1.0).unwrap());
        assert_eq!(shifted.eval(0.7, 0.7).unwrap(), 0.25);
        let sq = LossFunction::bounded(LossKind::Squared, LossRange::new(0.0, 100.0).unwrap());
        assert_eq!(sq.eval(3.0, 1.0).unwrap(), 4.0);
        let sq1 = LossFunction::default();
        assert_eq!(sq1.eval(3.0, 1.0).unwrap(), 1.0);
        assert!(sq1.eval(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let err = FiniteHypothesisClass::linear(
            vec![lin(&[1.0], 0.0), lin(&[2.0], 0.0), lin(&[1.0], 0.0)],
            LossFunction::default(),
        );
        assert!(err.is_err());
        assert!(FiniteHypothesisClass::linear(vec![], LossFunction::default()).is_err());
    }

    #[test]
    fn shapes_and_entries() {
        let class = FiniteHypothesisClass::linear(vec![lin(&[1.0], 0.0)], LossFunction::default())
            .unwrap();
        let m = evaluate_class(&class, &[z(&[0.5], 0.0)]).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 1));
        assert_eq!(m.get(0, 0), 0.25);

        let loss = LossFunction::bounded(LossKind::Absolute, LossRange::new(0.0, 2.0).unwrap());
        let class =
            FiniteHypothesisClass::linear(vec![lin(&[1.0], 0.0), lin(&[-1.0], 0.5)], loss).unwrap();
        let pts = [z(&[0.0], 1.0), z(&[1.0], 0.0), z(&[2.0], -1.0)];
        let m = evaluate_class(&class, &pts).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        for (i, h) in class.members().iter().enumerate() {
            for (j, p) in pts.iter().enumerate() {
                let expect = (h.predict(&p.x).unwrap() - p.y).abs().clamp(0.0, 2.0);
                assert_eq!(m.get(i, j), expect);
            }
        }
    }

    #[test]
    fn unclamped_range_recorded() {
        let class = FiniteHypothesisClass::linear(
            vec![lin(&[1.0], 0.0)],
            LossFunction::unclamped(LossKind::Squared),
        )
        .unwrap();
        let m = evaluate_class(&class, &[z(&[3.0], 0.0), z(&[1.0], 0.0)]).unwrap();
        assert_eq!(m.range(), LossRange::new(0.0, 9.0).unwrap());
    }

    #[test]
    fn tabulated_lookup() {
        let t = TabulatedHypothesis::new(vec![(vec![0.0], 1.0), (vec![1.0], -1.0)]).unwrap();
        assert_eq!(t.predict(&[1.0]).unwrap(), -1.0);
        assert!(t.predict(&[2.0]).is_err());
    }

    #[test]
    fn class_json() {
        let text = r#"{"members":[{"weights":[1.0,0.0]},{"weights":[0.0,1.0],"bias":0.5}],
                       "loss":{"kind":"absolute","clamp":[0.0,1.0]}}"#;
        let f: ClassFile = serde_json::from_str(text).unwrap();
        let class = f.into_class().unwrap();
        assert_eq!(class.len(), 2);
        assert_eq!(class.loss().kind, LossKind::Absolute);
    }

    proptest! {
        #[test]
        fn entries_in_range_and_permutation_equivariant(
            ws in prop::collection::vec(-3.0f64..3.0, 2..6),
            xs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..12),
            lo in -0.5f64..0.5, width in 0.1f64..3.0,
            shift in 0usize..12,
        ) {
            let members: Vec<LinearHypothesis> =
                ws.iter().enumerate().map(|(i, w)| lin(&[*w], i as f64 * 0.1)).collect();
            let range = LossRange::new(lo, lo + width).unwrap();
            let class = FiniteHypothesisClass::linear(
                members, LossFunction::bounded(LossKind::Squared, range)).unwrap();
            let pts: Vec<LabeledSample> = xs.iter().map(|(x, y)| z(&[*x], *y)).collect();
            let m = evaluate_class(&class, &pts).unwrap();
            for i in 0..m.rows() {
                for &v in m.row(i) {
                    prop_assert!(range.contains(v));
                }
            }
            let n = pts.len();
            let rotated: Vec<LabeledSample> =
                (0..n).map(|j| pts[(j + shift) % n].clone()).collect();
            let r = evaluate_class(&class, &rotated).unwrap();
            for i in 0..m.rows() {
                for j in 0..n {
                    prop_assert_eq!(r.get(i, j), m.get(i, (j + shift) % n));
                }
            }
        }
    }
}
