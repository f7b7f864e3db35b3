//! Labeled samples, per-domain datasets and the two kinds of domain
//! specification: isotropic Gaussian generators and exact discrete atom
//! tables.
//!
//! Gaussian parameters are written `N(mean, var)` throughout: the second
//! argument is always a **variance**, never a standard deviation.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::rng::{rng_for, stream, SimRng};

/// One labeled example `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::invalid("sample coordinates must be finite"));
        }
        Ok(Self { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Which domain a dataset or point belongs to. Source indices are zero based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainId {
    Target,
    Source(usize),
}

impl DomainId {
    /// Integer tag used when deriving per-domain seeds.
    pub fn seed_tag(self) -> u64 {
        match self {
            DomainId::Target => 0,
            DomainId::Source(k) => k as u64 + 1,
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainId::Target => write!(f, "target"),
            DomainId::Source(k) => write!(f, "source{k}"),
        }
    }
}

/// Samples drawn from a single domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    domain: DomainId,
    samples: Vec<LabeledSample>,
}

impl DomainDataset {
    /// Builds a dataset, checking that every sample shares one input dimension.
    /// Empty datasets are allowed here; risk computations reject them.
    pub fn new(domain: DomainId, samples: Vec<LabeledSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dim = first.dim();
            for s in &samples {
                if s.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: s.dim(),
                    });
                }
                if s.x.iter().any(|v| !v.is_finite()) || !s.y.is_finite() {
                    return Err(Error::invalid("sample coordinates must be finite"));
                }
            }
        }
        Ok(Self { domain, samples })
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(LabeledSample::dim)
    }

    /// First `n` samples (or all of them when `n` exceeds the size).
    pub fn head(&self, n: usize) -> DomainDataset {
        DomainDataset {
            domain: self.domain,
            samples: self.samples[..n.min(self.len())].to_vec(),
        }
    }

    /// Splits into the first `n` samples and the remainder.
    pub fn split_at(&self, n: usize) -> (DomainDataset, DomainDataset) {
        let n = n.min(self.len());
        let (a, b) = self.samples.split_at(n);
        (
            DomainDataset {
                domain: self.domain,
                samples: a.to_vec(),
            },
            DomainDataset {
                domain: self.domain,
                samples: b.to_vec(),
            },
        )
    }

    /// Writes the dataset as CSV with header `x_0,...,x_{I-1},y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let dim = self.dim().unwrap_or(0);
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..dim).map(|i| format!("x_{i}")).collect();
        header.push("y".to_string());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.y.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(file)).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a dataset written by [`DomainDataset::write_csv`].
    pub fn read_csv<R: Read>(domain: DomainId, reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r
            .headers()
            .map_err(|e| Error::invalid(format!("csv header: {e}")))?
            .clone();
        let cols = header.len();
        if cols == 0 || &header[cols - 1] != "y" {
            return Err(Error::invalid("csv header must end with column `y`"));
        }
        for (i, name) in header.iter().take(cols - 1).enumerate() {
            if name != format!("x_{i}") {
                return Err(Error::invalid(format!(
                    "csv column {i} must be named x_{i}, found `{name}`"
                )));
            }
        }
        let mut samples = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::invalid(format!("csv row {line}: {e}")))?;
            let values = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("csv row {line}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != cols {
                return Err(Error::CountMismatch {
                    what: "csv columns",
                    expected: cols,
                    found: values.len(),
                });
            }
            let (x, y) = values.split_at(cols - 1);
            samples.push(LabeledSample::new(x.to_vec(), y[0])?);
        }
        DomainDataset::new(domain, samples)
    }

    pub fn load_csv(domain: DomainId, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(domain, BufReader::new(file))
    }
}

/// `K` source datasets plus one target dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceBundle {
    sources: Vec<DomainDataset>,
    target: DomainDataset,
}

impl MultiSourceBundle {
    pub fn new(sources: Vec<DomainDataset>, target: DomainDataset) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("a bundle needs at least one source domain"));
        }
        if target.domain() != DomainId::Target {
            return Err(Error::invalid("bundle target must be tagged Target"));
        }
        let mut dim: Option<usize> = target.dim();
        for (k, s) in sources.iter().enumerate() {
            if s.domain() != DomainId::Source(k) {
                return Err(Error::invalid(format!(
                    "bundle source {k} is tagged {}",
                    s.domain()
                )));
            }
            match (dim, s.dim()) {
                (Some(d), Some(e)) if d != e => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: e,
                    })
                }
                (None, Some(e)) => dim = Some(e),
                _ => {}
            }
        }
        Ok(Self { sources, target })
    }

    pub fn sources(&self) -> &[DomainDataset] {
        &self.sources
    }

    pub fn target(&self) -> &DomainDataset {
        &self.target
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.target
            .dim()
            .or_else(|| self.sources.iter().find_map(DomainDataset::dim))
    }
}

/// One support point of a discrete domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub sample: LabeledSample,
    pub prob: f64,
}

/// A domain with finitely many atoms, so expectations are exact sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteSpecRepr", into = "DiscreteSpecRepr")]
pub struct DiscreteDomainSpec {
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteSpecRepr {
    atoms: Vec<Atom>,
}

impl TryFrom<DiscreteSpecRepr> for DiscreteDomainSpec {
    type Error = Error;

    fn try_from(repr: DiscreteSpecRepr) -> Result<Self> {
        DiscreteDomainSpec::new(repr.atoms)
    }
}

impl From<DiscreteDomainSpec> for DiscreteSpecRepr {
    fn from(spec: DiscreteDomainSpec) -> Self {
        DiscreteSpecRepr { atoms: spec.atoms }
    }
}

/// Tolerance on the total mass of a discrete specification.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

impl DiscreteDomainSpec {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("discrete domain needs at least one atom"));
        }
        let dim = atoms[0].sample.dim();
        let mut total = 0.0;
        for a in &atoms {
            if !(a.prob.is_finite() && a.prob >= 0.0) {
                return Err(Error::invalid(format!("atom probability {} is invalid", a.prob)));
            }
            if a.sample.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: a.sample.dim(),
                });
            }
            if a.sample.x.iter().any(|v| !v.is_finite()) || !a.sample.y.is_finite() {
                return Err(Error::invalid("atom coordinates must be finite"));
            }
            total += a.prob;
        }
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::invalid(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms })
    }

    /// Convenience constructor from `(sample, probability)` pairs.
    pub fn from_pairs(pairs: Vec<(LabeledSample, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(sample, prob)| Atom { sample, prob })
                .collect(),
        )
    }

    /// Uniform distribution over the samples of a dataset (the empirical measure).
    pub fn empirical(dataset: &DomainDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset(format!("{}", dataset.domain())));
        }
        let p = 1.0 / dataset.len() as f64;
        let atoms: Vec<Atom> = dataset
            .samples()
            .iter()
            .map(|s| Atom {
                sample: s.clone(),
                prob: p,
            })
            .collect();
        // the 1/n masses may miss 1 by more than the tolerance for huge n
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].sample.dim()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.prob).collect()
    }

    /// Draws `n` i.i.d. atom indices.
    pub fn sample_indices(&self, n: usize, rng: &mut SimRng) -> Vec<usize> {
        atom_sampler(&self.probs()).sample_iter(rng).take(n).collect()
    }

    pub fn draw_dataset(&self, domain: DomainId, n: usize, seed: u64) -> Result<DomainDataset> {
        if n == 0 {
            return Err(Error::EmptyDataset(format!("requested 0 samples for {domain}")));
        }
        let mut rng = rng_for(seed, &[stream::DATA, domain.seed_tag()]);
        DomainDataset::new(domain, self.draw(n, &mut rng))
    }
}

/// Weighted index sampler over atom probabilities.
///
/// Panics only if every probability is zero, which a validated spec excludes.
pub(crate) fn atom_sampler(probs: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(probs).expect("validated atom probabilities")
}

/// Exact expectation `Σ p·f(z)` over the atoms of a discrete domain.
pub fn enumerate_expectation<F>(spec: &DiscreteDomainSpec, f: F) -> Result<f64>
where
    F: Fn(&LabeledSample) -> f64,
{
    let mut total = 0.0;
    for (i, a) in spec.atoms.iter().enumerate() {
        let v = f(&a.sample);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("f at atom {i} = {v}")));
        }
        total += a.prob * v;
    }
    Ok(total)
}

/// Isotropic Gaussian generator: `x ~ N(input_mean, input_var)` per
/// coordinate, `y = <x, beta> + R` with `beta ~ N(beta_mean, beta_var)` per
/// coordinate and scalar noise `R ~ N(noise_mean, noise_var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDomainSpec {
    pub input_mean: f64,
    pub input_var: f64,
    pub dim: usize,
    pub beta_mean: f64,
    pub beta_var: f64,
    pub noise_mean: f64,
    pub noise_var: f64,
}

/// How the coefficient vector in `y = <x, beta> + R` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaDraw {
    /// Fresh `beta` for every sample.
    PerSample,
    /// One fixed vector for every sample.
    Fixed(Vec<f64>),
}

impl GaussianDomainSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_mean", self.input_mean),
            ("input_var", self.input_var),
            ("beta_mean", self.beta_mean),
            ("beta_var", self.beta_var),
            ("noise_mean", self.noise_mean),
            ("noise_var", self.noise_var),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if self.input_var <= 0.0 || self.beta_var <= 0.0 {
            return Err(Error::invalid("input_var and beta_var must be positive"));
        }
        if self.noise_var < 0.0 {
            return Err(Error::invalid("noise_var must be nonnegative"));
        }
        Ok(())
    }

    fn normals(&self) -> (Normal<f64>, Normal<f64>, Option<Normal<f64>>) {
        let input = Normal::new(self.input_mean, self.input_var.sqrt()).expect("validated");
        let beta = Normal::new(self.beta_mean, self.beta_var.sqrt()).expect("validated");
        let noise = (self.noise_var > 0.0)
            .then(|| Normal::new(self.noise_mean, self.noise_var.sqrt()).expect("validated"));
        (input, beta, noise)
    }

    /// Draws one coefficient vector from `N(beta_mean, beta_var)`.
    pub fn draw_beta(&self, rng: &mut SimRng) -> Vec<f64> {
        let (_, beta, _) = self.normals();
        (0..self.dim).map(|_| beta.sample(rng)).collect()
    }

    /// Draws `n` samples with the given coefficient policy.
    pub fn draw_with(&self, n: usize, beta: &BetaDraw, rng: &mut SimRng) -> Vec<LabeledSample> {
        let (input, beta_dist, noise) = self.normals();
        let mut out = Vec::with_capacity(n);
        let mut coeffs = vec![0.0; self.dim];
        for _ in 0..n {
            let x: Vec<f64> = (0..self.dim).map(|_| input.sample(rng)).collect();
            let b: &[f64] = match beta {
                BetaDraw::PerSample => {
                    for c in coeffs.iter_mut() {
                        *c = beta_dist.sample(rng);
                    }
                    &coeffs
                }
                BetaDraw::Fixed(v) => v,
            };
            let r = match &noise {
                Some(d) => d.sample(rng),
                None => self.noise_mean,
            };
            let y = x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>() + r;
            out.push(LabeledSample { x, y });
        }
        out
    }
}

/// Generates `n` samples from a Gaussian domain with `beta` redrawn per sample.
///
/// The stream is derived from `(seed, domain)` so that different domains
/// generated from one master seed are independent.
pub fn synthesize_domain(
    spec: &GaussianDomainSpec,
    domain: DomainId,
    n: usize,
    seed: u64,
) -> Result<DomainDataset> {
    synthesize_domain_with(spec, domain, n, seed, &BetaDraw::PerSample)
}

pub fn synthesize_domain_with(
    spec: &GaussianDomainSpec,
    domain: DomainId,
    n: usize,
    seed: u64,
    beta: &BetaDraw,
) -> Result<DomainDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset(format!("requested 0 samples for {domain}")));
    }
    spec.validate()?;
    if let BetaDraw::Fixed(b) = beta {
        if b.len() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                found: b.len(),
            });
        }
    }
    let mut rng = rng_for(seed, &[stream::DATA, domain.seed_tag()]);
    let samples = spec.draw_with(n, beta, &mut rng);
    DomainDataset::new(domain, samples)
}

/// Anything that can produce i.i.d. labeled samples.
pub trait DomainSampler: Sync {
    fn draw(&self, n: usize, rng: &mut SimRng) -> Vec<LabeledSample>;
}

impl DomainSampler for DiscreteDomainSpec {
    fn draw(&self, n: usize, rng: &mut SimRng) -> Vec<LabeledSample> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| self.atoms[i].sample.clone())
            .collect()
    }
}

impl DomainSampler for GaussianDomainSpec {
    fn draw(&self, n: usize, rng: &mut SimRng) -> Vec<LabeledSample> {
        self.draw_with(n, &BetaDraw::PerSample, rng)
    }
}

/// A distribution over labeled samples that supports expectations: either an
/// empirical sample list or a discrete atom table.
pub trait DomainMeasure {
    fn expect(&self, f: &dyn Fn(&LabeledSample) -> Result<f64>) -> Result<f64>;
}

impl DomainMeasure for DomainDataset {
    fn expect(&self, f: &dyn Fn(&LabeledSample) -> Result<f64>) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyDataset(format!("{}", self.domain)));
        }
        let mut total = 0.0;
        for s in &self.samples {
            total += ensure_finite(f(s)?, "function value")?;
        }
        Ok(total / self.len() as f64)
    }
}

impl DomainMeasure for DiscreteDomainSpec {
    fn expect(&self, f: &dyn Fn(&LabeledSample) -> Result<f64>) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.prob * ensure_finite(f(&a.sample)?, "function value")?;
        }
        Ok(total)
    }
}

/// Reads and validates a JSON domain specification.
pub fn load_gaussian_spec(path: &Path) -> Result<GaussianDomainSpec> {
    let spec: GaussianDomainSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
