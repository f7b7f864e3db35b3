//! Command-line front end. Every subcommand reads a JSON config given by
//! `--config` and writes its outputs under `--out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundInput, BoundResult};
use crate::complexity::{rademacher_expected, uen_estimate, uen_exhaustive, ComplexityEstimate, CoverMethod, UEN_CONFIG_CAP};
use crate::deviation::{
    bennett_dev_bound, hoeffding_dev_bound, mc_tail_estimate, mcdiarmid_bound, symmetrization_check, Side,
    TailExperiment, TailStatistic,
};
use crate::divergence::{discrepancy_distance, h_delta_h, ipm, weighted_ipm, Dist};
use crate::domain::{
    read_json, synthesize_domain_with, BetaDraw, DiscreteDomainSpec, DomainDataset, DomainId, GaussianDomainSpec,
    MultiSourceBundle,
};
use crate::error::{Error, Result};
use crate::experiment::{
    analyze_curve, emit_bounds, emit_report, emit_tail_report, run_convergence_experiment, ConvergenceCurve, CurveRow,
    ExperimentConfig, Format,
};
use crate::hypothesis::{ClassFile, Hypothesis, LinearHypothesis, LossFunction, LossKind};
use crate::risk::{
    bundle_risk, erm_finite, optimal_parameters, solve_weighted_least_squares, LeastSquaresOptions, MixtureWeights,
    SampleSizes,
};
use crate::rng::{derive_seed, rng_for, stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rda", version, about = "Multi-source domain adaptation bounds and experiments")]
pub struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides any seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: FormatArg,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Gaussian target and source datasets as CSV.
    Synthesize,
    /// Weighted empirical risk minimization on CSV datasets.
    Erm,
    /// Divergences between discrete domains over a finite class.
    Divergence,
    /// Uniform entropy number and Rademacher complexity of a finite class.
    Complexity,
    /// Evaluate generalization bounds.
    Bound,
    /// Monte Carlo check of a deviation inequality.
    Deviate,
    /// Monte Carlo check of the symmetrization inequality.
    Symmetrize,
    /// Run the convergence experiment.
    Experiment {
        /// Built-in configuration used when no --config is given.
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
    /// Re-analyze a convergence CSV.
    Analyze {
        /// Convergence CSV written by `experiment`.
        #[arg(long)]
        input: PathBuf,
        /// N'_T of the run.
        #[arg(long, default_value_t = 100)]
        target_fit: usize,
        /// Required last/first ratio for small tau.
        #[arg(long, default_value_t = 0.7)]
        decrease_ratio: f64,
    },
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VALIDATION,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Runs a parsed command; `Ok(false)` means a validation check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Context {
        config: cli.config.as_deref(),
        seed: cli.seed,
        out: &cli.out,
        format: cli.format.into(),
    };
    match &cli.command {
        Command::Synthesize => synthesize(&ctx),
        Command::Erm => erm(&ctx),
        Command::Divergence => divergence(&ctx),
        Command::Complexity => complexity(&ctx),
        Command::Bound => bound(&ctx),
        Command::Deviate => deviate(&ctx),
        Command::Symmetrize => symmetrize(&ctx),
        Command::Experiment { preset } => experiment(&ctx, *preset),
        Command::Analyze {
            input,
            target_fit,
            decrease_ratio,
        } => analyze(&ctx, input, *target_fit, *decrease_ratio),
    }
}

struct Context<'a> {
    config: Option<&'a Path>,
    seed: Option<u64>,
    out: &'a Path,
    format: Format,
}

impl Context<'_> {
    fn load<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        let path = self
            .config
            .ok_or_else(|| Error::invalid("this subcommand needs --config <path>"))?;
        read_json(path)
    }

    fn seed(&self, from_config: Option<u64>) -> u64 {
        self.seed.or(from_config).unwrap_or(0)
    }

    /// Resolves a path from the config relative to the config's directory.
    fn resolve(&self, p: &Path) -> PathBuf {
        match self.config.and_then(Path::parent) {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(self.out).map_err(|e| Error::io(self.out, e))?;
        Ok(self.out)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        println!("{}", path.display());
        Ok(path)
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

#[derive(Debug, Deserialize)]
struct SynthesizeConfig {
    target: GaussianDomainSpec,
    target_size: usize,
    sources: Vec<GaussianDomainSpec>,
    source_sizes: Vec<usize>,
    /// One `beta` shared by every sample of every domain.
    #[serde(default)]
    shared_beta: bool,
    #[serde(default)]
    seed: Option<u64>,
}

fn synthesize(ctx: &Context) -> Result<bool> {
    let cfg: SynthesizeConfig = ctx.load()?;
    if cfg.sources.len() != cfg.source_sizes.len() {
        return Err(Error::CountMismatch {
            what: "source sizes",
            expected: cfg.sources.len(),
            found: cfg.source_sizes.len(),
        });
    }
    let seed = ctx.seed(cfg.seed);
    let beta = if cfg.shared_beta {
        cfg.target.validate()?;
        BetaDraw::Fixed(cfg.target.draw_beta(&mut rng_for(seed, &[stream::BETA])))
    } else {
        BetaDraw::PerSample
    };
    let dir = ctx.out_dir()?;
    let mut jobs = vec![(DomainId::Target, &cfg.target, cfg.target_size)];
    for (k, (spec, &n)) in cfg.sources.iter().zip(&cfg.source_sizes).enumerate() {
        jobs.push((DomainId::Source(k), spec, n));
    }
    for (id, spec, n) in jobs {
        let data = synthesize_domain_with(spec, id, n, seed, &beta)?;
        let path = dir.join(format!("{id}.csv"));
        data.save_csv(&path)?;
        println!("{}", path.display());
    }
    Ok(true)
}

#[derive(Debug, Deserialize)]
struct ErmConfig {
    target: PathBuf,
    sources: Vec<PathBuf>,
    weights: MixtureWeights,
    /// Finite class; least squares over all linear maps when absent.
    #[serde(default)]
    class: Option<ClassFile>,
    #[serde(default)]
    options: Option<LeastSquaresOptions>,
}

#[derive(Debug, Serialize)]
struct ErmOutput {
    hypothesis: Hypothesis,
    index: Option<usize>,
    target_empirical: f64,
    source_weighted: f64,
    combined: f64,
}

fn erm(ctx: &Context) -> Result<bool> {
    let cfg: ErmConfig = ctx.load()?;
    let target = DomainDataset::load_csv(DomainId::Target, &ctx.resolve(&cfg.target))?;
    let sources = cfg
        .sources
        .iter()
        .enumerate()
        .map(|(k, p)| DomainDataset::load_csv(DomainId::Source(k), &ctx.resolve(p)))
        .collect::<Result<Vec<_>>>()?;
    let bundle = MultiSourceBundle::new(sources, target)?;
    let out = match cfg.class {
        Some(file) => {
            let class = file.into_class()?;
            let fit = erm_finite(&class, &bundle, &cfg.weights)?;
            ErmOutput {
                hypothesis: class.members()[fit.index].clone(),
                index: Some(fit.index),
                target_empirical: fit.risk.target_empirical,
                source_weighted: fit.risk.source_weighted,
                combined: fit.risk.combined,
            }
        }
        None => {
            let opts = cfg.options.unwrap_or_default();
            let h: Hypothesis = solve_weighted_least_squares(&bundle, &cfg.weights, &opts)?.into();
            let risk = bundle_risk(&bundle, &h, &LossFunction::unclamped(LossKind::Squared), &cfg.weights)?;
            ErmOutput {
                hypothesis: h,
                index: None,
                target_empirical: risk.target_empirical,
                source_weighted: risk.source_weighted,
                combined: risk.combined,
            }
        }
    };
    ctx.write_json("erm.json", &out)?;
    Ok(true)
}

#[derive(Debug, Deserialize)]
struct DiscreteProblem {
    class: ClassFile,
    target: DiscreteDomainSpec,
    sources: Vec<DiscreteDomainSpec>,
}

#[derive(Debug, Deserialize)]
struct DivergenceConfig {
    #[serde(flatten)]
    problem: DiscreteProblem,
    /// Source weights; uniform when absent.
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct DivergenceOutput {
    ipm: Vec<f64>,
    weighted_ipm: f64,
    weights: Vec<f64>,
    discrepancy: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_delta_h: Option<Vec<f64>>,
}

fn divergence(ctx: &Context) -> Result<bool> {
    let cfg: DivergenceConfig = ctx.load()?;
    let class = cfg.problem.class.into_class()?;
    let k = cfg.problem.sources.len();
    let weights = cfg.weights.unwrap_or_else(|| vec![1.0 / k as f64; k]);
    let t = Dist::from(&cfg.problem.target);
    let dists: Vec<Dist<'_>> = cfg.problem.sources.iter().map(Dist::from).collect();
    let mut out = DivergenceOutput {
        ipm: Vec::with_capacity(k),
        weighted_ipm: weighted_ipm(&class, &dists, t, &weights)?.value,
        weights,
        discrepancy: Vec::with_capacity(k),
        h_delta_h: None,
    };
    for s in &dists {
        out.ipm.push(ipm(&class, *s, t)?.value);
        out.discrepancy.push(discrepancy_distance(&class, *s, t)?.value);
    }
    if class.loss().kind == LossKind::Absolute {
        out.h_delta_h = Some(
            dists
                .iter()
                .map(|s| Ok(h_delta_h(&class, *s, t, None)?.value))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    ctx.write_json("divergence.json", &out)?;
    Ok(true)
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum UenMethod {
    #[default]
    Exhaustive,
    Estimate,
}

#[derive(Debug, Deserialize)]
struct RademacherBudget {
    data_trials: usize,
    sigma_trials: usize,
}

#[derive(Debug, Deserialize)]
struct ComplexityConfig {
    #[serde(flatten)]
    problem: DiscreteProblem,
    sizes: SampleSizes,
    #[serde(default)]
    weights: Option<MixtureWeights>,
    radius: f64,
    #[serde(default)]
    method: UenMethod,
    #[serde(default = "default_redraws")]
    redraws: usize,
    #[serde(default)]
    rademacher: Option<RademacherBudget>,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_redraws() -> usize {
    20
}

#[derive(Debug, Serialize)]
struct ComplexityOutput {
    uen: ComplexityEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    rademacher_target: Option<ComplexityEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rademacher_sources: Option<Vec<ComplexityEstimate>>,
}

fn complexity(ctx: &Context) -> Result<bool> {
    let cfg: ComplexityConfig = ctx.load()?;
    let class = cfg.problem.class.into_class()?;
    let weights = match cfg.weights {
        Some(w) => w,
        None => optimal_parameters(&cfg.sizes)?,
    };
    let seed = ctx.seed(cfg.seed);
    let (target, sources) = (&cfg.problem.target, &cfg.problem.sources);
    let uen = match cfg.method {
        UenMethod::Exhaustive => uen_exhaustive(
            &class,
            target,
            sources,
            &cfg.sizes,
            &weights,
            cfg.radius,
            CoverMethod::Greedy,
            UEN_CONFIG_CAP,
        )?,
        UenMethod::Estimate => {
            uen_estimate(&class, target, sources, &cfg.sizes, &weights, cfg.radius, cfg.redraws, seed)?
        }
    };
    let mut out = ComplexityOutput {
        uen,
        rademacher_target: None,
        rademacher_sources: None,
    };
    if let Some(b) = cfg.rademacher {
        out.rademacher_target = Some(rademacher_expected(
            &class,
            target,
            cfg.sizes.target,
            b.data_trials,
            b.sigma_trials,
            derive_seed(seed, &[0]),
        )?);
        out.rademacher_sources = Some(
            sources
                .iter()
                .zip(&cfg.sizes.sources)
                .enumerate()
                .map(|(k, (s, &n))| {
                    rademacher_expected(&class, s, n, b.data_trials, b.sigma_trials, derive_seed(seed, &[k as u64 + 1]))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    ctx.write_json("complexity.json", &out)?;
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BoundName {
    Hoeffding,
    Bernstein,
    AltBennett,
    RademacherHoeffding,
    RademacherBennett,
    OptimalRate,
}

#[derive(Debug, Deserialize)]
struct BoundConfig {
    #[serde(flatten)]
    input: BoundInput,
    bounds: Vec<BoundName>,
    /// Threshold for the Bennett-type tail probability.
    #[serde(default)]
    tail_xi: Option<f64>,
}

fn bound(ctx: &Context) -> Result<bool> {
    let cfg: BoundConfig = ctx.load()?;
    let results = cfg
        .bounds
        .iter()
        .map(|b| match b {
            BoundName::Hoeffding => bounds::hoeffding_bound(&cfg.input),
            BoundName::Bernstein => bounds::bernstein_bound(&cfg.input),
            BoundName::AltBennett => bounds::alt_bennett_bound(&cfg.input),
            BoundName::RademacherHoeffding => bounds::rademacher_bound_hoeffding(&cfg.input),
            BoundName::RademacherBennett => bounds::rademacher_bound_bennett(&cfg.input),
            BoundName::OptimalRate => bounds::optimal_rate_bound(&cfg.input),
        })
        .collect::<Result<Vec<BoundResult>>>()?;
    print_paths(&emit_bounds(&results, ctx.out_dir()?, ctx.format)?.paths);
    if let Some(xi) = cfg.tail_xi {
        ctx.write_json("bennett_tail.json", &bounds::bennett_tail(&cfg.input, xi)?)?;
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Inequality {
    Hoeffding,
    Bennett,
    Mcdiarmid,
    McdiarmidBennett,
}

#[derive(Debug, Deserialize)]
struct DeviateConfig {
    hypothesis: LinearHypothesis,
    #[serde(default)]
    loss: LossFunction,
    target: DiscreteDomainSpec,
    sources: Vec<DiscreteDomainSpec>,
    sizes: SampleSizes,
    /// Defaults to the optimal weights, which the Bennett form requires.
    #[serde(default)]
    weights: Option<MixtureWeights>,
    thresholds: Vec<f64>,
    #[serde(default = "default_trials")]
    trials: usize,
    inequality: Inequality,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_trials() -> usize {
    10_000
}

fn deviate(ctx: &Context) -> Result<bool> {
    let cfg: DeviateConfig = ctx.load()?;
    let weights = match (&cfg.weights, cfg.inequality) {
        (_, Inequality::Bennett) | (None, _) => optimal_parameters(&cfg.sizes)?,
        (Some(w), _) => w.clone(),
    };
    let range = cfg
        .loss
        .clamp
        .ok_or_else(|| Error::invalid("deviation checks need a clamped loss"))?;
    let side = match cfg.inequality {
        Inequality::Hoeffding | Inequality::Bennett => Side::TwoSided,
        Inequality::Mcdiarmid | Inequality::McdiarmidBennett => Side::Upper,
    };
    let exp = TailExperiment {
        statistic: TailStatistic::FStatistic {
            hypothesis: LinearHypothesis::new(cfg.hypothesis.weights.clone(), cfg.hypothesis.bias)?.into(),
            loss: cfg.loss,
        },
        target: cfg.target,
        sources: cfg.sources,
        sizes: cfg.sizes.clone(),
        weights: weights.clone(),
        thresholds: cfg.thresholds,
        trials: cfg.trials,
        seed: ctx.seed(cfg.seed),
        side,
    };
    let c = exp.differences()?.unwrap_or_default();
    let report = match cfg.inequality {
        Inequality::Hoeffding => mc_tail_estimate(&exp, |xi| hoeffding_dev_bound(&cfg.sizes, &weights, range, xi))?,
        Inequality::Bennett => mc_tail_estimate(&exp, |xi| bennett_dev_bound(&cfg.sizes, range, xi))?,
        Inequality::Mcdiarmid => mc_tail_estimate(&exp, |xi| Ok(mcdiarmid_bound(&c, xi)?.quadratic))?,
        Inequality::McdiarmidBennett => mc_tail_estimate(&exp, |xi| {
            mcdiarmid_bound(&c, xi)?
                .bennett
                .ok_or_else(|| Error::Contract("the Bennett form needs equal bounded differences".into()))
        })?,
    };
    print_paths(&emit_tail_report(&report, ctx.out_dir()?, "deviation", ctx.format)?.paths);
    Ok(report.all_pass())
}

#[derive(Debug, Deserialize)]
struct SymmetrizeConfig {
    #[serde(flatten)]
    problem: DiscreteProblem,
    sizes: SampleSizes,
    #[serde(default)]
    weights: Option<MixtureWeights>,
    thresholds: Vec<f64>,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: Option<u64>,
}

fn symmetrize(ctx: &Context) -> Result<bool> {
    let cfg: SymmetrizeConfig = ctx.load()?;
    let class = cfg.problem.class.into_class()?;
    let weights = match cfg.weights {
        Some(w) => w,
        None => optimal_parameters(&cfg.sizes)?,
    };
    let report = symmetrization_check(
        &class,
        &cfg.problem.target,
        &cfg.problem.sources,
        &cfg.sizes,
        &weights,
        &cfg.thresholds,
        cfg.trials,
        ctx.seed(cfg.seed),
    )?;
    let dir = ctx.out_dir()?;
    match ctx.format {
        Format::Csv => {
            let path = dir.join("symmetrization.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            report.write_csv(file).map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?;
            println!("{}", path.display());
        }
        Format::Json => {
            ctx.write_json("symmetrization.json", &report)?;
        }
    }
    Ok(report.all_pass())
}

fn experiment(ctx: &Context, preset: Preset) -> Result<bool> {
    let mut cfg: ExperimentConfig = match ctx.config {
        Some(_) => ctx.load()?,
        None => match preset {
            Preset::Paper => ExperimentConfig::paper(),
            Preset::Desk => ExperimentConfig::desk(),
        },
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let curve = run_convergence_experiment(&cfg)?;
    let findings = analyze_curve(&curve, 0.7)?;
    print_paths(&emit_report(&curve, &cfg, Some(&findings), ctx.out_dir()?)?.paths);
    Ok(true)
}

fn analyze(ctx: &Context, input: &Path, target_fit: usize, decrease_ratio: f64) -> Result<bool> {
    let mut reader = csv::Reader::from_path(input).map_err(|source| Error::Csv {
        path: input.to_path_buf(),
        source,
    })?;
    let rows = reader
        .deserialize::<CurveRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Csv {
            path: input.to_path_buf(),
            source,
        })?;
    let curve = curve_from_rows(rows, target_fit);
    let findings = analyze_curve(&curve, decrease_ratio)?;
    ctx.write_json("findings.json", &findings)?;
    Ok(true)
}

fn first_seen<T: PartialEq + Copy>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Rebuilds grids from rows in emission order; completeness is checked by the analysis.
pub fn curve_from_rows(rows: Vec<CurveRow>, target_fit: usize) -> ConvergenceCurve {
    ConvergenceCurve {
        target_fit,
        w_grid: first_seen(rows.iter().map(|r| r.w)),
        tau_grid: first_seen(rows.iter().map(|r| r.tau)),
        n_totals: first_seen(rows.iter().map(|r| r.n_total)),
        rows,
    }
}
