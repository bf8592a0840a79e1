//! Command-line front end: `fit`, `predict`, `functionals`, `compare` and `prior-check`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compare::{fit_product_kernel, ppl_criterion, Estimator, PplReport};
use crate::data::Dataset;
use crate::error::{Error, ErrorClass, Result};
use crate::functionals::{
    inverse_density, map_draws, posterior_predictive_correlations, selection_analysis, summarize,
    summarize_columns, GridConfig, Summary,
};
use crate::hyper::{HyperPrior, KernelStructure};
use crate::io::{
    fmt_f64, load_fit, sha256_file, software_version, write_draws, write_json, write_latent, write_table, DataSummary,
    DrawsMetadata, RunConfig, DRAWS_FILE, LATENT_FILE, META_FILE,
};
use crate::mixture::MixtureState;
use crate::prior::{
    elicit_inverse_wishart, elicit_uniform_correlation, implied_base_distribution_check, prior_predictive_regression,
    CorrelationSearch, ImpliedCheck, PriorSketch,
};
use crate::sampler::{run_sampler, PosteriorDraws};

#[derive(Debug, Parser)]
#[command(name = "dpbinreg", version, about = "Dirichlet process mixture binary regression")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Gibbs sampler and write draws with a metadata sidecar.
    Fit(FitArgs),
    /// Regression curves, optional surface and inverse densities from saved draws.
    Predict(PredictArgs),
    /// Selection-analysis quantities with posterior summaries from saved draws.
    Functionals(FunctionalsArgs),
    /// Fit the full and product-kernel models and compare them by posterior predictive loss.
    Compare(CompareArgs),
    /// Elicit the prior and simulate prior-predictive regression bands.
    PriorCheck(PriorCheckArgs),
}

/// Flags mirroring the run configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Headered CSV input.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column (0/1 unless a threshold is given).
    #[arg(long)]
    pub response: Option<String>,
    /// Comma-separated covariate columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Dichotomize COLUMN at VALUE: y = 1 when COLUMN > VALUE.
    #[arg(long, value_name = "COL:VALUE")]
    pub threshold: Option<String>,
    /// Center and scale every covariate to unit sample SD before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Total sweeps per chain, burn-in included.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Truncation level of the stick-breaking representation.
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub prior_approach: Option<u8>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl RunFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            cfg.data.path = Some(v.clone());
        }
        if let Some(v) = &self.response {
            cfg.data.response = Some(v.clone());
        }
        if let Some(v) = &self.covariates {
            cfg.data.covariates = Some(v.clone());
        }
        if let Some(v) = &self.threshold {
            cfg.data.threshold = Some(v.clone());
        }
        cfg.data.standardize |= self.standardize;
        let s = &mut cfg.sampler;
        s.seed = self.seed.unwrap_or(s.seed);
        s.chains = self.chains.unwrap_or(s.chains);
        s.iterations = self.iters.unwrap_or(s.iterations);
        s.burn_in = self.burnin.unwrap_or(s.burn_in);
        s.thin = self.thin.unwrap_or(s.thin);
        s.truncation = self.truncation.unwrap_or(s.truncation);
        if self.prior_approach.is_some() {
            cfg.prior.approach = self.prior_approach;
        }
        cfg.sampler.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Fit the restricted kernel with `Σᶻˣ = 0`.
    #[arg(long)]
    pub product_kernel: bool,
    /// Also write latent responses and labels of every kept draw.
    #[arg(long)]
    pub save_latent: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Points per curve; overrides the fit configuration.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Two covariate names, comma-separated, for a bivariate regression surface.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub surface: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct FunctionalsArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Points per axis of the integration grid; overrides the fit configuration.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Use every k-th draw.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunFlags,
    #[arg(long, value_enum, default_value = "ratio")]
    pub estimator: EstimatorArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum EstimatorArg {
    Ratio,
    PerDraw,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ratio => Estimator::Ratio,
            EstimatorArg::PerDraw => Estimator::PerDraw,
        }
    }
}

#[derive(Debug, Args)]
pub struct PriorCheckArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Simulated mixtures per band; overrides the configuration.
    #[arg(long)]
    pub sims: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
}

/// Process exit code for an error class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
        ErrorClass::Io => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(&a),
        Command::Predict(a) => predict(&a),
        Command::Functionals(a) => functionals(&a),
        Command::Compare(a) => compare(&a),
        Command::PriorCheck(a) => prior_check(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Data, elicited prior and, for approach 1, the search record.
struct Prepared {
    data: Dataset,
    approach: u8,
    sketch: PriorSketch,
    prior: HyperPrior,
    search: Option<CorrelationSearch>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = cfg.data.load()?;
    info!("{} observations, {} covariates, {} positive", data.n(), data.p(), data.n_positive());
    let approach = cfg.prior.approach_for(data.p())?;
    let sketch = cfg.prior.sketch(&data)?;
    let options = cfg.prior.options();
    let (prior, search) = if approach == 1 {
        let search = elicit_uniform_correlation(&sketch, cfg.prior.sim_budget, &options, cfg.sampler.seed)?;
        info!("correlation search picked shares {:?} with KS {:.4}", search.shares, search.ks);
        (search.prior.clone(), Some(search))
    } else {
        (elicit_inverse_wishart(&sketch, &options)?, None)
    };
    Ok(Prepared {
        data,
        approach,
        sketch,
        prior,
        search,
    })
}

fn metadata(cfg: &RunConfig, prep: &Prepared, prior: &HyperPrior, draws: &PosteriorDraws) -> DrawsMetadata {
    let diag = &draws.diagnostics;
    DrawsMetadata {
        software: software_version(),
        seed: cfg.sampler.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        prior_approach: prep.approach,
        structure: draws.structure,
        truncation: draws.truncation,
        n_draws: draws.len(),
        data: DataSummary::of(&prep.data),
        prior: prior.clone(),
        diagnostics: diag.clone(),
        mean_last_weight: diag.iter().map(|d| d.mean_last_weight).sum::<f64>() / diag.len().max(1) as f64,
        floor_hits: diag.iter().map(|d| d.floor_hits).sum(),
        draws_sha256: String::new(),
    }
}

fn fit(args: &FitArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    cfg.sampler.save_latent |= args.save_latent;
    let prep = prepare(&cfg)?;
    let (prior, draws) = if args.product_kernel {
        let restricted = prep.prior.with_structure(KernelStructure::Product)?;
        (restricted, fit_product_kernel(&prep.data, &prep.prior, &cfg.sampler, None)?)
    } else {
        (prep.prior.clone(), run_sampler(&prep.data, &prep.prior, &cfg.sampler, None)?)
    };
    let out = &args.run.out;
    create_dir(out)?;
    let draws_path = out.join(DRAWS_FILE);
    write_draws(&draws_path, &draws)?;
    if cfg.sampler.save_latent {
        write_latent(out.join(LATENT_FILE), &draws)?;
    }
    let mut meta = metadata(&cfg, &prep, &prior, &draws);
    meta.draws_sha256 = sha256_file(&draws_path)?;
    write_json(out.join(META_FILE), &meta)?;
    println!(
        "{} draws from {} chain(s) written to {}",
        draws.len(),
        cfg.sampler.chains,
        out.display()
    );
    for d in &draws.diagnostics {
        println!(
            "chain {}: mean occupied atoms {:.2}, mean p_N {:.2e}, floor hits {}",
            d.chain, d.mean_occupied, d.mean_last_weight, d.floor_hits
        );
    }
    Ok(())
}

/// Provenance of a derived output.
#[derive(Debug, Serialize)]
struct DerivedMetadata<'a, G: Serialize> {
    software: String,
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
    draws_sha256: &'a str,
    n_draws: usize,
    units: &'static str,
    grid: G,
}

fn derived_metadata<'a, G: Serialize>(meta: &'a DrawsMetadata, command: &'a str, grid: G) -> DerivedMetadata<'a, G> {
    DerivedMetadata {
        software: software_version(),
        command,
        seed: meta.seed,
        config_hash: &meta.config_hash,
        draws_sha256: &meta.draws_sha256,
        n_draws: meta.n_draws,
        units: "original",
        grid,
    }
}

/// Evenly spaced original-unit grid over the observed range of covariate `j`.
fn covariate_grid(summary: &DataSummary, j: usize, points: usize) -> Vec<f64> {
    let (lo, hi) = summary.ranges[j];
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect()
}

fn summary_cells(s: &Summary) -> [String; 4] {
    [fmt_f64(s.mean), fmt_f64(s.median), fmt_f64(s.lower), fmt_f64(s.upper)]
}

fn predict(args: &PredictArgs) -> Result<()> {
    let (meta, draws) = load_fit(&args.draws)?;
    let points = args.grid_points.unwrap_or(meta.config.grid.curve_points);
    if points < 2 {
        return Err(Error::Config("grid points must be at least 2".into()));
    }
    let summary = &meta.data;
    let mixtures: Vec<&MixtureState> = draws.mixtures().collect();
    create_dir(&args.out)?;

    let grids: Vec<Vec<f64>> = (0..summary.p).map(|j| covariate_grid(summary, j, points)).collect();
    let model: Vec<Vec<f64>> = grids
        .iter()
        .enumerate()
        .map(|(j, g)| g.iter().map(|&x| summary.to_model(j, x)).collect())
        .collect();
    // Per draw: curves then inverse densities (y = 0, y = 1) for every covariate.
    let per_draw = map_draws(&mixtures, |m| {
        let prepared = m.prepare()?;
        let mut row = Vec::with_capacity(3 * summary.p * points);
        for (j, g) in model.iter().enumerate() {
            let marginal = prepared.marginal(&[j])?;
            row.extend(g.iter().map(|&x| marginal.regression(&[x])));
        }
        for (j, g) in model.iter().enumerate() {
            let sd = summary.covariate_sd(j);
            for y in [false, true] {
                row.extend(inverse_density(&prepared, j, y, g)?.into_iter().map(|d| d / sd));
            }
        }
        Ok(row)
    })?;
    let sums = summarize_columns(&per_draw);
    let block = summary.p * points;
    let curve_rows = (0..summary.p).flat_map(|j| {
        let sums = &sums;
        let grids = &grids;
        (0..points).map(move |i| {
            let mut r = vec![summary.covariates[j].clone(), fmt_f64(grids[j][i])];
            r.extend(summary_cells(&sums[j * points + i]));
            r
        })
    });
    write_table(
        args.out.join("curves.csv"),
        &["covariate", "x", "mean", "median", "lower", "upper"],
        curve_rows,
    )?;
    let inverse_rows = (0..summary.p).flat_map(|j| {
        let sums = &sums;
        let grids = &grids;
        [0usize, 1].into_iter().flat_map(move |y| {
            (0..points).map(move |i| {
                let mut r = vec![summary.covariates[j].clone(), y.to_string(), fmt_f64(grids[j][i])];
                r.extend(summary_cells(&sums[block + (2 * j + y) * points + i]));
                r
            })
        })
    });
    write_table(
        args.out.join("inverse.csv"),
        &["covariate", "y", "x", "mean", "median", "lower", "upper"],
        inverse_rows,
    )?;

    if let Some(names) = &args.surface {
        let idx = |name: &String| {
            summary
                .covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Config(format!("unknown covariate '{name}' in --surface")))
        };
        if names.len() != 2 {
            return Err(Error::Config("--surface takes exactly two covariate names".into()));
        }
        let (a, b) = (idx(&names[0])?, idx(&names[1])?);
        if a == b {
            return Err(Error::Config("--surface needs two different covariates".into()));
        }
        let pairs: Vec<(usize, usize)> = (0..points).flat_map(|i| (0..points).map(move |k| (i, k))).collect();
        let table = map_draws(&mixtures, |m| {
            let marginal = m.prepare()?.marginal(&[a, b])?;
            Ok(pairs
                .iter()
                .map(|&(i, k)| marginal.regression(&[model[a][i], model[b][k]]))
                .collect())
        })?;
        let sums = summarize_columns(&table);
        let rows = pairs.iter().zip(&sums).map(|(&(i, k), s)| {
            let mut r = vec![fmt_f64(grids[a][i]), fmt_f64(grids[b][k])];
            r.extend(summary_cells(s));
            r
        });
        let header = [names[0].as_str(), names[1].as_str(), "mean", "median", "lower", "upper"];
        write_table(args.out.join("surface.csv"), &header, rows)?;
    }
    write_json(args.out.join("predict.meta.json"), &derived_metadata(&meta, "predict", points))?;
    println!("curves for {} covariate(s) written to {}", summary.p, args.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct CovariateFunctionals {
    covariate: String,
    mean_before: Summary,
    mean_after: Summary,
    differential: Summary,
    gradient: Summary,
    directional_gradient: Summary,
}

#[derive(Debug, Serialize)]
struct MatrixEntry {
    row: String,
    col: String,
    summary: Summary,
}

#[derive(Debug, Serialize)]
struct FunctionalsReport {
    fitness: Summary,
    covariates: Vec<CovariateFunctionals>,
    /// Upper triangle, diagonal included.
    stabilizing: Vec<MatrixEntry>,
    /// Kernel correlations of a weight-sampled atom per draw; the response is `z`.
    kernel_correlations: Vec<MatrixEntry>,
    max_grid_error: f64,
}

fn functionals(args: &FunctionalsArgs) -> Result<()> {
    let (meta, draws) = load_fit(&args.draws)?;
    let s = &meta.data;
    let p = s.p;
    let points = args.grid_points.unwrap_or(meta.config.grid.selection_points_for(p));
    let grid = GridConfig {
        points,
        width: meta.config.grid.selection_width,
    };
    let mixtures: Vec<&MixtureState> = draws.mixtures().step_by(args.stride as usize).collect();
    let analyses = map_draws(&mixtures, |m| selection_analysis(m, &grid))?;

    // Back to original units: x = shift + sd · x_model.
    let col = |f: &dyn Fn(&crate::functionals::SelectionAnalysis) -> f64| {
        summarize(&analyses.iter().map(f).collect::<Vec<_>>())
    };
    let covariates = (0..p)
        .map(|j| {
            let (sd, shift) = (s.covariate_sd(j), s.covariate_shift(j));
            CovariateFunctionals {
                covariate: s.covariates[j].clone(),
                mean_before: col(&|a| shift + sd * a.mean_before[j]),
                mean_after: col(&|a| shift + sd * a.mean_after[j]),
                differential: col(&|a| sd * a.differential[j]),
                gradient: col(&|a| a.gradient[j] / sd),
                directional_gradient: col(&|a| a.directional_gradient[j] / sd),
            }
        })
        .collect();
    let mut stabilizing = Vec::new();
    for i in 0..p {
        for j in i..p {
            let scale = s.covariate_sd(i) * s.covariate_sd(j);
            stabilizing.push(MatrixEntry {
                row: s.covariates[i].clone(),
                col: s.covariates[j].clone(),
                summary: col(&|a| scale * a.stabilizing[i * p + j]),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let corr = posterior_predictive_correlations(mixtures.iter().copied(), &mut rng);
    let corr_sums = summarize_columns(&corr);
    let mut names = vec!["z".to_string()];
    names.extend(s.covariates.iter().cloned());
    let pairs = (0..=p).flat_map(|i| (i + 1..=p).map(move |j| (i, j)));
    let kernel_correlations = pairs
        .zip(corr_sums)
        .map(|((i, j), summary)| MatrixEntry {
            row: names[i].clone(),
            col: names[j].clone(),
            summary,
        })
        .collect();
    let report = FunctionalsReport {
        fitness: col(&|a| a.fitness),
        covariates,
        stabilizing,
        kernel_correlations,
        max_grid_error: analyses.iter().map(|a| a.grid_error).fold(0.0, f64::max),
    };
    create_dir(&args.out)?;
    write_json(args.out.join("functionals.json"), &report)?;
    let mut info = derived_metadata(&meta, "functionals", (&grid, args.stride));
    info.n_draws = mixtures.len();
    write_json(args.out.join("functionals.meta.json"), &info)?;
    println!("selection analysis of {} draws written to {}", analyses.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelLoss {
    penalty: f64,
    fit: f64,
    /// `(k, D_k)` for `k = 1, 10, 100, ∞`.
    criterion: Vec<(String, f64)>,
    n_flagged: usize,
    mean_occupied: f64,
}

impl ModelLoss {
    fn new(r: &PplReport, draws: &PosteriorDraws) -> Self {
        let d = &draws.diagnostics;
        ModelLoss {
            penalty: r.penalty,
            fit: r.fit,
            criterion: r.criterion_table(),
            n_flagged: r.n_flagged,
            mean_occupied: d.iter().map(|c| c.mean_occupied).sum::<f64>() / d.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Serialize)]
struct CompareReport {
    software: String,
    seed: u64,
    config_hash: String,
    config: RunConfig,
    prior_approach: u8,
    estimator: Estimator,
    full: ModelLoss,
    product: ModelLoss,
    /// Model with the smaller `D_k`, per `k`.
    preferred: Vec<(String, String)>,
}

fn compare(args: &CompareArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let estimator = Estimator::from(args.estimator);
    let prep = prepare(&cfg)?;
    let full = run_sampler(&prep.data, &prep.prior, &cfg.sampler, None)?;
    let product = fit_product_kernel(&prep.data, &prep.prior, &cfg.sampler, None)?;
    let rf = ppl_criterion(&full, &prep.data, estimator)?;
    let rp = ppl_criterion(&product, &prep.data, estimator)?;
    let preferred = rf
        .criterion_table()
        .into_iter()
        .zip(rp.criterion_table())
        .map(|((k, a), (_, b))| (k, if a <= b { "full" } else { "product" }.to_string()))
        .collect();
    let report = CompareReport {
        software: software_version(),
        seed: cfg.sampler.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        prior_approach: prep.approach,
        estimator,
        full: ModelLoss::new(&rf, &full),
        product: ModelLoss::new(&rp, &product),
        preferred,
    };
    let out = &args.run.out;
    create_dir(out)?;
    write_json(out.join("compare.json"), &report)?;
    let rows = (0..prep.data.n()).map(|i| {
        vec![
            (i + 1).to_string(),
            prep.data.responses()[i].to_string(),
            fmt_f64(rf.observations[i].mean),
            fmt_f64(rp.observations[i].mean),
        ]
    });
    write_table(out.join("predictive.csv"), &["observation", "y", "full_mean", "product_mean"], rows)?;
    println!("            P        G        D_inf");
    for (name, r) in [("full", &rf), ("product", &rp)] {
        println!("{name:<8} {:8.3} {:8.3} {:8.3}", r.penalty, r.fit, r.criterion(f64::INFINITY));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SearchRecord {
    shares: [f64; 3],
    ks: f64,
    sim_budget: usize,
    candidates: Vec<([f64; 3], f64)>,
}

#[derive(Debug, Serialize)]
struct PriorReport {
    software: String,
    seed: u64,
    config_hash: String,
    approach: u8,
    /// Ranges and centers in model units.
    sketch: PriorSketch,
    prior: HyperPrior,
    search: Option<SearchRecord>,
    implied_check: Option<ImpliedCheck>,
}

fn prior_check(args: &PriorCheckArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(sims) = args.sims {
        cfg.grid.prior_sims = sims;
    }
    if let Some(points) = args.grid_points {
        cfg.grid.curve_points = points;
    }
    let prep = prepare(&cfg)?;
    let summary = DataSummary::of(&prep.data);
    let seed = cfg.sampler.seed;
    let implied_check = if prep.approach == 2 {
        let mut t = vec![1.0];
        t.extend(prep.sketch.scales());
        let t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(t));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Some(implied_base_distribution_check(prep.prior.p as f64 + 3.0, &t, 20_000, &mut rng)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for j in 0..summary.p {
        let grid = covariate_grid(&summary, j, cfg.grid.curve_points);
        let model: Vec<f64> = grid.iter().map(|&x| summary.to_model(j, x)).collect();
        let mut rng = crate::sampler::chain_rng(seed, j + 1);
        let band = prior_predictive_regression(
            &prep.prior,
            cfg.sampler.truncation,
            j,
            &model,
            cfg.grid.prior_sims,
            &mut rng,
        )?;
        for (g, &x) in grid.iter().enumerate() {
            rows.push(vec![
                summary.covariates[j].clone(),
                fmt_f64(x),
                fmt_f64(band.mean[g]),
                fmt_f64(band.lower[g]),
                fmt_f64(band.upper[g]),
            ]);
        }
    }
    let out = &args.run.out;
    create_dir(out)?;
    write_table(
        out.join("prior_bands.csv"),
        &["covariate", "x", "mean", "lower", "upper"],
        rows.into_iter(),
    )?;
    let report = PriorReport {
        software: software_version(),
        seed,
        config_hash: cfg.hash(),
        approach: prep.approach,
        sketch: prep.sketch,
        prior: prep.prior,
        search: prep.search.map(|s| SearchRecord {
            shares: s.shares,
            ks: s.ks,
            sim_budget: s.sim_budget,
            candidates: s.candidates,
        }),
        implied_check,
    };
    write_json(out.join("prior.json"), &report)?;
    println!("prior (approach {}) and bands written to {}", report.approach, out.display());
    Ok(())
}
