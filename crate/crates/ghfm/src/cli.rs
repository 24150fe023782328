//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fusion_core::baselines::{fit_lm_glm, fit_resp, fit_sflm};
use fusion_core::fusionfit::{fit_fused, Splitting};
use fusion_core::metrics::{
    ise, multiday_roc, multiday_rpmse, omr, rmse, rpmse, smr, DayPooling, RocSummary,
};
use fusion_core::simgen::{draw_replicate, SimOptions, SyntheticTruth};
use fusion_core::tuner::{log_grid, tune, Criterion, GridPoint, GridSpec, TuneResult, Validation};
use fusion_core::{
    lambda_max, precluster, BasisSpec, DesignCache, Family, FitResult, FunctionalDataset,
    PenaltyConfig, PreclusterOptions, PreclusterResult, Units,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cache;
use crate::csvio::{self, PredictionTable, Schema};
use crate::error::{Error, Result};
use crate::manifest::{manifest_path, Manifest};
use crate::models::{sample_curves, ModelFile};
use crate::study::{simulate, subject_curves};
use crate::tables;

#[derive(Debug, Parser)]
#[command(
    name = "ghfm",
    version,
    about = "Heterogeneous functional regression with subgroup fusion"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output file; standard output if omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one of the three designs.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset CSV.
    Fit(FitArgs),
    /// Predict outcomes of a dataset with a fitted model.
    Predict(PredictArgs),
    /// Score prediction files against outcomes and simulation truth.
    Evaluate(EvaluateArgs),
    /// Select (λ, φ) on a grid and fit the selected model.
    Tune(TuneArgs),
    /// Sample the fitted coefficient functions on a grid.
    ExportCurves(ExportArgs),
    /// Re-run a simulation table.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Bernoulli,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Bernoulli => Family::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ghfm,
    Sflm,
    Resp,
    Lm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplittingArg {
    PerUnit,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Bic,
    Holdout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    /// Mean over days of the per-day root mean squared error.
    MeanOfRoots,
    /// Root of the mean over days of the per-day mean squared error.
    RootOfMean,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub setting: u8,
    #[arg(long)]
    pub n: usize,
    /// Standard deviation of the per-subject coefficient noise (designs 1 and 3).
    #[arg(long)]
    pub sigma_prime: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 26)]
    pub x_dim: usize,
    #[arg(long, default_value_t = 35)]
    pub beta_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// 0 is the training sample; other values give new observations of the
    /// same subjects.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome family; taken from the dataset manifest if omitted.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Right end T of the time domain; defaults to m - 1.
    #[arg(long)]
    pub domain_end: Option<f64>,
    /// Directory for design sidecars; defaults to the dataset's directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
    /// Accept a gaussian fit of outcomes that are all 0 or 1.
    #[arg(long)]
    pub allow_binary_gaussian: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BasisArgs {
    /// Number of B-spline basis functions L.
    #[arg(long, default_value_t = 35)]
    pub basis_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Subtract each covariate's mean curve before integrating.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SplittingArg::PerUnit)]
    pub splitting: SplittingArg,
    #[arg(long, default_value_t = 1e-2)]
    pub rho: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub adaptive_rho: bool,
    #[arg(long, default_value_t = 1.8)]
    pub relaxation: f64,
    #[arg(long, default_value_t = 3000)]
    pub max_iters: usize,
    /// Primal and dual residual tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub ridge: f64,
    /// Skip the unpenalized refit within estimated subgroups.
    #[arg(long)]
    pub no_refit: bool,
    #[arg(long, default_value_t = 500)]
    pub max_direct_units: usize,
}

impl SolverArgs {
    fn config(&self, lambda: f64, phi: f64) -> PenaltyConfig {
        let mut c = PenaltyConfig::new(lambda, phi);
        c.splitting = match self.splitting {
            SplittingArg::PerUnit => Splitting::PerUnit,
            SplittingArg::Pairwise => Splitting::Pairwise,
        };
        c.rho = self.rho;
        c.adaptive_rho = self.adaptive_rho;
        c.relaxation = self.relaxation;
        c.max_iters = self.max_iters;
        c.tol_primal = self.tol;
        c.tol_dual = self.tol;
        c.ridge = self.ridge;
        c.refit = !self.no_refit;
        c.max_direct_units = self.max_direct_units;
        c
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Method::Ghfm)]
    pub method: Method,
    /// Fusion penalty.
    #[arg(long, conflicts_with = "lambda_rel")]
    pub lambda: Option<f64>,
    /// Fusion penalty as a multiple of the smallest fully fusing value.
    #[arg(long)]
    pub lambda_rel: Option<f64>,
    /// Roughness penalty.
    #[arg(long, default_value_t = 1e-2)]
    pub phi: f64,
    /// Pre-clustering groups K; 0 fuses subjects directly.
    #[arg(long, default_value_t = 0)]
    pub preclusters: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Outcome clusters for `--method resp`.
    #[arg(long)]
    pub groups: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction CSVs, one per day.
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Simulation truth JSON (enables sMR and ISE).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Fitted model JSON (enables ISE).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long, value_enum, default_value_t = PoolingArg::MeanOfRoots)]
    pub day_pooling: PoolingArg,
    /// Flat one-row CSV for table assembly.
    #[arg(long)]
    pub row_out: Option<PathBuf>,
    /// Label written in the first column of the flat row.
    #[arg(long, default_value = "")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub basis: BasisArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// `a,b,c`, `log:LO:HI:COUNT` (powers of ten) or `rel:LO:HI:COUNT`
    /// (powers of ten times the smallest fully fusing λ at each φ).
    #[arg(long)]
    pub lambda_grid: Option<String>,
    /// `a,b,c` or `log:LO:HI:COUNT`.
    #[arg(long)]
    pub phi_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
    pub criterion: CriterionArg,
    /// Multiplier of the degrees-of-freedom term of the information criterion.
    #[arg(long, default_value_t = 1.0)]
    pub bic_c: f64,
    /// Validation CSV for `--criterion holdout`.
    #[arg(long)]
    pub holdout_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub preclusters: usize,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// CSV of every evaluated grid cell.
    #[arg(long)]
    pub path_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 241)]
    pub points: usize,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub table: u8,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of replicates; seeds are `--seed`, `--seed + 1`, ...
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Pre-clustering groups (default: 100 when n > 500, none otherwise).
    #[arg(long)]
    pub preclusters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// `a,b,c` or `log:LO:HI:COUNT`.
    #[arg(long)]
    pub phi_grid: Option<String>,
    /// Number of λ values per φ.
    #[arg(long)]
    pub lambda_count: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// JSON with every replicate's results.
    #[arg(long)]
    pub replicates_out: Option<PathBuf>,
}

/// Parses and runs a command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let err = Error::Usage(e.kind().to_string());
            eprintln!("{}", err.to_json_line());
            return 2;
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| Error::Usage(format!("--threads: {e}")))?;
    let g = &cli.global;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(g, a, argv),
        Command::Fit(a) => cmd_fit(g, a, argv),
        Command::Predict(a) => cmd_predict(g, a, argv),
        Command::Evaluate(a) => cmd_evaluate(g, a, argv),
        Command::Tune(a) => cmd_tune(g, a, argv),
        Command::ExportCurves(a) => cmd_export(g, a, argv),
        Command::Reproduce(a) => cmd_reproduce(g, a, argv),
    })
}

/// Writes `bytes` to `--out` or standard output.
fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s =
        serde_json::to_string_pretty(v).map_err(|e| Error::Numeric(format!("serializing: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Gaussian => "gaussian",
        Family::Bernoulli => "bernoulli",
    }
}

fn parse_family(s: &str) -> Option<Family> {
    match s {
        "gaussian" => Some(Family::Gaussian),
        "bernoulli" => Some(Family::Bernoulli),
        _ => None,
    }
}

/// Family declared by the manifest written next to a dataset, if any.
fn declared_family(data: &Path) -> Result<Option<Family>> {
    let path = manifest_path(data);
    if !path.exists() {
        return Ok(None);
    }
    let m = Manifest::read(&path)?;
    Ok(m.config
        .get("family")
        .and_then(Value::as_str)
        .and_then(parse_family))
}

fn resolve_family(a: &DataArgs) -> Result<Family> {
    let declared = declared_family(&a.data)?;
    let requested = a.family.map(Family::from);
    match (declared, requested) {
        (Some(d), Some(r)) if d != r => Err(Error::Schema(format!(
            "family conflict: {} holds {} outcomes (per its manifest) but --family {} was requested",
            a.data.display(),
            family_name(d),
            family_name(r)
        ))),
        (_, Some(r)) => Ok(r),
        (Some(d), None) => Ok(d),
        (None, None) => Ok(Family::Gaussian),
    }
}

fn load_data(a: &DataArgs) -> Result<FunctionalDataset> {
    let family = resolve_family(a)?;
    let schema = Schema::infer(&a.data, family, a.domain_end)?;
    let ds = csvio::ingest_csv(&a.data, &schema)?;
    if family == Family::Gaussian
        && !a.allow_binary_gaussian
        && ds.y().iter().all(|&v| v == 0.0 || v == 1.0)
    {
        return Err(Error::Schema(format!(
            "family conflict: every outcome in {} is 0 or 1, which is bernoulli data, but the gaussian family was \
             requested; pass --family bernoulli (or --allow-binary-gaussian to fit it as gaussian)",
            a.data.display()
        )));
    }
    Ok(ds)
}

fn cache_dir(data: &Path, dir: Option<&PathBuf>, disabled: bool) -> Option<PathBuf> {
    if disabled {
        return None;
    }
    Some(match dir {
        Some(d) => d.clone(),
        None => data
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf(),
    })
}

fn design(ds: &FunctionalDataset, a: &DataArgs, b: &BasisArgs) -> Result<(BasisSpec, DesignCache)> {
    let basis = BasisSpec::with_dimension(0.0, ds.domain_end(), b.degree, b.basis_dim)?;
    let centers = b.center.then(|| ds.covariate_means());
    let dir = cache_dir(&a.data, a.cache_dir.as_ref(), a.no_cache);
    let cache = cache::load_or_compute(ds, &basis, centers, dir.as_deref())?;
    Ok((basis, cache))
}

fn finish(g: &GlobalArgs, manifest: Manifest, bytes: &[u8]) -> Result<()> {
    emit(g.out.as_deref(), bytes)?;
    if let Some(out) = &g.out {
        manifest.write_for(&[out.as_path()])?;
    }
    Ok(())
}

fn cmd_simulate(g: &GlobalArgs, a: &SimulateArgs, argv: &[String]) -> Result<()> {
    if a.setting == 2 && a.sigma_prime.is_some() {
        return Err(Error::Usage(
            "--sigma-prime does not apply to setting 2".into(),
        ));
    }
    let opts = SimOptions {
        noise_sd: a.noise_sd,
        alpha: a.alpha,
        x_degree: a.degree,
        x_dim: a.x_dim,
        beta_degree: a.degree,
        beta_dim: a.beta_dim,
    };
    let sigma_prime = a.sigma_prime.unwrap_or(1.0);
    let (train, truth) = simulate(a.setting, a.n, sigma_prime, g.seed, &opts)?;
    let data = if a.replicate == 0 {
        train
    } else {
        draw_replicate(&truth, a.replicate)?
    };
    let mut bytes = Vec::new();
    csvio::write_csv(&mut bytes, &data)?;
    let config = json!({
        "setting": a.setting,
        "n": a.n,
        "sigma_prime": if a.setting == 2 { Value::Null } else { json!(sigma_prime) },
        "family": family_name(truth.family),
        "replicate": a.replicate,
        "options": opts,
    });
    let manifest = Manifest::new("simulate", argv, vec![g.seed], config);
    emit(g.out.as_deref(), &bytes)?;
    let mut artifacts: Vec<&Path> = Vec::new();
    if let Some(out) = &g.out {
        artifacts.push(out);
    }
    if let Some(t) = &a.truth_out {
        write_file(t, &to_json(&truth)?)?;
        artifacts.push(t);
    }
    if !artifacts.is_empty() {
        manifest.write_for(&artifacts)?;
    }
    Ok(())
}

fn penalty_lambda(
    lambda: Option<f64>,
    rel: Option<f64>,
    ds: &FunctionalDataset,
    cache: &DesignCache,
    units: Units<'_>,
    phi: f64,
    ridge: f64,
) -> Result<f64> {
    match (lambda, rel) {
        (Some(l), _) => Ok(l),
        (None, Some(r)) => Ok(r * lambda_max(ds, cache, units, phi, ridge)?),
        (None, None) => Err(Error::Usage(
            "--method ghfm needs --lambda or --lambda-rel".into(),
        )),
    }
}

fn run_precluster(
    ds: &FunctionalDataset,
    cache: &DesignCache,
    k: usize,
    phi: f64,
    seed: u64,
    restarts: usize,
    ridge: f64,
) -> Result<Option<PreclusterResult>> {
    if k == 0 {
        return Ok(None);
    }
    let opts = PreclusterOptions {
        seed,
        restarts,
        ridge,
        ..Default::default()
    };
    Ok(Some(precluster(ds, cache, k, phi, &opts)?))
}

fn units_of(pre: &Option<PreclusterResult>) -> Units<'_> {
    match pre {
        Some(p) => Units::Groups(p),
        None => Units::Subjects,
    }
}

fn cmd_fit(g: &GlobalArgs, a: &FitArgs, argv: &[String]) -> Result<()> {
    let ds = load_data(&a.data)?;
    let mut config = json!({
        "method": format!("{:?}", a.method).to_lowercase(),
        "family": family_name(ds.family()),
        "phi": a.phi,
    });
    let model = if a.method == Method::Lm {
        ModelFile::Linear {
            fit: fit_lm_glm(&ds)?,
        }
    } else {
        let (basis, cache) = design(&ds, &a.data, &a.basis)?;
        config["basis"] = json!(basis);
        config["center"] = json!(a.basis.center);
        match a.method {
            Method::Sflm => ModelFile::functional(fit_sflm(&ds, &cache, a.phi)?, None, None),
            Method::Resp => {
                let groups = a
                    .groups
                    .ok_or_else(|| Error::Usage("--method resp needs --groups".into()))?;
                config["groups"] = json!(groups);
                ModelFile::functional(fit_resp(&ds, &cache, a.phi, groups)?, None, None)
            }
            _ => {
                let pre = run_precluster(
                    &ds,
                    &cache,
                    a.preclusters,
                    a.phi,
                    g.seed,
                    a.restarts,
                    a.solver.ridge,
                )?;
                let units = units_of(&pre);
                let lambda = penalty_lambda(
                    a.lambda,
                    a.lambda_rel,
                    &ds,
                    &cache,
                    units,
                    a.phi,
                    a.solver.ridge,
                )?;
                let penalty = a.solver.config(lambda, a.phi);
                let fit = fit_fused(&ds, &cache, units, &penalty)?;
                config["penalty"] = json!(penalty);
                config["preclusters"] = json!(a.preclusters);
                config["restarts"] = json!(a.restarts);
                ModelFile::functional(fit, Some(penalty), pre.as_ref())
            }
        }
    };
    let manifest = Manifest::new("fit", argv, vec![g.seed], config).with_inputs(&[&a.data.data])?;
    finish(g, manifest, model.to_json()?.as_bytes())
}

fn functional_design(
    fit: &FitResult,
    ds: &FunctionalDataset,
    dir: Option<&Path>,
) -> Result<DesignCache> {
    cache::load_or_compute(ds, &fit.basis, fit.centers.clone(), dir)
}

fn cmd_predict(g: &GlobalArgs, a: &PredictArgs, argv: &[String]) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let (family, domain_end) = match &model {
        ModelFile::Functional { fit, .. } => (fit.family, Some(fit.basis.domain_end)),
        ModelFile::Linear { fit } => (fit.family, fit.grid.last().copied()),
    };
    let schema = Schema::infer(&a.data, family, domain_end)?;
    let ds = csvio::ingest_csv(&a.data, &schema)?;
    let table = match &model {
        ModelFile::Functional { fit, .. } => {
            let dir = cache_dir(&a.data, a.cache_dir.as_ref(), a.no_cache);
            let cache = functional_design(fit, &ds, dir.as_deref())?;
            let mapping = fit.map_subjects(&ds)?;
            let preds = fit.predict_mapped(&ds, &cache, &mapping)?;
            let groups = mapping
                .iter()
                .map(|&u| fit.partitions[0].labels[u])
                .collect();
            PredictionTable::new(&preds, ds.y(), Some(groups))
        }
        ModelFile::Linear { fit } => PredictionTable::new(&fit.predict(&ds)?, ds.y(), None),
    };
    let mut bytes = Vec::new();
    csvio::write_predictions(&mut bytes, &table)?;
    let config = json!({ "method": model.method(), "family": family_name(family) });
    let manifest =
        Manifest::new("predict", argv, vec![g.seed], config).with_inputs(&[&a.model, &a.data])?;
    finish(g, manifest, &bytes)
}

#[derive(Debug, Serialize)]
struct Metrics {
    family: &'static str,
    days: usize,
    n: Vec<usize>,
    rmse: Option<Vec<f64>>,
    rpmse: Option<Vec<f64>>,
    /// Pooled over days (equal to the single-day value for one day).
    rpmse_pooled: Option<f64>,
    omr: Option<Vec<f64>>,
    omr_mean: Option<f64>,
    roc: Option<RocSummary>,
    smr: Option<f64>,
    ise: Option<f64>,
    subgroups: Option<usize>,
}

fn read_truth(path: &Path) -> Result<SyntheticTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: not a truth file: {e}", path.display())))
}

fn by_id(ids: &[String]) -> std::collections::HashMap<&str, usize> {
    ids.iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect()
}

fn cmd_evaluate(g: &GlobalArgs, a: &EvaluateArgs, argv: &[String]) -> Result<()> {
    let days: Vec<PredictionTable> = a
        .predictions
        .iter()
        .map(|p| csvio::read_predictions(p))
        .collect::<Result<_>>()?;
    let truth = a.truth.as_deref().map(read_truth).transpose()?;
    let model = a.model.as_deref().map(ModelFile::load).transpose()?;
    let family = match (a.family, &model, &truth) {
        (Some(f), _, _) => f.into(),
        (None, Some(ModelFile::Functional { fit, .. }), _) => fit.family,
        (None, Some(ModelFile::Linear { fit }), _) => fit.family,
        (None, None, Some(t)) => t.family,
        (None, None, None) => Family::Gaussian,
    };
    let ys: Vec<Vec<f64>> = days.iter().map(|d| d.outcome.clone()).collect();
    let ms: Vec<Vec<f64>> = days.iter().map(|d| d.mean.clone()).collect();
    let mut metrics = Metrics {
        family: family_name(family),
        days: days.len(),
        n: days.iter().map(|d| d.subject_ids.len()).collect(),
        rmse: None,
        rpmse: None,
        rpmse_pooled: None,
        omr: None,
        omr_mean: None,
        roc: None,
        smr: None,
        ise: None,
        subgroups: None,
    };
    match family {
        Family::Gaussian => {
            metrics.rmse = Some(
                ys.iter()
                    .zip(&ms)
                    .map(|(y, m)| rmse(y, m))
                    .collect::<fusion_core::Result<_>>()?,
            );
            metrics.rpmse = Some(
                ys.iter()
                    .zip(&ms)
                    .map(|(y, m)| rpmse(y, m))
                    .collect::<fusion_core::Result<_>>()?,
            );
            let pooling = match a.day_pooling {
                PoolingArg::MeanOfRoots => DayPooling::MeanOfRoots,
                PoolingArg::RootOfMean => DayPooling::RootOfMean,
            };
            // relative form: pooled RMSE over pooled root mean square outcome
            let num = multiday_rpmse(&ys, &ms, pooling)?;
            let zeros: Vec<Vec<f64>> = ys.iter().map(|y| vec![0.0; y.len()]).collect();
            let den = multiday_rpmse(&ys, &zeros, pooling)?;
            metrics.rpmse_pooled = Some(num / den);
        }
        Family::Bernoulli => {
            let o: Vec<f64> = ys
                .iter()
                .zip(&ms)
                .map(|(y, m)| omr(y, m, 0.5))
                .collect::<fusion_core::Result<_>>()?;
            metrics.omr_mean = Some(o.iter().sum::<f64>() / o.len() as f64);
            metrics.omr = Some(o);
            metrics.roc = multiday_roc(&ys, &ms).ok();
        }
    }
    if let Some(t) = &truth {
        let index = by_id(&t.subject_ids);
        if let Some(groups) = &days[0].subgroup {
            let mut est = Vec::new();
            let mut tru = Vec::new();
            for (id, &gr) in days[0].subject_ids.iter().zip(groups) {
                let i = *index.get(id.as_str()).ok_or_else(|| {
                    Error::Schema(format!("subject `{id}` is not in the truth file"))
                })?;
                est.push(gr);
                tru.push(t.labels[0][i]);
            }
            metrics.smr = Some(smr(&est, &tru)?);
            let mut distinct = est.clone();
            distinct.sort_unstable();
            distinct.dedup();
            metrics.subgroups = Some(distinct.len());
        }
        if let Some(ModelFile::Functional { fit, .. }) = &model {
            let curves = subject_curves(fit);
            let mut hat = Vec::new();
            let mut tru = Vec::new();
            for (id, c) in fit.subject_ids.iter().zip(curves) {
                let i = *index.get(id.as_str()).ok_or_else(|| {
                    Error::Schema(format!("subject `{id}` is not in the truth file"))
                })?;
                hat.push(c);
                tru.push(t.beta[i].clone());
            }
            metrics.ise = Some(ise(
                &hat,
                &tru,
                (fit.basis.domain_start, fit.basis.domain_end),
            )?);
        }
    }
    if let Some(row) = &a.row_out {
        let na = |v: Option<f64>| v.map_or("NA".to_string(), csvio::format_value);
        let mut w = csv::Writer::from_writer(Vec::new());
        let head = [
            "label",
            "family",
            "days",
            "rpmse",
            "omr",
            "auc",
            "fnr",
            "fpr",
            "ise",
            "smr",
            "subgroups",
        ];
        let roc = metrics.roc.as_ref();
        let cells = [
            a.label.clone(),
            metrics.family.to_string(),
            metrics.days.to_string(),
            na(metrics.rpmse_pooled),
            na(metrics.omr_mean),
            na(roc.map(|r| r.auc)),
            na(roc.and_then(|r| r.fnr)),
            na(roc.and_then(|r| r.fpr)),
            na(metrics.ise),
            na(metrics.smr),
            metrics
                .subgroups
                .map_or("NA".to_string(), |k| k.to_string()),
        ];
        let err = |e: csv::Error| Error::Numeric(e.to_string());
        w.write_record(head).map_err(err)?;
        w.write_record(&cells).map_err(err)?;
        let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        write_file(row, &bytes)?;
    }
    let mut inputs: Vec<&Path> = a.predictions.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.truth.as_deref());
    inputs.extend(a.model.as_deref());
    let config =
        json!({ "family": family_name(family), "day_pooling": format!("{:?}", a.day_pooling) });
    let manifest = Manifest::new("evaluate", argv, vec![g.seed], config).with_inputs(&inputs)?;
    emit(g.out.as_deref(), &to_json(&metrics)?)?;
    let mut artifacts: Vec<&Path> = g.out.iter().map(PathBuf::as_path).collect();
    artifacts.extend(a.row_out.as_deref());
    if !artifacts.is_empty() {
        manifest.write_for(&artifacts)?;
    }
    Ok(())
}

/// Parses `a,b,c` or `log:LO:HI:COUNT`; `rel:` is accepted when `allow_rel`.
pub fn parse_grid(text: &str, allow_rel: bool) -> Result<(Vec<f64>, bool)> {
    let bad = |why: &str| Error::Usage(format!("grid `{text}`: {why}"));
    let mut relative = false;
    let spec = if let Some(rest) = text.strip_prefix("rel:") {
        if !allow_rel {
            return Err(bad("relative grids apply to λ only"));
        }
        relative = true;
        Some(rest)
    } else {
        text.strip_prefix("log:")
    };
    let values = match spec {
        Some(rest) => {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("expected LO:HI:COUNT"));
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad("LO is not a number"))?;
            let hi: f64 = parts[1].parse().map_err(|_| bad("HI is not a number"))?;
            let count: usize = parts[2]
                .parse()
                .map_err(|_| bad("COUNT is not an integer"))?;
            log_grid(lo, hi, count)
        }
        None => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad("not a comma-separated list of numbers"))
            })
            .collect::<Result<_>>()?,
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad("values must be finite, nonnegative and at least one"));
    }
    Ok((values, relative))
}

fn write_path_csv(path: &Path, points: &[GridPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Numeric(e.to_string());
    w.write_record(["lambda", "phi", "score", "df", "subgroups", "converged"])
        .map_err(err)?;
    for p in points {
        let groups: Vec<String> = p.subgroups.iter().map(|k| k.to_string()).collect();
        w.write_record([
            csvio::format_value(p.lambda),
            csvio::format_value(p.phi),
            csvio::format_value(p.score),
            p.df.to_string(),
            groups.join(";"),
            p.converged.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    write_file(path, &bytes)
}

fn cmd_tune(g: &GlobalArgs, a: &TuneArgs, argv: &[String]) -> Result<()> {
    let ds = load_data(&a.data)?;
    let (basis, cache) = design(&ds, &a.data, &a.basis)?;
    let mut grid = GridSpec::default_for(ds.n());
    if let Some(text) = &a.lambda_grid {
        (grid.lambdas, grid.relative) = parse_grid(text, true)?;
    }
    if let Some(text) = &a.phi_grid {
        grid.phis = parse_grid(text, false)?.0;
    }
    let criterion = match a.criterion {
        CriterionArg::Bic => Criterion::Bic { c: a.bic_c },
        CriterionArg::Holdout => Criterion::Holdout,
    };
    let holdout = match (&a.holdout_file, a.criterion) {
        (Some(path), _) => {
            let schema = Schema::infer(path, ds.family(), Some(ds.domain_end()))?;
            let val = csvio::ingest_csv(path, &schema)?;
            let vcache = cache::load_or_compute(
                &val,
                &basis,
                cache.centers.clone(),
                cache_dir(path, a.data.cache_dir.as_ref(), a.data.no_cache).as_deref(),
            )?;
            Some((val, vcache))
        }
        (None, CriterionArg::Holdout) => {
            return Err(Error::Usage(
                "--criterion holdout needs --holdout-file".into(),
            ))
        }
        (None, CriterionArg::Bic) => None,
    };
    let validation = holdout.as_ref().map(|(d, c)| Validation {
        dataset: d,
        cache: c,
    });
    let base = a.solver.config(0.0, 0.0);

    let mut best: Option<(f64, TuneResult, Option<PreclusterResult>)> = None;
    let mut path = Vec::new();
    for &phi in &grid.phis {
        let pre = run_precluster(
            &ds,
            &cache,
            a.preclusters,
            phi,
            g.seed,
            a.restarts,
            a.solver.ridge,
        )?;
        let single = GridSpec {
            lambdas: grid.lambdas.clone(),
            phis: vec![phi],
            relative: grid.relative,
        };
        let r = tune(
            &ds,
            &cache,
            units_of(&pre),
            &single,
            criterion,
            &base,
            validation,
        )?;
        let score = r
            .path
            .iter()
            .find(|p| p.lambda == r.config.lambda)
            .map_or(f64::INFINITY, |p| p.score);
        path.extend(r.path.iter().cloned());
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, r, pre));
        }
    }
    let (_, result, pre) = best.ok_or_else(|| Error::Usage("empty φ grid".into()))?;
    let model = ModelFile::functional(result.fit, Some(result.config), pre.as_ref());
    if let Some(p) = &a.path_out {
        write_path_csv(p, &path)?;
    }
    let config = json!({
        "family": family_name(ds.family()),
        "basis": basis,
        "center": a.basis.center,
        "grid": grid,
        "criterion": criterion,
        "solver": base,
        "preclusters": a.preclusters,
        "restarts": a.restarts,
        "selected": result.config,
    });
    let mut inputs: Vec<&Path> = vec![&a.data.data];
    inputs.extend(a.holdout_file.as_deref());
    let manifest = Manifest::new("tune", argv, vec![g.seed], config).with_inputs(&inputs)?;
    emit(g.out.as_deref(), model.to_json()?.as_bytes())?;
    let mut artifacts: Vec<&Path> = g.out.iter().map(PathBuf::as_path).collect();
    artifacts.extend(a.path_out.as_deref());
    if !artifacts.is_empty() {
        manifest.write_for(&artifacts)?;
    }
    Ok(())
}

fn cmd_export(g: &GlobalArgs, a: &ExportArgs, argv: &[String]) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let ModelFile::Functional { fit, .. } = &model else {
        return Err(Error::Usage(
            "export-curves needs a functional model; grid-value regressions have no curves".into(),
        ));
    };
    let rows = sample_curves(fit, a.points)?;
    let multi = fit.coefs.p > 1;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Numeric(e.to_string());
    if multi {
        w.write_record(["covariate", "t", "subgroup", "value"])
            .map_err(err)?;
    } else {
        w.write_record(["t", "subgroup", "value"]).map_err(err)?;
    }
    for (j, sg, t, v) in rows {
        let mut rec = Vec::with_capacity(4);
        if multi {
            rec.push(j.to_string());
        }
        rec.extend([
            csvio::format_value(t),
            sg.to_string(),
            csvio::format_value(v),
        ]);
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    let config = json!({ "points": a.points, "method": model.method() });
    let manifest =
        Manifest::new("export-curves", argv, vec![g.seed], config).with_inputs(&[&a.model])?;
    finish(g, manifest, &bytes)
}

fn cmd_reproduce(g: &GlobalArgs, a: &ReproduceArgs, argv: &[String]) -> Result<()> {
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|s| g.seed + s).collect();
    let phis = a
        .phi_grid
        .as_deref()
        .map(|t| parse_grid(t, false))
        .transpose()?
        .map(|(v, _)| v);
    let adjust = |cfg: &mut crate::study::StudyConfig| {
        if let Some(k) = a.preclusters {
            cfg.preclusters = (k > 0).then_some(k);
        }
        if let Some(r) = a.restarts {
            cfg.restarts = r;
        }
        if let Some(p) = &phis {
            cfg.phis = p.clone();
        }
        if let Some(c) = a.lambda_count {
            cfg.lambda_count = c;
        }
        if let Some(m) = a.max_iters {
            cfg.solver.max_iters = m;
        }
    };
    let (table, replicates) = tables::reproduce(a.table, a.n, &seeds, adjust)?;
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    let mut sample = tables::cell_config(a.table, tables::row_keys(a.table)?[0], a.n, g.seed);
    adjust(&mut sample);
    let config = json!({
        "table": a.table,
        "n": a.n,
        "seeds": seeds,
        "study": {
            "preclusters": sample.preclusters,
            "restarts": sample.restarts,
            "phis": sample.phis,
            "lambda_decades": sample.lambda_decades,
            "lambda_count": sample.lambda_count,
            "solver": sample.solver,
            "sim": sample.sim,
        },
    });
    let manifest = Manifest::new("reproduce", argv, seeds.clone(), config);
    emit(g.out.as_deref(), &bytes)?;
    let mut artifacts: Vec<&Path> = g.out.iter().map(PathBuf::as_path).collect();
    if let Some(r) = &a.replicates_out {
        write_file(r, &to_json(&replicates)?)?;
        artifacts.push(r);
    }
    if !artifacts.is_empty() {
        manifest.write_for(&artifacts)?;
    }
    Ok(())
}
