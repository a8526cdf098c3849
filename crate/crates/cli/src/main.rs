//! `optmed`: fit optimal composite mediators, test for mediation, compute
//! power, run the simulation studies and pool federated summaries.
//!
//! Exit codes: 0 success, 2 parse or schema error, 3 degenerate data,
//! 4 numerical failure.

mod input;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use optmed::dual::{dual_path_vectors, dual_statistics, maxie_fit_dual_from_geometry, DEFAULT_EIG_CUTOFF};
use optmed::federate::{combine_with, site_extract, SiteSummary};
use optmed::inference::{cosine_test, iut_test, power_at_angle, CosineTest};
use optmed::primal::{maxie_fit_from_geometry, path_vectors, DEFAULT_RIDGE_SCALE};
use optmed::simulate::{self, ResultRow, Scale};
use optmed::{
    compute_sufficient_stats, evaluate_composite, maxcor_fit, select_regime, Dataset, MediationError, MediatorFit,
    Regime, SufficientStats,
};

const FIT_SCHEMA: &str = "optmed-fit/1";
const TEST_SCHEMA: &str = "optmed-test/1";
const POWER_SCHEMA: &str = "optmed-power/1";

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn parse(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<MediationError> for CliError {
    fn from(e: MediationError) -> Self {
        use MediationError::*;
        let code = match &e {
            NonFiniteInput { .. }
            | DimensionMismatch(_)
            | SchemaMismatch(_)
            | FeatureOrderMismatch { .. }
            | InvalidArgument(_)
            | InvalidCosine(_) => 2,
            ZeroVarianceColumn(_)
            | TooFewObservations { .. }
            | NotCentred
            | DegenerateTreatment
            | DegenerateComposite
            | DegeneratePath(_)
            | RegimeUnsupported(_)
            | InsufficientDf(_)
            | ZeroPathVector => 3,
            FactorisationFailure(_) | ZeroKernel | SingularMetric => 4,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "optmed", version, about = "Optimal composite mediators and the cosine global test")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the optimal concordant and suppression composites.
    Fit(FitArgs),
    /// Cosine global test for the existence of a composite mediator.
    Test(TestArgs),
    /// Analytic power of the cosine test at a population angle.
    Power(PowerArgs),
    /// Run a simulation study and write tidy CSV results.
    Simulate(SimulateArgs),
    /// Compute a site's raw cross-product summary.
    ExtractSummary(ExtractArgs),
    /// Pool site summaries and fit and test on the pooled statistics.
    Combine(CombineArgs),
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Headed CSV; every column other than treatment and outcome is a mediator.
    csv: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    outcome: String,
    /// Scale mediators to unit sample standard deviation after centring.
    #[arg(long)]
    standardise: bool,
    #[arg(long, value_enum, default_value_t = RegimeArg::Auto)]
    regime: RegimeArg,
    /// Ridge on V relative to tr(V)/p (primal only).
    #[arg(long, default_value_t = DEFAULT_RIDGE_SCALE)]
    ridge: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum RegimeArg {
    Auto,
    Primal,
    Dual,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    /// Also run the intersection–union test (needs n > p + 2).
    #[arg(long)]
    iut: bool,
    /// Replace the reference degrees of freedom.
    #[arg(long)]
    df_override: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PowerArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Population angle between the path vectors, in degrees.
    #[arg(long)]
    angle_deg: f64,
    /// p for the primal test, n for the dual.
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Primal,
    Dual,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Experiment {
    Table1,
    Table3,
    Fig1,
    Fig2,
    Fig3,
    Timing,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScaleArg {
    Full,
    Desk,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Override the replicate count of every cell.
    #[arg(long)]
    replicates: Option<usize>,
    /// CSV destination; the manifest goes to `<out>.manifest.json`. Without
    /// it the CSV goes to stdout and the manifest to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExtractArgs {
    csv: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    outcome: String,
    /// Identifier that fixes this site's position in the pooled sums.
    #[arg(long)]
    site_id: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CombineArgs {
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    /// Standardise with pooled column variances.
    #[arg(long)]
    standardise: bool,
    #[arg(long)]
    iut: bool,
    #[arg(long, default_value_t = DEFAULT_RIDGE_SCALE)]
    ridge: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Manifest {
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<(String, String)>,
    config: Value,
    start: Instant,
}

impl Manifest {
    fn new(command: &'static str, config: &impl Serialize) -> Self {
        Self {
            command,
            seed: None,
            inputs: Vec::new(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            start: Instant::now(),
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "version": concat!("optmed ", env!("CARGO_PKG_VERSION")),
            "seed": self.seed,
            "inputs": self.inputs.iter().map(|(p, h)| json!({"path": p, "sha256": h})).collect::<Vec<_>>(),
            "elapsedMs": self.start.elapsed().as_secs_f64() * 1e3,
            "config": self.config,
        })
    }
}

fn emit(doc: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| CliError { code: 4, message: e.to_string() })?;
    write_text(&(text + "\n"), out)
}

fn write_text(text: &str, out: Option<&Path>) -> CliResult<()> {
    let res = match out {
        Some(path) => fs::write(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    res.map_err(|e| CliError { code: 2, message: format!("cannot write output: {e}") })
}

fn vec_json(v: &nalgebra::DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn load(args: &DataArgs, manifest: &mut Manifest) -> CliResult<Dataset> {
    let table = input::read_dataset(&args.csv, &args.treatment, &args.outcome)?;
    manifest.inputs.push((args.csv.display().to_string(), table.sha256));
    Ok(table.dataset.center_and_standardise(args.standardise)?)
}

fn resolve_regime(arg: RegimeArg, d: &Dataset) -> Regime {
    match arg {
        RegimeArg::Auto => select_regime(d.n(), d.p()),
        RegimeArg::Primal => Regime::Primal,
        RegimeArg::Dual => Regime::Dual,
    }
}

/// Everything the fit and test documents report about one dataset.
struct Analysis {
    regime: Regime,
    cos_phi: f64,
    df: f64,
    /// `None` when a path is empty and no composite exists.
    fit: Option<MediatorFit>,
    degenerate: Option<String>,
    stats: Option<SufficientStats>,
}

fn analyse_stats(s: SufficientStats, ridge: f64) -> CliResult<Analysis> {
    let g = path_vectors(&s, ridge)?;
    let (fit, degenerate) = if g.has_empty_path() {
        (None, Some(if g.norm_p == 0.0 { "treatment path (a) is empty" } else { "outcome path (z) is empty" }))
    } else {
        (Some(maxie_fit_from_geometry(&s, &g)?), None)
    };
    Ok(Analysis {
        regime: Regime::Primal,
        cos_phi: g.cos_phi,
        df: s.p as f64 - 1.0,
        fit,
        degenerate: degenerate.map(str::to_string),
        stats: Some(s),
    })
}

fn analyse(d: &Dataset, regime: Regime, ridge: f64) -> CliResult<Analysis> {
    match regime {
        Regime::Primal => {
            if d.p() >= d.n() {
                return Err(MediationError::RegimeUnsupported(format!(
                    "primal regime needs p < n (p = {}, n = {}); rerun with --regime dual",
                    d.p(),
                    d.n()
                ))
                .into());
            }
            analyse_stats(compute_sufficient_stats(d)?, ridge)
        }
        Regime::Dual => {
            let stats = dual_statistics(d)?;
            let g = dual_path_vectors(&stats, DEFAULT_EIG_CUTOFF)?;
            let (fit, degenerate) = if g.has_empty_path() {
                let which = if g.norm_p() == 0.0 { "treatment" } else { "outcome" };
                (None, Some(format!("{which} path is empty")))
            } else {
                (Some(maxie_fit_dual_from_geometry(d, &g)?), None)
            };
            Ok(Analysis {
                regime: Regime::Dual,
                cos_phi: g.cos_phi,
                df: d.n() as f64 - 2.0,
                fit,
                degenerate,
                stats: None,
            })
        }
    }
}

fn fit_json(a: &Analysis, d: Option<&Dataset>) -> CliResult<Value> {
    let Some(fit) = &a.fit else {
        return Ok(Value::Null);
    };
    let summary = |w: &nalgebra::DVector<f64>| -> CliResult<Value> {
        match d {
            Some(d) if w.iter().any(|v| *v != 0.0) => Ok(serde_json::to_value(evaluate_composite(w, d)?).unwrap_or_default()),
            _ => Ok(Value::Null),
        }
    };
    Ok(json!({
        "pathStrength": fit.path_strength,
        "wPlus": vec_json(&fit.w_plus),
        "wMinus": vec_json(&fit.w_minus),
        "coefPlus": fit.coef_plus,
        "coefMinus": fit.coef_minus,
        "effectPlus": fit.effect_plus,
        "effectMinus": fit.effect_minus,
        "summaryPlus": summary(&fit.w_plus)?,
        "summaryMinus": summary(&fit.w_minus)?,
    }))
}

fn maxcor_json(a: &Analysis) -> CliResult<Value> {
    match (&a.stats, &a.fit) {
        (Some(s), Some(_)) if s.norm_y2 > 0.0 => {
            let m = maxcor_fit(s)?;
            Ok(json!({"w": vec_json(&m.w), "fstar": m.fstar, "theta": m.theta, "converged": m.converged}))
        }
        _ => Ok(Value::Null),
    }
}

fn iut_json(s: Option<&SufficientStats>) -> CliResult<Value> {
    match s {
        Some(s) if s.n > s.p + 2 => {
            let mut v = serde_json::to_value(iut_test(s)?).unwrap_or_default();
            v["available"] = json!(true);
            Ok(v)
        }
        Some(s) => Ok(json!({"available": false, "reason": format!("needs n > p + 2 (n = {}, p = {})", s.n, s.p)})),
        None => Ok(json!({"available": false, "reason": "needs n > p + 2"})),
    }
}

/// The cosine test, or its trivial value `T = 0`, `p = 1` when a path is
/// empty (a one-dimensional primal problem has no residual df).
fn run_cosine_test(a: &Analysis, df: f64) -> CliResult<CosineTest> {
    if a.degenerate.is_some() {
        return Ok(CosineTest {
            cos_phi: 0.0,
            t_stat: 0.0,
            df,
            p_two_sided: 1.0,
            p_concordant: 0.5,
            p_suppression: 0.5,
            regime: a.regime,
        });
    }
    Ok(cosine_test(a.cos_phi, df, a.regime)?)
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("fit", args);
    let d = load(&args.data, &mut manifest)?;
    let a = analyse(&d, resolve_regime(args.data.regime, &d), args.data.ridge)?;
    let test = run_cosine_test(&a, a.df)?;
    let doc = json!({
        "schema": FIT_SCHEMA,
        "regime": a.regime,
        "n": d.n(),
        "p": d.p(),
        "featureNames": d.feature_names(),
        "cosPhi": a.cos_phi,
        "degenerate": a.degenerate,
        "maxie": fit_json(&a, Some(&d))?,
        "maxcor": maxcor_json(&a)?,
        "test": test,
        "manifest": manifest.to_json(),
    });
    emit(&doc, args.out.as_deref())
}

fn cmd_test(args: &TestArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("test", args);
    let d = load(&args.data, &mut manifest)?;
    let regime = resolve_regime(args.data.regime, &d);
    let a = analyse(&d, regime, args.data.ridge)?;
    let df = args.df_override.unwrap_or(a.df);
    let test = run_cosine_test(&a, df)?;
    let iut = if args.iut {
        let stats = match (&a.stats, d.n() > d.p() + 2) {
            (Some(s), _) => Some(s.clone()),
            (None, true) => Some(compute_sufficient_stats(&d)?),
            (None, false) => None,
        };
        iut_json(stats.as_ref())?
    } else {
        Value::Null
    };
    let doc = json!({
        "schema": TEST_SCHEMA,
        "regime": a.regime,
        "n": d.n(),
        "p": d.p(),
        "degenerate": a.degenerate,
        "cosine": test,
        "iut": iut,
        "manifest": manifest.to_json(),
    });
    emit(&doc, args.out.as_deref())
}

fn cmd_power(args: &PowerArgs) -> CliResult<()> {
    let manifest = Manifest::new("power", args);
    if !(0.0..=180.0).contains(&args.angle_deg) {
        return Err(CliError::parse(format!("--angle-deg must lie in [0, 180], got {}", args.angle_deg)));
    }
    let regime = match args.mode {
        ModeArg::Primal => Regime::Primal,
        ModeArg::Dual => Regime::Dual,
    };
    let result = power_at_angle(args.angle_deg.to_radians(), args.dim, regime, args.alpha)?;
    let doc = json!({
        "schema": POWER_SCHEMA,
        "mode": regime,
        "angleDeg": args.angle_deg,
        "dim": args.dim,
        "result": result,
        "manifest": manifest.to_json(),
    });
    emit(&doc, args.out.as_deref())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("simulate", args);
    manifest.seed = Some(args.seed);
    let scale = match args.scale {
        ScaleArg::Full => Scale::Full,
        ScaleArg::Desk => Scale::Desk,
    };
    let rows: Vec<ResultRow> = match args.experiment {
        Experiment::Table1 => {
            simulate::run_table1(&simulate::table1_grid(scale), args.replicates.unwrap_or(20), args.seed)?
        }
        Experiment::Table3 => {
            let reps = args.replicates.unwrap_or(match scale {
                Scale::Full => 1000,
                Scale::Desk => 250,
            });
            simulate::run_table3(&simulate::table3_grid(scale), reps, args.seed)?
        }
        Experiment::Fig1 => simulate::run_fig1(scale, args.replicates, args.seed)?,
        Experiment::Fig2 => simulate::run_fig2(scale, args.replicates, args.seed)?,
        Experiment::Fig3 => simulate::run_fig3(scale, args.replicates, args.seed)?,
        Experiment::Timing => simulate::run_timing(scale, args.replicates, args.seed)?,
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError { code: 4, message: e.to_string() })?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError { code: 4, message: e.to_string() })?;
    let text = String::from_utf8(bytes).map_err(|e| CliError { code: 4, message: e.to_string() })?;
    let mut doc = manifest.to_json();
    doc["rows"] = json!(rows.len());
    doc["sampler"] = json!(simulate::SAMPLER);
    doc["csvSha256"] = json!(input::sha256_hex(text.as_bytes()));
    match &args.out {
        Some(path) => {
            write_text(&text, Some(path))?;
            let mut manifest_path = path.clone().into_os_string();
            manifest_path.push(".manifest.json");
            emit(&doc, Some(Path::new(&manifest_path)))
        }
        None => {
            write_text(&text, None)?;
            eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
            Ok(())
        }
    }
}

fn cmd_extract(args: &ExtractArgs) -> CliResult<()> {
    let table = input::read_dataset(&args.csv, &args.treatment, &args.outcome)?;
    let summary = site_extract(&args.site_id, &table.dataset)?;
    write_text(&(summary.to_json()? + "\n"), args.out.as_deref())
}

fn cmd_combine(args: &CombineArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("combine", args);
    let mut summaries = Vec::with_capacity(args.summaries.len());
    for path in &args.summaries {
        let bytes = input::read_file(path)?;
        manifest.inputs.push((path.display().to_string(), input::sha256_hex(&bytes)));
        let text = String::from_utf8(bytes).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        let summary = SiteSummary::from_json(&text)
            .map_err(|e| CliError::parse(format!("{}: {}", path.display(), CliError::from(e).message)))?;
        summaries.push(summary);
    }
    let s = combine_with(&summaries, args.standardise)?;
    if s.p >= s.n {
        return Err(MediationError::RegimeUnsupported(format!(
            "pooled summaries need p < n (p = {}, n = {})",
            s.p, s.n
        ))
        .into());
    }
    let names = summaries[0].feature_names.clone();
    let (n, p) = (s.n, s.p);
    let a = analyse_stats(s, args.ridge)?;
    let test = run_cosine_test(&a, a.df)?;
    let iut = if args.iut { iut_json(a.stats.as_ref())? } else { Value::Null };
    let doc = json!({
        "schema": FIT_SCHEMA,
        "regime": a.regime,
        "n": n,
        "p": p,
        "sites": summaries.len(),
        "featureNames": names,
        "cosPhi": a.cos_phi,
        "degenerate": a.degenerate,
        "maxie": fit_json(&a, None)?,
        "maxcor": maxcor_json(&a)?,
        "test": test,
        "iut": iut,
        "manifest": manifest.to_json(),
    });
    emit(&doc, args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Test(a) => cmd_test(a),
        Command::Power(a) => cmd_power(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ExtractSummary(a) => cmd_extract(a),
        Command::Combine(a) => cmd_combine(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
