//! Command-line pipeline: synth → weigh → average → evaluate → report.
//!
//! Exit codes: 0 success, 1 usage, 2 data or schema, 3 numerical failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{align_rotations, auc, export_cdf, median};
use crate::loss::{LossKind, LossSpec, DEFAULT_MAGSAC_ALPHA, DEFAULT_MAGSAC_NU};
use crate::solver::{
    default_loss_scale, solve_components, LinearSolver, ResultFile, SolverConfig, WarmStart,
    Weighting,
};
use crate::synth::{generate_graph, generate_pairs, OutlierCovariance, SynthConfig};
use crate::uncertainty::{graph_from_weighed, weigh_pairs, CovarianceMode, PairsFile};
use crate::viewgraph::{SpanningTreeCriterion, ViewGraph};

#[derive(Debug, Parser)]
#[command(
    name = "rotavg",
    version,
    about = "Uncertainty-weighted robust rotation averaging"
)]
struct Cli {
    /// Worker threads (1 gives bit-reproducible scheduling; results are
    /// deterministic for any count).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic view graph with ground truth.
    Synth(SynthArgs),
    /// Estimate edge covariances from two-view correspondence sets.
    Weigh(WeighArgs),
    /// Average rotations over a view graph.
    Average(AverageArgs),
    /// Align a result to ground truth and print AUC statistics.
    Evaluate(EvaluateArgs),
    /// Tabulate AUC of several results against one ground truth.
    Report(ReportArgs),
    /// Time the averaging stage.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of cameras.
    #[arg(long, default_value_t = 50)]
    cameras: usize,
    /// Probability that a camera pair is an edge.
    #[arg(long, default_value_t = 0.25)]
    density: f64,
    /// Noise mixture as fraction:sigma_deg pairs, comma separated.
    #[arg(long, default_value = "0.5:0.5,0.5:5.0")]
    noise: String,
    /// Fraction of edges replaced by random rotations.
    #[arg(long, default_value_t = 0.1)]
    outliers: f64,
    /// Random seed; equal seeds give identical files.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave the true covariance off the edges.
    #[arg(long)]
    no_true_covariance: bool,
    /// Covariance and inlier count reported on outlier edges.
    #[arg(long, value_enum, default_value_t = OutlierCovArg::Confident)]
    outlier_covariance: OutlierCovArg,
    /// Inlier count of an edge at the smallest noise level.
    #[arg(long, default_value_t = 1000.0)]
    base_inliers: f64,
    /// Log-normal spread of inlier counts.
    #[arg(long, default_value_t = 0.75)]
    inlier_jitter: f64,
    /// Output view-graph file.
    #[arg(long)]
    out: PathBuf,
    /// Also write a correspondence-set file consistent with the edges.
    #[arg(long)]
    correspondences: Option<PathBuf>,
    /// Pixel noise of the generated correspondences.
    #[arg(long, default_value_t = 1.0)]
    pixel_sigma: f64,
    /// Upper bound on correspondences per pair.
    #[arg(long, default_value_t = 200)]
    max_points: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OutlierCovArg {
    Confident,
    Mixture,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum CovModeArg {
    RotationOnly,
    MarginalizeTranslation,
}

impl From<CovModeArg> for CovarianceMode {
    fn from(m: CovModeArg) -> Self {
        match m {
            CovModeArg::RotationOnly => CovarianceMode::RotationOnly,
            CovModeArg::MarginalizeTranslation => CovarianceMode::MarginalizeTranslation,
        }
    }
}

#[derive(Debug, Args)]
struct WeighArgs {
    /// Correspondence-set file.
    #[arg(long)]
    pairs: PathBuf,
    /// View graph whose nodes (and ground truth) are kept.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Hold the translation fixed or marginalize it out.
    #[arg(long, value_enum, default_value_t = CovModeArg::RotationOnly)]
    covariance_mode: CovModeArg,
    /// Standard deviation of the Sampson residual in pixels.
    #[arg(long, default_value_t = 1.0)]
    pixel_sigma: f64,
    /// Output view-graph file with covariances.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum InitArg {
    Auto,
    InlierCount,
    InverseCovTrace,
    Unit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LinearSolverArg {
    Auto,
    Dense,
    Sparse,
}

fn loss_parser() -> impl TypedValueParser<Value = LossKind> {
    PossibleValuesParser::new(LossKind::ALL.map(|k| k.name()))
        .map(|s| s.parse::<LossKind>().unwrap())
}

fn weighting_parser() -> impl TypedValueParser<Value = Weighting> {
    PossibleValuesParser::new(Weighting::ALL.map(|w| w.name()))
        .map(|s| s.parse::<Weighting>().unwrap())
}

#[derive(Debug, Clone, Args)]
struct SolverArgs {
    /// Robust loss on the squared weighted residual norm.
    #[arg(long, default_value = "magsac", value_parser = loss_parser())]
    loss: LossKind,
    /// Loss scale; defaults depend on the weighting (radians for none and
    /// inlier_count, whitened units for the covariance modes).
    #[arg(long)]
    loss_scale: Option<f64>,
    /// Degrees of freedom of the marginalized loss.
    #[arg(long, default_value_t = DEFAULT_MAGSAC_NU)]
    magsac_nu: u32,
    /// Confidence of the marginalized loss cut-off.
    #[arg(long, default_value_t = DEFAULT_MAGSAC_ALPHA)]
    magsac_alpha: f64,
    /// Per-edge residual weighting.
    #[arg(long, default_value = "cov_full", value_parser = weighting_parser())]
    weighting: Weighting,
    /// Spanning-tree criterion for the initialization.
    #[arg(long, value_enum, default_value_t = InitArg::Auto)]
    init: InitArg,
    /// Skip the near-L1 warm start.
    #[arg(long)]
    no_warm_start: bool,
    /// Cap on reweighting rounds.
    #[arg(long, default_value_t = 32)]
    max_outer: usize,
    /// Cap on Gauss–Newton steps per reweighting round.
    #[arg(long, default_value_t = 10)]
    max_inner: usize,
    /// Fail instead of using unit weight on edges lacking weighting data.
    #[arg(long)]
    strict_weights: bool,
    /// Normal-equation solver (auto: dense up to 64 nodes).
    #[arg(long, value_enum, default_value_t = LinearSolverArg::Auto)]
    linear_solver: LinearSolverArg,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig> {
        let scale = self
            .loss_scale
            .unwrap_or_else(|| default_loss_scale(self.weighting));
        let loss = LossSpec::new(self.loss, scale, self.magsac_nu, self.magsac_alpha)?;
        let mut config = SolverConfig::new(loss, self.weighting);
        config.max_outer_irls = self.max_outer;
        config.max_inner_gn = self.max_inner;
        config.unit_fallback = !self.strict_weights;
        config.warm_start = (!self.no_warm_start).then(|| WarmStart::l1_like(self.weighting));
        config.linear_solver = match self.linear_solver {
            LinearSolverArg::Auto => LinearSolver::Auto,
            LinearSolverArg::Dense => LinearSolver::Dense,
            LinearSolverArg::Sparse => LinearSolver::Sparse,
        };
        config.validate()?;
        Ok(config)
    }

    fn criterion(&self) -> Option<SpanningTreeCriterion> {
        match self.init {
            InitArg::Auto => None,
            InitArg::InlierCount => Some(SpanningTreeCriterion::InlierCount),
            InitArg::InverseCovTrace => Some(SpanningTreeCriterion::InverseCovTrace),
            InitArg::Unit => Some(SpanningTreeCriterion::Unit),
        }
    }
}

#[derive(Debug, Args)]
struct AverageArgs {
    /// Input view-graph file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output result file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Result file from `average`.
    #[arg(long)]
    est: PathBuf,
    /// View graph carrying ground-truth rotations.
    #[arg(long)]
    gt: PathBuf,
    /// AUC thresholds in degrees.
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
    thresholds: Vec<f64>,
    /// Write the error CDF as CSV.
    #[arg(long)]
    cdf: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// View graph carrying ground-truth rotations.
    #[arg(long)]
    gt: PathBuf,
    /// Result files from `average`, one table row each.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// AUC thresholds in degrees.
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
    thresholds: Vec<f64>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Input view-graph file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Timed repetitions.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Runs the command line; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();

    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
        {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(Error::Configuration(format!(
                "cannot start thread pool: {e}"
            ))),
        },
        None => dispatch(&cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Weigh(a) => weigh(a),
        Command::Average(a) => average(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
        Command::Bench(a) => bench(a),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_cameras: a.cameras,
        edge_density: a.density,
        noise_sigmas_deg: SynthConfig::parse_mixture(&a.noise)?,
        outlier_fraction: a.outliers,
        seed: a.seed,
        report_true_covariance: !a.no_true_covariance,
        outlier_covariance: match a.outlier_covariance {
            OutlierCovArg::Confident => OutlierCovariance::Confident,
            OutlierCovArg::Mixture => OutlierCovariance::Mixture,
        },
        base_inliers: a.base_inliers,
        inlier_jitter: a.inlier_jitter,
    };
    config.validate()?;
    if a.correspondences.is_some() && !(a.pixel_sigma >= 0.0 && a.max_points >= 8) {
        return Err(Error::InvalidArgument(
            "pixel sigma must be ≥ 0 and max points ≥ 8".into(),
        ));
    }
    let scene = generate_graph(&config)?;
    scene.graph.save(&a.out)?;
    log::info!(
        "wrote {} nodes, {} edges ({} outliers) to {}",
        scene.graph.nodes().len(),
        scene.graph.edges().len(),
        scene.outlier_edge_ids.len(),
        a.out.display()
    );
    if let Some(path) = &a.correspondences {
        generate_pairs(&scene.graph, a.pixel_sigma, a.max_points, a.seed)?.save(path)?;
    }
    Ok(())
}

fn weigh(a: &WeighArgs) -> Result<()> {
    if !(a.pixel_sigma > 0.0 && a.pixel_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel sigma must be positive, got {}",
            a.pixel_sigma
        )));
    }
    let pairs = PairsFile::load(&a.pairs)?;
    let template = a.template.as_deref().map(ViewGraph::load).transpose()?;
    let weighed = weigh_pairs(&pairs, a.pixel_sigma, a.covariance_mode.into())?;
    let failed = weighed.iter().filter(|w| w.covariance.is_err()).count();
    if failed > 0 {
        log::warn!("{failed} of {} pairs have no covariance", weighed.len());
    }
    graph_from_weighed(&weighed, template.as_ref())?.save(&a.out)
}

fn average(a: &AverageArgs) -> Result<()> {
    let config = a.solver.config()?;
    let g = ViewGraph::load(&a.input)?;
    let result = solve_components(&g, a.solver.criterion(), &config)?;
    if result.fallback_edges > 0 {
        log::warn!("{} edges used unit weight", result.fallback_edges);
    }
    log::info!(
        "final cost {:.6e} after {} iterations (converged: {})",
        result.final_cost,
        result.outer_iterations,
        result.converged
    );
    ResultFile::from_result(&g, &result, Some(&config)).save(&a.out)
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(
            "thresholds must be positive numbers".into(),
        ));
    }
    Ok(())
}

fn errors_against(est: &Path, gt: &ViewGraph) -> Result<(ResultFile, Vec<f64>)> {
    let result = ResultFile::load(est)?;
    let truth = gt.ground_truth();
    let rotations = result.rotations()?;
    let alignment = align_rotations(&rotations, &truth).map_err(|e| match e {
        Error::EmptyIntersection => Error::schema(
            format!("{}", est.display()),
            "no node id in common with the ground truth (does the graph carry gt_qwxyz?)",
        ),
        other => other,
    })?;
    Ok((result, alignment.errors()))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    check_thresholds(&a.thresholds)?;
    let gt = ViewGraph::load(&a.gt)?;
    let (_, errors) = errors_against(&a.est, &gt)?;
    let mut out = String::new();
    writeln!(out, "views      {}", errors.len()).unwrap();
    writeln!(out, "median     {:.4}°", median(&errors)).unwrap();
    writeln!(
        out,
        "mean       {:.4}°",
        errors.iter().sum::<f64>() / errors.len() as f64
    )
    .unwrap();
    for t in &a.thresholds {
        writeln!(out, "AUC@{:<6} {:.2}", format!("{t}°"), auc(&errors, *t)?).unwrap();
    }
    print!("{out}");
    if let Some(path) = &a.cdf {
        export_cdf(&errors, path)?;
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    check_thresholds(&a.thresholds)?;
    let gt = ViewGraph::load(&a.gt)?;
    let mut rows = Vec::new();
    for path in &a.results {
        let (result, errors) = errors_against(path, &gt)?;
        let label = |v: Option<String>| v.unwrap_or_else(|| "?".into());
        let aucs = a
            .thresholds
            .iter()
            .map(|t| auc(&errors, *t))
            .collect::<Result<Vec<_>>>()?;
        rows.push((
            label(result.loss.map(|l| l.to_string())),
            label(result.weighting.map(|w| w.to_string())),
            aucs,
        ));
    }
    let headers: Vec<String> = a.thresholds.iter().map(|t| format!("AUC@{t}°")).collect();
    let mut table = format!("{:<10} {:<13}", "loss", "weighting");
    for h in &headers {
        write!(table, " {h:>8}").unwrap();
    }
    table.push('\n');
    for (loss, weighting, aucs) in &rows {
        write!(table, "{loss:<10} {weighting:<13}").unwrap();
        for v in aucs {
            write!(table, " {v:>8.2}").unwrap();
        }
        table.push('\n');
    }
    print!("{table}");
    if let Some(path) = &a.csv {
        let mut csv = String::from("loss,weighting");
        for t in &a.thresholds {
            write!(csv, ",auc_{t}").unwrap();
        }
        csv.push('\n');
        for (loss, weighting, aucs) in &rows {
            write!(csv, "{loss},{weighting}").unwrap();
            for v in aucs {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
        std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let config = a.solver.config()?;
    let g = ViewGraph::load(&a.input)?;
    let mut times = Vec::with_capacity(a.repeat as usize);
    let mut iterations = 0;
    for _ in 0..a.repeat {
        let start = Instant::now();
        let result = solve_components(&g, a.solver.criterion(), &config)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        iterations = result.outer_iterations;
    }
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(
        stdout,
        "nodes {} edges {} iterations {} | min {:.3} ms median {:.3} ms max {:.3} ms",
        g.nodes().len(),
        g.edges().len(),
        iterations,
        times.iter().copied().fold(f64::INFINITY, f64::min),
        median(&times),
        times.iter().copied().fold(0.0, f64::max)
    );
    Ok(())
}
