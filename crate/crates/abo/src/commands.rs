use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use abo_core::acquisition::{LiarStrategy, OptimizerConfig};
use abo_core::executor::{
    run_search, ClockMode, EvalStatus, PriorProvenance, SearchBudget, SearchHistory,
};
use abo_core::metrics::{self, BestTrace, MetricsReport};
use abo_core::space::{Configuration, ParamValue, ParameterSpace};
use abo_core::surrogate::{RfConfig, SurrogateKind, SurrogateSpec};
use abo_core::transfer::{
    compose_prior, fit_tvae, gaussian_prior, select_top_quantile, PriorSampler, TvaeConfig,
};
use abo_core::workloads::{fit_surrogate_workload, SurrogateWorkload, SyntheticWorkload, Workload};

pub enum ExitCode {
    Success,
    NoOkEvaluations,
}

#[derive(Parser)]
#[command(name = "abo", version, about = "Asynchronous Bayesian optimization autotuner")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search against a workload and write history + report.
    Search(SearchArgs),
    /// Fit an informative prior from a previous search history.
    FitPrior(FitPriorArgs),
    /// Compute effectiveness metrics from one or more history CSVs.
    Report(ReportArgs),
    /// Train a replay workload (predict-then-sleep) from a history CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SearchArgs {
    /// Parameter space JSON.
    #[arg(long)]
    space: PathBuf,
    /// Workload spec: `synthetic:<file.json>` or `surrogate:<history.csv>`.
    #[arg(long)]
    workload: String,
    /// Surrogate model: rand, rf, or gp.
    #[arg(long, default_value = "rf")]
    surrogate: SurrogateKind,
    /// Prior spec: `uniform`, `vae:<history.csv>`, `gaussian:<history.csv>`,
    /// or `file:<prior.json>` for an artifact written by fit-prior.
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Space of the history referenced by --prior, when it differs from
    /// --space (new parameters get uninformative priors).
    #[arg(long)]
    prior_space: Option<PathBuf>,
    /// Top-quantile fraction used when fitting a VAE prior.
    #[arg(long, default_value_t = 0.10)]
    q: f64,
    /// LCB exploration weight.
    #[arg(long, default_value_t = 1.96)]
    kappa: f64,
    /// Constant-liar value: worst, best, or mean.
    #[arg(long, default_value = "worst")]
    liar: LiarStrategy,
    /// Prior draws scored per batch slot.
    #[arg(long, default_value_t = 10_000)]
    candidates: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    max_evals: Option<usize>,
    #[arg(long)]
    wall_seconds: Option<f64>,
    /// Per-evaluation timeout in seconds (split across workload steps).
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    /// virtual (deterministic simulation) or real (concurrent workers).
    #[arg(long, default_value = "virtual")]
    clock: ClockMode,
    /// Fraction of simulated runtime actually spent (real clock runs).
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "history.csv")]
    history_out: PathBuf,
    #[arg(long, default_value = "report.json")]
    report_out: PathBuf,
}

#[derive(Args)]
struct FitPriorArgs {
    /// History CSV from the previous search.
    #[arg(long)]
    history: PathBuf,
    /// Space of the previous search.
    #[arg(long)]
    space_prev: PathBuf,
    /// Space of the upcoming search; defaults to --space-prev.
    #[arg(long)]
    space_curr: Option<PathBuf>,
    /// vae or gaussian.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0.10)]
    q: f64,
    /// TVAE training epochs.
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// History CSVs to evaluate (repeatable).
    #[arg(long = "history", required = true)]
    histories: Vec<PathBuf>,
    /// Baseline history CSV; enables speedup and improvement metrics.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    space: PathBuf,
    /// Metric horizon in seconds; defaults to the latest completion seen.
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    space: PathBuf,
    /// Runtime imputed for timeout/failed rows.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Search(args) => cmd_search(args),
        Command::FitPrior(args) => cmd_fit_prior(args).map(|()| ExitCode::Success),
        Command::Report(args) => cmd_report(args).map(|()| ExitCode::Success),
        Command::Simulate(args) => cmd_simulate(args).map(|()| ExitCode::Success),
    }
}

fn load_space(path: &Path) -> Result<ParameterSpace> {
    ParameterSpace::load(path).with_context(|| format!("loading space {}", path.display()))
}

fn load_history(path: &Path, space: &ParameterSpace) -> Result<SearchHistory> {
    SearchHistory::read_csv(path, space)
        .with_context(|| format!("loading history {}", path.display()))
}

fn spec_parts(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once(':') {
        Some((kind, rest)) => (kind, Some(rest)),
        None => (spec, None),
    }
}

fn build_prior(
    spec: &str,
    space: &ParameterSpace,
    prior_space: Option<&ParameterSpace>,
    q: f64,
    seed: u64,
) -> Result<(PriorSampler, PriorProvenance)> {
    let (kind, source) = spec_parts(spec);
    let previous = prior_space.unwrap_or(space);
    let sampler = match kind {
        "uniform" => {
            return Ok((PriorSampler::Uniform(space.clone()), PriorProvenance::uniform()))
        }
        "vae" => {
            let path = source.context("--prior vae needs `vae:<history.csv>`")?;
            let history = load_history(Path::new(path), previous)?.to_history_table()?;
            let top = select_top_quantile(&history, q)?;
            log::info!("fitting VAE prior on {} top-quantile rows", top.len());
            let model = fit_tvae(&top, &TvaeConfig::default(), seed)?;
            compose_prior(PriorSampler::Vae(model), previous, space)?
        }
        "gaussian" => {
            let path = source.context("--prior gaussian needs `gaussian:<history.csv>`")?;
            let history = load_history(Path::new(path), previous)?.to_history_table()?;
            let base = gaussian_prior(&history)?;
            compose_prior(base, previous, space)?
        }
        "file" => {
            let path = source.context("--prior file needs `file:<prior.json>`")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("loading prior {path}"))?;
            let artifact: PriorArtifactOwned =
                serde_json::from_str(&text).context("parsing prior artifact")?;
            let base = artifact.sampler;
            let composed = if base.space() == space {
                base
            } else {
                compose_prior(base, &previous.clone(), space)?
            };
            return Ok((composed, artifact.provenance));
        }
        other => bail!("unknown prior kind `{other}` (expected uniform|vae|gaussian|file)"),
    };
    let provenance = PriorProvenance {
        prior: kind.to_string(),
        source_history: source.map(str::to_string),
        q: (kind == "vae").then_some(q),
        seed: Some(seed),
    };
    Ok((sampler, provenance))
}

enum AnyWorkload {
    Synthetic(SyntheticWorkload),
    Replay(SurrogateWorkload),
}

impl AnyWorkload {
    fn as_dyn(&self) -> &dyn Workload {
        match self {
            AnyWorkload::Synthetic(w) => w,
            AnyWorkload::Replay(w) => w,
        }
    }
}

fn build_workload(
    spec: &str,
    space: &ParameterSpace,
    timeout: f64,
    time_scale: Option<f64>,
    seed: u64,
) -> Result<AnyWorkload> {
    let (kind, source) = spec_parts(spec);
    match kind {
        "synthetic" => {
            let path = source.context("--workload synthetic needs `synthetic:<file.json>`")?;
            let mut workload = SyntheticWorkload::load(path, space)
                .with_context(|| format!("loading workload {path}"))?;
            if let Some(scale) = time_scale {
                workload = workload.with_time_scale(scale)?;
            }
            Ok(AnyWorkload::Synthetic(workload))
        }
        "surrogate" => {
            let path = source.context("--workload surrogate needs `surrogate:<history.csv>`")?;
            let history = load_history(Path::new(path), space)?;
            let mut workload = fit_surrogate_workload(
                &history.records,
                space,
                &RfConfig::default(),
                timeout,
                seed,
            )?;
            if let Some(scale) = time_scale {
                workload = workload.with_time_scale(scale)?;
            }
            Ok(AnyWorkload::Replay(workload))
        }
        other => bail!("unknown workload kind `{other}` (expected synthetic|surrogate)"),
    }
}

fn config_json(space: &ParameterSpace, config: &Configuration) -> BTreeMap<String, serde_json::Value> {
    space
        .params()
        .iter()
        .zip(config.values())
        .map(|(param, value)| {
            let v = match value {
                ParamValue::Int(x) => serde_json::json!(x),
                ParamValue::Real(x) => serde_json::json!(x),
                ParamValue::Cat(_) => serde_json::json!(value.display(param)),
            };
            (param.name().to_string(), v)
        })
        .collect()
}

#[derive(Serialize)]
struct SearchReport {
    metadata: abo_core::executor::SearchMetadata,
    best: Option<BestEntry>,
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct BestEntry {
    objective: f64,
    runtime_seconds: f64,
    config: BTreeMap<String, serde_json::Value>,
}

fn cmd_search(args: SearchArgs) -> Result<ExitCode> {
    if args.max_evals.is_none() && args.wall_seconds.is_none() {
        bail!("set --max-evals and/or --wall-seconds");
    }
    let space = load_space(&args.space)?;
    let prior_space = match &args.prior_space {
        Some(path) => Some(load_space(path)?),
        None => None,
    };
    let (prior, provenance) =
        build_prior(&args.prior, &space, prior_space.as_ref(), args.q, args.seed)?;
    let workload =
        build_workload(&args.workload, &space, args.timeout, args.time_scale, args.seed)?;

    let optimizer_config = OptimizerConfig {
        surrogate: SurrogateSpec::from_kind(args.surrogate),
        kappa: args.kappa,
        n_candidates: args.candidates,
        liar: args.liar,
        failure_cost: args.timeout.ln(),
        ..Default::default()
    };
    let budget = SearchBudget {
        wall_clock_limit: args.wall_seconds,
        max_evaluations: args.max_evals,
        per_evaluation_timeout: args.timeout,
    };

    let mut history = run_search(
        workload.as_dyn(),
        prior,
        optimizer_config,
        args.workers,
        &budget,
        args.clock,
        args.seed,
    )?;
    history.metadata.prior = provenance;
    history.write_csv(&args.history_out)?;

    let t_max = args
        .wall_seconds
        .or_else(|| history.records.last().map(|r| r.t_end))
        .unwrap_or(1.0);
    let metrics = metrics::report(&history, t_max, None)?;
    let best = history.find_best().ok().map(|record| BestEntry {
        objective: record.objective,
        runtime_seconds: record.runtime_seconds,
        config: config_json(&space, &record.config),
    });
    let report = SearchReport { metadata: history.metadata.clone(), best, metrics };
    std::fs::write(&args.report_out, serde_json::to_string_pretty(&report)?)?;

    match &report.best {
        Some(best) => {
            println!(
                "best objective {} (runtime {} s)",
                best.objective, best.runtime_seconds
            );
            for (name, value) in &best.config {
                println!("  {name} = {value}");
            }
            Ok(ExitCode::Success)
        }
        None => {
            eprintln!("search finished without any successful evaluation");
            Ok(ExitCode::NoOkEvaluations)
        }
    }
}

#[derive(Serialize)]
struct PriorArtifact<'a> {
    provenance: PriorProvenance,
    sampler: &'a PriorSampler,
}

#[derive(serde::Deserialize)]
struct PriorArtifactOwned {
    provenance: PriorProvenance,
    sampler: PriorSampler,
}

fn cmd_fit_prior(args: FitPriorArgs) -> Result<()> {
    let space_prev = load_space(&args.space_prev)?;
    let space_curr = match &args.space_curr {
        Some(path) => load_space(path)?,
        None => space_prev.clone(),
    };
    let table = load_history(&args.history, &space_prev)?.to_history_table()?;
    let base = match args.kind.as_str() {
        "vae" => {
            let top = select_top_quantile(&table, args.q)?;
            let config = TvaeConfig { epochs: args.epochs, ..Default::default() };
            PriorSampler::Vae(fit_tvae(&top, &config, args.seed)?)
        }
        "gaussian" => gaussian_prior(&table)?,
        other => bail!("unknown prior kind `{other}` (expected vae|gaussian)"),
    };
    let sampler = compose_prior(base, &space_prev, &space_curr)?;
    let provenance = PriorProvenance {
        prior: args.kind.clone(),
        source_history: Some(args.history.display().to_string()),
        q: (args.kind == "vae").then_some(args.q),
        seed: Some(args.seed),
    };
    let artifact = PriorArtifact { provenance, sampler: &sampler };
    std::fs::write(&args.out, serde_json::to_string_pretty(&artifact)?)?;
    println!("prior written to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ReportFile {
    t_max: f64,
    baseline: Option<String>,
    histories: Vec<HistoryEntry>,
}

#[derive(Serialize)]
struct HistoryEntry {
    path: String,
    #[serde(flatten)]
    metrics: MetricsReport,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let histories = args
        .histories
        .iter()
        .map(|path| Ok((path, load_history(path, &space)?)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = match &args.baseline {
        Some(path) => Some((path, load_history(path, &space)?)),
        None => None,
    };

    let latest = histories
        .iter()
        .map(|(_, h)| &h.records)
        .chain(baseline.iter().map(|(_, h)| &h.records))
        .flat_map(|records| records.iter().map(|r| r.t_end))
        .fold(0.0f64, f64::max);
    let t_max = args.t_max.unwrap_or(latest).max(f64::MIN_POSITIVE);

    let baseline_trace = match &baseline {
        Some((_, history)) => Some(BestTrace::from_history(history, t_max)?),
        None => None,
    };

    let stem = args.out.with_extension("");
    let stem = stem.to_string_lossy();
    let mut entries = Vec::new();
    for (i, (path, history)) in histories.iter().enumerate() {
        let metrics = metrics::report(history, t_max, baseline_trace.as_ref())?;
        let trace = BestTrace::from_history(history, t_max)?;
        std::fs::write(format!("{stem}.trace{i}.csv"), trace.to_csv())?;
        entries.push(HistoryEntry { path: path.display().to_string(), metrics });
    }
    if let Some(trace) = &baseline_trace {
        std::fs::write(format!("{stem}.baseline.csv"), trace.to_csv())?;
    }

    let report = ReportFile {
        t_max,
        baseline: args.baseline.as_ref().map(|p| p.display().to_string()),
        histories: entries,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let space = load_space(&args.space)?;
    let history = load_history(&args.history, &space)?;
    let workload = fit_surrogate_workload(
        &history.records,
        &space,
        &RfConfig::default(),
        args.timeout,
        args.seed,
    )?;
    std::fs::write(&args.out, workload.serialize_json())?;
    let ok = history.records.iter().filter(|r| r.status == EvalStatus::Ok).count();
    println!(
        "replay workload written to {} ({} rows, {} ok)",
        args.out.display(),
        history.records.len(),
        ok
    );
    Ok(())
}
