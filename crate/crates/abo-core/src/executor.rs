//! Asynchronous manager/worker search driver.
//!
//! The manager owns the optimizer and the history. It seeds the pool with
//! one prior-sampled configuration per worker, then loops: gather everything
//! that finished, record it, tell the optimizer, ask for exactly as many new
//! configurations, submit them. Jobs still in flight when the budget runs
//! out are cancelled, never recorded as completed — wall-clock budgets are
//! hard limits.
//!
//! Two clock modes share the same decision logic. The virtual mode simulates
//! the whole system single-threaded on a deterministic event queue
//! (completion order `(t_end, job_id)`), which makes seeded runs
//! byte-reproducible. The real mode runs genuinely concurrent workers that
//! sleep for the scaled runtime.

use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{AcquisitionError, Optimizer, OptimizerConfig};
use crate::space::{Configuration, ParamValue, ParameterSpace, SpaceError};
use crate::transfer::PriorSampler;
use crate::workloads::{Workload, WorkloadError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("budget needs a wall-clock limit or a max evaluation count")]
    UnboundedBudget,
    #[error("per-evaluation timeout must be positive")]
    BadTimeout,
    #[error("prior and workload disagree on the parameter space")]
    SpaceMismatch,
    #[error("history has no successful evaluations")]
    NoOkRecords,
    #[error("history csv, row {row}: {message}")]
    CsvParse { row: usize, message: String },
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// --- Clocks -------------------------------------------------------------------

/// Driver time source. `advance` sleeps in real mode and jumps in virtual
/// mode; both report seconds since the search started.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    fn advance(&self, seconds: f64);
}

/// Simulated clock: `advance` is free. Stores the f64 bit pattern so the
/// clock is shareable without locks.
#[derive(Debug, Default)]
pub struct VirtualClock {
    bits: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self { bits: AtomicU64::new(0f64.to_bits()) }
    }

    pub fn set(&self, seconds: f64) {
        self.bits.store(seconds.to_bits(), Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::SeqCst))
    }

    fn advance(&self, seconds: f64) {
        self.set(self.now() + seconds);
    }
}

/// Wall clock anchored at construction.
#[derive(Debug)]
pub struct RealClock {
    start: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn advance(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Virtual,
    Real,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Self::Virtual),
            "real" => Ok(Self::Real),
            other => Err(format!("unknown clock `{other}` (expected virtual|real)")),
        }
    }
}

// --- Records and history --------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Timeout,
    Failed,
}

impl EvalStatus {
    fn as_str(self) -> &'static str {
        match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Timeout => "timeout",
            EvalStatus::Failed => "failed",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "ok" => Some(EvalStatus::Ok),
            "timeout" => Some(EvalStatus::Timeout),
            "failed" => Some(EvalStatus::Failed),
            _ => None,
        }
    }
}

/// One completed workflow evaluation. For ok records the objective is
/// `-ln(runtime)`; otherwise runtime and objective carry the NaN sentinel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub job_id: u64,
    pub worker_id: usize,
    pub config: Configuration,
    pub t_submit: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub status: EvalStatus,
    pub runtime_seconds: f64,
    pub objective: f64,
}

/// A job that was still in flight when the budget expired.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CancelledJob {
    pub job_id: u64,
    pub worker_id: usize,
    pub t_submit: f64,
    pub t_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorProvenance {
    pub prior: String,
    pub source_history: Option<String>,
    pub q: Option<f64>,
    pub seed: Option<u64>,
}

impl PriorProvenance {
    pub fn uniform() -> Self {
        Self { prior: "uniform".into(), source_history: None, q: None, seed: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchMetadata {
    pub seed: u64,
    pub workers: usize,
    pub surrogate: String,
    pub prior: PriorProvenance,
    pub clock: ClockMode,
    pub per_evaluation_timeout: f64,
    pub wall_clock_limit: Option<f64>,
    pub max_evaluations: Option<usize>,
    pub n_submitted: u64,
    pub n_completed: u64,
    pub n_cancelled: u64,
}

impl Default for SearchMetadata {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            surrogate: "rf".into(),
            prior: PriorProvenance::uniform(),
            clock: ClockMode::Virtual,
            per_evaluation_timeout: 600.0,
            wall_clock_limit: None,
            max_evaluations: None,
            n_submitted: 0,
            n_completed: 0,
            n_cancelled: 0,
        }
    }
}

/// Per-round driver accounting, used to check the ask/tell contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStat {
    pub gathered: usize,
    pub asked: usize,
}

/// Everything a search produced: completed records in completion order,
/// cancelled in-flight jobs, and run metadata.
#[derive(Debug, Clone, Serialize)]
pub struct SearchHistory {
    pub space: ParameterSpace,
    pub records: Vec<EvaluationRecord>,
    pub cancelled: Vec<CancelledJob>,
    pub metadata: SearchMetadata,
    pub rounds: Vec<RoundStat>,
}

impl SearchHistory {
    /// The ok record with the maximum objective; ties resolve to the
    /// earliest completion.
    pub fn find_best(&self) -> Result<&EvaluationRecord, SearchError> {
        self.records
            .iter()
            .filter(|r| r.status == EvalStatus::Ok)
            .min_by(|a, b| {
                // max objective, then min t_end
                b.objective
                    .partial_cmp(&a.objective)
                    .unwrap()
                    .then(a.t_end.partial_cmp(&b.t_end).unwrap())
            })
            .ok_or(SearchError::NoOkRecords)
    }

    /// Rows as `(configuration, objective)` pairs for transfer learning.
    pub fn to_history_table(&self) -> Result<crate::transfer::HistoryTable, SearchError> {
        let rows = self.records.iter().map(|r| (r.config.clone(), r.objective)).collect();
        crate::transfer::HistoryTable::new(self.space.clone(), rows)
            .map_err(|e| SearchError::CsvParse { row: 0, message: e.to_string() })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SearchError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Bit-exact history format: fixed columns, then one `p:<name>` column
    /// per parameter in canonical order. Reals use the shortest round-trip
    /// decimal; the sentinel is the literal `NaN`; rows are in completion
    /// order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("job_id,worker_id,t_submit,t_start,t_end,status,runtime,objective");
        for param in self.space.params() {
            out.push_str(",p:");
            out.push_str(param.name());
        }
        out.push('\n');
        for record in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                record.job_id,
                record.worker_id,
                record.t_submit,
                record.t_start,
                record.t_end,
                record.status.as_str(),
                record.runtime_seconds,
                record.objective
            ));
            for (param, value) in self.space.params().iter().zip(record.config.values()) {
                out.push(',');
                out.push_str(&value.display(param));
            }
            out.push('\n');
        }
        out
    }

    pub fn read_csv(path: impl AsRef<Path>, space: &ParameterSpace) -> Result<Self, SearchError> {
        Self::from_csv(&std::fs::read_to_string(path)?, space)
    }

    pub fn from_csv(text: &str, space: &ParameterSpace) -> Result<Self, SearchError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| SearchError::CsvParse { row: 0, message: e.to_string() })?
            .clone();
        let fixed = ["job_id", "worker_id", "t_submit", "t_start", "t_end", "status", "runtime", "objective"];
        for (i, want) in fixed.iter().enumerate() {
            if headers.get(i) != Some(want) {
                return Err(SearchError::CsvParse {
                    row: 0,
                    message: format!("column {i} must be `{want}`"),
                });
            }
        }
        let param_names: Vec<String> =
            space.params().iter().map(|p| format!("p:{}", p.name())).collect();
        for (i, want) in param_names.iter().enumerate() {
            if headers.get(fixed.len() + i) != Some(want.as_str()) {
                return Err(SearchError::CsvParse {
                    row: 0,
                    message: format!("column {} must be `{want}`", fixed.len() + i),
                });
            }
        }
        if headers.len() != fixed.len() + param_names.len() {
            return Err(SearchError::CsvParse { row: 0, message: "unexpected extra columns".into() });
        }

        let mut records = Vec::new();
        for (idx, row) in reader.records().enumerate() {
            let row_no = idx + 1;
            let parse_err =
                |message: String| SearchError::CsvParse { row: row_no, message };
            let row = row.map_err(|e| parse_err(e.to_string()))?;
            let field = |i: usize| row.get(i).ok_or_else(|| parse_err(format!("missing column {i}")));
            let num = |i: usize| -> Result<f64, SearchError> {
                field(i)?.parse::<f64>().map_err(|e| parse_err(format!("column {i}: {e}")))
            };
            let status = EvalStatus::parse(field(5)?)
                .ok_or_else(|| parse_err(format!("unknown status `{}`", row.get(5).unwrap_or(""))))?;
            let mut values = Vec::with_capacity(space.len());
            for (j, param) in space.params().iter().enumerate() {
                let text = field(fixed.len() + j)?;
                values.push(
                    ParamValue::parse(text, param).map_err(|e| parse_err(e.to_string()))?,
                );
            }
            let config =
                Configuration::new(space, values).map_err(|e| parse_err(e.to_string()))?;
            let record = EvaluationRecord {
                job_id: field(0)?.parse().map_err(|e| parse_err(format!("job_id: {e}")))?,
                worker_id: field(1)?.parse().map_err(|e| parse_err(format!("worker_id: {e}")))?,
                config,
                t_submit: num(2)?,
                t_start: num(3)?,
                t_end: num(4)?,
                status,
                runtime_seconds: num(6)?,
                objective: num(7)?,
            };
            if record.status == EvalStatus::Ok
                && !(record.runtime_seconds.is_finite() && record.runtime_seconds > 0.0)
            {
                return Err(parse_err("ok record with non-positive runtime".into()));
            }
            records.push(record);
        }
        Ok(Self {
            space: space.clone(),
            records,
            cancelled: Vec::new(),
            metadata: SearchMetadata::default(),
            rounds: Vec::new(),
        })
    }
}

// --- Budget -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub wall_clock_limit: Option<f64>,
    pub max_evaluations: Option<usize>,
    pub per_evaluation_timeout: f64,
}

impl SearchBudget {
    pub fn evaluations(max: usize) -> Self {
        Self { wall_clock_limit: None, max_evaluations: Some(max), per_evaluation_timeout: 600.0 }
    }

    pub fn wall_clock(seconds: f64) -> Self {
        Self { wall_clock_limit: Some(seconds), max_evaluations: None, per_evaluation_timeout: 600.0 }
    }

    pub fn with_timeout(mut self, timeout: f64) -> Self {
        self.per_evaluation_timeout = timeout;
        self
    }

    fn validate(&self) -> Result<(), SearchError> {
        if self.wall_clock_limit.is_none() && self.max_evaluations.is_none() {
            return Err(SearchError::UnboundedBudget);
        }
        if !(self.per_evaluation_timeout > 0.0) {
            return Err(SearchError::BadTimeout);
        }
        Ok(())
    }
}

// --- Evaluation with timeouts ----------------------------------------------------

/// Result of one evaluation attempt before clock accounting. `busy_runtime`
/// is the unscaled time the worker was occupied: the full runtime for ok,
/// the consumed budget up to the kill for timeouts.
#[derive(Debug, Clone, Copy)]
pub struct EvalOutcome {
    pub status: EvalStatus,
    pub runtime: f64,
    pub busy_runtime: f64,
}

/// Run the workload against a per-evaluation budget. The budget is split
/// evenly across the workload's declared steps (600 s total means 300 s per
/// step for a two-step workload), and so is the runtime; a step exceeding
/// its share kills the evaluation at that step's deadline.
pub fn simulate_evaluation(
    workload: &dyn Workload,
    config: &Configuration,
    timeout: f64,
    rng: &mut ChaCha12Rng,
) -> EvalOutcome {
    let steps = workload.steps().max(1) as f64;
    let step_budget = timeout / steps;
    match workload.runtime(config, rng) {
        Err(_) => EvalOutcome { status: EvalStatus::Failed, runtime: f64::NAN, busy_runtime: 0.0 },
        Ok(total) => {
            let per_step = total / steps;
            if per_step > step_budget {
                // with an even split the first step is always the one killed
                EvalOutcome {
                    status: EvalStatus::Timeout,
                    runtime: f64::NAN,
                    busy_runtime: step_budget,
                }
            } else {
                EvalOutcome { status: EvalStatus::Ok, runtime: total, busy_runtime: total }
            }
        }
    }
}

/// [`simulate_evaluation`] plus clock accounting: the clock advances by the
/// scaled busy time whether the evaluation finished or was killed.
pub fn evaluate_with_timeout(
    workload: &dyn Workload,
    config: &Configuration,
    timeout: f64,
    clock: &dyn Clock,
    rng: &mut ChaCha12Rng,
) -> (EvalStatus, f64) {
    let outcome = simulate_evaluation(workload, config, timeout, rng);
    clock.advance(outcome.busy_runtime * workload.time_scale());
    (outcome.status, outcome.runtime)
}

// --- Search driver ---------------------------------------------------------------

/// Run the full asynchronous search. The prior seeds the first `workers`
/// submissions and supplies the optimizer's candidate pool; results stream
/// back through tell/ask rounds until the budget is exhausted.
pub fn run_search(
    workload: &dyn Workload,
    prior: PriorSampler,
    optimizer_config: OptimizerConfig,
    workers: usize,
    budget: &SearchBudget,
    clock: ClockMode,
    seed: u64,
) -> Result<SearchHistory, SearchError> {
    if workers == 0 {
        return Err(SearchError::NoWorkers);
    }
    budget.validate()?;
    if prior.space() != workload.space() {
        return Err(SearchError::SpaceMismatch);
    }
    let surrogate = optimizer_config.surrogate.kind();
    let optimizer = Optimizer::new(workload.space().clone(), prior, optimizer_config, seed)?;
    let mut history = match clock {
        ClockMode::Virtual => run_virtual(workload, optimizer, workers, budget, seed)?,
        ClockMode::Real => run_real(workload, optimizer, workers, budget, seed)?,
    };
    history.metadata.seed = seed;
    history.metadata.workers = workers;
    history.metadata.surrogate = format!("{:?}", surrogate).to_lowercase();
    history.metadata.clock = clock;
    history.metadata.per_evaluation_timeout = budget.per_evaluation_timeout;
    history.metadata.wall_clock_limit = budget.wall_clock_limit;
    history.metadata.max_evaluations = budget.max_evaluations;
    history.metadata.n_completed = history.records.len() as u64;
    history.metadata.n_cancelled = history.cancelled.len() as u64;
    log::info!(
        "search done: {} completed, {} cancelled, best {:?}",
        history.records.len(),
        history.cancelled.len(),
        history.find_best().map(|r| r.objective).ok()
    );
    Ok(history)
}

/// Per-job noise stream, independent of optimizer and driver streams.
fn job_rng(seed: u64, job_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((1 << 62) | job_id);
    rng
}

/// Stream for the initial prior submissions.
fn driver_rng(seed: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1 << 63);
    rng
}

#[derive(Debug)]
struct PendingJob {
    job_id: u64,
    worker_id: usize,
    config: Configuration,
    t_submit: f64,
    t_start: f64,
}

// Virtual mode: a single-threaded event simulation. Completion events are
// ordered by (t_end, job_id); ties complete in submission order.
struct VirtualEvent {
    t_end: f64,
    job_id: u64,
    worker_id: usize,
    config: Configuration,
    t_submit: f64,
    t_start: f64,
    outcome: EvalOutcome,
}

impl PartialEq for VirtualEvent {
    fn eq(&self, other: &Self) -> bool {
        self.t_end == other.t_end && self.job_id == other.job_id
    }
}

impl Eq for VirtualEvent {}

impl Ord for VirtualEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // reversed: BinaryHeap is a max-heap, we want earliest first
        other
            .t_end
            .partial_cmp(&self.t_end)
            .expect("finite completion times")
            .then(other.job_id.cmp(&self.job_id))
    }
}

impl PartialOrd for VirtualEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn run_virtual(
    workload: &dyn Workload,
    mut optimizer: Optimizer,
    workers: usize,
    budget: &SearchBudget,
    seed: u64,
) -> Result<SearchHistory, SearchError> {
    let space = workload.space().clone();
    let scale = workload.time_scale();
    let mut events: BinaryHeap<VirtualEvent> = BinaryHeap::new();
    let mut idle: BinaryHeap<std::cmp::Reverse<usize>> =
        (0..workers).map(std::cmp::Reverse).collect();
    let mut next_job: u64 = 0;
    let mut n_submitted: u64 = 0;
    let mut records: Vec<EvaluationRecord> = Vec::new();
    let mut rounds: Vec<RoundStat> = Vec::new();

    let submit = |config: Configuration,
                  now: f64,
                      events: &mut BinaryHeap<VirtualEvent>,
                      idle: &mut BinaryHeap<std::cmp::Reverse<usize>>,
                      next_job: &mut u64,
                      n_submitted: &mut u64| {
        let worker_id = idle.pop().expect("submission capacity").0;
        let job_id = *next_job;
        *next_job += 1;
        *n_submitted += 1;
        let mut rng = job_rng(seed, job_id);
        let outcome = simulate_evaluation(workload, &config, budget.per_evaluation_timeout, &mut rng);
        events.push(VirtualEvent {
            t_end: now + outcome.busy_runtime * scale,
            job_id,
            worker_id,
            config,
            t_submit: now,
            t_start: now,
            outcome,
        });
    };

    let mut prior_rng = driver_rng(seed);
    for _ in 0..workers {
        let config = optimizer.prior().sample(&mut prior_rng);
        submit(config, 0.0, &mut events, &mut idle, &mut next_job, &mut n_submitted);
    }

    loop {
        if let Some(max) = budget.max_evaluations {
            if records.len() >= max {
                break;
            }
        }
        let Some(head) = events.peek() else { break };
        let now = head.t_end;
        if let Some(limit) = budget.wall_clock_limit {
            if now > limit {
                break;
            }
        }

        // gather every event finishing at this instant, capped to the
        // remaining evaluation budget; excess ties count as cancelled
        let remaining = budget
            .max_evaluations
            .map(|max| max - records.len())
            .unwrap_or(usize::MAX);
        let mut gathered: Vec<VirtualEvent> = Vec::new();
        while let Some(head) = events.peek() {
            if head.t_end != now || gathered.len() == remaining {
                break;
            }
            gathered.push(events.pop().unwrap());
        }

        let mut configs = Vec::with_capacity(gathered.len());
        let mut objectives = Vec::with_capacity(gathered.len());
        for event in &gathered {
            let objective = match event.outcome.status {
                EvalStatus::Ok => -event.outcome.runtime.ln(),
                _ => f64::NAN,
            };
            records.push(EvaluationRecord {
                job_id: event.job_id,
                worker_id: event.worker_id,
                config: event.config.clone(),
                t_submit: event.t_submit,
                t_start: event.t_start,
                t_end: event.t_end,
                status: event.outcome.status,
                runtime_seconds: event.outcome.runtime,
                objective,
            });
            configs.push(event.config.clone());
            objectives.push(objective);
            idle.push(std::cmp::Reverse(event.worker_id));
        }

        optimizer.tell(&configs, &objectives)?;
        let batch = optimizer.ask(gathered.len())?;
        rounds.push(RoundStat { gathered: gathered.len(), asked: batch.len() });
        for config in batch {
            submit(config, now, &mut events, &mut idle, &mut next_job, &mut n_submitted);
        }
    }

    let cancelled = events
        .into_sorted_vec()
        .into_iter()
        .map(|e| CancelledJob {
            job_id: e.job_id,
            worker_id: e.worker_id,
            t_submit: e.t_submit,
            t_start: e.t_start,
        })
        .collect();

    Ok(SearchHistory {
        space,
        records,
        cancelled,
        metadata: SearchMetadata { n_submitted, ..Default::default() },
        rounds,
    })
}

struct WorkerDone {
    job_id: u64,
    worker_id: usize,
    config: Configuration,
    t_submit: f64,
    t_start: f64,
    t_end: f64,
    outcome: EvalOutcome,
}

fn run_real(
    workload: &dyn Workload,
    mut optimizer: Optimizer,
    workers: usize,
    budget: &SearchBudget,
    seed: u64,
) -> Result<SearchHistory, SearchError> {
    let space = workload.space().clone();
    let clock = RealClock::new();
    let cancel = AtomicBool::new(false);
    let (done_tx, done_rx) = mpsc::channel::<WorkerDone>();

    let mut records: Vec<EvaluationRecord> = Vec::new();
    let mut rounds: Vec<RoundStat> = Vec::new();
    let mut pending: Vec<PendingJob> = Vec::new();
    let mut n_submitted: u64 = 0;
    let mut next_job: u64 = 0;

    std::thread::scope(|scope| -> Result<(), SearchError> {
        let mut job_senders: Vec<mpsc::Sender<PendingJob>> = Vec::with_capacity(workers);
        for worker_id in 0..workers {
            let (tx, rx) = mpsc::channel::<PendingJob>();
            job_senders.push(tx);
            let done = done_tx.clone();
            let clock = &clock;
            let cancel = &cancel;
            scope.spawn(move || {
                while let Ok(job) = rx.recv() {
                    let t_start = clock.now();
                    let mut rng = job_rng(seed, job.job_id);
                    let outcome =
                        simulate_evaluation(workload, &job.config, budget.per_evaluation_timeout, &mut rng);
                    if !sleep_unless_cancelled(outcome.busy_runtime * workload.time_scale(), cancel) {
                        break; // shutdown while evaluating: report nothing
                    }
                    let sent = done.send(WorkerDone {
                        job_id: job.job_id,
                        worker_id,
                        config: job.config,
                        t_submit: job.t_submit,
                        t_start,
                        t_end: clock.now(),
                        outcome,
                    });
                    if sent.is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);

        let mut idle: Vec<usize> = (0..workers).rev().collect();
        let mut submit = |config: Configuration, pending: &mut Vec<PendingJob>, idle: &mut Vec<usize>| {
            let worker_id = idle.pop().expect("submission capacity");
            let job = PendingJob {
                job_id: next_job,
                worker_id,
                config,
                t_submit: clock.now(),
                t_start: clock.now(),
            };
            next_job += 1;
            n_submitted += 1;
            pending.push(PendingJob { config: job.config.clone(), ..job });
            job_senders[worker_id].send(job).expect("worker alive");
        };

        let mut prior_rng = driver_rng(seed);
        for _ in 0..workers {
            let config = optimizer.prior().sample(&mut prior_rng);
            submit(config, &mut pending, &mut idle);
        }

        loop {
            if let Some(max) = budget.max_evaluations {
                if records.len() >= max {
                    break;
                }
            }
            if pending.is_empty() {
                break;
            }
            let deadline = budget.wall_clock_limit.map(|limit| limit - clock.now());
            let first = match deadline {
                Some(left) if left <= 0.0 => break,
                Some(left) => match done_rx.recv_timeout(Duration::from_secs_f64(left)) {
                    Ok(done) => done,
                    Err(_) => break, // wall-clock budget exhausted
                },
                None => match done_rx.recv() {
                    Ok(done) => done,
                    Err(_) => break,
                },
            };
            let mut gathered = vec![first];
            while let Ok(done) = done_rx.try_recv() {
                gathered.push(done);
            }
            if let Some(max) = budget.max_evaluations {
                gathered.truncate(max - records.len());
            }

            let mut configs = Vec::with_capacity(gathered.len());
            let mut objectives = Vec::with_capacity(gathered.len());
            for done in &gathered {
                pending.retain(|p| p.job_id != done.job_id);
                idle.push(done.worker_id);
                let objective = match done.outcome.status {
                    EvalStatus::Ok => -done.outcome.runtime.ln(),
                    _ => f64::NAN,
                };
                records.push(EvaluationRecord {
                    job_id: done.job_id,
                    worker_id: done.worker_id,
                    config: done.config.clone(),
                    t_submit: done.t_submit,
                    t_start: done.t_start,
                    t_end: done.t_end,
                    status: done.outcome.status,
                    runtime_seconds: done.outcome.runtime,
                    objective,
                });
                configs.push(done.config.clone());
                objectives.push(objective);
            }

            optimizer.tell(&configs, &objectives)?;
            let batch = optimizer.ask(gathered.len())?;
            rounds.push(RoundStat { gathered: gathered.len(), asked: batch.len() });
            for config in batch {
                submit(config, &mut pending, &mut idle);
            }
        }

        cancel.store(true, Ordering::SeqCst);
        drop(job_senders);
        Ok(())
    })?;

    let cancelled = pending
        .into_iter()
        .map(|p| CancelledJob {
            job_id: p.job_id,
            worker_id: p.worker_id,
            t_submit: p.t_submit,
            t_start: p.t_start,
        })
        .collect();

    Ok(SearchHistory {
        space,
        records,
        cancelled,
        metadata: SearchMetadata { n_submitted, ..Default::default() },
        rounds,
    })
}

/// Sleep in short slices so shutdown is responsive; false when cancelled.
fn sleep_unless_cancelled(seconds: f64, cancel: &AtomicBool) -> bool {
    let mut left = seconds;
    while left > 0.0 {
        if cancel.load(Ordering::SeqCst) {
            return false;
        }
        let slice = left.min(0.005);
        std::thread::sleep(Duration::from_secs_f64(slice));
        left -= slice;
    }
    !cancel.load(Ordering::SeqCst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Parameter;
    use crate::surrogate::{RfConfig, SurrogateSpec};
    use crate::workloads::SyntheticWorkload;
    use std::collections::HashMap;

    fn toy_space() -> ParameterSpace {
        ParameterSpace::new(vec![
            Parameter::integer("batch", 1, 8),
            Parameter::log_integer("threads", 1, 64),
            Parameter::categorical("pool", ["fifo", "fifo_wait", "prio_wait"]),
            Parameter::integer("replicas", 1, 4),
        ])
        .unwrap()
    }

    fn toy_workload(steps: u32) -> SyntheticWorkload {
        let space = toy_space();
        let target = Configuration::from_named(
            &space,
            [
                ("batch", ParamValue::Int(6)),
                ("threads", ParamValue::Int(16)),
                ("pool", ParamValue::Cat(1)),
                ("replicas", ParamValue::Int(2)),
            ],
        )
        .unwrap();
        SyntheticWorkload::new(
            space,
            target,
            &HashMap::from([
                ("batch".to_string(), 30.0),
                ("threads".to_string(), 40.0),
                ("replicas".to_string(), 10.0),
            ]),
            &HashMap::from([("pool".to_string(), 3.0)]),
            5.0,
            0.0,
            steps,
            1.0,
        )
        .unwrap()
    }

    fn quick_optimizer_config() -> OptimizerConfig {
        OptimizerConfig {
            surrogate: SurrogateSpec::Rf(RfConfig { n_trees: 10, ..Default::default() }),
            n_candidates: 50,
            ..Default::default()
        }
    }

    fn run_toy(workers: usize, max_evals: usize, seed: u64) -> SearchHistory {
        let workload = toy_workload(1);
        let prior = PriorSampler::Uniform(workload.space().clone());
        run_search(
            &workload,
            prior,
            quick_optimizer_config(),
            workers,
            &SearchBudget::evaluations(max_evals),
            ClockMode::Virtual,
            seed,
        )
        .unwrap()
    }

    struct FailingWorkload(ParameterSpace);

    impl Workload for FailingWorkload {
        fn space(&self) -> &ParameterSpace {
            &self.0
        }

        fn runtime(&self, _: &Configuration, _: &mut ChaCha12Rng) -> Result<f64, WorkloadError> {
            Err(WorkloadError::Evaluation("boom".into()))
        }
    }

    /// Fixed-runtime workload for timeout tests.
    struct ConstantWorkload {
        space: ParameterSpace,
        runtime: f64,
        steps: u32,
    }

    impl Workload for ConstantWorkload {
        fn space(&self) -> &ParameterSpace {
            &self.space
        }

        fn steps(&self) -> u32 {
            self.steps
        }

        fn runtime(&self, _: &Configuration, _: &mut ChaCha12Rng) -> Result<f64, WorkloadError> {
            Ok(self.runtime)
        }
    }

    #[test]
    fn timeout_semantics() {
        let space = toy_space();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let config = space.sample_uniform(&mut rng);

        // finishes inside the budget
        let fast = ConstantWorkload { space: space.clone(), runtime: 90.0, steps: 1 };
        let clock = VirtualClock::new();
        let (status, runtime) = evaluate_with_timeout(&fast, &config, 300.0, &clock, &mut rng);
        assert_eq!(status, EvalStatus::Ok);
        assert_eq!(runtime, 90.0);
        assert_eq!(clock.now(), 90.0);

        // grossly over budget: killed exactly at the 600 s budget
        let slow = ConstantWorkload { space: space.clone(), runtime: 1e6, steps: 1 };
        let clock = VirtualClock::new();
        let (status, runtime) = evaluate_with_timeout(&slow, &config, 600.0, &clock, &mut rng);
        assert_eq!(status, EvalStatus::Timeout);
        assert!(runtime.is_nan());
        assert_eq!(clock.now(), 600.0);

        // two-step split: 700 s total means step one exceeds its 300 s share
        let two_step = ConstantWorkload { space: space.clone(), runtime: 700.0, steps: 2 };
        let clock = VirtualClock::new();
        let (status, _) = evaluate_with_timeout(&two_step, &config, 600.0, &clock, &mut rng);
        assert_eq!(status, EvalStatus::Timeout);
        assert_eq!(clock.now(), 300.0);

        // workload error surfaces as failed
        let failing = FailingWorkload(space);
        let clock = VirtualClock::new();
        let (status, runtime) = evaluate_with_timeout(&failing, &config, 600.0, &clock, &mut rng);
        assert_eq!(status, EvalStatus::Failed);
        assert!(runtime.is_nan());
    }

    #[test]
    fn budget_and_capacity_contracts() {
        let history = run_toy(4, 20, 7);
        assert_eq!(history.records.len(), 20);
        // capacity: count overlapping [t_start, t_end) intervals at each start
        for record in &history.records {
            let t = record.t_start;
            let in_flight = history
                .records
                .iter()
                .filter(|r| r.t_start <= t && t < r.t_end)
                .count();
            assert!(in_flight <= 4, "{} in flight at t={}", in_flight, t);
        }
        // conservation
        assert_eq!(
            history.metadata.n_submitted,
            history.metadata.n_completed + history.metadata.n_cancelled
        );
        // every tell matched by an equal-size ask
        assert!(history.rounds.iter().all(|r| r.gathered == r.asked));
    }

    #[test]
    fn objective_consistency() {
        let history = run_toy(4, 30, 8);
        for record in &history.records {
            if record.status == EvalStatus::Ok {
                assert!(
                    (record.objective + record.runtime_seconds.ln()).abs() < 1e-12,
                    "objective {} vs -ln({})",
                    record.objective,
                    record.runtime_seconds
                );
            } else {
                assert!(record.objective.is_nan());
            }
            assert!(record.t_submit <= record.t_start && record.t_start <= record.t_end);
        }
    }

    #[test]
    fn seeded_runs_are_byte_identical() {
        let a = run_toy(4, 25, 42).to_csv();
        let b = run_toy(4, 25, 42).to_csv();
        assert_eq!(a, b);
        let c = run_toy(4, 25, 43).to_csv();
        assert_ne!(a, c);
    }

    #[test]
    fn wall_clock_budget_cancels_in_flight() {
        let workload = toy_workload(1);
        let prior = PriorSampler::Uniform(workload.space().clone());
        let budget = SearchBudget::wall_clock(60.0);
        let history = run_search(
            &workload,
            prior,
            quick_optimizer_config(),
            3,
            &budget,
            ClockMode::Virtual,
            11,
        )
        .unwrap();
        assert!(!history.records.is_empty());
        assert!(history.records.iter().all(|r| r.t_end <= 60.0));
        assert_eq!(history.cancelled.len(), 3, "in-flight jobs abandoned at the limit");
        assert_eq!(
            history.metadata.n_submitted,
            history.metadata.n_completed + history.metadata.n_cancelled
        );
    }

    #[test]
    fn find_best_maximizes_objective_with_tie_break() {
        let mut history = run_toy(2, 6, 3);
        let space = history.space.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let config = space.sample_uniform(&mut rng);
        history.records.clear();
        let record = |job_id: u64, t_end: f64, objective: f64| EvaluationRecord {
            job_id,
            worker_id: 0,
            config: config.clone(),
            t_submit: 0.0,
            t_start: 0.0,
            t_end,
            status: EvalStatus::Ok,
            runtime_seconds: (-objective).exp(),
            objective,
        };
        history.records.push(record(0, 10.0, -2.3));
        history.records.push(record(1, 20.0, -2.0));
        history.records.push(record(2, 30.0, -2.9));
        assert_eq!(history.find_best().unwrap().job_id, 1);

        history.records.push(record(3, 200.0, -2.0)); // tie, later completion
        assert_eq!(history.find_best().unwrap().job_id, 1, "earliest t_end wins ties");

        history.records.clear();
        assert!(matches!(history.find_best(), Err(SearchError::NoOkRecords)));
    }

    #[test]
    fn csv_round_trip_is_lossless_and_reports_bad_rows() {
        let history = run_toy(3, 12, 9);
        let text = history.to_csv();
        let parsed = SearchHistory::from_csv(&text, &history.space).unwrap();
        assert_eq!(parsed.to_csv(), text);
        assert_eq!(parsed.records.len(), history.records.len());

        let corrupt = text.replace("ok", "okk");
        let err = SearchHistory::from_csv(&corrupt, &history.space).unwrap_err();
        match err {
            SearchError::CsvParse { row, .. } => assert!(row >= 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn real_clock_driver_completes_and_respects_capacity() {
        // scaled way down so the test runs in well under a second
        let space = toy_space();
        let target = Configuration::from_named(
            &space,
            [
                ("batch", ParamValue::Int(6)),
                ("threads", ParamValue::Int(16)),
                ("pool", ParamValue::Cat(1)),
                ("replicas", ParamValue::Int(2)),
            ],
        )
        .unwrap();
        let workload = SyntheticWorkload::new(
            space.clone(),
            target,
            &HashMap::from([
                ("batch".to_string(), 30.0),
                ("threads".to_string(), 40.0),
                ("replicas".to_string(), 10.0),
            ]),
            &HashMap::from([("pool".to_string(), 3.0)]),
            5.0,
            0.0,
            1,
            0.001,
        )
        .unwrap();
        let history = run_search(
            &workload,
            PriorSampler::Uniform(space),
            quick_optimizer_config(),
            4,
            &SearchBudget::evaluations(12),
            ClockMode::Real,
            5,
        )
        .unwrap();
        assert_eq!(history.records.len(), 12);
        for record in &history.records {
            assert!(record.t_submit <= record.t_start && record.t_start <= record.t_end);
            assert_eq!(record.status, EvalStatus::Ok);
        }
        assert!(history.rounds.iter().all(|r| r.gathered == r.asked));
    }
}
