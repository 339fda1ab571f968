//! Effectiveness metrics over search histories: the best-runtime-so-far
//! trace R(t), its exact time average E[R], speedup against a baseline,
//! worker utilization, and the improvement-factor / expected-search-speedup
//! pair for transfer-learning comparisons.
//!
//! Traces are piecewise constant by construction, so every integral here is
//! computed exactly on breakpoints — no numeric quadrature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{EvalStatus, SearchHistory};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("trace covers [0, {have}] but {need} was requested")]
    HorizonExceeded { have: f64, need: f64 },
    #[error("breakpoints must have ascending times and positive finite values")]
    MalformedTrace,
    #[error("trace segment undefined: {0}")]
    UndefinedSegment(String),
}

/// Piecewise-constant best-ok-runtime-so-far function on `[0, t_max]`.
/// Before the first ok completion the trace sits at `initial` (the
/// per-evaluation timeout, the worst certified runtime); each breakpoint
/// `(t, r)` is a strict improvement completed at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestTrace {
    initial: f64,
    breakpoints: Vec<(f64, f64)>,
    t_max: f64,
}

impl BestTrace {
    /// Build from completed records: ok completions sorted by
    /// `(t_end, job_id)`, keeping only strict improvements within the
    /// horizon.
    pub fn from_history(history: &SearchHistory, t_max: f64) -> Result<Self, MetricsError> {
        if !(t_max > 0.0) {
            return Err(MetricsError::BadHorizon(t_max));
        }
        let mut completions: Vec<(f64, u64, f64)> = history
            .records
            .iter()
            .filter(|r| r.status == EvalStatus::Ok && r.t_end <= t_max)
            .map(|r| (r.t_end, r.job_id, r.runtime_seconds))
            .collect();
        completions.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let initial = history.metadata.per_evaluation_timeout;
        let mut breakpoints = Vec::new();
        let mut best = initial;
        for (t_end, _, runtime) in completions {
            if runtime < best {
                best = runtime;
                breakpoints.push((t_end, runtime));
            }
        }
        Ok(Self { initial, breakpoints, t_max })
    }

    /// Build directly from `(t, value)` steps (tests, trace files).
    pub fn from_points(
        initial: f64,
        points: &[(f64, f64)],
        t_max: f64,
    ) -> Result<Self, MetricsError> {
        if !(t_max > 0.0) {
            return Err(MetricsError::BadHorizon(t_max));
        }
        if !(initial.is_finite() && initial > 0.0) {
            return Err(MetricsError::MalformedTrace);
        }
        let mut last_t = 0.0;
        let mut last_v = initial;
        for &(t, v) in points {
            if !(t >= last_t && t <= t_max && v.is_finite() && v > 0.0 && v < last_v) {
                return Err(MetricsError::MalformedTrace);
            }
            last_t = t;
            last_v = v;
        }
        Ok(Self { initial, breakpoints: points.to_vec(), t_max })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// R(t): the best runtime completed by time `t` (inclusive).
    pub fn value_at(&self, t: f64) -> f64 {
        let mut value = self.initial;
        for &(bt, bv) in &self.breakpoints {
            if bt <= t {
                value = bv;
            } else {
                break;
            }
        }
        value
    }

    /// Final best runtime at the horizon.
    pub fn final_best(&self) -> f64 {
        self.breakpoints.last().map_or(self.initial, |&(_, v)| v)
    }

    /// Runtime of the first completed evaluation recorded in the trace.
    pub fn first_runtime(&self) -> Option<f64> {
        self.breakpoints.first().map(|&(_, v)| v)
    }

    /// `E[R] = (1/t_max) * integral of R` — exact on the step structure.
    pub fn mean_best(&self) -> f64 {
        let mut integral = 0.0;
        let mut prev_t = 0.0;
        let mut prev_v = self.initial;
        for &(t, v) in &self.breakpoints {
            integral += prev_v * (t - prev_t);
            prev_t = t;
            prev_v = v;
        }
        integral += prev_v * (self.t_max - prev_t);
        integral / self.t_max
    }

    /// Earliest time the trace goes strictly below `target`, if ever.
    pub fn first_time_below(&self, target: f64) -> Option<f64> {
        if self.initial < target {
            return Some(0.0);
        }
        self.breakpoints.iter().find(|&&(_, v)| v < target).map(|&(t, _)| t)
    }

    /// Pointwise average of several traces on the union of their
    /// breakpoints. Horizons must match.
    pub fn average(traces: &[BestTrace]) -> Result<BestTrace, MetricsError> {
        let Some(first) = traces.first() else {
            return Err(MetricsError::UndefinedSegment("no traces to average".into()));
        };
        let t_max = first.t_max;
        if traces.iter().any(|t| t.t_max != t_max) {
            return Err(MetricsError::HorizonExceeded { have: t_max, need: t_max });
        }
        let mut times: Vec<f64> =
            traces.iter().flat_map(|t| t.breakpoints.iter().map(|&(bt, _)| bt)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let initial = traces.iter().map(|t| t.initial).sum::<f64>() / traces.len() as f64;
        let mut breakpoints = Vec::with_capacity(times.len());
        let mut last = initial;
        for t in times {
            let mean = traces.iter().map(|tr| tr.value_at(t)).sum::<f64>() / traces.len() as f64;
            if mean < last {
                breakpoints.push((t, mean));
                last = mean;
            }
        }
        Ok(BestTrace { initial, breakpoints, t_max })
    }

    /// Plot-ready `(t, R(t))` rows: the initial value plus every step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,r\n");
        out.push_str(&format!("0,{}\n", self.initial));
        for &(t, v) in &self.breakpoints {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Search speedup against a baseline best. `reached` is false when the
/// method never strictly beats the baseline; the value is then the
/// below-one sentinel `t_max / (t_max + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub value: f64,
    pub reached: bool,
}

/// `S = t_max / argmin_t { R(t) < R_best_baseline }` with
/// `R_best_baseline` the baseline trace's value at the horizon.
pub fn search_speedup(trace: &BestTrace, baseline: &BestTrace, t_max: f64) -> Speedup {
    let target = baseline.value_at(t_max);
    match trace.first_time_below(target) {
        Some(t) if t > 0.0 => Speedup { value: t_max / t, reached: true },
        Some(_) => Speedup { value: f64::INFINITY, reached: true },
        None => Speedup { value: t_max / (t_max + 1.0), reached: false },
    }
}

/// Fraction of total worker-time spent evaluating: busy intervals clipped to
/// the horizon, including jobs still in flight at shutdown, over `W * t_max`.
pub fn worker_utilization(history: &SearchHistory, workers: usize, t_max: f64) -> f64 {
    let completed: f64 = history
        .records
        .iter()
        .map(|r| (r.t_end.min(t_max) - r.t_start).max(0.0))
        .sum();
    let in_flight: f64 =
        history.cancelled.iter().map(|c| (t_max - c.t_start).max(0.0)).sum();
    ((completed + in_flight) / (workers as f64 * t_max)).clamp(0.0, 1.0)
}

/// Transfer-learning comparison of two traces over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    /// `F(tau) = R_no_tl(tau) / R_tl(tau)` on the union of breakpoints.
    pub f_trace: Vec<(f64, f64)>,
    /// `(1/D) * integral of F` — expected improvement factor.
    pub e_f: f64,
    /// Expected search speedup: the time-to-target ratio integrated over
    /// target runtimes between the final best and the first evaluation.
    pub e_s: f64,
}

/// Compute F(tau), E[F], and E[S] for a TL trace against its no-TL
/// counterpart. For E[S], `T(t)` is the earliest search time the no-TL trace
/// drops below runtime `t` (`T'` likewise for TL); the integration interval
/// runs from the larger of the two final bests up to the first evaluated
/// runtime of the no-TL search.
pub fn improvement_metrics(
    trace_tl: &BestTrace,
    trace_notl: &BestTrace,
    horizon: f64,
) -> Result<Improvement, MetricsError> {
    if !(horizon > 0.0) {
        return Err(MetricsError::BadHorizon(horizon));
    }
    for trace in [trace_tl, trace_notl] {
        if trace.t_max < horizon {
            return Err(MetricsError::HorizonExceeded { have: trace.t_max, need: horizon });
        }
    }

    // F on the union of time breakpoints
    let mut times: Vec<f64> = std::iter::once(0.0)
        .chain(trace_tl.breakpoints.iter().map(|&(t, _)| t))
        .chain(trace_notl.breakpoints.iter().map(|&(t, _)| t))
        .filter(|&t| t <= horizon)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let mut f_trace = Vec::with_capacity(times.len());
    let mut e_f = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let tl = trace_tl.value_at(t);
        let notl = trace_notl.value_at(t);
        if !(tl > 0.0) {
            return Err(MetricsError::UndefinedSegment(format!("TL trace at t={t}")));
        }
        let f = notl / tl;
        f_trace.push((t, f));
        let next = times.get(i + 1).copied().unwrap_or(horizon);
        e_f += f * (next - t);
    }
    let e_f = e_f / horizon;

    // E[S]: integrate T(t)/T'(t) dt for t in (t_min, t_first)
    let t_first = trace_notl
        .first_runtime()
        .ok_or_else(|| MetricsError::UndefinedSegment("no-TL trace has no completions".into()))?;
    let t_min = trace_tl.final_best().max(trace_notl.final_best());
    if !(t_first > t_min) {
        return Err(MetricsError::UndefinedSegment(format!(
            "E[S] interval empty: first runtime {t_first} <= final best {t_min}"
        )));
    }
    // boundary runtimes where either T or T' steps
    let mut cuts: Vec<f64> = trace_tl
        .breakpoints
        .iter()
        .chain(&trace_notl.breakpoints)
        .map(|&(_, v)| v)
        .chain([trace_tl.initial, trace_notl.initial])
        .filter(|&v| v > t_min && v < t_first)
        .collect();
    cuts.push(t_min);
    cuts.push(t_first);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let time_to_reach = |trace: &BestTrace, target: f64| -> Result<f64, MetricsError> {
        trace.first_time_below(target).ok_or_else(|| {
            MetricsError::UndefinedSegment(format!("trace never reaches runtime {target}"))
        })
    };
    let mut e_s = 0.0;
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let mid = 0.5 * (lo + hi);
        let t_notl = time_to_reach(trace_notl, mid)?;
        let t_tl = time_to_reach(trace_tl, mid)?;
        if t_tl <= 0.0 {
            // TL was below this runtime from the start; treat its time as
            // the first completion instant rather than dividing by zero
            let first = trace_tl
                .breakpoints
                .first()
                .map(|&(t, _)| t)
                .ok_or_else(|| MetricsError::UndefinedSegment("TL trace empty".into()))?;
            e_s += t_notl / first * (hi - lo);
        } else {
            e_s += t_notl / t_tl * (hi - lo);
        }
    }
    let e_s = e_s / (t_first - t_min);

    Ok(Improvement { f_trace, e_f, e_s })
}

/// Everything the report command emits for one history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_best: f64,
    pub mean_best: f64,
    pub n_evaluations: usize,
    pub n_ok: usize,
    pub n_timeouts: usize,
    pub n_failures: usize,
    pub worker_utilization: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<Speedup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement: Option<Improvement>,
}

/// Assemble the metric set for one history, optionally against a baseline
/// trace (used both as the random-search reference for S and as the no-TL
/// reference for F/E[F]/E[S]).
pub fn report(
    history: &SearchHistory,
    t_max: f64,
    baseline: Option<&BestTrace>,
) -> Result<MetricsReport, MetricsError> {
    let trace = BestTrace::from_history(history, t_max)?;
    let workers = history.metadata.workers.max(1);
    let count = |status: EvalStatus| history.records.iter().filter(|r| r.status == status).count();
    let speedup = baseline.map(|base| search_speedup(&trace, base, t_max));
    let improvement = match baseline {
        Some(base) => match improvement_metrics(&trace, base, t_max) {
            Ok(improvement) => Some(improvement),
            Err(MetricsError::UndefinedSegment(_)) => None,
            Err(other) => return Err(other),
        },
        None => None,
    };
    Ok(MetricsReport {
        r_best: trace.final_best(),
        mean_best: trace.mean_best(),
        n_evaluations: history.records.len(),
        n_ok: count(EvalStatus::Ok),
        n_timeouts: count(EvalStatus::Timeout),
        n_failures: count(EvalStatus::Failed),
        worker_utilization: worker_utilization(history, workers, t_max),
        speedup,
        improvement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{CancelledJob, EvaluationRecord, SearchMetadata};
    use crate::space::{Configuration, ParamValue, Parameter, ParameterSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn one_param_space() -> ParameterSpace {
        ParameterSpace::new(vec![Parameter::integer("n", 1, 4)]).unwrap()
    }

    fn history_from(oks: &[(f64, f64)], t_start_offset: f64) -> SearchHistory {
        let space = one_param_space();
        let config = Configuration::from_named(&space, [("n", ParamValue::Int(2))]).unwrap();
        let records = oks
            .iter()
            .enumerate()
            .map(|(i, &(t_end, runtime))| EvaluationRecord {
                job_id: i as u64,
                worker_id: i % 2,
                config: config.clone(),
                t_submit: (t_end - runtime - t_start_offset).max(0.0),
                t_start: (t_end - runtime).max(0.0),
                t_end,
                status: EvalStatus::Ok,
                runtime_seconds: runtime,
                objective: -runtime.ln(),
            })
            .collect();
        SearchHistory {
            space,
            records,
            cancelled: Vec::new(),
            metadata: SearchMetadata::default(),
            rounds: Vec::new(),
        }
    }

    #[test]
    fn best_trace_running_minimum() {
        let history = history_from(&[(10.0, 50.0), (20.0, 40.0), (30.0, 60.0)], 0.0);
        let trace = BestTrace::from_history(&history, 100.0).unwrap();
        assert_eq!(trace.breakpoints(), &[(10.0, 50.0), (20.0, 40.0)]);
        assert_eq!(trace.value_at(5.0), 600.0);
        assert_eq!(trace.value_at(10.0), 50.0);
        assert_eq!(trace.value_at(19.9), 50.0);
        assert_eq!(trace.value_at(20.0), 40.0);
        assert_eq!(trace.value_at(100.0), 40.0);
    }

    #[test]
    fn empty_history_trace_is_timeout_everywhere() {
        let history = history_from(&[], 0.0);
        let trace = BestTrace::from_history(&history, 50.0).unwrap();
        assert_eq!(trace.value_at(0.0), 600.0);
        assert_eq!(trace.value_at(50.0), 600.0);
        assert_eq!(trace.mean_best(), 600.0);
    }

    #[test]
    fn trace_invariant_to_record_order() {
        let mut history = history_from(&[(10.0, 50.0), (20.0, 40.0), (15.0, 45.0)], 0.0);
        let a = BestTrace::from_history(&history, 100.0).unwrap();
        history.records.reverse();
        let b = BestTrace::from_history(&history, 100.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_best_two_slabs() {
        let trace =
            BestTrace::from_points(50.0, &[(1800.0, 40.0)], 3600.0).unwrap();
        assert_eq!(trace.mean_best(), 45.0);
        let constant = BestTrace::from_points(70.0, &[], 3600.0).unwrap();
        assert_eq!(constant.mean_best(), 70.0);
    }

    #[test]
    fn mean_best_matches_riemann_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let t_max = 3600.0;
            let mut points = Vec::new();
            let mut t = 0.0;
            let mut v = 600.0;
            for _ in 0..12 {
                t += rng.random_range(10.0..400.0);
                v *= rng.random_range(0.75..0.98);
                if t >= t_max || v < 300.0 {
                    break;
                }
                points.push((t, v));
            }
            let trace = BestTrace::from_points(600.0, &points, t_max).unwrap();
            let exact = trace.mean_best();
            // midpoint Riemann sum on a uniform million-cell grid
            let cells = 1_000_000;
            let dt = t_max / cells as f64;
            let riemann: f64 = (0..cells)
                .map(|i| trace.value_at((i as f64 + 0.5) * dt) * dt)
                .sum::<f64>()
                / t_max;
            let rel = (exact - riemann).abs() / exact.abs();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn speedup_formula_and_not_reached() {
        let t_max = 3600.0;
        let baseline = BestTrace::from_points(600.0, &[(100.0, 40.0)], t_max).unwrap();
        let method = BestTrace::from_points(600.0, &[(90.0, 39.0)], t_max).unwrap();
        let s = search_speedup(&method, &baseline, t_max);
        assert!(s.reached);
        assert_eq!(s.value, 40.0);

        let worse = BestTrace::from_points(600.0, &[(90.0, 45.0)], t_max).unwrap();
        let s = search_speedup(&worse, &baseline, t_max);
        assert!(!s.reached);
        assert!(s.value < 1.0);

        // equal traces never strictly beat each other
        let s = search_speedup(&baseline, &baseline, t_max);
        assert!(!s.reached);
    }

    #[test]
    fn speedup_at_least_one_when_strictly_better() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let t_max = 1000.0;
            let b_final: f64 = rng.random_range(50.0..400.0);
            let baseline = BestTrace::from_points(600.0, &[(150.0, b_final)], t_max).unwrap();
            let t_hit: f64 = rng.random_range(1.0..t_max);
            let method =
                BestTrace::from_points(600.0, &[(t_hit, b_final * 0.9)], t_max).unwrap();
            let s = search_speedup(&method, &baseline, t_max);
            assert!(s.reached);
            assert!(s.value >= 1.0);
        }
    }

    #[test]
    fn utilization_full_and_half() {
        let history = history_from(&[(3600.0, 3600.0), (3600.0, 3600.0)], 0.0);
        assert!((worker_utilization(&history, 2, 3600.0) - 1.0).abs() < 1e-12);
        let one_busy = history_from(&[(3600.0, 3600.0)], 0.0);
        assert!((worker_utilization(&one_busy, 2, 3600.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn utilization_matches_busy_counter_oracle() {
        // integer-aligned busy intervals; count busy workers second by second
        let mut history = history_from(
            &[(10.0, 10.0), (25.0, 15.0), (30.0, 12.0), (41.0, 11.0), (60.0, 19.0)],
            0.0,
        );
        history.cancelled.push(CancelledJob { job_id: 99, worker_id: 1, t_submit: 55.0, t_start: 55.0 });
        let t_max = 60.0;
        let util = worker_utilization(&history, 2, t_max);
        let mut busy_seconds = 0u64;
        for second in 0..60 {
            let t = second as f64 + 0.5;
            busy_seconds += history
                .records
                .iter()
                .filter(|r| r.t_start <= t && t < r.t_end.min(t_max))
                .count() as u64;
            if 55.0 <= t {
                busy_seconds += 1; // the cancelled job stays busy to the horizon
            }
        }
        let oracle = busy_seconds as f64 / (2.0 * t_max);
        assert!((util - oracle).abs() < 1e-9, "{util} vs {oracle}");
    }

    #[test]
    fn improvement_identities() {
        let d = 1000.0;
        let tl = BestTrace::from_points(600.0, &[(50.0, 200.0), (300.0, 100.0)], d).unwrap();
        let same = improvement_metrics(&tl, &tl, d).unwrap();
        assert!(same.f_trace.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(same.e_f, 1.0);

        // no-TL trace exactly twice the TL trace
        let notl =
            BestTrace::from_points(1200.0, &[(50.0, 400.0), (300.0, 200.0)], d).unwrap();
        let improvement = improvement_metrics(&tl, &notl, d).unwrap();
        assert!((improvement.e_f - 2.0).abs() < 1e-12);
        assert!(improvement.f_trace.iter().all(|&(_, f)| (f - 2.0).abs() < 1e-12));
    }

    #[test]
    fn improvement_matches_riemann_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..10 {
            let d = 2000.0;
            let gen_trace = |rng: &mut ChaCha12Rng, floor: f64| {
                let mut points = Vec::new();
                let mut t = 0.0;
                let mut v = 600.0;
                loop {
                    t += rng.random_range(20.0..300.0);
                    v *= rng.random_range(0.7..0.95);
                    if t >= d || v < floor {
                        break;
                    }
                    points.push((t, v));
                }
                BestTrace::from_points(600.0, &points, d).unwrap()
            };
            let tl = gen_trace(&mut rng, 120.0);
            let notl = gen_trace(&mut rng, 150.0);
            let improvement = match improvement_metrics(&tl, &notl, d) {
                Ok(i) => i,
                Err(MetricsError::UndefinedSegment(_)) => continue,
                Err(e) => panic!("{e}"),
            };

            // E[F] against a dense midpoint grid
            let cells = 4_000_000u64;
            let dt = d / cells as f64;
            let e_f_oracle: f64 = (0..cells)
                .map(|i| {
                    let t = (i as f64 + 0.5) * dt;
                    notl.value_at(t) / tl.value_at(t) * dt
                })
                .sum::<f64>()
                / d;
            let rel = (improvement.e_f - e_f_oracle).abs() / e_f_oracle;
            assert!(rel < 1e-6, "E[F] relative error {rel}");

            // E[S] against a dense grid over the runtime axis
            let t_first = notl.first_runtime().unwrap();
            let t_min = tl.final_best().max(notl.final_best());
            let cells = 4_000_000u64;
            let dv = (t_first - t_min) / cells as f64;
            let time_to = |trace: &BestTrace, target: f64| {
                trace.first_time_below(target).unwrap()
            };
            let e_s_oracle: f64 = (0..cells)
                .map(|i| {
                    let v = t_min + (i as f64 + 0.5) * dv;
                    let t_tl = time_to(&tl, v);
                    let num = time_to(&notl, v);
                    let den = if t_tl <= 0.0 { tl.breakpoints()[0].0 } else { t_tl };
                    num / den * dv
                })
                .sum::<f64>()
                / (t_first - t_min);
            let rel = (improvement.e_s - e_s_oracle).abs() / e_s_oracle.abs().max(1e-12);
            assert!(rel < 1e-6, "E[S] relative error {rel}");
        }
    }

    #[test]
    fn mean_best_bounded_by_trace_range() {
        let trace = BestTrace::from_points(600.0, &[(10.0, 300.0), (500.0, 90.0)], 1000.0).unwrap();
        let e = trace.mean_best();
        assert!(e >= 90.0 && e <= 600.0);
    }

    #[test]
    fn average_is_pointwise_on_union_breakpoints() {
        let a = BestTrace::from_points(600.0, &[(10.0, 100.0)], 100.0).unwrap();
        let b = BestTrace::from_points(600.0, &[(20.0, 200.0)], 100.0).unwrap();
        let avg = BestTrace::average(&[a, b]).unwrap();
        assert_eq!(avg.value_at(5.0), 600.0);
        assert_eq!(avg.value_at(15.0), 350.0); // (100 + 600) / 2
        assert_eq!(avg.value_at(25.0), 150.0); // (100 + 200) / 2
    }

    #[test]
    fn report_includes_baseline_metrics() {
        let history = history_from(&[(10.0, 50.0), (20.0, 40.0)], 0.0);
        let baseline_history = history_from(&[(15.0, 55.0)], 0.0);
        let baseline = BestTrace::from_history(&baseline_history, 100.0).unwrap();
        let report = report(&history, 100.0, Some(&baseline)).unwrap();
        assert_eq!(report.r_best, 40.0);
        assert_eq!(report.n_evaluations, 2);
        assert_eq!(report.n_ok, 2);
        assert!(report.speedup.is_some());
        let plain = super::report(&history, 100.0, None).unwrap();
        assert!(plain.speedup.is_none());
        assert!(plain.improvement.is_none());
    }
}
