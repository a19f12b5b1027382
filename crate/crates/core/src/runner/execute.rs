use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::log::{RecordSink, RecordStatus, ResponseRecord};
use super::schedule::{RunSchedule, ScheduleEntry};
use crate::design::{Design, Vignette, VignetteId};
use crate::error::{ProviderError, RunnerError};
use crate::parser::{parse_score, ParseOutcome};
use crate::prompts::{render_vignette, PromptBundle};
use crate::providers::{Query, QueryParams, Respondent};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always returns the same instant; used for reproducible simulated logs.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Clone)]
pub struct ExecuteOptions {
    /// Maximum requests in flight.
    pub concurrency: usize,
    /// Extra asks after an unparseable completion before giving up.
    pub reask_limit: u32,
    /// Seeded shuffle of submission order; `None` keeps schedule order.
    pub shuffle_seed: Option<u64>,
    pub clock: Arc<dyn Clock>,
    /// Checked before each entry is taken; set it to stop early.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            concurrency: 8,
            reask_limit: 2,
            shuffle_seed: None,
            clock: Arc::new(SystemClock),
            cancel: None,
        }
    }
}

/// The fixed inputs shared by every entry of a schedule.
pub struct Experiment<'a> {
    pub design: &'a Design,
    pub vignettes: &'a [Vignette],
    pub params: QueryParams,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionSummary {
    pub model_name: String,
    pub scheduled: usize,
    pub valid: usize,
    pub parse_failed: usize,
    pub provider_error: usize,
    pub reasks: usize,
    /// Set when the batch stopped before draining the schedule.
    pub aborted: Option<String>,
}

impl ExecutionSummary {
    pub fn completed(&self) -> usize {
        self.valid + self.parse_failed + self.provider_error
    }

    pub fn terminal_failures(&self) -> usize {
        self.parse_failed + self.provider_error
    }
}

struct Shared<'s> {
    sink: &'s mut dyn RecordSink,
    summary: ExecutionSummary,
    sink_error: Option<std::io::Error>,
}

/// Runs every schedule entry through `respondent`, appending exactly one
/// record per entry. Provider failures become records; a sink failure stops
/// the batch and is returned after in-flight entries settle.
pub fn execute<R: Respondent + ?Sized>(
    schedule: &RunSchedule,
    experiment: &Experiment<'_>,
    respondent: &R,
    sink: &mut dyn RecordSink,
    options: &ExecuteOptions,
) -> Result<ExecutionSummary, RunnerError> {
    if options.concurrency < 1 {
        return Err(RunnerError::InvalidConfig("concurrency must be at least 1".into()));
    }
    experiment
        .params
        .validate()
        .map_err(RunnerError::InvalidConfig)?;
    if experiment.params.model_name != schedule.model_name {
        return Err(RunnerError::InvalidConfig(format!(
            "schedule is for `{}` but params name `{}`",
            schedule.model_name, experiment.params.model_name
        )));
    }

    let by_id: HashMap<&VignetteId, &Vignette> = experiment.vignettes.iter().map(|v| (&v.id, v)).collect();
    let mut prompts: HashMap<&VignetteId, PromptBundle> = HashMap::new();
    for e in &schedule.entries {
        if prompts.contains_key(&e.vignette_id) {
            continue;
        }
        let v = by_id.get(&e.vignette_id).ok_or_else(|| {
            RunnerError::InvalidConfig(format!("schedule names unknown vignette {}", e.vignette_id))
        })?;
        prompts.insert(&v.id, render_vignette(v, experiment.design)?);
    }

    let mut order: Vec<&ScheduleEntry> = schedule.entries.iter().collect();
    if let Some(seed) = options.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }

    let cursor = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let shared = Mutex::new(Shared {
        sink,
        summary: ExecutionSummary {
            model_name: schedule.model_name.clone(),
            scheduled: schedule.len(),
            ..Default::default()
        },
        sink_error: None,
    });

    let worker = || loop {
        if stop.load(Ordering::SeqCst) || options.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst)) {
            break;
        }
        let i = cursor.fetch_add(1, Ordering::SeqCst);
        let Some(entry) = order.get(i) else { break };
        let vignette = by_id[&entry.vignette_id];
        let bundle = &prompts[&entry.vignette_id];
        let (record, reasks, auth_failed) = ask(entry, vignette, bundle, experiment, respondent, options);

        let mut s = shared.lock().expect("runner state poisoned");
        if s.sink_error.is_some() {
            break;
        }
        if let Err(e) = s.sink.append(&record) {
            s.sink_error = Some(e);
            stop.store(true, Ordering::SeqCst);
            break;
        }
        s.summary.reasks += reasks as usize;
        match record.status {
            RecordStatus::Valid => s.summary.valid += 1,
            RecordStatus::ParseFailed => s.summary.parse_failed += 1,
            RecordStatus::ProviderError => s.summary.provider_error += 1,
        }
        if auth_failed {
            s.summary.aborted = Some("authentication failed".into());
            stop.store(true, Ordering::SeqCst);
        }
    };

    let workers = options.concurrency.min(order.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(worker);
            }
        });
    }

    let Shared {
        mut summary, sink_error, ..
    } = shared.into_inner().expect("runner state poisoned");
    if let Some(source) = sink_error {
        return Err(RunnerError::Sink {
            completed: summary.completed(),
            source,
        });
    }
    if summary.aborted.is_none() && summary.completed() < summary.scheduled {
        summary.aborted = Some("cancelled".into());
    }
    Ok(summary)
}

fn ask<R: Respondent + ?Sized>(
    entry: &ScheduleEntry,
    vignette: &Vignette,
    bundle: &PromptBundle,
    experiment: &Experiment<'_>,
    respondent: &R,
    options: &ExecuteOptions,
) -> (ResponseRecord, u32, bool) {
    let mut attempt = 0;
    let (raw_text, score, status, error_detail, meta, auth) = loop {
        let query = Query {
            vignette,
            run_index: entry.run_index,
            attempt,
            bundle,
            params: &experiment.params,
        };
        match respondent.respond(&query) {
            Ok(raw) => match parse_score(&raw.text) {
                ParseOutcome::Score(s) => {
                    break (raw.text, Some(s), RecordStatus::Valid, None, Some(raw.transport_meta), false)
                }
                ParseOutcome::Failed(reason) if attempt >= options.reask_limit => {
                    let detail = serde_json::to_value(reason)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    break (
                        raw.text,
                        None,
                        RecordStatus::ParseFailed,
                        Some(detail),
                        Some(raw.transport_meta),
                        false,
                    );
                }
                ParseOutcome::Failed(_) => attempt += 1,
            },
            Err(e) => {
                let auth = matches!(e, ProviderError::Auth(_));
                break (
                    String::new(),
                    None,
                    RecordStatus::ProviderError,
                    Some(format!("{}: {e}", e.kind())),
                    None,
                    auth,
                );
            }
        }
    };
    let record = ResponseRecord {
        vignette_id: entry.vignette_id.clone(),
        run_index: entry.run_index,
        scenario: vignette.scenario.clone(),
        assignment: vignette.assignment.clone(),
        model_name: experiment.params.model_name.clone(),
        params: experiment.params.clone(),
        raw_text,
        score,
        status,
        error_detail,
        transport_meta: meta,
        timestamp: options.clock.now(),
    };
    (record, attempt, auth)
}

/// Entries that still lack a Valid record for this schedule's model.
pub fn resume(schedule: &RunSchedule, existing: &[ResponseRecord]) -> RunSchedule {
    resume_limited(schedule, existing, None)
}

/// Like [`resume`], but entries that already failed `max_failures` times are
/// treated as terminal and not re-queued.
pub fn resume_limited(schedule: &RunSchedule, existing: &[ResponseRecord], max_failures: Option<u32>) -> RunSchedule {
    let mut done: HashSet<(&VignetteId, u32)> = HashSet::new();
    let mut failures: HashMap<(&VignetteId, u32), u32> = HashMap::new();
    for r in existing.iter().filter(|r| r.model_name == schedule.model_name) {
        if r.is_valid() {
            done.insert((&r.vignette_id, r.run_index));
        } else {
            *failures.entry((&r.vignette_id, r.run_index)).or_default() += 1;
        }
    }
    let entries = schedule
        .entries
        .iter()
        .filter(|e| {
            let k = (&e.vignette_id, e.run_index);
            !done.contains(&k) && max_failures.is_none_or(|m| failures.get(&k).copied().unwrap_or(0) < m)
        })
        .cloned()
        .collect();
    RunSchedule {
        model_name: schedule.model_name.clone(),
        repetitions: schedule.repetitions,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::time::Duration;

    use super::*;
    use crate::design::enumerate_vignettes;
    use crate::design::tests::toy_design;
    use crate::providers::{LatentModel, OracleRespondent, RawResponse};
    use crate::runner::log::{read_log, settled_records, JsonlSink, MemorySink};
    use crate::runner::plan_runs;

    fn oracle(keys: &[&str]) -> OracleRespondent {
        OracleRespondent::new(LatentModel {
            base: 50.0,
            weights: keys.iter().map(|k| (k.to_string(), -3.0)).collect(),
            scenario_offsets: BTreeMap::new(),
            noise_sd: 4.0,
            rng_seed: 11,
        })
    }

    fn fixed_clock() -> Arc<dyn Clock> {
        Arc::new(FixedClock(DateTime::<Utc>::UNIX_EPOCH))
    }

    /// Fails calls 1, 4, 7, … with a transport error.
    struct EveryThird {
        calls: AtomicUsize,
    }

    impl Respondent for EveryThird {
        fn provider(&self) -> &str {
            "fake"
        }

        fn respond(&self, _q: &Query<'_>) -> Result<RawResponse, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n % 3 == 0 {
                Err(ProviderError::Transport("boom".into()))
            } else {
                Ok(RawResponse {
                    text: "50".into(),
                    latency: Duration::ZERO,
                    provider: "fake".into(),
                    transport_meta: "{}".into(),
                })
            }
        }
    }

    /// Returns chatter until the `ok_on`-th attempt of each entry.
    struct Chatty {
        ok_on: u32,
    }

    impl Respondent for Chatty {
        fn provider(&self) -> &str {
            "fake"
        }

        fn respond(&self, q: &Query<'_>) -> Result<RawResponse, ProviderError> {
            let text = if q.attempt >= self.ok_on { "42" } else { "Sure! 42." };
            Ok(RawResponse {
                text: text.into(),
                latency: Duration::ZERO,
                provider: "fake".into(),
                transport_meta: "{}".into(),
            })
        }
    }

    #[test]
    fn oracle_batch_is_all_valid() {
        let d = toy_design(&["a"], &["x", "y", "z"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "oracle-m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("oracle-m"),
        };
        let mut sink = MemorySink::default();
        let sum = execute(&s, &exp, &oracle(&["x", "y", "z"]), &mut sink, &ExecuteOptions::default()).unwrap();
        assert_eq!(sum.valid, 16);
        assert_eq!(sum.completed(), 16);
        assert_eq!(sink.records.len(), 16);
        assert!(sink.records.iter().all(|r| r.is_valid()));
        let keys: HashSet<_> = sink.records.iter().map(|r| r.key()).collect();
        assert_eq!(keys.len(), 16);
    }

    #[test]
    fn every_third_failure_is_recorded_not_raised() {
        let d = toy_design(&["a", "b"], &["x", "y", "z"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let fake = EveryThird {
            calls: AtomicUsize::new(0),
        };
        let mut sink = MemorySink::default();
        let opts = ExecuteOptions {
            concurrency: 4,
            ..Default::default()
        };
        let sum = execute(&s, &exp, &fake, &mut sink, &opts).unwrap();
        let n = s.len();
        assert_eq!(sum.provider_error, n.div_ceil(3));
        assert_eq!(sum.valid, n - n.div_ceil(3));
        assert_eq!(sum.completed(), n);
        assert!(sink
            .records
            .iter()
            .filter(|r| r.status == RecordStatus::ProviderError)
            .all(|r| r.error_detail.as_deref() == Some("transport: transport error: boom")));
    }

    #[test]
    fn reasks_then_gives_up() {
        let d = toy_design(&["a"], &["x"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 1, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = MemorySink::default();
        let sum = execute(&s, &exp, &Chatty { ok_on: 2 }, &mut sink, &ExecuteOptions::default()).unwrap();
        assert_eq!(sum.valid, 2);
        assert_eq!(sum.reasks, 4);

        let mut sink = MemorySink::default();
        let sum = execute(&s, &exp, &Chatty { ok_on: 3 }, &mut sink, &ExecuteOptions::default()).unwrap();
        assert_eq!(sum.parse_failed, 2);
        assert_eq!(sink.records[0].raw_text, "Sure! 42.");
        assert_eq!(sink.records[0].error_detail.as_deref(), Some("extra_content"));
        assert_eq!(sink.records[0].score, None);
    }

    #[test]
    fn resume_requeues_only_unsettled() {
        let d = toy_design(&["a", "b"], &["x", "y", "z"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 3, "m").unwrap();
        assert_eq!(resume(&s, &[]).entries, s.entries);

        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = MemorySink::default();
        execute(&s, &exp, &oracle(&["x", "y", "z"]), &mut sink, &ExecuteOptions::default()).unwrap();
        assert!(resume(&s, &sink.records).is_empty());

        // three failures among 48
        let mut log = sink.records.clone();
        for i in [4, 17, 40] {
            log[i].status = RecordStatus::ProviderError;
            log[i].score = None;
        }
        let left = resume(&s, &log);
        assert_eq!(left.len(), 3);
        assert!(resume_limited(&s, &log, Some(1)).is_empty());
        assert_eq!(resume_limited(&s, &log, Some(2)).len(), 3);

        // another model's records never satisfy this schedule
        let mut other = sink.records.clone();
        for r in &mut other {
            r.model_name = "other".into();
        }
        assert_eq!(resume(&s, &other).len(), 48);
    }

    #[test]
    fn sink_failure_aborts_with_completed_durable() {
        struct Flaky {
            ok: usize,
            inner: MemorySink,
        }
        impl RecordSink for Flaky {
            fn append(&mut self, r: &ResponseRecord) -> std::io::Result<()> {
                if self.inner.records.len() == self.ok {
                    return Err(std::io::Error::other("disk full"));
                }
                self.inner.append(r)
            }
        }
        let d = toy_design(&["a"], &["x", "y", "z"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = Flaky {
            ok: 5,
            inner: MemorySink::default(),
        };
        let err = execute(&s, &exp, &oracle(&["x", "y", "z"]), &mut sink, &ExecuteOptions::default()).unwrap_err();
        assert!(matches!(err, RunnerError::Sink { completed: 5, .. }));
        assert_eq!(sink.inner.records.len(), 5);
    }

    #[test]
    fn jsonl_round_trip_and_resume_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs/log.jsonl");
        let d = toy_design(&["a"], &["x", "y"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 3, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let opts = ExecuteOptions {
            clock: fixed_clock(),
            shuffle_seed: Some(9),
            ..Default::default()
        };
        let mut sink = JsonlSink::open(&path, false).unwrap();
        execute(&s, &exp, &oracle(&["x", "y"]), &mut sink, &opts).unwrap();
        drop(sink);
        let log = read_log(&path).unwrap();
        assert_eq!(log.records.len(), 12);
        assert!(!log.torn_tail);

        let left = resume(&s, &log.records);
        assert!(left.is_empty());
        let mut sink = JsonlSink::open(&path, false).unwrap();
        let sum = execute(&left, &exp, &oracle(&["x", "y"]), &mut sink, &opts).unwrap();
        assert_eq!(sum.completed(), 0);
        assert_eq!(read_log(&path).unwrap().records.len(), 12);
    }

    #[test]
    fn torn_tail_is_skipped_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let d = toy_design(&["a"], &["x"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = JsonlSink::open(&path, false).unwrap();
        let part = plan_runs(&v[..1], 2, "m").unwrap();
        execute(&part, &exp, &oracle(&["x"]), &mut sink, &ExecuteOptions::default()).unwrap();
        drop(sink);
        std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(br#"{"vignette_id":"a-b1","run_in"#)
            .unwrap();

        let log = read_log(&path).unwrap();
        assert!(log.torn_tail);
        assert_eq!(log.records.len(), 2);
        let left = resume(&s, &log.records);
        assert_eq!(left.len(), 2);

        let mut sink = JsonlSink::open(&path, false).unwrap();
        execute(&left, &exp, &oracle(&["x"]), &mut sink, &ExecuteOptions::default()).unwrap();
        let log = read_log(&path).unwrap();
        assert!(!log.torn_tail);
        assert_eq!(log.records.len(), 4);
    }

    #[test]
    fn corrupt_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let d = toy_design(&["a"], &["x"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = JsonlSink::open(&path, false).unwrap();
        execute(&s, &exp, &oracle(&["x"]), &mut sink, &ExecuteOptions::default()).unwrap();
        drop(sink);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.insert(2, "not json");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        match read_log(&path) {
            Err(RunnerError::CorruptLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected CorruptLog, got {other:?}"),
        }
    }

    #[test]
    fn settled_prefers_valid_and_sorts() {
        let d = toy_design(&["a"], &["x"]);
        let v = enumerate_vignettes(&d);
        let s = plan_runs(&v, 2, "m").unwrap();
        let exp = Experiment {
            design: &d,
            vignettes: &v,
            params: QueryParams::new("m"),
        };
        let mut sink = MemorySink::default();
        execute(&s, &exp, &oracle(&["x"]), &mut sink, &ExecuteOptions::default()).unwrap();
        let mut failed = sink.records[1].clone();
        failed.status = RecordStatus::ProviderError;
        failed.score = None;
        let mut log = vec![failed.clone()];
        log.extend(sink.records.iter().rev().cloned());
        log.push(failed);
        let settled = settled_records(&log);
        assert_eq!(settled.len(), 4);
        assert!(settled.iter().all(|r| r.is_valid()));
        assert_eq!(settled, sink.records);
    }

    use std::io::Write;
}
