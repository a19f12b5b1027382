//! Repetition schedule, execution against a respondent, and the run log.

mod execute;
mod log;
mod schedule;

pub use execute::{
    execute, resume, resume_limited, Clock, ExecuteOptions, ExecutionSummary, Experiment, FixedClock, SystemClock,
};
pub use log::{
    read_log, read_log_from, settled_records, JsonlSink, LogContents, MemorySink, RecordKey, RecordSink, RecordStatus,
    ResponseRecord,
};
pub use schedule::{plan_runs, RunSchedule, ScheduleEntry};
