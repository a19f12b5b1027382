//! The five operator commands. Each returns the text to print on success;
//! failures carry their exit status via [`PipelineError::exit_code`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::design::{enumerate_vignettes, Design, Vignette};
use crate::error::{ConfigError, PipelineError, ProviderError, ReportError, StatsError};
use crate::prompts::render_vignette;
use crate::providers::{
    HttpTransport, LiveRespondent, OracleRespondent, RateLimiter, ReqwestTransport, Respondent,
};
use crate::report::{render_regression_table, render_summary_table, TableFormat};
use crate::runner::{
    execute, plan_runs, read_log, resume_limited, settled_records, Clock, ExecuteOptions, Experiment, FixedClock,
    JsonlSink, ResponseRecord, RunSchedule, SystemClock,
};
use crate::stats::{Analysis, FixedEffect, GroupBy, RegressionTable, SummaryRow};

/// Timestamp stamped on every simulated record.
pub const SIMULATION_EPOCH: &str = "2024-01-01T00:00:00Z";

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Layout { root: cfg.out_dir() }
    }

    pub fn vignettes(&self) -> PathBuf {
        self.root.join("vignettes.jsonl")
    }

    pub fn prompts(&self) -> PathBuf {
        self.root.join("prompts.jsonl")
    }

    pub fn log_for(&self, model_name: &str) -> PathBuf {
        let slug: String = model_name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
            .collect();
        self.root.join("runs").join(format!("{slug}.jsonl"))
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn analysis_json(&self) -> PathBuf {
        self.analysis_dir().join("analysis.json")
    }

    pub fn table(&self, stem: &str, format: TableFormat) -> PathBuf {
        self.analysis_dir().join(format!("{stem}.{}", format.extension()))
    }
}

/// Design, vignettes and schedule for the configured model.
#[derive(Debug, Clone)]
pub struct Plan {
    pub design: Design,
    pub vignettes: Vec<Vignette>,
    pub schedule: RunSchedule,
}

pub fn plan(cfg: &ExperimentConfig) -> Result<Plan, PipelineError> {
    let design = cfg.load_design()?;
    let vignettes = enumerate_vignettes(&design);
    let schedule = plan_runs(&vignettes, cfg.run.repetitions, cfg.model_name()?)?;
    Ok(Plan {
        design,
        vignettes,
        schedule,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Writes `vignettes.jsonl` and `prompts.jsonl`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let design = cfg.load_design()?;
    let vignettes = enumerate_vignettes(&design);
    let layout = Layout::new(cfg);

    let mut vbuf = Vec::new();
    let mut pbuf = Vec::new();
    for v in &vignettes {
        serde_json::to_writer(&mut vbuf, v).expect("vignettes serialize");
        vbuf.push(b'\n');
        let bundle = render_vignette(v, &design).map_err(ConfigError::from)?;
        let line = serde_json::json!({
            "vignette_id": v.id,
            "system": bundle.system_text,
            "user": bundle.user_text,
        });
        serde_json::to_writer(&mut pbuf, &line).expect("prompts serialize");
        pbuf.push(b'\n');
    }
    write_file(&layout.vignettes(), &vbuf)?;
    write_file(&layout.prompts(), &pbuf)?;

    let mut msg = format!("{} vignettes", vignettes.len());
    if let Some(m) = &cfg.model {
        msg.push_str(&format!(
            "\n{} scheduled calls for {} ({} repetitions)",
            vignettes.len() * cfg.run.repetitions as usize,
            m.name,
            cfg.run.repetitions
        ));
    }
    Ok(msg)
}

/// Runs the oracle respondent over the schedule. Single-threaded with a
/// fixed clock so the log is a pure function of the config.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let oracle = cfg
        .oracle
        .clone()
        .ok_or_else(|| ConfigError::Invalid("simulate needs an [oracle] section".into()))?;
    let plan = plan(cfg)?;
    oracle.check_against(&plan.design)?;
    let epoch: DateTime<Utc> = SIMULATION_EPOCH.parse().expect("valid epoch");
    drive(cfg, &plan, &OracleRespondent::new(oracle), Arc::new(FixedClock(epoch)), 1)
}

/// Runs the live provider named in the config.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    // Credentials are checked before the transport or schedule exist.
    let kind = live_kind(cfg)?;
    std::env::var(kind.api_key_env())
        .ok()
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| ProviderError::Auth(format!("environment variable {} is not set", kind.api_key_env())))?;
    cmd_run_with(cfg, Arc::new(ReqwestTransport::new()?))
}

fn live_kind(cfg: &ExperimentConfig) -> Result<crate::providers::ProviderKind, PipelineError> {
    Ok(cfg
        .model()?
        .provider
        .ok_or_else(|| ConfigError::Invalid("model.provider is required for run".into()))?)
}

/// [`cmd_run`] over an arbitrary transport.
pub fn cmd_run_with(cfg: &ExperimentConfig, transport: Arc<dyn HttpTransport>) -> Result<String, PipelineError> {
    let kind = live_kind(cfg)?;
    let model = cfg.model()?;
    let mut live = LiveRespondent::from_env(kind, transport)?
        .with_retry(cfg.retry_policy())
        .with_system_slot(model.system_slot);
    if let Some(url) = &model.base_url {
        live = live.with_base_url(url.clone());
    }
    if let Some(rpm) = cfg.run.requests_per_minute {
        let burst = cfg.run.burst.unwrap_or(cfg.run.concurrency as u32);
        live = live.with_limiter(Arc::new(RateLimiter::per_minute(rpm, burst)));
    }
    let plan = plan(cfg)?;
    drive(cfg, &plan, &live, Arc::new(SystemClock), cfg.run.concurrency)
}

fn drive<R: Respondent>(
    cfg: &ExperimentConfig,
    plan: &Plan,
    respondent: &R,
    clock: Arc<dyn Clock>,
    concurrency: usize,
) -> Result<String, PipelineError> {
    let path = Layout::new(cfg).log_for(&plan.schedule.model_name);
    let existing = read_log(&path)?.records;
    let remaining = resume_limited(&plan.schedule, &existing, cfg.run.requeue_limit);
    let mut lines = vec![format!("{} remaining", remaining.len())];

    if !remaining.is_empty() {
        let experiment = Experiment {
            design: &plan.design,
            vignettes: &plan.vignettes,
            params: cfg.query_params()?,
        };
        let options = ExecuteOptions {
            concurrency,
            reask_limit: cfg.run.reask_limit,
            shuffle_seed: cfg.shuffle_seed(),
            clock,
            cancel: None,
        };
        let mut sink = JsonlSink::open(&path, cfg.run.fsync).map_err(io_err(&path))?;
        let summary = execute(&remaining, &experiment, respondent, &mut sink, &options)?;
        lines.push(format!(
            "{} completed: {} valid, {} parse failures, {} provider errors, {} re-asks",
            summary.completed(),
            summary.valid,
            summary.parse_failed,
            summary.provider_error,
            summary.reasks
        ));
        if let Some(reason) = &summary.aborted {
            if reason.contains("authentication") {
                return Err(ProviderError::Auth(format!("{reason}; {}", lines.join("; "))).into());
            }
        }
    }

    let wanted: HashSet<_> = plan
        .schedule
        .entries
        .iter()
        .map(|e| (e.vignette_id.as_str(), e.run_index))
        .collect();
    let all = read_log(&path)?.records;
    let valid = settled_records(&all)
        .iter()
        .filter(|r| r.model_name == plan.schedule.model_name && r.is_valid())
        .filter(|r| wanted.contains(&(r.vignette_id.as_str(), r.run_index)))
        .count();
    let missing = plan.schedule.len() - valid;
    lines.push(format!("{valid}/{} scheduled keys valid; log {}", plan.schedule.len(), path.display()));
    if missing > 0 {
        lines.push(format!("{missing} key(s) without a valid response"));
        return Err(PipelineError::Incomplete(lines.join("\n")));
    }
    Ok(lines.join("\n"))
}

/// Everything `report` needs to re-render tables without the logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub group_by: GroupBy,
    pub column_labels: Vec<String>,
    pub regressions: Vec<RegressionTable>,
    pub summary: Vec<SummaryRow>,
}

/// Per-group regressions plus a pooled fixed-effect column when there is
/// more than one group.
pub fn analyze_records(
    cfg: &ExperimentConfig,
    design: &Design,
    records: &[ResponseRecord],
    model_order: Vec<String>,
) -> Result<AnalysisOutput, PipelineError> {
    if records.is_empty() {
        return Err(StatsError::EmptyData.into());
    }
    let group_by = cfg.analysis.group_by;
    let analysis = Analysis::new(design)
        .with_model_order(model_order.clone())
        .with_p_reference(cfg.analysis.p_reference);

    let groups: Vec<(String, String)> = match group_by {
        GroupBy::Scenario => design
            .scenarios
            .iter()
            .filter(|s| records.iter().any(|r| r.scenario == s.key))
            .map(|s| (s.key.clone(), s.label().to_string()))
            .collect(),
        GroupBy::Model => {
            let mut order = model_order;
            let mut extra: Vec<String> = records
                .iter()
                .map(|r| r.model_name.clone())
                .filter(|m| !order.contains(m))
                .collect();
            extra.sort();
            extra.dedup();
            order.extend(extra);
            order
                .into_iter()
                .filter(|m| records.iter().any(|r| &r.model_name == m))
                .map(|m| {
                    let label = match &cfg.model {
                        Some(c) if c.name == m => c.label().to_string(),
                        _ => m.clone(),
                    };
                    (m, label)
                })
                .collect()
        }
        GroupBy::Pooled => Vec::new(),
    };

    let mut regressions = Vec::new();
    let mut column_labels = Vec::new();
    for (key, label) in &groups {
        let subset: Vec<ResponseRecord> = records
            .iter()
            .filter(|r| match group_by {
                GroupBy::Scenario => &r.scenario == key,
                _ => &r.model_name == key,
            })
            .cloned()
            .collect();
        regressions.push(analysis.conjoint_regression(&subset, FixedEffect::None)?);
        column_labels.push(label.clone());
    }
    if groups.len() != 1 {
        let fe = cfg.analysis.fixed_effect.unwrap_or(match group_by {
            GroupBy::Scenario => FixedEffect::Scenario,
            GroupBy::Model => FixedEffect::Model,
            GroupBy::Pooled => FixedEffect::None,
        });
        regressions.push(analysis.conjoint_regression(records, fe)?);
        column_labels.push("Pooled".into());
    }
    let summary = analysis.summary_stats(records, group_by)?;
    Ok(AnalysisOutput {
        group_by,
        column_labels,
        regressions,
        summary,
    })
}

/// Reads and settles the given logs, or the configured model's log when
/// none are given, keeps the configured scenarios, then writes `analysis.json` and the rendered tables.
pub fn cmd_analyze(cfg: &ExperimentConfig, logs: &[PathBuf]) -> Result<String, PipelineError> {
    let layout = Layout::new(cfg);
    let paths: Vec<PathBuf> = if logs.is_empty() {
        vec![layout.log_for(cfg.model_name()?)]
    } else {
        logs.to_vec()
    };
    let mut all = Vec::new();
    let mut order: Vec<String> = cfg.analysis.model_order.clone();
    for p in &paths {
        if !p.exists() {
            return Err(PipelineError::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "run log not found"),
            });
        }
        for r in read_log(p)?.records {
            if !order.contains(&r.model_name) {
                order.push(r.model_name.clone());
            }
            all.push(r);
        }
    }
    let mut records = settled_records(&all);
    if let Some(keep) = &cfg.scenarios {
        records.retain(|r| keep.contains(&r.scenario));
    }
    let design = cfg.load_full_design()?;
    let output = analyze_records(cfg, &design, &records, order)?;

    let mut json = serde_json::to_string_pretty(&output).expect("analysis serializes");
    json.push('\n');
    write_file(&layout.analysis_json(), json.as_bytes())?;
    render_outputs(&layout, &output)
}

/// Re-renders the tables from `analysis.json`.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String, PipelineError> {
    let layout = Layout::new(cfg);
    let path = layout.analysis_json();
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let output: AnalysisOutput = serde_json::from_str(&text).map_err(|e| PipelineError::Io {
        path: path.clone(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    render_outputs(&layout, &output)
}

/// Writes summary and regression tables in both formats; returns the
/// Markdown versions.
pub fn render_outputs(layout: &Layout, output: &AnalysisOutput) -> Result<String, PipelineError> {
    if output.regressions.is_empty() {
        return Err(ReportError::EmptyData.into());
    }
    let mut shown = String::new();
    for format in [TableFormat::Markdown, TableFormat::Csv] {
        let summary = render_summary_table(&output.summary, format)?;
        let regression = render_regression_table(&output.regressions, &output.column_labels, format)?;
        for (stem, table) in [("summary", &summary), ("regression", &regression)] {
            let path = layout.table(stem, format);
            write_file(&path, table.to_file_string().as_bytes())?;
            if format == TableFormat::Markdown {
                shown.push_str(&table.to_file_string());
                shown.push('\n');
            }
        }
    }
    shown.push_str(&format!("tables written to {}", layout.analysis_dir().display()));
    Ok(shown)
}
