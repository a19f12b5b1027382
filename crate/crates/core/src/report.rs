//! Markdown and CSV rendering of summary and regression tables.
//!
//! Markdown mirrors the usual journal layout: two decimals for estimates of
//! magnitude ≥ 10, three otherwise, SEs in parentheses and stars on the
//! estimate. CSV is the machine artifact: long format, three decimals for
//! estimates and SEs. Stars are always taken from the stats output.

use serde::{Deserialize, Serialize};

use crate::error::ReportError;
use crate::stats::{RegressionTable, SummaryRow};

pub const STARS_LEGEND: &str = "*** p<0.01, ** p<0.05, * p<0.1";
pub const CLUSTER_NOTE: &str = "Standard errors clustered on vignette in parentheses.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedTable {
    pub title: String,
    pub format: TableFormat,
    pub body: String,
    pub footer: String,
}

impl RenderedTable {
    /// File contents: Markdown gets a heading and the footer as prose; CSV
    /// keeps the footer as trailing `#` comment lines.
    pub fn to_file_string(&self) -> String {
        match self.format {
            TableFormat::Markdown => format!("## {}\n\n{}\n{}\n", self.title, self.body, self.footer),
            TableFormat::Csv => {
                let mut out = self.body.clone();
                for line in self.footer.lines() {
                    out.push_str("# ");
                    out.push_str(line);
                    out.push('\n');
                }
                out
            }
        }
    }
}

fn md_estimate(x: f64) -> String {
    let s = if x.abs() >= 10.0 { format!("{x:.2}") } else { format!("{x:.3}") };
    strip_negative_zero(s)
}

fn fixed3(x: f64) -> String {
    strip_negative_zero(format!("{x:.3}"))
}

fn strip_negative_zero(s: String) -> String {
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Integers print bare, everything else with one decimal.
fn compact(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

fn csv_text(rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 cells")
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |", cells.join(" | "))
}

/// One column per table; rows are the factor coefficients followed by
/// Observations and R-squared.
pub fn render_regression_table(
    tables: &[RegressionTable],
    column_labels: &[String],
    format: TableFormat,
) -> Result<RenderedTable, ReportError> {
    let first = tables.first().ok_or(ReportError::EmptyData)?;
    if column_labels.len() != tables.len() {
        return Err(ReportError::LabelCount(column_labels.len(), tables.len()));
    }
    let keys: Vec<&str> = first.rows.iter().map(|r| r.key.as_str()).collect();
    for t in tables {
        if t.rows.iter().map(|r| r.key.as_str()).ne(keys.iter().copied()) {
            return Err(ReportError::ShapeMismatch);
        }
    }

    let mut footer = vec![CLUSTER_NOTE.to_string()];
    for (t, label) in tables.iter().zip(column_labels) {
        if let Some(fe) = &t.fixed_effects {
            footer.push(format!("{label} uses {fe} fixed effect."));
        }
    }
    let excluded: Vec<String> = tables
        .iter()
        .zip(column_labels)
        .map(|(t, l)| format!("{l} {}", t.excluded))
        .collect();
    footer.push(format!("Excluded non-valid responses: {}.", excluded.join(", ")));
    footer.push(STARS_LEGEND.to_string());
    let footer = footer.join("\n");

    let body = match format {
        TableFormat::Markdown => {
            let mut lines = Vec::new();
            let mut header = vec!["Dep. var: policy score (0 to 100)".to_string()];
            header.extend(column_labels.iter().cloned());
            lines.push(md_row(&header));
            lines.push(md_row(&vec!["---".to_string(); header.len()]));
            for (i, row) in first.rows.iter().enumerate() {
                let mut cells = vec![row.label.clone()];
                cells.extend(tables.iter().map(|t| {
                    let r = &t.rows[i];
                    format!("{}{} ({})", md_estimate(r.estimate), r.stars, fixed3(r.std_error))
                }));
                lines.push(md_row(&cells));
            }
            let mut obs = vec!["Observations".to_string()];
            obs.extend(tables.iter().map(|t| thousands(t.n_obs)));
            lines.push(md_row(&obs));
            let mut r2 = vec!["R-squared".to_string()];
            r2.extend(tables.iter().map(|t| format!("{:.3}", t.r_squared)));
            lines.push(md_row(&r2));
            lines.join("\n") + "\n"
        }
        TableFormat::Csv => {
            let mut rows = vec![["column", "term", "estimate", "std_error", "p_value", "stars"]
                .map(String::from)
                .to_vec()];
            for (t, label) in tables.iter().zip(column_labels) {
                for r in &t.rows {
                    rows.push(vec![
                        label.clone(),
                        r.label.clone(),
                        fixed3(r.estimate),
                        fixed3(r.std_error),
                        format!("{:.4e}", r.p_value),
                        r.stars.clone(),
                    ]);
                }
                rows.push(vec![label.clone(), "Observations".into(), t.n_obs.to_string(), String::new(), String::new(), String::new()]);
                rows.push(vec![label.clone(), "R-squared".into(), format!("{:.3}", t.r_squared), String::new(), String::new(), String::new()]);
                rows.push(vec![label.clone(), "Clusters".into(), t.cluster_count.to_string(), String::new(), String::new(), String::new()]);
            }
            csv_text(&rows)
        }
    };
    Ok(RenderedTable {
        title: "Regression results".into(),
        format,
        body,
        footer,
    })
}

/// Mean / Std. dev / Median / Min / Max, one row per SummaryRow.
pub fn render_summary_table(rows: &[SummaryRow], format: TableFormat) -> Result<RenderedTable, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyData);
    }
    let cells = |r: &SummaryRow| {
        vec![
            format!("{:.1}", r.mean),
            format!("{:.1}", r.std_dev),
            compact(r.median),
            compact(r.min),
            compact(r.max),
        ]
    };
    let singletons: Vec<&str> = rows.iter().filter(|r| r.n == 1).map(|r| r.label.as_str()).collect();
    let mut footer = format!("N per row: {}.", rows.iter().map(|r| format!("{} {}", r.label, r.n)).collect::<Vec<_>>().join(", "));
    if !singletons.is_empty() {
        footer.push_str(&format!("\nStd. dev undefined (n = 1), shown as 0: {}.", singletons.join(", ")));
    }
    let body = match format {
        TableFormat::Markdown => {
            let header = ["", "Mean", "Std. dev", "Median", "Min", "Max"].map(String::from).to_vec();
            let mut lines = vec![md_row(&header), md_row(&vec!["---".to_string(); header.len()])];
            for r in rows {
                let mut c = vec![r.label.clone()];
                c.extend(cells(r));
                lines.push(md_row(&c));
            }
            lines.join("\n") + "\n"
        }
        TableFormat::Csv => {
            let mut out = vec![["group", "mean", "std_dev", "median", "min", "max", "n"].map(String::from).to_vec()];
            for r in rows {
                let mut c = vec![r.label.clone()];
                c.extend(cells(r));
                c.push(r.n.to_string());
                out.push(c);
            }
            csv_text(&out)
        }
    };
    Ok(RenderedTable {
        title: "Summary statistics".into(),
        format,
        body,
        footer,
    })
}
