//! Conjoint estimation: dummy-coded OLS with vignette-clustered standard
//! errors, optional fixed effects, summary statistics and cell means.
//!
//! Records are sorted by (model, vignette, run) before any arithmetic, so
//! every reported number is independent of run-log order.

mod linalg;
mod ols;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use linalg::Qr;
pub use ols::{
    cluster_robust_se, cr1_factor, fit_ols, stars, two_sided_p, ClusterInference, Column, ColumnRole, DesignMatrix,
    OlsFit, PValueReference,
};

use crate::design::{Design, FactorAssignment, Level};
use crate::error::StatsError;
use crate::runner::ResponseRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedEffect {
    None,
    Scenario,
    Model,
}

impl FixedEffect {
    pub fn label(self) -> Option<&'static str> {
        match self {
            FixedEffect::None => None,
            FixedEffect::Scenario => Some("scenario"),
            FixedEffect::Model => Some("model"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Scenario,
    Model,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub key: String,
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    /// Factor rows in design order; intercept and fixed-effect rows are
    /// estimated but not listed.
    pub rows: Vec<CoefficientRow>,
    pub n_obs: usize,
    pub r_squared: f64,
    pub cluster_count: usize,
    pub fixed_effects: Option<String>,
    pub fixed_effect_levels: usize,
    /// Non-valid records left out of the fit.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub label: String,
    pub mean: f64,
    /// Sample (n−1) standard deviation; 0 when n = 1.
    pub std_dev: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub mean: f64,
    pub n: usize,
}

/// Design-aware estimation entry point.
#[derive(Debug, Clone)]
pub struct Analysis<'a> {
    design: &'a Design,
    model_order: Vec<String>,
    p_reference: PValueReference,
}

impl<'a> Analysis<'a> {
    pub fn new(design: &'a Design) -> Self {
        Analysis {
            design,
            model_order: Vec::new(),
            p_reference: PValueReference::StudentT,
        }
    }

    /// Canonical model order for model fixed effects and grouping. Models
    /// not listed follow in lexicographic order.
    pub fn with_model_order(mut self, order: Vec<String>) -> Self {
        self.model_order = order;
        self
    }

    pub fn with_p_reference(mut self, reference: PValueReference) -> Self {
        self.p_reference = reference;
        self
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    fn models_in_order(&self, present: &BTreeSet<&str>) -> Vec<String> {
        let mut out: Vec<String> = self
            .model_order
            .iter()
            .filter(|m| present.contains(m.as_str()))
            .cloned()
            .collect();
        for m in present {
            if !out.iter().any(|o| o == m) {
                out.push(m.to_string());
            }
        }
        out
    }

    fn scenarios_in_order(&self, present: &BTreeSet<&str>) -> Vec<String> {
        self.design
            .scenarios
            .iter()
            .filter(|s| present.contains(s.key.as_str()))
            .map(|s| s.key.clone())
            .collect()
    }

    fn sorted<'r>(&self, records: &'r [ResponseRecord]) -> Vec<&'r ResponseRecord> {
        let mut v: Vec<&ResponseRecord> = records.iter().collect();
        v.sort_by(|a, b| {
            (&a.model_name, &a.vignette_id, a.run_index).cmp(&(&b.model_name, &b.vignette_id, b.run_index))
        });
        v
    }

    pub fn build_design_matrix(
        &self,
        records: &[ResponseRecord],
        fixed_effect: FixedEffect,
    ) -> Result<DesignMatrix, StatsError> {
        if records.is_empty() {
            return Err(StatsError::EmptyData);
        }
        let rows = self.sorted(records);
        for r in &rows {
            if !r.is_valid() {
                return Err(StatsError::InvalidRecord {
                    vignette: r.vignette_id.to_string(),
                    reason: "record is not Valid".into(),
                });
            }
            if self.design.scenario(&r.scenario).is_none() {
                return Err(StatsError::InvalidGrouping(format!("scenario `{}` is not in the design", r.scenario)));
            }
            r.assignment
                .check_complete(&self.design.factors)
                .map_err(|e| StatsError::InvalidRecord {
                    vignette: r.vignette_id.to_string(),
                    reason: e.to_string(),
                })?;
        }

        let models: BTreeSet<&str> = rows.iter().map(|r| r.model_name.as_str()).collect();
        if models.len() > 1 && fixed_effect != FixedEffect::Model {
            return Err(StatsError::InvalidGrouping(format!(
                "records span {} models; pool them with the model fixed effect",
                models.len()
            )));
        }
        let groups: Vec<String> = match fixed_effect {
            FixedEffect::None => Vec::new(),
            FixedEffect::Scenario => {
                let present = rows.iter().map(|r| r.scenario.as_str()).collect();
                self.scenarios_in_order(&present)
            }
            FixedEffect::Model => self.models_in_order(&models),
        };
        if fixed_effect != FixedEffect::None && groups.len() < 2 {
            return Err(StatsError::InvalidGrouping(format!(
                "{} fixed effect needs at least two groups, found {}",
                fixed_effect.label().unwrap_or_default(),
                groups.len()
            )));
        }

        let n = rows.len();
        let mut columns = Vec::with_capacity(1 + self.design.factors.len() + groups.len());
        columns.push(Column {
            label: "(intercept)".into(),
            role: ColumnRole::Intercept,
            values: vec![1.0; n],
        });
        for f in &self.design.factors {
            columns.push(Column {
                label: f.key.clone(),
                role: ColumnRole::Factor,
                values: rows
                    .iter()
                    .map(|r| f64::from(r.assignment.levels[&f.key].bit()))
                    .collect(),
            });
        }
        for g in groups.iter().skip(1) {
            let values = rows
                .iter()
                .map(|r| {
                    let key = match fixed_effect {
                        FixedEffect::Scenario => &r.scenario,
                        _ => &r.model_name,
                    };
                    if key == g {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            columns.push(Column {
                label: format!("fe:{g}"),
                role: ColumnRole::FixedEffect,
                values,
            });
        }

        let ids: BTreeSet<&str> = rows.iter().map(|r| r.vignette_id.as_str()).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Ok(DesignMatrix {
            columns,
            y: rows.iter().map(|r| f64::from(r.score.expect("valid record"))).collect(),
            cluster_ids: rows.iter().map(|r| index[r.vignette_id.as_str()]).collect(),
            cluster_count: ids.len(),
        })
    }

    /// Fits the factor model on the Valid subset of `records`.
    pub fn conjoint_regression(
        &self,
        records: &[ResponseRecord],
        fixed_effect: FixedEffect,
    ) -> Result<RegressionTable, StatsError> {
        let valid: Vec<ResponseRecord> = records.iter().filter(|r| r.is_valid()).cloned().collect();
        let excluded = records.len() - valid.len();
        let m = self.build_design_matrix(&valid, fixed_effect)?;
        let fit = fit_ols(&m)?;
        let inf = cluster_robust_se(&m, &fit.coefficients, &fit.residuals, self.p_reference)?;
        let rows = m
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Factor)
            .map(|(j, c)| {
                let factor = &self.design.factors[self.design.factor_index(&c.label).expect("factor column")];
                CoefficientRow {
                    key: c.label.clone(),
                    label: factor.row_label(),
                    estimate: fit.coefficients[j],
                    std_error: inf.std_errors[j],
                    p_value: inf.p_values[j],
                    stars: stars(inf.p_values[j]).to_string(),
                }
            })
            .collect();
        Ok(RegressionTable {
            rows,
            n_obs: m.n_rows(),
            r_squared: fit.r_squared,
            cluster_count: inf.clusters,
            fixed_effects: fixed_effect.label().map(str::to_string),
            fixed_effect_levels: m.columns.iter().filter(|c| c.role == ColumnRole::FixedEffect).count(),
            excluded,
        })
    }

    /// Per-group rows in canonical order followed by a pooled row when more
    /// than one group is present.
    pub fn summary_stats(&self, records: &[ResponseRecord], group_by: GroupBy) -> Result<Vec<SummaryRow>, StatsError> {
        let rows = self.sorted(records);
        let valid: Vec<&ResponseRecord> = rows.into_iter().filter(|r| r.is_valid()).collect();
        if valid.is_empty() {
            return Err(StatsError::EmptyData);
        }
        let score = |r: &&ResponseRecord| f64::from(r.score.expect("valid record"));
        let groups: Vec<(String, String)> = match group_by {
            GroupBy::Pooled => Vec::new(),
            GroupBy::Scenario => {
                let present = valid.iter().map(|r| r.scenario.as_str()).collect();
                self.scenarios_in_order(&present)
                    .into_iter()
                    .map(|k| {
                        let label = self.design.scenario(&k).map(|s| s.label().to_string()).unwrap_or(k.clone());
                        (k, label)
                    })
                    .collect()
            }
            GroupBy::Model => {
                let present = valid.iter().map(|r| r.model_name.as_str()).collect();
                self.models_in_order(&present).into_iter().map(|m| (m.clone(), m)).collect()
            }
        };
        let mut out = Vec::with_capacity(groups.len() + 1);
        for (key, label) in &groups {
            let scores: Vec<f64> = valid
                .iter()
                .filter(|r| match group_by {
                    GroupBy::Scenario => &r.scenario == key,
                    _ => &r.model_name == key,
                })
                .map(score)
                .collect();
            out.push(summarize(key, label, scores));
        }
        if groups.len() != 1 {
            out.push(summarize("pooled", "Pooled sample", valid.iter().map(score).collect()));
        }
        Ok(out)
    }

    /// Mean score over Valid records matching every entry of `condition`.
    pub fn cell_means(&self, records: &[ResponseRecord], condition: &FactorAssignment) -> Result<CellMean, StatsError> {
        for k in condition.levels.keys() {
            if self.design.factor_index(k).is_none() {
                return Err(StatsError::UnknownFactor(k.clone()));
            }
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in self.sorted(records) {
            if !r.is_valid() {
                continue;
            }
            let hit = condition
                .levels
                .iter()
                .all(|(k, l)| r.assignment.levels.get(k) == Some(l));
            if hit {
                sum += f64::from(r.score.expect("valid record"));
                n += 1;
            }
        }
        if n == 0 {
            return Err(StatsError::EmptyCell);
        }
        Ok(CellMean { mean: sum / n as f64, n })
    }

    /// High-cell mean minus Low-cell mean for one factor.
    pub fn difference_in_means(&self, records: &[ResponseRecord], factor: &str) -> Result<f64, StatsError> {
        let hi = self.cell_means(records, &FactorAssignment::default().with(factor, Level::High))?;
        let lo = self.cell_means(records, &FactorAssignment::default().with(factor, Level::Low))?;
        Ok(hi.mean - lo.mean)
    }
}

fn summarize(group: &str, label: &str, mut scores: Vec<f64>) -> SummaryRow {
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (scores.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    scores.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        scores[n / 2]
    } else {
        (scores[n / 2 - 1] + scores[n / 2]) / 2.0
    };
    SummaryRow {
        group: group.to_string(),
        label: label.to_string(),
        mean,
        std_dev,
        median,
        min: scores[0],
        max: scores[n - 1],
        n,
    }
}
