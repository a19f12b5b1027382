//! OLS with vignette-clustered (CR1) standard errors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::linalg::{dot, Qr};
use crate::error::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    Intercept,
    Factor,
    FixedEffect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub label: String,
    pub role: ColumnRole,
    pub values: Vec<f64>,
}

/// Regressors, response and cluster membership for one regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: Vec<Column>,
    pub y: Vec<f64>,
    /// Dense cluster index per row, `0..cluster_count`.
    pub cluster_ids: Vec<usize>,
    pub cluster_count: usize,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.label.as_str()).collect()
    }

    fn raw_columns(&self) -> Vec<Vec<f64>> {
        self.columns.iter().map(|c| c.values.clone()).collect()
    }

    fn factor_qr(&self, with_y: bool) -> Result<Qr, StatsError> {
        if self.n_rows() == 0 {
            return Err(StatsError::EmptyData);
        }
        let qr = Qr::factor(&self.raw_columns(), with_y.then_some(self.y.as_slice()));
        if !qr.dependent.is_empty() {
            return Err(StatsError::RankDeficient {
                columns: qr.dependent.iter().map(|&j| self.columns[j].label.clone()).collect(),
            });
        }
        Ok(qr)
    }

    /// Xᵀv.
    pub fn xt_times(&self, v: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|c| dot(&c.values, v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

/// Least squares via Householder QR. R² is centred on mean(y); when y is
/// constant it is 1 for an exact fit and 0 otherwise.
pub fn fit_ols(m: &DesignMatrix) -> Result<OlsFit, StatsError> {
    let qr = m.factor_qr(true)?;
    let beta = qr.solve().expect("full-rank system with rhs");
    let n = m.n_rows();
    let mut residuals = m.y.clone();
    for (c, b) in m.columns.iter().zip(&beta) {
        for (r, x) in residuals.iter_mut().zip(&c.values) {
            *r -= x * b;
        }
    }
    let mean = m.y.iter().sum::<f64>() / n as f64;
    let sst: f64 = m.y.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ssr = dot(&residuals, &residuals);
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else if ssr <= f64::EPSILON * n as f64 {
        1.0
    } else {
        0.0
    };
    Ok(OlsFit {
        coefficients: beta,
        residuals,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueReference {
    /// Student t with G − 1 degrees of freedom.
    #[default]
    StudentT,
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInference {
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub clusters: usize,
    pub covariance: Vec<Vec<f64>>,
}

/// CR1 small-sample factor G/(G−1) · (N−1)/(N−K).
pub fn cr1_factor(n: usize, k: usize, g: usize) -> f64 {
    (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n as f64 - k as f64))
}

/// Sandwich (XᵀX)⁻¹ (Σ_g X_gᵀe_g e_gᵀX_g) (XᵀX)⁻¹ scaled by the CR1
/// factor, with two-sided p-values for β/SE.
pub fn cluster_robust_se(
    m: &DesignMatrix,
    coefficients: &[f64],
    residuals: &[f64],
    reference: PValueReference,
) -> Result<ClusterInference, StatsError> {
    let n = m.n_rows();
    let k = m.n_cols();
    let g = m.cluster_count;
    if g < 2 {
        return Err(StatsError::TooFewClusters(g));
    }
    if k >= n {
        return Err(StatsError::RankDeficient {
            columns: vec![format!("{k} columns for {n} rows")],
        });
    }
    let bread = m.factor_qr(false)?.xtx_inverse();

    // per-cluster scores s_g = X_gᵀ e_g
    let mut scores = vec![vec![0.0; k]; g];
    for i in 0..n {
        let s = &mut scores[m.cluster_ids[i]];
        for (j, c) in m.columns.iter().enumerate() {
            s[j] += c.values[i] * residuals[i];
        }
    }
    let mut meat = vec![vec![0.0; k]; k];
    for s in &scores {
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += s[a] * s[b];
            }
        }
    }
    let scale = cr1_factor(n, k, g);
    let half = matmul(&bread, &meat);
    let mut cov = matmul(&half, &bread);
    for row in &mut cov {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    let std_errors: Vec<f64> = (0..k).map(|j| cov[j][j].max(0.0).sqrt()).collect();
    let p_values = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| two_sided_p(*b, *se, g - 1, reference))
        .collect();
    Ok(ClusterInference {
        std_errors,
        p_values,
        clusters: g,
        covariance: cov,
    })
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..k)
                .map(|j| {
                    let mut s = 0.0;
                    for (l, x) in row.iter().enumerate() {
                        s += x * b[l][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn two_sided_p(estimate: f64, se: f64, df: usize, reference: PValueReference) -> f64 {
    if se == 0.0 || !se.is_finite() {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let t = (estimate / se).abs();
    let tail = match reference {
        PValueReference::StudentT => StudentsT::new(0.0, 1.0, df as f64)
            .expect("df >= 1")
            .sf(t),
        PValueReference::StandardNormal => Normal::new(0.0, 1.0).expect("unit normal").sf(t),
    };
    (2.0 * tail).min(1.0)
}

/// `***` p<0.01, `**` p<0.05, `*` p<0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}
