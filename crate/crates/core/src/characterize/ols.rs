//! Ordinary least squares through a Householder QR factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::distributions::{f_upper_tail, student_t_two_sided};
use crate::error::{Error, Result};

/// A column whose QR diagonal falls below this fraction of its own norm is
/// treated as linearly dependent on the columns before it.
const RANK_TOLERANCE: f64 = 1e-9;

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub id: String,
    pub gamma: f64,
    /// Undefined (None) without residual degrees of freedom or with a zero standard error.
    pub se: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: Coefficient,
    pub coefficients: Vec<Coefficient>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r2: f64,
    pub f_stat: Option<f64>,
    pub f_p: Option<f64>,
    pub n: usize,
    pub df_resid: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, id: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.id == id)
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Fits `y = γ0 + Σ γj·xj + ε`; an intercept column is prepended to `rows`.
pub fn fit_ols(rows: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<RegressionFit> {
    let n = rows.len();
    let k = names.len() + 1;
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != names.len()) {
        return Err(Error::Dimension {
            expected: names.len(),
            found: bad.len(),
        });
    }
    if n < k {
        return Err(Error::Config(format!(
            "{n} observations cannot identify {k} parameters"
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let target = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..k)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= RANK_TOLERANCE * norm
        })
        .map(|j| {
            if j == 0 {
                INTERCEPT.to_string()
            } else {
                names[j - 1].clone()
            }
        })
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }

    let qty = qr.q().transpose() * &target;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(vec!["(singular R)".into()]))?;
    let fitted = &x * &beta;
    let residuals = &target - &fitted;

    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr = residuals.norm_squared();
    let r2 = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let df_resid = n - k;
    let (se, f_stat) = if df_resid > 0 {
        let sigma2 = ssr / df_resid as f64;
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::RankDeficient(vec!["(singular R)".into()]))?;
        // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ; only its diagonal is needed.
        let se: Vec<Option<f64>> = (0..k)
            .map(|j| finite((sigma2 * r_inv.row(j).norm_squared()).sqrt()))
            .collect();
        let f_stat = (k > 1 && ssr > 0.0)
            .then(|| ((sst - ssr).max(0.0) / (k - 1) as f64) / sigma2);
        (se, f_stat)
    } else {
        (vec![None; k], None)
    };

    let coefficient = |j: usize, id: String| {
        let gamma = beta[j];
        let se_j = se[j].filter(|s| *s > 0.0);
        let t = se_j.and_then(|s| finite(gamma / s));
        Coefficient {
            id,
            gamma,
            se: se[j],
            t,
            p: t.map(|t| student_t_two_sided(t, df_resid as f64)),
        }
    };
    Ok(RegressionFit {
        intercept: coefficient(0, INTERCEPT.to_string()),
        coefficients: names
            .iter()
            .enumerate()
            .map(|(j, name)| coefficient(j + 1, name.clone()))
            .collect(),
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        r2,
        f_p: f_stat.map(|f| f_upper_tail(f, (k - 1) as f64, df_resid as f64)),
        f_stat,
        n,
        df_resid,
    })
}
