//! Regression of group membership on the averaged indicators and demographics.

mod distributions;
mod ols;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use distributions::{f_upper_tail, ln_gamma, regularized_incomplete_beta, student_t_two_sided};
pub use ols::{fit_ols, Coefficient, RegressionFit, INTERCEPT};

use crate::error::{Error, Result};
use crate::features::{indicator_ids, FeatureRow, N_INDICATORS};
use crate::grouping::{Group, GroupAssignment};

pub const DEFAULT_CLIP: (f64, f64) = (-10.0, 10.0);
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const IMPORTANCE_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// 1 for unknown unknowns, 0 otherwise.
    #[default]
    Binary,
    /// The group code 0, 1 or 2.
    Ordinal,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::Binary => "binary",
            TargetMode::Ordinal => "ordinal",
        }
    }

    pub fn target(self, group: Group) -> f64 {
        match self {
            TargetMode::Binary => f64::from(u8::from(group == Group::UnknownUnknown)),
            TargetMode::Ordinal => f64::from(group.code()),
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(TargetMode::Binary),
            "ordinal" => Ok(TargetMode::Ordinal),
            other => Err(Error::Config(format!("unknown target mode {other:?}"))),
        }
    }
}

/// The design matrix handed to the regression, before constant columns are removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub user_ids: Vec<String>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub groups: Vec<Group>,
}

fn one_hot_levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let levels: BTreeSet<&str> = values.collect();
    // the alphabetically first level is the reference category
    levels.into_iter().skip(1).map(str::to_string).collect()
}

/// Joins feature rows and assignments on user id; users present on one side only are skipped.
///
/// Demographic columns are named `gender=<level>` and `provenience=<level>`.
/// Students without demographics fall into the level `unknown`.
pub fn build_design(features: &[FeatureRow], assignments: &[GroupAssignment]) -> Result<Design> {
    let by_user: HashMap<&str, &GroupAssignment> =
        assignments.iter().map(|a| (a.user_id.as_str(), a)).collect();
    let joined: Vec<(&FeatureRow, &GroupAssignment)> = features
        .iter()
        .filter_map(|f| by_user.get(f.user_id.as_str()).map(|a| (f, *a)))
        .collect();
    if joined.is_empty() {
        return Err(Error::Missing(
            "no student appears in both the feature table and the assignments".into(),
        ));
    }
    if let Some((f, _)) = joined.iter().find(|(f, _)| f.v.len() != N_INDICATORS) {
        return Err(Error::Dimension {
            expected: N_INDICATORS,
            found: f.v.len(),
        });
    }

    let with_demo = joined.iter().any(|(f, _)| f.demographics.is_some());
    let gender = |f: &FeatureRow| f.demographics.as_ref().map_or("unknown", |d| d.gender.as_str()).to_string();
    let provenience =
        |f: &FeatureRow| f.demographics.as_ref().map_or("unknown", |d| d.provenience.as_str()).to_string();
    let (gender_levels, prov_levels) = if with_demo {
        let g: Vec<String> = joined.iter().map(|(f, _)| gender(f)).collect();
        let p: Vec<String> = joined.iter().map(|(f, _)| provenience(f)).collect();
        (
            one_hot_levels(g.iter().map(String::as_str)),
            one_hot_levels(p.iter().map(String::as_str)),
        )
    } else {
        (Vec::new(), Vec::new())
    };

    let mut names: Vec<String> = indicator_ids().map(str::to_string).collect();
    names.extend(gender_levels.iter().map(|l| format!("gender={l}")));
    names.extend(prov_levels.iter().map(|l| format!("provenience={l}")));

    let rows = joined
        .iter()
        .map(|(f, _)| {
            let mut row = f.v.clone();
            let g = gender(f);
            let p = provenience(f);
            row.extend(gender_levels.iter().map(|l| f64::from(u8::from(*l == g))));
            row.extend(prov_levels.iter().map(|l| f64::from(u8::from(*l == p))));
            row
        })
        .collect();
    Ok(Design {
        user_ids: joined.iter().map(|(f, _)| f.user_id.clone()).collect(),
        names,
        rows,
        groups: joined.iter().map(|(_, a)| a.group).collect(),
    })
}

impl Design {
    pub fn targets(&self, mode: TargetMode) -> Vec<f64> {
        self.groups.iter().map(|g| mode.target(*g)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub target_mode: TargetMode,
    /// Columns removed before fitting because they take a single value.
    pub dropped: Vec<String>,
    pub fit: RegressionFit,
}

pub fn characterize_uu(
    features: &[FeatureRow],
    assignments: &[GroupAssignment],
    mode: TargetMode,
) -> Result<Characterization> {
    let design = build_design(features, assignments)?;
    if !design.groups.contains(&Group::UnknownUnknown) {
        return Err(Error::DegenerateTarget(
            "no unknown unknowns among the joined students".into(),
        ));
    }
    let target = design.targets(mode);
    if target.iter().all(|t| *t == target[0]) {
        return Err(Error::DegenerateTarget(format!(
            "every joined student has target {}",
            target[0]
        )));
    }

    let keep: Vec<usize> = (0..design.names.len())
        .filter(|&j| design.rows.iter().any(|r| r[j] != design.rows[0][j]))
        .collect();
    let dropped = (0..design.names.len())
        .filter(|j| !keep.contains(j))
        .map(|j| design.names[j].clone())
        .collect();
    let names: Vec<String> = keep.iter().map(|&j| design.names[j].clone()).collect();
    let rows: Vec<Vec<f64>> = design
        .rows
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).collect())
        .collect();
    let fit = fit_ols(&rows, &target, &names)?;
    Ok(Characterization {
        target_mode: mode,
        dropped,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Significance {
    pub alpha: f64,
    pub bonferroni: bool,
}

impl Default for Significance {
    fn default() -> Self {
        Significance {
            alpha: DEFAULT_ALPHA,
            bonferroni: false,
        }
    }
}

impl Significance {
    /// The p-value compared against `alpha`, Bonferroni-adjusted when enabled.
    pub fn adjusted(&self, p: f64, m: usize) -> f64 {
        if self.bonferroni {
            (p * m as f64).min(1.0)
        } else {
            p
        }
    }

    pub fn stars(&self, p: Option<f64>, m: usize) -> &'static str {
        match p.map(|p| self.adjusted(p, m)) {
            Some(p) if p < 0.001 && p < self.alpha => "***",
            Some(p) if p < 0.01 && p < self.alpha => "**",
            Some(p) if p < self.alpha => "*",
            _ => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub id: String,
    pub gamma: f64,
    pub clipped: f64,
    pub p: Option<f64>,
    pub stars: String,
}

/// One row per non-intercept coefficient, sorted by |raw γ| descending.
pub fn report_coefficients(fit: &RegressionFit, clip: (f64, f64), sig: Significance) -> Vec<CoefficientRow> {
    let m = fit.coefficients.len();
    let mut rows: Vec<CoefficientRow> = fit
        .coefficients
        .iter()
        .map(|c| CoefficientRow {
            id: c.id.clone(),
            gamma: c.gamma,
            clipped: c.gamma.clamp(clip.0, clip.1),
            p: c.p,
            stars: sig.stars(c.p, m).to_string(),
        })
        .collect();
    rows.sort_by(|a, b| b.gamma.abs().total_cmp(&a.gamma.abs()));
    rows
}

/// Variables whose coefficient averaged over `fits` exceeds `threshold` in absolute value.
///
/// A variable absent from some fits (dropped as constant) is averaged over the fits that contain it.
pub fn important_indicators(fits: &[RegressionFit], threshold: f64) -> Vec<(String, f64)> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for fit in fits {
        for c in &fit.coefficients {
            let e = sums.entry(c.id.as_str()).or_default();
            e.0 += c.gamma;
            e.1 += 1;
        }
    }
    let mut out: Vec<(String, f64)> = sums
        .into_iter()
        .map(|(id, (s, n))| (id.to_string(), s / n as f64))
        .filter(|(_, mean)| mean.abs() > threshold)
        .collect();
    out.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCoefficient {
    pub id: String,
    pub gamma: f64,
    pub clipped: f64,
    pub se: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

/// Serialized form of a characterization, shared by the CLI and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub target_mode: TargetMode,
    pub n: usize,
    pub r2: f64,
    pub f_stat: Option<f64>,
    pub f_p: Option<f64>,
    pub intercept: ReportCoefficient,
    /// Sorted by |gamma| descending.
    pub coefficients: Vec<ReportCoefficient>,
    pub dropped: Vec<String>,
}

impl CharacterizationReport {
    pub fn new(ch: &Characterization, clip: (f64, f64)) -> Self {
        let row = |c: &Coefficient| ReportCoefficient {
            id: c.id.clone(),
            gamma: c.gamma,
            clipped: c.gamma.clamp(clip.0, clip.1),
            se: c.se,
            t: c.t,
            p: c.p,
        };
        let mut coefficients: Vec<ReportCoefficient> = ch.fit.coefficients.iter().map(row).collect();
        coefficients.sort_by(|a, b| b.gamma.abs().total_cmp(&a.gamma.abs()));
        CharacterizationReport {
            target_mode: ch.target_mode,
            n: ch.fit.n,
            r2: ch.fit.r2,
            f_stat: ch.fit.f_stat,
            f_p: ch.fit.f_p,
            intercept: row(&ch.fit.intercept),
            coefficients,
            dropped: ch.dropped.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["id", "gamma", "clipped", "se", "t", "p"])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in std::iter::once(&self.intercept).chain(&self.coefficients) {
            w.write_record([
                c.id.clone(),
                c.gamma.to_string(),
                c.clipped.to_string(),
                opt(c.se),
                opt(c.t),
                opt(c.p),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Demographics;
    use crate::grouping::{assign_group, TrustLevel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(seed: u64, n: usize) -> (Vec<FeatureRow>, Vec<GroupAssignment>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f30 = crate::features::indicator_index("F30").unwrap();
        let mut rows = Vec::new();
        let mut assignments = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..N_INDICATORS).map(|_| rng.random()).collect();
            let uu = v[f30] + rng.random_range(-0.2..0.2) > 0.7;
            let group = if uu {
                Group::UnknownUnknown
            } else if rng.random_bool(0.5) {
                Group::KnownUnknown
            } else {
                Group::KnownKnown
            };
            let user_id = format!("u{i:03}");
            rows.push(FeatureRow {
                user_id: user_id.clone(),
                v,
                demographics: Some(Demographics {
                    gender: ["f", "m"][rng.random_range(0..2)].into(),
                    provenience: ["local", "abroad", "regional"][rng.random_range(0..3)].into(),
                }),
            });
            assignments.push(GroupAssignment {
                user_id,
                group,
                delta: 0.25,
                y: 0,
                p: 0.1,
                c: 0.4,
                direction: None,
            });
        }
        (rows, assignments)
    }

    #[test]
    fn clipping_keeps_raw_values() {
        let coef = |id: &str, gamma| Coefficient {
            id: id.into(),
            gamma,
            se: None,
            t: None,
            p: None,
        };
        let fit = RegressionFit {
            intercept: coef(INTERCEPT, 0.0),
            coefficients: vec![coef("F01", -3.0), coef("F02", 14.2)],
            fitted: vec![],
            residuals: vec![],
            r2: 0.0,
            f_stat: None,
            f_p: None,
            n: 0,
            df_resid: 0,
        };
        let rows = report_coefficients(&fit, DEFAULT_CLIP, Significance::default());
        assert_eq!(rows[0].id, "F02");
        assert_eq!((rows[0].gamma, rows[0].clipped), (14.2, 10.0));
        assert_eq!((rows[1].gamma, rows[1].clipped), (-3.0, -3.0));
        assert_eq!(important_indicators(&[fit], 1.0).len(), 2);
    }

    #[test]
    fn stars_follow_thresholds_and_bonferroni() {
        let plain = Significance::default();
        assert_eq!(plain.stars(Some(0.0005), 10), "***");
        assert_eq!(plain.stars(Some(0.02), 10), "*");
        assert_eq!(plain.stars(Some(0.2), 10), "");
        assert_eq!(plain.stars(None, 10), "");
        let strict = Significance {
            bonferroni: true,
            ..plain
        };
        assert_eq!(strict.stars(Some(0.02), 10), "");
        assert_eq!(strict.stars(Some(0.0002), 10), "**");
    }

    #[test]
    fn planted_indicator_dominates() {
        let (rows, assignments) = fixture(3, 400);
        let ch = characterize_uu(&rows, &assignments, TargetMode::Binary).unwrap();
        assert_eq!(ch.fit.coefficients.len(), N_INDICATORS + 1 + 2);
        let top = ch
            .fit
            .coefficients
            .iter()
            .max_by(|a, b| a.t.unwrap().abs().total_cmp(&b.t.unwrap().abs()))
            .unwrap();
        assert_eq!(top.id, "F30");
        assert!(top.p.unwrap() < 0.01);
        assert!(ch.fit.coefficient("gender=m").is_some());
        assert!(ch.fit.coefficient("provenience=local").is_some());
        assert!(ch.fit.coefficient("provenience=abroad").is_none());
    }

    #[test]
    fn encodings_share_the_design() {
        let (rows, assignments) = fixture(4, 120);
        let design = build_design(&rows, &assignments).unwrap();
        let binary = design.targets(TargetMode::Binary);
        let ordinal = design.targets(TargetMode::Ordinal);
        assert_ne!(binary, ordinal);
        for ((b, o), g) in binary.iter().zip(&ordinal).zip(&design.groups) {
            assert_eq!(*b == 1.0, *g == Group::UnknownUnknown);
            assert_eq!(*o, f64::from(g.code()));
        }
        let a = characterize_uu(&rows, &assignments, TargetMode::Binary).unwrap();
        let b = characterize_uu(&rows, &assignments, TargetMode::Ordinal).unwrap();
        assert_eq!(a.fit.coefficients.len(), b.fit.coefficients.len());
    }

    #[test]
    fn no_unknown_unknowns_is_degenerate() {
        let (rows, mut assignments) = fixture(5, 60);
        for a in &mut assignments {
            a.group = assign_group(0, 0, 0.4, TrustLevel::default());
        }
        assert!(matches!(
            characterize_uu(&rows, &assignments, TargetMode::Binary),
            Err(Error::DegenerateTarget(_))
        ));
    }

    #[test]
    fn constant_columns_are_dropped_and_reported() {
        let (mut rows, assignments) = fixture(6, 150);
        for r in &mut rows {
            r.v[0] = 0.0;
            r.demographics = None;
        }
        let ch = characterize_uu(&rows, &assignments, TargetMode::Binary).unwrap();
        assert_eq!(ch.dropped, vec!["F01".to_string()]);
        assert_eq!(ch.fit.coefficients.len(), N_INDICATORS - 1);
    }

    #[test]
    fn report_round_trips() {
        let (rows, assignments) = fixture(7, 150);
        let ch = characterize_uu(&rows, &assignments, TargetMode::Binary).unwrap();
        let report = CharacterizationReport::new(&ch, DEFAULT_CLIP);
        let back = CharacterizationReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(report, back);
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for key in ["target_mode", "r2", "f_stat", "f_p", "coefficients"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2 + report.coefficients.len());
    }
}
