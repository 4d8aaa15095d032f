//! Audit artifacts held by the server and the triage roster computed from them.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use serde::Serialize;
use uu_audit::characterize::{CharacterizationReport, DEFAULT_ALPHA};
use uu_audit::evalcv::Split;
use uu_audit::features::{indicator_index, parse_feature_csv};
use uu_audit::grouping::{assign_group, parse_assignments, Group, PrevalenceSummary, TrustLevel};
use uu_audit::models::{confidence, predicted_label};
use uu_audit::pipeline::{ASSIGNMENTS_FILE, CHARACTERIZATION_FILE, FEATURES_FILE, PREVALENCE_FILE};

/// Explanation entries returned per student.
pub const EXPLANATION_TOP_K: usize = 3;
/// Students above this quantile of the explanation score are flagged.
pub const RISK_QUANTILE: f64 = 0.9;
pub const RISK_RULE: &str = "heuristic: flagged when c >= delta and the explanation score \
    (sum of significant positive coefficients times the student's indicator values) \
    exceeds the roster's 90th percentile; not part of the audit method itself";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{0} not found; run the audit first")]
    Missing(String),
    #[error(transparent)]
    Audit(#[from] uu_audit::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub user_id: String,
    pub p: f64,
    pub y: u8,
    /// Normalized indicator values, empty when no feature table was loaded.
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationEntry {
    pub id: String,
    pub gamma: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Artifacts {
    /// Test predictions, one per student, sorted by user id.
    pub students: Vec<Student>,
    pub characterization: Option<CharacterizationReport>,
}

fn open(dir: &Path, name: &str) -> Result<Option<File>, LoadError> {
    let path = dir.join(name);
    match File::open(&path) {
        Ok(f) => Ok(Some(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(LoadError::Io {
            path: path.display().to_string(),
            source,
        }),
    }
}

impl Artifacts {
    /// Loads test assignments (required) plus features and characterization when present.
    pub fn load(dir: &Path) -> Result<Artifacts, LoadError> {
        let prevalence = open(dir, PREVALENCE_FILE)?.ok_or_else(|| LoadError::Missing(PREVALENCE_FILE.into()))?;
        let prevalence: PrevalenceSummary = serde_json::from_reader(prevalence).map_err(uu_audit::Error::from)?;
        let delta = TrustLevel::new(prevalence.delta)?;
        let assignments = open(dir, ASSIGNMENTS_FILE)?.ok_or_else(|| LoadError::Missing(ASSIGNMENTS_FILE.into()))?;
        let assignments = parse_assignments(assignments, delta)?;
        let features: HashMap<String, Vec<f64>> = match open(dir, FEATURES_FILE)? {
            Some(f) => parse_feature_csv(f)?.into_iter().map(|r| (r.user_id, r.v)).collect(),
            None => HashMap::new(),
        };
        let characterization = match open(dir, CHARACTERIZATION_FILE)? {
            Some(mut f) => {
                let mut raw = String::new();
                std::io::Read::read_to_string(&mut f, &mut raw).map_err(|source| LoadError::Io {
                    path: dir.join(CHARACTERIZATION_FILE).display().to_string(),
                    source,
                })?;
                Some(CharacterizationReport::from_json(&raw)?)
            }
            None => None,
        };
        let mut students: Vec<Student> = assignments
            .into_iter()
            .filter(|(s, _)| *s == Split::Test)
            .map(|(_, a)| Student {
                v: features.get(&a.user_id).cloned().unwrap_or_default(),
                user_id: a.user_id,
                p: a.p,
                y: a.y,
            })
            .collect();
        students.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        Ok(Artifacts {
            students,
            characterization,
        })
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.students
            .binary_search_by(|s| s.user_id.as_str().cmp(user_id))
            .is_ok()
    }

    /// Indicator coefficients that are significant at the default level and push towards UU.
    fn risk_weights(&self) -> Vec<(usize, &str, f64)> {
        let Some(ch) = &self.characterization else {
            return Vec::new();
        };
        ch.coefficients
            .iter()
            .filter(|c| c.gamma > 0.0 && c.p.is_some_and(|p| p < DEFAULT_ALPHA))
            .filter_map(|c| indicator_index(&c.id).map(|j| (j, c.id.as_str(), c.gamma)))
            .collect()
    }

    pub fn roster(&self, delta: TrustLevel) -> Roster {
        let weights = self.risk_weights();
        let explain = |s: &Student| -> (f64, Vec<ExplanationEntry>) {
            let mut entries: Vec<ExplanationEntry> = weights
                .iter()
                .filter_map(|&(j, id, gamma)| {
                    s.v.get(j).map(|&value| ExplanationEntry {
                        id: id.to_string(),
                        gamma,
                        value,
                    })
                })
                .collect();
            let score = entries.iter().map(|e| e.gamma * e.value).sum();
            entries.sort_by(|a, b| (b.gamma * b.value).total_cmp(&(a.gamma * a.value)).then_with(|| a.id.cmp(&b.id)));
            entries.truncate(EXPLANATION_TOP_K);
            (score, entries)
        };
        let explained: Vec<(f64, Vec<ExplanationEntry>)> = self.students.iter().map(explain).collect();
        let threshold = quantile(explained.iter().map(|(s, _)| *s).collect(), RISK_QUANTILE);

        let mut counts: BTreeMap<Group, usize> = Group::ALL.iter().map(|g| (*g, 0)).collect();
        let mut rows: Vec<TriageRow> = self
            .students
            .iter()
            .zip(explained)
            .map(|(s, (score, explanation))| {
                let c = confidence(s.p);
                let y_hat = predicted_label(s.p);
                let group = assign_group(s.y, y_hat, c, delta);
                *counts.entry(group).or_default() += 1;
                TriageRow {
                    user_id: s.user_id.clone(),
                    p: s.p,
                    c,
                    y_hat,
                    y: s.y,
                    group,
                    group_code: group.code(),
                    risk_score: score,
                    uu_risk: c >= delta.value() && score > threshold,
                    explanation,
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            b.uu_risk
                .cmp(&a.uu_risk)
                .then_with(|| b.risk_score.total_cmp(&a.risk_score))
                .then_with(|| a.user_id.cmp(&b.user_id))
        });
        Roster {
            delta: delta.value(),
            counts: counts.into_iter().map(|(g, n)| (g.short().to_string(), n)).collect(),
            risk_rule: RISK_RULE,
            rows,
        }
    }
}

/// Nearest-rank quantile; 0 for an empty sample.
fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

#[derive(Debug, Clone, Serialize)]
pub struct TriageRow {
    pub user_id: String,
    pub p: f64,
    pub c: f64,
    pub y_hat: u8,
    pub y: u8,
    pub group: Group,
    pub group_code: u8,
    pub risk_score: f64,
    pub uu_risk: bool,
    pub explanation: Vec<ExplanationEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Roster {
    pub delta: f64,
    /// Students per group short name (KK, KU, UU).
    pub counts: BTreeMap<String, usize>,
    pub risk_rule: &'static str,
    pub rows: Vec<TriageRow>,
}
