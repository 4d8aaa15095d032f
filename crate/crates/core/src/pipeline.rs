//! End-to-end audit: features, nested cross-validation, grouping and characterization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::characterize::{characterize_uu, Characterization, CharacterizationReport, TargetMode, DEFAULT_CLIP};
use crate::error::{Error, Result};
use crate::eventlog::{ClickEvent, CourseSchedule, Outcome};
use crate::evalcv::{nested_cv, write_split_scores, CvOutcome, EvalReport, FoldPlan, DEFAULT_FOLDS};
use crate::features::{extract_features, write_feature_csv, Demographics, FeatureRow, FeatureSet};
use crate::grouping::{assign, prevalence, write_assignments, GroupAssignment, PrevalenceSummary, TrustLevel};
use crate::models::{default_forest_grid, BaselineConfig, ForestConfig, ModelSpec, Prediction};
use crate::evalcv::Split;

pub const FEATURES_FILE: &str = "features.csv";
pub const SPLIT_SCORES_FILE: &str = "split_scores.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const PREVALENCE_FILE: &str = "prevalence.json";
pub const CHARACTERIZATION_FILE: &str = "characterization.json";
pub const CHARACTERIZATION_CSV_FILE: &str = "characterization.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Forest,
    Overconfident,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSize {
    /// 18 forest configurations.
    #[default]
    Full,
    /// A single forest configuration, for repeated experiments.
    Compact,
}

/// The single forest configuration used by [`GridSize::Compact`].
pub fn compact_forest_grid(seed: u64) -> Vec<ModelSpec> {
    vec![ModelSpec::Forest(ForestConfig {
        seed,
        ..ForestConfig::default()
    })]
}

pub fn model_grid(choice: ModelChoice, size: GridSize, seed: u64) -> Vec<ModelSpec> {
    match (choice, size) {
        (ModelChoice::Forest, GridSize::Full) => default_forest_grid(seed),
        (ModelChoice::Forest, GridSize::Compact) => compact_forest_grid(seed),
        (ModelChoice::Overconfident, _) => vec![ModelSpec::Overconfident(BaselineConfig::default())],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub model: ModelChoice,
    pub grid: GridSize,
    pub k: usize,
    pub seed: u64,
    pub delta: TrustLevel,
    pub session_timeout_s: i64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            model: ModelChoice::Forest,
            grid: GridSize::Full,
            k: DEFAULT_FOLDS,
            seed: 0,
            delta: TrustLevel::default(),
            session_timeout_s: crate::eventlog::DEFAULT_SESSION_TIMEOUT_S,
        }
    }
}

/// Students with an outcome, in outcome order, with their normalized indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub rows: Vec<FeatureRow>,
}

impl Dataset {
    pub fn from_rows(rows: Vec<FeatureRow>, outcomes: &[Outcome]) -> Result<Dataset> {
        let by_user: HashMap<&str, &FeatureRow> = rows.iter().map(|r| (r.user_id.as_str(), r)).collect();
        let mut joined = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let row = by_user
                .get(o.user_id.as_str())
                .ok_or_else(|| Error::Missing(format!("no features for student `{}`", o.user_id)))?;
            joined.push(((*row).clone(), o.y));
        }
        Ok(Dataset {
            users: joined.iter().map(|(r, _)| r.user_id.clone()).collect(),
            x: joined.iter().map(|(r, _)| r.v.clone()).collect(),
            y: joined.iter().map(|(_, y)| *y).collect(),
            rows: joined.into_iter().map(|(r, _)| r).collect(),
        })
    }
}

/// Groups every split prediction at `delta`.
pub fn assign_splits(
    predictions: &[crate::evalcv::SplitPrediction],
    labels: &BTreeMap<String, u8>,
    delta: TrustLevel,
) -> Result<Vec<(Split, GroupAssignment)>> {
    predictions
        .iter()
        .map(|sp| {
            let y = labels
                .get(&sp.prediction.user_id)
                .ok_or_else(|| Error::Missing(format!("no outcome for student `{}`", sp.prediction.user_id)))?;
            Ok((sp.split, assign(&sp.prediction, *y, delta)))
        })
        .collect()
}

/// Test-split assignments, one per student.
pub fn test_assignments(assignments: &[(Split, GroupAssignment)]) -> Vec<GroupAssignment> {
    assignments
        .iter()
        .filter(|(s, _)| *s == Split::Test)
        .map(|(_, a)| a.clone())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Audit {
    pub features: FeatureSet,
    pub dataset: Dataset,
    pub cv: CvOutcome,
    pub assignments: Vec<(Split, GroupAssignment)>,
    pub prevalence: PrevalenceSummary,
}

impl Audit {
    pub fn report(&self) -> &EvalReport {
        &self.cv.report
    }

    pub fn out_of_fold(&self) -> &[Prediction] {
        &self.cv.out_of_fold
    }

    pub fn characterize(&self, mode: TargetMode) -> Result<Characterization> {
        characterize_uu(&self.dataset.rows, &test_assignments(&self.assignments), mode)
    }

    /// Writes every artifact of the run; the characterization is written only when it succeeds.
    pub fn write_artifacts(&self, dir: &Path, mode: TargetMode) -> Result<Option<Characterization>> {
        std::fs::create_dir_all(dir)?;
        write_feature_csv(std::fs::File::create(dir.join(FEATURES_FILE))?, &self.dataset.rows)?;
        write_split_scores(std::fs::File::create(dir.join(SPLIT_SCORES_FILE))?, &self.cv.by_split)?;
        std::fs::write(dir.join(EVAL_FILE), serde_json::to_string_pretty(&self.cv.report)? + "\n")?;
        write_assignments(std::fs::File::create(dir.join(ASSIGNMENTS_FILE))?, &self.assignments)?;
        std::fs::write(dir.join(PREVALENCE_FILE), serde_json::to_string_pretty(&self.prevalence)? + "\n")?;
        match self.characterize(mode) {
            Ok(ch) => {
                write_characterization(dir, &ch)?;
                Ok(Some(ch))
            }
            Err(Error::DegenerateTarget(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

pub fn write_characterization(dir: &Path, ch: &Characterization) -> Result<()> {
    let report = CharacterizationReport::new(ch, DEFAULT_CLIP);
    std::fs::write(dir.join(CHARACTERIZATION_FILE), report.to_json()? + "\n")?;
    report.write_csv(std::fs::File::create(dir.join(CHARACTERIZATION_CSV_FILE))?)
}

/// Runs the audit on precomputed feature rows.
pub fn audit_dataset(dataset: Dataset, features: FeatureSet, cfg: &AuditConfig) -> Result<Audit> {
    let plan = FoldPlan::new(&dataset.y, cfg.k, cfg.seed)?;
    let grid = model_grid(cfg.model, cfg.grid, cfg.seed);
    let cv = nested_cv(&dataset.x, &dataset.y, &dataset.users, &plan, &grid)?;
    let labels: BTreeMap<String, u8> = dataset.users.iter().cloned().zip(dataset.y.iter().copied()).collect();
    let assignments = assign_splits(&cv.by_split, &labels, cfg.delta)?;
    let rows: Vec<(Split, &GroupAssignment)> = assignments.iter().map(|(s, a)| (*s, a)).collect();
    let prevalence = prevalence(&rows)?;
    Ok(Audit {
        features,
        dataset,
        cv,
        assignments,
        prevalence,
    })
}

/// Full run from raw course files.
pub fn run_audit(
    events: &[ClickEvent],
    schedule: &CourseSchedule,
    outcomes: &[Outcome],
    demographics: &BTreeMap<String, Demographics>,
    cfg: &AuditConfig,
) -> Result<Audit> {
    let roster: Vec<String> = outcomes.iter().map(|o| o.user_id.clone()).collect();
    let features = extract_features(events, schedule, &roster, demographics, cfg.session_timeout_s);
    let rows = features.students.iter().map(FeatureRow::from).collect();
    let dataset = Dataset::from_rows(rows, outcomes)?;
    audit_dataset(dataset, features, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::Group;
    use crate::synth::{generate_course, SynthConfig};

    #[test]
    fn small_course_runs_end_to_end() {
        let cfg = SynthConfig {
            n_students: 80,
            n_weeks: 3,
            ..SynthConfig::flipped(5).with_confounding(0.2)
        };
        let course = generate_course(&cfg).unwrap();
        let audit_cfg = AuditConfig {
            grid: GridSize::Compact,
            k: 4,
            seed: 5,
            ..AuditConfig::default()
        };
        let audit = run_audit(&course.events, &course.schedule, &course.outcomes, &course.demographics, &audit_cfg).unwrap();
        assert_eq!(audit.out_of_fold().len(), 80);
        let test = test_assignments(&audit.assignments);
        assert_eq!(test.len(), 80);
        let total: f64 = Group::ALL.iter().map(|g| audit.prevalence.fraction(Split::Test, *g)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        audit.write_artifacts(dir.path(), TargetMode::Binary).unwrap();
        for f in [FEATURES_FILE, SPLIT_SCORES_FILE, EVAL_FILE, ASSIGNMENTS_FILE, PREVALENCE_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
