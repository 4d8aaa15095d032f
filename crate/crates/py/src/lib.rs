//! Python bindings: synthetic courses, full audits, grouping and the regression.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use uu_audit::characterize::{fit_ols as core_fit_ols, CharacterizationReport, TargetMode, DEFAULT_CLIP};
use uu_audit::eventlog::{parse_events, parse_outcomes, CourseSchedule};
use uu_audit::evalcv::Split;
use uu_audit::features::parse_demographics;
use uu_audit::grouping::{self, Group, TrustLevel};
use uu_audit::models;
use uu_audit::pipeline::{self, test_assignments, AuditConfig, GridSize, ModelChoice};
use uu_audit::synth::{generate_course, SynthConfig, DEMOGRAPHICS_FILE, EVENTS_FILE, OUTCOMES_FILE, SCHEDULE_FILE};

create_exception!(uu_audit, AuditError, PyException);

fn err(e: uu_audit::Error) -> PyErr {
    AuditError::new_err(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> PyErr {
    AuditError::new_err(format!("{}: {e}", path.display()))
}

fn json_to_py<'py>(py: Python<'py>, raw: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (raw,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let raw = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    json_to_py(py, &raw)
}

fn trust(delta: f64) -> PyResult<TrustLevel> {
    TrustLevel::new(delta).map_err(err)
}

/// `|p - 0.5|`.
#[pyfunction]
fn confidence(p: f64) -> f64 {
    models::confidence(p)
}

/// 1 (fail) when `p >= 0.5`, else 0.
#[pyfunction]
fn predicted_label(p: f64) -> u8 {
    models::predicted_label(p)
}

/// Group code: 0 known known, 1 known unknown, 2 unknown unknown.
#[pyfunction]
#[pyo3(signature = (p, y, delta = 0.25))]
fn group_of(p: f64, y: u8, delta: f64) -> PyResult<u8> {
    Ok(grouping::assign_group(y, models::predicted_label(p), models::confidence(p), trust(delta)?).code())
}

#[pyfunction]
fn balanced_accuracy(y: Vec<u8>, y_hat: Vec<u8>) -> PyResult<f64> {
    uu_audit::evalcv::balanced_accuracy(&y, &y_hat).map_err(err)
}

/// Least squares with an intercept; returns the fit as a dict.
#[pyfunction]
fn fit_ols<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, y: Vec<f64>, names: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let fit = core_fit_ols(&rows, &y, &names).map_err(err)?;
    to_py(py, &fit)
}

/// Writes a synthetic course (events, schedule, outcomes, latent traits, demographics) to `out`.
#[pyfunction]
#[pyo3(signature = (out, preset = "flipped", seed = 0, confounding = 0.0, students = None, weeks = None))]
fn synthesize(
    out: PathBuf,
    preset: &str,
    seed: u64,
    confounding: f64,
    students: Option<usize>,
    weeks: Option<u32>,
) -> PyResult<usize> {
    let mut cfg = match preset {
        "flipped" => SynthConfig::flipped(seed),
        "mooc" => SynthConfig::mooc(seed),
        other => return Err(AuditError::new_err(format!("unknown preset `{other}`"))),
    }
    .with_confounding(confounding);
    if let Some(n) = students {
        cfg.n_students = n;
    }
    if let Some(w) = weeks {
        cfg.n_weeks = w;
    }
    let course = generate_course(&cfg).map_err(err)?;
    course.write_to_dir(&out).map_err(err)?;
    Ok(course.events.len())
}

#[pyclass(module = "uu_audit", frozen, get_all)]
struct Assignment {
    user_id: String,
    split: String,
    y: u8,
    p: f64,
    c: f64,
    group: u8,
    direction: Option<String>,
}

#[pymethods]
impl Assignment {
    fn __repr__(&self) -> String {
        format!(
            "Assignment(user_id={:?}, split={:?}, y={}, p={}, group={})",
            self.user_id, self.split, self.y, self.p, self.group
        )
    }
}

/// A completed audit of one course.
#[pyclass(module = "uu_audit", frozen)]
struct Audit {
    inner: pipeline::Audit,
}

fn open(path: &Path) -> PyResult<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

#[pymethods]
impl Audit {
    /// Audits the course files in `course_dir` (as written by `synthesize`).
    #[staticmethod]
    #[pyo3(signature = (course_dir, model = "forest", delta = 0.25, seed = 0, grid = "compact", folds = 10))]
    fn run(py: Python<'_>, course_dir: PathBuf, model: &str, delta: f64, seed: u64, grid: &str, folds: usize) -> PyResult<Audit> {
        let model = match model {
            "forest" => ModelChoice::Forest,
            "overconfident" => ModelChoice::Overconfident,
            other => return Err(AuditError::new_err(format!("unknown model `{other}`"))),
        };
        let grid = match grid {
            "full" => GridSize::Full,
            "compact" => GridSize::Compact,
            other => return Err(AuditError::new_err(format!("unknown grid `{other}`"))),
        };
        let cfg = AuditConfig {
            model,
            grid,
            k: folds,
            seed,
            delta: trust(delta)?,
            ..AuditConfig::default()
        };
        let schedule_path = course_dir.join(SCHEDULE_FILE);
        let raw = std::fs::read_to_string(&schedule_path).map_err(|e| io_err(&schedule_path, e))?;
        let schedule = CourseSchedule::from_json(&raw).map_err(err)?;
        let events = parse_events(open(&course_dir.join(EVENTS_FILE))?).map_err(err)?;
        let outcomes = parse_outcomes(open(&course_dir.join(OUTCOMES_FILE))?, &schedule.pass_rule).map_err(err)?;
        let demo_path = course_dir.join(DEMOGRAPHICS_FILE);
        let demographics = if demo_path.exists() {
            parse_demographics(open(&demo_path)?).map_err(err)?
        } else {
            BTreeMap::new()
        };
        let inner = py
            .detach(|| pipeline::run_audit(&events, &schedule, &outcomes, &demographics, &cfg))
            .map_err(err)?;
        Ok(Audit { inner })
    }

    /// Pooled out-of-fold test balanced accuracy.
    #[getter]
    fn balanced_accuracy(&self) -> Option<f64> {
        self.inner.report().pooled_test_ba
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.prevalence.delta
    }

    fn eval_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.report())
    }

    fn prevalence<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.prevalence)
    }

    /// Assignments of every split, or of one split (`train`, `validation`, `test`).
    #[pyo3(signature = (split = None))]
    fn assignments(&self, split: Option<&str>) -> PyResult<Vec<Assignment>> {
        let wanted = match split {
            Some(raw) => Some(Split::parse(raw).ok_or_else(|| AuditError::new_err(format!("unknown split `{raw}`")))?),
            None => None,
        };
        Ok(self
            .inner
            .assignments
            .iter()
            .filter(|(s, _)| wanted.is_none_or(|w| w == *s))
            .map(|(s, a)| Assignment {
                user_id: a.user_id.clone(),
                split: s.as_str().to_string(),
                y: a.y,
                p: a.p,
                c: a.c,
                group: a.group.code(),
                direction: a.direction.map(|d| d.as_str().to_string()),
            })
            .collect())
    }

    /// Test-split group counts at another trust level, keyed KK, KU, UU.
    fn regroup(&self, delta: f64) -> PyResult<BTreeMap<&'static str, usize>> {
        let delta = trust(delta)?;
        let mut counts: BTreeMap<&'static str, usize> = Group::ALL.iter().map(|g| (g.short(), 0)).collect();
        for a in test_assignments(&self.inner.assignments) {
            let g = grouping::assign_group(a.y, models::predicted_label(a.p), a.c, delta);
            *counts.entry(g.short()).or_default() += 1;
        }
        Ok(counts)
    }

    /// Regression of unknown-unknown membership; `target` is `binary` or `ordinal`.
    #[pyo3(signature = (target = "binary"))]
    fn characterize<'py>(&self, py: Python<'py>, target: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode: TargetMode = target.parse().map_err(err)?;
        let ch = self.inner.characterize(mode).map_err(err)?;
        to_py(py, &CharacterizationReport::new(&ch, DEFAULT_CLIP))
    }

    /// Writes the CSV/JSON artifacts to `out`; returns whether a characterization was written.
    #[pyo3(signature = (out, target = "binary"))]
    fn write_artifacts(&self, out: PathBuf, target: &str) -> PyResult<bool> {
        let mode: TargetMode = target.parse().map_err(err)?;
        Ok(self.inner.write_artifacts(&out, mode).map_err(err)?.is_some())
    }

    fn __repr__(&self) -> String {
        format!(
            "Audit(students={}, model={:?}, delta={})",
            self.inner.dataset.users.len(),
            self.inner.report().model_id,
            self.inner.prevalence.delta
        )
    }
}

#[pymodule(name = "uu_audit")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AuditError", m.py().get_type::<AuditError>())?;
    m.add("DEFAULT_TRUST_LEVEL", grouping::DEFAULT_TRUST_LEVEL)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_label, m)?)?;
    m.add_function(wrap_pyfunction!(group_of, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<Assignment>()?;
    m.add_class::<Audit>()?;
    Ok(())
}
