//! Nested, student-stratified k-fold cross-validation with grid search.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog;
use crate::models::{Classifier, Model, ModelSpec, Prediction};

pub const DEFAULT_FOLDS: usize = 10;

/// Mean of per-class recalls with fail (1) as the positive class.
pub fn balanced_accuracy(y: &[u8], y_hat: &[u8]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            found: y_hat.len(),
        });
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (t, p) in y.iter().zip(y_hat) {
        if *t == 1 {
            pos += 1;
            tp += usize::from(*p == 1);
        } else {
            neg += 1;
            tn += usize::from(*p == 0);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedBalancedAccuracy);
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// Stratified partition of `0..labels.len()` into `k` folds.
///
/// Each class is shuffled, then the fail list followed by the pass list is
/// dealt round-robin, so fold sizes and per-fold fail counts each differ by
/// at most one. Indices inside a fold are ascending.
pub fn make_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("at least 2 folds are required".into()));
    }
    if labels.len() < k {
        return Err(Error::TooFewStudents {
            found: labels.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fails: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let mut passes: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    fails.shuffle(&mut rng);
    passes.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, idx) in fails.into_iter().chain(passes).enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Outer test folds as indices into the student list.
    pub outer: Vec<Vec<usize>>,
    /// For each outer fold, folds over its training students (global indices).
    pub inner: Vec<Vec<Vec<usize>>>,
}

impl FoldPlan {
    pub fn new(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
        let outer = make_folds(labels, k, seed)?;
        let mut inner = Vec::with_capacity(k);
        for (f, test) in outer.iter().enumerate() {
            let train = complement(labels.len(), test);
            let train_labels: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let inner_k = k.min(train.len());
            let local = make_folds(&train_labels, inner_k, inner_seed(seed, f))
                .map_err(|e| e.in_fold(f))?;
            inner.push(
                local
                    .into_iter()
                    .map(|fold| fold.into_iter().map(|i| train[i]).collect())
                    .collect(),
            );
        }
        Ok(FoldPlan {
            k,
            seed,
            outer,
            inner,
        })
    }

    pub fn n_students(&self) -> usize {
        self.outer.iter().map(Vec::len).sum()
    }

    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        complement(self.n_students(), &self.outer[fold])
    }

    /// Largest |fails_f - size_f * global_rate| over all outer and inner folds, in students.
    pub fn max_fail_deviation(&self, labels: &[u8]) -> f64 {
        let deviation = |fold: &[usize], population: &[usize]| {
            let rate = population.iter().filter(|&&i| labels[i] == 1).count() as f64
                / population.len() as f64;
            let fails = fold.iter().filter(|&&i| labels[i] == 1).count() as f64;
            (fails - fold.len() as f64 * rate).abs()
        };
        let everyone: Vec<usize> = (0..labels.len()).collect();
        let mut worst: f64 = 0.0;
        for (f, test) in self.outer.iter().enumerate() {
            worst = worst.max(deviation(test, &everyone));
            let train = self.outer_train(f);
            for fold in &self.inner[f] {
                worst = worst.max(deviation(fold, &train));
            }
        }
        worst
    }
}

fn inner_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64 + 1)
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = held_out.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(raw: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.as_str() == raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub grid_index: usize,
    pub chosen: ModelSpec,
    /// Inner-CV mean balanced accuracy of every grid point.
    pub inner_scores: Vec<f64>,
    pub train_ba: f64,
    /// Inner-CV mean for the chosen grid point.
    pub validation_ba: f64,
    /// `None` when the outer test fold holds a single class.
    pub test_ba: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Spread> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub train: Option<Spread>,
    pub validation: Option<Spread>,
    pub test: Option<Spread>,
    /// Balanced accuracy of the pooled out-of-fold test predictions.
    pub pooled_test_ba: Option<f64>,
    pub n_trainings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPrediction {
    pub split: Split,
    pub prediction: Prediction,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    /// Out-of-fold test predictions, one per student, in student order.
    pub out_of_fold: Vec<Prediction>,
    /// Train, validation (inner out-of-fold) and test predictions of every outer fold.
    pub by_split: Vec<SplitPrediction>,
}

struct GridScore {
    mean_ba: f64,
    validation: Vec<(usize, f64)>,
}

fn predict_all(model: &Model, x: &[Vec<f64>], idx: &[usize]) -> Result<Vec<f64>> {
    idx.iter().map(|&i| model.predict_proba(&x[i])).collect()
}

fn labels_at(y: &[u8], idx: &[usize]) -> Vec<u8> {
    idx.iter().map(|&i| y[i]).collect()
}

fn rows_at(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x[i].clone()).collect()
}

fn hard_labels(ps: &[f64]) -> Vec<u8> {
    ps.iter().map(|p| crate::models::predicted_label(*p)).collect()
}

fn inner_score(
    spec: &ModelSpec,
    x: &[Vec<f64>],
    y: &[u8],
    train: &[usize],
    inner: &[Vec<usize>],
) -> Result<GridScore> {
    let mut scores = Vec::new();
    let mut validation = Vec::new();
    for val in inner {
        let fit_idx: Vec<usize> = {
            let held: BTreeSet<usize> = val.iter().copied().collect();
            train.iter().copied().filter(|i| !held.contains(i)).collect()
        };
        let model = spec.train(&rows_at(x, &fit_idx), &labels_at(y, &fit_idx))?;
        let ps = predict_all(&model, x, val)?;
        if let Ok(ba) = balanced_accuracy(&labels_at(y, val), &hard_labels(&ps)) {
            scores.push(ba);
        }
        validation.extend(val.iter().copied().zip(ps));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedBalancedAccuracy);
    }
    Ok(GridScore {
        mean_ba: scores.iter().sum::<f64>() / scores.len() as f64,
        validation,
    })
}

struct FoldRun {
    result: FoldResult,
    test: Vec<(usize, f64)>,
    train: Vec<(usize, f64)>,
    validation: Vec<(usize, f64)>,
    model_id: &'static str,
}

fn run_outer_fold(
    fold: usize,
    x: &[Vec<f64>],
    y: &[u8],
    plan: &FoldPlan,
    grid: &[ModelSpec],
) -> Result<FoldRun> {
    let train = plan.outer_train(fold);
    let test = &plan.outer[fold];
    let inner = &plan.inner[fold];
    let scored: Vec<GridScore> = grid
        .par_iter()
        .map(|spec| inner_score(spec, x, y, &train, inner))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (g, s) in scored.iter().enumerate() {
        if s.mean_ba > scored[best].mean_ba {
            best = g;
        }
    }
    let spec = &grid[best];
    let model = spec.train(&rows_at(x, &train), &labels_at(y, &train))?;
    let train_ps = predict_all(&model, x, &train)?;
    let test_ps = predict_all(&model, x, test)?;
    let train_ba = balanced_accuracy(&labels_at(y, &train), &hard_labels(&train_ps))?;
    let test_ba = balanced_accuracy(&labels_at(y, test), &hard_labels(&test_ps)).ok();
    let mut scored = scored;
    let chosen = scored.swap_remove(best);
    let inner_scores = {
        let mut all: Vec<f64> = scored.iter().map(|s| s.mean_ba).collect();
        all.insert(best, chosen.mean_ba);
        all
    };
    Ok(FoldRun {
        result: FoldResult {
            fold,
            grid_index: best,
            chosen: spec.clone(),
            inner_scores,
            train_ba,
            validation_ba: chosen.mean_ba,
            test_ba,
        },
        test: test.iter().copied().zip(test_ps).collect(),
        train: train.iter().copied().zip(train_ps).collect(),
        validation: chosen.validation,
        model_id: spec.model_id(),
    })
}

/// Runs the full nested protocol: per outer fold, every grid point is scored
/// by inner-CV mean balanced accuracy, the first best is refit on the outer
/// training students and scored on the outer test fold.
pub fn nested_cv(
    x: &[Vec<f64>],
    y: &[u8],
    users: &[String],
    plan: &FoldPlan,
    grid: &[ModelSpec],
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    if x.len() != y.len() || users.len() != y.len() || plan.n_students() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            found: x.len().min(users.len()).min(plan.n_students()),
        });
    }
    let runs: Vec<FoldRun> = (0..plan.outer.len())
        .into_par_iter()
        .map(|f| run_outer_fold(f, x, y, plan, grid).map_err(|e| e.in_fold(f)))
        .collect::<Result<_>>()?;

    let model_id = runs[0].model_id.to_string();
    let mut oof: Vec<Option<Prediction>> = vec![None; y.len()];
    let mut by_split = Vec::new();
    let mut n_trainings = 0;
    for run in &runs {
        let fold = run.result.fold;
        n_trainings += grid.len() * plan.inner[fold].len() + 1;
        let mut emit = |split: Split, rows: &[(usize, f64)]| {
            for &(i, p) in rows {
                by_split.push(SplitPrediction {
                    split,
                    prediction: Prediction::new(users[i].clone(), p, fold, model_id.clone()),
                });
            }
        };
        emit(Split::Train, &run.train);
        emit(Split::Validation, &run.validation);
        emit(Split::Test, &run.test);
        for &(i, p) in &run.test {
            oof[i] = Some(Prediction::new(users[i].clone(), p, fold, model_id.clone()));
        }
    }
    let out_of_fold: Vec<Prediction> = oof
        .into_iter()
        .map(|p| p.ok_or_else(|| Error::Config("fold plan does not cover every student".into())))
        .collect::<Result<_>>()?;
    let pooled_test_ba = balanced_accuracy(
        y,
        &out_of_fold.iter().map(|p| p.y_hat).collect::<Vec<_>>(),
    )
    .ok();
    let folds: Vec<FoldResult> = runs.into_iter().map(|r| r.result).collect();
    let report = EvalReport {
        model_id,
        k: plan.k,
        seed: plan.seed,
        train: Spread::of(folds.iter().map(|f| f.train_ba)),
        validation: Spread::of(folds.iter().map(|f| f.validation_ba)),
        test: Spread::of(folds.iter().filter_map(|f| f.test_ba)),
        pooled_test_ba,
        n_trainings,
        folds,
    };
    Ok(CvOutcome {
        report,
        out_of_fold,
        by_split,
    })
}

pub const SPLIT_SCORES_HEADER: [&str; 4] = ["user_id", "split", "fold_id", "p"];

pub fn write_split_scores<W: Write>(sink: W, rows: &[SplitPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SPLIT_SCORES_HEADER)?;
    for r in rows {
        w.write_record([
            r.prediction.user_id.as_str(),
            r.split.as_str(),
            &r.prediction.fold_id.to_string(),
            &r.prediction.p.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_split_scores<R: Read>(source: R, model_id: &str) -> Result<Vec<SplitPrediction>> {
    eventlog::read_rows(source, &SPLIT_SCORES_HEADER, |line, rec| {
        let split = Split::parse(rec[1].trim())
            .ok_or_else(|| Error::row(line, format!("field `split`: unknown `{}`", &rec[1])))?;
        let fold_id: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, "field `fold_id`: not an integer"))?;
        let p: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, "field `p`: not a number"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::row(line, format!("field `p`: {p} outside [0, 1]")));
        }
        Ok(SplitPrediction {
            split,
            prediction: Prediction::new(rec[0].trim(), p, fold_id, model_id),
        })
    })
}
