//! Failure-probability models and the prediction record they emit.
//!
//! Two trainable models live here: a random forest grown on Gini splits and
//! an unregularized logistic baseline that is pushed to near-separation and
//! therefore reports extreme probabilities. Scores from any other model can be
//! brought in through [`import_scores`].

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog;

pub const DECISION_THRESHOLD: f64 = 0.5;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SCORES_HEADER: [&str; 3] = ["user_id", "fold_id", "p"];

/// Distance of `p` from the decision threshold, in [0, 0.5].
pub fn confidence(p: f64) -> f64 {
    (p - DECISION_THRESHOLD).abs()
}

/// 1 (predicted failure) iff `p >= 0.5`.
pub fn predicted_label(p: f64) -> u8 {
    u8::from(p >= DECISION_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    /// Predicted failure probability.
    pub p: f64,
    pub y_hat: u8,
    pub c: f64,
    pub fold_id: usize,
    pub model_id: String,
}

impl Prediction {
    pub fn new(user_id: impl Into<String>, p: f64, fold_id: usize, model_id: impl Into<String>) -> Self {
        Prediction {
            user_id: user_id.into(),
            p,
            y_hat: predicted_label(p),
            c: confidence(p),
            fold_id,
            model_id: model_id.into(),
        }
    }
}

pub trait Classifier {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.n_features() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.n_features(),
                found: x.len(),
            })
        }
    }
}

fn check_training_set(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 || !y.contains(&0) || !y.contains(&1) {
        return Err(Error::DegenerateLabels);
    }
    let width = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != width) {
        return Err(Error::Dimension {
            expected: width,
            found: bad.len(),
        });
    }
    Ok(width)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: Some(8),
            min_samples_split: 2,
            features_per_split: 7,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be at least 2".into()));
        }
        if self.features_per_split == 0 || self.features_per_split > n_features {
            return Err(Error::Config(format!(
                "features_per_split {} outside 1..={n_features}",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        fail_freq: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { fail_freq, .. } => return *fail_freq,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.root.leaf_value(x)
    }
}

fn gini(fails: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = fails / n;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    /// Sample-weighted impurity of the two children.
    impurity: f64,
}

/// Lowest-impurity threshold split over `features`, scanned in ascending
/// feature order then ascending threshold; only strict improvements replace
/// the incumbent, so ties keep the lowest feature and threshold.
fn best_split(x: &[Vec<f64>], y: &[u8], idx: &[usize], features: &[usize]) -> Option<SplitChoice> {
    let n = idx.len() as f64;
    let total_fails = idx.iter().filter(|&&i| y[i] == 1).count() as f64;
    let parent = gini(total_fails, n);
    let mut best: Option<SplitChoice> = None;
    let mut column: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
    for &f in features {
        column.clear();
        column.extend(idx.iter().map(|&i| (x[i][f], y[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_n = 0.0;
        let mut left_fails = 0.0;
        for k in 0..column.len() - 1 {
            left_n += 1.0;
            left_fails += f64::from(column[k].1);
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi {
                continue;
            }
            let right_n = n - left_n;
            let impurity = (left_n * gini(left_fails, left_n)
                + right_n * gini(total_fails - left_fails, right_n))
                / n;
            if impurity < parent - 1e-12 && best.is_none_or(|b| impurity < b.impurity) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    n_features: usize,
}

impl TreeBuilder<'_> {
    fn build(&self, idx: &[usize], depth: usize, parent_freq: f64, rng: &mut ChaCha8Rng) -> Node {
        if idx.is_empty() {
            return Node::Leaf {
                fail_freq: parent_freq,
                n_samples: 0,
            };
        }
        let fails = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let fail_freq = fails as f64 / idx.len() as f64;
        let leaf = Node::Leaf {
            fail_freq,
            n_samples: idx.len(),
        };
        let pure = fails == 0 || fails == idx.len();
        let depth_reached = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_reached || idx.len() < self.cfg.min_samples_split {
            return leaf;
        }
        let mut features = sample(rng, self.n_features, self.cfg.features_per_split).into_vec();
        features.sort_unstable();
        let Some(choice) = best_split(self.x, self.y, idx, &features) else {
            return leaf;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][choice.feature] <= choice.threshold);
        Node::Split {
            feature: choice.feature,
            threshold: choice.threshold,
            left: Box::new(self.build(&left, depth + 1, fail_freq, rng)),
            right: Box::new(self.build(&right, depth + 1, fail_freq, rng)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

/// Trains `n_trees` trees on bootstrap resamples; tree `i` draws from ChaCha stream `i` of `cfg.seed`.
pub fn train_forest(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<RandomForest> {
    let n_features = check_training_set(x, y)?;
    cfg.validate(n_features)?;
    let builder = TreeBuilder {
        x,
        y,
        cfg,
        n_features,
    };
    let n = x.len();
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let prior = y.iter().filter(|v| **v == 1).count() as f64 / n as f64;
            DecisionTree {
                root: builder.build(&bootstrap, 0, prior, &mut rng),
            }
        })
        .collect();
    Ok(RandomForest {
        config: cfg.clone(),
        n_features,
        trees,
    })
}

impl Classifier for RandomForest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    /// Fixed step size; `None` uses `1 / L`, where `L = λ_max(ZᵀZ / n) / 4` bounds
    /// the curvature of the mean log-loss on the standardized design `Z` (with a
    /// bias column). That is the largest step with guaranteed descent.
    pub learning_rate: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 5000,
            learning_rate: None,
        }
    }
}

/// Largest eigenvalue of `ZᵀZ / n` for `Z = [1 | z]`, by power iteration from the all-ones vector.
fn gram_top_eigenvalue(z: &[Vec<f64>]) -> f64 {
    let d = z.first().map_or(0, Vec::len) + 1;
    let n = z.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for row in z {
            let dot = v[0] + row.iter().zip(&v[1..]).map(|(a, b)| a * b).sum::<f64>();
            next[0] += dot / n;
            for (acc, a) in next[1..].iter_mut().zip(row) {
                *acc += a * dot / n;
            }
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-12 * norm;
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

/// Single-layer logistic model on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub config: BaselineConfig,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    fn standardize<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias
            + self
                .standardize(x)
                .zip(&self.weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
    }
}

/// Full-batch gradient descent on the mean log-loss from zero weights, no regularization.
pub fn train_overconfident_baseline(
    x: &[Vec<f64>],
    y: &[u8],
    cfg: &BaselineConfig,
) -> Result<LogisticModel> {
    let d = check_training_set(x, y)?;
    if cfg.learning_rate.is_some_and(|lr| !(lr > 0.0)) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for row in x {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let mut model = LogisticModel {
        config: cfg.clone(),
        mean,
        scale,
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let z: Vec<Vec<f64>> = x.iter().map(|r| model.standardize(r).collect()).collect();
    let learning_rate = cfg
        .learning_rate
        .unwrap_or_else(|| 4.0 / gram_top_eigenvalue(&z).max(f64::MIN_POSITIVE));
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for (row, label) in z.iter().zip(y) {
            let logit = model.bias + row.iter().zip(&model.weights).map(|(v, w)| v * w).sum::<f64>();
            let err = sigmoid(logit) - f64::from(*label);
            grad_bias += err;
            for (g, v) in grad.iter_mut().zip(row) {
                *g += err * v;
            }
        }
        model.bias -= learning_rate * grad_bias / n;
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= learning_rate * g / n;
        }
    }
    Ok(model)
}

impl Classifier for LogisticModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(sigmoid(self.logit(x)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Forest(RandomForest),
    Overconfident(LogisticModel),
}

impl Classifier for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Forest(m) => m.n_features(),
            Model::Overconfident(m) => m.n_features(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Forest(m) => m.predict_proba(x),
            Model::Overconfident(m) => m.predict_proba(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    version: u32,
    model: Model,
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SavedModel {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Model> {
        let saved: SavedModel = serde_json::from_str(raw)?;
        if saved.version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                saved.version
            )));
        }
        Ok(saved.model)
    }
}

/// One point of a hyper-parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Forest(ForestConfig),
    Overconfident(BaselineConfig),
}

impl ModelSpec {
    pub fn model_id(&self) -> &'static str {
        match self {
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Overconfident(_) => "overconfident",
        }
    }

    pub fn train(&self, x: &[Vec<f64>], y: &[u8]) -> Result<Model> {
        match self {
            ModelSpec::Forest(cfg) => train_forest(x, y, cfg).map(Model::Forest),
            ModelSpec::Overconfident(cfg) => {
                train_overconfident_baseline(x, y, cfg).map(Model::Overconfident)
            }
        }
    }
}

/// n_trees {50,100,200} x max_depth {4,8,unbounded} x features_per_split {7,15}.
pub fn default_forest_grid(seed: u64) -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for n_trees in [50, 100, 200] {
        for max_depth in [Some(4), Some(8), None] {
            for features_per_split in [7, 15] {
                grid.push(ModelSpec::Forest(ForestConfig {
                    n_trees,
                    max_depth,
                    min_samples_split: 2,
                    features_per_split,
                    seed,
                }));
            }
        }
    }
    grid
}

pub fn import_scores<R: Read>(source: R, model_id: &str) -> Result<Vec<Prediction>> {
    eventlog::read_rows(source, &SCORES_HEADER, |line, rec| {
        let fold_id: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, format!("field `fold_id`: invalid `{}`", &rec[1])))?;
        let p: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, format!("field `p`: not a number `{}`", &rec[2])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::row(line, format!("field `p`: {p} outside [0, 1]")));
        }
        Ok(Prediction::new(rec[0].trim(), p, fold_id, model_id))
    })
}

pub fn write_scores<W: Write>(sink: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SCORES_HEADER)?;
    for p in predictions {
        w.write_record([p.user_id.as_str(), &p.fold_id.to_string(), &p.p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
