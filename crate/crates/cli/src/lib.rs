//! Staged command-line pipeline.
//!
//! Each stage reads the artifacts of the stages before it from the output
//! directory and writes its own next to them:
//!
//! ```text
//! features      -> features.csv, weekly.csv, normalization.json, diagnostics.json
//! train         -> split_scores.csv, scores.csv, eval.json
//! audit         -> assignments.csv, prevalence.json
//! characterize  -> characterization.json, characterization.csv
//! report        -> figures/*.svg
//! ```

pub mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use uu_audit::characterize::{characterize_uu, CharacterizationReport, TargetMode};
use uu_audit::evalcv::{
    nested_cv, parse_split_scores, write_split_scores, EvalReport, FoldPlan, Split, SplitPrediction, DEFAULT_FOLDS,
};
use uu_audit::eventlog::{parse_events, parse_outcomes, CourseSchedule, Outcome, DEFAULT_SESSION_TIMEOUT_S};
use uu_audit::features::{extract_features, parse_demographics, parse_feature_csv, write_feature_csv, write_weekly_csv, FeatureRow};
use uu_audit::grouping::{parse_assignments, prevalence, write_assignments, PrevalenceSummary, TrustLevel};
use uu_audit::models::{import_scores, write_scores};
use uu_audit::pipeline::{
    assign_splits, model_grid, test_assignments, write_characterization, Dataset, GridSize, ModelChoice,
    ASSIGNMENTS_FILE, CHARACTERIZATION_CSV_FILE, CHARACTERIZATION_FILE, EVAL_FILE, FEATURES_FILE, PREVALENCE_FILE, SPLIT_SCORES_FILE,
};
use uu_audit::synth::{generate_course, SynthConfig};

pub const WEEKLY_FILE: &str = "weekly.csv";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const FIGURES_DIR: &str = "figures";
pub const THREADS_ENV: &str = "UU_AUDIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "uu-audit", version, about = "Audit a student-success predictor for confidently wrong predictions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic course with an optional hidden confounder.
    Synth(SynthArgs),
    /// Weekly behavioral indicators, averaged and normalized per student.
    Features(FeaturesArgs),
    /// Nested cross-validation of a model over the feature table.
    Train(TrainArgs),
    /// Group every prediction into known knowns, known unknowns and unknown unknowns.
    Audit(AuditArgs),
    /// Regress unknown-unknown membership on the indicators.
    Characterize(CharacterizeArgs),
    /// Render the SVG figures.
    Report(OutArgs),
    /// All stages from raw course files to figures.
    Run(RunArgs),
    /// Serve the audit artifacts over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Flipped,
    Mooc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Forest,
    Overconfident,
    /// Audit externally produced scores given by `--scores`.
    Import,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridArg {
    Full,
    Compact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Binary,
    Ordinal,
}

impl From<TargetArg> for TargetMode {
    fn from(t: TargetArg) -> TargetMode {
        match t {
            TargetArg::Binary => TargetMode::Binary,
            TargetArg::Ordinal => TargetMode::Ordinal,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Artifact directory shared by all stages.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "flipped")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of students whose behavior contradicts their outcome.
    #[arg(long, default_value_t = 0.0)]
    pub confounding: f64,
    /// Override the preset's number of students.
    #[arg(long)]
    pub students: Option<usize>,
    /// Override the preset's number of weeks.
    #[arg(long)]
    pub weeks: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CourseArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Optional `user_id,gender,provenience` table.
    #[arg(long)]
    pub demographics: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SESSION_TIMEOUT_S)]
    pub session_timeout: i64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub course: CourseArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, value_enum, default_value = "forest")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "full")]
    pub grid: GridArg,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub labels: LabelArgs,
    /// `import` audits `--scores`; otherwise the scores of `train` are used.
    #[arg(long, value_enum, default_value = "forest")]
    pub model: ModelArg,
    /// `user_id,fold_id,p` table of externally produced test scores.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CharacterizeArgs {
    #[arg(long, value_enum, default_value = "binary")]
    pub target: TargetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub course: CourseArgs,
    #[arg(long, value_enum, default_value = "forest")]
    pub model: ModelArg,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub grid: GridArg,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "binary")]
    pub target: TargetArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Directory holding the built dashboard bundle.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Intervention journal; defaults to `interventions.jsonl` in `--out`.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

/// Caps the global worker pool when `UU_AUDIT_THREADS` is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Features(a) => cmd_features(&a.course, &a.out),
        Command::Train(a) => cmd_train(&a.labels, a.model, a.grid, a.folds, a.seed, &a.out),
        Command::Audit(a) => cmd_audit(&a.labels, a.model, a.scores.as_deref(), a.delta, &a.out),
        Command::Characterize(a) => cmd_characterize(a.target.into(), &a.out),
        Command::Report(a) => cmd_report(&a.out),
        Command::Run(a) => cmd_run(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

/// Opens an upstream artifact, naming the stage that produces it when it is missing.
fn upstream(dir: &Path, name: &str, stage: &str) -> Result<File> {
    let path = dir.join(name);
    if !path.exists() {
        bail!("{} not found; run `uu-audit {stage}` first", path.display());
    }
    open(&path)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn read_schedule(path: &Path) -> Result<CourseSchedule> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    CourseSchedule::from_json(&raw).with_context(|| format!("{}", path.display()))
}

fn read_outcomes(labels: &LabelArgs) -> Result<Vec<Outcome>> {
    let schedule = read_schedule(&labels.schedule)?;
    parse_outcomes(open(&labels.outcomes)?, &schedule.pass_rule).with_context(|| format!("{}", labels.outcomes.display()))
}

fn labels_by_user(outcomes: &[Outcome]) -> BTreeMap<String, u8> {
    outcomes.iter().map(|o| (o.user_id.clone(), o.y)).collect()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match a.preset {
        Preset::Flipped => SynthConfig::flipped(a.seed),
        Preset::Mooc => SynthConfig::mooc(a.seed),
    }
    .with_confounding(a.confounding);
    if let Some(n) = a.students {
        cfg.n_students = n;
    }
    if let Some(w) = a.weeks {
        cfg.n_weeks = w;
    }
    let course = generate_course(&cfg)?;
    course.write_to_dir(&a.out)?;
    eprintln!(
        "{} students, {} events, {} confounded -> {}",
        course.outcomes.len(),
        course.events.len(),
        course.latent.iter().filter(|t| t.prior_knowledge == 1).count(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_features(course: &CourseArgs, out: &Path) -> Result<()> {
    let schedule = read_schedule(&course.schedule)?;
    let events = parse_events(open(&course.events)?).with_context(|| format!("{}", course.events.display()))?;
    let outcomes = parse_outcomes(open(&course.outcomes)?, &schedule.pass_rule)
        .with_context(|| format!("{}", course.outcomes.display()))?;
    let demographics = match &course.demographics {
        Some(p) => parse_demographics(open(p)?).with_context(|| format!("{}", p.display()))?,
        None => BTreeMap::new(),
    };
    let roster: Vec<String> = outcomes.iter().map(|o| o.user_id.clone()).collect();
    let features = extract_features(&events, &schedule, &roster, &demographics, course.session_timeout);
    std::fs::create_dir_all(out)?;
    let rows: Vec<FeatureRow> = features.students.iter().map(FeatureRow::from).collect();
    let dataset = Dataset::from_rows(rows, &outcomes)?;
    write_feature_csv(create(&out.join(FEATURES_FILE))?, &dataset.rows)?;
    write_weekly_csv(create(&out.join(WEEKLY_FILE))?, &features.students)?;
    write_json(&out.join(NORMALIZATION_FILE), &features.normalization)?;
    write_json(&out.join(DIAGNOSTICS_FILE), &features.diagnostics)?;
    if !features.diagnostics.is_clean() {
        eprintln!(
            "warning: {} events outside the course, {} unknown objects (see {DIAGNOSTICS_FILE})",
            features.diagnostics.out_of_range_events,
            features.diagnostics.unknown_objects.len()
        );
    }
    eprintln!("{} students x {} weeks -> {}", dataset.rows.len(), schedule.n_weeks(), out.join(FEATURES_FILE).display());
    Ok(())
}

fn load_dataset(out: &Path, outcomes: &[Outcome]) -> Result<Dataset> {
    let rows = parse_feature_csv(upstream(out, FEATURES_FILE, "features")?)?;
    Ok(Dataset::from_rows(rows, outcomes)?)
}

pub fn cmd_train(labels: &LabelArgs, model: ModelArg, grid: GridArg, folds: usize, seed: u64, out: &Path) -> Result<()> {
    let choice = match model {
        ModelArg::Forest => ModelChoice::Forest,
        ModelArg::Overconfident => ModelChoice::Overconfident,
        ModelArg::Import => bail!("imported scores need no training; run `uu-audit audit --model import --scores <file>`"),
    };
    let size = match grid {
        GridArg::Full => GridSize::Full,
        GridArg::Compact => GridSize::Compact,
    };
    let outcomes = read_outcomes(labels)?;
    let dataset = load_dataset(out, &outcomes)?;
    let plan = FoldPlan::new(&dataset.y, folds, seed)?;
    let cv = nested_cv(&dataset.x, &dataset.y, &dataset.users, &plan, &model_grid(choice, size, seed))?;
    write_split_scores(create(&out.join(SPLIT_SCORES_FILE))?, &cv.by_split)?;
    write_scores(create(&out.join(SCORES_FILE))?, &cv.out_of_fold)?;
    write_json(&out.join(EVAL_FILE), &cv.report)?;
    let ba = cv.report.pooled_test_ba.map_or("undefined".into(), |b| format!("{b:.3}"));
    eprintln!("{} trainings, pooled test balanced accuracy {ba}", cv.report.n_trainings);
    Ok(())
}

pub fn cmd_audit(labels: &LabelArgs, model: ModelArg, scores: Option<&Path>, delta: f64, out: &Path) -> Result<()> {
    let delta = TrustLevel::new(delta)?;
    let outcomes = read_outcomes(labels)?;
    let predictions: Vec<SplitPrediction> = match (model, scores) {
        (ModelArg::Import, Some(path)) => import_scores(open(path)?, "imported")
            .with_context(|| format!("{}", path.display()))?
            .into_iter()
            .map(|prediction| SplitPrediction {
                split: Split::Test,
                prediction,
            })
            .collect(),
        (ModelArg::Import, None) => bail!("--model import requires --scores"),
        (_, Some(_)) => bail!("--scores is only read with --model import"),
        (_, None) => parse_split_scores(upstream(out, SPLIT_SCORES_FILE, "train")?, "trained")?,
    };
    let assignments = assign_splits(&predictions, &labels_by_user(&outcomes), delta)?;
    let rows: Vec<_> = assignments.iter().map(|(s, a)| (*s, a)).collect();
    let summary = prevalence(&rows)?;
    std::fs::create_dir_all(out)?;
    write_assignments(create(&out.join(ASSIGNMENTS_FILE))?, &assignments)?;
    write_json(&out.join(PREVALENCE_FILE), &summary)?;
    if let Some(test) = summary.splits.get(&Split::Test) {
        let parts: Vec<String> = test.groups.iter().map(|(g, s)| format!("{} {}", g.short(), s.total.count)).collect();
        eprintln!("test split at δ = {}: {}", delta.value(), parts.join(", "));
    }
    Ok(())
}

fn read_prevalence(out: &Path) -> Result<PrevalenceSummary> {
    Ok(serde_json::from_reader(upstream(out, PREVALENCE_FILE, "audit")?)?)
}

pub fn cmd_characterize(mode: TargetMode, out: &Path) -> Result<()> {
    let rows = parse_feature_csv(upstream(out, FEATURES_FILE, "features")?)?;
    let delta = TrustLevel::new(read_prevalence(out)?.delta)?;
    let assignments = parse_assignments(upstream(out, ASSIGNMENTS_FILE, "audit")?, delta)?;
    let ch = characterize_uu(&rows, &test_assignments(&assignments), mode)?;
    write_characterization(out, &ch)?;
    eprintln!(
        "{} target, R² = {:.3}, {} coefficients, {} dropped",
        mode.as_str(),
        ch.fit.r2,
        ch.fit.coefficients.len(),
        ch.dropped.len()
    );
    Ok(())
}

pub fn cmd_report(out: &Path) -> Result<()> {
    let summary = read_prevalence(out)?;
    let delta = TrustLevel::new(summary.delta)?;
    let assignments = parse_assignments(upstream(out, ASSIGNMENTS_FILE, "audit")?, delta)?;
    let figures = out.join(FIGURES_DIR);
    std::fs::create_dir_all(&figures)?;
    let mut written = vec![report::PREVALENCE_FIGURE, report::PROBABILITY_FIGURE];
    std::fs::write(figures.join(report::PREVALENCE_FIGURE), report::prevalence_svg(&summary))?;
    std::fs::write(
        figures.join(report::PROBABILITY_FIGURE),
        report::probability_histogram_svg(&assignments, delta.value()),
    )?;
    // Imported scores have no evaluation report, and a run without unknown unknowns has no characterization.
    let eval_path = out.join(EVAL_FILE);
    if eval_path.exists() {
        let eval: EvalReport = serde_json::from_reader(open(&eval_path)?)?;
        std::fs::write(figures.join(report::BA_FIGURE), report::balanced_accuracy_svg(&eval))?;
        written.push(report::BA_FIGURE);
    }
    let ch_path = out.join(CHARACTERIZATION_FILE);
    if ch_path.exists() {
        let ch = CharacterizationReport::from_json(&std::fs::read_to_string(&ch_path)?)?;
        std::fs::write(figures.join(report::COEFFICIENT_FIGURE), report::coefficients_svg(&ch))?;
        written.push(report::COEFFICIENT_FIGURE);
    }
    eprintln!("{} -> {}", written.join(", "), figures.display());
    Ok(())
}

pub fn cmd_run(a: &RunArgs) -> Result<()> {
    cmd_features(&a.course, &a.out)?;
    let labels = LabelArgs {
        schedule: a.course.schedule.clone(),
        outcomes: a.course.outcomes.clone(),
    };
    if a.model != ModelArg::Import {
        cmd_train(&labels, a.model, a.grid, a.folds, a.seed, &a.out)?;
    }
    cmd_audit(&labels, a.model, a.scores.as_deref(), a.delta, &a.out)?;
    match cmd_characterize(a.target.into(), &a.out) {
        Ok(()) => {}
        Err(e) if matches!(e.downcast_ref(), Some(uu_audit::Error::DegenerateTarget(_))) => {
            for stale in [CHARACTERIZATION_FILE, CHARACTERIZATION_CSV_FILE] {
                let _ = std::fs::remove_file(a.out.join(stale));
            }
            eprintln!("warning: characterization skipped: {e}");
        }
        Err(e) => return Err(e),
    }
    cmd_report(&a.out)
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let state = uu_audit_serve::AppState::open(&a.out, a.journal.clone())?;
    if state.artifacts().is_none() {
        eprintln!("warning: no audit artifacts in {}; data routes answer 409", a.out.display());
    }
    let addr = std::net::SocketAddr::new(a.host, a.port);
    eprintln!("listening on http://{addr}");
    tokio::runtime::Runtime::new()?.block_on(uu_audit_serve::serve(addr, state, a.static_dir.as_deref()))?;
    Ok(())
}
