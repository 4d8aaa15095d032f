//! Synthetic courses with a latent "prior knowledge" confounder.
//!
//! Every student first receives a real outcome (the exact failing count is
//! `round(fail_rate · n)`). A latent bit marks confounded students with
//! probability π; for them the behavior archetype is the opposite of the
//! outcome with probability `strength`, so their clicks look like a passing
//! student who fails or a failing student who passes. Everyone else behaves
//! according to their outcome.
//!
//! Archetypes differ by an engagement level `e ∈ [0, 1]` drawn per student
//! from a normal around the archetype mean. Engagement drives how many weeks
//! are active, the number of sessions, how much of the scheduled material is
//! opened, how regular session times are and how much is watched late versus
//! ahead of schedule. The default parameters are chosen so that the
//! confounder experiment separates clearly, not to mimic a real course.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{
    self, write_events, write_outcomes, Action, ClickEvent, CourseSchedule, GradeScale, Outcome,
    PassRule, WeekPlan,
};
use crate::features::{write_demographics, Demographics};

pub const LATENT_HEADER: [&str; 2] = ["user_id", "prior_knowledge"];

/// File names written by [`SyntheticCourse::write_to_dir`].
pub const EVENTS_FILE: &str = "events.csv";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const LATENT_FILE: &str = "latent.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";

const MIN_STUDENTS: usize = 20;
const GENDERS: [&str; 2] = ["f", "m"];
const PROVENIENCES: [&str; 3] = ["abroad", "local", "regional"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Archetypes {
    pub pass_engagement: f64,
    pub fail_engagement: f64,
    /// Standard deviation of the per-student engagement around its archetype mean.
    pub engagement_sd: f64,
    /// Standard deviation of the independent per-habit deviation from that engagement
    /// (watching, pausing, seeking, quiz retries, session cadence, ...).
    pub style_sd: f64,
    /// Expected extra sessions per active week at full engagement.
    pub sessions_per_week: f64,
}

impl Default for Archetypes {
    fn default() -> Self {
        Archetypes {
            pass_engagement: 0.72,
            fail_engagement: 0.36,
            engagement_sd: 0.08,
            style_sd: 0.1,
            sessions_per_week: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub course_id: String,
    pub n_students: usize,
    pub n_weeks: u32,
    /// Inclusive range of scheduled videos per week.
    pub videos_per_week: (usize, usize),
    pub quizzes_per_week: (usize, usize),
    /// Fraction π of students carrying the latent trait.
    pub confounded_fraction: f64,
    /// Probability that a confounded student's behavior contradicts their outcome.
    pub confounder_strength: f64,
    pub fail_rate: f64,
    pub grade_scale: GradeScale,
    pub archetypes: Archetypes,
    pub seed: u64,
}

impl SynthConfig {
    /// 300 students over 14 weeks with 40% failing, graded 1 to 6.
    pub fn flipped(seed: u64) -> Self {
        SynthConfig {
            course_id: "flipped-synth".into(),
            n_students: 300,
            n_weeks: 14,
            videos_per_week: (2, 4),
            quizzes_per_week: (1, 2),
            confounded_fraction: 0.0,
            confounder_strength: 1.0,
            fail_rate: 0.40,
            grade_scale: GradeScale::OneToSix,
            archetypes: Archetypes::default(),
            seed,
        }
    }

    /// 2400 students over 6 weeks with 47% failing, graded 0 to 100.
    pub fn mooc(seed: u64) -> Self {
        SynthConfig {
            course_id: "mooc-synth".into(),
            n_students: 2400,
            n_weeks: 6,
            videos_per_week: (3, 6),
            quizzes_per_week: (1, 3),
            confounded_fraction: 0.0,
            confounder_strength: 1.0,
            fail_rate: 0.47,
            grade_scale: GradeScale::ZeroToHundred,
            archetypes: Archetypes::default(),
            seed,
        }
    }

    pub fn with_confounding(mut self, fraction: f64) -> Self {
        self.confounded_fraction = fraction;
        self
    }

    pub fn pass_rule(&self) -> PassRule {
        match self.grade_scale {
            GradeScale::OneToSix => PassRule::FLIPPED,
            GradeScale::ZeroToHundred => PassRule::MOOC,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("confounded_fraction", self.confounded_fraction)?;
        unit("confounder_strength", self.confounder_strength)?;
        unit("fail_rate", self.fail_rate)?;
        unit("pass_engagement", self.archetypes.pass_engagement)?;
        unit("fail_engagement", self.archetypes.fail_engagement)?;
        if self.n_students < MIN_STUDENTS {
            return Err(Error::Config(format!(
                "n_students must be at least {MIN_STUDENTS}, got {}",
                self.n_students
            )));
        }
        if self.n_weeks == 0 {
            return Err(Error::Config("n_weeks must be positive".into()));
        }
        for (name, (lo, hi)) in [("videos_per_week", self.videos_per_week), ("quizzes_per_week", self.quizzes_per_week)] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} must be a nonempty positive range, got {lo}..={hi}")));
            }
        }
        if !(self.archetypes.engagement_sd >= 0.0 && self.archetypes.style_sd >= 0.0 && self.archetypes.sessions_per_week >= 0.0) {
            return Err(Error::Config("archetype spreads must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentTrait {
    pub user_id: String,
    /// 1 when the student carries the confounder.
    pub prior_knowledge: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCourse {
    pub schedule: CourseSchedule,
    /// Sorted by user, then timestamp.
    pub events: Vec<ClickEvent>,
    pub outcomes: Vec<Outcome>,
    pub latent: Vec<LatentTrait>,
    pub demographics: BTreeMap<String, Demographics>,
}

impl SyntheticCourse {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_events(std::fs::File::create(dir.join(EVENTS_FILE))?, &self.events)?;
        std::fs::write(dir.join(SCHEDULE_FILE), self.schedule.to_json()? + "\n")?;
        write_outcomes(std::fs::File::create(dir.join(OUTCOMES_FILE))?, &self.outcomes)?;
        write_latent(std::fs::File::create(dir.join(LATENT_FILE))?, &self.latent)?;
        write_demographics(std::fs::File::create(dir.join(DEMOGRAPHICS_FILE))?, &self.demographics)?;
        Ok(())
    }
}

pub fn write_latent<W: Write>(sink: W, rows: &[LatentTrait]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(LATENT_HEADER)?;
    for r in rows {
        w.write_record([r.user_id.as_str(), &r.prior_knowledge.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_latent<R: Read>(source: R) -> Result<Vec<LatentTrait>> {
    eventlog::read_rows(source, &LATENT_HEADER, |line, rec| {
        let prior_knowledge = match rec[1].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::row(
                    line,
                    format!("field `prior_knowledge`: expected 0 or 1, got `{other}`"),
                ))
            }
        };
        Ok(LatentTrait {
            user_id: rec[0].trim().to_string(),
            prior_knowledge,
        })
    })
}

/// Students carrying the confounder, i.e. the designed unknown-unknown candidates.
pub fn describe_ground_truth(latent: &[LatentTrait]) -> Vec<String> {
    latent
        .iter()
        .filter(|t| t.prior_knowledge == 1)
        .map(|t| t.user_id.clone())
        .collect()
}

fn course_start() -> DateTime<Utc> {
    // a Monday, so weeks line up with calendar weeks
    Utc.with_ymd_and_hms(2024, 9, 2, 0, 0, 0).unwrap()
}

fn build_schedule(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> CourseSchedule {
    let weeks = (1..=cfg.n_weeks)
        .map(|w| {
            let n_videos = rng.random_range(cfg.videos_per_week.0..=cfg.videos_per_week.1);
            let n_quizzes = rng.random_range(cfg.quizzes_per_week.0..=cfg.quizzes_per_week.1);
            WeekPlan {
                videos: (1..=n_videos).map(|i| format!("v{w:02}_{i}")).collect(),
                quizzes: (1..=n_quizzes).map(|i| format!("q{w:02}_{i}")).collect(),
            }
        })
        .collect();
    CourseSchedule {
        course_id: cfg.course_id.clone(),
        start: course_start(),
        weeks,
        pass_rule: cfg.pass_rule(),
    }
}

fn draw_grade(scale: GradeScale, fail: bool, rng: &mut ChaCha8Rng) -> f64 {
    match (scale, fail) {
        (GradeScale::OneToSix, true) => 1.0 + 0.5 * rng.random_range(0..=5) as f64,
        (GradeScale::OneToSix, false) => 4.0 + 0.5 * rng.random_range(0..=4) as f64,
        (GradeScale::ZeroToHundred, true) => rng.random_range(0..=59) as f64,
        (GradeScale::ZeroToHundred, false) => rng.random_range(60..=100) as f64,
    }
}

/// Exponential gap in whole seconds, clamped so that a session never breaks apart.
fn gap(rng: &mut ChaCha8Rng, mean_s: f64, min_s: i64, max_s: i64) -> Duration {
    let raw = Exp::new(1.0 / mean_s).expect("positive mean").sample(rng);
    Duration::seconds((raw as i64).clamp(min_s, max_s))
}

struct SessionPlan {
    videos: Vec<String>,
    quizzes: Vec<String>,
}

/// Behaviors that each get their own per-student deviation from the archetype engagement.
#[derive(Clone, Copy)]
enum Habit {
    Active,
    Sessions,
    Watch,
    CatchUp,
    Ahead,
    Quiz,
    Checks,
    Skip,
    Segments,
    Pace,
    Seek,
    Stop,
    Regular,
}

const N_HABITS: usize = 13;

struct StudentPlan<'a> {
    user_id: &'a str,
    habits: [f64; N_HABITS],
    preferred_hour: u32,
}

impl StudentPlan<'_> {
    fn level(&self, habit: Habit) -> f64 {
        self.habits[habit as usize]
    }
}

fn watch_video(plan: &StudentPlan, video: &str, t: &mut DateTime<Utc>, rng: &mut ChaCha8Rng, out: &mut Vec<ClickEvent>) {
    let mut push = |action: Action, t: DateTime<Utc>| {
        out.push(ClickEvent {
            user_id: plan.user_id.to_string(),
            action,
            object_id: video.to_string(),
            timestamp: t,
        })
    };
    push(Action::VideoLoad, *t);
    *t += gap(rng, 12.0, 2, 90);
    if rng.random_bool(0.12 * (1.0 - plan.level(Habit::Skip)) + 0.02) {
        return;
    }
    push(Action::VideoPlay, *t);
    let segments = Poisson::new(0.5 + 2.5 * plan.level(Habit::Segments)).expect("positive rate").sample(rng) as usize;
    for _ in 0..segments.min(8) {
        let pace = plan.level(Habit::Pace);
        let seek = plan.level(Habit::Seek);
        *t += gap(rng, 90.0 + 180.0 * pace, 5, 900);
        let roll: f64 = rng.random();
        if roll < 0.35 {
            push(Action::VideoPause, *t);
            *t += gap(rng, 40.0 + 60.0 * pace, 3, 600);
            push(Action::VideoPlay, *t);
        } else if roll < 0.35 + 0.3 * seek {
            push(Action::VideoSeekBackward, *t);
        } else if roll < 0.65 + 0.1 * seek {
            push(Action::VideoSeekForward, *t);
        } else {
            push(Action::VideoSpeedChange, *t);
        }
    }
    *t += gap(rng, 120.0 + 200.0 * plan.level(Habit::Pace), 10, 900);
    if rng.random_bool(0.35 + 0.6 * plan.level(Habit::Stop)) {
        push(Action::VideoStop, *t);
    }
    *t += gap(rng, 20.0, 2, 300);
}

fn run_session(plan: &StudentPlan, session: &SessionPlan, start: DateTime<Utc>, rng: &mut ChaCha8Rng, out: &mut Vec<ClickEvent>) {
    let mut t = start;
    for video in &session.videos {
        watch_video(plan, video, &mut t, rng, out);
    }
    for quiz in &session.quizzes {
        let checks = 1 + Poisson::new(0.3 + 2.0 * plan.level(Habit::Checks)).expect("positive rate").sample(rng) as usize;
        for _ in 0..checks.min(8) {
            out.push(ClickEvent {
                user_id: plan.user_id.to_string(),
                action: Action::ProblemCheck,
                object_id: quiz.clone(),
                timestamp: t,
            });
            t += gap(rng, 90.0 + 120.0 * plan.level(Habit::Pace), 10, 900);
        }
    }
}

fn simulate_student(
    plan: &StudentPlan,
    schedule: &CourseSchedule,
    sessions_per_week: f64,
    timeout_s: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<ClickEvent> {
    let n_weeks = schedule.weeks.len();
    let mut events = Vec::new();
    for (w, week) in schedule.weeks.iter().enumerate() {
        if !rng.random_bool(0.35 + 0.65 * plan.level(Habit::Active)) {
            continue;
        }
        let mut videos: Vec<String> = week
            .videos
            .iter()
            .filter(|_| rng.random_bool(0.15 + 0.8 * plan.level(Habit::Watch)))
            .cloned()
            .collect();
        if w > 0 && rng.random_bool(0.6 * (1.0 - plan.level(Habit::CatchUp))) {
            // catching up on an earlier week
            let back = rng.random_range(0..w);
            videos.push(schedule.weeks[back].videos.choose(rng).expect("nonempty week").clone());
        }
        if w + 1 < n_weeks && rng.random_bool(0.45 * plan.level(Habit::Ahead)) {
            videos.push(schedule.weeks[w + 1].videos[0].clone());
        }
        let mut quizzes: Vec<String> = week
            .quizzes
            .iter()
            .filter(|_| rng.random_bool(0.15 + 0.8 * plan.level(Habit::Quiz)))
            .cloned()
            .collect();
        if w > 0 && rng.random_bool(0.4 * (1.0 - plan.level(Habit::CatchUp))) {
            quizzes.push(schedule.weeks[w - 1].quizzes[0].clone());
        }
        if videos.is_empty() && quizzes.is_empty() {
            continue;
        }

        let extra = Poisson::new(0.2 + sessions_per_week * plan.level(Habit::Sessions)).expect("positive rate").sample(rng) as usize;
        let n_sessions = (1 + extra).min(6);
        // days drawn with replacement, so a day can hold several sessions
        let mut days: Vec<i64> = (0..n_sessions).map(|_| rng.random_range(0..6)).collect();
        days.sort_unstable();
        let mut sessions: Vec<SessionPlan> = (0..n_sessions)
            .map(|_| SessionPlan {
                videos: Vec::new(),
                quizzes: Vec::new(),
            })
            .collect();
        for (i, v) in videos.into_iter().enumerate() {
            sessions[i % n_sessions].videos.push(v);
        }
        // quizzes go to the later sessions of the week
        for (i, q) in quizzes.into_iter().enumerate() {
            sessions[n_sessions - 1 - i % n_sessions].quizzes.push(q);
        }
        let week_start = schedule.week_start(w as u32 + 1);
        let latest_start = week_start + Duration::days(6) + Duration::hours(18);
        let mut earliest = week_start;
        for (session, day) in sessions.iter().zip(days) {
            if session.videos.is_empty() && session.quizzes.is_empty() {
                continue;
            }
            let hour = if rng.random_bool(plan.level(Habit::Regular)) {
                (plan.preferred_hour as i64 + rng.random_range(-1..=1)).clamp(7, 21)
            } else {
                rng.random_range(7..=21)
            };
            let planned = week_start + Duration::days(day) + Duration::hours(hour) + Duration::seconds(rng.random_range(0..3600));
            let start = planned.max(earliest + Duration::seconds(rng.random_range(0..5400)));
            if start > latest_start {
                break;
            }
            let before = events.len();
            run_session(plan, session, start, rng, &mut events);
            if let Some(last) = events[before..].last() {
                earliest = last.timestamp + Duration::seconds(timeout_s + 1);
            }
        }
    }
    events
}

/// Generates a course; identical configurations give identical output.
pub fn generate_course(cfg: &SynthConfig) -> Result<SyntheticCourse> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule = build_schedule(cfg, &mut rng);
    let n = cfg.n_students;
    let width = n.to_string().len().max(4);
    let users: Vec<String> = (1..=n).map(|i| format!("s{i:0width$}")).collect();

    let n_fail = (cfg.fail_rate * n as f64).round() as usize;
    let mut fails: Vec<bool> = (0..n).map(|i| i < n_fail).collect();
    fails.shuffle(&mut rng);

    let rule = cfg.pass_rule();
    let arch = cfg.archetypes;
    let students: Vec<(Vec<ClickEvent>, Outcome, LatentTrait, Demographics)> = users
        .par_iter()
        .zip(fails.par_iter())
        .enumerate()
        .map(|(i, (user_id, &fail))| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let confounded = rng.random_bool(cfg.confounded_fraction);
            let contradicts = confounded && rng.random_bool(cfg.confounder_strength);
            let behaves_as_fail = fail != contradicts;
            let mean = if behaves_as_fail {
                arch.fail_engagement
            } else {
                arch.pass_engagement
            };
            let engagement = Normal::new(mean, arch.engagement_sd)
                .expect("finite spread")
                .sample(&mut rng);
            let style = Normal::new(0.0, arch.style_sd).expect("finite spread");
            let mut habits = [0.0; N_HABITS];
            for h in &mut habits {
                *h = (engagement + style.sample(&mut rng)).clamp(0.02, 0.98);
            }
            let plan = StudentPlan {
                user_id,
                habits,
                preferred_hour: rng.random_range(8..=20),
            };
            let events = simulate_student(&plan, &schedule, arch.sessions_per_week, eventlog::DEFAULT_SESSION_TIMEOUT_S, &mut rng);
            let grade = draw_grade(cfg.grade_scale, fail, &mut rng);
            let demographics = Demographics {
                gender: GENDERS[rng.random_range(0..GENDERS.len())].to_string(),
                provenience: PROVENIENCES[rng.random_range(0..PROVENIENCES.len())].to_string(),
            };
            (
                events,
                Outcome {
                    user_id: user_id.clone(),
                    grade,
                    y: rule.label(grade),
                },
                LatentTrait {
                    user_id: user_id.clone(),
                    prior_knowledge: u8::from(confounded),
                },
                demographics,
            )
        })
        .collect();

    let course_end = schedule.week_start(schedule.n_weeks() + 1);
    let mut events = Vec::new();
    let mut outcomes = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut demographics = BTreeMap::new();
    for (mut ev, outcome, trait_, demo) in students {
        ev.sort_by_key(|e| e.timestamp);
        // a long final session may run past the last week
        ev.retain(|e| e.timestamp < course_end);
        demographics.insert(outcome.user_id.clone(), demo);
        events.append(&mut ev);
        outcomes.push(outcome);
        latent.push(trait_);
    }
    Ok(SyntheticCourse {
        schedule,
        events,
        outcomes,
        latent,
        demographics,
    })
}
