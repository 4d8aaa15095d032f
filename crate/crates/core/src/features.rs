//! Weekly behavioral indicators and the course-averaged student vector.
//!
//! The registry holds 45 indicators in four dimensions: control (F01-F22),
//! effort (F23-F35), proactivity (F36-F42) and regularity (F43-F45).
//! Each indicator is evaluated on one user-week of events plus the schedule.
//! Gap-based indicators only look at consecutive events inside one session.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventlog::{
    self, week_of, Action, ClickEvent, CourseSchedule, ScheduleIndex, Session,
};

pub const N_INDICATORS: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Control,
    Effort,
    Proactivity,
    Regularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorDef {
    pub id: &'static str,
    pub name: &'static str,
    pub dimension: Dimension,
    pub formula: &'static str,
}

const fn def(
    id: &'static str,
    name: &'static str,
    dimension: Dimension,
    formula: &'static str,
) -> IndicatorDef {
    IndicatorDef {
        id,
        name,
        dimension,
        formula,
    }
}

use Dimension::{Control, Effort, Proactivity, Regularity};

pub static REGISTRY: [IndicatorDef; N_INDICATORS] = [
    def("F01", "TimeOnVideo", Control, "sum of in-session gaps following video events (s)"),
    def("F02", "AvgWatchedWeeklyProp", Control, "distinct scheduled-this-week videos played / videos scheduled this week"),
    def("F03", "ReplayWeeklyProp", Control, "distinct videos played at least twice / distinct videos played"),
    def("F04", "InterruptWeeklyProp", Control, "distinct played videos with a pause or stop / distinct videos played"),
    def("F05", "SeekBackwardPerVideo", Control, "Video.SeekBackward count / distinct videos played"),
    def("F06", "SeekForwardPerVideo", Control, "Video.SeekForward count / distinct videos played"),
    def("F07", "PausePerVideo", Control, "Video.Pause count / distinct videos played"),
    def("F08", "SpeedChangePerVideo", Control, "Video.SpeedChange count / distinct videos played"),
    def("F09", "MeanTimeAfterVideoEvent", Control, "mean in-session gap following a video event (s)"),
    def("F10", "FrequencyEventPlay", Control, "Video.Play count / video events"),
    def("F11", "FrequencyEventPause", Control, "Video.Pause count / video events"),
    def("F12", "FrequencyEventStop", Control, "Video.Stop count / video events"),
    def("F13", "FrequencyEventSeekBackward", Control, "Video.SeekBackward count / video events"),
    def("F14", "FrequencyEventSeekForward", Control, "Video.SeekForward count / video events"),
    def("F15", "FrequencyEventSpeedChange", Control, "Video.SpeedChange count / video events"),
    def("F16", "StdTimeAfterVideoEvent", Control, "population std of in-session gaps following video events (s)"),
    def("F17", "MeanTimeAfterPlay", Control, "mean in-session gap following Video.Play (s)"),
    def("F18", "MeanTimeAfterPause", Control, "mean in-session gap following Video.Pause (s)"),
    def("F19", "MaxTimeAfterPlay", Control, "max in-session gap following Video.Play (s)"),
    def("F20", "VideoEventsPerSession", Control, "video events / sessions started this week"),
    def("F21", "LoadedNotPlayedProp", Control, "distinct videos loaded but not played / distinct videos loaded"),
    def("F22", "SeekBackwardShare", Control, "Video.SeekBackward / (SeekBackward + SeekForward)"),
    def("F23", "TotalClicksWeekday", Effort, "events on Monday-Friday"),
    def("F24", "WeekendClickProp", Effort, "events on Saturday-Sunday / events"),
    def("F25", "NumberSessions", Effort, "sessions started this week"),
    def("F26", "TotalSessionTime", Effort, "sum of durations of sessions started this week (s)"),
    def("F27", "MeanSessionTime", Effort, "mean duration of sessions started this week (s)"),
    def("F28", "MaxSessionTime", Effort, "max duration of sessions started this week (s)"),
    def("F29", "TotalClicksProblem", Effort, "Problem.Check events"),
    def("F30", "TotalClicksVideo", Effort, "video events"),
    def("F31", "ActiveDays", Effort, "distinct calendar days with events"),
    def("F32", "ClicksPerSession", Effort, "events / sessions started this week"),
    def("F33", "ChecksPerQuiz", Effort, "Problem.Check events / distinct quizzes attempted"),
    def("F34", "MeanTimeBetweenSessions", Effort, "mean gap from a session end to the next session start (s)"),
    def("F35", "MaxDailyClicks", Effort, "max events on a single day"),
    def("F36", "CompetencyAlignment", Proactivity, "distinct scheduled-this-week quizzes checked this week"),
    def("F37", "CompetencyAnticipation", Proactivity, "distinct future-week quizzes checked this week"),
    def("F38", "ContentAlignment", Proactivity, "distinct scheduled-this-week videos played this week"),
    def("F39", "ContentAnticipation", Proactivity, "distinct future-week videos played this week"),
    def("F40", "ContentCatchUpProp", Proactivity, "distinct past-week videos played / distinct videos played"),
    def("F41", "MeanLectureDelay", Proactivity, "mean days from a video's scheduled week start to its play, over current or past videos"),
    def("F42", "AnticipationPlayProp", Proactivity, "plays of future-week videos / plays"),
    def("F43", "WeekdayEntropy", Regularity, "Shannon entropy (bits) of events over weekdays"),
    def("F44", "HourEntropy", Regularity, "Shannon entropy (bits) of events over hours of day"),
    def("F45", "WeeklyProfileSimilarity", Regularity, "cosine similarity of this and last week's weekday profiles"),
];

pub fn registry() -> &'static [IndicatorDef] {
    &REGISTRY
}

pub fn indicator_index(id: &str) -> Option<usize> {
    REGISTRY.iter().position(|d| d.id == id)
}

pub fn indicator_ids() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|d| d.id)
}

/// One row per course week, raw values in registry order.
pub type WeeklyMatrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Events that fall before the course start or after its last week.
    pub out_of_range_events: usize,
    /// Referenced object ids missing from the schedule, with event counts.
    pub unknown_objects: BTreeMap<String, usize>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.out_of_range_events == 0 && self.unknown_objects.is_empty()
    }

    fn merge(&mut self, other: Diagnostics) {
        self.out_of_range_events += other.out_of_range_events;
        for (k, v) in other.unknown_objects {
            *self.unknown_objects.entry(k).or_default() += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: String,
    pub provenience: String,
}

pub const DEMOGRAPHICS_HEADER: [&str; 3] = ["user_id", "gender", "provenience"];

pub fn parse_demographics<R: Read>(source: R) -> Result<BTreeMap<String, Demographics>> {
    let rows = eventlog::read_rows(source, &DEMOGRAPHICS_HEADER, |_, rec| {
        Ok((
            rec[0].trim().to_string(),
            Demographics {
                gender: rec[1].trim().to_string(),
                provenience: rec[2].trim().to_string(),
            },
        ))
    })?;
    Ok(rows.into_iter().collect())
}

pub fn write_demographics<W: Write>(
    sink: W,
    rows: &BTreeMap<String, Demographics>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(DEMOGRAPHICS_HEADER)?;
    for (user, d) in rows {
        w.write_record([user.as_str(), &d.gender, &d.provenience])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentFeatureVector {
    pub user_id: String,
    pub weekly: WeeklyMatrix,
    /// Raw mean over course weeks.
    pub averaged: Vec<f64>,
    /// `averaged` after min-max normalization across students.
    pub v: Vec<f64>,
    pub demographics: Option<Demographics>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    count: usize,
    sum: f64,
    sum_sq: f64,
    max: f64,
}

impl Tally {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
        self.max = self.max.max(x);
    }

    fn mean(&self) -> f64 {
        ratio(self.sum, self.count as f64)
    }

    fn std(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0).sqrt()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn entropy_bits(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    ratio(dot, na * nb)
}

/// Per-week accumulator for one user.
#[derive(Debug, Default)]
struct WeekBin<'a> {
    events: Vec<&'a ClickEvent>,
    /// (gap seconds, action opening the gap) for in-session consecutive pairs.
    gaps: Vec<(f64, Action)>,
    sessions: Vec<&'a Session>,
}

/// Computes the raw weekly indicator matrix of one user.
///
/// `events` must all belong to the user and be in time order.
pub fn user_weekly_matrix(
    events: &[ClickEvent],
    schedule: &CourseSchedule,
    index: &ScheduleIndex,
    timeout_s: i64,
) -> (WeeklyMatrix, Diagnostics) {
    let n_weeks = schedule.n_weeks() as usize;
    let mut diag = Diagnostics::default();
    let sessions = eventlog::sessionize(events, timeout_s);
    let mut bins: Vec<WeekBin<'_>> = (0..n_weeks).map(|_| WeekBin::default()).collect();

    for e in events {
        match week_of(e.timestamp, schedule) {
            Some(w) => bins[w as usize - 1].events.push(e),
            None => diag.out_of_range_events += 1,
        }
        let known = if e.action.is_video() {
            index.video_week(&e.object_id).is_some()
        } else {
            index.quiz_week(&e.object_id).is_some()
        };
        if !known {
            *diag.unknown_objects.entry(e.object_id.clone()).or_default() += 1;
        }
    }
    for s in &sessions {
        if let Some(w) = week_of(s.start, schedule) {
            bins[w as usize - 1].sessions.push(s);
        }
        for pair in s.events.windows(2) {
            if let Some(w) = week_of(pair[0].timestamp, schedule) {
                let gap = (pair[1].timestamp - pair[0].timestamp).num_seconds() as f64;
                bins[w as usize - 1].gaps.push((gap, pair[0].action));
            }
        }
    }

    let mut matrix = Vec::with_capacity(n_weeks);
    let mut previous_profile = [0.0; 7];
    for (i, bin) in bins.iter().enumerate() {
        let week = i as u32 + 1;
        let (row, profile) = week_row(bin, week, schedule, index, &previous_profile);
        previous_profile = profile;
        matrix.push(row);
    }
    (matrix, diag)
}

fn week_row(
    bin: &WeekBin<'_>,
    week: u32,
    schedule: &CourseSchedule,
    index: &ScheduleIndex,
    previous_profile: &[f64; 7],
) -> (Vec<f64>, [f64; 7]) {
    let mut row = vec![0.0; N_INDICATORS];
    let mut action_counts: BTreeMap<Action, f64> = BTreeMap::new();
    let mut plays: BTreeMap<&str, usize> = BTreeMap::new();
    let mut interrupted: BTreeSet<&str> = BTreeSet::new();
    let mut loaded: BTreeSet<&str> = BTreeSet::new();
    let mut quizzes: BTreeSet<&str> = BTreeSet::new();
    let mut weekday = [0.0; 7];
    let mut hours = [0.0; 24];
    let mut days: BTreeMap<chrono::NaiveDate, f64> = BTreeMap::new();
    let mut delay = Tally::default();
    let mut future_plays = 0.0;

    for e in &bin.events {
        *action_counts.entry(e.action).or_default() += 1.0;
        let id = e.object_id.as_str();
        match e.action {
            Action::VideoPlay => {
                *plays.entry(id).or_default() += 1;
                if let Some(vw) = index.video_week(id) {
                    if vw > week {
                        future_plays += 1.0;
                    } else {
                        let lag = (e.timestamp - schedule.week_start(vw)).num_seconds();
                        delay.push(lag as f64 / 86_400.0);
                    }
                }
            }
            Action::VideoPause | Action::VideoStop => {
                interrupted.insert(id);
            }
            Action::VideoLoad => {
                loaded.insert(id);
            }
            Action::ProblemCheck => {
                quizzes.insert(id);
            }
            _ => {}
        }
        weekday[e.timestamp.weekday().num_days_from_monday() as usize] += 1.0;
        hours[e.timestamp.hour() as usize] += 1.0;
        *days.entry(e.timestamp.date_naive()).or_default() += 1.0;
    }

    let count = |a: Action| action_counts.get(&a).copied().unwrap_or(0.0);
    let n_events = bin.events.len() as f64;
    let n_video: f64 = Action::ALL
        .iter()
        .filter(|a| a.is_video())
        .map(|a| count(*a))
        .sum();
    let n_problem = count(Action::ProblemCheck);
    let n_played = plays.len() as f64;
    let scheduled_videos: BTreeSet<&str> = schedule.weeks[week as usize - 1]
        .videos
        .iter()
        .map(String::as_str)
        .collect();
    let played_this_week = plays
        .keys()
        .filter(|v| scheduled_videos.contains(*v))
        .count() as f64;
    let played_future = plays
        .keys()
        .filter(|v| index.video_week(v).is_some_and(|w| w > week))
        .count() as f64;
    let played_past = plays
        .keys()
        .filter(|v| index.video_week(v).is_some_and(|w| w < week))
        .count() as f64;

    let mut after_video = Tally::default();
    let mut after_play = Tally::default();
    let mut after_pause = Tally::default();
    for &(gap, action) in &bin.gaps {
        if action.is_video() {
            after_video.push(gap);
        }
        match action {
            Action::VideoPlay => after_play.push(gap),
            Action::VideoPause => after_pause.push(gap),
            _ => {}
        }
    }

    let n_sessions = bin.sessions.len() as f64;
    let mut durations = Tally::default();
    for s in &bin.sessions {
        durations.push(s.duration_s() as f64);
    }
    let mut between = Tally::default();
    for pair in bin.sessions.windows(2) {
        between.push((pair[1].start - pair[0].end).num_seconds() as f64);
    }

    let weekend = weekday[5] + weekday[6];
    let sb = count(Action::VideoSeekBackward);
    let sf = count(Action::VideoSeekForward);

    row[0] = after_video.sum;
    row[1] = ratio(played_this_week, scheduled_videos.len() as f64);
    row[2] = ratio(plays.values().filter(|n| **n >= 2).count() as f64, n_played);
    row[3] = ratio(
        plays.keys().filter(|v| interrupted.contains(*v)).count() as f64,
        n_played,
    );
    row[4] = ratio(sb, n_played);
    row[5] = ratio(sf, n_played);
    row[6] = ratio(count(Action::VideoPause), n_played);
    row[7] = ratio(count(Action::VideoSpeedChange), n_played);
    row[8] = after_video.mean();
    row[9] = ratio(count(Action::VideoPlay), n_video);
    row[10] = ratio(count(Action::VideoPause), n_video);
    row[11] = ratio(count(Action::VideoStop), n_video);
    row[12] = ratio(sb, n_video);
    row[13] = ratio(sf, n_video);
    row[14] = ratio(count(Action::VideoSpeedChange), n_video);
    row[15] = after_video.std();
    row[16] = after_play.mean();
    row[17] = after_pause.mean();
    row[18] = after_play.max;
    row[19] = ratio(n_video, n_sessions);
    row[20] = ratio(
        loaded.iter().filter(|v| !plays.contains_key(*v)).count() as f64,
        loaded.len() as f64,
    );
    row[21] = ratio(sb, sb + sf);

    row[22] = n_events - weekend;
    row[23] = ratio(weekend, n_events);
    row[24] = n_sessions;
    row[25] = durations.sum;
    row[26] = durations.mean();
    row[27] = durations.max;
    row[28] = n_problem;
    row[29] = n_video;
    row[30] = days.len() as f64;
    row[31] = ratio(n_events, n_sessions);
    row[32] = ratio(n_problem, quizzes.len() as f64);
    row[33] = between.mean();
    row[34] = days.values().copied().fold(0.0, f64::max);

    row[35] = quizzes
        .iter()
        .filter(|q| index.quiz_week(q) == Some(week))
        .count() as f64;
    row[36] = quizzes
        .iter()
        .filter(|q| index.quiz_week(q).is_some_and(|w| w > week))
        .count() as f64;
    row[37] = played_this_week;
    row[38] = played_future;
    row[39] = ratio(played_past, n_played);
    row[40] = delay.mean();
    row[41] = ratio(future_plays, count(Action::VideoPlay));

    row[42] = entropy_bits(&weekday);
    row[43] = entropy_bits(&hours);
    row[44] = if week > 1 {
        cosine(&weekday, previous_profile)
    } else {
        0.0
    };
    (row, weekday)
}

/// Raw weekly matrices for every user that has events, plus merged diagnostics.
pub fn compute_indicators(
    events: &[ClickEvent],
    schedule: &CourseSchedule,
    timeout_s: i64,
) -> (BTreeMap<String, WeeklyMatrix>, Diagnostics) {
    let index = schedule.index();
    let by_user = eventlog::group_by_user(events);
    let computed: Vec<(String, WeeklyMatrix, Diagnostics)> = by_user
        .into_par_iter()
        .map(|(user, stream)| {
            let (m, d) = user_weekly_matrix(&stream, schedule, &index, timeout_s);
            (user, m, d)
        })
        .collect();
    let mut diagnostics = Diagnostics::default();
    let mut out = BTreeMap::new();
    for (user, m, d) in computed {
        diagnostics.merge(d);
        out.insert(user, m);
    }
    (out, diagnostics)
}

/// Column means over all course weeks; inactive weeks count as zeros.
pub fn average_over_weeks(weekly: &[Vec<f64>]) -> Vec<f64> {
    let width = weekly.first().map_or(N_INDICATORS, Vec::len);
    let mut mean = vec![0.0; width];
    for row in weekly {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let n = weekly.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Per-feature (min, max) fitted on a training population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxStats {
    pub fn fit<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = &'a Vec<f64>>,
    {
        let mut iter = rows.into_iter();
        let Some(first) = iter.next() else {
            return MinMaxStats {
                min: Vec::new(),
                max: Vec::new(),
            };
        };
        let mut min = first.clone();
        let mut max = first.clone();
        for row in iter {
            for (j, x) in row.iter().enumerate() {
                min[j] = min[j].min(*x);
                max[j] = max[j].max(*x);
            }
        }
        MinMaxStats { min, max }
    }

    /// Scales into [0, 1], clipping values outside the fitted range; constant features map to 0.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, x)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    ((x - self.min[j]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Min-max normalizes rows column-wise and returns the fitted statistics.
pub fn normalize_minmax(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, MinMaxStats) {
    let stats = MinMaxStats::fit(rows);
    let out = rows.iter().map(|r| stats.transform(r)).collect();
    (out, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTable {
    pub ids: Vec<String>,
    /// Statistics of the course-averaged vectors.
    pub averaged: MinMaxStats,
    /// Statistics over all students and weeks.
    pub weekly: MinMaxStats,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub students: Vec<StudentFeatureVector>,
    pub normalization: NormalizationTable,
    pub diagnostics: Diagnostics,
}

/// Full feature extraction for the given roster.
///
/// Students in `roster` without events get all-zero weekly rows.
pub fn extract_features(
    events: &[ClickEvent],
    schedule: &CourseSchedule,
    roster: &[String],
    demographics: &BTreeMap<String, Demographics>,
    timeout_s: i64,
) -> FeatureSet {
    let (mut matrices, diagnostics) = compute_indicators(events, schedule, timeout_s);
    let n_weeks = schedule.n_weeks() as usize;
    let mut users: BTreeSet<String> = roster.iter().cloned().collect();
    if roster.is_empty() {
        users.extend(matrices.keys().cloned());
    }
    let mut students: Vec<StudentFeatureVector> = users
        .into_iter()
        .map(|user| {
            let weekly = matrices
                .remove(&user)
                .unwrap_or_else(|| vec![vec![0.0; N_INDICATORS]; n_weeks]);
            let averaged = average_over_weeks(&weekly);
            StudentFeatureVector {
                demographics: demographics.get(&user).cloned(),
                user_id: user,
                weekly,
                averaged,
                v: Vec::new(),
            }
        })
        .collect();
    let averaged = MinMaxStats::fit(students.iter().map(|s| &s.averaged));
    let weekly = MinMaxStats::fit(students.iter().flat_map(|s| s.weekly.iter()));
    students
        .par_iter_mut()
        .for_each(|s| s.v = averaged.transform(&s.averaged));
    FeatureSet {
        students,
        normalization: NormalizationTable {
            ids: indicator_ids().map(String::from).collect(),
            averaged,
            weekly,
        },
        diagnostics,
    }
}

pub fn write_weekly_csv<W: Write>(sink: W, students: &[StudentFeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["user_id".to_string(), "week".to_string()];
    header.extend(indicator_ids().map(String::from));
    w.write_record(&header)?;
    for s in students {
        for (i, row) in s.weekly.iter().enumerate() {
            let mut rec = vec![s.user_id.clone(), (i + 1).to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Row of the averaged+normalized feature export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user_id: String,
    pub v: Vec<f64>,
    pub demographics: Option<Demographics>,
}

impl From<&StudentFeatureVector> for FeatureRow {
    fn from(s: &StudentFeatureVector) -> Self {
        FeatureRow {
            user_id: s.user_id.clone(),
            v: s.v.clone(),
            demographics: s.demographics.clone(),
        }
    }
}

fn feature_header() -> Vec<String> {
    let mut header = vec!["user_id".to_string()];
    header.extend(indicator_ids().map(String::from));
    header.push("gender".into());
    header.push("provenience".into());
    header
}

pub fn write_feature_csv<W: Write>(sink: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(feature_header())?;
    for r in rows {
        let mut rec = vec![r.user_id.clone()];
        rec.extend(r.v.iter().map(|x| x.to_string()));
        match &r.demographics {
            Some(d) => {
                rec.push(d.gender.clone());
                rec.push(d.provenience.clone());
            }
            None => {
                rec.push(String::new());
                rec.push(String::new());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_feature_csv<R: Read>(source: R) -> Result<Vec<FeatureRow>> {
    let header = feature_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    eventlog::read_rows(source, &header, |line, rec| {
        let v = (1..=N_INDICATORS)
            .map(|j| {
                rec[j].trim().parse::<f64>().map_err(|_| {
                    Error::row(line, format!("field `{}`: not a number", header[j]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let gender = rec[N_INDICATORS + 1].trim();
        let provenience = rec[N_INDICATORS + 2].trim();
        let demographics = (!gender.is_empty() || !provenience.is_empty()).then(|| Demographics {
            gender: gender.to_string(),
            provenience: provenience.to_string(),
        });
        Ok(FeatureRow {
            user_id: rec[0].trim().to_string(),
            v,
            demographics,
        })
    })
}
