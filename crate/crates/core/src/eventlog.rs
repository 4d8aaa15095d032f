//! Clickstream logs, course schedules and final outcomes.
//!
//! Events are read from a four-column CSV (`user_id,action,object_id,timestamp`).
//! Timestamps are normalized to UTC with second precision at parse time.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EVENTS_HEADER: [&str; 4] = ["user_id", "action", "object_id", "timestamp"];
pub const OUTCOMES_HEADER: [&str; 2] = ["user_id", "grade"];

/// Default gap (seconds) that closes a session.
pub const DEFAULT_SESSION_TIMEOUT_S: i64 = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    VideoPlay,
    VideoPause,
    VideoStop,
    VideoSeekBackward,
    VideoSeekForward,
    VideoSpeedChange,
    VideoLoad,
    ProblemCheck,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::VideoPlay,
        Action::VideoPause,
        Action::VideoStop,
        Action::VideoSeekBackward,
        Action::VideoSeekForward,
        Action::VideoSpeedChange,
        Action::VideoLoad,
        Action::ProblemCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::VideoPlay => "Video.Play",
            Action::VideoPause => "Video.Pause",
            Action::VideoStop => "Video.Stop",
            Action::VideoSeekBackward => "Video.SeekBackward",
            Action::VideoSeekForward => "Video.SeekForward",
            Action::VideoSpeedChange => "Video.SpeedChange",
            Action::VideoLoad => "Video.Load",
            Action::ProblemCheck => "Problem.Check",
        }
    }

    pub fn is_video(self) -> bool {
        !matches!(self, Action::ProblemCheck)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickEvent {
    pub user_id: String,
    pub action: Action,
    pub object_id: String,
    pub timestamp: DateTime<Utc>,
}

pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let parsed = DateTime::parse_from_rfc3339(raw.trim()).ok()?;
    parsed.with_timezone(&Utc).with_nanosecond(0)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let matches = found.len() == expected.len()
        && found.iter().zip(expected).all(|(f, e)| f.trim() == *e);
    if matches {
        Ok(())
    } else {
        Err(Error::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

pub(crate) fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

/// Reads a header-checked CSV and hands each row (with its 1-based line number) to `row`.
pub(crate) fn read_rows<R, T, F>(source: R, header: &[&str], mut row: F) -> Result<Vec<T>>
where
    R: Read,
    F: FnMut(u64, &csv::StringRecord) -> Result<T>,
{
    let mut reader = csv_reader(source);
    check_header(reader.headers()?, header)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::row(line, e.to_string())
        })?;
        let line = line_of(&record);
        if record.len() != header.len() {
            return Err(Error::row(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        out.push(row(line, &record)?);
    }
    Ok(out)
}

/// Parses an events CSV, preserving input order.
pub fn parse_events<R: Read>(source: R) -> Result<Vec<ClickEvent>> {
    read_rows(source, &EVENTS_HEADER, |line, rec| {
        let user_id = rec[0].trim();
        if user_id.is_empty() {
            return Err(Error::row(line, "field `user_id` is empty"));
        }
        let action = rec[1]
            .trim()
            .parse::<Action>()
            .map_err(|e| Error::row(line, format!("field `action`: {e}")))?;
        let timestamp = parse_timestamp(&rec[3]).ok_or_else(|| {
            Error::row(line, format!("field `timestamp`: invalid ISO-8601 `{}`", &rec[3]))
        })?;
        Ok(ClickEvent {
            user_id: user_id.to_string(),
            action,
            object_id: rec[2].trim().to_string(),
            timestamp,
        })
    })
}

pub fn write_events<W: Write>(sink: W, events: &[ClickEvent]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(EVENTS_HEADER)?;
    for e in events {
        writer.write_record([
            e.user_id.as_str(),
            e.action.as_str(),
            e.object_id.as_str(),
            &format_timestamp(&e.timestamp),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Groups events by user, each stream sorted by timestamp with input order as tiebreak.
pub fn group_by_user(events: &[ClickEvent]) -> BTreeMap<String, Vec<ClickEvent>> {
    let mut by_user: BTreeMap<String, Vec<ClickEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user_id.clone()).or_default().push(e.clone());
    }
    for stream in by_user.values_mut() {
        // sort_by_key is stable
        stream.sort_by_key(|e| e.timestamp);
    }
    by_user
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub events: Vec<ClickEvent>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Session {
    pub fn duration_s(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }
}

/// Splits each user's stream into sessions; a gap of at least `timeout_s` opens a new one.
///
/// Streams of different users may be interleaved in the input; each user's
/// own events must already be in time order. Output is ordered by user, then start.
pub fn sessionize(events: &[ClickEvent], timeout_s: i64) -> Vec<Session> {
    let mut per_user: BTreeMap<&str, Vec<&ClickEvent>> = BTreeMap::new();
    for e in events {
        per_user.entry(e.user_id.as_str()).or_default().push(e);
    }
    let mut sessions = Vec::new();
    for (user, stream) in per_user {
        let mut current: Vec<ClickEvent> = Vec::new();
        for e in stream {
            if let Some(last) = current.last() {
                if (e.timestamp - last.timestamp).num_seconds() >= timeout_s {
                    sessions.push(close_session(user, std::mem::take(&mut current)));
                }
            }
            current.push(e.clone());
        }
        if !current.is_empty() {
            sessions.push(close_session(user, current));
        }
    }
    sessions
}

fn close_session(user: &str, events: Vec<ClickEvent>) -> Session {
    let start = events[0].timestamp;
    let end = events[events.len() - 1].timestamp;
    Session {
        user_id: user.to_string(),
        events,
        start,
        end,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradeScale {
    #[serde(rename = "1-6")]
    OneToSix,
    #[serde(rename = "0-100")]
    ZeroToHundred,
}

impl GradeScale {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            GradeScale::OneToSix => (1.0, 6.0),
            GradeScale::ZeroToHundred => (0.0, 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRule {
    pub scale: GradeScale,
    pub pass_at: f64,
}

impl PassRule {
    pub const FLIPPED: PassRule = PassRule {
        scale: GradeScale::OneToSix,
        pass_at: 4.0,
    };
    pub const MOOC: PassRule = PassRule {
        scale: GradeScale::ZeroToHundred,
        pass_at: 60.0,
    };

    /// 1 = fail, 0 = pass.
    pub fn label(&self, grade: f64) -> u8 {
        u8::from(grade < self.pass_at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct WeekPlan {
    pub videos: Vec<String>,
    pub quizzes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseSchedule {
    pub course_id: String,
    #[serde(
        serialize_with = "serialize_instant",
        deserialize_with = "deserialize_instant"
    )]
    pub start: DateTime<Utc>,
    pub weeks: Vec<WeekPlan>,
    pub pass_rule: PassRule,
}

fn serialize_instant<S: serde::Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_timestamp(ts))
}

fn deserialize_instant<'de, D: serde::Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    let raw = String::deserialize(d)?;
    parse_timestamp(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid instant `{raw}`")))
}

/// Kind of a scheduled object, with the 1-based week it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduledObject {
    Video { week: u32 },
    Quiz { week: u32 },
}

impl CourseSchedule {
    pub fn n_weeks(&self) -> u32 {
        self.weeks.len() as u32
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let schedule: CourseSchedule = serde_json::from_str(raw)?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weeks.is_empty() {
            return Err(Error::Schedule("course has no weeks".into()));
        }
        let (lo, hi) = self.pass_rule.scale.bounds();
        if !(lo..=hi).contains(&self.pass_rule.pass_at) {
            return Err(Error::Schedule(format!(
                "pass_at {} outside grade scale [{lo}, {hi}]",
                self.pass_rule.pass_at
            )));
        }
        let mut videos = HashSet::new();
        let mut quizzes = HashSet::new();
        for week in &self.weeks {
            for v in &week.videos {
                if !videos.insert(v.as_str()) {
                    return Err(Error::Schedule(format!("video `{v}` scheduled twice")));
                }
            }
            for q in &week.quizzes {
                if !quizzes.insert(q.as_str()) {
                    return Err(Error::Schedule(format!("quiz `{q}` scheduled twice")));
                }
            }
        }
        Ok(())
    }

    /// Object id lookup table: id -> (kind, week).
    pub fn index(&self) -> ScheduleIndex {
        let mut videos = BTreeMap::new();
        let mut quizzes = BTreeMap::new();
        for (i, week) in self.weeks.iter().enumerate() {
            let w = i as u32 + 1;
            for v in &week.videos {
                videos.insert(v.clone(), w);
            }
            for q in &week.quizzes {
                quizzes.insert(q.clone(), w);
            }
        }
        ScheduleIndex { videos, quizzes }
    }

    pub fn week_start(&self, week: u32) -> DateTime<Utc> {
        self.start + Duration::days(7 * (i64::from(week) - 1))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScheduleIndex {
    pub videos: BTreeMap<String, u32>,
    pub quizzes: BTreeMap<String, u32>,
}

impl ScheduleIndex {
    pub fn video_week(&self, id: &str) -> Option<u32> {
        self.videos.get(id).copied()
    }

    pub fn quiz_week(&self, id: &str) -> Option<u32> {
        self.quizzes.get(id).copied()
    }
}

/// Course week (1-based) of an instant; `None` before the start or after the last week.
pub fn week_of(timestamp: DateTime<Utc>, schedule: &CourseSchedule) -> Option<u32> {
    let offset = (timestamp - schedule.start).num_seconds();
    if offset < 0 {
        return None;
    }
    let week = offset / (7 * 24 * 3600) + 1;
    u32::try_from(week)
        .ok()
        .filter(|w| *w <= schedule.n_weeks())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub user_id: String,
    pub grade: f64,
    /// 1 = fail, 0 = pass.
    pub y: u8,
}

pub fn parse_outcomes<R: Read>(source: R, rule: &PassRule) -> Result<Vec<Outcome>> {
    let (lo, hi) = rule.scale.bounds();
    read_rows(source, &OUTCOMES_HEADER, |line, rec| {
        let grade: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, format!("field `grade`: not a number `{}`", &rec[1])))?;
        if !(lo..=hi).contains(&grade) {
            return Err(Error::row(
                line,
                format!("field `grade`: {grade} outside scale [{lo}, {hi}]"),
            ));
        }
        Ok(Outcome {
            user_id: rec[0].trim().to_string(),
            grade,
            y: rule.label(grade),
        })
    })
}

pub fn write_outcomes<W: Write>(sink: W, outcomes: &[Outcome]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(OUTCOMES_HEADER)?;
    for o in outcomes {
        writer.write_record([o.user_id.as_str(), &format!("{}", o.grade)])?;
    }
    writer.flush()?;
    Ok(())
}
