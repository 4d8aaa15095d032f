//! Confidence-based grouping of predictions at a trust level δ.
//!
//! * known known (0): `c >= δ` and the predicted label is right
//! * known unknown (1): `c < δ`, whatever the label
//! * unknown unknown (2): `c >= δ` and the predicted label is wrong

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalcv::Split;
use crate::eventlog;
use crate::models::{confidence, predicted_label, Prediction};

pub const DEFAULT_TRUST_LEVEL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TrustLevel(f64);

impl TrustLevel {
    pub fn new(delta: f64) -> Result<TrustLevel> {
        if delta > 0.0 && delta < 0.5 {
            Ok(TrustLevel(delta))
        } else {
            Err(Error::TrustLevel(delta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for TrustLevel {
    fn default() -> Self {
        TrustLevel(DEFAULT_TRUST_LEVEL)
    }
}

impl TryFrom<f64> for TrustLevel {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        TrustLevel::new(v)
    }
}

impl From<TrustLevel> for f64 {
    fn from(t: TrustLevel) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    KnownKnown,
    KnownUnknown,
    UnknownUnknown,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::KnownKnown, Group::KnownUnknown, Group::UnknownUnknown];

    pub fn code(self) -> u8 {
        match self {
            Group::KnownKnown => 0,
            Group::KnownUnknown => 1,
            Group::UnknownUnknown => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.code() == code)
    }

    pub fn short(self) -> &'static str {
        match self {
            Group::KnownKnown => "KK",
            Group::KnownUnknown => "KU",
            Group::UnknownUnknown => "UU",
        }
    }
}

/// Direction of a wrong prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDirection {
    /// Passed (y = 0) but predicted to fail.
    FalseFail,
    /// Failed (y = 1) but predicted to pass.
    FalsePass,
}

impl ErrorDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorDirection::FalseFail => "false_fail",
            ErrorDirection::FalsePass => "false_pass",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub user_id: String,
    pub group: Group,
    pub delta: f64,
    pub y: u8,
    pub p: f64,
    pub c: f64,
    pub direction: Option<ErrorDirection>,
}

/// Group of one prediction; the boundary `c == δ` counts as confident.
pub fn assign_group(y: u8, y_hat: u8, c: f64, delta: TrustLevel) -> Group {
    if c < delta.value() {
        Group::KnownUnknown
    } else if y_hat == y {
        Group::KnownKnown
    } else {
        Group::UnknownUnknown
    }
}

pub fn error_direction(y: u8, y_hat: u8) -> Option<ErrorDirection> {
    match (y, y_hat) {
        (0, 1) => Some(ErrorDirection::FalseFail),
        (1, 0) => Some(ErrorDirection::FalsePass),
        _ => None,
    }
}

pub fn assign(prediction: &Prediction, y: u8, delta: TrustLevel) -> GroupAssignment {
    GroupAssignment {
        user_id: prediction.user_id.clone(),
        group: assign_group(y, prediction.y_hat, prediction.c, delta),
        delta: delta.value(),
        y,
        p: prediction.p,
        c: prediction.c,
        direction: error_direction(y, prediction.y_hat),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Share {
    pub count: usize,
    pub fraction: f64,
}

impl Share {
    fn of(count: usize, total: usize) -> Share {
        Share {
            count,
            fraction: if total > 0 { count as f64 / total as f64 } else { 0.0 },
        }
    }
}

/// One group's share of a split, divided by the students' true outcome.
///
/// For unknown unknowns `passed` are false fails and `failed` are false passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupShare {
    pub total: Share,
    pub passed: Share,
    pub failed: Share,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPrevalence {
    pub n: usize,
    pub groups: BTreeMap<Group, GroupShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceSummary {
    pub delta: f64,
    pub splits: BTreeMap<Split, SplitPrevalence>,
}

impl PrevalenceSummary {
    pub fn fraction(&self, split: Split, group: Group) -> f64 {
        self.splits
            .get(&split)
            .and_then(|s| s.groups.get(&group))
            .map_or(0.0, |g| g.total.fraction)
    }
}

/// Counts groups per split; fractions are pooled over all rows of the split.
pub fn prevalence(rows: &[(Split, &GroupAssignment)]) -> Result<PrevalenceSummary> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Missing("no group assignments".into()))?;
    let mut tallies: BTreeMap<Split, BTreeMap<Group, (usize, usize)>> = BTreeMap::new();
    for (split, a) in rows {
        let cell = tallies
            .entry(*split)
            .or_default()
            .entry(a.group)
            .or_default();
        if a.y == 0 {
            cell.0 += 1;
        } else {
            cell.1 += 1;
        }
    }
    let splits = tallies
        .into_iter()
        .map(|(split, per_group)| {
            let n: usize = per_group.values().map(|(a, b)| a + b).sum();
            let groups = Group::ALL
                .into_iter()
                .map(|g| {
                    let (passed, failed) = per_group.get(&g).copied().unwrap_or_default();
                    (
                        g,
                        GroupShare {
                            total: Share::of(passed + failed, n),
                            passed: Share::of(passed, n),
                            failed: Share::of(failed, n),
                        },
                    )
                })
                .collect();
            (split, SplitPrevalence { n, groups })
        })
        .collect();
    Ok(PrevalenceSummary {
        delta: first.1.delta,
        splits,
    })
}

pub const ASSIGNMENTS_HEADER: [&str; 7] = ["user_id", "split", "y", "p", "c", "group", "direction"];

pub fn write_assignments<W: Write>(sink: W, rows: &[(Split, GroupAssignment)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ASSIGNMENTS_HEADER)?;
    for (split, a) in rows {
        w.write_record([
            a.user_id.as_str(),
            split.as_str(),
            &a.y.to_string(),
            &a.p.to_string(),
            &a.c.to_string(),
            &a.group.code().to_string(),
            a.direction.map_or("", ErrorDirection::as_str),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an assignments CSV; groups are recomputed from `p` at `delta` and must
/// agree with the stored group column.
pub fn parse_assignments<R: Read>(source: R, delta: TrustLevel) -> Result<Vec<(Split, GroupAssignment)>> {
    eventlog::read_rows(source, &ASSIGNMENTS_HEADER, |line, rec| {
        let split = Split::parse(rec[1].trim())
            .ok_or_else(|| Error::row(line, format!("field `split`: unknown `{}`", &rec[1])))?;
        let y: u8 = match rec[2].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::row(line, format!("field `y`: expected 0 or 1, found `{other}`"))),
        };
        let p: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| Error::row(line, "field `p`: not a number"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::row(line, format!("field `p`: {p} outside [0, 1]")));
        }
        let group = rec[5]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Group::from_code)
            .ok_or_else(|| Error::row(line, "field `group`: expected 0, 1 or 2"))?;
        let a = GroupAssignment {
            user_id: rec[0].trim().to_string(),
            group: assign_group(y, predicted_label(p), confidence(p), delta),
            delta: delta.value(),
            y,
            p,
            c: confidence(p),
            direction: error_direction(y, predicted_label(p)),
        };
        if a.group != group {
            return Err(Error::row(
                line,
                format!("field `group`: stored {} but δ={} gives {}", group.code(), delta.value(), a.group.code()),
            ));
        }
        Ok((split, a))
    })
}
