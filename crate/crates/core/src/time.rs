//! Timestamps and the 5-minute grid.
//!
//! All timestamps are UTC with second precision and are written as
//! `YYYY-MM-DDTHH:MM:SSZ`.

use chrono::{NaiveDateTime, TimeDelta};

pub type Timestamp = NaiveDateTime;

/// Grid step in minutes.
pub const GRID_STEP_MIN: i64 = 5;
/// Longest stay kept on the grid: 28 days.
pub const MAX_STAY_MIN: i64 = 28 * 24 * 60;
/// Maximum number of grid points (28 days / 5 minutes).
pub const MAX_GRID_POINTS: usize = (MAX_STAY_MIN / GRID_STEP_MIN) as usize;

const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    NaiveDateTime::parse_from_str(s.trim(), FORMAT).ok()
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.format(FORMAT).to_string()
}

/// Signed minutes from `from` to `to`, fractional for sub-minute offsets.
pub fn minutes_between(from: &Timestamp, to: &Timestamp) -> f64 {
    (*to - *from).num_seconds() as f64 / 60.0
}

pub fn add_minutes(t: &Timestamp, minutes: f64) -> Timestamp {
    *t + TimeDelta::seconds((minutes * 60.0).round() as i64)
}

/// Truncates to the enclosing 5-minute wall-clock boundary.
pub fn truncate_to_step(t: &Timestamp) -> Timestamp {
    let secs = t.and_utc().timestamp();
    let step = GRID_STEP_MIN * 60;
    let floored = secs.div_euclid(step) * step;
    chrono::DateTime::from_timestamp(floored, 0)
        .expect("in range")
        .naive_utc()
}

/// Index of the latest grid point at or before `t`; negative before the grid start.
pub fn grid_index_floor(start: &Timestamp, t: &Timestamp) -> i64 {
    let secs = (*t - *start).num_seconds();
    secs.div_euclid(GRID_STEP_MIN * 60)
}

pub fn grid_time(start: &Timestamp, index: usize) -> Timestamp {
    *start + TimeDelta::minutes(index as i64 * GRID_STEP_MIN)
}
