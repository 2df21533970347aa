//! Repair of manually entered sample times.
//!
//! A stay is only examined when its sample times contain a gap longer than
//! one day. Records whose sample time is more than a day away from their
//! enter time are then repaired by the first rule whose candidate lands
//! within a day of the enter time. Remaining long gaps at the stay
//! boundaries are resolved by the deletion rules.

use chrono::{Datelike, NaiveDate, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{AuditAction, AuditLog};
use crate::records::{PatientStay, RawRecord};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairAction {
    SetYear,
    SetMonth,
    SetDay,
    SwapMonthDay,
    SwapDigit,
    DeleteBefore,
    DeleteAfter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    /// Year differs, month agrees: take the enter year.
    YearMismatch,
    /// Same year, month differs, days within one: take the enter month.
    MonthMismatchNearDay,
    /// Months 11 apart across a new year: shift the year by one.
    MonthWrap,
    /// Month and day transposed.
    SwapMonthDay,
    /// Units digit of the month exchanged with the tens digit of the day.
    SwapDigit,
    /// Only the tens digit of the day differs.
    DayTensDigit,
    /// Entered at the end of month X, dated at the start of X-1 or X.
    MonthEnd,
    /// Leading segment is old history: sample span > 1 day, enter span < 6 h.
    /// Deletes its records before admission.
    DeleteHistory,
    /// Leading segment ending before admission with < 10% of records.
    DeleteLeading,
    /// Trailing segment with < 5% of records.
    DeleteTrailing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampRule {
    pub id: String,
    pub kind: RuleKind,
}

impl TimestampRule {
    pub fn new(id: &str, kind: RuleKind) -> Self {
        TimestampRule {
            id: id.to_string(),
            kind,
        }
    }

    pub fn action(&self) -> RepairAction {
        match self.kind {
            RuleKind::YearMismatch | RuleKind::MonthWrap => RepairAction::SetYear,
            RuleKind::MonthMismatchNearDay | RuleKind::MonthEnd => RepairAction::SetMonth,
            RuleKind::DayTensDigit => RepairAction::SetDay,
            RuleKind::SwapMonthDay => RepairAction::SwapMonthDay,
            RuleKind::SwapDigit => RepairAction::SwapDigit,
            RuleKind::DeleteHistory | RuleKind::DeleteLeading => RepairAction::DeleteBefore,
            RuleKind::DeleteTrailing => RepairAction::DeleteAfter,
        }
    }

    pub fn is_deletion(&self) -> bool {
        matches!(
            self.action(),
            RepairAction::DeleteBefore | RepairAction::DeleteAfter
        )
    }

    pub fn defaults() -> Vec<TimestampRule> {
        vec![
            TimestampRule::new("ts-year", RuleKind::YearMismatch),
            TimestampRule::new("ts-month-near", RuleKind::MonthMismatchNearDay),
            TimestampRule::new("ts-month-wrap", RuleKind::MonthWrap),
            TimestampRule::new("ts-swap-md", RuleKind::SwapMonthDay),
            TimestampRule::new("ts-swap-digit", RuleKind::SwapDigit),
            TimestampRule::new("ts-month-end", RuleKind::MonthEnd),
            TimestampRule::new("ts-day-tens", RuleKind::DayTensDigit),
            TimestampRule::new("ts-history", RuleKind::DeleteHistory),
            TimestampRule::new("ts-leading", RuleKind::DeleteLeading),
            TimestampRule::new("ts-trailing", RuleKind::DeleteTrailing),
        ]
    }
}

const DAY: TimeDelta = TimeDelta::days(1);

fn with_date(t: &Timestamp, y: i32, m: u32, d: u32) -> Option<Timestamp> {
    NaiveDate::from_ymd_opt(y, m, d).map(|date| date.and_time(t.time()))
}

fn is_last_day_of_month(d: NaiveDate) -> bool {
    d.succ_opt().map(|n| n.month() != d.month()).unwrap_or(false)
}

fn candidate(kind: RuleKind, s: &Timestamp, e: &Timestamp) -> Option<Timestamp> {
    let (sy, sm, sd) = (s.year(), s.month(), s.day());
    let (ey, em, ed) = (e.year(), e.month(), e.day());
    match kind {
        RuleKind::YearMismatch => (sy != ey && sm == em).then(|| with_date(s, ey, sm, sd)).flatten(),
        RuleKind::MonthMismatchNearDay => (sy == ey && sm != em && sd.abs_diff(ed) < 2)
            .then(|| with_date(s, sy, em, sd))
            .flatten(),
        RuleKind::MonthWrap => {
            if sm.abs_diff(em) != 11 {
                return None;
            }
            let year = if sm > em { sy - 1 } else { sy + 1 };
            with_date(s, year, sm, sd)
        }
        RuleKind::SwapMonthDay => (sm == ed && sd == em && sm != sd)
            .then(|| with_date(s, sy, sd, sm))
            .flatten(),
        RuleKind::SwapDigit => {
            let m = (sm / 10) * 10 + sd / 10;
            let d = (sm % 10) * 10 + sd % 10;
            if (m, d) == (sm, sd) {
                return None;
            }
            with_date(s, sy, m, d)
        }
        RuleKind::DayTensDigit => {
            (sy == ey && sm == em && sd != ed && sd.abs_diff(ed) % 10 == 0)
                .then(|| with_date(s, sy, sm, ed))
                .flatten()
        }
        RuleKind::MonthEnd => {
            let edate = e.date();
            if !is_last_day_of_month(edate) || sd != 1 {
                return None;
            }
            let x = em;
            let prev = if x == 1 { 12 } else { x - 1 };
            let same_year_or_prev = sy == ey || (x == 1 && sy == ey - 1);
            if !(same_year_or_prev && (sm == x || sm == prev)) {
                return None;
            }
            let (ny, nm) = if x == 12 { (ey + 1, 1) } else { (ey, x + 1) };
            with_date(s, ny, nm, 1)
        }
        RuleKind::DeleteHistory | RuleKind::DeleteLeading | RuleKind::DeleteTrailing => None,
    }
}

fn is_suspect(r: &RawRecord) -> bool {
    (r.sample_time - r.enter_time).abs() > DAY
}

fn has_long_gap(records: &[RawRecord]) -> bool {
    records
        .windows(2)
        .any(|w| w[1].sample_time - w[0].sample_time > DAY)
}

fn sort_by_sample(records: &mut [RawRecord]) {
    records.sort_by_key(|a| (a.sample_time, a.enter_time));
}

/// Applies the timestamp rules once. Returns the repaired stay (records
/// ordered by sample time) and the audit log of repairs and deletions.
pub fn repair_timestamps(stay: &PatientStay, rules: &[TimestampRule]) -> (PatientStay, AuditLog) {
    let mut log = AuditLog::default();
    let mut out = stay.clone();
    sort_by_sample(&mut out.records);
    if !has_long_gap(&out.records) {
        return (out, log);
    }

    for r in out.records.iter_mut() {
        if !is_suspect(r) {
            continue;
        }
        for rule in rules.iter().filter(|r| !r.is_deletion()) {
            if let Some(c) = candidate(rule.kind, &r.sample_time, &r.enter_time) {
                if (c - r.enter_time).abs() <= DAY {
                    log.push(
                        r.patient_id,
                        &r.variable_id,
                        r.sample_time,
                        AuditAction::TimestampRepaired,
                        &rule.id,
                    );
                    r.sample_time = c;
                    break;
                }
            }
        }
    }
    sort_by_sample(&mut out.records);

    // Deletion rules run to a fixed point so a second application is a no-op.
    loop {
        let gaps: Vec<usize> = out
            .records
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1].sample_time - w[0].sample_time > DAY)
            .map(|(i, _)| i + 1)
            .collect();
        let (Some(&first), Some(&last)) = (gaps.first(), gaps.last()) else { break };
        let total = out.records.len();
        let mut applied = false;
        for rule in rules.iter().filter(|r| r.is_deletion()) {
            let doomed: Vec<usize> = match rule.kind {
                RuleKind::DeleteHistory => {
                    let seg = &out.records[..first];
                    let sample_span = seg[seg.len() - 1].sample_time - seg[0].sample_time;
                    let enter_min = seg.iter().map(|r| r.enter_time).min().unwrap();
                    let enter_max = seg.iter().map(|r| r.enter_time).max().unwrap();
                    if sample_span > DAY && enter_max - enter_min < TimeDelta::hours(6) {
                        (0..first)
                            .filter(|&i| out.records[i].sample_time < out.admission_time)
                            .collect()
                    } else {
                        Vec::new()
                    }
                }
                RuleKind::DeleteLeading => {
                    let ends_before_admission =
                        out.records[first - 1].sample_time < out.admission_time;
                    if ends_before_admission && (first as f64) < 0.10 * total as f64 {
                        (0..first).collect()
                    } else {
                        Vec::new()
                    }
                }
                RuleKind::DeleteTrailing => {
                    if ((total - last) as f64) < 0.05 * total as f64 {
                        (last..total).collect()
                    } else {
                        Vec::new()
                    }
                }
                _ => Vec::new(),
            };
            if doomed.is_empty() {
                continue;
            }
            let mut keep = vec![true; total];
            for &i in &doomed {
                let r = &out.records[i];
                log.push(
                    r.patient_id,
                    &r.variable_id,
                    r.sample_time,
                    AuditAction::TimestampDeleted,
                    &rule.id,
                );
                keep[i] = false;
            }
            let mut it = keep.iter();
            out.records.retain(|_| *it.next().unwrap());
            applied = true;
            break;
        }
        if !applied {
            break;
        }
    }
    (out, log)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use crate::time::format_timestamp;

    fn hourly(n: usize, start: &str) -> Vec<RawRecord> {
        let t0 = ts(start);
        (0..n)
            .map(|i| {
                let t = format_timestamp(&(t0 + TimeDelta::hours(i as i64)));
                plain("hr", &t, 80.0)
            })
            .collect()
    }

    #[test]
    fn year_typo_takes_enter_year() {
        let mut recs = hourly(10, "2014-03-01T01:00:00Z");
        recs.push(rec(
            "hr",
            "2013-03-01T05:30:00Z",
            "2014-03-01T05:31:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(log.count(AuditAction::TimestampRepaired), 1);
        assert_eq!(log.entries[0].rule_id, "ts-year");
        assert!(out.records.iter().any(|r| r.sample_time == ts("2014-03-01T05:30:00Z")));
        assert_eq!(out.records.len(), 11);
    }

    #[test]
    fn transposed_month_and_day_swapped_back() {
        let mut recs = hourly(10, "2014-03-07T01:00:00Z");
        recs.push(rec(
            "hr",
            "2014-07-03T05:30:00Z",
            "2014-03-07T05:31:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(log.entries[0].rule_id, "ts-swap-md");
        assert!(out.records.iter().any(|r| r.sample_time == ts("2014-03-07T05:30:00Z")));
    }

    #[test]
    fn digit_swap_and_tens_digit() {
        // true 2014-01-23 typed as 2014-02-13
        let mut recs = hourly(10, "2014-01-23T01:00:00Z");
        recs.push(rec(
            "hr",
            "2014-02-13T05:30:00Z",
            "2014-01-23T05:31:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(log.entries[0].rule_id, "ts-swap-digit");
        assert!(out.records.iter().any(|r| r.sample_time == ts("2014-01-23T05:30:00Z")));

        let mut recs = hourly(10, "2014-03-05T01:00:00Z");
        recs.push(rec(
            "hr",
            "2014-03-25T05:30:00Z",
            "2014-03-05T05:31:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (_, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(log.entries[0].rule_id, "ts-day-tens");
    }

    #[test]
    fn trailing_minority_segment_deleted() {
        let mut recs = hourly(97, "2014-03-01T01:00:00Z");
        // 3 records 10 days later with matching enter times: uncorrectable
        recs.extend(hourly(3, "2014-03-20T00:00:00Z"));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(out.records.len(), 97);
        assert_eq!(log.count(AuditAction::TimestampDeleted), 3);
        assert!(log.entries.iter().all(|e| e.rule_id == "ts-trailing"));
    }

    #[test]
    fn large_trailing_segment_kept() {
        let mut recs = hourly(90, "2014-03-01T01:00:00Z");
        recs.extend(hourly(10, "2014-03-20T00:00:00Z"));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(out.records.len(), 100);
        assert!(log.entries.is_empty());
    }

    #[test]
    fn leading_segment_before_admission_deleted() {
        let mut recs = hourly(5, "2014-02-20T00:00:00Z");
        recs.extend(hourly(95, "2014-03-01T01:00:00Z"));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(out.records.len(), 95);
        assert!(log.entries.iter().all(|e| e.rule_id == "ts-leading"));
    }

    #[test]
    fn no_long_gap_means_no_evaluation() {
        let mut recs = hourly(10, "2014-03-01T01:00:00Z");
        // suspect record, but its sample time does not create a long gap
        recs.push(rec(
            "hr",
            "2014-03-01T03:00:00Z",
            "2014-03-05T03:00:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (out, log) = repair_timestamps(&stay(recs.clone()), &TimestampRule::defaults());
        assert!(log.entries.is_empty());
        assert_eq!(out.records.len(), recs.len());
    }

    #[test]
    fn month_end_rule() {
        let mut recs = hourly(10, "2014-03-31T14:00:00Z");
        recs.push(rec(
            "hr",
            "2014-03-01T00:10:00Z",
            "2014-03-31T23:58:00Z",
            81.0,
            crate::records::Status::Plain,
        ));
        let (out, log) = repair_timestamps(&stay(recs), &TimestampRule::defaults());
        assert_eq!(log.entries[0].rule_id, "ts-month-end");
        assert!(out.records.iter().any(|r| r.sample_time == ts("2014-04-01T00:10:00Z")));
    }
}
