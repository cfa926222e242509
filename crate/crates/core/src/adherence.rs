//! Adherence labeling.
//!
//! A patient adheres to the program when they accumulate enough *qualifying
//! connections* (sessions strictly longer than a minimum duration) spread over
//! a long enough *span* of the treatment. The span runs from the calendar day
//! of the first login to the calendar day of the last qualifying login.

use serde::{Deserialize, Serialize};

use crate::sessions::{Cohort, PatientRecord, SessionEvent};

/// Duration/frequency/amount thresholds that define adherence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdherenceDefinition {
    /// Minimum span, in days, between first login and last qualifying login.
    pub min_span_days: i64,
    /// Minimum number of qualifying connections.
    pub min_connections: usize,
    /// A connection qualifies when its duration strictly exceeds this.
    pub min_session_seconds: i64,
}

impl AdherenceDefinition {
    /// Default definition: 8 connections over 56 days, each above one minute.
    pub fn original() -> Self {
        Self { min_span_days: 56, min_connections: 8, min_session_seconds: 60 }
    }

    /// Stricter variant: 12 connections above 150 s over 56 days.
    pub fn alternative_a() -> Self {
        Self { min_span_days: 56, min_connections: 12, min_session_seconds: 150 }
    }

    /// Strictest variant: 16 connections above 300 s over 56 days.
    pub fn alternative_b() -> Self {
        Self { min_span_days: 56, min_connections: 16, min_session_seconds: 300 }
    }
}

/// How the span requirement counts days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpanConvention {
    /// Calendar days, both endpoints included: first and last day on the
    /// same date give a span of 1.
    #[default]
    InclusiveDays,
    /// Whole 24-hour periods elapsed between the first login and the last
    /// qualifying login timestamps.
    ElapsedPeriods,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdherenceLabel {
    pub adherent: bool,
    pub qualifying_connections: usize,
    /// Span in days under the chosen convention; 0 when nothing qualifies.
    pub span_days: i64,
}

fn qualifies(session: &SessionEvent, definition: &AdherenceDefinition) -> bool {
    session.duration_seconds() > definition.min_session_seconds
}

/// Number of sessions strictly longer than the definition's minimum duration.
pub fn qualifying_connections(record: &PatientRecord, definition: &AdherenceDefinition) -> usize {
    record.sessions.iter().filter(|s| qualifies(s, definition)).count()
}

fn epoch_day(ts: chrono::DateTime<chrono::Utc>) -> i64 {
    ts.date_naive()
        .signed_duration_since(chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
        .num_days()
}

/// Labels one patient under the given definition and span convention.
pub fn label(
    record: &PatientRecord,
    definition: &AdherenceDefinition,
    convention: SpanConvention,
) -> AdherenceLabel {
    let first_login = record.first_login();
    let mut qualifying = 0usize;
    let mut last_qualifying_login = None;
    for session in &record.sessions {
        if qualifies(session, definition) {
            qualifying += 1;
            // Sessions are sorted by login, so the latest qualifying login
            // is simply the last one seen.
            last_qualifying_login = Some(session.login);
        }
    }

    let span_days = match last_qualifying_login {
        None => 0,
        Some(last) => match convention {
            SpanConvention::InclusiveDays => epoch_day(last) - epoch_day(first_login) + 1,
            SpanConvention::ElapsedPeriods => (last - first_login).num_days(),
        },
    };

    AdherenceLabel {
        adherent: qualifying >= definition.min_connections
            && span_days >= definition.min_span_days,
        qualifying_connections: qualifying,
        span_days,
    }
}

/// Drops patients with fewer than two sessions; they carry no usable
/// trajectory. Record order is preserved.
pub fn filter_trivial(cohort: &Cohort) -> Cohort {
    Cohort {
        records: cohort
            .records
            .iter()
            .filter(|r| r.sessions.len() >= 2)
            .cloned()
            .collect(),
        provenance: cohort.provenance,
    }
}
