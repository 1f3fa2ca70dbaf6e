//! Event-log data model: events, epochs, datasets and the four likelihood
//! situations an epoch can fall into.
//!
//! An epoch runs from a restart to the next failure. Inside it the machine
//! alternates between running without an alert ([`EventType::RunOk`]) and
//! running with an alert ([`EventType::RunAlert`]); the epoch is closed by a
//! single [`EventType::Fail`] event that carries no duration.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventType {
    RunOk,
    RunAlert,
    Fail,
}

impl EventType {
    /// Token used in event-log files.
    pub fn token(self) -> &'static str {
        match self {
            EventType::RunOk => "RUN_OK",
            EventType::RunAlert => "RUN_ALERT",
            EventType::Fail => "FAIL",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "RUN_OK" => Some(EventType::RunOk),
            "RUN_ALERT" => Some(EventType::RunAlert),
            "FAIL" => Some(EventType::Fail),
            _ => None,
        }
    }

    pub fn is_running(self) -> bool {
        self != EventType::Fail
    }

    /// The other running state. `Fail` maps to itself.
    pub fn flip(self) -> Self {
        match self {
            EventType::RunOk => EventType::RunAlert,
            EventType::RunAlert => EventType::RunOk,
            EventType::Fail => EventType::Fail,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventType,
    /// Dwell time of a running event. Ignored for `Fail`.
    pub duration: f64,
    pub sensors: Vec<f64>,
}

impl Event {
    pub fn new(kind: EventType, duration: f64, sensors: Vec<f64>) -> Self {
        Self { kind, duration, sensors }
    }

    pub fn run_ok(duration: f64) -> Self {
        Self::new(EventType::RunOk, duration, Vec::new())
    }

    pub fn run_alert(duration: f64) -> Self {
        Self::new(EventType::RunAlert, duration, Vec::new())
    }

    pub fn fail() -> Self {
        Self::new(EventType::Fail, 0.0, Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub id: u64,
    pub events: Vec<Event>,
}

impl Epoch {
    pub fn new(id: u64, events: Vec<Event>) -> Self {
        Self { id, events }
    }

    /// Running events in log order (everything except the terminating failure).
    pub fn running(&self) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(|e| e.kind.is_running())
    }

    /// Number of running events, `r` in the model.
    pub fn event_count(&self) -> usize {
        self.running().count()
    }

    pub fn first_kind(&self) -> Option<EventType> {
        self.events.first().map(|e| e.kind).filter(|k| k.is_running())
    }

    /// An epoch without a terminating failure (the log ended mid-epoch).
    pub fn is_censored(&self) -> bool {
        self.events.last().map(|e| e.kind) != Some(EventType::Fail)
    }

    /// `(N1, N2)` by direct counting.
    pub fn kind_counts(&self) -> (usize, usize) {
        self.running().fold((0, 0), |(a, b), e| match e.kind {
            EventType::RunOk => (a + 1, b),
            _ => (a, b + 1),
        })
    }

    /// Total running time, i.e. the realized time to failure.
    pub fn total_duration(&self) -> f64 {
        self.running().map(|e| e.duration).sum()
    }

    /// Checks every epoch invariant; on failure returns the offending event
    /// index and what went wrong.
    pub fn check(&self, sensor_arity: usize) -> std::result::Result<(), (usize, ValidationKind)> {
        let mut prev: Option<EventType> = None;
        for (idx, ev) in self.events.iter().enumerate() {
            match ev.kind {
                EventType::Fail => {
                    if idx + 1 != self.events.len() {
                        return Err((idx, ValidationKind::MisplacedFail));
                    }
                    if idx == 0 {
                        return Err((idx, ValidationKind::EmptyEpoch));
                    }
                    if !ev.sensors.is_empty() && ev.sensors.len() != sensor_arity {
                        return Err((
                            idx,
                            ValidationKind::SensorArityMismatch { expected: sensor_arity, got: ev.sensors.len() },
                        ));
                    }
                }
                kind => {
                    if prev == Some(kind) {
                        return Err((idx, ValidationKind::NonAlternating(kind)));
                    }
                    if !(ev.duration.is_finite() && ev.duration > 0.0) {
                        return Err((idx, ValidationKind::NonPositiveDuration(ev.duration)));
                    }
                    if ev.sensors.len() != sensor_arity {
                        return Err((
                            idx,
                            ValidationKind::SensorArityMismatch { expected: sensor_arity, got: ev.sensors.len() },
                        ));
                    }
                    prev = Some(kind);
                }
            }
            if ev.sensors.iter().any(|x| !x.is_finite()) {
                return Err((idx, ValidationKind::NonFiniteSensor));
            }
        }
        if self.events.is_empty() {
            return Err((0, ValidationKind::EmptyEpoch));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub epochs: Vec<Epoch>,
    pub sensor_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and validates it.
    pub fn new(epochs: Vec<Epoch>, sensor_names: Vec<String>) -> Result<Self> {
        validate_dataset(Self { epochs, sensor_names })
    }

    pub fn n(&self) -> usize {
        self.epochs.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_names.len()
    }

    /// Total number of running events `N`.
    pub fn total_events(&self) -> usize {
        self.epochs.iter().map(Epoch::event_count).sum()
    }

    pub fn epoch(&self, id: u64) -> Option<&Epoch> {
        self.epochs.iter().find(|e| e.id == id)
    }

    /// Durations of all running events, scaled by `c`. Useful for unit changes.
    pub fn scale_durations(&self, c: f64) -> Dataset {
        let mut out = self.clone();
        for ev in out.epochs.iter_mut().flat_map(|e| e.events.iter_mut()) {
            if ev.kind.is_running() {
                ev.duration *= c;
            }
        }
        out
    }
}

/// Returns the dataset unchanged when every invariant holds.
pub fn validate_dataset(raw: Dataset) -> Result<Dataset> {
    if raw.epochs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = raw.sensor_names.len();
    let mut seen = HashSet::with_capacity(raw.epochs.len());
    for epoch in &raw.epochs {
        if !seen.insert(epoch.id) {
            return Err(Error::Validation {
                epoch_id: epoch.id,
                event_index: 0,
                kind: ValidationKind::DuplicateEpoch(epoch.id),
            });
        }
        epoch.check(m).map_err(|(event_index, kind)| Error::Validation { epoch_id: epoch.id, event_index, kind })?;
    }
    Ok(raw)
}

/// Likelihood case of an epoch: first running state crossed with the parity
/// of its event count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Situation {
    /// Starts `RunOk`, odd `r`.
    S1,
    /// Starts `RunOk`, even `r`.
    S2,
    /// Starts `RunAlert`, odd `r`.
    S3,
    /// Starts `RunAlert`, even `r`.
    S4,
}

impl Situation {
    pub const ALL: [Situation; 4] = [Situation::S1, Situation::S2, Situation::S3, Situation::S4];

    pub fn from_parts(first: EventType, r: usize) -> Self {
        match (first == EventType::RunOk, r % 2 == 1) {
            (true, true) => Situation::S1,
            (true, false) => Situation::S2,
            (false, true) => Situation::S3,
            (false, false) => Situation::S4,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn starts_ok(self) -> bool {
        matches!(self, Situation::S1 | Situation::S2)
    }

    /// Offsets `(a¹, a²)` with `N^s = (r + a^s) / 2`.
    pub fn offsets(self) -> (i64, i64) {
        match self {
            Situation::S1 => (1, -1),
            Situation::S2 | Situation::S4 => (0, 0),
            Situation::S3 => (-1, 1),
        }
    }

    /// `(N1, N2)` implied by the situation for an epoch with `r` events.
    pub fn kind_counts(self, r: usize) -> (usize, usize) {
        let (a1, a2) = self.offsets();
        let r = r as i64;
        (((r + a1) / 2) as usize, ((r + a2) / 2) as usize)
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index() + 1)
    }
}

/// Classifies a validated epoch. Fails only for an epoch without running events.
pub fn classify_epoch(e: &Epoch) -> Result<Situation> {
    let first =
        e.first_kind().ok_or(Error::Validation { epoch_id: e.id, event_index: 0, kind: ValidationKind::EmptyEpoch })?;
    Ok(Situation::from_parts(first, e.event_count()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationPartition {
    pub assignment: BTreeMap<u64, Situation>,
    /// `(n1, n2, n3, n4)`.
    pub counts: [usize; 4],
}

impl SituationPartition {
    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Epochs starting with `RunOk`, `n1 + n2`.
    pub fn starts_ok(&self) -> usize {
        self.counts[0] + self.counts[1]
    }

    /// Epochs starting with `RunAlert`, `n3 + n4`.
    pub fn starts_alert(&self) -> usize {
        self.counts[2] + self.counts[3]
    }
}

pub fn partition(d: &Dataset) -> Result<SituationPartition> {
    let mut assignment = BTreeMap::new();
    let mut counts = [0usize; 4];
    for e in &d.epochs {
        let s = classify_epoch(e)?;
        counts[s.index()] += 1;
        assignment.insert(e.id, s);
    }
    Ok(SituationPartition { assignment, counts })
}
