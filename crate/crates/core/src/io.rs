//! Event-log CSV reading and writing.
//!
//! Layout: `epoch_id,seq,state,duration[,sensor...]`, one row per event,
//! sorted by `(epoch_id, seq)` with `seq` counting from 1 in each epoch.
//! `FAIL` rows leave `duration` empty and may leave sensors empty.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result, ValidationKind};
use crate::model::{validate_dataset, Dataset, Epoch, Event, EventType};

pub const BASE_COLUMNS: [&str; 4] = ["epoch_id", "seq", "state", "duration"];

/// What to do with a final epoch that has no `FAIL` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoredPolicy {
    #[default]
    Reject,
    Exclude,
    IncludeAsComplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Censored epoch ids, excluded or kept according to the policy.
    pub censored: Vec<u64>,
}

pub fn ingest(path: impl AsRef<Path>, policy: CensoredPolicy) -> Result<Ingested> {
    read_event_log(open(path)?, policy)
}

/// `File::open` with the path in the error message.
pub fn open(path: impl AsRef<Path>) -> Result<File> {
    let path = path.as_ref();
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

struct Pending {
    epoch: Epoch,
    lines: Vec<u64>,
    failed: bool,
}

fn parse_field<T: std::str::FromStr>(value: &str, line: u64, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse { line, message: format!("invalid {what} `{value}`") })
}

pub fn read_event_log<R: Read>(input: R, policy: CensoredPolicy) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = reader.records().peekable();
    let mut sensor_names = Vec::new();
    let mut width = None;
    if let Some(Ok(first)) = records.peek() {
        if first.get(0).map(str::trim) == Some("epoch_id") {
            let names: Vec<&str> = first.iter().map(str::trim).collect();
            if names.len() < 4 || names[..4] != BASE_COLUMNS {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("header must start with {}", BASE_COLUMNS.join(",")),
                });
            }
            sensor_names = names[4..].iter().map(|s| s.to_string()).collect();
            width = Some(names.len());
            records.next();
        }
    }

    let mut done: Vec<Pending> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut current: Option<Pending> = None;
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let width = *width.get_or_insert_with(|| {
            sensor_names = (1..record.len().saturating_sub(3)).map(|k| format!("s{k}")).collect();
            record.len()
        });
        if record.len() != width {
            return Err(Error::Parse { line, message: format!("expected {width} fields, got {}", record.len()) });
        }
        let epoch_id: u64 = parse_field(&record[0], line, "epoch_id")?;
        let seq: u64 = parse_field(&record[1], line, "seq")?;
        let kind = EventType::from_token(record[2].trim())
            .ok_or_else(|| Error::Parse { line, message: format!("unknown state `{}`", &record[2]) })?;

        if current.as_ref().is_none_or(|c| c.epoch.id != epoch_id) {
            if let Some(prev) = current.take() {
                if !prev.failed {
                    let last = *prev.lines.last().unwrap_or(&line);
                    return Err(Error::InvalidRow { line: last, kind: ValidationKind::Censored });
                }
                done.push(prev);
            }
            if !seen.insert(epoch_id) {
                return Err(Error::InvalidRow { line, kind: ValidationKind::DuplicateEpoch(epoch_id) });
            }
            current = Some(Pending { epoch: Epoch::new(epoch_id, Vec::new()), lines: Vec::new(), failed: false });
        }
        let pending = current.as_mut().expect("current epoch");
        if seq != pending.epoch.events.len() as u64 + 1 {
            return Err(Error::DuplicateSeq { line, epoch_id, seq });
        }
        if pending.failed {
            return Err(Error::InvalidRow { line, kind: ValidationKind::MisplacedFail });
        }

        let duration_text = record[3].trim();
        let sensor_cells: Vec<&str> = record.iter().skip(4).map(str::trim).collect();
        let event = if kind == EventType::Fail {
            if !duration_text.is_empty() {
                return Err(Error::Parse { line, message: "FAIL rows carry no duration".into() });
            }
            let sensors = if sensor_cells.iter().all(|c| c.is_empty()) {
                Vec::new()
            } else {
                parse_sensors(&sensor_cells, line)?
            };
            pending.failed = true;
            Event::new(EventType::Fail, 0.0, sensors)
        } else {
            let duration: f64 = parse_field(duration_text, line, "duration")?;
            if !(duration.is_finite() && duration > 0.0) {
                return Err(Error::InvalidRow { line, kind: ValidationKind::NonPositiveDuration(duration) });
            }
            if let Some(prev) = pending.epoch.events.last() {
                if prev.kind == kind {
                    return Err(Error::InvalidRow { line, kind: ValidationKind::NonAlternating(kind) });
                }
            }
            Event::new(kind, duration, parse_sensors(&sensor_cells, line)?)
        };
        pending.epoch.events.push(event);
        pending.lines.push(line);
    }

    let mut censored = Vec::new();
    if let Some(last) = current.take() {
        if last.failed {
            done.push(last);
        } else {
            match policy {
                CensoredPolicy::Reject => {
                    let line = *last.lines.last().unwrap_or(&0);
                    return Err(Error::InvalidRow { line, kind: ValidationKind::Censored });
                }
                CensoredPolicy::Exclude => {
                    log::warn!("censored final epoch {} excluded", last.epoch.id);
                    censored.push(last.epoch.id);
                }
                CensoredPolicy::IncludeAsComplete => {
                    log::warn!("censored final epoch {} treated as complete", last.epoch.id);
                    censored.push(last.epoch.id);
                    done.push(last);
                }
            }
        }
    }

    let lines: HashMap<u64, Vec<u64>> = done.iter().map(|p| (p.epoch.id, p.lines.clone())).collect();
    let raw = Dataset { epochs: done.into_iter().map(|p| p.epoch).collect(), sensor_names };
    let dataset = validate_dataset(raw).map_err(|e| match e {
        Error::Validation { epoch_id, event_index, kind } => {
            match lines.get(&epoch_id).and_then(|l| l.get(event_index)) {
                Some(&line) => Error::InvalidRow { line, kind },
                None => Error::Validation { epoch_id, event_index, kind },
            }
        }
        other => other,
    })?;
    Ok(Ingested { dataset, censored })
}

fn parse_sensors(cells: &[&str], line: u64) -> Result<Vec<f64>> {
    cells
        .iter()
        .map(|c| {
            let x: f64 = parse_field(c, line, "sensor reading")?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(Error::InvalidRow { line, kind: ValidationKind::NonFiniteSensor })
            }
        })
        .collect()
}

/// Writes `d` as an event log. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_event_log<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = BASE_COLUMNS.iter().copied().chain(d.sensor_names.iter().map(String::as_str)).collect();
    w.write_record(&header)?;
    let m = d.sensor_count();
    for epoch in &d.epochs {
        for (k, ev) in epoch.events.iter().enumerate() {
            let mut row = vec![epoch.id.to_string(), (k + 1).to_string(), ev.kind.token().to_string()];
            row.push(if ev.kind == EventType::Fail { String::new() } else { ev.duration.to_string() });
            if ev.sensors.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), m));
            } else {
                row.extend(ev.sensors.iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_event_log(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_event_log(d, File::create(path)?)
}
