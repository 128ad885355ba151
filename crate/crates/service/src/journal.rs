//! Append-only JSON-lines journal.
//!
//! Every accepted event transition and every processed market tick (with the
//! human orders it drained) is one line. Agent decisions are not journaled:
//! the engine is deterministic given its seed, so replaying the ticks in order
//! reproduces them. Checkpoint lines let replay verify it is still in step.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use replimarket::Outcome;
use serde::{Deserialize, Serialize};

use crate::book::QueuedOrder;
use crate::exchange::EventSpec;
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    EventCreated {
        event: Box<EventSpec>,
        at_ms: u64,
    },
    EventOpened {
        event: String,
        at_ms: u64,
    },
    Tick {
        event: String,
        market: usize,
        tick: u64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        orders: Vec<QueuedOrder>,
    },
    /// Clock slots that passed without being processed.
    Skipped {
        event: String,
        slot: u64,
        count: u64,
    },
    Checkpoint {
        event: String,
        market: usize,
        tick: u64,
        q_yes: f64,
        q_no: f64,
        trades: usize,
    },
    EventClosed {
        event: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        outcomes: Option<BTreeMap<String, Outcome>>,
        at_ms: u64,
    },
}

impl Record {
    pub fn event_id(&self) -> &str {
        match self {
            Record::EventCreated { event, .. } => &event.id,
            Record::EventOpened { event, .. }
            | Record::Tick { event, .. }
            | Record::Skipped { event, .. }
            | Record::Checkpoint { event, .. }
            | Record::EventClosed { event, .. } => event,
        }
    }
}

pub struct JournalWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JournalWriter {
    /// Opens for appending, cutting the file back to `valid_bytes` first so a
    /// torn last line from a crash is not continued.
    pub fn open(path: &Path, valid_bytes: u64) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() > valid_bytes {
            file.set_len(valid_bytes)?;
        }
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &Record) -> Result<(), ServiceError> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// Flushes buffered lines and waits for the disk.
    pub fn sync(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

/// Why reading stopped before the end of the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    /// 1-based line number of the first unusable line.
    pub line: usize,
    pub reason: String,
    /// The line had no terminating newline: a write cut short, not corruption.
    pub torn: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recovery {
    pub records: Vec<Record>,
    /// Byte offset just past each record's line.
    pub ends: Vec<u64>,
    /// Length of the prefix holding `records`.
    pub valid_bytes: u64,
    pub defect: Option<Defect>,
}

/// Reads every complete, well-formed line up to the first bad one.
///
/// A missing file is an empty journal.
pub fn recover(path: &Path) -> io::Result<Recovery> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Recovery::default()),
        Err(e) => return Err(e),
    };
    Ok(parse(&bytes))
}

pub fn parse(bytes: &[u8]) -> Recovery {
    let mut out = Recovery::default();
    let mut offset = 0usize;
    let mut line = 0usize;
    while offset < bytes.len() {
        line += 1;
        let rest = &bytes[offset..];
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            out.defect = Some(Defect {
                line,
                reason: format!("incomplete final line ({} bytes)", rest.len()),
                torn: true,
            });
            break;
        };
        match serde_json::from_slice::<Record>(&rest[..end]) {
            Ok(record) => {
                out.records.push(record);
                offset += end + 1;
                out.valid_bytes = offset as u64;
                out.ends.push(out.valid_bytes);
            }
            Err(e) => {
                out.defect = Some(Defect {
                    line,
                    reason: e.to_string(),
                    torn: false,
                });
                break;
            }
        }
    }
    out
}

/// The journal lines belonging to one event, verbatim.
pub fn event_lines(path: &Path, event: &str) -> io::Result<String> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(String::new()),
        Err(e) => return Err(e),
    };
    let mut out = String::new();
    for line in text.split_inclusive('\n').filter(|l| l.ends_with('\n')) {
        if let Ok(record) = serde_json::from_str::<Record>(line) {
            if record.event_id() == event {
                out.push_str(line);
            }
        }
    }
    Ok(out)
}
