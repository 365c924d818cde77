//! Trace files: `#` header lines, then one tab-separated event per line:
//! `tick kind sender recipient digest detail`. Unused fields are `-`.

use std::io::{self, BufRead, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::{parse_hex_u64, Tick};

pub const TRACE_VERSION: &str = "highway-trace 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Send,
    Deliver,
    /// Full wire bytes of a unit, written once per unit.
    Unit,
    Create,
    Admit,
    Final,
    Exponent,
    Era,
    Drop,
    Crash,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Unit => "unit",
            EventKind::Create => "create",
            EventKind::Admit => "admit",
            EventKind::Final => "final",
            EventKind::Exponent => "exponent",
            EventKind::Era => "era",
            EventKind::Drop => "drop",
            EventKind::Crash => "crash",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        Some(match s {
            "send" => EventKind::Send,
            "deliver" => EventKind::Deliver,
            "unit" => EventKind::Unit,
            "create" => EventKind::Create,
            "admit" => EventKind::Admit,
            "final" => EventKind::Final,
            "exponent" => EventKind::Exponent,
            "era" => EventKind::Era,
            "drop" => EventKind::Drop,
            "crash" => EventKind::Crash,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub tick: Tick,
    pub kind: EventKind,
    pub sender: Option<u32>,
    pub recipient: Option<u32>,
    pub digest: Option<u64>,
    pub detail: String,
}

impl Record {
    pub fn new(tick: Tick, kind: EventKind) -> Record {
        Record { tick, kind, sender: None, recipient: None, digest: None, detail: String::new() }
    }

    pub fn line(&self) -> String {
        let opt = |x: Option<u32>| x.map_or("-".to_string(), |v| v.to_string());
        let detail = if self.detail.is_empty() { "-".to_string() } else { self.detail.replace(['\t', '\n'], " ") };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.tick,
            self.kind.as_str(),
            opt(self.sender),
            opt(self.recipient),
            self.digest.map_or("-".to_string(), |d| format!("{d:016x}")),
            detail
        )
    }

    pub fn parse(line: &str) -> Result<Record, String> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(format!("expected 6 fields, got {}", f.len()));
        }
        let opt = |s: &str| -> Result<Option<u32>, String> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| format!("bad validator `{s}`"))
            }
        };
        Ok(Record {
            tick: f[0].parse().map_err(|_| format!("bad tick `{}`", f[0]))?,
            kind: EventKind::parse(f[1]).ok_or_else(|| format!("unknown event `{}`", f[1]))?,
            sender: opt(f[2])?,
            recipient: opt(f[3])?,
            digest: if f[4] == "-" {
                None
            } else {
                Some(parse_hex_u64(f[4]).ok_or_else(|| format!("bad digest `{}`", f[4]))?)
            },
            detail: if f[5] == "-" { String::new() } else { f[5].to_string() },
        })
    }
}

/// Hashes every line and optionally writes and keeps it.
pub struct TraceSink {
    hasher: Sha256,
    out: Option<Box<dyn Write + Send>>,
    kept: Option<Vec<String>>,
    error: Option<io::Error>,
    lines: u64,
}

impl TraceSink {
    pub fn new(out: Option<Box<dyn Write + Send>>, keep: bool) -> TraceSink {
        TraceSink { hasher: Sha256::new(), out, kept: keep.then(Vec::new), error: None, lines: 0 }
    }

    pub fn raw(&mut self, line: &str) {
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines += 1;
        if let Some(w) = &mut self.out {
            if self.error.is_none() {
                if let Err(e) = writeln!(w, "{line}") {
                    self.error = Some(e);
                }
            }
        }
        if let Some(k) = &mut self.kept {
            k.push(line.to_string());
        }
    }

    pub fn header(&mut self, key: &str, value: &str) {
        self.raw(&format!("# {key} = {value}"));
    }

    pub fn record(&mut self, r: &Record) {
        self.raw(&r.line());
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    /// Hex SHA-256 of everything written, plus the kept lines.
    pub fn finish(mut self) -> io::Result<(String, Vec<String>)> {
        if let Some(w) = &mut self.out {
            if self.error.is_none() {
                if let Err(e) = w.flush() {
                    self.error = Some(e);
                }
            }
        }
        if let Some(e) = self.error {
            return Err(e);
        }
        Ok((hex::encode(self.hasher.finalize()), self.kept.unwrap_or_default()))
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    /// `# key = value` lines in order, including the summary block.
    pub header: Vec<(String, String)>,
    pub records: Vec<Record>,
}

impl Trace {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Lines of the embedded scenario, joined back together.
    pub fn scenario_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            if let Some(rest) = k.strip_prefix("scenario.") {
                s.push_str(&format!("{rest} = {v}\n"));
            }
        }
        s
    }

    pub fn read(r: impl BufRead) -> Result<Trace, TraceError> {
        let mut t = Trace::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once(" = ") {
                    t.header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            t.records.push(Record::parse(&line).map_err(|msg| TraceError::Parse { line: i + 1, msg })?);
        }
        Ok(t)
    }

    pub fn parse_lines<'a>(lines: impl IntoIterator<Item = &'a String>) -> Result<Trace, TraceError> {
        let joined: Vec<&str> = lines.into_iter().map(String::as_str).collect();
        Trace::read(joined.join("\n").as_bytes())
    }
}
