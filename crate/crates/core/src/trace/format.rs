//! Trace file formats.
//!
//! Both formats share a text header:
//!
//! ```text
//! hmt 1
//! app mcf-like
//! instructions 1000000
//! address-space 1073741824
//! data
//! ```
//!
//! `.hmt` files follow the `data` line with 13-byte little-endian records
//! (`inst_gap: u32`, `address: u64`, `kind: u8` with 0 = read, 1 = write).
//! `.hmtx` files follow it with one `inst_gap address kind` line per event,
//! the address in hex (`0x` optional) and kind `R` or `W`. Blank lines and
//! lines starting with `#` are ignored in the text body.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trace, TraceEvent};
use crate::device::AccessKind;

pub const FORMAT_VERSION: u32 = 1;
const RECORD_BYTES: usize = 13;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed record at byte offset {offset}: {reason}")]
    MalformedRecord { offset: u64, reason: String },
    #[error("unsupported trace format version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub app: String,
    pub instructions: u64,
    pub address_space: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Text,
}

impl TraceFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("hmtx") => TraceFormat::Text,
            _ => TraceFormat::Binary,
        }
    }
}

fn write_header<W: Write>(out: &mut W, h: &TraceHeader) -> io::Result<()> {
    writeln!(out, "hmt {}", h.version)?;
    writeln!(out, "app {}", h.app)?;
    writeln!(out, "instructions {}", h.instructions)?;
    writeln!(out, "address-space {}", h.address_space)?;
    writeln!(out, "data")
}

pub fn write_binary<W: Write>(out: &mut W, trace: &Trace) -> io::Result<()> {
    write_header(out, &trace.header)?;
    let mut rec = [0u8; RECORD_BYTES];
    for e in trace.events.iter() {
        rec[0..4].copy_from_slice(&e.inst_gap.to_le_bytes());
        rec[4..12].copy_from_slice(&e.address.to_le_bytes());
        rec[12] = match e.kind {
            AccessKind::Read => 0,
            AccessKind::Write => 1,
        };
        out.write_all(&rec)?;
    }
    Ok(())
}

pub fn write_text<W: Write>(out: &mut W, trace: &Trace) -> io::Result<()> {
    write_header(out, &trace.header)?;
    for e in trace.events.iter() {
        let k = match e.kind {
            AccessKind::Read => 'R',
            AccessKind::Write => 'W',
        };
        writeln!(out, "{} {:#x} {}", e.inst_gap, e.address, k)?;
    }
    Ok(())
}

/// Pull-based reader over either format.
pub struct TraceReader<R> {
    input: R,
    header: TraceHeader,
    format: TraceFormat,
    offset: u64,
    line: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut input: R, format: TraceFormat) -> Result<Self, TraceError> {
        let mut offset = 0u64;
        let mut fields: Vec<(String, String)> = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            let n = input.read_line(&mut line)?;
            if n == 0 {
                return Err(TraceError::MalformedHeader("missing `data` line".into()));
            }
            offset += n as u64;
            let l = line.trim_end_matches(['\n', '\r']);
            if l == "data" {
                break;
            }
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| TraceError::MalformedHeader(format!("bad header line `{l}`")))?;
            fields.push((k.to_string(), v.trim().to_string()));
        }
        let get = |key: &str| {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| TraceError::MalformedHeader(format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<u64, TraceError> {
            get(key)?
                .parse()
                .map_err(|_| TraceError::MalformedHeader(format!("`{key}` is not a number")))
        };
        let version = num("hmt")? as u32;
        if version != FORMAT_VERSION {
            return Err(TraceError::UnsupportedVersion(version));
        }
        let header = TraceHeader {
            version,
            app: get("app")?.to_string(),
            instructions: num("instructions")?,
            address_space: num("address-space")?,
        };
        Ok(TraceReader {
            input,
            header,
            format,
            offset,
            line,
            failed: false,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn malformed(&mut self, offset: u64, reason: impl Into<String>) -> TraceError {
        self.failed = true;
        TraceError::MalformedRecord {
            offset,
            reason: reason.into(),
        }
    }

    fn next_binary(&mut self) -> Option<Result<TraceEvent, TraceError>> {
        let mut rec = [0u8; RECORD_BYTES];
        let mut got = 0;
        while got < RECORD_BYTES {
            match self.input.read(&mut rec[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
        }
        let start = self.offset;
        if got == 0 {
            return None;
        }
        if got < RECORD_BYTES {
            return Some(Err(self.malformed(start, format!("truncated record ({got} of {RECORD_BYTES} bytes)"))));
        }
        self.offset += RECORD_BYTES as u64;
        let kind = match rec[12] {
            0 => AccessKind::Read,
            1 => AccessKind::Write,
            k => return Some(Err(self.malformed(start, format!("unknown access kind {k}")))),
        };
        Some(Ok(TraceEvent {
            inst_gap: u32::from_le_bytes(rec[0..4].try_into().unwrap()),
            address: u64::from_le_bytes(rec[4..12].try_into().unwrap()),
            kind,
        }))
    }

    fn next_text(&mut self) -> Option<Result<TraceEvent, TraceError>> {
        loop {
            self.line.clear();
            let start = self.offset;
            let n = match self.input.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(n) => n,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.offset += n as u64;
            let l = self.line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            return Some(parse_text_record(l).map_err(|reason| self.malformed(start, reason)));
        }
    }
}

fn parse_text_record(l: &str) -> Result<TraceEvent, String> {
    let mut parts = l.split_whitespace();
    let (Some(gap), Some(addr), Some(kind), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(format!("expected `inst_gap address kind`, got `{l}`"));
    };
    let inst_gap = gap.parse().map_err(|_| format!("bad inst_gap `{gap}`"))?;
    let hex = addr.trim_start_matches("0x").trim_start_matches("0X");
    let address = u64::from_str_radix(hex, 16).map_err(|_| format!("bad address `{addr}`"))?;
    let kind = match kind {
        "R" | "r" => AccessKind::Read,
        "W" | "w" => AccessKind::Write,
        other => return Err(format!("bad kind `{other}`")),
    };
    Ok(TraceEvent {
        inst_gap,
        address,
        kind,
    })
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.format {
            TraceFormat::Binary => self.next_binary(),
            TraceFormat::Text => self.next_text(),
        }
    }
}

pub fn read_trace<R: BufRead>(input: R, format: TraceFormat) -> Result<Trace, TraceError> {
    let reader = TraceReader::new(input, format)?;
    let header = reader.header().clone();
    let events = reader.collect::<Result<Vec<_>, _>>()?;
    Ok(Trace {
        header,
        events: events.into(),
    })
}

/// Loads a trace, picking the format from the extension (`.hmtx` is text).
pub fn load_trace(path: &Path) -> Result<Trace, TraceError> {
    let file = BufReader::new(File::open(path)?);
    read_trace(file, TraceFormat::from_path(path))
}
