//! Text trace files: one `core,op,address,pc,icount` record per line.
//!
//! `op` is `R` or `W`, address and pc are `0x`-prefixed hex, icount is
//! decimal. Lines starting with `#` and blank lines are ignored. Files whose
//! name ends in `.gz` are gzip-compressed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use l2h_core::{MemoryAccess, Op};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}, line {line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn parse_hex(field: &str) -> Option<u64> {
    let digits = field.strip_prefix("0x")?;
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

/// Parse one line. Returns `Ok(None)` for comments and blank lines.
pub fn parse_record(text: &str) -> Result<Option<MemoryAccess>, String> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    let [core, op, address, pc, icount] = fields[..] else {
        return Err(format!("expected 5 comma-separated fields, found {}", fields.len()));
    };
    let core = core.parse().map_err(|_| format!("bad core index `{core}`"))?;
    let op = match op {
        "R" => Op::Read,
        "W" => Op::Write,
        other => return Err(format!("bad op `{other}`, expected R or W")),
    };
    let address = parse_hex(address).ok_or_else(|| format!("bad address `{address}`"))?;
    let pc = parse_hex(pc).ok_or_else(|| format!("bad pc `{pc}`"))?;
    let icount_delta: u32 = icount.parse().map_err(|_| format!("bad icount `{icount}`"))?;
    if icount_delta == 0 {
        return Err("icount must be at least 1".into());
    }
    Ok(Some(MemoryAccess { core, op, address, pc, icount_delta }))
}

pub fn format_record(a: &MemoryAccess) -> String {
    let op = if a.op == Op::Read { 'R' } else { 'W' };
    format!("{},{op},{:#x},{:#x},{}", a.core, a.address, a.pc, a.icount_delta)
}

/// A parsed trace with the source line of every record.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub path: PathBuf,
    pub records: Vec<MemoryAccess>,
    pub lines: Vec<usize>,
}

impl Trace {
    pub fn parse_error(&self, index: usize, message: impl Into<String>) -> TraceError {
        TraceError::Parse { path: self.path.clone(), line: self.lines[index], message: message.into() }
    }
}

pub fn read_from(path: &Path, reader: impl Read) -> Result<Trace, TraceError> {
    let mut trace = Trace { path: path.to_owned(), ..Trace::default() };
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
        let lineno = i + 1;
        match parse_record(&line) {
            Ok(Some(record)) => {
                trace.records.push(record);
                trace.lines.push(lineno);
            }
            Ok(None) => {}
            Err(message) => return Err(TraceError::Parse { path: path.to_owned(), line: lineno, message }),
        }
    }
    Ok(trace)
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
    if is_gzip(path) {
        read_from(path, GzDecoder::new(file))
    } else {
        read_from(path, file)
    }
}

pub fn write_to(mut out: impl Write, records: &[MemoryAccess]) -> io::Result<()> {
    writeln!(out, "# core,op,address,pc,icount")?;
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()
}

pub fn write_trace(path: &Path, records: &[MemoryAccess]) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io { path: path.to_owned(), source };
    let file = File::create(path).map_err(io_err)?;
    if is_gzip(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        write_to(&mut enc, records).map_err(io_err)?;
        enc.finish().and_then(|mut w| w.flush()).map_err(io_err)
    } else {
        write_to(BufWriter::new(file), records).map_err(io_err)
    }
}
