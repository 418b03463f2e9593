//! JSON-lines candidate ledger.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dggan_core::fid::RawFid;
use dggan_core::search::{Candidate, CandidateRecord, SearchSink};

use crate::error::{Error, IoContext, Result};

pub fn to_line(r: &CandidateRecord) -> String {
    serde_json::to_string(r).expect("ledger records always serialize")
}

/// Parses a ledger; errors name the 1-based line.
pub fn parse(text: &str, path: &Path) -> Result<Vec<CandidateRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|source| Error::Json { path: path.into(), line: i + 1, source })?;
        out.push(r);
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<CandidateRecord>> {
    parse(&fs::read_to_string(path).at(path)?, path)
}

pub fn write(path: &Path, ledger: &[CandidateRecord]) -> Result<()> {
    let mut s = String::new();
    for r in ledger {
        s.push_str(&to_line(r));
        s.push('\n');
    }
    fs::write(path, s).at(path)
}

/// Reads the complete lines of a ledger left by an interrupted run and
/// truncates a partially written last line.
pub fn recover(path: &Path) -> Result<Vec<CandidateRecord>> {
    let bytes = fs::read(path).at(path)?;
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).at(path)?;
        f.set_len(complete as u64).at(path)?;
    }
    let text = String::from_utf8(bytes[..complete].to_vec())
        .map_err(|e| Error::Ledger { path: path.into(), detail: e.to_string() })?;
    parse(&text, path)
}

/// Appends records as the search produces them. A resumed run first checks
/// each record against the prefix already on disk and only appends past it.
pub struct LedgerSink {
    path: PathBuf,
    out: BufWriter<File>,
    prefix: Vec<CandidateRecord>,
    pos: usize,
    pub quiet: bool,
}

impl LedgerSink {
    pub fn create(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().write(true).create_new(true).open(path).at(path)?;
        Ok(LedgerSink { path: path.into(), out: BufWriter::new(f), prefix: Vec::new(), pos: 0, quiet: false })
    }

    pub fn resume(path: &Path) -> Result<Self> {
        let prefix = recover(path)?;
        let f = OpenOptions::new().append(true).open(path).at(path)?;
        Ok(LedgerSink { path: path.into(), out: BufWriter::new(f), prefix, pos: 0, quiet: false })
    }

    pub fn replayed(&self) -> usize {
        self.pos.min(self.prefix.len())
    }

    /// Errors if the run ended before re-deriving every stored record.
    pub fn finish(mut self) -> Result<()> {
        if self.pos < self.prefix.len() {
            return Err(Error::Ledger {
                path: self.path,
                detail: format!("run ended after {} of {} recorded candidates", self.pos, self.prefix.len()),
            });
        }
        self.out.flush().at(&self.path)
    }
}

impl SearchSink for LedgerSink {
    fn append(&mut self, record: &CandidateRecord) -> dggan_core::Result<()> {
        let contract = |d: String| dggan_core::Error::Contract(d);
        if let Some(old) = self.prefix.get(self.pos) {
            if old != record {
                return Err(contract(format!(
                    "ledger line {} holds {} but the resumed run produced {}",
                    self.pos + 1,
                    to_line(old),
                    to_line(record)
                )));
            }
        } else {
            writeln!(self.out, "{}", to_line(record))
                .and_then(|_| self.out.flush())
                .map_err(|e| contract(format!("{}: {e}", self.path.display())))?;
        }
        self.pos += 1;
        Ok(())
    }

    fn depth_done(&mut self, depth: u32, kept: &[Candidate]) -> dggan_core::Result<()> {
        if !self.quiet {
            let ids: Vec<&str> = kept.iter().map(|c| c.id()).collect();
            println!("depth {depth}: kept [{}]", ids.join(", "));
        }
        Ok(())
    }

    fn baseline(&mut self, fid: RawFid) -> dggan_core::Result<()> {
        if !self.quiet {
            println!("baseline {}px: fid {:.4}", fid.resolution, fid.value);
        }
        Ok(())
    }
}
