//! Append-only JSON-lines ledger of run records.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::train::RunRecord;

pub type RunKey = (String, String, u64, String);

#[derive(Debug, Default)]
pub struct RunStore {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<RunRecord>,
}

/// Parses store text. A final line without its newline that fails to parse
/// is a torn append and is dropped; any other bad line is an error.
pub fn parse_jsonl(text: &str, file: &str) -> Result<(Vec<RunRecord>, usize)> {
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut good_end = 0usize;
    for line in text.split_inclusive('\n') {
        let complete = line.ends_with('\n');
        let body = line.trim();
        if !body.is_empty() {
            match serde_json::from_str::<RunRecord>(body) {
                Ok(r) => records.push(r),
                Err(_) if !complete => {
                    warn!("{file}: discarding truncated final line at byte {offset}");
                    break;
                }
                Err(e) => return Err(Error::parse(file, offset as u64, e.to_string())),
            }
        }
        offset += line.len();
        good_end = offset;
    }
    Ok((records, good_end))
}

impl RunStore {
    pub fn in_memory() -> Self {
        RunStore::default()
    }

    pub fn from_records(records: Vec<RunRecord>) -> Self {
        RunStore {
            records,
            ..RunStore::default()
        }
    }

    /// Opens or creates the store at `path`, repairing a torn final line.
    pub fn open(path: &Path) -> Result<Self> {
        let (records, repaired) = if path.exists() {
            let text = String::from_utf8(fsutil::read(path)?).map_err(|e| {
                Error::parse(
                    path.display().to_string(),
                    e.utf8_error().valid_up_to() as u64,
                    "not UTF-8",
                )
            })?;
            let (records, good_end) = parse_jsonl(&text, &path.display().to_string())?;
            let mut keep = text[..good_end].to_string();
            if !keep.is_empty() && !keep.ends_with('\n') {
                keep.push('\n');
            }
            let changed = keep.len() != text.len();
            if changed {
                fsutil::write_atomic(path, keep.as_bytes())?;
            }
            (records, changed)
        } else {
            (Vec::new(), false)
        };
        if repaired {
            warn!(
                "{}: store repaired, {} records kept",
                path.display(),
                records.len()
            );
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RunStore {
            path: Some(path.to_path_buf()),
            file: Some(file),
            records,
        })
    }

    /// Reads a store without keeping it open for appends.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&fsutil::read(path)?).into_owned();
        let (records, _) = parse_jsonl(&text, &path.display().to_string())?;
        Ok(RunStore::from_records(records))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes one record as a single line in one write call.
    pub fn append(&mut self, record: RunRecord) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("<store>"));
            f.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
            f.sync_data().map_err(|e| Error::io(path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self) -> HashSet<RunKey> {
        self.records.iter().map(RunRecord::key).collect()
    }

    /// Records for one (variant, dataset) cell, in store order.
    pub fn cell<'a>(
        &'a self,
        variant: &'a str,
        dataset: &'a str,
    ) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.variant_id == variant && r.dataset_id == dataset)
    }

    /// Distinct values of `f` in first-seen order.
    pub fn distinct(&self, f: impl Fn(&RunRecord) -> &str) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(f(r).to_string()) {
                out.push(f(r).to_string());
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}
