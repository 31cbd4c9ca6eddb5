use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{EvalRecord, RecordKey};
use crate::error::{Error, Result};

/// Append-only JSONL store of evaluation records, keyed so that an
/// interrupted sweep can resume without repeating calls.
pub struct RecordStore {
    path: PathBuf,
    keys: HashSet<RecordKey>,
    writer: BufWriter<File>,
}

impl RecordStore {
    /// Opens or creates the store. A final line cut off mid-write (no
    /// trailing newline and not valid JSON) is dropped from the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut keys = HashSet::new();
        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&mut file);
            let mut line = String::new();
            let mut index = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| Error::io(&path, e))?;
                if n == 0 {
                    break;
                }
                let complete = line.ends_with('\n');
                let text = line.trim();
                if !text.is_empty() {
                    match serde_json::from_str::<EvalRecord>(text) {
                        Ok(r) => {
                            keys.insert(r.key());
                        }
                        Err(_) if !complete => {
                            log::warn!("{}: dropping truncated final record", path.display());
                            break;
                        }
                        Err(e) => {
                            return Err(Error::Parse { index, message: format!("{}: {e}", path.display()) });
                        }
                    }
                }
                good_len += n as u64;
                index += 1;
            }
        }
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if good_len < len {
            file.set_len(good_len).map_err(|e| Error::io(&path, e))?;
        }
        if good_len > 0 {
            // a complete final record written without its newline
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(good_len - 1)).map_err(|e| Error::io(&path, e))?;
            std::io::Read::read_exact(&mut file, &mut last).map_err(|e| Error::io(&path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(Self { path, keys, writer: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.keys.contains(key)
    }

    /// Appends and flushes `record`. Returns false if its key was present.
    pub fn append(&mut self, record: &EvalRecord) -> Result<bool> {
        if !self.keys.insert(record.key()) {
            return Ok(false);
        }
        let line = serde_json::to_string(record)?;
        let io = |e| Error::io(&self.path, e);
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)?;
        Ok(true)
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::Parse { index, message: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_records(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
