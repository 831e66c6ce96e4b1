//! Append-only JSON-lines journals backing the embedded store.
//!
//! Every store keeps its state in memory and mirrors each mutation as one
//! line in a journal; opening a data directory replays the journals.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub struct Journal<T> {
    path: PathBuf,
    writer: BufWriter<File>,
    sync: bool,
    _record: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> Journal<T> {
    /// Opens (creating if needed) the journal and returns every record in it.
    ///
    /// A torn final line (no trailing newline) left by a crash is dropped.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<T>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| Error::io(&path, e))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    tracing::warn!(path = %path.display(), line_no, "dropping torn journal tail");
                    break;
                }
                valid_len += n as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let record = serde_json::from_str(&line).map_err(|e| Error::CorruptJournal {
                    path: path.clone(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                records.push(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if file.metadata().map_err(|e| Error::io(&path, e))?.len() != valid_len {
            file.set_len(valid_len).map_err(|e| Error::io(&path, e))?;
        }
        Ok((
            Self {
                path,
                writer: BufWriter::new(file),
                sync: false,
                _record: PhantomData,
            },
            records,
        ))
    }

    /// Forces an fsync after every append.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    pub fn append(&mut self, record: &T) -> Result<()> {
        self.append_all(std::slice::from_ref(record))
    }

    pub fn append_all(&mut self, records: &[T]) -> Result<()> {
        for record in records {
            serde_json::to_writer(&mut self.writer, record)?;
            self.writer
                .write_all(b"\n")
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        if self.sync {
            self.writer
                .get_ref()
                .sync_data()
                .map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}
