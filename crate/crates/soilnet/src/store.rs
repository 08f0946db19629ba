//! Append-only row storage, one CSV file per profile and UTC day:
//! `{root}/{profile}/{YYYY-MM-DD}.csv`.
//!
//! Each file starts with the export header, so a partition is itself a valid
//! CSV export. Rows land in the partition of their node timestamp and are
//! written in arrival order. Files are only ever appended to.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use soilnet_core::{Channel, Ident, StoredRow};

use crate::export::{csv_line, Record, CSV_HEADER};
use crate::timefmt::utc_date;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage full writing {path}: {error}")]
    StorageFull { path: PathBuf, error: io::Error },
    #[error("i/o failure on {path}: {error}")]
    IoFailure { path: PathBuf, error: io::Error },
    #[error("unknown profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid time range: start {start} is after end {end}")]
    InvalidRange { start: i64, end: i64 },
}

impl StoreError {
    fn io(path: &Path, error: io::Error) -> Self {
        let path = path.to_path_buf();
        match error.kind() {
            io::ErrorKind::StorageFull | io::ErrorKind::QuotaExceeded => StoreError::StorageFull { path, error },
            _ => StoreError::IoFailure { path, error },
        }
    }

    /// The write may succeed if retried later.
    pub fn is_retriable(&self) -> bool {
        matches!(self, StoreError::StorageFull { .. } | StoreError::IoFailure { .. })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    /// `fdatasync` after every append.
    pub fsync: bool,
}

/// Where an appended row starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offset {
    pub path: PathBuf,
    pub byte_offset: u64,
}

/// Row filter. `start..end` is half-open on the node timestamp.
#[derive(Debug, Clone, Default)]
pub struct Query {
    pub start: Option<i64>,
    pub end: Option<i64>,
    pub depth_cm: Option<u32>,
    pub channel: Option<Channel>,
}

impl Query {
    pub fn range(start: i64, end: i64) -> Self {
        Self {
            start: Some(start),
            end: Some(end),
            ..Self::default()
        }
    }

    fn matches(&self, row: &StoredRow) -> bool {
        let r = &row.reading;
        self.start.is_none_or(|s| r.timestamp >= s)
            && self.end.is_none_or(|e| r.timestamp < e)
            && self.depth_cm.is_none_or(|d| r.depth_cm == d)
            && self.channel.is_none_or(|c| r.channel == c)
    }

    fn covers_date(&self, date: NaiveDate) -> bool {
        self.start.is_none_or(|s| date >= utc_date(s)) && self.end.is_none_or(|e| date <= utc_date(e - 1))
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    options: StoreOptions,
    writers: Mutex<HashMap<PathBuf, Arc<Mutex<File>>>>,
}

impl Store {
    /// Opens or creates the store under `root` and checks it is writable.
    pub fn open(root: impl Into<PathBuf>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
        let probe = root.join(".write-probe");
        File::create(&probe)
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| StoreError::io(&root, e))?;
        Ok(Self {
            root,
            options,
            writers: Mutex::new(HashMap::new()),
        })
    }

    /// Opens for reading without creating or probing `root`. A missing root
    /// reads as an empty store.
    pub fn open_read_only(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            options: StoreOptions::default(),
            writers: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn partition_path(&self, profile: &Ident, date: NaiveDate) -> PathBuf {
        self.root.join(profile.as_str()).join(format!("{}.csv", date.format("%Y-%m-%d")))
    }

    fn writer(&self, path: &Path) -> Result<Arc<Mutex<File>>, StoreError> {
        let mut writers = self.writers.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(w) = writers.get(path) {
            return Ok(Arc::clone(w));
        }
        let file = open_partition(path).map_err(|e| StoreError::io(path, e))?;
        let w = Arc::new(Mutex::new(file));
        writers.insert(path.to_path_buf(), Arc::clone(&w));
        Ok(w)
    }

    pub fn append(&self, row: &StoredRow) -> Result<Offset, StoreError> {
        let path = self.partition_path(&row.reading.profile_id, utc_date(row.reading.timestamp));
        let writer = self.writer(&path)?;
        let mut file = writer.lock().unwrap_or_else(|e| e.into_inner());
        let line = csv_line(row);
        let result = (|| {
            let byte_offset = file.seek(SeekFrom::End(0))?;
            file.write_all(&line)?;
            if self.options.fsync {
                file.sync_data()?;
            }
            Ok(byte_offset)
        })();
        match result {
            Ok(byte_offset) => Ok(Offset { path, byte_offset }),
            Err(e) => {
                drop(file);
                // Reopen next time so a partial line gets terminated.
                self.writers.lock().unwrap_or_else(|e| e.into_inner()).remove(&path);
                Err(StoreError::io(&path, e))
            }
        }
    }

    /// Syncs every partition written by this process.
    pub fn flush(&self) -> Result<(), StoreError> {
        let writers: Vec<_> = self
            .writers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .map(|(p, w)| (p.clone(), Arc::clone(w)))
            .collect();
        for (path, w) in writers {
            let file = w.lock().unwrap_or_else(|e| e.into_inner());
            file.sync_all().map_err(|e| StoreError::io(&path, e))?;
        }
        Ok(())
    }

    /// Profiles with at least one partition, sorted.
    pub fn profiles(&self) -> Result<Vec<Ident>, StoreError> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(StoreError::io(&self.root, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| StoreError::io(&self.root, e))?;
            if !entry.path().is_dir() {
                continue;
            }
            if let Some(id) = entry.file_name().to_str().and_then(|n| Ident::new(n).ok()) {
                out.push(id);
            }
        }
        out.sort();
        Ok(out)
    }

    fn partitions(&self, profile: &Ident) -> Result<Vec<(NaiveDate, PathBuf)>, StoreError> {
        let dir = self.root.join(profile.as_str());
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownProfile(profile.to_string()))
            }
            Err(e) => return Err(StoreError::io(&dir, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| StoreError::io(&dir, e))?.path();
            let date = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".csv"))
                .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
            if let Some(date) = date {
                out.push((date, path));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Rows of `profile` matching `query`, ordered by node timestamp, then
    /// seq, depth and channel. An empty store has no rows for any profile;
    /// otherwise a profile without partitions is unknown.
    pub fn query(&self, profile: &Ident, query: &Query) -> Result<Vec<StoredRow>, StoreError> {
        if let (Some(start), Some(end)) = (query.start, query.end) {
            if start > end {
                return Err(StoreError::InvalidRange { start, end });
            }
        }
        let partitions = match self.partitions(profile) {
            Err(StoreError::UnknownProfile(_)) if self.profiles()?.is_empty() => return Ok(Vec::new()),
            other => other?,
        };
        let mut rows = Vec::new();
        for (date, path) in partitions {
            if query.covers_date(date) {
                rows.extend(read_partition(&path)?.into_iter().filter(|r| query.matches(r)));
            }
        }
        rows.sort_by_key(|r| (r.reading.timestamp, r.reading.seq, r.reading.depth_cm, r.reading.channel));
        Ok(rows)
    }

    /// Every stored row of every profile, in partition order.
    pub fn scan(&self) -> Result<Vec<StoredRow>, StoreError> {
        let mut rows = Vec::new();
        for profile in self.profiles()? {
            for (_, path) in self.partitions(&profile)? {
                rows.extend(read_partition(&path)?);
            }
        }
        Ok(rows)
    }
}

/// Opens for append, writing the header into a new file and terminating a
/// line left partial by an interrupted write.
fn open_partition(path: &Path) -> io::Result<File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
    let len = file.metadata()?.len();
    if len == 0 {
        file.write_all(CSV_HEADER.as_bytes())?;
        file.write_all(b"\n")?;
    } else {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1))?;
        file.read_exact(&mut last)?;
        if last[0] != b'\n' {
            log::warn!("{}: terminating a partial trailing line", path.display());
            file.write_all(b"\n")?;
        }
    }
    Ok(file)
}

/// Complete lines of one partition. A trailing line without LF is still
/// being written and is ignored; lines that do not decode are skipped.
fn read_partition(path: &Path) -> Result<Vec<StoredRow>, StoreError> {
    let mut bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    bytes.truncate(complete);
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, record) in rdr.deserialize::<Record>().enumerate() {
        match record.map_err(|e| e.to_string()).and_then(Record::into_row) {
            Ok(row) => rows.push(row),
            Err(e) => log::warn!("{}: skipping data line {}: {e}", path.display(), i + 1),
        }
    }
    Ok(rows)
}
