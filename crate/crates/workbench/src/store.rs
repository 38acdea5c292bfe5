//! File-backed persistence under a data directory.
//!
//! Records that accumulate (annotations, predictions, verdicts) live in
//! append-only JSON Lines logs. Documents (sessions, run records, the
//! adjudication queue, the ingested corpus) are replaced atomically by
//! writing a temporary file and renaming it over the target.
//!
//! On open, every log line that does not parse is moved to
//! `quarantine/<log>.jsonl` together with its line number and the parse
//! error, and the log is rewritten without it. A final line missing its
//! newline (an interrupted append) is treated the same way.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("data directory {0} is locked by another writer (remove {1} if it is stale)")]
    Locked(PathBuf, PathBuf),
    #[error("{0} is immutable once complete")]
    Immutable(String),
}

pub type StoreResult<T> = Result<T, StoreError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// A log line that could not be loaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedLine {
    pub log: String,
    pub line: usize,
    pub content: String,
    pub error: String,
}

/// Append-only JSON Lines log of `T`.
pub struct JsonlLog<T> {
    path: PathBuf,
    file: Mutex<File>,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    /// Open (creating if needed), load every record and quarantine lines that
    /// fail to parse.
    pub fn open(path: &Path, quarantine_dir: &Path) -> StoreResult<(Self, Vec<T>, Vec<QuarantinedLine>)> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let bytes = read_or_empty(path)?;
        let name = log_name(path);
        let scan = scan::<T>(&bytes, &name);

        if !scan.bad.is_empty() {
            let qpath = quarantine_dir.join(format!("{name}.jsonl"));
            fs::create_dir_all(quarantine_dir).map_err(io_err(quarantine_dir))?;
            let mut q = OpenOptions::new().create(true).append(true).open(&qpath).map_err(io_err(&qpath))?;
            for b in &scan.bad {
                let mut line = serde_json::to_vec(b).expect("quarantine record serializes");
                line.push(b'\n');
                q.write_all(&line).map_err(io_err(&qpath))?;
            }
            q.sync_all().map_err(io_err(&qpath))?;
            write_atomic(path, &scan.cleaned)?;
        }

        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        let log = JsonlLog { path: path.to_path_buf(), file: Mutex::new(file), _marker: PhantomData };
        Ok((log, scan.records, scan.bad))
    }

    /// Append one record as a single write followed by fsync.
    pub fn append(&self, record: &T) -> StoreResult<()> {
        let mut line =
            serde_json::to_vec(record).map_err(|source| StoreError::Json { path: self.path.clone(), source })?;
        line.push(b'\n');
        let mut file = self.file.lock().expect("log mutex poisoned");
        file.write_all(&line).map_err(io_err(&self.path))?;
        file.sync_data().map_err(io_err(&self.path))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Load a log without modifying it; unreadable lines are reported, not moved.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> StoreResult<(Vec<T>, Vec<QuarantinedLine>)> {
    let bytes = read_or_empty(path)?;
    let scan = scan::<T>(&bytes, &log_name(path));
    Ok((scan.records, scan.bad))
}

fn read_or_empty(path: &Path) -> StoreResult<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn log_name(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("log").to_string()
}

struct Scan<T> {
    records: Vec<T>,
    /// The input minus every bad line.
    cleaned: Vec<u8>,
    bad: Vec<QuarantinedLine>,
}

fn scan<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Scan<T> {
    let mut records = Vec::new();
    let mut cleaned = Vec::with_capacity(bytes.len());
    let mut bad = Vec::new();
    let complete_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    for (i, raw) in bytes[..complete_len].split(|&b| b == b'\n').enumerate() {
        if raw.is_empty() {
            continue;
        }
        match parse_line::<T>(raw) {
            Ok(r) => {
                records.push(r);
                cleaned.extend_from_slice(raw);
                cleaned.push(b'\n');
            }
            Err(e) => bad.push(QuarantinedLine {
                log: name.to_string(),
                line: i + 1,
                content: String::from_utf8_lossy(raw).into_owned(),
                error: e,
            }),
        }
    }
    if complete_len < bytes.len() {
        let line = bytes[..complete_len].iter().filter(|&&b| b == b'\n').count() + 1;
        bad.push(QuarantinedLine {
            log: name.to_string(),
            line,
            content: String::from_utf8_lossy(&bytes[complete_len..]).into_owned(),
            error: "truncated record (no trailing newline)".into(),
        });
    }
    Scan { records, cleaned, bad }
}

fn parse_line<T: DeserializeOwned>(raw: &[u8]) -> Result<T, String> {
    let text = std::str::from_utf8(raw).map_err(|e| e.to_string())?;
    serde_json::from_str(text).map_err(|e| e.to_string())
}

/// Write `bytes` to a sibling temp file, fsync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> StoreResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file_name = path.file_name().and_then(|s| s.to_str()).unwrap_or("doc");
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> StoreResult<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|source| StoreError::Json { path: path.into(), source })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> StoreResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| StoreError::Json { path: path.into(), source })
}

pub fn read_json_opt<T: DeserializeOwned>(path: &Path) -> StoreResult<Option<T>> {
    match fs::read_to_string(path) {
        Ok(text) => {
            serde_json::from_str(&text).map(Some).map_err(|source| StoreError::Json { path: path.into(), source })
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Exclusive writer lock on a data directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub const FILE: &'static str = ".framelab.lock";

    pub fn acquire(data_dir: &Path) -> StoreResult<DirLock> {
        fs::create_dir_all(data_dir).map_err(io_err(data_dir))?;
        let path = data_dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(StoreError::Locked(data_dir.to_path_buf(), path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Rec {
        n: u32,
        s: String,
    }

    fn rec(n: u32) -> Rec {
        Rec { n, s: format!("r{n}") }
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let (log, recs, bad) = JsonlLog::<Rec>::open(&p, &dir.path().join("q")).unwrap();
        assert!(recs.is_empty() && bad.is_empty());
        for n in 0..100 {
            log.append(&rec(n)).unwrap();
        }
        drop(log);
        let (_, recs, bad) = JsonlLog::<Rec>::open(&p, &dir.path().join("q")).unwrap();
        assert_eq!(recs, (0..100).map(rec).collect::<Vec<_>>());
        assert!(bad.is_empty());
    }

    #[test]
    fn truncated_tail_is_quarantined_and_removed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let q = dir.path().join("q");
        {
            let (log, _, _) = JsonlLog::<Rec>::open(&p, &q).unwrap();
            for n in 0..5 {
                log.append(&rec(n)).unwrap();
            }
        }
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(br#"{"n":5,"s":"r"#).unwrap();
        drop(f);

        let (log, recs, bad) = JsonlLog::<Rec>::open(&p, &q).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].line, 6);
        // appends after recovery land on a clean line
        log.append(&rec(6)).unwrap();
        drop(log);
        let (_, recs, bad) = JsonlLog::<Rec>::open(&p, &q).unwrap();
        assert_eq!(recs.last().unwrap(), &rec(6));
        assert!(bad.is_empty());
        let quarantined = fs::read_to_string(q.join("log.jsonl")).unwrap();
        assert_eq!(quarantined.lines().count(), 1);
    }

    #[test]
    fn corrupt_middle_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        fs::write(&p, "{\"n\":1,\"s\":\"a\"}\ngarbage\n{\"n\":2,\"s\":\"b\"}\n").unwrap();
        let (_, recs, bad) = JsonlLog::<Rec>::open(&p, &dir.path().join("q")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(bad[0].line, 2);
        assert_eq!(bad[0].content, "garbage");
    }

    #[test]
    fn atomic_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/doc.json");
        write_json(&p, &rec(3)).unwrap();
        assert_eq!(read_json::<Rec>(&p).unwrap(), rec(3));
        assert_eq!(read_json_opt::<Rec>(&dir.path().join("none.json")).unwrap(), None);
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(StoreError::Locked(..))));
        drop(l);
        DirLock::acquire(dir.path()).unwrap();
    }
}
