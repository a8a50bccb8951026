//! Append-only line-record files.
//!
//! Layout: one JSON object per line. The first line is a header carrying the
//! format name, version and embedding dimension. Later lines are either
//! `put` records or `del` tombstones. Compaction rewrites the file with the
//! header and live records only, via a temp file and rename.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::UserId;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub user_id: UserId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line<T> {
    Header(Header),
    Put { entry: T },
    Del { id: String },
}

/// Records that can live in a log.
pub trait Keyed {
    fn key(&self) -> &str;
}

/// Result of reading a log: intact live records in append order, plus the
/// first unreadable line if there was one (reading stops there).
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<T> {
    pub header: Option<Header>,
    pub entries: Vec<T>,
    pub bad_line: Option<(usize, String)>,
    /// Number of tombstone lines applied.
    pub tombstones: usize,
}

impl<T> Scan<T> {
    pub fn into_strict(self, path: &Path) -> Result<(Option<Header>, Vec<T>)> {
        match self.bad_line {
            Some((line, reason)) => Err(Error::Corrupt {
                path: path.to_owned(),
                line,
                reason,
            }),
            None => Ok((self.header, self.entries)),
        }
    }
}

/// Reads `path`. A missing or empty file is an empty log. The header format
/// and version are checked; a damaged line stops the scan and is reported.
pub fn scan<T: DeserializeOwned + Keyed>(path: &Path, format: &str) -> Result<Scan<T>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(Scan {
                header: None,
                entries: Vec::new(),
                bad_line: None,
                tombstones: 0,
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut header = None;
    let mut slots: Vec<Option<T>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut bad_line = None;
    let mut tombstones = 0;

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<T> = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                bad_line = Some((lineno, e.to_string()));
                break;
            }
        };
        match parsed {
            Line::Header(h) => {
                if header.is_some() || !slots.is_empty() {
                    bad_line = Some((lineno, "header record after the first line".into()));
                    break;
                }
                if h.format != format {
                    return Err(Error::Corrupt {
                        path: path.to_owned(),
                        line: lineno,
                        reason: format!("expected format {format:?}, found {:?}", h.format),
                    });
                }
                if h.version != FORMAT_VERSION {
                    return Err(Error::Migration {
                        path: path.to_owned(),
                        found: h.version,
                        expected: FORMAT_VERSION,
                    });
                }
                header = Some(h);
            }
            _ if header.is_none() => {
                bad_line = Some((lineno, "record before header".into()));
                break;
            }
            Line::Put { entry } => {
                let key = entry.key().to_owned();
                if index.contains_key(&key) {
                    bad_line = Some((lineno, format!("duplicate live id {key:?}")));
                    break;
                }
                index.insert(key, slots.len());
                slots.push(Some(entry));
            }
            Line::Del { id } => match index.remove(&id) {
                Some(pos) => {
                    slots[pos] = None;
                    tombstones += 1;
                }
                None => {
                    bad_line = Some((lineno, format!("tombstone for unknown id {id:?}")));
                    break;
                }
            },
        }
    }
    Ok(Scan {
        header,
        entries: slots.into_iter().flatten().collect(),
        bad_line,
        tombstones,
    })
}

/// Writable handle on a log file.
#[derive(Debug)]
pub struct LineLog {
    path: PathBuf,
    header: Header,
}

impl LineLog {
    /// Opens (creating if needed) the log at `path`, returning it with its
    /// current live records.
    pub fn open<T: DeserializeOwned + Serialize + Keyed>(
        path: &Path,
        header: Header,
    ) -> Result<(Self, Vec<T>)> {
        let (found, entries) = scan::<T>(path, &header.format)?.into_strict(path)?;
        let log = match found {
            Some(h) => {
                if h.user_id != header.user_id {
                    return Err(Error::Config(format!(
                        "{} belongs to user {}, not {}",
                        path.display(),
                        h.user_id,
                        header.user_id
                    )));
                }
                Self {
                    path: path.to_owned(),
                    header: h,
                }
            }
            None => {
                let log = Self {
                    path: path.to_owned(),
                    header,
                };
                log.rewrite::<T>(&[])?;
                log
            }
        };
        Ok((log, entries))
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn put<T: Serialize>(&self, entry: &T) -> Result<()> {
        self.append_line(&Line::Put { entry })
    }

    pub fn del(&self, id: &str) -> Result<()> {
        self.append_line(&Line::<()>::Del { id: id.to_owned() })
    }

    fn append_line<T: Serialize>(&self, line: &Line<T>) -> Result<()> {
        let mut text = serde_json::to_string(line)
            .map_err(|e| Error::InvalidArgument(format!("unserializable record: {e}")))?;
        text.push('\n');
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let before = file.metadata().map_err(|e| Error::io(&self.path, e))?.len();
        let written = file
            .write_all(text.as_bytes())
            .and_then(|_| file.sync_data());
        if let Err(e) = written {
            // Drop whatever part of the line made it out.
            let _ = file.set_len(before);
            return Err(Error::io(&self.path, e));
        }
        Ok(())
    }

    /// Replaces the file with the header plus `entries`, atomically.
    pub fn rewrite<T: Serialize>(&self, entries: &[T]) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = self.path.with_extension("tmp");
        let mut out = String::new();
        let push = |out: &mut String, v: String| {
            out.push_str(&v);
            out.push('\n');
        };
        let enc = |v: &Line<&T>| {
            serde_json::to_string(v)
                .map_err(|e| Error::InvalidArgument(format!("unserializable record: {e}")))
        };
        push(&mut out, enc(&Line::Header(self.header.clone()))?);
        for entry in entries {
            push(&mut out, enc(&Line::Put { entry })?);
        }
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(out.as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        if let Some(dir) = self.path.parent() {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }
}
