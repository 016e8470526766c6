//! Persistent fingerprint collection: the dynamically extensible knowledge
//! base of labeled response behaviors.
//!
//! Layout: `<root>/<kind>/<slug>.fp`, one plain-text file per fingerprint
//! (UTF-8, LF). The first line is
//!
//! ```text
//! #fingerprint <kind> <label> <corpus-checksum>
//! ```
//!
//! followed by one record per line: an APD line (OS), a 3-digit status
//! code (FTP), or an empty line for a probe that got no answer. Line `n`
//! is the response to corpus probe `n`. The filename slug is only a
//! convenience — the header is authoritative. Existing files are never
//! mutated; adding a fingerprint always creates a new file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::CorpusKind;
use crate::packet::{decode_apd, encode_apd, PacketDescription};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("a {kind} fingerprint labeled {label:?} already exists")]
    DuplicateLabel { kind: CorpusKind, label: String },
    #[error("no {kind} fingerprint labeled {label:?}")]
    NotFound { kind: CorpusKind, label: String },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("label {0:?} must be non-empty printable text without repeated or edge spaces")]
    BadLabel(String),
}

/// One response record: blank means the target never answered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Blank,
    Os(PacketDescription),
    Ftp(u16),
}

impl Record {
    pub fn is_blank(&self) -> bool {
        matches!(self, Record::Blank)
    }

    pub fn render(&self) -> String {
        match self {
            Record::Blank => String::new(),
            Record::Os(pkt) => encode_apd(pkt).expect("stored responses encode"),
            Record::Ftp(code) => format!("{code:03}"),
        }
    }

    pub fn parse(kind: CorpusKind, line: &str) -> Result<Record, String> {
        if line.is_empty() {
            return Ok(Record::Blank);
        }
        match kind {
            CorpusKind::Os => {
                decode_apd(line).map(Record::Os).map_err(|e| e.to_string())
            }
            CorpusKind::Ftp => {
                if line.len() == 3 && line.bytes().all(|b| b.is_ascii_digit()) {
                    Ok(Record::Ftp(line.parse().expect("three digits")))
                } else {
                    Err(format!("expected a 3-digit status code, found {line:?}"))
                }
            }
        }
    }
}

/// An ordered list of response records paired 1:1 with the probes of the
/// corpus identified by `corpus_checksum`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub label: String,
    pub kind: CorpusKind,
    pub corpus_checksum: String,
    pub lines: Vec<Record>,
}

fn validate_label(label: &str) -> Result<(), StoreError> {
    let ok = !label.is_empty()
        && !label.starts_with(' ')
        && !label.ends_with(' ')
        && !label.contains("  ")
        && label.chars().all(|c| c.is_ascii_graphic() || c == ' ');
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadLabel(label.to_string()))
    }
}

impl Fingerprint {
    pub fn render(&self) -> String {
        let mut out =
            format!("#fingerprint {} {} {}\n", self.kind, self.label, self.corpus_checksum);
        for record in &self.lines {
            out.push_str(&record.render());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty file")?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() < 4 || parts[0] != "#fingerprint" {
            return Err(format!("malformed header {header:?}"));
        }
        let kind = CorpusKind::parse(parts[1])
            .ok_or_else(|| format!("unknown fingerprint kind {:?}", parts[1]))?;
        let corpus_checksum = parts[parts.len() - 1].to_string();
        let label = parts[2..parts.len() - 1].join(" ");
        validate_label(&label).map_err(|e| e.to_string())?;
        let mut records = Vec::new();
        for (idx, line) in lines.enumerate() {
            let record = Record::parse(kind, line)
                .map_err(|message| format!("record {}: {message}", idx + 1))?;
            records.push(record);
        }
        Ok(Fingerprint { label, kind, corpus_checksum, lines: records })
    }

    pub fn blank_count(&self) -> usize {
        self.lines.iter().filter(|r| r.is_blank()).count()
    }
}

fn slug_of(label: &str) -> String {
    let mut slug = String::with_capacity(label.len());
    let mut last_dash = true;
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
            last_dash = false;
        } else if !last_dash {
            slug.push('-');
            last_dash = true;
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    if slug.is_empty() {
        slug.push_str("fingerprint");
    }
    slug
}

/// Directory-backed fingerprint collection. Labels are unique per kind.
/// Reads can happen concurrently; writes go through `&mut self`, so a
/// collection handle has a single writer by construction.
#[derive(Debug)]
pub struct Collection {
    root: PathBuf,
    index: BTreeMap<(CorpusKind, String), PathBuf>,
}

impl Collection {
    /// Opens (creating directories as needed) and indexes a collection.
    /// The index is built from the file headers, not the filenames.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let mut index = BTreeMap::new();
        for kind in [CorpusKind::Os, CorpusKind::Ftp] {
            let dir = root.join(kind.to_string());
            fs::create_dir_all(&dir)
                .map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
            let entries = fs::read_dir(&dir)
                .map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
            for entry in entries {
                let entry = entry
                    .map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
                let path = entry.path();
                if path.extension().and_then(|e| e.to_str()) != Some("fp") {
                    continue;
                }
                let fp = load_file(&path)?;
                if fp.kind != kind {
                    return Err(StoreError::Corrupt {
                        path: path.display().to_string(),
                        message: format!("a {} fingerprint is filed under {kind}", fp.kind),
                    });
                }
                index.insert((kind, fp.label), path);
            }
        }
        Ok(Collection { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Labels of one kind, sorted.
    pub fn labels(&self, kind: CorpusKind) -> Vec<String> {
        self.index.keys().filter(|(k, _)| *k == kind).map(|(_, l)| l.clone()).collect()
    }

    /// All entries as (kind, label), sorted.
    pub fn list(&self) -> Vec<(CorpusKind, String)> {
        self.index.keys().cloned().collect()
    }

    pub fn contains(&self, kind: CorpusKind, label: &str) -> bool {
        self.index.contains_key(&(kind, label.to_string()))
    }

    /// Writes a new fingerprint file. Refuses duplicates: stored
    /// fingerprints are never overwritten.
    pub fn save(&mut self, fp: &Fingerprint) -> Result<PathBuf, StoreError> {
        validate_label(&fp.label)?;
        let key = (fp.kind, fp.label.clone());
        if self.index.contains_key(&key) {
            return Err(StoreError::DuplicateLabel { kind: fp.kind, label: fp.label.clone() });
        }
        let dir = self.root.join(fp.kind.to_string());
        let slug = slug_of(&fp.label);
        let mut path = dir.join(format!("{slug}.fp"));
        let mut suffix = 2;
        while path.exists() {
            path = dir.join(format!("{slug}-{suffix}.fp"));
            suffix += 1;
        }
        fs::write(&path, fp.render())
            .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        self.index.insert(key, path.clone());
        Ok(path)
    }

    pub fn load(&self, kind: CorpusKind, label: &str) -> Result<Fingerprint, StoreError> {
        let path = self
            .index
            .get(&(kind, label.to_string()))
            .ok_or_else(|| StoreError::NotFound { kind, label: label.to_string() })?;
        load_file(path)
    }

    /// Every fingerprint of one kind, sorted by label.
    pub fn load_all(&self, kind: CorpusKind) -> Result<Vec<Fingerprint>, StoreError> {
        self.index
            .iter()
            .filter(|((k, _), _)| *k == kind)
            .map(|(_, path)| load_file(path))
            .collect()
    }
}

/// Loads and validates one fingerprint file.
pub fn load_file(path: &Path) -> Result<Fingerprint, StoreError> {
    let text = fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
    Fingerprint::parse(&text)
        .map_err(|message| StoreError::Corrupt { path: path.display().to_string(), message })
}
