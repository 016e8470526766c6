//! Probe corpus files: the ordered, versioned request set shared by every
//! fingerprinting run.
//!
//! File layout (UTF-8, LF):
//!
//! ```text
//! #corpus <kind> <checksum>
//! #parent <checksum>          (only in corpora reduced from a parent)
//! <probe line>
//! ...
//! ```
//!
//! The checksum is the first 16 hex digits of the SHA-256 over the probe
//! lines joined with `\n`, exactly as stored. Fingerprints record it, and
//! the matcher refuses to compare fingerprints taken with different probe
//! sets.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CorpusKind {
    Os,
    Ftp,
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusKind::Os => "os",
            CorpusKind::Ftp => "ftp",
        })
    }
}

impl CorpusKind {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "os" => Some(CorpusKind::Os),
            "ftp" => Some(CorpusKind::Ftp),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or malformed #corpus header line")]
    MalformedHeader,
    #[error("unknown corpus kind {0:?}")]
    UnknownKind(String),
    #[error("checksum mismatch: header says {header}, content hashes to {actual}")]
    ChecksumMismatch { header: String, actual: String },
    #[error("{0}")]
    InvalidInput(String),
}

/// Ordered probe list with its content checksum. Lines are held in stored
/// form (FTP probes keep their `\xNN` escapes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzCorpus {
    pub kind: CorpusKind,
    pub checksum: String,
    pub parent: Option<String>,
    pub lines: Vec<String>,
}

pub fn content_checksum(lines: &[String]) -> String {
    let mut hasher = Sha256::new();
    let mut first = true;
    for line in lines {
        if !first {
            hasher.update(b"\n");
        }
        hasher.update(line.as_bytes());
        first = false;
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

impl FuzzCorpus {
    pub fn from_lines(kind: CorpusKind, lines: Vec<String>) -> Self {
        let checksum = content_checksum(&lines);
        FuzzCorpus { kind, checksum, parent: None, lines }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!("#corpus {} {}\n", self.kind, self.checksum);
        if let Some(parent) = &self.parent {
            out.push_str(&format!("#parent {parent}\n"));
        }
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(self.render().as_bytes())
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(CorpusError::MalformedHeader)?;
        let mut parts = header.split(' ');
        if parts.next() != Some("#corpus") {
            return Err(CorpusError::MalformedHeader);
        }
        let kind_text = parts.next().ok_or(CorpusError::MalformedHeader)?;
        let kind = CorpusKind::parse(kind_text)
            .ok_or_else(|| CorpusError::UnknownKind(kind_text.to_string()))?;
        let checksum = parts.next().ok_or(CorpusError::MalformedHeader)?.to_string();
        if parts.next().is_some() {
            return Err(CorpusError::MalformedHeader);
        }

        let mut content: Vec<String> = lines.map(str::to_string).collect();
        let parent = match content.first() {
            Some(line) if line.starts_with("#parent ") => {
                let p = line["#parent ".len()..].to_string();
                content.remove(0);
                Some(p)
            }
            _ => None,
        };
        let actual = content_checksum(&content);
        if actual != checksum {
            return Err(CorpusError::ChecksumMismatch { header: checksum, actual });
        }
        Ok(FuzzCorpus { kind, checksum, parent, lines: content })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse_round_trip() {
        let corpus =
            FuzzCorpus::from_lines(CorpusKind::Ftp, vec!["USER a".to_string(), String::new()]);
        let parsed = FuzzCorpus::parse(&corpus.render()).unwrap();
        assert_eq!(parsed, corpus);
    }

    #[test]
    fn parent_lineage_survives_round_trip() {
        let mut corpus = FuzzCorpus::from_lines(CorpusKind::Os, vec!["tcp{flags=2}".to_string()]);
        corpus.parent = Some("0011223344556677".to_string());
        let parsed = FuzzCorpus::parse(&corpus.render()).unwrap();
        assert_eq!(parsed.parent.as_deref(), Some("0011223344556677"));
    }

    #[test]
    fn tampered_content_is_detected() {
        let corpus = FuzzCorpus::from_lines(CorpusKind::Os, vec!["tcp{flags=2}".to_string()]);
        let tampered = corpus.render().replace("flags=2", "flags=3");
        assert!(matches!(
            FuzzCorpus::parse(&tampered),
            Err(CorpusError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn checksum_depends_on_order() {
        let a = content_checksum(&["x".to_string(), "y".to_string()]);
        let b = content_checksum(&["y".to_string(), "x".to_string()]);
        assert_ne!(a, b);
    }

    #[test]
    fn probe_lines_starting_with_hash_are_content() {
        let corpus =
            FuzzCorpus::from_lines(CorpusKind::Ftp, vec!["#ELP x".to_string(), "HELP".to_string()]);
        let parsed = FuzzCorpus::parse(&corpus.render()).unwrap();
        assert_eq!(parsed.lines, corpus.lines);
    }
}
