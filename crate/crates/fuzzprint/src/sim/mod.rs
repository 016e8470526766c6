//! Deterministic simulated targets: configurable TCP stack personalities
//! and scripted FTP servers. They stand in for real installations so the
//! whole fingerprinting pipeline can be exercised, and its outputs pinned,
//! without a lab.
//!
//! Personalities are data files, not code. The text format is line based:
//!
//! ```text
//! kind = tcp | ftp
//! name = <identifier>
//! <personality keys>
//! rule:                (tcp only; evaluated first-match, in file order)
//!   <match keys>
//!   <response keys>
//! ```
//!
//! Keys are `key = value`, `#` starts a comment, indentation is free.
//! A behavior is always a pure function of the probe, so identical
//! (personality, corpus) pairs yield identical fingerprints.

pub mod examples;
pub mod ftp;
pub mod stack;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use ftp::{
    respond_ftp, serve_ftp, FtpPersonality, FtpServerHandle, FtpServerSession, LengthClass,
};
pub use stack::{
    respond_tcp, scanner_probe, AckMode, DefaultBehavior, PortMatch, ResponseTemplate, Rule,
    StackPersonality, SCANNER_PROBE_WINDOW,
};

#[derive(Debug, Error)]
pub enum PersonalityError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key {0:?}")]
    MissingKey(&'static str),
    #[error("personality answers the scanner's SYN to open port {port} with flags {flags} instead of SYN+ACK")]
    NoHandshake { port: u16, flags: u64 },
    #[error("status code {0} is not a valid 3-digit FTP reply code")]
    InvalidCode(u64),
    #[error("rule response options do not pad to a 32-bit word multiple")]
    UnalignedOptions,
    #[error("cannot bind the live server: {0}")]
    Bind(std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Personality {
    Tcp(StackPersonality),
    Ftp(FtpPersonality),
}

impl Personality {
    pub fn name(&self) -> &str {
        match self {
            Personality::Tcp(p) => &p.name,
            Personality::Ftp(p) => &p.name,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Personality::Tcp(p) => p.render(),
            Personality::Ftp(p) => p.render(),
        }
    }
}

/// A `key = value` line with its 1-based line number.
#[derive(Debug, Clone)]
pub(crate) struct KeyValue {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub(crate) fn syntax(line: usize, message: impl Into<String>) -> PersonalityError {
    PersonalityError::Syntax { line, message: message.into() }
}

/// Splits the file into top-level entries and `rule:` blocks.
pub(crate) fn tokenize(
    text: &str,
) -> Result<(Vec<KeyValue>, Vec<Vec<KeyValue>>), PersonalityError> {
    let mut top = Vec::new();
    let mut rules: Vec<Vec<KeyValue>> = Vec::new();
    let mut in_rule = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "rule:" {
            rules.push(Vec::new());
            in_rule = true;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(line_no, format!("expected `key = value`, found {line:?}")))?;
        let entry = KeyValue {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        };
        if in_rule {
            rules.last_mut().expect("rule block exists").push(entry);
        } else {
            top.push(entry);
        }
    }
    Ok((top, rules))
}

pub fn parse_personality(text: &str) -> Result<Personality, PersonalityError> {
    let (top, rules) = tokenize(text)?;
    let kind = top
        .iter()
        .find(|kv| kv.key == "kind")
        .ok_or(PersonalityError::MissingKey("kind"))?;
    match kind.value.as_str() {
        "tcp" => Ok(Personality::Tcp(stack::parse_stack(&top, &rules)?)),
        "ftp" => {
            if !rules.is_empty() {
                return Err(syntax(kind.line, "ftp personalities do not take rule: blocks"));
            }
            Ok(Personality::Ftp(ftp::parse_ftp(&top)?))
        }
        other => Err(syntax(kind.line, format!("unknown personality kind {other:?}"))),
    }
}

pub fn load_personality(path: &Path) -> Result<Personality, PersonalityError> {
    let text = fs::read_to_string(path)
        .map_err(|source| PersonalityError::Io { path: path.display().to_string(), source })?;
    parse_personality(&text)
}
