//! Mutation-based fuzzer for the FTP probe corpus.
//!
//! Starting from valid control-connection commands, one base probe is
//! built per command and argument length, and every base probe spawns a
//! number of instances that are mutated step by step. Each mutation applies
//! exactly one random edit — insert, replace or delete one character — so
//! consecutive snapshots are always at edit distance 1.
//!
//! Corpus lines store probes with bytes outside printable ASCII escaped as
//! `\xNN` (and `\` itself as `\x5c`); the escaping exists only in the file,
//! probes go on the wire unescaped.

use thiserror::Error;

use crate::corpus::{CorpusKind, FuzzCorpus};
use crate::rng::DeterministicRng;

/// Commands whose effect is not limited to the control connection:
/// downloads, uploads and directory creation are never fuzzed because the
/// reply would depend on (and the probe could alter) the target's file
/// system.
const EXCLUDED_COMMANDS: &[&str] = &["RETR", "STOR", "STOU", "APPE", "MKD", "XMKD"];

/// Control-connection commands fuzzed by default. Non-standardized
/// commands are deliberately included; whether a server knows them at all
/// is itself a distinguishing feature.
pub const DEFAULT_COMMANDS: &[&str] = &[
    "USER", "PASS", "ACCT", "TYPE", "MODE", "STRU", "STAT", "SYST", "HELP", "NOOP", "FEAT",
    "OPTS", "SITE", "REST", "ALLO", "PORT",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtpGenError {
    #[error("command {0:?} touches the data connection or the file system and cannot be fuzzed")]
    ExcludedCommand(String),
    #[error("command {0:?} must be a non-empty uppercase token without CR/LF or spaces")]
    MalformedCommand(String),
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("instances must be at least 1")]
    ZeroInstances,
}

/// One FTP probe: `COMMAND SP argument`, no separator when the argument is
/// empty. Neither part may contain CR or LF; CRLF is appended on the wire
/// only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtpProbe {
    pub command: String,
    pub argument: String,
}

impl FtpProbe {
    pub fn render(&self) -> String {
        if self.argument.is_empty() {
            self.command.clone()
        } else {
            format!("{} {}", self.command, self.argument)
        }
    }

    /// Splits a probe line at the first space. Mutated lines may have a
    /// corrupted command token or no argument at all.
    pub fn split(line: &str) -> (&str, &str) {
        match line.split_once(' ') {
            Some((cmd, arg)) => (cmd, arg),
            None => (line, ""),
        }
    }
}

/// Which commands to fuzz.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandCorpusSpec {
    commands: Vec<String>,
}

impl CommandCorpusSpec {
    pub fn new(commands: Vec<String>) -> Result<Self, FtpGenError> {
        for c in &commands {
            if c.is_empty()
                || !c.chars().all(|ch| ch.is_ascii_uppercase() || ch.is_ascii_digit())
            {
                return Err(FtpGenError::MalformedCommand(c.clone()));
            }
            if EXCLUDED_COMMANDS.contains(&c.as_str()) {
                return Err(FtpGenError::ExcludedCommand(c.clone()));
            }
        }
        Ok(CommandCorpusSpec { commands })
    }

    pub fn default_commands() -> Self {
        CommandCorpusSpec { commands: DEFAULT_COMMANDS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn commands(&self) -> &[String] {
        &self.commands
    }
}

/// Corpus dimensions: argument lengths 1..=max_len, `instances` mutation
/// chains per base probe, `mutations_per_instance` edits per chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutationParams {
    pub max_len: usize,
    pub instances: usize,
    pub mutations_per_instance: usize,
    pub seed: u64,
}

impl MutationParams {
    pub fn new(
        max_len: usize,
        instances: usize,
        mutations_per_instance: usize,
        seed: u64,
    ) -> Result<Self, FtpGenError> {
        if max_len == 0 {
            return Err(FtpGenError::ZeroMaxLen);
        }
        if instances == 0 {
            return Err(FtpGenError::ZeroInstances);
        }
        Ok(MutationParams { max_len, instances, mutations_per_instance, seed })
    }
}

impl Default for MutationParams {
    fn default() -> Self {
        MutationParams { max_len: 64, instances: 4, mutations_per_instance: 8, seed: 1 }
    }
}

const PRINTABLE_FIRST: u8 = 0x20;
const PRINTABLE_COUNT: u64 = 95; // 0x20..=0x7e

fn random_printable(rng: &mut DeterministicRng) -> u8 {
    PRINTABLE_FIRST + rng.below(PRINTABLE_COUNT) as u8
}

/// One printable character different from `original`.
fn random_printable_except(rng: &mut DeterministicRng, original: u8) -> u8 {
    let draw = rng.below(PRINTABLE_COUNT - 1) as u8;
    let candidate = PRINTABLE_FIRST + draw;
    if candidate >= original && (PRINTABLE_FIRST..=0x7e).contains(&original) {
        candidate + 1
    } else {
        candidate
    }
}

/// Applies exactly one random edit: insert a random printable character at
/// a random position, replace one character with a different printable
/// character, or delete one character. The draw order is fixed (edit kind,
/// position, character) so streams replay identically everywhere. An empty
/// message can only grow.
pub fn mutate(message: &str, rng: &mut DeterministicRng) -> String {
    debug_assert!(!message.contains('\r') && !message.contains('\n'));
    let mut bytes = message.as_bytes().to_vec();
    let edit = if bytes.is_empty() { 0 } else { rng.below(3) };
    match edit {
        0 => {
            let pos = rng.below(bytes.len() as u64 + 1) as usize;
            bytes.insert(pos, random_printable(rng));
        }
        1 => {
            let pos = rng.below(bytes.len() as u64) as usize;
            bytes[pos] = random_printable_except(rng, bytes[pos]);
        }
        _ => {
            let pos = rng.below(bytes.len() as u64) as usize;
            bytes.remove(pos);
        }
    }
    // Probes are printable ASCII throughout: bases are built from ASCII
    // and edits only insert printable bytes.
    String::from_utf8(bytes).expect("mutations keep probes ASCII")
}

/// Escapes a probe for file storage.
pub fn escape_probe(probe: &str) -> String {
    let mut out = String::with_capacity(probe.len());
    for b in probe.bytes() {
        if b == b'\\' || !(0x20..=0x7e).contains(&b) {
            out.push_str(&format!("\\x{b:02x}"));
        } else {
            out.push(b as char);
        }
    }
    out
}

/// Reverses [`escape_probe`]. Lone backslashes that do not introduce a
/// valid `\xNN` escape are taken literally.
pub fn unescape_probe(stored: &str) -> String {
    let bytes = stored.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\'
            && i + 3 < bytes.len()
            && bytes[i + 1] == b'x'
            && bytes[i + 2].is_ascii_hexdigit()
            && bytes[i + 3].is_ascii_hexdigit()
        {
            let hex = std::str::from_utf8(&bytes[i + 2..i + 4]).unwrap();
            out.push(u8::from_str_radix(hex, 16).unwrap());
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Builds the FTP probe corpus. For each command and each argument length
/// the base probe uses `l` repetitions of `a` (a constant argument keeps
/// runs comparable); each of the `n` instances then emits the base and
/// every one of its `m` successive mutation snapshots. Output order is
/// (command, length, instance, mutation step). The corpus is a pure
/// function of its inputs and is generated once per test series, then
/// reused for every target.
pub fn build_corpus(spec: &CommandCorpusSpec, params: &MutationParams) -> FuzzCorpus {
    let mut rng = DeterministicRng::new(params.seed);
    let mut lines = Vec::new();
    for command in spec.commands() {
        for len in 1..=params.max_len {
            let base = FtpProbe { command: command.clone(), argument: "a".repeat(len) }.render();
            for _ in 0..params.instances {
                let mut probe = base.clone();
                lines.push(escape_probe(&probe));
                for _ in 0..params.mutations_per_instance {
                    probe = mutate(&probe, &mut rng);
                    lines.push(escape_probe(&probe));
                }
            }
        }
    }
    FuzzCorpus::from_lines(CorpusKind::Ftp, lines)
}
