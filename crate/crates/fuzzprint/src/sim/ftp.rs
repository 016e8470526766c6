//! Scripted FTP servers: a reply table keyed by command token and
//! argument-length class, plus the login state machine around it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::fuzz_ftp::FtpProbe;
use crate::sim::{syntax, KeyValue, PersonalityError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthClass {
    Normal,
    Overlong,
}

impl LengthClass {
    fn render(self) -> &'static str {
        match self {
            LengthClass::Normal => "",
            LengthClass::Overlong => " overlong",
        }
    }
}

/// Behavior table of one simulated FTP server. Replies depend only on the
/// probe line, so fingerprints are reproducible by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtpPersonality {
    pub name: String,
    /// Banner sent on connect; `None` simulates a server with banner
    /// output disabled.
    pub greeting: Option<String>,
    pub allow_anonymous: bool,
    /// Arguments longer than this are classified [`LengthClass::Overlong`].
    /// `None` disables the length split.
    pub overlong_threshold: Option<usize>,
    /// Reply for command tokens without a table entry.
    pub default_code: u16,
    /// Fallback for overlong arguments of commands without a dedicated
    /// overlong entry.
    pub overlong_code: Option<u16>,
    /// Commands answered with a multi-line reply.
    pub multiline: BTreeSet<String>,
    pub replies: BTreeMap<(String, LengthClass), u16>,
}

fn valid_code(code: u64) -> Result<u16, PersonalityError> {
    if (100..=599).contains(&code) {
        Ok(code as u16)
    } else {
        Err(PersonalityError::InvalidCode(code))
    }
}

impl FtpPersonality {
    pub fn validate(&self) -> Result<(), PersonalityError> {
        valid_code(self.default_code as u64)?;
        if let Some(code) = self.overlong_code {
            valid_code(code as u64)?;
        }
        for code in self.replies.values() {
            valid_code(*code as u64)?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("kind = ftp\n");
        out.push_str(&format!("name = {}\n", self.name));
        if let Some(greeting) = &self.greeting {
            out.push_str(&format!("greeting = {greeting}\n"));
        }
        out.push_str(&format!("allow_anonymous = {}\n", self.allow_anonymous));
        if let Some(threshold) = self.overlong_threshold {
            out.push_str(&format!("overlong_threshold = {threshold}\n"));
        }
        out.push_str(&format!("default_code = {}\n", self.default_code));
        if let Some(code) = self.overlong_code {
            out.push_str(&format!("overlong_code = {code}\n"));
        }
        if !self.multiline.is_empty() {
            let cmds: Vec<&str> = self.multiline.iter().map(String::as_str).collect();
            out.push_str(&format!("multiline = {}\n", cmds.join(", ")));
        }
        for ((command, class), code) in &self.replies {
            out.push_str(&format!("reply {command}{} = {code}\n", class.render()));
        }
        out
    }
}

/// Looks up the reply code for one probe line: the argument length picks
/// the class, then the table is consulted for (token, class). Overlong
/// misses fall back to the personality's global overlong code; anything
/// else falls back to the default code. Token matching is
/// case-insensitive, so only genuinely corrupted tokens miss the table.
pub fn respond_ftp(p: &FtpPersonality, line: &str) -> u16 {
    let (command, argument) = FtpProbe::split(line);
    let token = command.to_ascii_uppercase();
    let class = match p.overlong_threshold {
        Some(threshold) if argument.len() > threshold => LengthClass::Overlong,
        _ => LengthClass::Normal,
    };
    if let Some(code) = p.replies.get(&(token.clone(), class)) {
        return *code;
    }
    if class == LengthClass::Overlong {
        if let Some(code) = p.overlong_code {
            return code;
        }
    }
    p.default_code
}

/// Per-connection state: the login phase is the only stateful part, every
/// probe after it goes through [`respond_ftp`].
#[derive(Debug)]
pub struct FtpServerSession {
    personality: Arc<FtpPersonality>,
    got_user: bool,
    authed: bool,
}

impl FtpServerSession {
    pub fn new(personality: Arc<FtpPersonality>) -> Self {
        FtpServerSession { personality, got_user: false, authed: false }
    }

    /// Lines sent when the connection opens (empty when the banner is
    /// disabled).
    pub fn on_connect(&self) -> String {
        match &self.personality.greeting {
            Some(text) => format!("220 {text}\r\n"),
            None => String::new(),
        }
    }

    /// Handles one request line and returns the full rendered reply,
    /// CRLF line endings included.
    pub fn on_line(&mut self, line: &str) -> String {
        let (command, _) = FtpProbe::split(line);
        let token = command.to_ascii_uppercase();
        if !self.authed {
            return match token.as_str() {
                "USER" => {
                    self.got_user = true;
                    "331 Password required\r\n".to_string()
                }
                "PASS" if self.got_user => {
                    if self.personality.allow_anonymous {
                        self.authed = true;
                        "230 Login successful\r\n".to_string()
                    } else {
                        "530 Login incorrect\r\n".to_string()
                    }
                }
                _ => "530 Please login with USER and PASS\r\n".to_string(),
            };
        }
        let code = respond_ftp(&self.personality, line);
        if self.personality.multiline.contains(&token) {
            format!("{code}-{} reply\r\n detail\r\n{code} end\r\n", self.personality.name)
        } else {
            format!("{code} {} reply\r\n", self.personality.name)
        }
    }
}

/// A personality served on a real localhost socket. One session at a time;
/// the listener shuts down when the handle is dropped.
pub struct FtpServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl FtpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for FtpServerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

fn handle_connection(
    personality: &Arc<FtpPersonality>,
    mut stream: TcpStream,
    shutdown: &AtomicBool,
) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let mut session = FtpServerSession::new(personality.clone());
    let greeting = session.on_connect();
    if !greeting.is_empty() && stream.write_all(greeting.as_bytes()).is_err() {
        return;
    }
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 512];
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return;
        }
        // Serve any complete lines already buffered.
        while let Some(newline) = buffer.iter().position(|&b| b == b'\n') {
            let raw: Vec<u8> = buffer.drain(..=newline).collect();
            let mut line = String::from_utf8_lossy(&raw).into_owned();
            while line.ends_with('\n') || line.ends_with('\r') {
                line.pop();
            }
            let reply = session.on_line(&line);
            if stream.write_all(reply.as_bytes()).is_err() {
                return;
            }
        }
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => buffer.extend_from_slice(&chunk[..n]),
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue
            }
            Err(_) => return,
        }
    }
}

/// Binds `127.0.0.1:port` (0 picks an ephemeral port) and serves the
/// personality until the handle is dropped.
pub fn serve_ftp(personality: FtpPersonality, port: u16) -> Result<FtpServerHandle, PersonalityError> {
    let listener =
        TcpListener::bind(("127.0.0.1", port)).map_err(PersonalityError::Bind)?;
    let addr = listener.local_addr().map_err(PersonalityError::Bind)?;
    listener.set_nonblocking(true).map_err(PersonalityError::Bind)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let shutdown_flag = shutdown.clone();
    let personality = Arc::new(personality);
    let thread = std::thread::spawn(move || loop {
        if shutdown_flag.load(Ordering::SeqCst) {
            return;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                handle_connection(&personality, stream, &shutdown_flag);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(_) => return,
        }
    });
    Ok(FtpServerHandle { addr, shutdown, thread: Some(thread) })
}

pub(crate) fn parse_ftp(top: &[KeyValue]) -> Result<FtpPersonality, PersonalityError> {
    let mut name = None;
    let mut greeting = None;
    let mut allow_anonymous = true;
    let mut overlong_threshold = None;
    let mut default_code = None;
    let mut overlong_code = None;
    let mut multiline = BTreeSet::new();
    let mut replies = BTreeMap::new();

    for kv in top {
        if let Some(reply_key) = kv.key.strip_prefix("reply ") {
            let mut parts = reply_key.split_whitespace();
            let command = parts
                .next()
                .ok_or_else(|| syntax(kv.line, "reply entry is missing the command"))?
                .to_string();
            let class = match parts.next() {
                None => LengthClass::Normal,
                Some("overlong") => LengthClass::Overlong,
                Some(other) => {
                    return Err(syntax(kv.line, format!("unknown length class {other:?}")))
                }
            };
            if parts.next().is_some() {
                return Err(syntax(kv.line, "trailing tokens in reply entry"));
            }
            let code = kv
                .value
                .parse::<u64>()
                .map_err(|_| syntax(kv.line, format!("invalid status code {:?}", kv.value)))?;
            replies.insert((command, class), valid_code(code)?);
            continue;
        }
        match kv.key.as_str() {
            "kind" => {}
            "name" => name = Some(kv.value.clone()),
            "greeting" => greeting = Some(kv.value.clone()),
            "allow_anonymous" => {
                allow_anonymous = match kv.value.as_str() {
                    "true" => true,
                    "false" => false,
                    other => return Err(syntax(kv.line, format!("expected true/false, found {other:?}"))),
                }
            }
            "overlong_threshold" => {
                overlong_threshold = Some(kv.value.parse::<usize>().map_err(|_| {
                    syntax(kv.line, format!("invalid threshold {:?}", kv.value))
                })?)
            }
            "default_code" => {
                let code = kv.value.parse::<u64>().map_err(|_| {
                    syntax(kv.line, format!("invalid status code {:?}", kv.value))
                })?;
                default_code = Some(valid_code(code)?);
            }
            "overlong_code" => {
                let code = kv.value.parse::<u64>().map_err(|_| {
                    syntax(kv.line, format!("invalid status code {:?}", kv.value))
                })?;
                overlong_code = Some(valid_code(code)?);
            }
            "multiline" => {
                for part in kv.value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        multiline.insert(part.to_string());
                    }
                }
            }
            other => return Err(syntax(kv.line, format!("unknown key {other:?}"))),
        }
    }

    let personality = FtpPersonality {
        name: name.ok_or(PersonalityError::MissingKey("name"))?,
        greeting,
        allow_anonymous,
        overlong_threshold,
        default_code: default_code.ok_or(PersonalityError::MissingKey("default_code"))?,
        overlong_code,
        multiline,
        replies,
    };
    personality.validate()?;
    Ok(personality)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FtpPersonality {
        let mut replies = BTreeMap::new();
        replies.insert(("SITE".to_string(), LengthClass::Normal), 500);
        replies.insert(("SITE".to_string(), LengthClass::Overlong), 504);
        replies.insert(("HELP".to_string(), LengthClass::Normal), 214);
        FtpPersonality {
            name: "sample".to_string(),
            greeting: Some("sample ready".to_string()),
            allow_anonymous: true,
            overlong_threshold: Some(8),
            default_code: 502,
            overlong_code: Some(501),
            multiline: BTreeSet::from(["HELP".to_string()]),
            replies,
        }
    }

    #[test]
    fn table_lookup_echoes_configuration() {
        assert_eq!(respond_ftp(&sample(), "SITE xyz"), 500);
    }

    #[test]
    fn overlong_argument_gets_the_distinct_code() {
        let p = sample();
        assert_eq!(respond_ftp(&p, "SITE aaaaaaaaa"), 504);
        // No per-command overlong entry: the global code applies.
        assert_eq!(respond_ftp(&p, "HELP aaaaaaaaa"), 501);
    }

    #[test]
    fn unknown_tokens_fall_back_to_the_default_code() {
        assert_eq!(respond_ftp(&sample(), "XYZZY"), 502);
        assert_eq!(respond_ftp(&sample(), ""), 502);
    }

    #[test]
    fn token_lookup_is_case_insensitive() {
        assert_eq!(respond_ftp(&sample(), "site x"), 500);
    }

    #[test]
    fn login_state_machine() {
        let mut session = FtpServerSession::new(Arc::new(sample()));
        assert_eq!(session.on_connect(), "220 sample ready\r\n");
        assert!(session.on_line("SITE x").starts_with("530"));
        assert!(session.on_line("USER anonymous").starts_with("331"));
        assert!(session.on_line("PASS whatever").starts_with("230"));
        assert!(session.on_line("SITE x").starts_with("500"));
    }

    #[test]
    fn anonymous_refusal_replies_530_at_pass() {
        let mut personality = sample();
        personality.allow_anonymous = false;
        let mut session = FtpServerSession::new(Arc::new(personality));
        assert!(session.on_line("USER anonymous").starts_with("331"));
        assert!(session.on_line("PASS x").starts_with("530"));
    }

    #[test]
    fn multiline_rendering_terminates_with_code_and_space() {
        let mut session = FtpServerSession::new(Arc::new(sample()));
        session.on_line("USER anonymous");
        session.on_line("PASS x");
        let reply = session.on_line("HELP");
        assert!(reply.starts_with("214-"), "{reply:?}");
        assert!(reply.ends_with("214 end\r\n"), "{reply:?}");
        assert_eq!(reply.matches("\r\n").count(), 3);
    }

    #[test]
    fn probes_after_login_are_pure_lookups() {
        let mut session = FtpServerSession::new(Arc::new(sample()));
        session.on_line("USER anonymous");
        session.on_line("PASS x");
        // USER/PASS as probes now go through the table like anything
        // else; USER has no entry, so the default code answers.
        assert!(session.on_line("USER x").starts_with("502"));
        assert_eq!(session.on_line("SITE a"), session.on_line("SITE a"));
    }

    #[test]
    fn render_parse_round_trip() {
        let p = sample();
        let reparsed = match crate::sim::parse_personality(&p.render()).unwrap() {
            crate::sim::Personality::Ftp(p) => p,
            other => panic!("unexpected kind: {other:?}"),
        };
        assert_eq!(reparsed, p);
    }

    #[test]
    fn invalid_codes_are_rejected() {
        let mut p = sample();
        p.default_code = 42;
        assert!(matches!(p.validate(), Err(PersonalityError::InvalidCode(42))));
    }
}
