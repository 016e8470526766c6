//! FTP control-connection sessions: anonymous login, probe/reply chaining
//! and the reply-line grammar.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use crate::corpus::{CorpusKind, FuzzCorpus};
use crate::fuzz_ftp::unescape_probe;
use crate::sim::{FtpPersonality, FtpServerSession};
use crate::store::{Fingerprint, Record};
use crate::transport::{
    TargetAddress, TransportConfig, TransportError, ANONYMOUS_PASSWORD, ANONYMOUS_USER,
};

/// One FTP control connection from the client side.
pub trait FtpChannel {
    /// Opens (or reopens) the connection and consumes the greeting, if the
    /// server sends one.
    fn connect(&mut self) -> Result<(), TransportError>;
    fn send_line(&mut self, line: &str) -> Result<(), TransportError>;
    /// Reads one full reply — multi-line replies are consumed to their
    /// terminator — and returns its status code. `None` when the reply
    /// timeout elapses.
    fn read_code(&mut self) -> Result<Option<u16>, TransportError>;
}

enum LineEvent {
    Line(String),
    Timeout,
    Closed,
}

/// Reply grammar: `ddd text` is a one-line reply; `ddd-text` opens a
/// multi-line reply that runs until a line starting with the same three
/// digits followed by a space (or nothing). Intermediate lines are
/// consumed and discarded — only the status code is kept.
fn read_reply(next_line: &mut dyn FnMut() -> Result<LineEvent, TransportError>) -> Result<Option<u16>, TransportError> {
    let first = match next_line()? {
        LineEvent::Timeout => return Ok(None),
        LineEvent::Closed => return Err(TransportError::ConnectionLost),
        LineEvent::Line(line) => line,
    };
    let bytes = first.as_bytes();
    if bytes.len() < 3 || !bytes[..3].iter().all(u8::is_ascii_digit) {
        return Err(TransportError::MalformedReply(first));
    }
    let code: u16 = first[..3].parse().expect("three ASCII digits");
    if bytes.get(3) == Some(&b'-') {
        let prefix = &first[..3];
        loop {
            match next_line()? {
                LineEvent::Line(line) => {
                    let b = line.as_bytes();
                    if b.starts_with(prefix.as_bytes()) && (b.len() == 3 || b[3] == b' ') {
                        break;
                    }
                }
                LineEvent::Timeout => {
                    return Err(TransportError::MalformedReply(format!(
                        "multi-line reply {code} never terminated"
                    )))
                }
                LineEvent::Closed => return Err(TransportError::ConnectionLost),
            }
        }
    }
    Ok(Some(code))
}

/// Client channel talking to an in-process [`FtpServerSession`]. Replies
/// go through the same reply grammar as the live channel.
pub struct InProcessFtpChannel {
    personality: Arc<FtpPersonality>,
    session: Option<FtpServerSession>,
    pending: VecDeque<String>,
}

impl InProcessFtpChannel {
    pub fn new(personality: FtpPersonality) -> Self {
        InProcessFtpChannel {
            personality: Arc::new(personality),
            session: None,
            pending: VecDeque::new(),
        }
    }

    fn push_reply_text(&mut self, text: &str) {
        for line in text.split("\r\n").filter(|l| !l.is_empty()) {
            self.pending.push_back(line.to_string());
        }
    }

    fn next_event(&mut self) -> LineEvent {
        match self.pending.pop_front() {
            Some(line) => LineEvent::Line(line),
            None => LineEvent::Timeout,
        }
    }
}

impl FtpChannel for InProcessFtpChannel {
    fn connect(&mut self) -> Result<(), TransportError> {
        let session = FtpServerSession::new(self.personality.clone());
        self.pending.clear();
        let greeting = session.on_connect();
        self.session = Some(session);
        if !greeting.is_empty() {
            self.push_reply_text(&greeting);
            // Greeting is consumed, not recorded.
            let mut next =
                || -> Result<LineEvent, TransportError> { Ok(self.next_event()) };
            read_reply(&mut next)?;
        }
        Ok(())
    }

    fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
        let session = self.session.as_mut().ok_or(TransportError::ConnectionLost)?;
        // Surplus lines a previous probe never consumed belong to that
        // probe and are dropped, keeping the send/receive alternation.
        self.pending.clear();
        let reply = session.on_line(line);
        self.push_reply_text(&reply);
        Ok(())
    }

    fn read_code(&mut self) -> Result<Option<u16>, TransportError> {
        if self.session.is_none() {
            return Err(TransportError::ConnectionLost);
        }
        let mut next = || -> Result<LineEvent, TransportError> { Ok(self.next_event()) };
        read_reply(&mut next)
    }
}

/// Live channel over a plain TCP client socket.
pub struct TcpFtpChannel {
    target: TargetAddress,
    timeout: Duration,
    stream: Option<BufReader<TcpStream>>,
}

impl TcpFtpChannel {
    pub fn new(target: TargetAddress, cfg: &TransportConfig) -> Self {
        TcpFtpChannel { target, timeout: cfg.timeout, stream: None }
    }

    fn next_event(&mut self) -> Result<LineEvent, TransportError> {
        let Some(reader) = self.stream.as_mut() else {
            return Ok(LineEvent::Closed);
        };
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) => Ok(LineEvent::Closed),
            Ok(_) => {
                while line.ends_with('\n') || line.ends_with('\r') {
                    line.pop();
                }
                Ok(LineEvent::Line(line))
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                Ok(LineEvent::Timeout)
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::ConnectionReset
                    || e.kind() == std::io::ErrorKind::BrokenPipe
                    || e.kind() == std::io::ErrorKind::UnexpectedEof =>
            {
                Ok(LineEvent::Closed)
            }
            Err(e) => Err(TransportError::Io(e)),
        }
    }
}

impl FtpChannel for TcpFtpChannel {
    fn connect(&mut self) -> Result<(), TransportError> {
        let port = self.target.ftp_port();
        let stream = TcpStream::connect((self.target.host.as_str(), port))?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_nodelay(true).ok();
        self.stream = Some(BufReader::new(stream));
        // A server with its banner disabled sends nothing: a timeout here
        // is fine, the session proceeds to the login.
        let mut next = || self.next_event();
        read_reply(&mut next).map(|_| ())
    }

    fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
        let Some(reader) = self.stream.as_mut() else {
            return Err(TransportError::ConnectionLost);
        };
        let mut payload = Vec::with_capacity(line.len() + 2);
        payload.extend_from_slice(line.as_bytes());
        payload.extend_from_slice(b"\r\n");
        match reader.get_mut().write_all(&payload) {
            Ok(()) => Ok(()),
            Err(e)
                if e.kind() == std::io::ErrorKind::ConnectionReset
                    || e.kind() == std::io::ErrorKind::BrokenPipe =>
            {
                Err(TransportError::ConnectionLost)
            }
            Err(e) => Err(TransportError::Io(e)),
        }
    }

    fn read_code(&mut self) -> Result<Option<u16>, TransportError> {
        let mut next = || self.next_event();
        read_reply(&mut next)
    }
}

/// Anonymous login. Refusal is a dedicated abort: without a session there
/// is nothing to fingerprint.
fn login(channel: &mut dyn FtpChannel) -> Result<(), TransportError> {
    channel.send_line(&format!("USER {ANONYMOUS_USER}"))?;
    let user_code = channel
        .read_code()?
        .ok_or_else(|| TransportError::Backend("no reply to USER".to_string()))?;
    match user_code {
        200..=299 => return Ok(()),
        300..=399 => {}
        code => return Err(TransportError::LoginRefused(code)),
    }
    channel.send_line(&format!("PASS {ANONYMOUS_PASSWORD}"))?;
    let pass_code = channel
        .read_code()?
        .ok_or_else(|| TransportError::Backend("no reply to PASS".to_string()))?;
    match pass_code {
        200..=299 => Ok(()),
        code => Err(TransportError::LoginRefused(code)),
    }
}

fn reconnect(channel: &mut dyn FtpChannel) -> Result<(), TransportError> {
    let outcome = channel.connect().and_then(|()| login(channel));
    outcome.map_err(|e| TransportError::SessionLost(e.to_string()))
}

/// Runs one FTP fingerprinting session: connect, log in anonymously, then
/// strictly alternate probe send and reply receive. Line `n` of the result
/// is the 3-digit status code of the reply to probe `n`, or blank after a
/// timeout. If the server drops the connection mid-run the interrupted
/// probe is recorded blank and the session resumes with the next probe
/// after a reconnect; a failed reconnect discards the partial fingerprint.
pub fn ftp_session(
    corpus: &FuzzCorpus,
    label: &str,
    channel: &mut dyn FtpChannel,
) -> Result<Fingerprint, TransportError> {
    if corpus.kind != CorpusKind::Ftp {
        return Err(TransportError::WrongCorpusKind {
            expected: CorpusKind::Ftp,
            got: corpus.kind,
        });
    }
    channel.connect()?;
    login(channel)?;

    let mut records = Vec::with_capacity(corpus.len());
    for stored in &corpus.lines {
        let probe = unescape_probe(stored);
        match channel.send_line(&probe) {
            Ok(()) => {}
            Err(TransportError::ConnectionLost) => {
                records.push(Record::Blank);
                reconnect(channel)?;
                continue;
            }
            Err(e) => return Err(e),
        }
        match channel.read_code() {
            Ok(Some(code)) => records.push(Record::Ftp(code)),
            Ok(None) => records.push(Record::Blank),
            Err(TransportError::ConnectionLost) => {
                records.push(Record::Blank);
                reconnect(channel)?;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Fingerprint {
        label: label.to_string(),
        kind: CorpusKind::Ftp,
        corpus_checksum: corpus.checksum.clone(),
        lines: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz_ftp::{build_corpus, CommandCorpusSpec, MutationParams};
    use crate::sim::examples;

    fn corpus() -> FuzzCorpus {
        let spec = CommandCorpusSpec::default_commands();
        let params = MutationParams::new(3, 1, 1, 9).unwrap();
        build_corpus(&spec, &params)
    }

    #[test]
    fn session_records_one_code_per_probe() {
        let corpus = corpus();
        let mut channel = InProcessFtpChannel::new(examples::shipped_ftp()[0].clone());
        let fp = ftp_session(&corpus, "fjord", &mut channel).unwrap();
        assert_eq!(fp.lines.len(), corpus.len());
        assert!(fp.lines.iter().all(|r| matches!(r, Record::Ftp(_))));
    }

    #[test]
    fn refused_anonymous_login_aborts() {
        let corpus = corpus();
        let mut channel = InProcessFtpChannel::new(examples::extra_ftp("locked"));
        match ftp_session(&corpus, "locked", &mut channel) {
            Err(TransportError::LoginRefused(530)) => {}
            other => panic!("expected the login abort, got {other:?}"),
        }
    }

    #[test]
    fn server_answering_everything_500_yields_500_on_every_line() {
        let personality = crate::sim::FtpPersonality {
            name: "fivehundred".to_string(),
            greeting: None,
            allow_anonymous: true,
            overlong_threshold: None,
            default_code: 500,
            overlong_code: None,
            multiline: Default::default(),
            replies: Default::default(),
        };
        let corpus = corpus();
        let mut channel = InProcessFtpChannel::new(personality);
        let fp = ftp_session(&corpus, "fivehundred", &mut channel).unwrap();
        assert_eq!(fp.lines.len(), corpus.len());
        assert!(fp.lines.iter().all(|r| *r == Record::Ftp(500)));
    }

    #[test]
    fn multiline_replies_reduce_to_their_status_code() {
        // fjord answers STAT with a multi-line 211 reply.
        let single = FuzzCorpus::from_lines(CorpusKind::Ftp, vec!["STAT x".to_string()]);
        let mut channel = InProcessFtpChannel::new(examples::shipped_ftp()[0].clone());
        let fp = ftp_session(&single, "fjord", &mut channel).unwrap();
        assert_eq!(fp.lines, vec![Record::Ftp(211)]);
    }

    #[test]
    fn reply_grammar_oracle() {
        // Scripted reply streams against the reply-format rules: the
        // terminator of a multi-line reply repeats the code before a
        // space, everything in between is skipped.
        let cases: Vec<(Vec<&str>, Option<u16>)> = vec![
            (vec!["200 ok"], Some(200)),
            (vec!["211-begin", " detail", "211-not the end", "211 end"], Some(211)),
            (vec!["500 "], Some(500)),
            (vec!["331-a", "331"], Some(331)),
        ];
        for (lines, expected) in cases {
            let mut queue: VecDeque<String> = lines.iter().map(|s| s.to_string()).collect();
            {
                let mut next = || -> Result<LineEvent, TransportError> {
                    Ok(match queue.pop_front() {
                        Some(line) => LineEvent::Line(line),
                        None => LineEvent::Timeout,
                    })
                };
                assert_eq!(read_reply(&mut next).unwrap(), expected, "{lines:?}");
            }
            assert!(queue.is_empty(), "whole reply must be consumed: {lines:?}");
        }
    }

    #[test]
    fn malformed_replies_are_errors() {
        for text in ["ok", "12 x", "zzz hello"] {
            let mut served = false;
            let mut next = || -> Result<LineEvent, TransportError> {
                Ok(if served {
                    LineEvent::Timeout
                } else {
                    served = true;
                    LineEvent::Line(text.to_string())
                })
            };
            assert!(matches!(
                read_reply(&mut next),
                Err(TransportError::MalformedReply(_))
            ));
        }
    }

    #[test]
    fn wrong_corpus_kind_is_refused() {
        let corpus = FuzzCorpus::from_lines(CorpusKind::Os, vec!["tcp{flags=2}".to_string()]);
        let mut channel = InProcessFtpChannel::new(examples::shipped_ftp()[0].clone());
        assert!(matches!(
            ftp_session(&corpus, "x", &mut channel),
            Err(TransportError::WrongCorpusKind { .. })
        ));
    }

    /// Channel wrapper that kills the connection on the n-th probe send.
    struct DroppingChannel {
        inner: InProcessFtpChannel,
        drop_on_send: usize,
        sends: usize,
        fail_reconnect: bool,
    }

    impl FtpChannel for DroppingChannel {
        fn connect(&mut self) -> Result<(), TransportError> {
            if self.fail_reconnect && self.sends >= self.drop_on_send {
                return Err(TransportError::ConnectionLost);
            }
            self.inner.connect()
        }

        fn send_line(&mut self, line: &str) -> Result<(), TransportError> {
            self.sends += 1;
            if self.sends == self.drop_on_send {
                self.inner.session = None;
                return Err(TransportError::ConnectionLost);
            }
            self.inner.send_line(line)
        }

        fn read_code(&mut self) -> Result<Option<u16>, TransportError> {
            self.inner.read_code()
        }
    }

    #[test]
    fn connection_drop_blanks_the_probe_and_resumes_after_reconnect() {
        let corpus = corpus();
        // Login needs 2 sends; the 5th send is the 3rd probe.
        let mut channel = DroppingChannel {
            inner: InProcessFtpChannel::new(examples::shipped_ftp()[0].clone()),
            drop_on_send: 5,
            sends: 0,
            fail_reconnect: false,
        };
        let fp = ftp_session(&corpus, "fjord", &mut channel).unwrap();
        assert_eq!(fp.lines.len(), corpus.len());
        let blanks: Vec<usize> = fp
            .lines
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, Record::Blank))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(blanks, vec![2], "exactly the interrupted probe is blank");
    }

    #[test]
    fn failed_reconnect_discards_the_partial_fingerprint() {
        let corpus = corpus();
        let mut channel = DroppingChannel {
            inner: InProcessFtpChannel::new(examples::shipped_ftp()[0].clone()),
            drop_on_send: 5,
            sends: 0,
            fail_reconnect: true,
        };
        match ftp_session(&corpus, "fjord", &mut channel) {
            Err(TransportError::SessionLost(_)) => {}
            other => panic!("expected SessionLost, got {other:?}"),
        }
    }
}
