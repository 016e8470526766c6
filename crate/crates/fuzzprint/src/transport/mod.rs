//! Probe delivery and response capture.
//!
//! One target is always handled by one strictly sequential send/receive
//! loop: response record `n` must be attributable to probe `n`, and the
//! sender never reorders, skips or retries probes. Multiple targets can be
//! fingerprinted concurrently on separate backend handles.

pub mod ftp;
pub mod os;

use std::net::Ipv4Addr;
use std::time::Duration;

use thiserror::Error;

use crate::corpus::CorpusKind;
use crate::packet::{PacketDescription, PacketError};

pub use ftp::{ftp_session, FtpChannel, InProcessFtpChannel, TcpFtpChannel};
pub use os::{
    find_open_tcp_port, fingerprint_os, send_and_receive, LogDirection, LogEntry,
    SimulatedStackBackend, SIM_SOURCE, SIM_TARGET,
};

/// User name and password used for the anonymous FTP login that precedes
/// every FTP fingerprinting session.
pub const ANONYMOUS_USER: &str = "anonymous";
pub const ANONYMOUS_PASSWORD: &str = "fuzzprint@example.invalid";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("scan prerequisite failed: {0}")]
    ScanPrerequisite(String),
    #[error("anonymous login refused with status {0}; fingerprinting aborted")]
    LoginRefused(u16),
    #[error("connection lost")]
    ConnectionLost,
    #[error("session lost mid-run ({0}); partial fingerprint discarded")]
    SessionLost(String),
    #[error("expected a {expected} corpus, found {got}")]
    WrongCorpusKind { expected: CorpusKind, got: CorpusKind },
    #[error("corpus line {0} is blank and cannot be sent")]
    BlankProbe(usize),
    #[error("corpus line {index}: {source}")]
    BadProbe {
        index: usize,
        #[source]
        source: PacketError,
    },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("cannot resolve target {0:?} to an IPv4 address")]
    Unresolvable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A host under test, known by name or IPv4 address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetAddress {
    pub host: String,
    pub port: Option<u16>,
}

impl TargetAddress {
    pub fn new(host: impl Into<String>, port: Option<u16>) -> Self {
        TargetAddress { host: host.into(), port }
    }

    /// FTP control connections default to TCP/21 when no port is given.
    pub fn ftp_port(&self) -> u16 {
        self.port.unwrap_or(21)
    }

    /// Resolves the host to an IPv4 address, for the live backends.
    pub fn resolve_ipv4(&self) -> Result<Ipv4Addr, TransportError> {
        use std::net::{SocketAddr, ToSocketAddrs};
        if let Ok(addr) = self.host.parse::<Ipv4Addr>() {
            return Ok(addr);
        }
        let candidates = (self.host.as_str(), self.ftp_port())
            .to_socket_addrs()
            .map_err(|_| TransportError::Unresolvable(self.host.clone()))?;
        for candidate in candidates {
            if let SocketAddr::V4(v4) = candidate {
                return Ok(*v4.ip());
            }
        }
        Err(TransportError::Unresolvable(self.host.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportConfig {
    /// How long to wait for each reply. Tune to the network: a LAN
    /// tolerates much shorter timeouts than a WAN.
    pub timeout: Duration,
    /// How many packets that fail the source filter to examine per probe
    /// before declaring the reply missing.
    pub max_extraneous: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig { timeout: Duration::from_millis(500), max_extraneous: 8 }
    }
}

/// Packet-level send/receive capability. The simulated implementation is a
/// pure function of its personality; the raw-socket one (feature `live`)
/// needs elevated privileges and stays out of the automated test suite.
pub trait PacketBackend {
    fn send(&mut self, packet: &PacketDescription) -> Result<(), TransportError>;
    /// Next packet seen by the backend, or `None` once the receive timeout
    /// elapses.
    fn receive(&mut self) -> Result<Option<PacketDescription>, TransportError>;
    /// Address probes are sent from.
    fn source_addr(&self) -> Ipv4Addr;
    /// Address of the system under test.
    fn target_addr(&self) -> Ipv4Addr;
}
