//! Half-open port scanning and the OS probe send/receive loop.

use std::collections::VecDeque;
use std::net::Ipv4Addr;

use crate::corpus::{CorpusKind, FuzzCorpus};
use crate::matcher::ack_relation;
use crate::packet::{
    decode_apd, fill_defaults, FieldValue, Layer, PacketDescription, FLAG_ACK, FLAG_RST, FLAG_SYN,
};
use crate::sim::{respond_tcp, StackPersonality, SCANNER_PROBE_WINDOW};
use crate::store::{Fingerprint, Record};
use crate::transport::{PacketBackend, TransportConfig, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogDirection {
    Sent,
    Received,
}

/// One packet that actually crossed the simulated wire.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub direction: LogDirection,
    pub packet: PacketDescription,
}

/// In-process packet backend driven by a [`StackPersonality`]. Responses
/// are computed at send time and delivered by subsequent receives, so the
/// exchange log mirrors what a wire capture would show.
pub struct SimulatedStackBackend {
    personality: StackPersonality,
    source: Ipv4Addr,
    target: Ipv4Addr,
    pending: VecDeque<PacketDescription>,
    log: Vec<LogEntry>,
}

/// TEST-NET-1 addresses used for all simulated exchanges.
pub const SIM_SOURCE: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 99);
pub const SIM_TARGET: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 1);

impl SimulatedStackBackend {
    pub fn new(personality: StackPersonality) -> Self {
        SimulatedStackBackend {
            personality,
            source: SIM_SOURCE,
            target: SIM_TARGET,
            pending: VecDeque::new(),
            log: Vec::new(),
        }
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }
}

impl PacketBackend for SimulatedStackBackend {
    fn send(&mut self, packet: &PacketDescription) -> Result<(), TransportError> {
        self.log.push(LogEntry { direction: LogDirection::Sent, packet: packet.clone() });
        if let Some(response) = respond_tcp(&self.personality, packet) {
            self.pending.push_back(response);
        }
        Ok(())
    }

    fn receive(&mut self) -> Result<Option<PacketDescription>, TransportError> {
        match self.pending.pop_front() {
            Some(packet) => {
                self.log
                    .push(LogEntry { direction: LogDirection::Received, packet: packet.clone() });
                Ok(Some(packet))
            }
            None => Ok(None),
        }
    }

    fn source_addr(&self) -> Ipv4Addr {
        self.source
    }

    fn target_addr(&self) -> Ipv4Addr {
        self.target
    }
}

fn scan_probe(flags: u64, window: Option<u64>) -> PacketDescription {
    let mut probe = PacketDescription::default();
    probe.set(Layer::Ip, "saddr", FieldValue::Dummy).expect("saddr accepts DUMMY");
    probe.set(Layer::Ip, "daddr", FieldValue::Dummy).expect("daddr accepts DUMMY");
    probe.set(Layer::Tcp, "dport", FieldValue::Dummy).expect("dport accepts DUMMY");
    probe.set_tcp("flags", flags).expect("flags domain");
    if let Some(window) = window {
        probe.set_tcp("window", window).expect("window domain");
    }
    probe
}

/// Raw probe responses are filtered by source address and source port:
/// only packets from the probed endpoint count as the reply.
fn matches_probe(response: &PacketDescription, target: Ipv4Addr, port: u16) -> bool {
    response.ip("saddr") == Some(u32::from(target) as u64)
        && response.tcp("sport") == Some(port as u64)
}

/// Waits for the reply to the probe just sent. Packets failing the source
/// filter are skipped, at most `max_extraneous` of them; `None` means the
/// target stayed silent.
fn receive_matching(
    backend: &mut dyn PacketBackend,
    port: u16,
    cfg: &TransportConfig,
) -> Result<Option<PacketDescription>, TransportError> {
    let target = backend.target_addr();
    let mut extraneous = 0;
    loop {
        match backend.receive()? {
            None => return Ok(None),
            Some(packet) if matches_probe(&packet, target, port) => return Ok(Some(packet)),
            Some(_) => {
                extraneous += 1;
                if extraneous >= cfg.max_extraneous {
                    return Ok(None);
                }
            }
        }
    }
}

/// Half-open scan over ports `0..n_ports`, in order. For each port a SYN
/// is sent; a SYN+ACK reply is answered with RST and wins (three messages
/// for the found port in total), RST or silence moves on. `None` when no
/// port is open.
pub fn find_open_tcp_port(
    backend: &mut dyn PacketBackend,
    n_ports: u16,
    cfg: &TransportConfig,
) -> Result<Option<u16>, TransportError> {
    let source = backend.source_addr();
    let target = backend.target_addr();
    for port in 0..n_ports {
        let probe =
            fill_defaults(&scan_probe(FLAG_SYN, Some(SCANNER_PROBE_WINDOW)), source, target, port);
        backend.send(&probe)?;
        if let Some(response) = receive_matching(backend, port, cfg)? {
            let flags = response.tcp_or("flags", 0);
            if flags & (FLAG_SYN | FLAG_ACK) == FLAG_SYN | FLAG_ACK {
                let reset = fill_defaults(&scan_probe(FLAG_RST, None), source, target, port);
                backend.send(&reset)?;
                return Ok(Some(port));
            }
            // Anything else (typically RST) marks the port closed.
        }
    }
    Ok(None)
}

/// Sends every corpus probe in order and records the chained responses.
/// Probe `n` is completed with [`fill_defaults`], sent, and its reply —
/// matched by source address and source port — becomes fingerprint line
/// `n`; silence leaves the line blank. The relation between the probe's
/// sequence number and the reply's acknowledgment number is classified at
/// capture time and stored as `tcp.ackrel`, which keeps fingerprints
/// self-contained for matching.
pub fn send_and_receive(
    corpus: &FuzzCorpus,
    label: &str,
    open_port: u16,
    cfg: &TransportConfig,
    backend: &mut dyn PacketBackend,
) -> Result<Fingerprint, TransportError> {
    if corpus.kind != CorpusKind::Os {
        return Err(TransportError::WrongCorpusKind {
            expected: CorpusKind::Os,
            got: corpus.kind,
        });
    }
    let source = backend.source_addr();
    let target = backend.target_addr();
    let mut records = Vec::with_capacity(corpus.len());
    for (index, line) in corpus.lines.iter().enumerate() {
        let probe = decode_apd(line).map_err(|source| TransportError::BadProbe { index, source })?;
        if probe.is_blank {
            return Err(TransportError::BlankProbe(index));
        }
        let filled = fill_defaults(&probe, source, target, open_port);
        backend.send(&filled)?;
        let port = filled.tcp("dport").unwrap_or(open_port as u64) as u16;
        match receive_matching(backend, port, cfg)? {
            None => records.push(Record::Blank),
            Some(mut response) => {
                let probe_seq = filled.tcp_or("seq", 0) as u32;
                let response_ack = response.tcp_or("ack", 0) as u32;
                let relation = ack_relation(probe_seq, response_ack);
                response
                    .set_tcp("ackrel", relation as u64)
                    .expect("ackrel fits its 2-bit domain");
                records.push(Record::Os(response));
            }
        }
    }
    Ok(Fingerprint {
        label: label.to_string(),
        kind: CorpusKind::Os,
        corpus_checksum: corpus.checksum.clone(),
        lines: records,
    })
}

/// Scan first, then fingerprint: the scan is mandatory because every probe
/// needs an open destination port to be answered at all.
pub fn fingerprint_os(
    corpus: &FuzzCorpus,
    label: &str,
    n_ports: u16,
    cfg: &TransportConfig,
    backend: &mut dyn PacketBackend,
) -> Result<(u16, Fingerprint), TransportError> {
    let port = find_open_tcp_port(backend, n_ports, cfg)?.ok_or_else(|| {
        TransportError::ScanPrerequisite(format!(
            "no open TCP port among the first {n_ports} ports"
        ))
    })?;
    let fingerprint = send_and_receive(corpus, label, port, cfg, backend)?;
    Ok((port, fingerprint))
}
