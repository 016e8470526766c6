//! IPv4/TCP packet descriptions and the APD text serialization.
//!
//! One APD line describes one message as a list of protocol layers:
//!
//! ```text
//! line          := group ("+" group)*
//! group         := name "{" pair ("," pair)* "}"
//! name          := "ip" | "tcp"
//! pair          := key "=" value
//! value         := integer | dotted-quad | "DUMMY" | option-string
//! option-string := option (";" option)*        (key `options` only)
//! option        := kind [":" integer]          (kind one of W N M T E)
//! ```
//!
//! An empty line encodes an absent response. Files are UTF-8 with LF line
//! endings. Encoding is canonical: fields appear in header order, addresses
//! as dotted quads, so equal packets always yield byte-identical lines.
//!
//! TCP flags are a 6-bit integer with URG=32, ACK=16, PSH=8, RST=4, SYN=2,
//! FIN=1. IP flags are a 3-bit integer with DF=2, MF=1. The `tcp.ackrel`
//! field is not part of the wire header: it records how a response's
//! acknowledgment number relates to the probe's sequence number
//! (0=zero, 1=seq, 2=seq+1, 3=other) and is attached by the sender when a
//! fingerprint is captured.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub const FLAG_FIN: u64 = 1;
pub const FLAG_SYN: u64 = 2;
pub const FLAG_RST: u64 = 4;
pub const FLAG_PSH: u64 = 8;
pub const FLAG_ACK: u64 = 16;
pub const FLAG_URG: u64 = 32;

pub const IP_FLAG_MF: u64 = 1;
pub const IP_FLAG_DF: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Ip,
    Tcp,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Ip => "ip",
            Layer::Tcp => "tcp",
        })
    }
}

/// One header field: its layer, identifier and width in bits. The value
/// domain is `[0, 2^width_bits - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldDescriptor {
    pub layer: Layer,
    pub name: &'static str,
    pub width_bits: u32,
    /// Rendered and parsed as a dotted quad rather than a bare integer.
    pub dotted: bool,
    /// May carry the `DUMMY` placeholder in corpus files.
    pub dummy_allowed: bool,
}

impl FieldDescriptor {
    pub fn max_value(&self) -> u64 {
        if self.width_bits >= 64 {
            u64::MAX
        } else {
            (1u64 << self.width_bits) - 1
        }
    }
}

const fn fd(layer: Layer, name: &'static str, width_bits: u32) -> FieldDescriptor {
    FieldDescriptor { layer, name, width_bits, dotted: false, dummy_allowed: false }
}

const fn fd_addr(layer: Layer, name: &'static str) -> FieldDescriptor {
    FieldDescriptor { layer, name, width_bits: 32, dotted: true, dummy_allowed: true }
}

/// IP fields in canonical (header) order.
pub const IP_FIELDS: &[FieldDescriptor] = &[
    fd(Layer::Ip, "version", 4),
    fd(Layer::Ip, "ihl", 4),
    fd(Layer::Ip, "tos", 8),
    fd(Layer::Ip, "len", 16),
    fd(Layer::Ip, "id", 16),
    fd(Layer::Ip, "flags", 3),
    fd(Layer::Ip, "fragoff", 13),
    fd(Layer::Ip, "ttl", 8),
    fd(Layer::Ip, "protocol", 8),
    fd(Layer::Ip, "csum", 16),
    fd_addr(Layer::Ip, "saddr"),
    fd_addr(Layer::Ip, "daddr"),
];

/// TCP fields in canonical order. `ackrel` is the derived acknowledgment
/// relation and sits next to the raw `ack` it was computed from.
pub const TCP_FIELDS: &[FieldDescriptor] = &[
    fd(Layer::Tcp, "sport", 16),
    fd(Layer::Tcp, "dport", 16),
    fd(Layer::Tcp, "seq", 32),
    fd(Layer::Tcp, "ack", 32),
    fd(Layer::Tcp, "ackrel", 2),
    fd(Layer::Tcp, "offset", 4),
    fd(Layer::Tcp, "flags", 6),
    fd(Layer::Tcp, "window", 16),
    fd(Layer::Tcp, "csum", 16),
    fd(Layer::Tcp, "urgent", 16),
];

pub fn field_descriptor(layer: Layer, name: &str) -> Option<&'static FieldDescriptor> {
    let table = match layer {
        Layer::Ip => IP_FIELDS,
        Layer::Tcp => TCP_FIELDS,
    };
    table.iter().find(|d| d.name == name)
}

// tcp.dport is the third dummy-capable field besides the two addresses.
fn dummy_allowed(layer: Layer, name: &str) -> bool {
    matches!((layer, name), (Layer::Ip, "saddr") | (Layer::Ip, "daddr") | (Layer::Tcp, "dport"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OptionKind {
    /// Window scale.
    W,
    /// No-operation padding.
    N,
    /// Maximum segment size.
    M,
    /// Timestamp.
    T,
    /// Echoed MSS (appears in responses only).
    E,
}

impl OptionKind {
    pub fn as_char(self) -> char {
        match self {
            OptionKind::W => 'W',
            OptionKind::N => 'N',
            OptionKind::M => 'M',
            OptionKind::T => 'T',
            OptionKind::E => 'E',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        Some(match c {
            'W' => OptionKind::W,
            'N' => OptionKind::N,
            'M' => OptionKind::M,
            'T' => OptionKind::T,
            'E' => OptionKind::E,
            _ => return None,
        })
    }

    /// Length the option occupies in the TCP header.
    pub fn wire_len(self) -> usize {
        match self {
            OptionKind::N => 1,
            OptionKind::W => 3,
            OptionKind::M | OptionKind::E => 4,
            OptionKind::T => 10,
        }
    }

    /// Carries a value in the APD form (`N` never does).
    pub fn takes_value(self) -> bool {
        !matches!(self, OptionKind::N)
    }
}

/// One TCP option. Order within a packet is significant and preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TcpOption {
    pub kind: OptionKind,
    pub value: Option<u64>,
}

impl TcpOption {
    pub fn nop() -> Self {
        TcpOption { kind: OptionKind::N, value: None }
    }

    pub fn with_value(kind: OptionKind, value: u64) -> Self {
        TcpOption { kind, value: Some(value) }
    }
}

impl fmt::Display for TcpOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}:{}", self.kind.as_char(), v),
            None => write!(f, "{}", self.kind.as_char()),
        }
    }
}

/// Total wire length of an option sequence, padding included.
pub fn options_wire_len(options: &[TcpOption]) -> usize {
    options.iter().map(|o| o.kind.wire_len()).sum()
}

/// Checks the 32-bit-word alignment rule for an option sequence.
pub fn options_word_aligned(options: &[TcpOption]) -> bool {
    options_wire_len(options).is_multiple_of(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldValue {
    Value(u64),
    /// Placeholder for target-dependent fields, resolved by
    /// [`fill_defaults`] right before transmission.
    Dummy,
}

impl FieldValue {
    pub fn as_u64(&self) -> Option<u64> {
        match self {
            FieldValue::Value(v) => Some(*v),
            FieldValue::Dummy => None,
        }
    }
}

/// One probe or response as a layered field map plus ordered TCP options.
/// `is_blank` encodes "no response was received".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PacketDescription {
    pub ip_fields: BTreeMap<String, FieldValue>,
    pub tcp_fields: BTreeMap<String, FieldValue>,
    pub tcp_options: Vec<TcpOption>,
    pub is_blank: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("{layer}.{field}: value {value} exceeds the {width_bits}-bit field domain")]
    Domain { layer: Layer, field: String, value: u64, width_bits: u32 },
    #[error("unknown field {layer}.{field}")]
    UnknownField { layer: Layer, field: String },
    #[error("{layer}.{field} does not accept the DUMMY placeholder")]
    DummyNotAllowed { layer: Layer, field: String },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("cannot encode a blank packet")]
    Blank,
    #[error("cannot encode a packet with no fields")]
    Empty,
}

impl PacketDescription {
    pub fn blank() -> Self {
        PacketDescription { is_blank: true, ..Default::default() }
    }

    /// Sets a field after validating the name, the DUMMY rule and the
    /// value domain.
    pub fn set(&mut self, layer: Layer, name: &str, value: FieldValue) -> Result<(), PacketError> {
        let desc = field_descriptor(layer, name).ok_or_else(|| PacketError::UnknownField {
            layer,
            field: name.to_string(),
        })?;
        match value {
            FieldValue::Dummy if !dummy_allowed(layer, name) => {
                return Err(PacketError::DummyNotAllowed { layer, field: name.to_string() })
            }
            FieldValue::Value(v) if v > desc.max_value() => {
                return Err(PacketError::Domain {
                    layer,
                    field: name.to_string(),
                    value: v,
                    width_bits: desc.width_bits,
                })
            }
            _ => {}
        }
        self.fields_mut(layer).insert(name.to_string(), value);
        Ok(())
    }

    pub fn set_tcp(&mut self, name: &str, value: u64) -> Result<(), PacketError> {
        self.set(Layer::Tcp, name, FieldValue::Value(value))
    }

    pub fn set_ip(&mut self, name: &str, value: u64) -> Result<(), PacketError> {
        self.set(Layer::Ip, name, FieldValue::Value(value))
    }

    fn fields_mut(&mut self, layer: Layer) -> &mut BTreeMap<String, FieldValue> {
        match layer {
            Layer::Ip => &mut self.ip_fields,
            Layer::Tcp => &mut self.tcp_fields,
        }
    }

    fn fields(&self, layer: Layer) -> &BTreeMap<String, FieldValue> {
        match layer {
            Layer::Ip => &self.ip_fields,
            Layer::Tcp => &self.tcp_fields,
        }
    }

    pub fn get(&self, layer: Layer, name: &str) -> Option<FieldValue> {
        self.fields(layer).get(name).copied()
    }

    pub fn ip(&self, name: &str) -> Option<u64> {
        self.ip_fields.get(name).and_then(|v| v.as_u64())
    }

    pub fn tcp(&self, name: &str) -> Option<u64> {
        self.tcp_fields.get(name).and_then(|v| v.as_u64())
    }

    pub fn tcp_or(&self, name: &str, default: u64) -> u64 {
        self.tcp(name).unwrap_or(default)
    }

    pub fn is_empty(&self) -> bool {
        self.ip_fields.is_empty() && self.tcp_fields.is_empty() && self.tcp_options.is_empty()
    }
}

/// Serializes a packet to one canonical APD line.
pub fn encode_apd(pkt: &PacketDescription) -> Result<String, PacketError> {
    if pkt.is_blank {
        return Err(PacketError::Blank);
    }
    if pkt.is_empty() {
        return Err(PacketError::Empty);
    }
    let mut groups = Vec::new();
    for (layer, table) in [(Layer::Ip, IP_FIELDS), (Layer::Tcp, TCP_FIELDS)] {
        let fields = pkt.fields(layer);
        let mut pairs = Vec::new();
        for desc in table {
            let Some(value) = fields.get(desc.name) else { continue };
            let rendered = match value {
                FieldValue::Dummy => {
                    if !dummy_allowed(layer, desc.name) {
                        return Err(PacketError::DummyNotAllowed {
                            layer,
                            field: desc.name.to_string(),
                        });
                    }
                    "DUMMY".to_string()
                }
                FieldValue::Value(v) => {
                    if *v > desc.max_value() {
                        return Err(PacketError::Domain {
                            layer,
                            field: desc.name.to_string(),
                            value: *v,
                            width_bits: desc.width_bits,
                        });
                    }
                    if desc.dotted {
                        Ipv4Addr::from(*v as u32).to_string()
                    } else {
                        v.to_string()
                    }
                }
            };
            pairs.push(format!("{}={}", desc.name, rendered));
        }
        if layer == Layer::Tcp && !pkt.tcp_options.is_empty() {
            let opts: Vec<String> = pkt.tcp_options.iter().map(|o| o.to_string()).collect();
            pairs.push(format!("options={}", opts.join(";")));
        }
        if !pairs.is_empty() {
            groups.push(format!("{}{{{}}}", layer, pairs.join(",")));
        }
    }
    Ok(groups.join("+"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, PacketError> {
        Err(PacketError::Parse { offset: self.pos, message: message.into() })
    }

    fn err_at<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, PacketError> {
        Err(PacketError::Parse { offset, message: message.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        Some(b)
    }

    fn expect(&mut self, b: u8) -> Result<(), PacketError> {
        match self.peek() {
            Some(got) if got == b => {
                self.pos += 1;
                Ok(())
            }
            Some(got) => self.err(format!("expected '{}', found '{}'", b as char, got as char)),
            None => self.err(format!("expected '{}', found end of line", b as char)),
        }
    }

    /// Consumes bytes until one of `stop` or end of input.
    fn take_until(&mut self, stop: &[u8]) -> &'a str {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if stop.contains(&b) {
                break;
            }
            self.pos += 1;
        }
        // The input is validated as UTF-8 up front; slicing on byte
        // boundaries found by ASCII delimiters keeps it valid.
        std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("")
    }
}

fn parse_u64(text: &str, offset: usize) -> Result<u64, PacketError> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(PacketError::Parse {
            offset,
            message: format!("expected an unsigned integer, found {text:?}"),
        });
    }
    text.parse::<u64>().map_err(|_| PacketError::Parse {
        offset,
        message: format!("integer out of range: {text:?}"),
    })
}

fn parse_options(text: &str, offset: usize) -> Result<Vec<TcpOption>, PacketError> {
    let mut out = Vec::new();
    let mut at = offset;
    for part in text.split(';') {
        let mut chars = part.chars();
        let kind = match chars.next().and_then(OptionKind::from_char) {
            Some(k) => k,
            None => {
                return Err(PacketError::Parse {
                    offset: at,
                    message: format!("invalid option {part:?} (expected W, N, M, T or E)"),
                })
            }
        };
        let rest = chars.as_str();
        let value = if rest.is_empty() {
            None
        } else if let Some(num) = rest.strip_prefix(':') {
            Some(parse_u64(num, at + 2)?)
        } else {
            return Err(PacketError::Parse {
                offset: at + 1,
                message: format!("expected ':' after option kind in {part:?}"),
            });
        };
        match (kind.takes_value(), value.is_some()) {
            (true, false) => {
                return Err(PacketError::Parse {
                    offset: at,
                    message: format!("option {} requires a value", kind.as_char()),
                })
            }
            (false, true) => {
                return Err(PacketError::Parse {
                    offset: at,
                    message: "option N does not take a value".to_string(),
                })
            }
            _ => {}
        }
        out.push(TcpOption { kind, value });
        at += part.len() + 1;
    }
    Ok(out)
}

/// Parses one APD line. An empty line yields a blank packet. Errors carry
/// the byte offset of the offending token.
pub fn decode_apd(line: &str) -> Result<PacketDescription, PacketError> {
    if line.is_empty() {
        return Ok(PacketDescription::blank());
    }
    let mut cur = Cursor { bytes: line.as_bytes(), pos: 0 };
    let mut pkt = PacketDescription::default();
    let mut seen_layers: Vec<Layer> = Vec::new();
    loop {
        let group_start = cur.pos;
        let name = cur.take_until(b"{");
        let layer = match name {
            "ip" => Layer::Ip,
            "tcp" => Layer::Tcp,
            other => return cur.err_at(group_start, format!("unknown layer {other:?}")),
        };
        if seen_layers.contains(&layer) {
            return cur.err_at(group_start, format!("duplicate {layer} group"));
        }
        seen_layers.push(layer);
        cur.expect(b'{')?;
        loop {
            let key_start = cur.pos;
            let key = cur.take_until(b"=,}");
            cur.expect(b'=').map_err(|_| PacketError::Parse {
                offset: key_start,
                message: format!("expected key=value pair, found {key:?}"),
            })?;
            let value_start = cur.pos;
            let value = cur.take_until(b",}");
            if key == "options" {
                if layer != Layer::Tcp {
                    return cur.err_at(key_start, "options are only valid in the tcp group");
                }
                if !pkt.tcp_options.is_empty() {
                    return cur.err_at(key_start, "duplicate options entry");
                }
                pkt.tcp_options = parse_options(value, value_start)?;
                if pkt.tcp_options.is_empty() {
                    return cur.err_at(value_start, "empty options list");
                }
            } else {
                let desc = field_descriptor(layer, key).ok_or_else(|| PacketError::Parse {
                    offset: key_start,
                    message: format!("unknown field {layer}.{key}"),
                })?;
                if pkt.fields(layer).contains_key(key) {
                    return cur.err_at(key_start, format!("duplicate field {layer}.{key}"));
                }
                let fv = if value == "DUMMY" {
                    if !dummy_allowed(layer, key) {
                        return cur.err_at(value_start, format!("{layer}.{key} cannot be DUMMY"));
                    }
                    FieldValue::Dummy
                } else if desc.dotted && value.contains('.') {
                    let addr: Ipv4Addr = value.parse().map_err(|_| PacketError::Parse {
                        offset: value_start,
                        message: format!("invalid IPv4 address {value:?}"),
                    })?;
                    FieldValue::Value(u32::from(addr) as u64)
                } else {
                    let v = parse_u64(value, value_start)?;
                    if v > desc.max_value() {
                        return cur.err_at(
                            value_start,
                            format!("value {v} exceeds the {}-bit domain of {layer}.{key}", desc.width_bits),
                        );
                    }
                    FieldValue::Value(v)
                };
                pkt.fields_mut(layer).insert(key.to_string(), fv);
            }
            match cur.bump() {
                Some(b',') => continue,
                Some(b'}') => break,
                _ => return cur.err("expected ',' or '}'"),
            }
        }
        match cur.bump() {
            None => break,
            Some(b'+') => continue,
            Some(other) => {
                return cur.err_at(cur.pos - 1, format!("unexpected character '{}'", other as char))
            }
        }
    }
    if pkt.is_empty() {
        return Err(PacketError::Parse { offset: 0, message: "line defines no fields".to_string() });
    }
    Ok(pkt)
}

/// Completes a probe for transmission: DUMMY addresses and destination port
/// are replaced with the real endpoints, structural fields and lengths are
/// filled in when absent, and both checksums are (re)computed. Fields the
/// caller set explicitly are never touched.
pub fn fill_defaults(
    pkt: &PacketDescription,
    source: Ipv4Addr,
    target: Ipv4Addr,
    open_port: u16,
) -> PacketDescription {
    let mut out = pkt.clone();
    if out.is_blank {
        return out;
    }

    let fill = |map: &mut BTreeMap<String, FieldValue>, name: &str, value: u64| {
        let entry = map.entry(name.to_string()).or_insert(FieldValue::Dummy);
        if matches!(entry, FieldValue::Dummy) {
            *entry = FieldValue::Value(value);
        }
    };

    fill(&mut out.ip_fields, "saddr", u32::from(source) as u64);
    fill(&mut out.ip_fields, "daddr", u32::from(target) as u64);
    fill(&mut out.tcp_fields, "dport", open_port as u64);

    let opt_len = options_wire_len(&out.tcp_options);
    let set_if_absent = |map: &mut BTreeMap<String, FieldValue>, name: &str, value: u64| {
        map.entry(name.to_string()).or_insert(FieldValue::Value(value));
    };
    set_if_absent(&mut out.ip_fields, "version", 4);
    set_if_absent(&mut out.ip_fields, "ihl", 5);
    set_if_absent(&mut out.ip_fields, "ttl", 64);
    set_if_absent(&mut out.ip_fields, "protocol", 6);
    set_if_absent(&mut out.ip_fields, "len", (20 + 20 + opt_len) as u64);
    set_if_absent(&mut out.tcp_fields, "offset", (5 + opt_len / 4) as u64);

    // Checksums are always recomputed, over a header image with both
    // checksum fields zeroed.
    out.ip_fields.insert("csum".to_string(), FieldValue::Value(0));
    out.tcp_fields.insert("csum".to_string(), FieldValue::Value(0));
    let (ip_csum, tcp_csum) = wire::checksums(&out);
    out.ip_fields.insert("csum".to_string(), FieldValue::Value(ip_csum as u64));
    out.tcp_fields.insert("csum".to_string(), FieldValue::Value(tcp_csum as u64));
    out
}

/// Byte-level assembly of the IPv4+TCP header image. Used for checksum
/// computation and by the raw-socket backend.
pub mod wire {
    use super::*;

    fn opt_bytes(options: &[TcpOption]) -> Vec<u8> {
        let mut out = Vec::new();
        for opt in options {
            let v = opt.value.unwrap_or(0);
            match opt.kind {
                OptionKind::N => out.push(1),
                OptionKind::W => out.extend_from_slice(&[3, 3, v as u8]),
                OptionKind::M | OptionKind::E => {
                    out.push(2);
                    out.push(4);
                    out.extend_from_slice(&(v as u16).to_be_bytes());
                }
                OptionKind::T => {
                    out.push(8);
                    out.push(10);
                    out.extend_from_slice(&(v as u32).to_be_bytes());
                    out.extend_from_slice(&0u32.to_be_bytes());
                }
            }
        }
        out
    }

    /// Assembles the 20-byte IP header, the TCP header and its options.
    /// Absent fields are emitted as zero.
    pub fn assemble(pkt: &PacketDescription) -> Vec<u8> {
        let ip = |n: &str| pkt.ip(n).unwrap_or(0);
        let tcp = |n: &str| pkt.tcp(n).unwrap_or(0);
        let opts = opt_bytes(&pkt.tcp_options);

        let mut bytes = Vec::with_capacity(40 + opts.len());
        bytes.push(((ip("version") as u8) << 4) | (ip("ihl") as u8 & 0x0f));
        bytes.push(ip("tos") as u8);
        bytes.extend_from_slice(&(ip("len") as u16).to_be_bytes());
        bytes.extend_from_slice(&(ip("id") as u16).to_be_bytes());
        let frag = ((ip("flags") as u16) << 13) | (ip("fragoff") as u16 & 0x1fff);
        bytes.extend_from_slice(&frag.to_be_bytes());
        bytes.push(ip("ttl") as u8);
        bytes.push(ip("protocol") as u8);
        bytes.extend_from_slice(&(ip("csum") as u16).to_be_bytes());
        bytes.extend_from_slice(&(ip("saddr") as u32).to_be_bytes());
        bytes.extend_from_slice(&(ip("daddr") as u32).to_be_bytes());

        bytes.extend_from_slice(&(tcp("sport") as u16).to_be_bytes());
        bytes.extend_from_slice(&(tcp("dport") as u16).to_be_bytes());
        bytes.extend_from_slice(&(tcp("seq") as u32).to_be_bytes());
        bytes.extend_from_slice(&(tcp("ack") as u32).to_be_bytes());
        let off_flags = ((tcp("offset") as u16) << 12) | (tcp("flags") as u16 & 0x3f);
        bytes.extend_from_slice(&off_flags.to_be_bytes());
        bytes.extend_from_slice(&(tcp("window") as u16).to_be_bytes());
        bytes.extend_from_slice(&(tcp("csum") as u16).to_be_bytes());
        bytes.extend_from_slice(&(tcp("urgent") as u16).to_be_bytes());
        bytes.extend_from_slice(&opts);
        bytes
    }

    /// RFC 1071 internet checksum.
    pub fn internet_checksum(bytes: &[u8]) -> u16 {
        let mut sum = 0u32;
        for chunk in bytes.chunks(2) {
            let word = if chunk.len() == 2 {
                u16::from_be_bytes([chunk[0], chunk[1]])
            } else {
                u16::from_be_bytes([chunk[0], 0])
            };
            sum += word as u32;
            while sum > 0xffff {
                sum = (sum & 0xffff) + (sum >> 16);
            }
        }
        !(sum as u16)
    }

    /// IP header checksum and TCP checksum (over the pseudo-header and the
    /// TCP header; probes carry no payload). The packet's own checksum
    /// fields must be zero when this is called.
    pub fn checksums(pkt: &PacketDescription) -> (u16, u16) {
        let bytes = assemble(pkt);
        let ip_csum = internet_checksum(&bytes[..20]);

        let tcp_segment = &bytes[20..];
        let mut pseudo = Vec::with_capacity(12 + tcp_segment.len());
        pseudo.extend_from_slice(&bytes[12..16]);
        pseudo.extend_from_slice(&bytes[16..20]);
        pseudo.push(0);
        pseudo.push(pkt.ip("protocol").unwrap_or(6) as u8);
        pseudo.extend_from_slice(&(tcp_segment.len() as u16).to_be_bytes());
        pseudo.extend_from_slice(tcp_segment);
        let tcp_csum = internet_checksum(&pseudo);
        (ip_csum, tcp_csum)
    }

    /// Parses a raw IPv4+TCP packet back into a description. Unknown TCP
    /// option kinds are skipped.
    pub fn parse(bytes: &[u8]) -> Option<PacketDescription> {
        if bytes.len() < 20 {
            return None;
        }
        let mut pkt = PacketDescription::default();
        let ihl = (bytes[0] & 0x0f) as usize;
        pkt.set_ip("version", (bytes[0] >> 4) as u64).ok()?;
        pkt.set_ip("ihl", ihl as u64).ok()?;
        pkt.set_ip("tos", bytes[1] as u64).ok()?;
        pkt.set_ip("len", u16::from_be_bytes([bytes[2], bytes[3]]) as u64).ok()?;
        pkt.set_ip("id", u16::from_be_bytes([bytes[4], bytes[5]]) as u64).ok()?;
        let frag = u16::from_be_bytes([bytes[6], bytes[7]]);
        pkt.set_ip("flags", (frag >> 13) as u64).ok()?;
        pkt.set_ip("fragoff", (frag & 0x1fff) as u64).ok()?;
        pkt.set_ip("ttl", bytes[8] as u64).ok()?;
        pkt.set_ip("protocol", bytes[9] as u64).ok()?;
        pkt.set_ip("csum", u16::from_be_bytes([bytes[10], bytes[11]]) as u64).ok()?;
        pkt.set_ip("saddr", u32::from_be_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as u64)
            .ok()?;
        pkt.set_ip("daddr", u32::from_be_bytes([bytes[16], bytes[17], bytes[18], bytes[19]]) as u64)
            .ok()?;

        let tcp_at = ihl.max(5) * 4;
        let tcp = bytes.get(tcp_at..)?;
        if tcp.len() < 20 {
            return None;
        }
        pkt.set_tcp("sport", u16::from_be_bytes([tcp[0], tcp[1]]) as u64).ok()?;
        pkt.set_tcp("dport", u16::from_be_bytes([tcp[2], tcp[3]]) as u64).ok()?;
        pkt.set_tcp("seq", u32::from_be_bytes([tcp[4], tcp[5], tcp[6], tcp[7]]) as u64).ok()?;
        pkt.set_tcp("ack", u32::from_be_bytes([tcp[8], tcp[9], tcp[10], tcp[11]]) as u64).ok()?;
        let off_flags = u16::from_be_bytes([tcp[12], tcp[13]]);
        let offset = (off_flags >> 12) as usize;
        pkt.set_tcp("offset", offset as u64).ok()?;
        pkt.set_tcp("flags", (off_flags & 0x3f) as u64).ok()?;
        pkt.set_tcp("window", u16::from_be_bytes([tcp[14], tcp[15]]) as u64).ok()?;
        pkt.set_tcp("csum", u16::from_be_bytes([tcp[16], tcp[17]]) as u64).ok()?;
        pkt.set_tcp("urgent", u16::from_be_bytes([tcp[18], tcp[19]]) as u64).ok()?;

        let opt_end = (offset * 4).min(tcp.len());
        let mut at = 20;
        while at < opt_end {
            match tcp[at] {
                0 => break,
                1 => {
                    pkt.tcp_options.push(TcpOption::nop());
                    at += 1;
                }
                kind => {
                    let len = *tcp.get(at + 1)? as usize;
                    if len < 2 || at + len > opt_end {
                        return None;
                    }
                    let body = &tcp[at + 2..at + len];
                    match kind {
                        2 if body.len() == 2 => pkt.tcp_options.push(TcpOption::with_value(
                            OptionKind::M,
                            u16::from_be_bytes([body[0], body[1]]) as u64,
                        )),
                        3 if body.len() == 1 => pkt
                            .tcp_options
                            .push(TcpOption::with_value(OptionKind::W, body[0] as u64)),
                        8 if body.len() == 8 => pkt.tcp_options.push(TcpOption::with_value(
                            OptionKind::T,
                            u32::from_be_bytes([body[0], body[1], body[2], body[3]]) as u64,
                        )),
                        _ => {}
                    }
                    at += len;
                }
            }
        }
        Some(pkt)
    }
}
