//! TCP stack personalities: first-match rule tables mapping probe features
//! to response templates.

use std::collections::BTreeSet;

use crate::packet::{
    options_word_aligned, FieldValue, Layer, OptionKind, PacketDescription, TcpOption, FLAG_ACK,
    FLAG_RST, FLAG_SYN, IP_FLAG_DF,
};
use crate::sim::{syntax, KeyValue, PersonalityError};

/// How the response acknowledgment number is derived from the probe's
/// sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckMode {
    /// Always zero.
    Zero,
    /// Echoes the probe sequence number.
    Seq,
    /// Probe sequence number plus one, with 32-bit wraparound.
    SeqPlusOne,
}

impl AckMode {
    fn render(self) -> &'static str {
        match self {
            AckMode::Zero => "O",
            AckMode::Seq => "S",
            AckMode::SeqPlusOne => "SPP",
        }
    }

    fn parse(text: &str) -> Option<Self> {
        match text {
            "O" => Some(AckMode::Zero),
            "S" => Some(AckMode::Seq),
            "SPP" => Some(AckMode::SeqPlusOne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseTemplate {
    pub flags: u64,
    pub window: u64,
    pub ack: AckMode,
    pub options: Vec<TcpOption>,
    pub df: bool,
    pub tos: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortMatch {
    Open,
    Closed,
    Any,
}

/// One match/respond rule. All configured predicates must hold for the
/// rule to fire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    /// Probe flag bits that must all be set.
    pub flags_all: Option<u64>,
    /// Probe flag bits that must all be clear.
    pub flags_none: Option<u64>,
    pub port: PortMatch,
    pub window_min: Option<u64>,
    pub window_max: Option<u64>,
    /// Option kinds the probe must carry (in any order).
    pub has_options: Vec<OptionKind>,
    /// `None` means the stack stays silent.
    pub respond: Option<ResponseTemplate>,
}

impl Rule {
    fn matches(&self, probe: &PacketDescription, port_open: bool) -> bool {
        let flags = probe.tcp_or("flags", 0);
        if let Some(all) = self.flags_all {
            if flags & all != all {
                return false;
            }
        }
        if let Some(none) = self.flags_none {
            if flags & none != 0 {
                return false;
            }
        }
        match self.port {
            PortMatch::Open if !port_open => return false,
            PortMatch::Closed if port_open => return false,
            _ => {}
        }
        let window = probe.tcp_or("window", 0);
        if self.window_min.is_some_and(|min| window < min) {
            return false;
        }
        if self.window_max.is_some_and(|max| window > max) {
            return false;
        }
        self.has_options
            .iter()
            .all(|kind| probe.tcp_options.iter().any(|o| o.kind == *kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultBehavior {
    /// Answer unmatched probes with ACK+RST (the classic closed-port
    /// reaction).
    Rst,
    Silent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackPersonality {
    pub name: String,
    pub open_ports: BTreeSet<u16>,
    pub rules: Vec<Rule>,
    pub default: DefaultBehavior,
}

fn default_rst_template() -> ResponseTemplate {
    ResponseTemplate {
        flags: FLAG_ACK | FLAG_RST,
        window: 0,
        ack: AckMode::SeqPlusOne,
        options: Vec::new(),
        df: false,
        tos: 0,
    }
}

/// Window size the port scanner advertises. Nonzero so personalities can
/// treat zero-window corpus probes specially without breaking the
/// handshake.
pub const SCANNER_PROBE_WINDOW: u64 = 1024;

/// The shape of the probe the port scanner emits; personalities must
/// answer it with SYN+ACK on an open port for the handshake to work.
pub fn scanner_probe(port: u16) -> PacketDescription {
    let mut probe = PacketDescription::default();
    probe.set_tcp("dport", port as u64).expect("port fits");
    probe.set_tcp("flags", FLAG_SYN).expect("flags fit");
    probe.set_tcp("window", SCANNER_PROBE_WINDOW).expect("window fits");
    probe
}

impl ResponseTemplate {
    /// Plain SYN+ACK answer without options.
    pub fn syn_ack(window: u64, ack: AckMode) -> Self {
        ResponseTemplate { flags: FLAG_SYN | FLAG_ACK, window, ack, options: Vec::new(), df: false, tos: 0 }
    }
}

impl Rule {
    /// Answers every SYN to an open port with `template`.
    pub fn syn_to_open(template: ResponseTemplate) -> Self {
        Rule {
            flags_all: Some(FLAG_SYN),
            flags_none: None,
            port: PortMatch::Open,
            window_min: None,
            window_max: None,
            has_options: Vec::new(),
            respond: Some(template),
        }
    }
}

impl StackPersonality {
    /// Validates the handshake invariant: a plain SYN to an open port
    /// must be answered with a SYN+ACK template.
    pub fn validate(&self) -> Result<(), PersonalityError> {
        for template in self.rules.iter().filter_map(|r| r.respond.as_ref()) {
            if !options_word_aligned(&template.options) {
                return Err(PersonalityError::UnalignedOptions);
            }
        }
        if let Some(&port) = self.open_ports.iter().next() {
            let reply = respond_tcp(self, &scanner_probe(port));
            let flags = reply.as_ref().map(|r| r.tcp_or("flags", 0)).unwrap_or(0);
            if flags & (FLAG_SYN | FLAG_ACK) != FLAG_SYN | FLAG_ACK {
                return Err(PersonalityError::NoHandshake { port, flags });
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("kind = tcp\n");
        out.push_str(&format!("name = {}\n", self.name));
        let ports: Vec<String> = self.open_ports.iter().map(|p| p.to_string()).collect();
        out.push_str(&format!("open_ports = {}\n", ports.join(", ")));
        out.push_str(&format!(
            "default = {}\n",
            match self.default {
                DefaultBehavior::Rst => "rst",
                DefaultBehavior::Silent => "silent",
            }
        ));
        for rule in &self.rules {
            out.push('\n');
            out.push_str("rule:\n");
            if let Some(v) = rule.flags_all {
                out.push_str(&format!("  flags_all = {v}\n"));
            }
            if let Some(v) = rule.flags_none {
                out.push_str(&format!("  flags_none = {v}\n"));
            }
            let port = match rule.port {
                PortMatch::Open => "open",
                PortMatch::Closed => "closed",
                PortMatch::Any => "any",
            };
            out.push_str(&format!("  port = {port}\n"));
            if let Some(v) = rule.window_min {
                out.push_str(&format!("  window_min = {v}\n"));
            }
            if let Some(v) = rule.window_max {
                out.push_str(&format!("  window_max = {v}\n"));
            }
            if !rule.has_options.is_empty() {
                let kinds: Vec<String> =
                    rule.has_options.iter().map(|k| k.as_char().to_string()).collect();
                out.push_str(&format!("  has_options = {}\n", kinds.join(", ")));
            }
            match &rule.respond {
                None => out.push_str("  respond = silent\n"),
                Some(t) => {
                    out.push_str(&format!("  flags = {}\n", t.flags));
                    out.push_str(&format!("  window = {}\n", t.window));
                    out.push_str(&format!("  ack = {}\n", t.ack.render()));
                    if !t.options.is_empty() {
                        let opts: Vec<String> = t.options.iter().map(|o| o.to_string()).collect();
                        out.push_str(&format!("  options = {}\n", opts.join(";")));
                    }
                    out.push_str(&format!("  df = {}\n", if t.df { 1 } else { 0 }));
                    out.push_str(&format!("  tos = {}\n", t.tos));
                }
            }
        }
        out
    }
}

/// Evaluates a probe against a personality: the first matching rule's
/// template is instantiated, otherwise the default applies. `None` is
/// silence. A probe carrying RST never gets an answer, whatever the
/// rules say: TCP does not respond to resets.
pub fn respond_tcp(p: &StackPersonality, probe: &PacketDescription) -> Option<PacketDescription> {
    if probe.tcp_or("flags", 0) & FLAG_RST != 0 {
        return None;
    }
    let port_open = probe
        .tcp("dport")
        .map(|port| u16::try_from(port).map(|p16| p.open_ports.contains(&p16)).unwrap_or(false))
        .unwrap_or(false);
    let template = match p.rules.iter().find(|rule| rule.matches(probe, port_open)) {
        Some(rule) => rule.respond.clone()?,
        None => match p.default {
            DefaultBehavior::Silent => return None,
            DefaultBehavior::Rst => default_rst_template(),
        },
    };
    Some(instantiate(&template, probe))
}

fn instantiate(template: &ResponseTemplate, probe: &PacketDescription) -> PacketDescription {
    let probe_seq = probe.tcp_or("seq", 0) as u32;
    let ack = match template.ack {
        AckMode::Zero => 0,
        AckMode::Seq => probe_seq,
        AckMode::SeqPlusOne => probe_seq.wrapping_add(1),
    };
    let mut resp = PacketDescription::default();
    resp.set_ip("tos", template.tos).expect("tos domain");
    resp.set_ip("flags", if template.df { IP_FLAG_DF } else { 0 }).expect("ip flags domain");
    // Addressing is mirrored from the probe so the sender's source
    // filtering sees a reply from the probed endpoint.
    resp.set(Layer::Ip, "saddr", FieldValue::Value(probe.ip("daddr").unwrap_or(0)))
        .expect("saddr");
    resp.set(Layer::Ip, "daddr", FieldValue::Value(probe.ip("saddr").unwrap_or(0)))
        .expect("daddr");
    resp.set_tcp("sport", probe.tcp_or("dport", 0)).expect("sport");
    resp.set_tcp("dport", probe.tcp_or("sport", 0)).expect("dport");
    resp.set_tcp("seq", 0).expect("seq");
    resp.set_tcp("ack", ack as u64).expect("ack");
    resp.set_tcp("flags", template.flags).expect("flags");
    resp.set_tcp("window", template.window).expect("window");
    resp.tcp_options = template.options.clone();
    resp
}

fn parse_u64_value(kv: &KeyValue) -> Result<u64, PersonalityError> {
    kv.value
        .parse::<u64>()
        .map_err(|_| syntax(kv.line, format!("{}: expected an integer, found {:?}", kv.key, kv.value)))
}

fn parse_options_value(kv: &KeyValue) -> Result<Vec<TcpOption>, PersonalityError> {
    let mut out = Vec::new();
    for part in kv.value.split(';') {
        let part = part.trim();
        let mut chars = part.chars();
        let kind = chars
            .next()
            .and_then(OptionKind::from_char)
            .ok_or_else(|| syntax(kv.line, format!("invalid option {part:?}")))?;
        let rest = chars.as_str();
        let value = if rest.is_empty() {
            None
        } else {
            let num = rest.strip_prefix(':').ok_or_else(|| {
                syntax(kv.line, format!("expected ':' after option kind in {part:?}"))
            })?;
            Some(num.parse::<u64>().map_err(|_| {
                syntax(kv.line, format!("invalid option value in {part:?}"))
            })?)
        };
        if kind.takes_value() == value.is_none() {
            return Err(syntax(kv.line, format!("option {} value mismatch", kind.as_char())));
        }
        out.push(TcpOption { kind, value });
    }
    Ok(out)
}

pub(crate) fn parse_stack(
    top: &[KeyValue],
    rule_blocks: &[Vec<KeyValue>],
) -> Result<StackPersonality, PersonalityError> {
    let mut name = None;
    let mut open_ports = BTreeSet::new();
    let mut default = DefaultBehavior::Rst;
    for kv in top {
        match kv.key.as_str() {
            "kind" => {}
            "name" => name = Some(kv.value.clone()),
            "open_ports" => {
                for part in kv.value.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let port = part.parse::<u16>().map_err(|_| {
                        syntax(kv.line, format!("invalid port number {part:?}"))
                    })?;
                    open_ports.insert(port);
                }
            }
            "default" => {
                default = match kv.value.as_str() {
                    "rst" => DefaultBehavior::Rst,
                    "silent" => DefaultBehavior::Silent,
                    other => {
                        return Err(syntax(kv.line, format!("unknown default {other:?}")))
                    }
                }
            }
            other => return Err(syntax(kv.line, format!("unknown key {other:?}"))),
        }
    }

    let mut rules = Vec::new();
    for block in rule_blocks {
        let mut rule = Rule {
            flags_all: None,
            flags_none: None,
            port: PortMatch::Any,
            window_min: None,
            window_max: None,
            has_options: Vec::new(),
            respond: None,
        };
        let mut silent = false;
        let mut flags = None;
        let mut window = None;
        let mut ack = None;
        let mut options = Vec::new();
        let mut df = false;
        let mut tos = 0;
        let mut block_line = 0;
        for kv in block {
            block_line = kv.line;
            match kv.key.as_str() {
                "flags_all" => rule.flags_all = Some(parse_u64_value(kv)?),
                "flags_none" => rule.flags_none = Some(parse_u64_value(kv)?),
                "port" => {
                    rule.port = match kv.value.as_str() {
                        "open" => PortMatch::Open,
                        "closed" => PortMatch::Closed,
                        "any" => PortMatch::Any,
                        other => {
                            return Err(syntax(kv.line, format!("unknown port match {other:?}")))
                        }
                    }
                }
                "window_min" => rule.window_min = Some(parse_u64_value(kv)?),
                "window_max" => rule.window_max = Some(parse_u64_value(kv)?),
                "has_options" => {
                    for part in kv.value.split(',') {
                        let part = part.trim();
                        let kind = (part.len() == 1)
                            .then(|| part.chars().next().and_then(OptionKind::from_char))
                            .flatten()
                            .ok_or_else(|| {
                                syntax(kv.line, format!("invalid option kind {part:?}"))
                            })?;
                        rule.has_options.push(kind);
                    }
                }
                "respond" if kv.value == "silent" => silent = true,
                "flags" => flags = Some(parse_u64_value(kv)?),
                "window" => window = Some(parse_u64_value(kv)?),
                "ack" => {
                    ack = Some(AckMode::parse(&kv.value).ok_or_else(|| {
                        syntax(kv.line, format!("ack must be O, S or SPP, found {:?}", kv.value))
                    })?)
                }
                "options" => options = parse_options_value(kv)?,
                "df" => df = parse_u64_value(kv)? != 0,
                "tos" => tos = parse_u64_value(kv)?,
                other => return Err(syntax(kv.line, format!("unknown rule key {other:?}"))),
            }
        }
        rule.respond = if silent {
            None
        } else {
            let flags =
                flags.ok_or_else(|| syntax(block_line, "rule is missing `flags` (or `respond = silent`)"))?;
            let window =
                window.ok_or_else(|| syntax(block_line, "rule is missing `window`"))?;
            let ack = ack.ok_or_else(|| syntax(block_line, "rule is missing `ack`"))?;
            Some(ResponseTemplate { flags, window, ack, options, df, tos })
        };
        rules.push(rule);
    }

    let personality = StackPersonality {
        name: name.ok_or(PersonalityError::MissingKey("name"))?,
        open_ports,
        rules,
        default,
    };
    personality.validate()?;
    Ok(personality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{parse_personality, Personality};

    fn minimal(open: &[u16], default: DefaultBehavior) -> StackPersonality {
        StackPersonality {
            name: "test".to_string(),
            open_ports: open.iter().copied().collect(),
            rules: vec![Rule {
                flags_all: Some(FLAG_SYN),
                flags_none: None,
                port: PortMatch::Open,
                window_min: None,
                window_max: None,
                has_options: Vec::new(),
                respond: Some(ResponseTemplate {
                    flags: FLAG_SYN | FLAG_ACK,
                    window: 5792,
                    ack: AckMode::SeqPlusOne,
                    options: vec![TcpOption::with_value(OptionKind::M, 1460)],
                    df: true,
                    tos: 0,
                }),
            }],
            default,
        }
    }

    fn syn_probe(port: u16, seq: u32) -> PacketDescription {
        let mut p = PacketDescription::default();
        p.set_tcp("dport", port as u64).unwrap();
        p.set_tcp("flags", FLAG_SYN).unwrap();
        p.set_tcp("seq", seq as u64).unwrap();
        p
    }

    #[test]
    fn syn_to_open_port_acks_seq_plus_one() {
        let p = minimal(&[80], DefaultBehavior::Rst);
        let resp = respond_tcp(&p, &syn_probe(80, 1000)).unwrap();
        assert_eq!(resp.tcp("ack"), Some(1001));
        assert_eq!(resp.tcp("flags"), Some(FLAG_SYN | FLAG_ACK));
        assert_eq!(resp.tcp("sport"), Some(80));
    }

    #[test]
    fn seq_wraparound_in_ack_computation() {
        let p = minimal(&[80], DefaultBehavior::Rst);
        let resp = respond_tcp(&p, &syn_probe(80, u32::MAX)).unwrap();
        assert_eq!(resp.tcp("ack"), Some(0));
    }

    #[test]
    fn closed_port_gets_the_default_rst() {
        let p = minimal(&[80], DefaultBehavior::Rst);
        let resp = respond_tcp(&p, &syn_probe(81, 5)).unwrap();
        assert_ne!(resp.tcp_or("flags", 0) & FLAG_RST, 0);
    }

    #[test]
    fn silent_default_yields_no_response() {
        let p = minimal(&[80], DefaultBehavior::Silent);
        assert!(respond_tcp(&p, &syn_probe(81, 5)).is_none());
    }

    #[test]
    fn rst_probes_are_never_answered() {
        let p = minimal(&[80], DefaultBehavior::Rst);
        let mut probe = syn_probe(80, 5);
        probe.set_tcp("flags", FLAG_SYN | FLAG_RST).unwrap();
        assert!(respond_tcp(&p, &probe).is_none());
    }

    #[test]
    fn handshake_validation_rejects_rst_only_personalities() {
        let mut p = minimal(&[80], DefaultBehavior::Rst);
        p.rules.clear();
        assert!(matches!(p.validate(), Err(PersonalityError::NoHandshake { port: 80, .. })));
    }

    #[test]
    fn validation_passes_without_open_ports() {
        let mut p = minimal(&[], DefaultBehavior::Silent);
        p.rules.clear();
        assert!(p.validate().is_ok());
    }

    #[test]
    fn parse_render_round_trip() {
        let text = "\
kind = tcp
name = sample
open_ports = 22, 80
default = silent

rule:
  flags_all = 34
  port = open
  respond = silent

rule:
  flags_all = 2
  port = open
  has_options = W, T
  flags = 18
  window = 1024
  ack = SPP
  options = M:1460;N;W:3
  df = 1
  tos = 16

rule:
  flags_all = 2
  port = open
  flags = 18
  window = 2048
  ack = SPP
  df = 0
  tos = 0
";
        let Personality::Tcp(p) = parse_personality(text).unwrap() else {
            panic!("expected a tcp personality");
        };
        assert_eq!(p.open_ports.len(), 2);
        assert_eq!(p.rules.len(), 3);
        let reparsed = parse_personality(&p.render()).unwrap();
        assert_eq!(reparsed, Personality::Tcp(p));
    }

    #[test]
    fn unaligned_template_options_are_rejected() {
        let mut p = minimal(&[80], DefaultBehavior::Rst);
        p.rules[0].respond.as_mut().unwrap().options =
            vec![TcpOption::with_value(OptionKind::W, 1)];
        assert!(matches!(p.validate(), Err(PersonalityError::UnalignedOptions)));
    }

    #[test]
    fn window_class_rules_discriminate() {
        let mut p = minimal(&[80], DefaultBehavior::Rst);
        p.rules.insert(
            0,
            Rule {
                flags_all: Some(FLAG_SYN),
                flags_none: None,
                port: PortMatch::Open,
                window_min: Some(32768),
                window_max: None,
                has_options: Vec::new(),
                respond: Some(ResponseTemplate {
                    flags: FLAG_SYN | FLAG_ACK,
                    window: 100,
                    ack: AckMode::Seq,
                    options: Vec::new(),
                    df: false,
                    tos: 0,
                }),
            },
        );
        let mut high = syn_probe(80, 9);
        high.set_tcp("window", 60000).unwrap();
        assert_eq!(respond_tcp(&p, &high).unwrap().tcp("window"), Some(100));
        let low = syn_probe(80, 9);
        assert_eq!(respond_tcp(&p, &low).unwrap().tcp("window"), Some(5792));
    }
}
