//! Generation-based fuzzer for the OS fingerprinting corpus.
//!
//! For every selected TCP header field a stepped value list covering the
//! whole field domain is produced; the cartesian product of those lists,
//! crossed with a set of TCP option templates, yields the probe set. Every
//! probe gets the SYN flag forced on (a target only answers connection
//! attempts) and DUMMY placeholders for the address fields and the
//! destination port, which depend on the target and are resolved at send
//! time.

use itertools::Itertools;
use thiserror::Error;

use crate::corpus::{CorpusKind, FuzzCorpus};
use crate::packet::{
    self, encode_apd, options_word_aligned, FieldDescriptor, FieldValue, Layer, OptionKind,
    PacketDescription, TcpOption, FLAG_SYN,
};

/// Refuse to materialize corpora beyond this many lines unless the caller
/// raises the cap explicitly.
pub const DEFAULT_CARDINALITY_CAP: u128 = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FuzzGenError {
    #[error("field {layer}.{name} is not a known header field", layer = .0, name = .1)]
    UnknownField(Layer, String),
    #[error("only TCP header fields can be selected for fuzzing, not {0}.{1}")]
    NotTcpLayer(Layer, String),
    #[error("step must be at least 1")]
    ZeroStep,
    #[error("tcp.{0} is resolved at send time and cannot be fuzzed")]
    ReservedField(String),
    #[error("cross product would produce {cardinality} tuples, above the cap of {cap}")]
    CardinalityCap { cardinality: u128, cap: u128 },
    #[error("cross product of zero lists")]
    NoLists,
    #[error("option template {0:?} does not pad to a 32-bit word multiple")]
    UnalignedTemplate(String),
    #[error("tuple arity {got} does not match the {want} selected fields")]
    ArityMismatch { got: usize, want: usize },
}

/// One field picked for fuzzing together with its sampling step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldChoice {
    pub field: &'static FieldDescriptor,
    pub step: u64,
}

/// Ordered set of fuzzed fields. Only TCP-layer fields are accepted:
/// unusual IP headers get dropped or answered by intermediate routers, so
/// fuzzing them would fingerprint the next hop instead of the target.
/// `dport` is reserved for the open port and `csum`/`ackrel` are derived,
/// so none of them can be selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSelection {
    choices: Vec<FieldChoice>,
}

impl FieldSelection {
    pub fn new(choices: Vec<(&str, u64)>) -> Result<Self, FuzzGenError> {
        let mut out = Vec::with_capacity(choices.len());
        for (name, step) in choices {
            let field = packet::field_descriptor(Layer::Tcp, name)
                .or_else(|| packet::field_descriptor(Layer::Ip, name))
                .ok_or_else(|| FuzzGenError::UnknownField(Layer::Tcp, name.to_string()))?;
            if field.layer != Layer::Tcp {
                return Err(FuzzGenError::NotTcpLayer(field.layer, name.to_string()));
            }
            if matches!(field.name, "dport" | "csum" | "ackrel") {
                return Err(FuzzGenError::ReservedField(name.to_string()));
            }
            if step == 0 {
                return Err(FuzzGenError::ZeroStep);
            }
            out.push(FieldChoice { field, step });
        }
        Ok(FieldSelection { choices: out })
    }

    /// Same step for every field.
    pub fn uniform(names: &[&str], step: u64) -> Result<Self, FuzzGenError> {
        Self::new(names.iter().map(|n| (*n, step)).collect())
    }

    /// The corpus configuration used when none is given: the flag bits
    /// exhaustively, coarse sweeps of the window and urgent-pointer
    /// domains.
    pub fn default_selection() -> Self {
        Self::new(vec![("flags", 1), ("window", 4096), ("urgent", 16384)])
            .expect("built-in selection is valid")
    }

    pub fn choices(&self) -> &[FieldChoice] {
        &self.choices
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }
}

/// Per-field value lists, one per selected field, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueLists {
    pub lists: Vec<Vec<u64>>,
}

/// Every `step`-th value of a `width_bits`-wide domain, starting at 0 and
/// ending at the largest multiple of `step` that still fits:
/// `[0, s, 2s, ...]` with `k*s <= 2^w - 1`.
pub fn stepped_values(width_bits: u32, step: u64) -> Vec<u64> {
    assert!(step >= 1, "step must be at least 1");
    assert!((1..=32).contains(&width_bits), "field widths are 1..=32 bits");
    let max = (1u64 << width_bits) - 1;
    (0..=max / step).map(|k| k * step).collect()
}

/// Builds the stepped value list for each selected field.
pub fn generate_fuzz(selection: &FieldSelection) -> ValueLists {
    let lists = selection
        .choices
        .iter()
        .map(|c| stepped_values(c.field.width_bits, c.step))
        .collect();
    ValueLists { lists }
}

/// All tuples `(v_1, ..., v_n)` with `v_k` drawn from the k-th list, in
/// lexicographic order by list position (the first list varies slowest).
/// Refuses when the product of the list lengths exceeds `cap`.
pub fn cross_product(lists: &ValueLists, cap: u128) -> Result<Vec<Vec<u64>>, FuzzGenError> {
    if lists.lists.is_empty() {
        return Err(FuzzGenError::NoLists);
    }
    let cardinality: u128 = lists.lists.iter().map(|l| l.len() as u128).product();
    if cardinality > cap {
        return Err(FuzzGenError::CardinalityCap { cardinality, cap });
    }
    if cardinality == 0 {
        return Ok(Vec::new());
    }

    let mut out = Vec::with_capacity(cardinality as usize);
    let mut indices = vec![0usize; lists.lists.len()];
    loop {
        out.push(indices.iter().zip(&lists.lists).map(|(&i, l)| l[i]).collect());
        // Odometer increment, rightmost digit fastest.
        let mut pos = indices.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < lists.lists[pos].len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

/// Ordered list of TCP option sequences appended to each probe tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionTemplateSet {
    pub templates: Vec<Vec<TcpOption>>,
}

impl OptionTemplateSet {
    /// Every sequence must occupy a whole number of 32-bit words, padding
    /// N options included.
    pub fn new(templates: Vec<Vec<TcpOption>>) -> Result<Self, FuzzGenError> {
        for t in &templates {
            if !options_word_aligned(t) {
                let rendered = t.iter().map(|o| o.to_string()).join(";");
                return Err(FuzzGenError::UnalignedTemplate(rendered));
            }
        }
        Ok(OptionTemplateSet { templates })
    }

    /// All permutations of every subset of {W, M, T}, each padded to a
    /// word boundary with trailing N options, with one fixed value per
    /// kind (M:1460, W:0, T:1). Order, not value, is the distinguishing
    /// signal, so values are not swept. 16 templates in total, the empty
    /// sequence included.
    pub fn default_templates() -> Self {
        let kinds = [
            TcpOption::with_value(OptionKind::W, 0),
            TcpOption::with_value(OptionKind::M, 1460),
            TcpOption::with_value(OptionKind::T, 1),
        ];
        let mut templates = Vec::new();
        for mask in 0u8..8 {
            let subset: Vec<TcpOption> =
                kinds.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, o)| *o).collect();
            let k = subset.len();
            for perm in subset.into_iter().permutations(k) {
                let mut seq = perm;
                while !options_word_aligned(&seq) {
                    seq.push(TcpOption::nop());
                }
                templates.push(seq);
            }
        }
        OptionTemplateSet { templates }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Renders one probe per (tuple, template) pair into a versioned corpus.
/// Deterministic: equal inputs produce byte-identical corpora.
pub fn generate_packets(
    tuples: &[Vec<u64>],
    selection: &FieldSelection,
    options: &OptionTemplateSet,
) -> Result<FuzzCorpus, FuzzGenError> {
    let mut lines = Vec::with_capacity(tuples.len() * options.templates.len());
    for tuple in tuples {
        if tuple.len() != selection.len() {
            return Err(FuzzGenError::ArityMismatch { got: tuple.len(), want: selection.len() });
        }
        for template in &options.templates {
            let mut pkt = PacketDescription::default();
            pkt.set(Layer::Ip, "saddr", FieldValue::Dummy).expect("saddr accepts DUMMY");
            pkt.set(Layer::Ip, "daddr", FieldValue::Dummy).expect("daddr accepts DUMMY");
            pkt.set(Layer::Tcp, "dport", FieldValue::Dummy).expect("dport accepts DUMMY");
            for (choice, value) in selection.choices.iter().zip(tuple) {
                pkt.set_tcp(choice.field.name, *value)
                    .expect("stepped values stay within the field domain");
            }
            let flags = pkt.tcp_or("flags", 0) | FLAG_SYN;
            pkt.set_tcp("flags", flags).expect("flags domain");
            pkt.tcp_options = template.clone();
            lines.push(encode_apd(&pkt).expect("generated packets encode"));
        }
    }
    Ok(FuzzCorpus::from_lines(CorpusKind::Os, lines))
}

/// The whole generation pipeline with the default cardinality cap.
pub fn generate_corpus(
    selection: &FieldSelection,
    options: &OptionTemplateSet,
    cap: u128,
) -> Result<FuzzCorpus, FuzzGenError> {
    let lists = generate_fuzz(selection);
    let tuples = cross_product(&lists, cap)?;
    let line_count = tuples.len() as u128 * options.templates.len() as u128;
    if line_count > cap {
        return Err(FuzzGenError::CardinalityCap { cardinality: line_count, cap });
    }
    generate_packets(&tuples, selection, options)
}
