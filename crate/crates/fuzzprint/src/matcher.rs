//! Behavioral agreement between fingerprints.
//!
//! Two responses to the same probe are compared feature-wise; the
//! arithmetic mean over all probes, times 100, is the percentage agreement
//! of two fingerprints. Only constant-content features take part: values
//! that form sequences or clusters across probes (TTL, IP id, initial
//! sequence numbers, timestamps) are excluded.
//!
//! For OS responses the compared feature set is fixed to seven entries:
//! whether the target responded at all, the TCP flags, the window size,
//! the acknowledgment relation, the option sequence (order and values, as
//! one feature), the DF bit and the TOS byte. FTP responses compare as a
//! whole: equal status code or both blank.
//!
//! All percentages are exact rationals internally and are only rounded
//! (half-up, two decimals) for display, so identities like the 100.00
//! diagonal and the symmetry of the matrix hold exactly.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::corpus::{content_checksum, CorpusKind, FuzzCorpus};
use crate::packet::{PacketDescription, TcpOption, IP_FLAG_DF};
use crate::store::{Collection, Fingerprint, Record, StoreError};

/// How a response's acknowledgment number relates to the probe's sequence
/// number. Checked in this order, so zero wins the ties at `seq = 0` and
/// at `seq = 2^32 - 1` (where wraparound would also make `seq + 1` fit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AckRelation {
    Zero = 0,
    Seq = 1,
    SeqPlusOne = 2,
    Other = 3,
}

impl AckRelation {
    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => AckRelation::Zero,
            1 => AckRelation::Seq,
            2 => AckRelation::SeqPlusOne,
            3 => AckRelation::Other,
            _ => return None,
        })
    }
}

/// Classifies an acknowledgment number against the probe's sequence
/// number, with 32-bit wraparound for the `seq + 1` case.
pub fn ack_relation(probe_seq: u32, response_ack: u32) -> AckRelation {
    if response_ack == 0 {
        AckRelation::Zero
    } else if response_ack == probe_seq {
        AckRelation::Seq
    } else if response_ack == probe_seq.wrapping_add(1) {
        AckRelation::SeqPlusOne
    } else {
        AckRelation::Other
    }
}

pub type Fraction = Ratio<u64>;

/// An exact percentage in `[0, 100]`. Display rounds half-up to two
/// decimals; the value itself stays rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percentage(Fraction);

impl Percentage {
    pub fn from_fraction(value: Fraction) -> Self {
        Percentage(value * Fraction::from_integer(100))
    }

    pub fn hundred() -> Self {
        Percentage(Fraction::from_integer(100))
    }

    pub fn as_ratio(&self) -> Fraction {
        self.0
    }

    pub fn is_exactly_100(&self) -> bool {
        self.0 == Fraction::from_integer(100)
    }

    /// The value in hundredths of a percent, rounded half-up.
    pub fn hundredths(&self) -> u64 {
        let scaled = self.0 * Fraction::from_integer(100) + Fraction::new(1, 2);
        scaled.floor().to_integer()
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("incompatible corpora: {0}")]
    IncompatibleCorpus(String),
    #[error("need at least {need} compatible fingerprints, found {found}")]
    InsufficientData { need: usize, found: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The feature vector actually compared for one record. Derived features
/// come from the stored record alone, so two fingerprint files are all the
/// matcher ever needs.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Features {
    Blank,
    Os {
        flags: Option<u64>,
        window: Option<u64>,
        ackrel: Option<AckRelation>,
        options: Vec<TcpOption>,
        df: Option<bool>,
        tos: Option<u64>,
    },
    Ftp(u16),
}

const OS_FEATURE_COUNT: u64 = 7;

fn os_features(pkt: &PacketDescription) -> Features {
    Features::Os {
        flags: pkt.tcp("flags"),
        window: pkt.tcp("window"),
        ackrel: pkt.tcp("ackrel").and_then(AckRelation::from_code),
        options: pkt.tcp_options.clone(),
        df: pkt.ip("flags").map(|f| f & IP_FLAG_DF != 0),
        tos: pkt.ip("tos"),
    }
}

fn features(record: &Record) -> Features {
    match record {
        Record::Blank => Features::Blank,
        Record::Os(pkt) => os_features(pkt),
        Record::Ftp(code) => Features::Ftp(*code),
    }
}

/// Agreement of two records from the same probe index, as a fraction in
/// `[0, 1]`. Mutual silence is full agreement — not answering is behavior
/// too. A one-sided answer is full disagreement. Two OS answers agree in
/// the fraction of the seven compared features that are equal; two FTP
/// answers agree exactly when their status codes are equal.
pub fn match_response(a: &Record, b: &Record, kind: CorpusKind) -> Fraction {
    match (features(a), features(b)) {
        (Features::Blank, Features::Blank) => Fraction::from_integer(1),
        (Features::Blank, _) | (_, Features::Blank) => Fraction::from_integer(0),
        (Features::Ftp(ca), Features::Ftp(cb)) => {
            debug_assert_eq!(kind, CorpusKind::Ftp);
            Fraction::from_integer(u64::from(ca == cb))
        }
        (
            Features::Os { flags: fa, window: wa, ackrel: aa, options: oa, df: da, tos: ta },
            Features::Os { flags: fb, window: wb, ackrel: ab, options: ob, df: db, tos: tb },
        ) => {
            debug_assert_eq!(kind, CorpusKind::Os);
            // Both sides responded: that is the first agreeing feature.
            let mut equal = 1;
            equal += u64::from(fa == fb);
            equal += u64::from(wa == wb);
            equal += u64::from(aa == ab);
            equal += u64::from(oa == ob);
            equal += u64::from(da == db);
            equal += u64::from(ta == tb);
            Fraction::new(equal, OS_FEATURE_COUNT)
        }
        _ => Fraction::from_integer(0),
    }
}

fn ensure_comparable(a: &Fingerprint, b: &Fingerprint) -> Result<(), MatchError> {
    if a.kind != b.kind {
        return Err(MatchError::IncompatibleCorpus(format!(
            "cannot compare a {} fingerprint with a {} fingerprint",
            a.kind, b.kind
        )));
    }
    if a.corpus_checksum != b.corpus_checksum {
        return Err(MatchError::IncompatibleCorpus(format!(
            "corpus stamps differ ({} vs {})",
            a.corpus_checksum, b.corpus_checksum
        )));
    }
    if a.lines.len() != b.lines.len() {
        return Err(MatchError::IncompatibleCorpus(format!(
            "record counts differ ({} vs {}) despite equal corpus stamps",
            a.lines.len(),
            b.lines.len()
        )));
    }
    if a.lines.is_empty() {
        return Err(MatchError::InsufficientData { need: 1, found: 0 });
    }
    Ok(())
}

/// Percentage agreement of two fingerprints taken with the same corpus:
/// 100 times the arithmetic mean of the per-probe agreements. Symmetric in
/// its arguments and exactly 100 for identical fingerprints.
pub fn match_file(a: &Fingerprint, b: &Fingerprint) -> Result<Percentage, MatchError> {
    ensure_comparable(a, b)?;
    let n = a.lines.len() as u64;
    let total: Fraction = a
        .lines
        .iter()
        .zip(&b.lines)
        .map(|(ra, rb)| match_response(ra, rb, a.kind))
        .sum();
    Ok(Percentage::from_fraction(total / Fraction::from_integer(n)))
}

/// The labels most similar to `query` among the stored fingerprints of the
/// same kind and corpus, best first, at most five. Ties are broken by
/// label, ascending. Stored fingerprints with a different corpus stamp are
/// skipped; an empty compatible set yields an empty list.
pub fn rank(
    collection: &Collection,
    query: &Fingerprint,
) -> Result<Vec<(String, Percentage)>, MatchError> {
    let mut scored = Vec::new();
    for stored in collection.load_all(query.kind)? {
        if stored.corpus_checksum != query.corpus_checksum
            || stored.lines.len() != query.lines.len()
        {
            continue;
        }
        let score = match_file(query, &stored)?;
        scored.push((stored.label, score));
    }
    scored.sort_by(|(la, pa), (lb, pb)| pb.cmp(pa).then_with(|| la.cmp(lb)));
    scored.truncate(5);
    Ok(scored)
}

/// Pairwise percentage matrix plus the per-label rankings and the
/// discriminative probe index set.
#[derive(Debug, Clone)]
pub struct SimilarityReport {
    pub kind: CorpusKind,
    pub labels: Vec<String>,
    /// Probes per fingerprint.
    pub probe_count: usize,
    pub matrix: Vec<Vec<Percentage>>,
    /// For each label, the other labels ranked by similarity (top five).
    pub top5: Vec<Vec<(String, Percentage)>>,
    /// Probe indices at which at least two fingerprints disagree. Empty
    /// when the collection holds fewer than two fingerprints.
    pub discriminative: BTreeSet<usize>,
}

impl SimilarityReport {
    /// Aligned text table.
    pub fn render_table(&self) -> String {
        let mut widths: Vec<usize> = self.labels.iter().map(|l| l.len().max(6)).collect();
        let label_col = self.labels.iter().map(String::len).max().unwrap_or(0).max(4);
        for (j, w) in widths.iter_mut().enumerate() {
            for row in &self.matrix {
                *w = (*w).max(row[j].to_string().len());
            }
        }
        let mut out = String::new();
        out.push_str(&format!("{:label_col$}", ""));
        for (label, w) in self.labels.iter().zip(&widths) {
            out.push_str(&format!("  {label:>w$}"));
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(&format!("{label:label_col$}"));
            for (j, w) in widths.iter().enumerate() {
                out.push_str(&format!("  {:>w$}", self.matrix[i][j].to_string()));
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable rows `label,label,percentage`, in label order.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.labels.iter().enumerate() {
            for (j, b) in self.labels.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    csv_field(a),
                    csv_field(b),
                    self.matrix[i][j]
                ));
            }
        }
        out
    }
}

fn csv_field(text: &str) -> String {
    if text.contains(',') || text.contains('"') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn compatible_set(fps: &[Fingerprint]) -> Result<(), MatchError> {
    for pair in fps.windows(2) {
        if pair[0].corpus_checksum != pair[1].corpus_checksum {
            return Err(MatchError::IncompatibleCorpus(format!(
                "collection mixes corpus stamps ({} vs {})",
                pair[0].corpus_checksum, pair[1].corpus_checksum
            )));
        }
    }
    Ok(())
}

/// Full pairwise similarity matrix over every stored fingerprint of one
/// kind. The diagonal is exactly 100.00 and the matrix is symmetric by
/// construction: each unordered pair is computed once.
pub fn similarity_matrix(
    collection: &Collection,
    kind: CorpusKind,
) -> Result<SimilarityReport, MatchError> {
    let fps = collection.load_all(kind)?;
    if fps.is_empty() {
        return Err(MatchError::InsufficientData { need: 1, found: 0 });
    }
    compatible_set(&fps)?;

    let n = fps.len();
    let mut matrix = vec![vec![Percentage::hundred(); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let score = match_file(&fps[i], &fps[j])?;
            matrix[i][j] = score;
            matrix[j][i] = score;
        }
    }

    let labels: Vec<String> = fps.iter().map(|f| f.label.clone()).collect();
    let mut top5 = Vec::with_capacity(n);
    for (i, row) in matrix.iter().enumerate() {
        let mut scored: Vec<(String, Percentage)> = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(j, score)| (labels[j].clone(), *score))
            .collect();
        scored.sort_by(|(la, pa), (lb, pb)| pb.cmp(pa).then_with(|| la.cmp(lb)));
        scored.truncate(5);
        top5.push(scored);
    }

    let discriminative =
        if n >= 2 { discriminative_indices(&fps)? } else { BTreeSet::new() };
    Ok(SimilarityReport {
        kind,
        labels,
        probe_count: fps[0].lines.len(),
        matrix,
        top5,
        discriminative,
    })
}

/// Probe indices at which at least two of the fingerprints disagree.
/// Record agreement is an equivalence (it is feature-vector equality), so
/// comparing everything against the first fingerprint is enough.
pub fn discriminative_indices(fps: &[Fingerprint]) -> Result<BTreeSet<usize>, MatchError> {
    if fps.len() < 2 {
        return Err(MatchError::InsufficientData { need: 2, found: fps.len() });
    }
    for fp in &fps[1..] {
        ensure_comparable(&fps[0], fp)?;
    }
    let mut indices = BTreeSet::new();
    let reference = &fps[0];
    for n in 0..reference.lines.len() {
        let first = features(&reference.lines[n]);
        if fps[1..].iter().any(|fp| features(&fp.lines[n]) != first) {
            indices.insert(n);
        }
    }
    Ok(indices)
}

/// Emits the production-mode corpus: only the probes that discriminate
/// between the given fingerprints, in their original order, stamped with
/// its own checksum and the parent corpus it was reduced from.
pub fn reduce_corpus(corpus: &FuzzCorpus, indices: &BTreeSet<usize>) -> FuzzCorpus {
    let lines: Vec<String> = indices
        .iter()
        .filter_map(|&n| corpus.lines.get(n).cloned())
        .collect();
    FuzzCorpus {
        kind: corpus.kind,
        checksum: content_checksum(&lines),
        parent: Some(corpus.checksum.clone()),
        lines,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::decode_apd;

    fn ftp_fp(label: &str, codes: &[Option<u16>]) -> Fingerprint {
        Fingerprint {
            label: label.to_string(),
            kind: CorpusKind::Ftp,
            corpus_checksum: "feedfacefeedface".to_string(),
            lines: codes
                .iter()
                .map(|c| c.map(Record::Ftp).unwrap_or(Record::Blank))
                .collect(),
        }
    }

    fn os_record(line: &str) -> Record {
        Record::Os(decode_apd(line).unwrap())
    }

    #[test]
    fn ack_relation_table() {
        assert_eq!(ack_relation(12345, 0), AckRelation::Zero);
        assert_eq!(ack_relation(12345, 12345), AckRelation::Seq);
        assert_eq!(ack_relation(12345, 12346), AckRelation::SeqPlusOne);
        assert_eq!(ack_relation(12345, 99), AckRelation::Other);
    }

    #[test]
    fn ack_relation_tie_breaks_and_wraparound() {
        // seq = 0: zero wins over the equally-true "equals seq".
        assert_eq!(ack_relation(0, 0), AckRelation::Zero);
        // seq = 2^32 - 1: seq + 1 wraps to 0, but zero is checked first.
        assert_eq!(ack_relation(u32::MAX, 0), AckRelation::Zero);
        // Ordinary wraparound is still classified as seq + 1.
        assert_eq!(ack_relation(u32::MAX - 1, u32::MAX), AckRelation::SeqPlusOne);
    }

    #[test]
    fn identical_records_agree_fully() {
        let r = os_record("ip{tos=0,flags=2}+tcp{flags=18,window=5792,ackrel=2}");
        assert_eq!(match_response(&r, &r, CorpusKind::Os), Fraction::from_integer(1));
        assert_eq!(
            match_response(&Record::Blank, &Record::Blank, CorpusKind::Os),
            Fraction::from_integer(1)
        );
    }

    #[test]
    fn os_records_differing_only_in_window_agree_six_of_seven() {
        // Hand count over the fixed feature list: responded, flags,
        // ack relation, options, DF and TOS agree; the window differs.
        let a = os_record("ip{tos=0,flags=2}+tcp{flags=18,window=5792,ackrel=2,options=M:1460}");
        let b = os_record("ip{tos=0,flags=2}+tcp{flags=18,window=8192,ackrel=2,options=M:1460}");
        assert_eq!(match_response(&a, &b, CorpusKind::Os), Fraction::new(6, 7));
    }

    #[test]
    fn option_order_is_one_whole_feature() {
        let a = os_record("tcp{flags=18,window=1,options=M:1460;N;W:3;N;T:1;N}");
        let b = os_record("tcp{flags=18,window=1,options=T:1;N;W:3;N;M:1460;N}");
        assert_eq!(match_response(&a, &b, CorpusKind::Os), Fraction::new(6, 7));
    }

    #[test]
    fn one_sided_blank_is_zero() {
        let r = os_record("tcp{flags=18,window=5792}");
        assert_eq!(match_response(&r, &Record::Blank, CorpusKind::Os), Fraction::from_integer(0));
        assert_eq!(
            match_response(&Record::Blank, &Record::Ftp(500), CorpusKind::Ftp),
            Fraction::from_integer(0)
        );
    }

    #[test]
    fn ftp_codes_match_whole_or_not_at_all() {
        assert_eq!(
            match_response(&Record::Ftp(500), &Record::Ftp(500), CorpusKind::Ftp),
            Fraction::from_integer(1)
        );
        assert_eq!(
            match_response(&Record::Ftp(500), &Record::Ftp(501), CorpusKind::Ftp),
            Fraction::from_integer(0)
        );
    }

    #[test]
    fn self_match_is_exactly_100() {
        let fp = ftp_fp("self", &[Some(230), None, Some(500), Some(200)]);
        let score = match_file(&fp, &fp).unwrap();
        assert!(score.is_exactly_100());
        assert_eq!(score.to_string(), "100.00");
    }

    #[test]
    fn eleven_of_five_hundred_disagreements_print_97_80() {
        let a = ftp_fp("a", &vec![Some(200); 500]);
        let mut codes = vec![Some(200); 500];
        for slot in codes.iter_mut().take(11) {
            *slot = Some(553);
        }
        let b = ftp_fp("b", &codes);
        let score = match_file(&a, &b).unwrap();
        assert_eq!(score.as_ratio(), Fraction::new(489 * 100, 500));
        assert_eq!(score.to_string(), "97.80");
    }

    #[test]
    fn fully_different_fingerprints_score_zero() {
        let a = ftp_fp("a", &[Some(200), Some(200)]);
        let b = ftp_fp("b", &[Some(500), None]);
        assert_eq!(match_file(&a, &b).unwrap().to_string(), "0.00");
    }

    #[test]
    fn match_file_is_symmetric() {
        let a = ftp_fp("a", &[Some(200), Some(331), None, Some(500)]);
        let b = ftp_fp("b", &[Some(200), Some(500), None, Some(510)]);
        assert_eq!(
            match_file(&a, &b).unwrap().as_ratio(),
            match_file(&b, &a).unwrap().as_ratio()
        );
    }

    #[test]
    fn checksum_mismatch_is_refused() {
        let a = ftp_fp("a", &[Some(200)]);
        let mut b = ftp_fp("b", &[Some(200)]);
        b.corpus_checksum = "0000000000000000".to_string();
        assert!(matches!(match_file(&a, &b), Err(MatchError::IncompatibleCorpus(_))));
    }

    #[test]
    fn monotonicity_one_flip_costs_exactly_100_over_n() {
        let n = 500u64;
        let a = ftp_fp("a", &vec![Some(200); n as usize]);
        let mut codes = vec![Some(200); n as usize];
        codes[7] = Some(553);
        let b = ftp_fp("b", &codes);
        let before = match_file(&a, &a).unwrap().as_ratio();
        let after = match_file(&a, &b).unwrap().as_ratio();
        assert_eq!(before - after, Fraction::new(100, n));
    }

    #[test]
    fn rounding_is_half_up() {
        let cases = [
            (Fraction::new(1, 1), "100.00"),
            (Fraction::new(97805, 100000), "97.81"),
            (Fraction::new(97804, 100000), "97.80"),
            (Fraction::new(1, 3), "33.33"),
            (Fraction::new(2, 3), "66.67"),
            (Fraction::new(0, 1), "0.00"),
        ];
        for (fraction, expected) in cases {
            assert_eq!(Percentage::from_fraction(fraction).to_string(), expected, "{fraction}");
        }
    }

    fn temp_collection(fps: &[Fingerprint]) -> (tempfile::TempDir, Collection) {
        let dir = tempfile::tempdir().unwrap();
        let mut collection = Collection::open(dir.path()).unwrap();
        for fp in fps {
            collection.save(fp).unwrap();
        }
        (dir, collection)
    }

    #[test]
    fn rank_orders_by_score_then_label() {
        let query = ftp_fp("query", &[Some(200), Some(200), Some(200), Some(200)]);
        let (_dir, collection) = temp_collection(&[
            ftp_fp("half-b", &[Some(200), Some(200), Some(500), Some(500)]),
            ftp_fp("half-a", &[Some(200), Some(200), Some(501), Some(501)]),
            ftp_fp("exact", &[Some(200), Some(200), Some(200), Some(200)]),
            ftp_fp("worst", &[Some(200), None, None, None]),
        ]);
        let ranked = rank(&collection, &query).unwrap();
        let labels: Vec<&str> = ranked.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, vec!["exact", "half-a", "half-b", "worst"]);
        assert!(ranked[0].1.is_exactly_100());
        // Equal scores tie-break lexicographically.
        assert_eq!(ranked[1].1.as_ratio(), ranked[2].1.as_ratio());
    }

    #[test]
    fn rank_returns_at_most_five_and_skips_incompatible() {
        let query = ftp_fp("query", &[Some(200)]);
        let mut stored: Vec<Fingerprint> =
            (0..7).map(|i| ftp_fp(&format!("fp-{i}"), &[Some(200)])).collect();
        stored[6].corpus_checksum = "1111111111111111".to_string();
        let (_dir, collection) = temp_collection(&stored);
        let ranked = rank(&collection, &query).unwrap();
        assert_eq!(ranked.len(), 5);
        assert!(ranked.iter().all(|(l, _)| l != "fp-6"));
    }

    #[test]
    fn rank_with_empty_compatible_set_is_empty() {
        let query = ftp_fp("query", &[Some(200)]);
        let (_dir, collection) = temp_collection(&[]);
        assert!(rank(&collection, &query).unwrap().is_empty());
    }

    #[test]
    fn single_fingerprint_matrix_is_one_by_one_hundred() {
        let (_dir, collection) = temp_collection(&[ftp_fp("only", &[Some(200)])]);
        let report = similarity_matrix(&collection, CorpusKind::Ftp).unwrap();
        assert_eq!(report.labels, vec!["only"]);
        assert_eq!(report.matrix.len(), 1);
        assert!(report.matrix[0][0].is_exactly_100());
        assert!(report.discriminative.is_empty());
    }

    #[test]
    fn matrix_rejects_mixed_corpus_stamps() {
        let mut odd = ftp_fp("odd", &[Some(200)]);
        odd.corpus_checksum = "2222222222222222".to_string();
        let (_dir, collection) = temp_collection(&[ftp_fp("even", &[Some(200)]), odd]);
        assert!(matches!(
            similarity_matrix(&collection, CorpusKind::Ftp),
            Err(MatchError::IncompatibleCorpus(_))
        ));
    }

    #[test]
    fn discriminative_indices_match_a_brute_force_pair_scan() {
        let fps = vec![
            ftp_fp("a", &[Some(200), Some(331), Some(500), None, Some(200), Some(200)]),
            ftp_fp("b", &[Some(200), Some(331), Some(501), None, Some(200), Some(200)]),
            ftp_fp("c", &[Some(200), Some(331), Some(500), Some(226), Some(200), Some(202)]),
        ];
        let got = discriminative_indices(&fps).unwrap();

        // Brute force: every unordered pair, every probe.
        let mut oracle = BTreeSet::new();
        for i in 0..fps.len() {
            for j in (i + 1)..fps.len() {
                for n in 0..fps[i].lines.len() {
                    let m =
                        match_response(&fps[i].lines[n], &fps[j].lines[n], CorpusKind::Ftp);
                    if m < Fraction::from_integer(1) {
                        oracle.insert(n);
                    }
                }
            }
        }
        assert_eq!(got, oracle);
        assert_eq!(got, BTreeSet::from([2, 3, 5]));
    }

    #[test]
    fn identical_fingerprints_have_no_discriminative_probes() {
        let fps =
            vec![ftp_fp("a", &[Some(200), None]), ftp_fp("b", &[Some(200), None])];
        assert!(discriminative_indices(&fps).unwrap().is_empty());
    }

    #[test]
    fn single_fingerprint_is_insufficient_for_extraction() {
        let fps = vec![ftp_fp("a", &[Some(200)])];
        assert!(matches!(
            discriminative_indices(&fps),
            Err(MatchError::InsufficientData { need: 2, found: 1 })
        ));
    }

    #[test]
    fn reduced_corpus_keeps_order_and_records_lineage() {
        let corpus = FuzzCorpus::from_lines(
            CorpusKind::Ftp,
            (0..6).map(|i| format!("NOOP {i}")).collect(),
        );
        let indices = BTreeSet::from([1, 4]);
        let reduced = reduce_corpus(&corpus, &indices);
        assert_eq!(reduced.lines, vec!["NOOP 1".to_string(), "NOOP 4".to_string()]);
        assert_eq!(reduced.parent.as_deref(), Some(corpus.checksum.as_str()));
        assert_ne!(reduced.checksum, corpus.checksum);
        // The reduced file round-trips through the corpus format.
        let reparsed = FuzzCorpus::parse(&reduced.render()).unwrap();
        assert_eq!(reparsed, reduced);
    }

    #[test]
    fn dropping_non_discriminative_probes_preserves_pairwise_order() {
        // Probes where everyone agrees shift every pair score by the same
        // per-probe contribution, so removing them cannot reorder any
        // ranking.
        let fps = vec![
            ftp_fp("a", &[Some(200), Some(331), Some(500), Some(200), None]),
            ftp_fp("b", &[Some(200), Some(331), Some(501), Some(200), None]),
            ftp_fp("c", &[Some(200), Some(400), Some(502), Some(200), None]),
            ftp_fp("d", &[Some(200), Some(331), Some(500), Some(200), Some(530)]),
        ];
        let discriminative = discriminative_indices(&fps).unwrap();
        let keep: Vec<usize> =
            (0..fps[0].lines.len()).filter(|n| discriminative.contains(n)).collect();
        assert!(keep.len() < fps[0].lines.len(), "some probe must be agreeing");

        let reduced: Vec<Fingerprint> = fps
            .iter()
            .map(|fp| Fingerprint {
                label: fp.label.clone(),
                kind: fp.kind,
                corpus_checksum: "0123456789abcdef".to_string(),
                lines: keep.iter().map(|&n| fp.lines[n].clone()).collect(),
            })
            .collect();

        for i in 0..fps.len() {
            let order = |set: &[Fingerprint]| -> Vec<String> {
                let mut scored: Vec<(String, Fraction)> = (0..set.len())
                    .filter(|&j| j != i)
                    .map(|j| {
                        (set[j].label.clone(), match_file(&set[i], &set[j]).unwrap().as_ratio())
                    })
                    .collect();
                scored.sort_by(|(la, pa), (lb, pb)| pb.cmp(pa).then_with(|| la.cmp(lb)));
                scored.into_iter().map(|(l, _)| l).collect()
            };
            assert_eq!(order(&fps), order(&reduced), "query {}", fps[i].label);
        }
    }

    #[test]
    fn csv_output_is_deterministic_and_escaped() {
        let (_dir, collection) = temp_collection(&[
            ftp_fp("plain", &[Some(200)]),
            ftp_fp("with, comma", &[Some(500)]),
        ]);
        let report = similarity_matrix(&collection, CorpusKind::Ftp).unwrap();
        let csv = report.render_csv();
        assert!(csv.contains("\"with, comma\""));
        assert_eq!(csv, report.render_csv());
        assert_eq!(csv.lines().count(), 4);
    }
}
