//! Fingerprinting of operating systems and FTP server implementations
//! through systematically fuzz-generated probe corpora.
//!
//! The pipeline has five stages: corpus generation ([`fuzz_os`], [`fuzz_ftp`]),
//! probe delivery and response capture ([`transport`]), fingerprint storage
//! ([`store`]), percentage-agreement matching ([`matcher`]), and deterministic
//! simulated targets ([`sim`]) that stand in for real hosts so the whole
//! pipeline can be exercised in-process.

pub mod cli;
pub mod corpus;
pub mod fuzz_ftp;
pub mod fuzz_os;
pub mod matcher;
pub mod packet;
pub mod rng;
pub mod sim;
pub mod store;
pub mod transport;

#[cfg(feature = "live")]
pub mod live;

pub use corpus::{CorpusKind, FuzzCorpus};
pub use matcher::{AckRelation, Percentage, SimilarityReport};
pub use packet::{FieldValue, PacketDescription, TcpOption};
pub use store::{Collection, Fingerprint, Record};
pub use transport::{PacketBackend, TargetAddress, TransportConfig};
