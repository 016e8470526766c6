//! Command-line frontend. One subcommand per pipeline phase: corpus
//! generation, port scan, fingerprinting, matching, the similarity matrix,
//! discriminative-probe extraction and the simulated-target server.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error (abort,
//! unreachable target, incompatible corpus and friends).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{CorpusKind, FuzzCorpus};
use crate::fuzz_ftp::{build_corpus, CommandCorpusSpec, MutationParams};
use crate::fuzz_os::{
    generate_corpus, FieldSelection, OptionTemplateSet, DEFAULT_CARDINALITY_CAP,
};
use crate::matcher::{
    discriminative_indices, match_file, rank, reduce_corpus, similarity_matrix, Percentage,
};
use crate::sim::{load_personality, serve_ftp, Personality};
use crate::store::{self, Collection, Fingerprint};
use crate::transport::{
    fingerprint_os, ftp_session, InProcessFtpChannel, PacketBackend, SimulatedStackBackend,
    TargetAddress, TcpFtpChannel, TransportConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Os,
    Ftp,
}

impl From<KindArg> for CorpusKind {
    fn from(kind: KindArg) -> Self {
        match kind {
            KindArg::Os => CorpusKind::Os,
            KindArg::Ftp => CorpusKind::Ftp,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fuzzprint",
    version,
    about = "OS and FTP server fingerprinting through fuzz-generated probes",
    max_term_width = 100
)]
struct Cli {
    /// Collection root. Beats the FUZZPRINT_COLLECTION environment
    /// variable and the config file.
    #[arg(long, global = true)]
    collection: Option<PathBuf>,
    /// Config file with `key = value` lines (collection, timeout_ms,
    /// format). Default: ./fuzzprint.conf when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Per-reply timeout in milliseconds.
    #[arg(long, global = true)]
    timeout_ms: Option<u64>,
    /// Output format for reports.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SimArg {
    /// Run against a simulated target loaded from this personality file
    /// instead of a live host.
    #[arg(long, value_name = "FILE")]
    sim: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the OS probe corpus (stepped TCP field sweeps crossed
    /// with option templates).
    GenOs {
        /// Step for the tcp.flags sweep.
        #[arg(long, default_value_t = 1)]
        flags_step: u64,
        /// Step for the tcp.window sweep.
        #[arg(long, default_value_t = 4096)]
        window_step: u64,
        /// Step for the tcp.urgent sweep.
        #[arg(long, default_value_t = 16384)]
        urgent_step: u64,
        /// Refuse to generate more than this many probe lines.
        #[arg(long, default_value_t = DEFAULT_CARDINALITY_CAP)]
        cap: u128,
        #[arg(short, long, default_value = "corpus.os")]
        out: PathBuf,
    },
    /// Generate the FTP probe corpus (argument-length sweep plus seeded
    /// mutations).
    GenFtp {
        /// Largest argument length in the sweep.
        #[arg(long, default_value_t = 64)]
        max_len: usize,
        /// Mutation chains per base probe.
        #[arg(long, default_value_t = 4)]
        instances: usize,
        /// Mutation steps per chain.
        #[arg(long, default_value_t = 8)]
        mutations: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated command list; defaults to the built-in
        /// control-connection set.
        #[arg(long)]
        commands: Option<String>,
        #[arg(short, long, default_value = "corpus.ftp")]
        out: PathBuf,
    },
    /// Half-open scan for the lowest open TCP port.
    Scan {
        host: Option<String>,
        #[command(flatten)]
        sim: SimArg,
        /// Scan ports 0..N.
        #[arg(long, default_value_t = 1024)]
        ports: u16,
        /// Local source address (live mode).
        #[arg(long)]
        source: Option<String>,
    },
    /// Fingerprint a TCP/IP stack. With --label the result is stored;
    /// without it the five closest stored fingerprints are printed.
    FpOs {
        host: Option<String>,
        #[command(flatten)]
        sim: SimArg,
        #[arg(long, default_value = "corpus.os")]
        corpus: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 1024)]
        ports: u16,
        /// Local source address (live mode).
        #[arg(long)]
        source: Option<String>,
    },
    /// Fingerprint an FTP server over its control connection.
    FpFtp {
        host: Option<String>,
        #[arg(short, long)]
        port: Option<u16>,
        #[command(flatten)]
        sim: SimArg,
        #[arg(long, default_value = "corpus.ftp")]
        corpus: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Percentage agreement of two fingerprint files.
    Match { a: PathBuf, b: PathBuf },
    /// Pairwise similarity matrix over the stored fingerprints.
    Matrix {
        /// os or ftp; may be omitted when the collection holds only one
        /// kind.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Extract the probes that discriminate between the stored
    /// fingerprints into a reduced corpus.
    Extract {
        /// The corpus the fingerprints were taken with.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Serve an FTP personality on a localhost socket.
    Sim {
        personality: PathBuf,
        #[arg(short, long, default_value_t = 0)]
        port: u16,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::runtime(e)
            }
        })*
    };
}

runtime_from!(
    crate::corpus::CorpusError,
    crate::fuzz_os::FuzzGenError,
    crate::fuzz_ftp::FtpGenError,
    crate::matcher::MatchError,
    crate::sim::PersonalityError,
    crate::store::StoreError,
    crate::transport::TransportError,
    std::io::Error
);

/// Effective settings after merging flags > config file > environment >
/// built-in defaults.
struct Settings {
    collection: PathBuf,
    timeout: Duration,
    format: OutputFormat,
}

fn parse_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Runtime(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                idx + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn resolve_settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut collection = PathBuf::from("collection");
    let mut timeout_ms = 500u64;
    let mut format = OutputFormat::Table;

    if let Ok(root) = std::env::var("FUZZPRINT_COLLECTION") {
        if !root.is_empty() {
            collection = PathBuf::from(root);
        }
    }

    let config_path = cli
        .config
        .clone()
        .or_else(|| Path::new("fuzzprint.conf").exists().then(|| PathBuf::from("fuzzprint.conf")));
    if let Some(path) = config_path {
        for (key, value) in parse_config(&path)? {
            match key.as_str() {
                "collection" => collection = PathBuf::from(value),
                "timeout_ms" => {
                    timeout_ms = value.parse().map_err(|_| {
                        CliError::Runtime(format!("config: invalid timeout_ms {value:?}"))
                    })?
                }
                "format" => {
                    format = match value.as_str() {
                        "table" => OutputFormat::Table,
                        "csv" => OutputFormat::Csv,
                        other => {
                            return Err(CliError::Runtime(format!(
                                "config: unknown format {other:?}"
                            )))
                        }
                    }
                }
                other => {
                    return Err(CliError::Runtime(format!("config: unknown key {other:?}")))
                }
            }
        }
    }

    if let Some(path) = &cli.collection {
        collection = path.clone();
    }
    if let Some(ms) = cli.timeout_ms {
        timeout_ms = ms;
    }
    if let Some(f) = cli.format {
        format = f;
    }
    Ok(Settings {
        collection,
        timeout: Duration::from_millis(timeout_ms),
        format,
    })
}

fn transport_config(settings: &Settings) -> TransportConfig {
    TransportConfig { timeout: settings.timeout, ..Default::default() }
}

fn load_tcp_personality(path: &Path) -> Result<crate::sim::StackPersonality, CliError> {
    match load_personality(path)? {
        Personality::Tcp(p) => Ok(p),
        Personality::Ftp(_) => Err(CliError::Usage(format!(
            "{} is an ftp personality; this subcommand needs a tcp one",
            path.display()
        ))),
    }
}

fn load_ftp_personality(path: &Path) -> Result<crate::sim::FtpPersonality, CliError> {
    match load_personality(path)? {
        Personality::Ftp(p) => Ok(p),
        Personality::Tcp(_) => Err(CliError::Usage(format!(
            "{} is a tcp personality; this subcommand needs an ftp one",
            path.display()
        ))),
    }
}

fn os_backend(
    sim: &Option<PathBuf>,
    host: &Option<String>,
    source: &Option<String>,
    settings: &Settings,
) -> Result<Box<dyn PacketBackend>, CliError> {
    if let Some(path) = sim {
        return Ok(Box::new(SimulatedStackBackend::new(load_tcp_personality(path)?)));
    }
    let Some(host) = host else {
        return Err(CliError::Usage("provide a host or --sim <personality-file>".to_string()));
    };
    live_backend(host, source, settings)
}

#[cfg(feature = "live")]
fn live_backend(
    host: &str,
    source: &Option<String>,
    settings: &Settings,
) -> Result<Box<dyn PacketBackend>, CliError> {
    let target = TargetAddress::new(host, None).resolve_ipv4()?;
    let source = source
        .as_ref()
        .ok_or_else(|| {
            CliError::Usage("live probing needs --source <local-ipv4-address>".to_string())
        })?
        .parse()
        .map_err(|_| CliError::Usage("--source must be an IPv4 address".to_string()))?;
    let backend = crate::live::RawSocketBackend::new(source, target, settings.timeout)
        .map_err(|e| CliError::Runtime(format!("raw socket unavailable ({e}); root privileges are required")))?;
    Ok(Box::new(backend))
}

#[cfg(not(feature = "live"))]
fn live_backend(
    _host: &str,
    _source: &Option<String>,
    _settings: &Settings,
) -> Result<Box<dyn PacketBackend>, CliError> {
    Err(CliError::Runtime(
        "live OS probing requires this binary to be built with the `live` feature \
         (and raw-socket privileges at runtime); use --sim <personality-file> otherwise"
            .to_string(),
    ))
}

fn print_ranking(ranked: &[(String, Percentage)], format: OutputFormat) {
    if ranked.is_empty() {
        println!("no compatible fingerprints in the collection");
        return;
    }
    match format {
        OutputFormat::Csv => {
            for (rank, (label, score)) in ranked.iter().enumerate() {
                println!("{},{label},{score}", rank + 1);
            }
        }
        OutputFormat::Table => {
            let width = ranked.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
            println!("{:>4}  {:width$}  {:>7}", "rank", "label", "match");
            for (rank, (label, score)) in ranked.iter().enumerate() {
                println!("{:>4}  {label:width$}  {score:>7}", rank + 1);
            }
        }
    }
}

/// Stores the fingerprint under `label`, or prints the top-5 ranking when
/// no label was given.
fn store_or_rank(
    fingerprint: Fingerprint,
    label: &Option<String>,
    settings: &Settings,
) -> Result<(), CliError> {
    let mut collection = Collection::open(&settings.collection)?;
    match label {
        Some(_) => {
            let path = collection.save(&fingerprint)?;
            println!(
                "stored {} fingerprint {:?} ({} probes, {} unanswered) at {}",
                fingerprint.kind,
                fingerprint.label,
                fingerprint.lines.len(),
                fingerprint.blank_count(),
                path.display()
            );
        }
        None => {
            let ranked = rank(&collection, &fingerprint)?;
            print_ranking(&ranked, settings.format);
        }
    }
    Ok(())
}

fn infer_matrix_kind(collection: &Collection) -> Result<CorpusKind, CliError> {
    let has_os = !collection.labels(CorpusKind::Os).is_empty();
    let has_ftp = !collection.labels(CorpusKind::Ftp).is_empty();
    match (has_os, has_ftp) {
        (true, false) => Ok(CorpusKind::Os),
        (false, true) => Ok(CorpusKind::Ftp),
        (true, true) => Err(CliError::Usage(
            "the collection holds both kinds; pick one with --kind os|ftp".to_string(),
        )),
        (false, false) => Err(CliError::Runtime("the collection is empty".to_string())),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = resolve_settings(cli)?;
    match &cli.command {
        Command::GenOs { flags_step, window_step, urgent_step, cap, out } => {
            let selection = FieldSelection::new(vec![
                ("flags", *flags_step),
                ("window", *window_step),
                ("urgent", *urgent_step),
            ])?;
            let corpus = generate_corpus(&selection, &OptionTemplateSet::default_templates(), *cap)?;
            corpus.write_to(out)?;
            println!("wrote {} probes (checksum {}) to {}", corpus.len(), corpus.checksum, out.display());
        }
        Command::GenFtp { max_len, instances, mutations, seed, commands, out } => {
            let spec = match commands {
                None => CommandCorpusSpec::default_commands(),
                Some(list) => CommandCorpusSpec::new(
                    list.split(',').map(|c| c.trim().to_string()).collect(),
                )?,
            };
            let params = MutationParams::new(*max_len, *instances, *mutations, *seed)?;
            let corpus = build_corpus(&spec, &params);
            corpus.write_to(out)?;
            println!("wrote {} probes (checksum {}) to {}", corpus.len(), corpus.checksum, out.display());
        }
        Command::Scan { host, sim, ports, source } => {
            let mut backend = os_backend(&sim.sim, host, source, &settings)?;
            let cfg = transport_config(&settings);
            match crate::transport::find_open_tcp_port(backend.as_mut(), *ports, &cfg)? {
                Some(port) => println!("open port: {port}"),
                None => println!("no open port among the first {ports} ports"),
            }
        }
        Command::FpOs { host, sim, corpus, label, ports, source } => {
            if sim.sim.is_none() && host.is_none() {
                return Err(CliError::Usage(
                    "provide a host or --sim <personality-file>".to_string(),
                ));
            }
            let corpus = FuzzCorpus::load(corpus)?;
            let mut backend = os_backend(&sim.sim, host, source, &settings)?;
            let cfg = transport_config(&settings);
            let name = label
                .clone()
                .or_else(|| host.clone())
                .unwrap_or_else(|| "query".to_string());
            let (port, fingerprint) =
                fingerprint_os(&corpus, &name, *ports, &cfg, backend.as_mut())?;
            eprintln!("fingerprinted via open port {port}");
            store_or_rank(fingerprint, label, &settings)?;
        }
        Command::FpFtp { host, port, sim, corpus, label } => {
            if sim.sim.is_none() && host.is_none() {
                return Err(CliError::Usage(
                    "provide a host or --sim <personality-file>".to_string(),
                ));
            }
            let corpus = FuzzCorpus::load(corpus)?;
            let name = label
                .clone()
                .or_else(|| host.clone())
                .unwrap_or_else(|| "query".to_string());
            let fingerprint = match (&sim.sim, host) {
                (Some(path), _) => {
                    let mut channel = InProcessFtpChannel::new(load_ftp_personality(path)?);
                    ftp_session(&corpus, &name, &mut channel)?
                }
                (None, Some(host)) => {
                    let target = TargetAddress::new(host.clone(), *port);
                    let mut channel = TcpFtpChannel::new(target, &transport_config(&settings));
                    ftp_session(&corpus, &name, &mut channel)?
                }
                (None, None) => {
                    return Err(CliError::Usage(
                        "provide a host or --sim <personality-file>".to_string(),
                    ))
                }
            };
            store_or_rank(fingerprint, label, &settings)?;
        }
        Command::Match { a, b } => {
            let fp_a = store::load_file(a)?;
            let fp_b = store::load_file(b)?;
            let score = match_file(&fp_a, &fp_b)?;
            println!("{score}");
        }
        Command::Matrix { kind } => {
            let collection = Collection::open(&settings.collection)?;
            let kind = match kind {
                Some(k) => CorpusKind::from(*k),
                None => infer_matrix_kind(&collection)?,
            };
            let report = similarity_matrix(&collection, kind)?;
            match settings.format {
                OutputFormat::Csv => print!("{}", report.render_csv()),
                OutputFormat::Table => {
                    print!("{}", report.render_table());
                    if report.labels.len() >= 2 {
                        println!(
                            "discriminative probes: {} of {}",
                            report.discriminative.len(),
                            report.probe_count
                        );
                    }
                }
            }
        }
        Command::Extract { corpus, out } => {
            let corpus = FuzzCorpus::load(corpus)?;
            let collection = Collection::open(&settings.collection)?;
            let fps = collection.load_all(corpus.kind)?;
            if let Some(fp) = fps.iter().find(|fp| fp.corpus_checksum != corpus.checksum) {
                return Err(CliError::Runtime(format!(
                    "fingerprint {:?} was taken with corpus {}, not {}",
                    fp.label, fp.corpus_checksum, corpus.checksum
                )));
            }
            let indices: BTreeSet<usize> = discriminative_indices(&fps)?;
            let reduced = reduce_corpus(&corpus, &indices);
            let default_out = PathBuf::from(format!("reduced.{}", corpus.kind));
            let out = out.clone().unwrap_or(default_out);
            reduced.write_to(&out)?;
            println!(
                "{} of {} probes discriminate; wrote {} (checksum {}, parent {})",
                indices.len(),
                corpus.len(),
                out.display(),
                reduced.checksum,
                corpus.checksum
            );
        }
        Command::Sim { personality, port } => {
            let loaded = load_personality(personality)?;
            match loaded {
                Personality::Ftp(p) => {
                    let name = p.name.clone();
                    let handle = serve_ftp(p, *port)?;
                    println!("serving ftp personality {name} on {}", handle.addr());
                    loop {
                        std::thread::sleep(Duration::from_secs(3600));
                    }
                }
                Personality::Tcp(_) => {
                    return Err(CliError::Runtime(
                        "tcp personalities are served in-process only; point fp-os or scan at \
                         the file with --sim"
                            .to_string(),
                    ))
                }
            }
        }
    }
    Ok(())
}

/// Parses `argv` and runs one subcommand. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version output are not errors.
            if e.use_stderr() {
                let _ = e.print();
                return 1;
            }
            let _ = e.print();
            return 0;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("usage error: {message}");
            1
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            2
        }
    }
}
