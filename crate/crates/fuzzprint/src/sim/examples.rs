//! Personalities shipped with the toolkit, embedded so library users and
//! tests can load them without caring about file locations. The same files
//! live under `personalities/` for use with the CLI.

use std::sync::OnceLock;

use crate::sim::{parse_personality, FtpPersonality, Personality, StackPersonality};

pub const TCP_SOURCES: &[(&str, &str)] = &[
    ("aurora", include_str!("../../personalities/aurora.tcp")),
    ("basalt", include_str!("../../personalities/basalt.tcp")),
    ("cirrus", include_str!("../../personalities/cirrus.tcp")),
    ("dune", include_str!("../../personalities/dune.tcp")),
    ("ember", include_str!("../../personalities/ember.tcp")),
];

pub const FTP_SOURCES: &[(&str, &str)] = &[
    ("fjord", include_str!("../../personalities/fjord.ftp")),
    ("garnet", include_str!("../../personalities/garnet.ftp")),
    ("harbor", include_str!("../../personalities/harbor.ftp")),
    ("ivory", include_str!("../../personalities/ivory.ftp")),
    ("juniper", include_str!("../../personalities/juniper.ftp")),
    ("kelp", include_str!("../../personalities/kelp.ftp")),
];

/// Fixtures beyond the regular set: the successor release of kelp and a
/// server that refuses anonymous logins.
pub const EXTRA_FTP_SOURCES: &[(&str, &str)] = &[
    ("kelp-next", include_str!("../../personalities/kelp-next.ftp")),
    ("locked", include_str!("../../personalities/locked.ftp")),
];

pub const ALL_SOURCES: &[(&str, &str)] = &[
    TCP_SOURCES[0],
    TCP_SOURCES[1],
    TCP_SOURCES[2],
    TCP_SOURCES[3],
    TCP_SOURCES[4],
    FTP_SOURCES[0],
    FTP_SOURCES[1],
    FTP_SOURCES[2],
    FTP_SOURCES[3],
    FTP_SOURCES[4],
    FTP_SOURCES[5],
    EXTRA_FTP_SOURCES[0],
    EXTRA_FTP_SOURCES[1],
];

fn parse_all<T>(
    sources: &'static [(&str, &str)],
    pick: fn(Personality) -> Option<T>,
) -> Vec<T> {
    sources
        .iter()
        .map(|(name, text)| {
            pick(parse_personality(text).unwrap_or_else(|e| panic!("personality {name}: {e}")))
                .unwrap_or_else(|| panic!("personality {name} has the wrong kind"))
        })
        .collect()
}

/// The five shipped TCP stack personalities.
pub fn shipped_tcp() -> &'static [StackPersonality] {
    static CACHE: OnceLock<Vec<StackPersonality>> = OnceLock::new();
    CACHE.get_or_init(|| {
        parse_all(TCP_SOURCES, |p| match p {
            Personality::Tcp(t) => Some(t),
            Personality::Ftp(_) => None,
        })
    })
}

/// The six shipped FTP personalities.
pub fn shipped_ftp() -> &'static [FtpPersonality] {
    static CACHE: OnceLock<Vec<FtpPersonality>> = OnceLock::new();
    CACHE.get_or_init(|| {
        parse_all(FTP_SOURCES, |p| match p {
            Personality::Ftp(f) => Some(f),
            Personality::Tcp(_) => None,
        })
    })
}

pub fn extra_ftp(name: &str) -> FtpPersonality {
    let (_, text) = EXTRA_FTP_SOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("no extra personality named {name}"));
    match parse_personality(text) {
        Ok(Personality::Ftp(f)) => f,
        other => panic!("personality {name}: unexpected parse result {other:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_sets_have_the_documented_cardinality() {
        assert_eq!(shipped_tcp().len(), 5);
        assert_eq!(shipped_ftp().len(), 6);
    }

    #[test]
    fn shipped_ftp_personalities_accept_anonymous_logins() {
        for p in shipped_ftp() {
            assert!(p.allow_anonymous, "{} must accept anonymous logins", p.name);
        }
        assert!(!extra_ftp("locked").allow_anonymous);
    }

    #[test]
    fn kelp_releases_differ_only_in_eleven_overlong_cells() {
        let kelp = shipped_ftp().iter().find(|p| p.name == "kelp").unwrap();
        let next = extra_ftp("kelp-next");
        assert_eq!(kelp.overlong_threshold, next.overlong_threshold);
        assert_eq!(kelp.default_code, next.default_code);
        assert_eq!(kelp.overlong_code, next.overlong_code);

        let kelp_normal: Vec<_> = kelp
            .replies
            .iter()
            .filter(|((_, class), _)| *class == crate::sim::LengthClass::Normal)
            .collect();
        let next_normal: Vec<_> = next
            .replies
            .iter()
            .filter(|((_, class), _)| *class == crate::sim::LengthClass::Normal)
            .collect();
        assert_eq!(kelp_normal, next_normal);

        let extra_overlong = next.replies.len() - kelp.replies.len();
        assert_eq!(extra_overlong, 11);
    }
}
