//! Tor relay ingestion: consensus or JSON-lines relay documents, IP-to-ASN
//! mapping with longest-prefix match, bandwidth normalization, and client AS
//! target sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD_NO_PAD;
use base64::Engine as _;
use serde::Deserialize;
use thiserror::Error;

use crate::net::Ipv4Prefix;
use crate::Asn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RelayError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// One Tor relay from the consensus. `asn` is absent until the address is
/// resolved through an [`IpAsnMap`], and stays absent when no entry matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayRecord {
    pub nickname: String,
    /// 40-hex-character identity fingerprint.
    pub fingerprint: String,
    pub address: Ipv4Addr,
    pub flags: BTreeSet<String>,
    /// Consensus weight units.
    pub bandwidth: u64,
    pub asn: Option<Asn>,
    /// Enclosing /24 of `address`.
    pub prefix24: Ipv4Prefix,
}

impl RelayRecord {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.contains(flag)
    }

    pub fn is_guard(&self) -> bool {
        self.has_flag("Guard")
    }

    pub fn is_exit(&self) -> bool {
        self.has_flag("Exit")
    }
}

/// Parsed relay list plus ingestion diagnostics.
#[derive(Debug, Clone)]
pub struct RelayLoad {
    pub relays: Vec<RelayRecord>,
    /// Relays whose consensus entry carried no `w Bandwidth=` line.
    pub missing_bandwidth: usize,
}

/// Load relays from either supported document shape; JSON-lines when the
/// first non-blank line opens an object, consensus text otherwise.
pub fn load_relays(source: &str) -> Result<RelayLoad, RelayError> {
    let first = source.lines().find(|l| !l.trim().is_empty());
    match first {
        Some(line) if line.trim_start().starts_with('{') => parse_relay_json_lines(source),
        _ => parse_consensus(source),
    }
}

/// Parse the `r`/`s`/`w` line subset of a network-status consensus. Flags and
/// bandwidth attach to the most recent `r` line; all other lines are ignored.
pub fn parse_consensus(source: &str) -> Result<RelayLoad, RelayError> {
    struct Pending {
        record: RelayRecord,
        saw_bandwidth: bool,
    }
    let mut relays: Vec<RelayRecord> = Vec::new();
    let mut missing_bandwidth = 0usize;
    let mut pending: Option<Pending> = None;
    let flush = |p: Option<Pending>, missing: &mut usize, out: &mut Vec<RelayRecord>| {
        if let Some(p) = p {
            if !p.saw_bandwidth {
                *missing += 1;
            }
            out.push(p.record);
        }
    };

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_ascii_whitespace();
        match tokens.next() {
            Some("r") => {
                let fields: Vec<&str> = tokens.collect();
                if fields.len() < 8 {
                    return Err(RelayError::Parse {
                        line,
                        msg: format!("`r` line has {} fields, expected 8", fields.len()),
                    });
                }
                let nickname = fields[0].to_string();
                let identity = STANDARD_NO_PAD.decode(fields[1]).map_err(|_| {
                    RelayError::Parse {
                        line,
                        msg: format!("invalid base64 identity `{}`", fields[1]),
                    }
                })?;
                let fingerprint = hex_upper(&identity);
                let address: Ipv4Addr = fields[5].parse().map_err(|_| RelayError::Parse {
                    line,
                    msg: format!("invalid IPv4 address `{}`", fields[5]),
                })?;
                flush(pending.take(), &mut missing_bandwidth, &mut relays);
                pending = Some(Pending {
                    record: RelayRecord {
                        nickname,
                        fingerprint,
                        address,
                        flags: BTreeSet::new(),
                        bandwidth: 0,
                        asn: None,
                        prefix24: Ipv4Prefix::slash24(address),
                    },
                    saw_bandwidth: false,
                });
            }
            Some("s") => {
                let p = pending.as_mut().ok_or(RelayError::Parse {
                    line,
                    msg: "`s` line with no preceding `r` line".into(),
                })?;
                p.record.flags.extend(tokens.map(str::to_string));
            }
            Some("w") => {
                let p = pending.as_mut().ok_or(RelayError::Parse {
                    line,
                    msg: "`w` line with no preceding `r` line".into(),
                })?;
                for token in tokens {
                    if let Some(value) = token.strip_prefix("Bandwidth=") {
                        p.record.bandwidth =
                            value.parse().map_err(|_| RelayError::Parse {
                                line,
                                msg: format!("invalid bandwidth `{value}`"),
                            })?;
                        p.saw_bandwidth = true;
                    }
                }
            }
            _ => {}
        }
    }
    flush(pending.take(), &mut missing_bandwidth, &mut relays);
    Ok(RelayLoad {
        relays,
        missing_bandwidth,
    })
}

fn hex_upper(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02X}"));
    }
    s
}

#[derive(Deserialize)]
struct RelayJson {
    nickname: String,
    fingerprint: String,
    address: String,
    flags: Vec<String>,
    bandwidth: u64,
}

/// Parse one JSON object per line with keys nickname, fingerprint, address,
/// flags, bandwidth. Order is preserved.
pub fn parse_relay_json_lines(source: &str) -> Result<RelayLoad, RelayError> {
    let mut relays = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let json: RelayJson = serde_json::from_str(raw).map_err(|e| RelayError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let address: Ipv4Addr = json.address.parse().map_err(|_| RelayError::Parse {
            line,
            msg: format!("invalid IPv4 address `{}`", json.address),
        })?;
        if json.fingerprint.len() != 40
            || !json.fingerprint.chars().all(|c| c.is_ascii_hexdigit())
        {
            return Err(RelayError::Parse {
                line,
                msg: format!("fingerprint `{}` is not 40 hex characters", json.fingerprint),
            });
        }
        relays.push(RelayRecord {
            nickname: json.nickname,
            fingerprint: json.fingerprint.to_ascii_uppercase(),
            address,
            flags: json.flags.into_iter().collect(),
            bandwidth: json.bandwidth,
            asn: None,
            prefix24: Ipv4Prefix::slash24(address),
        });
    }
    Ok(RelayLoad {
        relays,
        missing_bandwidth: 0,
    })
}

/// IP-to-ASN mapping with longest-prefix-match lookup. Overlapping entries
/// are expected; the most specific covering prefix wins.
#[derive(Debug, Clone, Default)]
pub struct IpAsnMap {
    by_len: BTreeMap<u8, HashMap<u32, Asn>>,
}

impl IpAsnMap {
    /// Parse `prefix<TAB>asn` lines; `#` comments and blank lines allowed.
    pub fn parse(source: &str) -> Result<Self, RelayError> {
        let mut map = IpAsnMap::default();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (prefix, asn) = trimmed.split_once('\t').ok_or(RelayError::Parse {
                line,
                msg: "expected `prefix<TAB>asn`".into(),
            })?;
            let prefix: Ipv4Prefix = prefix.trim().parse().map_err(|e| RelayError::Parse {
                line,
                msg: format!("{e}"),
            })?;
            let asn: Asn = asn.trim().parse().map_err(|_| RelayError::Parse {
                line,
                msg: format!("invalid ASN `{}`", asn.trim()),
            })?;
            map.insert(prefix, asn);
        }
        Ok(map)
    }

    pub fn insert(&mut self, prefix: Ipv4Prefix, asn: Asn) {
        self.by_len
            .entry(prefix.prefix_len())
            .or_default()
            .insert(u32::from(prefix.network()), asn);
    }

    pub fn is_empty(&self) -> bool {
        self.by_len.values().all(HashMap::is_empty)
    }

    /// Longest-prefix match for a single address.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<Asn> {
        let raw = u32::from(ip);
        for (&len, entries) in self.by_len.iter().rev() {
            let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
            if let Some(&asn) = entries.get(&(raw & mask)) {
                return Some(asn);
            }
        }
        None
    }

    /// Every ASN that wins the longest-prefix match for some address inside
    /// `within`: entries contained in the prefix, plus the most specific
    /// entry covering it.
    pub fn asns_within(&self, within: &Ipv4Prefix) -> BTreeSet<Asn> {
        let mut out = BTreeSet::new();
        for (&len, entries) in &self.by_len {
            if len < within.prefix_len() {
                continue;
            }
            for (&net, &asn) in entries {
                let p = Ipv4Prefix::new(Ipv4Addr::from(net), len).expect("stored prefix valid");
                if within.contains(&p) {
                    out.insert(asn);
                }
            }
        }
        if let Some(asn) = self.covering_asn(within) {
            out.insert(asn);
        }
        out
    }

    fn covering_asn(&self, within: &Ipv4Prefix) -> Option<Asn> {
        let raw = u32::from(within.network());
        for (&len, entries) in self.by_len.iter().rev() {
            if len > within.prefix_len() {
                continue;
            }
            let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
            if let Some(&asn) = entries.get(&(raw & mask)) {
                return Some(asn);
            }
        }
        None
    }
}

/// Resolve every relay address through the map. Unmatched relays keep
/// `asn = None`; they are reported, not failed.
pub fn resolve_asn(map: &IpAsnMap, relays: &[RelayRecord]) -> Vec<RelayRecord> {
    relays
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.asn = map.lookup(r.address);
            r
        })
        .collect()
}

/// Normalized bandwidth per fingerprint: bandwidth divided by the maximum
/// over the filtered subset, in [0,1].
pub fn normalize_bandwidth(
    relays: &[RelayRecord],
    required_flag: Option<&str>,
) -> Result<BTreeMap<String, f64>, RelayError> {
    let subset: Vec<&RelayRecord> = relays
        .iter()
        .filter(|r| required_flag.is_none_or(|f| r.has_flag(f)))
        .collect();
    if subset.is_empty() {
        return Err(RelayError::DegenerateInput(
            "no relays left after flag filtering".into(),
        ));
    }
    let max = subset.iter().map(|r| r.bandwidth).max().unwrap();
    if max == 0 {
        return Err(RelayError::DegenerateInput(
            "all bandwidths are zero".into(),
        ));
    }
    Ok(subset
        .into_iter()
        .map(|r| (r.fingerprint.clone(), r.bandwidth as f64 / max as f64))
        .collect())
}

/// Accumulated consensus bandwidth per AS over mapped relays.
pub fn as_bandwidth(relays: &[RelayRecord]) -> BTreeMap<Asn, u64> {
    let mut out: BTreeMap<Asn, u64> = BTreeMap::new();
    for r in relays {
        if let Some(asn) = r.asn {
            *out.entry(asn).or_insert(0) += r.bandwidth;
        }
    }
    out
}

/// Client AS target set with per-source weights.
#[derive(Debug, Clone)]
pub struct ClientSet {
    members: Vec<(Asn, f64)>,
}

impl ClientSet {
    /// Parse one `asn[,weight]` entry per line; weight defaults to 1 and must
    /// be positive; duplicate ASNs are rejected.
    pub fn parse(source: &str) -> Result<Self, RelayError> {
        let mut members = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (asn_str, weight) = match trimmed.split_once(',') {
                Some((a, w)) => (a.trim(), Some(w.trim())),
                None => (trimmed, None),
            };
            let asn: Asn = asn_str.parse().map_err(|_| RelayError::Parse {
                line,
                msg: format!("invalid ASN `{asn_str}`"),
            })?;
            let weight: f64 = match weight {
                Some(w) => w.parse().map_err(|_| RelayError::Parse {
                    line,
                    msg: format!("invalid weight `{w}`"),
                })?,
                None => 1.0,
            };
            if !weight.is_finite() || weight <= 0.0 {
                return Err(RelayError::Parse {
                    line,
                    msg: format!("weight {weight} must be positive"),
                });
            }
            if !seen.insert(asn) {
                return Err(RelayError::Parse {
                    line,
                    msg: format!("duplicate client AS {asn}"),
                });
            }
            members.push((asn, weight));
        }
        if members.is_empty() {
            return Err(RelayError::DegenerateInput("empty client set".into()));
        }
        Ok(ClientSet { members })
    }

    pub fn members(&self) -> &[(Asn, f64)] {
        &self.members
    }

    pub fn asns(&self) -> Vec<Asn> {
        self.members.iter().map(|(a, _)| *a).collect()
    }

    pub fn weights(&self) -> BTreeMap<Asn, f64> {
        self.members.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}
