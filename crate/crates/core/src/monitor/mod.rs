//! Routing-anomaly detection for Tor relay prefixes.
//!
//! The monitor watches the /24 prefixes hosting Guard and Exit relays. An
//! origin check flags announcements whose origin AS is not a registered owner
//! of the matched prefix; a frequency analytic flags origins announcing a
//! prefix rarely relative to all its announcements; a time analytic flags
//! origins active for a small fraction of a prefix's observed lifetime.
//! Flagged prefixes land on a blacklist until they recover.

mod baseline;
mod engine;

pub use baseline::{frequency_analytic, time_analytic, Baseline};
pub use engine::{
    evaluate_detection, inject_attack, AttackSpec, AttackTruth, BatchSummary, DetectionReport,
    DetectorStats, MonitorConfig, MonitorEngine, MonitorOutcome,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Ipv4Prefix;
use crate::relaydata::{IpAsnMap, RelayRecord};
use crate::Asn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("timestamp {ts} is out of order beyond the {tolerance} s tolerance (last {last})")]
    Sequencing { ts: i64, last: i64, tolerance: i64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// One BGP event from the update stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BgpUpdate {
    /// Seconds since epoch.
    pub ts: i64,
    pub prefix: Ipv4Prefix,
    pub kind: UpdateKind,
    pub collector: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateKind {
    Announce { as_path: Vec<Asn> },
    Withdraw,
}

impl BgpUpdate {
    pub fn announce(ts: i64, prefix: Ipv4Prefix, as_path: Vec<Asn>, collector: &str) -> Self {
        debug_assert!(!as_path.is_empty());
        BgpUpdate {
            ts,
            prefix,
            kind: UpdateKind::Announce { as_path },
            collector: collector.to_string(),
        }
    }

    pub fn withdraw(ts: i64, prefix: Ipv4Prefix, collector: &str) -> Self {
        BgpUpdate {
            ts,
            prefix,
            kind: UpdateKind::Withdraw,
            collector: collector.to_string(),
        }
    }

    /// Origin AS: the last element of the AS path. Withdrawals have none.
    pub fn origin(&self) -> Option<Asn> {
        match &self.kind {
            UpdateKind::Announce { as_path } => as_path.last().copied(),
            UpdateKind::Withdraw => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct UpdateWire {
    ts: i64,
    #[serde(rename = "type")]
    kind: String,
    prefix: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    as_path: Option<Vec<Asn>>,
    collector: String,
}

/// Parse a JSON-lines update stream:
/// `{"ts": <int>, "type": "A"|"W", "prefix": "<cidr>", "as_path": [...], "collector": "..."}`.
pub fn parse_update_stream(source: &str) -> Result<Vec<BgpUpdate>, MonitorError> {
    let mut updates = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let wire: UpdateWire = serde_json::from_str(raw).map_err(|e| MonitorError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let prefix: Ipv4Prefix = wire.prefix.parse().map_err(|e| MonitorError::Parse {
            line,
            msg: format!("{e}"),
        })?;
        let kind = match wire.kind.as_str() {
            "A" => {
                let as_path = wire.as_path.unwrap_or_default();
                if as_path.is_empty() {
                    return Err(MonitorError::Parse {
                        line,
                        msg: "announcement without an AS path".into(),
                    });
                }
                UpdateKind::Announce { as_path }
            }
            "W" => UpdateKind::Withdraw,
            other => {
                return Err(MonitorError::Parse {
                    line,
                    msg: format!("unknown update type `{other}`"),
                })
            }
        };
        updates.push(BgpUpdate {
            ts: wire.ts,
            prefix,
            kind,
            collector: wire.collector,
        });
    }
    Ok(updates)
}

/// Serialize one update in the stream wire format.
pub fn update_to_json(update: &BgpUpdate) -> String {
    let wire = UpdateWire {
        ts: update.ts,
        kind: match update.kind {
            UpdateKind::Announce { .. } => "A".into(),
            UpdateKind::Withdraw => "W".into(),
        },
        prefix: update.prefix.to_string(),
        as_path: match &update.kind {
            UpdateKind::Announce { as_path } => Some(as_path.clone()),
            UpdateKind::Withdraw => None,
        },
        collector: update.collector.clone(),
    };
    serde_json::to_string(&wire).expect("wire struct serializes")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    OriginCheck,
    Frequency,
    Time,
}

/// One anomaly finding. `ts` is when the offending activity was first seen in
/// the evaluated batch; `evidence` is the detector's metric value (1.0 for the
/// origin check).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub detector: DetectorKind,
    pub prefix: Ipv4Prefix,
    pub origin: Asn,
    pub evidence: f64,
    pub ts: i64,
}

/// Monitored /24 prefixes and their registered owner ASes.
#[derive(Debug, Clone, Default)]
pub struct PrefixRegistry {
    entries: BTreeMap<Ipv4Prefix, BTreeSet<Asn>>,
    /// Guard/Exit relays skipped because their address resolved to no AS.
    pub unmapped_skipped: usize,
}

/// Register the /24 of every mapped Guard or Exit relay. Owners are every AS
/// the mapping resolves inside the prefix (organizations announcing from
/// several ASNs stay legitimate), always including the relay's own AS.
pub fn build_registry(relays: &[RelayRecord], ip_map: &IpAsnMap) -> PrefixRegistry {
    let mut registry = PrefixRegistry::default();
    for relay in relays {
        if !(relay.is_guard() || relay.is_exit()) {
            continue;
        }
        let Some(asn) = relay.asn else {
            registry.unmapped_skipped += 1;
            continue;
        };
        let owners = registry.entries.entry(relay.prefix24).or_insert_with(|| {
            ip_map.asns_within(&relay.prefix24)
        });
        owners.insert(asn);
    }
    registry
}

impl PrefixRegistry {
    pub fn from_entries(entries: BTreeMap<Ipv4Prefix, BTreeSet<Asn>>) -> Self {
        PrefixRegistry {
            entries,
            unmapped_skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Ipv4Prefix> {
        self.entries.keys()
    }

    pub fn owners(&self, prefix: &Ipv4Prefix) -> Option<&BTreeSet<Asn>> {
        self.entries.get(prefix)
    }

    /// An update is relevant when its prefix is no longer than /24 and covers
    /// (or equals) a monitored /24.
    pub fn matches_update(&self, prefix: &Ipv4Prefix) -> bool {
        prefix.prefix_len() <= 24 && self.entries.keys().any(|m| prefix.contains(m))
    }

    /// Union of owner sets over every monitored /24 the update prefix covers.
    pub fn matched_owners(&self, prefix: &Ipv4Prefix) -> BTreeSet<Asn> {
        let mut owners = BTreeSet::new();
        for (monitored, set) in &self.entries {
            if prefix.contains(monitored) {
                owners.extend(set.iter().copied());
            }
        }
        owners
    }
}

/// Keep only updates that touch a monitored /24 (the prefix itself or a
/// covering announcement up to /24).
pub fn filter_tor_updates(updates: Vec<BgpUpdate>, registry: &PrefixRegistry) -> Vec<BgpUpdate> {
    updates
        .into_iter()
        .filter(|u| registry.matches_update(&u.prefix))
        .collect()
}

/// Origin AS check: alert when an announcement's origin is not a registered
/// owner of the matched monitored prefix and the (prefix, origin) pair is not
/// on the benign list.
pub fn origin_check(
    update: &BgpUpdate,
    registry: &PrefixRegistry,
    benign: &BTreeSet<(Ipv4Prefix, Asn)>,
) -> Option<Alert> {
    let origin = update.origin()?;
    let owners = registry.matched_owners(&update.prefix);
    if owners.is_empty() || owners.contains(&origin) {
        return None;
    }
    if benign.contains(&(update.prefix, origin)) {
        return None;
    }
    Some(Alert {
        detector: DetectorKind::OriginCheck,
        prefix: update.prefix,
        origin,
        evidence: 1.0,
        ts: update.ts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlacklistEntry {
    pub since: i64,
    pub detectors: BTreeSet<DetectorKind>,
}

/// Prefixes currently considered unsafe for guard use. Entries leave only by
/// explicit recovery.
#[derive(Debug, Clone, Default)]
pub struct Blacklist {
    entries: BTreeMap<Ipv4Prefix, BlacklistEntry>,
}

impl Blacklist {
    pub fn contains(&self, prefix: &Ipv4Prefix) -> bool {
        self.entries.contains_key(prefix)
    }

    pub fn entry(&self, prefix: &Ipv4Prefix) -> Option<&BlacklistEntry> {
        self.entries.get(prefix)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv4Prefix, &BlacklistEntry)> {
        self.entries.iter()
    }

    /// JSON snapshot: map prefix -> {since, detectors}.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("blacklist serializes")
    }
}

/// Apply one round of blacklist updates: insert alerted prefixes (union of
/// detectors, earliest `since` wins) and drop recovered ones.
pub fn blacklist_step(blacklist: &mut Blacklist, alerts: &[Alert], recovered: &[Ipv4Prefix]) {
    for alert in alerts {
        let entry = blacklist
            .entries
            .entry(alert.prefix)
            .or_insert_with(|| BlacklistEntry {
                since: alert.ts,
                detectors: BTreeSet::new(),
            });
        entry.detectors.insert(alert.detector);
    }
    for prefix in recovered {
        blacklist.entries.remove(prefix);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn p(s: &str) -> Ipv4Prefix {
        s.parse().unwrap()
    }

    fn registry_one(prefix: &str, owners: &[Asn]) -> PrefixRegistry {
        PrefixRegistry::from_entries(BTreeMap::from([(
            p(prefix),
            owners.iter().copied().collect(),
        )]))
    }

    #[test]
    fn stream_round_trip() {
        let text = r#"{"ts":100,"type":"A","prefix":"1.2.3.0/24","as_path":[1,2,3],"collector":"rv"}
{"ts":160,"type":"W","prefix":"1.2.3.0/24","collector":"rv"}"#;
        let updates = parse_update_stream(text).unwrap();
        assert_eq!(updates.len(), 2);
        assert_eq!(updates[0].origin(), Some(3));
        assert_eq!(updates[1].origin(), None);
        let lines: Vec<String> = updates.iter().map(update_to_json).collect();
        assert_eq!(lines.join("\n"), text);
    }

    #[test]
    fn stream_rejects_bad_lines() {
        let err = parse_update_stream(r#"{"ts":1,"type":"A","prefix":"1.2.3.0/24","collector":"x"}"#)
            .unwrap_err();
        assert!(matches!(err, MonitorError::Parse { line: 1, .. }));
        let err = parse_update_stream("{}\n").unwrap_err();
        assert!(matches!(err, MonitorError::Parse { line: 1, .. }));
        let err =
            parse_update_stream(r#"{"ts":1,"type":"X","prefix":"1.2.3.0/24","collector":"x"}"#)
                .unwrap_err();
        assert!(matches!(err, MonitorError::Parse { line: 1, .. }));
    }

    #[test]
    fn registry_from_relays() {
        use crate::relaydata::{load_relays, resolve_asn};
        let map = IpAsnMap::parse("1.2.3.0/24\t100\n1.2.3.128/25\t200\n5.6.7.0/24\t300\n").unwrap();
        let doc = r#"{"nickname":"g","fingerprint":"00112233445566778899AABBCCDDEEFF00112233","address":"1.2.3.4","flags":["Guard"],"bandwidth":10}
{"nickname":"g2","fingerprint":"00112233445566778899AABBCCDDEEFF00112244","address":"1.2.3.200","flags":["Exit"],"bandwidth":10}
{"nickname":"mid","fingerprint":"00112233445566778899AABBCCDDEEFF00112255","address":"5.6.7.8","flags":["Fast"],"bandwidth":10}
{"nickname":"lost","fingerprint":"00112233445566778899AABBCCDDEEFF00112266","address":"9.9.9.9","flags":["Guard"],"bandwidth":10}"#;
        let relays = resolve_asn(&map, &load_relays(doc).unwrap().relays);
        let registry = build_registry(&relays, &map);
        // Middle-only relay excluded; unmapped Guard counted.
        assert_eq!(registry.len(), 1);
        assert_eq!(registry.unmapped_skipped, 1);
        let owners = registry.owners(&p("1.2.3.0/24")).unwrap();
        assert_eq!(owners.iter().copied().collect::<Vec<_>>(), vec![100, 200]);
    }

    #[test]
    fn filter_keeps_covering_and_exact() {
        let registry = registry_one("1.2.3.0/24", &[100]);
        let updates = vec![
            BgpUpdate::announce(1, p("1.2.0.0/16"), vec![100], "c"),
            BgpUpdate::announce(2, p("1.2.3.0/24"), vec![100], "c"),
            BgpUpdate::announce(3, p("9.9.9.0/24"), vec![100], "c"),
            BgpUpdate::announce(4, p("1.2.3.128/25"), vec![100], "c"),
        ];
        let kept = filter_tor_updates(updates, &registry);
        let prefixes: Vec<String> = kept.iter().map(|u| u.prefix.to_string()).collect();
        assert_eq!(prefixes, vec!["1.2.0.0/16", "1.2.3.0/24"]);
    }

    #[test]
    fn origin_check_rules() {
        let registry = registry_one("1.2.3.0/24", &[100]);
        let benign = BTreeSet::new();
        let bad = BgpUpdate::announce(10, p("1.2.3.0/24"), vec![7, 200], "c");
        let alert = origin_check(&bad, &registry, &benign).unwrap();
        assert_eq!(alert.detector, DetectorKind::OriginCheck);
        assert_eq!(alert.origin, 200);
        assert_eq!(alert.ts, 10);

        let multi = registry_one("1.2.3.0/24", &[100, 200]);
        assert!(origin_check(&bad, &multi, &benign).is_none());

        let benign: BTreeSet<(Ipv4Prefix, Asn)> = BTreeSet::from([(p("1.2.3.0/24"), 200)]);
        assert!(origin_check(&bad, &registry, &benign).is_none());

        let withdraw = BgpUpdate::withdraw(11, p("1.2.3.0/24"), "c");
        assert!(origin_check(&withdraw, &registry, &benign).is_none());
    }

    #[test]
    fn origin_check_covering_announcement_uses_owner_union() {
        let registry = PrefixRegistry::from_entries(BTreeMap::from([
            (p("1.2.3.0/24"), BTreeSet::from([100])),
            (p("1.2.4.0/24"), BTreeSet::from([150])),
        ]));
        let benign = BTreeSet::new();
        let covering_ok = BgpUpdate::announce(1, p("1.2.0.0/16"), vec![100], "c");
        assert!(origin_check(&covering_ok, &registry, &benign).is_none());
        let covering_bad = BgpUpdate::announce(2, p("1.2.0.0/16"), vec![999], "c");
        assert!(origin_check(&covering_bad, &registry, &benign).is_some());
    }

    #[test]
    fn blacklist_inserts_unions_and_recovers() {
        let mut bl = Blacklist::default();
        let alert = |detector, ts| Alert {
            detector,
            prefix: p("1.2.3.0/24"),
            origin: 999,
            evidence: 0.0,
            ts,
        };
        blacklist_step(&mut bl, &[alert(DetectorKind::Frequency, 100)], &[]);
        assert!(bl.contains(&p("1.2.3.0/24")));
        assert_eq!(bl.entry(&p("1.2.3.0/24")).unwrap().since, 100);

        // Repeat alert grows detectors, keeps since.
        blacklist_step(&mut bl, &[alert(DetectorKind::Time, 200)], &[]);
        let entry = bl.entry(&p("1.2.3.0/24")).unwrap();
        assert_eq!(entry.since, 100);
        assert_eq!(entry.detectors.len(), 2);

        blacklist_step(&mut bl, &[], &[p("1.2.3.0/24")]);
        assert!(bl.is_empty());
    }

    #[test]
    fn blacklist_snapshot_shape() {
        let mut bl = Blacklist::default();
        blacklist_step(
            &mut bl,
            &[Alert {
                detector: DetectorKind::OriginCheck,
                prefix: p("1.2.3.0/24"),
                origin: 9,
                evidence: 1.0,
                ts: 5,
            }],
            &[],
        );
        let json = bl.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["1.2.3.0/24"]["since"], 5);
        assert_eq!(value["1.2.3.0/24"]["detectors"][0], "origin_check");
    }

    #[test]
    fn slash24_helper_matches_prefix24() {
        let addr = Ipv4Addr::new(10, 1, 2, 3);
        assert_eq!(Ipv4Prefix::slash24(addr), p("10.1.2.0/24"));
    }
}
