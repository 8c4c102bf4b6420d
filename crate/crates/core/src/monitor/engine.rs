//! Stream replay: hourly batching, detector evaluation, blacklist
//! maintenance, attack injection, and detection scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::net::Ipv4Prefix;
use crate::Asn;

use super::baseline::{frequency_analytic, time_analytic, Baseline};
use super::{
    blacklist_step, filter_tor_updates, origin_check, Alert, BgpUpdate, Blacklist, DetectorKind,
    MonitorError, PrefixRegistry, UpdateKind,
};

/// Detector thresholds and replay cadence.
#[derive(Debug, Clone)]
pub struct MonitorConfig {
    /// Frequency-analytic threshold (strict less-than).
    pub freq_threshold: f64,
    /// Time-analytic threshold (strict less-than).
    pub time_threshold: f64,
    /// Evaluation batch length in seconds; hourly by default, per-minute
    /// batching is a matter of setting 60.
    pub batch_secs: i64,
    /// Trailing baseline window in seconds.
    pub window_secs: i64,
    /// A blacklisted prefix recovers after this long without any non-owner
    /// announcement.
    pub quarantine_secs: i64,
    /// (prefix, origin) pairs known to be authorized despite registry
    /// mismatches.
    pub benign: BTreeSet<(Ipv4Prefix, Asn)>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            freq_threshold: 0.0025,
            time_threshold: 0.065,
            batch_secs: 3600,
            window_secs: 30 * 86_400,
            quarantine_secs: 86_400,
            benign: BTreeSet::new(),
        }
    }
}

/// What happened during one evaluated batch.
#[derive(Debug, Clone)]
pub struct BatchSummary {
    pub start: i64,
    pub end: i64,
    /// Every (prefix, origin) announced in the batch, exclusions included.
    pub announced: BTreeSet<(Ipv4Prefix, Asn)>,
    pub alerts: Vec<Alert>,
}

#[derive(Debug, Clone)]
pub struct MonitorOutcome {
    pub batches: Vec<BatchSummary>,
    pub blacklist: Blacklist,
    /// Updates that survived the monitored-prefix filter.
    pub updates_processed: usize,
}

impl MonitorOutcome {
    pub fn alerts(&self) -> impl Iterator<Item = &Alert> {
        self.batches.iter().flat_map(|b| b.alerts.iter())
    }

    pub fn alert_count(&self) -> usize {
        self.batches.iter().map(|b| b.alerts.len()).sum()
    }

    /// Alerts in emission order, one JSON object per line.
    pub fn alerts_json_lines(&self) -> String {
        let mut out = String::new();
        for alert in self.alerts() {
            out.push_str(&serde_json::to_string(alert).expect("alert serializes"));
            out.push('\n');
        }
        out
    }
}

/// Sequential replay over a sorted update stream. The engine owns the
/// baseline and blacklist; alerts append per batch.
pub struct MonitorEngine {
    registry: PrefixRegistry,
    config: MonitorConfig,
}

impl MonitorEngine {
    pub fn new(registry: PrefixRegistry, config: MonitorConfig) -> Self {
        MonitorEngine { registry, config }
    }

    pub fn registry(&self) -> &PrefixRegistry {
        &self.registry
    }

    /// Replay the stream in timestamp order and return every batch's alerts
    /// plus the final blacklist.
    pub fn run(&self, updates: &[BgpUpdate]) -> Result<MonitorOutcome, MonitorError> {
        let mut stream: Vec<BgpUpdate> =
            filter_tor_updates(updates.to_vec(), &self.registry);
        stream.sort_by_key(|u| u.ts);
        let processed = stream.len();

        let mut batches = Vec::new();
        let mut blacklist = Blacklist::default();
        if stream.is_empty() {
            return Ok(MonitorOutcome {
                batches,
                blacklist,
                updates_processed: 0,
            });
        }

        let batch_secs = self.config.batch_secs.max(1);
        let first_start = stream[0].ts.div_euclid(batch_secs) * batch_secs;
        let mut baseline = Baseline::new(first_start, self.config.window_secs);
        // Last non-owner announcement per prefix, for quarantine recovery.
        let mut last_offense: HashMap<Ipv4Prefix, i64> = HashMap::new();

        let mut idx = 0;
        let mut batch_start = first_start;
        while idx < stream.len() {
            let batch_end = batch_start + batch_secs;
            let mut batch: Vec<BgpUpdate> = Vec::new();
            while idx < stream.len() && stream[idx].ts < batch_end {
                batch.push(stream[idx].clone());
                idx += 1;
            }

            let mut alerts: Vec<Alert> = Vec::new();
            let mut announced: BTreeSet<(Ipv4Prefix, Asn)> = BTreeSet::new();
            for update in &batch {
                if let UpdateKind::Announce { .. } = update.kind {
                    let origin = update.origin().expect("announce has origin");
                    announced.insert((update.prefix, origin));
                    let owners = self.registry.matched_owners(&update.prefix);
                    let authorized = owners.contains(&origin)
                        || self.config.benign.contains(&(update.prefix, origin));
                    if !authorized {
                        last_offense.insert(update.prefix, update.ts);
                    }
                    if let Some(alert) =
                        origin_check(update, &self.registry, &self.config.benign)
                    {
                        alerts.push(alert);
                    }
                }
            }
            alerts.extend(frequency_analytic(
                &baseline,
                &batch,
                self.config.freq_threshold,
            )?);
            alerts.extend(time_analytic(
                &baseline,
                &batch,
                self.config.time_threshold,
                batch_end,
            )?);

            // Flagged pairs stop feeding the baseline from this batch on.
            for alert in &alerts {
                baseline.exclude_pair(alert.prefix, alert.origin);
            }

            let recovered: Vec<Ipv4Prefix> = blacklist
                .iter()
                .filter(|(prefix, entry)| {
                    let last = last_offense.get(*prefix).copied().unwrap_or(entry.since);
                    batch_end - last >= self.config.quarantine_secs
                })
                .map(|(prefix, _)| *prefix)
                .collect();
            blacklist_step(&mut blacklist, &alerts, &recovered);

            baseline.update_until(&batch, batch_end)?;
            batches.push(BatchSummary {
                start: batch_start,
                end: batch_end,
                announced,
                alerts,
            });
            batch_start = batch_end;
        }

        Ok(MonitorOutcome {
            batches,
            blacklist,
            updates_processed: processed,
        })
    }
}

/// A simulated equally-specific hijack to merge into a recorded stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub prefix: Ipv4Prefix,
    pub false_origin: Asn,
    /// First spoofed announcement, seconds since epoch.
    pub start: i64,
    /// Attack length; announcements spread evenly across it.
    pub duration_secs: i64,
    pub n_updates: u32,
    /// Optional AS path; must end in `false_origin`. Defaults to the origin
    /// alone.
    #[serde(default)]
    pub as_path: Option<Vec<Asn>>,
}

/// Ground truth for one injected attack.
#[derive(Debug, Clone, Serialize)]
pub struct AttackTruth {
    pub prefix: Ipv4Prefix,
    pub false_origin: Asn,
    pub start: i64,
    pub end: i64,
    pub update_ts: Vec<i64>,
}

/// Merge spoofed announcements into the stream in timestamp order. The
/// targeted prefix must already be monitored.
pub fn inject_attack(
    stream: &[BgpUpdate],
    spec: &AttackSpec,
    registry: &PrefixRegistry,
) -> Result<(Vec<BgpUpdate>, AttackTruth), MonitorError> {
    if spec.n_updates < 1 {
        return Err(MonitorError::Argument(
            "attack needs at least one update".into(),
        ));
    }
    if spec.duration_secs < 0 {
        return Err(MonitorError::Argument("negative attack duration".into()));
    }
    if !registry.matches_update(&spec.prefix) {
        return Err(MonitorError::Argument(format!(
            "prefix {} is not monitored",
            spec.prefix
        )));
    }
    let as_path = match &spec.as_path {
        Some(path) => {
            if path.last() != Some(&spec.false_origin) {
                return Err(MonitorError::Argument(
                    "attack AS path must end in the false origin".into(),
                ));
            }
            path.clone()
        }
        None => vec![spec.false_origin],
    };

    let n = spec.n_updates as i64;
    let mut update_ts = Vec::with_capacity(spec.n_updates as usize);
    for i in 0..n {
        let ts = if n == 1 {
            spec.start
        } else {
            spec.start + ((i as f64) * (spec.duration_secs as f64) / ((n - 1) as f64)).round() as i64
        };
        update_ts.push(ts);
    }

    let mut merged: Vec<BgpUpdate> = stream.to_vec();
    for &ts in &update_ts {
        merged.push(BgpUpdate::announce(ts, spec.prefix, as_path.clone(), "inject"));
    }
    merged.sort_by_key(|u| u.ts);

    Ok((
        merged,
        AttackTruth {
            prefix: spec.prefix,
            false_origin: spec.false_origin,
            start: spec.start,
            end: spec.start + spec.duration_secs,
            update_ts,
        },
    ))
}

/// Per-detector detection and false-positive accounting.
#[derive(Debug, Clone, Serialize)]
pub struct DetectorStats {
    pub attacks_detected: usize,
    pub false_negatives: usize,
    /// Distinct benign (prefix, origin) pairs flagged, summed over batches.
    pub benign_pairs_flagged: usize,
    /// Benign pair-batches that were not flagged.
    pub true_negatives: usize,
    /// Mean over batches of flagged-benign / announced-benign pairs.
    pub avg_hourly_fp_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub detectors: BTreeMap<DetectorKind, DetectorStats>,
    pub batches_evaluated: usize,
    pub benign_pair_batches: usize,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Replay a labeled stream and score each detector. An attack counts as
/// detected when any of its (prefix, origin) alerts fires within one hour of
/// its first announcement.
pub fn evaluate_detection(
    updates: &[BgpUpdate],
    truths: &[AttackTruth],
    registry: &PrefixRegistry,
    config: &MonitorConfig,
) -> Result<(DetectionReport, MonitorOutcome), MonitorError> {
    let engine = MonitorEngine::new(registry.clone(), config.clone());
    let outcome = engine.run(updates)?;

    let attack_pairs: BTreeSet<(Ipv4Prefix, Asn)> = truths
        .iter()
        .map(|t| (t.prefix, t.false_origin))
        .collect();

    let mut detectors = BTreeMap::new();
    let mut benign_pair_batches = 0usize;
    for kind in [
        DetectorKind::OriginCheck,
        DetectorKind::Frequency,
        DetectorKind::Time,
    ] {
        let mut detected = 0usize;
        for truth in truths {
            let hit = outcome.alerts().any(|a| {
                a.detector == kind
                    && a.prefix == truth.prefix
                    && a.origin == truth.false_origin
                    && a.ts >= truth.start
                    && a.ts <= truth.start + 3600
            });
            if hit {
                detected += 1;
            }
        }

        let mut flagged_benign = 0usize;
        let mut benign_total = 0usize;
        let mut rate_sum = 0.0;
        let mut rated_batches = 0usize;
        for batch in &outcome.batches {
            let benign: BTreeSet<_> = batch
                .announced
                .iter()
                .filter(|pair| !attack_pairs.contains(pair))
                .collect();
            if benign.is_empty() {
                continue;
            }
            let flagged: BTreeSet<_> = batch
                .alerts
                .iter()
                .filter(|a| a.detector == kind)
                .map(|a| (a.prefix, a.origin))
                .filter(|pair| !attack_pairs.contains(pair))
                .collect();
            flagged_benign += flagged.len();
            benign_total += benign.len();
            rate_sum += flagged.len() as f64 / benign.len() as f64;
            rated_batches += 1;
        }
        if kind == DetectorKind::OriginCheck {
            benign_pair_batches = benign_total;
        }

        detectors.insert(
            kind,
            DetectorStats {
                attacks_detected: detected,
                false_negatives: truths.len() - detected,
                benign_pairs_flagged: flagged_benign,
                true_negatives: benign_total - flagged_benign,
                avg_hourly_fp_rate: if rated_batches == 0 {
                    0.0
                } else {
                    rate_sum / rated_batches as f64
                },
            },
        );
    }

    Ok((
        DetectionReport {
            detectors,
            batches_evaluated: outcome.batches.len(),
            benign_pair_batches,
        },
        outcome,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Ipv4Prefix {
        s.parse().unwrap()
    }

    fn registry(entries: &[(&str, &[Asn])]) -> PrefixRegistry {
        PrefixRegistry::from_entries(
            entries
                .iter()
                .map(|(prefix, owners)| (p(prefix), owners.iter().copied().collect()))
                .collect(),
        )
    }

    /// Owner announces its prefix every `every` seconds for `hours` hours.
    fn benign_stream(prefix: &str, owner: Asn, hours: i64, every: i64) -> Vec<BgpUpdate> {
        let mut out = Vec::new();
        let mut ts = 0;
        while ts < hours * 3600 {
            out.push(BgpUpdate::announce(ts, p(prefix), vec![7, owner], "rv"));
            ts += every;
        }
        out
    }

    #[test]
    fn benign_stream_is_quiet() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let engine = MonitorEngine::new(registry, MonitorConfig::default());
        let outcome = engine.run(&benign_stream("1.2.3.0/24", 10, 48, 900)).unwrap();
        assert_eq!(outcome.alert_count(), 0);
        assert!(outcome.blacklist.is_empty());
        assert_eq!(outcome.batches.len(), 48);
    }

    #[test]
    fn injected_attack_is_flagged_by_all_detectors_and_blacklisted() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        // Dense enough that 3 spoofed updates stay under the 0.0025 ratio:
        // 12 announcements/hour for 150 hours ahead of the attack.
        let stream = benign_stream("1.2.3.0/24", 10, 200, 300);
        let spec = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 150 * 3600 + 30,
            duration_secs: 240,
            n_updates: 3,
            as_path: None,
        };
        let (merged, truth) = inject_attack(&stream, &spec, &registry).unwrap();
        assert_eq!(truth.update_ts, vec![540030, 540150, 540270]);

        // Quarantine longer than the stream so the blacklist entry survives
        // to the end for inspection.
        let config = MonitorConfig {
            quarantine_secs: 10_000 * 3600,
            ..MonitorConfig::default()
        };
        let (report, outcome) = evaluate_detection(&merged, &[truth], &registry, &config).unwrap();
        for kind in [
            DetectorKind::OriginCheck,
            DetectorKind::Frequency,
            DetectorKind::Time,
        ] {
            let stats = &report.detectors[&kind];
            assert_eq!(stats.attacks_detected, 1, "{kind:?}");
            assert_eq!(stats.false_negatives, 0, "{kind:?}");
            assert_eq!(stats.benign_pairs_flagged, 0, "{kind:?}");
            assert_eq!(stats.avg_hourly_fp_rate, 0.0, "{kind:?}");
        }
        assert!(outcome.blacklist.contains(&p("1.2.3.0/24")));
        let entry = outcome.blacklist.entry(&p("1.2.3.0/24")).unwrap();
        assert_eq!(entry.detectors.len(), 3);
    }

    #[test]
    fn blacklist_recovers_after_quiet_quarantine() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let stream = benign_stream("1.2.3.0/24", 10, 80, 900);
        let spec = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 40 * 3600,
            duration_secs: 60,
            n_updates: 2,
            as_path: Some(vec![9, 666]),
        };
        let (merged, _) = inject_attack(&stream, &spec, &registry).unwrap();
        let engine = MonitorEngine::new(registry, MonitorConfig::default());
        let outcome = engine.run(&merged).unwrap();
        // 80 hours total: attack at hour 40, quarantine 24 h of owner-only
        // announcements clears it before the stream ends.
        assert!(!outcome.blacklist.contains(&p("1.2.3.0/24")));
        assert!(outcome.alert_count() > 0);
    }

    #[test]
    fn injection_validates_inputs() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let bad_prefix = AttackSpec {
            prefix: p("9.9.9.0/24"),
            false_origin: 666,
            start: 0,
            duration_secs: 60,
            n_updates: 1,
            as_path: None,
        };
        assert!(matches!(
            inject_attack(&[], &bad_prefix, &registry).unwrap_err(),
            MonitorError::Argument(_)
        ));
        let bad_path = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 0,
            duration_secs: 60,
            n_updates: 1,
            as_path: Some(vec![666, 9]),
        };
        assert!(inject_attack(&[], &bad_path, &registry).is_err());
        let zero = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 0,
            duration_secs: 60,
            n_updates: 0,
            as_path: None,
        };
        assert!(inject_attack(&[], &zero, &registry).is_err());
    }

    #[test]
    fn single_update_attack_lands_at_start() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let spec = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 777,
            duration_secs: 3600,
            n_updates: 1,
            as_path: None,
        };
        let (merged, truth) = inject_attack(&[], &spec, &registry).unwrap();
        assert_eq!(truth.update_ts, vec![777]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].collector, "inject");
    }

    #[test]
    fn engine_is_deterministic() {
        let registry = registry(&[("1.2.3.0/24", &[10]), ("4.5.6.0/24", &[20])]);
        let mut stream = benign_stream("1.2.3.0/24", 10, 100, 900);
        stream.extend(benign_stream("4.5.6.0/24", 20, 100, 1200));
        let spec = AttackSpec {
            prefix: p("4.5.6.0/24"),
            false_origin: 31337,
            start: 70 * 3600,
            duration_secs: 7200,
            n_updates: 4,
            as_path: None,
        };
        let (merged, _) = inject_attack(&stream, &spec, &registry).unwrap();
        let engine = MonitorEngine::new(registry, MonitorConfig::default());
        let a = engine.run(&merged).unwrap();
        let b = engine.run(&merged).unwrap();
        assert_eq!(a.alerts_json_lines(), b.alerts_json_lines());
        assert_eq!(a.blacklist.to_json(), b.blacklist.to_json());
    }

    #[test]
    fn threshold_monotonicity_in_alert_counts() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let stream = benign_stream("1.2.3.0/24", 10, 100, 900);
        let spec = AttackSpec {
            prefix: p("1.2.3.0/24"),
            false_origin: 666,
            start: 50 * 3600,
            duration_secs: 3600,
            n_updates: 2,
            as_path: None,
        };
        let (merged, _) = inject_attack(&stream, &spec, &registry).unwrap();

        let mut last_freq = 0usize;
        for threshold in [0.0, 0.001, 0.002, 0.003, 0.004] {
            let config = MonitorConfig {
                freq_threshold: threshold,
                ..MonitorConfig::default()
            };
            let engine = MonitorEngine::new(registry.clone(), config);
            let outcome = engine.run(&merged).unwrap();
            let count = outcome
                .alerts()
                .filter(|a| a.detector == DetectorKind::Frequency)
                .count();
            assert!(count >= last_freq, "alerts must not drop as threshold rises");
            last_freq = count;
        }
        let mut last_time = 0usize;
        for threshold in [0.0, 0.02, 0.04, 0.065, 0.08] {
            let config = MonitorConfig {
                time_threshold: threshold,
                ..MonitorConfig::default()
            };
            let engine = MonitorEngine::new(registry.clone(), config);
            let outcome = engine.run(&merged).unwrap();
            let count = outcome
                .alerts()
                .filter(|a| a.detector == DetectorKind::Time)
                .count();
            assert!(count >= last_time);
            last_time = count;
        }
    }

    #[test]
    fn benign_list_suppresses_origin_check_and_recovery_reset() {
        let registry = registry(&[("1.2.3.0/24", &[10])]);
        let mut stream = benign_stream("1.2.3.0/24", 10, 30, 900);
        // A second, authorized origin announces occasionally.
        for h in 0..30 {
            stream.push(BgpUpdate::announce(
                h * 3600 + 100,
                p("1.2.3.0/24"),
                vec![8, 20],
                "rv",
            ));
        }
        let config = MonitorConfig {
            benign: BTreeSet::from([(p("1.2.3.0/24"), 20)]),
            ..MonitorConfig::default()
        };
        let engine = MonitorEngine::new(registry, config);
        let outcome = engine.run(&stream).unwrap();
        assert_eq!(
            outcome
                .alerts()
                .filter(|a| a.detector == DetectorKind::OriginCheck)
                .count(),
            0
        );
    }
}
