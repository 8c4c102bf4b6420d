//! `torresil monitor`: replay a recorded update stream, emit alerts, the
//! final blacklist, and detection metrics for injected attacks.

use std::collections::BTreeSet;

use torresil::monitor::{
    build_registry, evaluate_detection, inject_attack, parse_update_stream, AttackSpec,
    AttackTruth, BgpUpdate, MonitorConfig, MonitorEngine,
};
use torresil::net::Ipv4Prefix;
use torresil::Asn;

use crate::cmd_resilience::load_resolved_relays;
use crate::{read_input, write_output, CliError, MonitorArgs};

fn parse_benign(text: &str, path: &std::path::Path) -> Result<BTreeSet<(Ipv4Prefix, Asn)>, CliError> {
    let mut out = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (prefix, asn) = trimmed.split_once(',').ok_or_else(|| {
            CliError::Data(format!(
                "{}:{line}: expected `prefix,asn`",
                path.display()
            ))
        })?;
        let prefix: Ipv4Prefix = prefix.trim().parse().map_err(|e| {
            CliError::Data(format!("{}:{line}: {e}", path.display()))
        })?;
        let asn: Asn = asn.trim().parse().map_err(|_| {
            CliError::Data(format!("{}:{line}: invalid ASN `{asn}`", path.display()))
        })?;
        out.insert((prefix, asn));
    }
    Ok(out)
}

pub(crate) fn run(args: &MonitorArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.freq_threshold) || !(0.0..1.0).contains(&args.time_threshold) {
        return Err(CliError::Usage(
            "thresholds must lie in [0, 1)".into(),
        ));
    }
    if args.batch_secs <= 0 || args.window_secs <= 0 || args.quarantine_secs < 0 {
        return Err(CliError::Usage(
            "batch, window, and quarantine lengths must be positive".into(),
        ));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let (relays, ip_map) = load_resolved_relays(&args.relays, &args.ip_map)?;
    let registry = build_registry(&relays, &ip_map);
    if registry.is_empty() {
        return Err(CliError::Data(
            "no mapped Guard or Exit relay: nothing to monitor".into(),
        ));
    }
    if registry.unmapped_skipped > 0 {
        eprintln!(
            "warning: {} Guard/Exit relays skipped (no IP-to-ASN match)",
            registry.unmapped_skipped
        );
    }

    let stream_text = read_input(&args.stream)?;
    let mut stream = parse_update_stream(&stream_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.stream.display())))?;
    stream.sort_by_key(|u| u.ts);

    let benign = match &args.benign {
        Some(path) => parse_benign(&read_input(path)?, path)?,
        None => BTreeSet::new(),
    };
    let config = MonitorConfig {
        freq_threshold: args.freq_threshold,
        time_threshold: args.time_threshold,
        batch_secs: args.batch_secs,
        window_secs: args.window_secs,
        quarantine_secs: args.quarantine_secs,
        benign,
    };

    let truths: Vec<AttackTruth>;
    let merged: Vec<BgpUpdate>;
    match &args.inject {
        Some(path) => {
            let text = read_input(path)?;
            let specs: Vec<AttackSpec> = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let mut current = stream;
            let mut collected = Vec::with_capacity(specs.len());
            for spec in &specs {
                let (next, truth) = inject_attack(&current, spec, &registry)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                current = next;
                collected.push(truth);
            }
            merged = current;
            truths = collected;
        }
        None => {
            merged = stream;
            truths = Vec::new();
        }
    }

    if truths.is_empty() {
        let engine = MonitorEngine::new(registry, config);
        let outcome = engine
            .run(&merged)
            .map_err(|e| CliError::Data(e.to_string()))?;
        write_output(&args.out, "alerts.jsonl", &outcome.alerts_json_lines())?;
        write_output(&args.out, "blacklist.json", &outcome.blacklist.to_json())?;
        eprintln!(
            "monitor: {} updates over {} batches, {} alerts, {} blacklisted",
            outcome.updates_processed,
            outcome.batches.len(),
            outcome.alert_count(),
            outcome.blacklist.len()
        );
    } else {
        let (report, outcome) = evaluate_detection(&merged, &truths, &registry, &config)
            .map_err(|e| CliError::Data(e.to_string()))?;
        write_output(&args.out, "alerts.jsonl", &outcome.alerts_json_lines())?;
        write_output(&args.out, "blacklist.json", &outcome.blacklist.to_json())?;
        write_output(&args.out, "metrics.json", &report.to_json())?;
        eprintln!(
            "monitor: {} updates over {} batches, {} alerts, {} attacks injected",
            outcome.updates_processed,
            outcome.batches.len(),
            outcome.alert_count(),
            truths.len()
        );
        for (kind, stats) in &report.detectors {
            eprintln!(
                "  {kind:?}: {}/{} attacks detected, avg hourly FP rate {:.6}",
                stats.attacks_detected,
                truths.len(),
                stats.avg_hourly_fp_rate
            );
        }
    }
    Ok(())
}
