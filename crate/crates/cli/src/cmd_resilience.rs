//! `torresil resilience`: per-origin resilience tables and CDF exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use torresil::relaydata::{as_bandwidth, load_relays, resolve_asn, ClientSet, IpAsnMap, RelayRecord};
use torresil::resilience::{
    cdf_export, hijack_resilience_from_source, intercept_resilience_from_source,
    origin_resilience, AttackerSet, CdfWeighting, InterceptRule, ResilienceVector,
};
use torresil::topology::{AsGraph, Tier1Set};
use torresil::Asn;

use crate::{
    read_input, write_output, AttackerChoice, CliError, InterceptRuleChoice, ResilienceArgs,
    WeightingChoice,
};

pub(crate) fn load_graph(path: &std::path::Path) -> Result<AsGraph, CliError> {
    let text = read_input(path)?;
    AsGraph::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn load_resolved_relays(
    relays_path: &std::path::Path,
    ip_map_path: &std::path::Path,
) -> Result<(Vec<RelayRecord>, IpAsnMap), CliError> {
    let relay_text = read_input(relays_path)?;
    let load = load_relays(&relay_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", relays_path.display())))?;
    if load.missing_bandwidth > 0 {
        eprintln!(
            "warning: {} relays had no bandwidth entry (treated as 0)",
            load.missing_bandwidth
        );
    }
    let map_text = read_input(ip_map_path)?;
    let ip_map = IpAsnMap::parse(&map_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", ip_map_path.display())))?;
    let relays = resolve_asn(&ip_map, &load.relays);
    let unmapped = relays.iter().filter(|r| r.asn.is_none()).count();
    if unmapped > 0 {
        eprintln!("warning: {unmapped} relays had no IP-to-ASN match and are excluded from aggregation");
    }
    Ok((relays, ip_map))
}

/// ASes hosting at least one of the given relays, restricted to graph members.
/// Relays mapped to ASes missing from the topology are reported.
pub(crate) fn origin_ases(graph: &AsGraph, relays: &[RelayRecord]) -> BTreeSet<Asn> {
    let mut missing = BTreeSet::new();
    let mut origins = BTreeSet::new();
    for relay in relays {
        if let Some(asn) = relay.asn {
            if graph.contains(asn) {
                origins.insert(asn);
            } else {
                missing.insert(asn);
            }
        }
    }
    if !missing.is_empty() {
        eprintln!(
            "warning: {} relay ASes absent from the topology were skipped",
            missing.len()
        );
    }
    origins
}

pub(crate) fn load_clients(
    graph: &AsGraph,
    path: &std::path::Path,
) -> Result<ClientSet, CliError> {
    let text = read_input(path)?;
    let clients = ClientSet::parse(&text).map_err(|e| match e {
        torresil::relaydata::RelayError::DegenerateInput(_) => {
            CliError::Usage(format!("{}: empty client set", path.display()))
        }
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    for (asn, _) in clients.members() {
        if !graph.contains(*asn) {
            return Err(CliError::Data(format!(
                "client AS {asn} is not in the topology"
            )));
        }
    }
    Ok(clients)
}

fn origin_source_csv(vectors: &[ResilienceVector]) -> String {
    let mut out = String::from("source,origin,resilience\n");
    for vec in vectors {
        for (origin, value) in &vec.values {
            let _ = writeln!(out, "{},{},{:.6}", vec.source, origin, value);
        }
    }
    out
}

fn origin_csv(values: &BTreeMap<Asn, f64>) -> String {
    let mut out = String::from("origin,resilience\n");
    for (origin, value) in values {
        let _ = writeln!(out, "{origin},{value:.6}");
    }
    out
}

fn restrict(vec: &ResilienceVector, origins: &BTreeSet<Asn>) -> ResilienceVector {
    ResilienceVector {
        source: vec.source,
        kind: vec.kind,
        values: vec
            .values
            .iter()
            .filter(|(asn, _)| origins.contains(asn))
            .map(|(a, v)| (*a, *v))
            .collect(),
        attacker_count: vec.attacker_count,
    }
}

pub(crate) fn run(args: &ResilienceArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let graph = load_graph(&args.topology)?;
    let (relays, _ip_map) = load_resolved_relays(&args.relays, &args.ip_map)?;
    let tor_ases = origin_ases(&graph, &relays);
    if tor_ases.is_empty() {
        return Err(CliError::Data(
            "no relay resolved to an AS present in the topology".into(),
        ));
    }
    let guard_relays: Vec<RelayRecord> = relays.iter().filter(|r| r.is_guard()).cloned().collect();
    let guard_ases = origin_ases(&graph, &guard_relays);

    let tier1 = match args.attackers {
        AttackerChoice::All => None,
        AttackerChoice::Tier1 => {
            let set = match &args.tier1_file {
                Some(path) => {
                    let text = read_input(path)?;
                    let asns: Result<Vec<Asn>, _> = text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(str::parse)
                        .collect();
                    let asns = asns.map_err(|e| {
                        CliError::Data(format!("{}: invalid ASN: {e}", path.display()))
                    })?;
                    Tier1Set::from_asns(&graph, asns)
                        .map_err(|e| CliError::Data(e.to_string()))?
                }
                None => {
                    Tier1Set::default_for(&graph).map_err(|e| {
                        CliError::Data(format!(
                            "default tier-1 set does not fit this topology ({e}); provide --tier1-file"
                        ))
                    })?
                }
            };
            Some(set)
        }
    };
    let rule = match args.intercept_rule {
        InterceptRuleChoice::Source => InterceptRule::SourceRoute,
        InterceptRuleChoice::Attacker => InterceptRule::AttackerRoute,
    };

    let sources: Vec<Asn> = graph.nodes().collect();
    let hijack_vectors: Vec<ResilienceVector> = sources
        .par_iter()
        .map(|&v| hijack_resilience_from_source(&graph, v, &tor_ases))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let intercept_vectors: Vec<ResilienceVector> = sources
        .par_iter()
        .map(|&v| {
            let attackers = match &tier1 {
                Some(set) => AttackerSet::Restricted(set),
                None => AttackerSet::All,
            };
            intercept_resilience_from_source(&graph, v, &tor_ases, attackers, rule)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;

    let uniform_weights: BTreeMap<Asn, f64> = sources.iter().map(|&v| (v, 1.0)).collect();
    let hijack_all = origin_resilience(&hijack_vectors, &uniform_weights)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let intercept_all = origin_resilience(&intercept_vectors, &uniform_weights)
        .map_err(|e| CliError::Data(e.to_string()))?;

    write_output(&args.out, "origin_hijack_all.csv", &origin_csv(&hijack_all))?;
    write_output(
        &args.out,
        "origin_intercept_all.csv",
        &origin_csv(&intercept_all),
    )?;

    let all_bandwidth = as_bandwidth(&relays);
    let mut cdf_jobs: Vec<(&str, &BTreeMap<Asn, f64>, CdfWeighting, &BTreeMap<Asn, u64>)> = Vec::new();
    let want_uniform = matches!(args.weighting, WeightingChoice::Uniform | WeightingChoice::Both);
    let want_bandwidth =
        matches!(args.weighting, WeightingChoice::Bandwidth | WeightingChoice::Both);
    if want_uniform {
        cdf_jobs.push((
            "cdf_hijack_uniform_all.csv",
            &hijack_all,
            CdfWeighting::Uniform,
            &all_bandwidth,
        ));
        cdf_jobs.push((
            "cdf_intercept_uniform_all.csv",
            &intercept_all,
            CdfWeighting::Uniform,
            &all_bandwidth,
        ));
    }
    if want_bandwidth {
        cdf_jobs.push((
            "cdf_hijack_bandwidth_all.csv",
            &hijack_all,
            CdfWeighting::TorBandwidth,
            &all_bandwidth,
        ));
        cdf_jobs.push((
            "cdf_intercept_bandwidth_all.csv",
            &intercept_all,
            CdfWeighting::TorBandwidth,
            &all_bandwidth,
        ));
    }
    for (name, values, weighting, bandwidth) in cdf_jobs {
        let cdf = cdf_export(values, weighting, bandwidth)
            .map_err(|e| CliError::Data(format!("{name}: {e}")))?;
        write_output(&args.out, name, &cdf.to_csv())?;
    }

    // Per-source tables and client-weighted outputs. Without a client set the
    // per-source tables cover every source.
    match &args.clients {
        None => {
            write_output(
                &args.out,
                "origin_source_hijack.csv",
                &origin_source_csv(&hijack_vectors),
            )?;
            write_output(
                &args.out,
                "origin_source_intercept.csv",
                &origin_source_csv(&intercept_vectors),
            )?;
        }
        Some(path) => {
            let clients = load_clients(&graph, path)?;
            let client_asns: BTreeSet<Asn> = clients.asns().into_iter().collect();
            let client_hijack: Vec<ResilienceVector> = hijack_vectors
                .iter()
                .filter(|v| client_asns.contains(&v.source))
                .map(|v| restrict(v, &guard_ases))
                .collect();
            let client_intercept: Vec<ResilienceVector> = intercept_vectors
                .iter()
                .filter(|v| client_asns.contains(&v.source))
                .map(|v| restrict(v, &guard_ases))
                .collect();
            write_output(
                &args.out,
                "origin_source_hijack.csv",
                &origin_source_csv(&client_hijack),
            )?;
            write_output(
                &args.out,
                "origin_source_intercept.csv",
                &origin_source_csv(&client_intercept),
            )?;

            if guard_ases.is_empty() {
                eprintln!("warning: no guard relay AS in topology; skipping client-weighted outputs");
            } else {
                let weights = clients.weights();
                let hijack_clients = origin_resilience(&client_hijack, &weights)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                let intercept_clients = origin_resilience(&client_intercept, &weights)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                write_output(
                    &args.out,
                    "origin_hijack_clients.csv",
                    &origin_csv(&hijack_clients),
                )?;
                write_output(
                    &args.out,
                    "origin_intercept_clients.csv",
                    &origin_csv(&intercept_clients),
                )?;
                let guard_bandwidth = as_bandwidth(&guard_relays);
                let mut jobs: Vec<(&str, &BTreeMap<Asn, f64>, CdfWeighting)> = Vec::new();
                if want_uniform {
                    jobs.push(("cdf_hijack_uniform_clients.csv", &hijack_clients, CdfWeighting::Uniform));
                    jobs.push((
                        "cdf_intercept_uniform_clients.csv",
                        &intercept_clients,
                        CdfWeighting::Uniform,
                    ));
                }
                if want_bandwidth {
                    jobs.push((
                        "cdf_hijack_bandwidth_clients.csv",
                        &hijack_clients,
                        CdfWeighting::TorBandwidth,
                    ));
                    jobs.push((
                        "cdf_intercept_bandwidth_clients.csv",
                        &intercept_clients,
                        CdfWeighting::TorBandwidth,
                    ));
                }
                for (name, values, weighting) in jobs {
                    let cdf = cdf_export(values, weighting, &guard_bandwidth)
                        .map_err(|e| CliError::Data(format!("{name}: {e}")))?;
                    write_output(&args.out, name, &cdf.to_csv())?;
                }
            }
        }
    }

    eprintln!(
        "resilience: {} sources, {} Tor ASes ({} guard), outputs in {}",
        sources.len(),
        tor_ases.len(),
        guard_ases.len(),
        args.out.display()
    );
    Ok(())
}
