//! `torresil select`: per-client guard selection experiment with seeded picks.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use torresil::guardselect::{
    build_selection, fingerprint_entropy, resilience_probability, sample_guard, GuardCandidate,
    SelectionParams,
};
use torresil::relaydata::{normalize_bandwidth, RelayRecord};
use torresil::resilience::hijack_resilience_from_source;
use torresil::Asn;

use crate::cmd_resilience::{load_clients, load_graph, load_resolved_relays};
use crate::{write_output, CliError, SelectArgs};

const SWEEP_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Serialize)]
struct ClientReport {
    client_asn: Asn,
    alpha: f64,
    g: f64,
    resilience_probability: f64,
    entropy: f64,
    picks: Vec<String>,
}

pub(crate) fn run(args: &SelectArgs) -> Result<(), CliError> {
    let params = SelectionParams {
        alpha: args.alpha,
        g: args.g,
        rng_seed: Some(args.seed),
    };
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let graph = load_graph(&args.topology)?;
    let (relays, _) = load_resolved_relays(&args.relays, &args.ip_map)?;
    let clients = load_clients(&graph, &args.clients)?;

    // Candidates: Guard-flagged relays whose AS exists in the topology,
    // ordered by fingerprint for stable output.
    let mut candidates: Vec<RelayRecord> = relays
        .into_iter()
        .filter(|r| r.is_guard() && r.asn.is_some_and(|a| graph.contains(a)))
        .collect();
    candidates.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
    if candidates.is_empty() {
        return Err(CliError::Data(
            "no guard relay resolved to an AS in the topology".into(),
        ));
    }
    let b_bar = normalize_bandwidth(&candidates, None)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let origin_set = candidates.iter().filter_map(|r| r.asn).collect();

    // Per-client resilience of every candidate's AS, computed in parallel and
    // consumed in client order.
    let client_asns = clients.asns();
    let per_client_resilience: Vec<BTreeMap<Asn, f64>> = client_asns
        .par_iter()
        .map(|&client| {
            hijack_resilience_from_source(&graph, client, &origin_set).map(|v| v.values)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;

    let alphas: Vec<f64> = if args.sweep {
        SWEEP_ALPHAS.to_vec()
    } else {
        vec![args.alpha]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut lines = String::new();
    for &alpha in &alphas {
        // Pick distributions for every client at this alpha.
        let mut pick_maps: Vec<BTreeMap<String, f64>> = Vec::with_capacity(client_asns.len());
        let mut res_maps: Vec<BTreeMap<String, f64>> = Vec::with_capacity(client_asns.len());
        for resilience in &per_client_resilience {
            let cands: Vec<GuardCandidate> = candidates
                .iter()
                .map(|r| GuardCandidate {
                    fingerprint: r.fingerprint.clone(),
                    // A client AS hosting the relay's AS itself keeps perfect
                    // resilience: no third party can win that route.
                    resilience: resilience
                        .get(&r.asn.expect("candidates are mapped"))
                        .copied()
                        .unwrap_or(1.0),
                    bandwidth_norm: b_bar[&r.fingerprint],
                })
                .collect();
            let selection = build_selection(&cands, alpha, args.g)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let picks: BTreeMap<String, f64> = selection
                .relays
                .iter()
                .zip(&selection.pick_probs)
                .map(|(w, &p)| (w.fingerprint.clone(), p))
                .collect();
            let res: BTreeMap<String, f64> = cands
                .iter()
                .map(|c| (c.fingerprint.clone(), c.resilience))
                .collect();
            pick_maps.push(picks);
            res_maps.push(res);
        }

        // Average per-relay entropy of the client distribution; relays no
        // client can pick carry no initiator information and are skipped.
        let mut entropy_sum = 0.0;
        let mut entropy_count = 0usize;
        for relay in &candidates {
            let per_client: BTreeMap<Asn, f64> = client_asns
                .iter()
                .zip(&pick_maps)
                .map(|(&client, picks)| (client, picks[&relay.fingerprint]))
                .collect();
            if per_client.values().any(|&p| p > 0.0) {
                entropy_sum += fingerprint_entropy(&per_client)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                entropy_count += 1;
            }
        }
        let entropy = if entropy_count == 0 {
            0.0
        } else {
            entropy_sum / entropy_count as f64
        };

        for ((&client, picks), res) in client_asns.iter().zip(&pick_maps).zip(&res_maps) {
            let probability = resilience_probability(picks, res)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let weighted: Vec<_> = candidates
                .iter()
                .map(|r| torresil::guardselect::WeightedRelay {
                    fingerprint: r.fingerprint.clone(),
                    resilience: res[&r.fingerprint],
                    r_prime: 0.0,
                    b_bar: b_bar[&r.fingerprint],
                    weight: picks[&r.fingerprint],
                })
                .collect();
            let mut drawn = Vec::with_capacity(args.draws);
            for _ in 0..args.draws {
                drawn.push(
                    sample_guard(&weighted, &mut rng)
                        .map_err(|e| CliError::Data(e.to_string()))?
                        .to_string(),
                );
            }
            let report = ClientReport {
                client_asn: client,
                alpha,
                g: args.g,
                resilience_probability: probability,
                entropy,
                picks: drawn,
            };
            lines.push_str(&serde_json::to_string(&report).expect("report serializes"));
            lines.push('\n');
        }
    }

    write_output(&args.out, "select.jsonl", &lines)?;
    eprintln!(
        "select: {} clients x {} alpha values, {} candidates, output in {}",
        client_asns.len(),
        alphas.len(),
        candidates.len(),
        args.out.display()
    );
    Ok(())
}
