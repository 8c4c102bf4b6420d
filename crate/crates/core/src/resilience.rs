//! Origin-source resilience to equally-specific prefix hijack and
//! interception attacks, plus aggregation and CDF export.
//!
//! For a source AS `v`, a true origin `t`, and an attacker `a`, the source is
//! resilient when its best route still points at `t` under `a`'s competing
//! announcement. A strictly better rank toward `t` means resilience 1, a
//! strictly worse rank means 0, and equal ranks split by equal-best path
//! counts: p(v,t) / (p(v,t) + p(v,a)).
//!
//! Hijack resilience averages that quantity over every eligible attacker.
//! Interception resilience additionally credits attackers that cannot both
//! capture the source and keep a working route back to the origin; following
//! the pseudocode this is keyed on the source's route classes (see
//! [`InterceptRule`]).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::pathinfer::{explore_from_source, PathState, Rank, RouteClass};
use crate::topology::{AsGraph, Tier1Set, TopologyError};
use crate::Asn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResilienceError {
    #[error("unknown AS {0}")]
    UnknownAsn(Asn),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

impl From<TopologyError> for ResilienceError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::UnknownAsn(a) => ResilienceError::UnknownAsn(a),
            other => ResilienceError::Argument(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResilienceKind {
    Hijack,
    Interception,
}

/// Attackers eligible to launch the announcement. `All` means every AS in the
/// graph other than the source and origin; `Restricted` limits to a configured
/// set (tier-1 networks in the interception study) and renormalizes by the
/// restricted set size.
#[derive(Debug, Clone, Copy)]
pub enum AttackerSet<'a> {
    All,
    Restricted(&'a Tier1Set),
}

/// Which route the interception safety condition is evaluated on.
///
/// `SourceRoute` follows the pseudocode as written: the provider-route test
/// uses the source's route to the origin and to each attacker. `AttackerRoute`
/// is an experimental alternative that tests the attacker's own route to the
/// origin (the stated safety condition), at the cost of one exploration per
/// attacker; it is not used by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterceptRule {
    #[default]
    SourceRoute,
    AttackerRoute,
}

/// Per-source resilience values keyed by true-origin AS.
#[derive(Debug, Clone)]
pub struct ResilienceVector {
    pub source: Asn,
    pub kind: ResilienceKind,
    pub values: BTreeMap<Asn, f64>,
    /// Attacker-universe size excluding the source (the per-origin normalizer
    /// additionally excludes the origin when it belongs to the universe).
    pub attacker_count: usize,
}

/// Probability that `source` keeps routing to `t` when `a` announces the same
/// prefix. Requires `t != a`; either may be unreachable.
pub fn beta(state: &PathState, t: Asn, a: Asn) -> Result<f64, ResilienceError> {
    if t == a {
        return Err(ResilienceError::Argument(
            "origin and attacker must differ".into(),
        ));
    }
    Ok(match (state.rank(t), state.rank(a)) {
        // An attacker whose announcement cannot reach the source cannot
        // deceive it; symmetric ignorance when both are unreachable.
        (None, None) => 0.5,
        (Some(_), None) => 1.0,
        (None, Some(_)) => 0.0,
        (Some(rt), Some(ra)) => {
            if rt < ra {
                1.0
            } else if rt > ra {
                0.0
            } else {
                let pt = state.path_count(t).unwrap() as f64;
                let pa = state.path_count(a).unwrap() as f64;
                pt / (pt + pa)
            }
        }
    })
}

// Rank bookkeeping over one exploration: nodes grouped by rank plus a prefix
// count of strictly-more-preferred reachable nodes.
struct RankIndex {
    groups: BTreeMap<Rank, Vec<Asn>>,
    more_preferred: BTreeMap<Rank, usize>,
    customer_peer_total: usize,
}

impl RankIndex {
    fn build(state: &PathState) -> Self {
        let mut groups: BTreeMap<Rank, Vec<Asn>> = BTreeMap::new();
        for (asn, info) in state.iter() {
            groups.entry(info.rank).or_default().push(asn);
        }
        for members in groups.values_mut() {
            members.sort_unstable();
        }
        let mut more_preferred = BTreeMap::new();
        let mut running = 0usize;
        let mut customer_peer_total = 0usize;
        for (rank, members) in &groups {
            more_preferred.insert(*rank, running);
            running += members.len();
            if rank.class != RouteClass::Provider {
                customer_peer_total += members.len();
            }
        }
        RankIndex {
            groups,
            more_preferred,
            customer_peer_total,
        }
    }

    fn ties_excluding(&self, rank: Rank, origin: Asn) -> impl Iterator<Item = Asn> + '_ {
        self.groups
            .get(&rank)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&a| a != origin)
    }

    fn more_preferred(&self, rank: Rank) -> usize {
        self.more_preferred.get(&rank).copied().unwrap_or(0)
    }

    /// Strictly-more-preferred nodes whose route class is Provider. Only
    /// meaningful for provider-class ranks, where every better provider-class
    /// node has fewer hops.
    fn more_preferred_provider(&self, rank: Rank) -> usize {
        debug_assert_eq!(rank.class, RouteClass::Provider);
        self.more_preferred(rank) - self.customer_peer_total
    }
}

fn check_origins(graph: &AsGraph, origins: &BTreeSet<Asn>) -> Result<(), ResilienceError> {
    for &t in origins {
        if !graph.contains(t) {
            return Err(ResilienceError::UnknownAsn(t));
        }
    }
    Ok(())
}

/// Origin-source hijack resilience from `v` toward each origin, with every
/// other AS as a potential attacker (normalizer N-2).
pub fn hijack_resilience_from_source(
    graph: &AsGraph,
    v: Asn,
    tor_origins: &BTreeSet<Asn>,
) -> Result<ResilienceVector, ResilienceError> {
    check_origins(graph, tor_origins)?;
    let state = explore_from_source(graph, v)?;
    let n_total = graph.node_count();
    if n_total < 3 {
        return Err(ResilienceError::DegenerateInput(
            "graph needs at least 3 ASes for an attacker universe".into(),
        ));
    }
    let norm = (n_total - 2) as f64;
    let index = RankIndex::build(&state);

    let mut values = BTreeMap::new();
    for &t in tor_origins {
        if t == v {
            continue;
        }
        let Some(rank) = state.rank(t) else {
            values.insert(t, 0.0);
            continue;
        };
        let ties: Vec<Asn> = index.ties_excluding(rank, t).collect();
        let more = index.more_preferred(rank);
        // Everything not more-preferred or tied is strictly less preferred,
        // unreachable attackers included.
        let n_less = n_total - 2 - more - ties.len();
        let mut sum = n_less as f64;
        for a in ties {
            sum += beta(&state, t, a)?;
        }
        values.insert(t, sum / norm);
    }
    Ok(ResilienceVector {
        source: v,
        kind: ResilienceKind::Hijack,
        values,
        attacker_count: n_total - 1,
    })
}

/// Origin-source interception resilience from `v`. Attackers that cannot
/// satisfy the safety condition while still capturing `v` count as resilient.
pub fn intercept_resilience_from_source(
    graph: &AsGraph,
    v: Asn,
    tor_origins: &BTreeSet<Asn>,
    attackers: AttackerSet<'_>,
    rule: InterceptRule,
) -> Result<ResilienceVector, ResilienceError> {
    check_origins(graph, tor_origins)?;
    let state = explore_from_source(graph, v)?;
    let n_total = graph.node_count();

    let mut attacker_states: HashMap<Asn, PathState> = HashMap::new();

    let mut values = BTreeMap::new();
    let attacker_count;
    match attackers {
        AttackerSet::All => {
            if n_total < 3 {
                return Err(ResilienceError::DegenerateInput(
                    "graph needs at least 3 ASes for an attacker universe".into(),
                ));
            }
            attacker_count = n_total - 1;
            let index = RankIndex::build(&state);
            let norm = (n_total - 2) as f64;
            for &t in tor_origins {
                if t == v {
                    continue;
                }
                let Some(rank) = state.rank(t) else {
                    values.insert(t, 0.0);
                    continue;
                };
                let value = match rule {
                    InterceptRule::SourceRoute => {
                        let ties: Vec<Asn> = index.ties_excluding(rank, t).collect();
                        let more = index.more_preferred(rank);
                        let n_less = n_total - 2 - more - ties.len();
                        if rank.class == RouteClass::Provider {
                            // Every tie shares the provider class, so the full
                            // tie set is credited and no beta terms remain.
                            let more_safe = index.more_preferred_provider(rank);
                            (n_less + more_safe + ties.len()) as f64 / norm
                        } else {
                            let mut sum = (n_less + more) as f64;
                            for a in ties {
                                sum += beta(&state, t, a)?;
                            }
                            sum / norm
                        }
                    }
                    InterceptRule::AttackerRoute => {
                        let mut sum = 0.0;
                        for a in graph.nodes() {
                            if a == v || a == t {
                                continue;
                            }
                            sum += intercept_contribution(
                                graph,
                                &state,
                                t,
                                a,
                                rank,
                                rule,
                                &mut attacker_states,
                            )?;
                        }
                        sum / norm
                    }
                };
                values.insert(t, value);
            }
        }
        AttackerSet::Restricted(set) => {
            for &t in tor_origins {
                if t == v {
                    continue;
                }
                let eligible: Vec<Asn> = set
                    .asns()
                    .iter()
                    .copied()
                    .filter(|&a| a != v && a != t)
                    .collect();
                if eligible.is_empty() {
                    return Err(ResilienceError::DegenerateInput(format!(
                        "no eligible attackers for origin {t} from source {v}"
                    )));
                }
                let Some(rank) = state.rank(t) else {
                    values.insert(t, 0.0);
                    continue;
                };
                let mut sum = 0.0;
                for a in eligible.iter().copied() {
                    sum += intercept_contribution(
                        graph,
                        &state,
                        t,
                        a,
                        rank,
                        rule,
                        &mut attacker_states,
                    )?;
                }
                values.insert(t, sum / eligible.len() as f64);
            }
            attacker_count = set
                .asns()
                .iter()
                .filter(|&&a| a != v)
                .count();
        }
    }

    Ok(ResilienceVector {
        source: v,
        kind: ResilienceKind::Interception,
        values,
        attacker_count,
    })
}

/// One attacker's contribution to interception resilience (the origin is
/// known reachable at `rank`).
fn intercept_contribution(
    graph: &AsGraph,
    state: &PathState,
    t: Asn,
    a: Asn,
    rank: Rank,
    rule: InterceptRule,
    attacker_states: &mut HashMap<Asn, PathState>,
) -> Result<f64, ResilienceError> {
    let Some(ra) = state.rank(a) else {
        return Ok(1.0); // unreachable attacker cannot deceive the source
    };
    if ra > rank {
        return Ok(1.0);
    }
    let safe = match rule {
        InterceptRule::SourceRoute => {
            rank.class == RouteClass::Provider && ra.class == RouteClass::Provider
        }
        InterceptRule::AttackerRoute => {
            if !attacker_states.contains_key(&a) {
                let explored = explore_from_source(graph, a)?;
                attacker_states.insert(a, explored);
            }
            let attacker_state = &attacker_states[&a];
            // No route back to the origin, or a provider route that the
            // announcement would poison, blocks the interception; the source
            // is then only captured via routes entering from above.
            let restricted = match attacker_state.route_class(t) {
                None => true,
                Some(class) => class == RouteClass::Provider,
            };
            restricted && ra.class == RouteClass::Provider
        }
    };
    if safe {
        return Ok(1.0);
    }
    if ra < rank {
        Ok(0.0)
    } else {
        beta(state, t, a)
    }
}

/// Weighted mean of per-source values for every origin present in at least
/// one vector. Sources missing an origin (the origin itself) are excluded
/// from that origin's normalizer.
pub fn origin_resilience(
    vectors: &[ResilienceVector],
    source_weights: &BTreeMap<Asn, f64>,
) -> Result<BTreeMap<Asn, f64>, ResilienceError> {
    if vectors.is_empty() {
        return Err(ResilienceError::DegenerateInput("no source vectors".into()));
    }
    let kind = vectors[0].kind;
    if vectors.iter().any(|vec| vec.kind != kind) {
        return Err(ResilienceError::Argument(
            "mixed resilience kinds in aggregation".into(),
        ));
    }
    let mut total_weight = 0.0;
    for vec in vectors {
        let w = source_weights.get(&vec.source).ok_or_else(|| {
            ResilienceError::Argument(format!("no weight for source {}", vec.source))
        })?;
        if *w < 0.0 {
            return Err(ResilienceError::Argument(format!(
                "negative weight for source {}",
                vec.source
            )));
        }
        total_weight += w;
    }
    if total_weight <= 0.0 {
        return Err(ResilienceError::DegenerateInput("zero total weight".into()));
    }

    let mut acc: BTreeMap<Asn, (f64, f64)> = BTreeMap::new();
    for vec in vectors {
        let w = source_weights[&vec.source];
        for (&t, &value) in &vec.values {
            let slot = acc.entry(t).or_insert((0.0, 0.0));
            slot.0 += w * value;
            slot.1 += w;
        }
    }
    let mut out = BTreeMap::new();
    for (t, (sum, weight)) in acc {
        if weight > 0.0 {
            out.insert(t, sum / weight);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfWeighting {
    Uniform,
    TorBandwidth,
}

/// Cumulative distribution of resilience values, optionally weighted by each
/// AS's accumulated Tor bandwidth. Equal values merge into one point.
#[derive(Debug, Clone)]
pub struct CdfSeries {
    pub points: Vec<(f64, f64)>,
    pub weighting: CdfWeighting,
}

impl CdfSeries {
    /// CSV with header `resilience,cum_fraction`, six decimal places.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("resilience,cum_fraction\n");
        for (value, fraction) in &self.points {
            let _ = writeln!(out, "{value:.6},{fraction:.6}");
        }
        out
    }
}

pub fn cdf_export(
    values: &BTreeMap<Asn, f64>,
    weighting: CdfWeighting,
    bandwidth: &BTreeMap<Asn, u64>,
) -> Result<CdfSeries, ResilienceError> {
    let mut weighted: Vec<(f64, f64)> = Vec::with_capacity(values.len());
    for (&asn, &value) in values {
        let w = match weighting {
            CdfWeighting::Uniform => 1.0,
            CdfWeighting::TorBandwidth => *bandwidth.get(&asn).ok_or_else(|| {
                ResilienceError::Argument(format!("no bandwidth for AS {asn}"))
            })? as f64,
        };
        weighted.push((value, w));
    }
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(ResilienceError::DegenerateInput("zero total weight".into()));
    }
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut cum = 0.0;
    for (value, w) in weighted {
        cum += w;
        match points.last_mut() {
            Some(last) if last.0 == value => last.1 = cum / total,
            _ => points.push((value, cum / total)),
        }
    }
    Ok(CdfSeries { points, weighting })
}
