//! AS-relationship topology: loading the CAIDA `asn1|asn2|rel` format and
//! querying typed adjacency.
//!
//! Edges carry one of two relationship classes: a directed provider-to-customer
//! edge, or a symmetric peer-to-peer edge. Traversal direction determines the
//! step class seen by a walker: crossing a provider edge from the customer side
//! is a step toward a provider.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::Asn;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("conflicting relation for AS pair {a}|{b}")]
    Conflict { a: Asn, b: Asn },
    #[error("self-loop on AS {0}")]
    SelfLoop(Asn),
    #[error("unknown AS {0}")]
    UnknownAsn(Asn),
    #[error("AS {0} not present in graph")]
    Tier1NotInGraph(Asn),
}

/// Relationship class of an edge as stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AsRelation {
    /// Directed: first endpoint is the provider of the second.
    ProviderToCustomer,
    /// Symmetric.
    PeerToPeer,
}

/// Class of a single traversal step, from the perspective of the AS taking it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    ToCustomer,
    ToPeer,
    ToProvider,
}

/// Immutable AS-level topology. Safe to share across threads once built.
#[derive(Debug, Clone)]
pub struct AsGraph {
    adj: BTreeMap<Asn, Vec<(Asn, StepKind)>>,
    // Edges in their stored orientation, for lossless serialization.
    edges: Vec<(Asn, Asn, AsRelation)>,
}

impl AsGraph {
    /// Parse the CAIDA AS-relationship text format: one `asn1|asn2|rel` edge
    /// per line, `#` comments, rel -1 = asn1 provider of asn2, rel 0 = peers.
    /// Serial-2 files carry a trailing source column, which is ignored.
    pub fn parse(text: &str) -> Result<AsGraph, TopologyError> {
        let mut builder = AsGraphBuilder::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('|').collect();
            if fields.len() != 3 && fields.len() != 4 {
                return Err(TopologyError::Parse {
                    line,
                    msg: format!("expected `asn1|asn2|rel`, found {} fields", fields.len()),
                });
            }
            let asn1: Asn = fields[0].parse().map_err(|_| TopologyError::Parse {
                line,
                msg: format!("invalid ASN `{}`", fields[0]),
            })?;
            let asn2: Asn = fields[1].parse().map_err(|_| TopologyError::Parse {
                line,
                msg: format!("invalid ASN `{}`", fields[1]),
            })?;
            let rel = match fields[2] {
                "-1" => AsRelation::ProviderToCustomer,
                "0" => AsRelation::PeerToPeer,
                other => {
                    return Err(TopologyError::Parse {
                        line,
                        msg: format!("relation `{other}` outside {{-1,0}}"),
                    })
                }
            };
            builder.add_edge(asn1, asn2, rel).map_err(|e| match e {
                TopologyError::Conflict { a, b } => TopologyError::Parse {
                    line,
                    msg: format!("conflicting relation for AS pair {a}|{b}"),
                },
                TopologyError::SelfLoop(a) => TopologyError::Parse {
                    line,
                    msg: format!("self-loop on AS {a}"),
                },
                other => other,
            })?;
        }
        Ok(builder.build())
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn contains(&self, asn: Asn) -> bool {
        self.adj.contains_key(&asn)
    }

    /// All ASNs in ascending order.
    pub fn nodes(&self) -> impl Iterator<Item = Asn> + '_ {
        self.adj.keys().copied()
    }

    /// Neighbors of `asn` with the step class seen from `asn`, sorted by ASN.
    pub fn neighbors(&self, asn: Asn) -> Result<&[(Asn, StepKind)], TopologyError> {
        self.adj
            .get(&asn)
            .map(Vec::as_slice)
            .ok_or(TopologyError::UnknownAsn(asn))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Serialize back to `asn1|asn2|rel` lines, sorted. Edges keep the
    /// orientation they were loaded with, so a parse/serialize round trip
    /// reproduces the non-comment input up to line order.
    pub fn to_lines(&self) -> String {
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|(a, b, rel)| {
                let code = match rel {
                    AsRelation::ProviderToCustomer => -1,
                    AsRelation::PeerToPeer => 0,
                };
                format!("{a}|{b}|{code}")
            })
            .collect();
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

/// Incremental graph construction; used by the parser and by tests that build
/// synthetic topologies.
#[derive(Debug, Default)]
pub struct AsGraphBuilder {
    nodes: BTreeSet<Asn>,
    // Keyed by unordered pair; value keeps stored orientation.
    pairs: BTreeMap<(Asn, Asn), (Asn, Asn, AsRelation)>,
}

impl AsGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an AS with no edges. Isolated nodes still count toward N.
    pub fn add_node(&mut self, asn: Asn) -> &mut Self {
        self.nodes.insert(asn);
        self
    }

    /// Add an edge; for `ProviderToCustomer`, `a` is the provider of `b`.
    /// Re-adding an identical edge is a no-op; a differing relation (or a
    /// flipped provider direction) for the same pair is a conflict.
    pub fn add_edge(&mut self, a: Asn, b: Asn, rel: AsRelation) -> Result<&mut Self, TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        let key = (a.min(b), a.max(b));
        match self.pairs.entry(key) {
            Entry::Vacant(slot) => {
                slot.insert((a, b, rel));
            }
            Entry::Occupied(existing) => {
                let &(ea, eb, erel) = existing.get();
                let same = match (erel, rel) {
                    (AsRelation::PeerToPeer, AsRelation::PeerToPeer) => true,
                    (AsRelation::ProviderToCustomer, AsRelation::ProviderToCustomer) => {
                        ea == a && eb == b
                    }
                    _ => false,
                };
                if !same {
                    return Err(TopologyError::Conflict { a: key.0, b: key.1 });
                }
            }
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        Ok(self)
    }

    pub fn build(self) -> AsGraph {
        let mut adj: BTreeMap<Asn, Vec<(Asn, StepKind)>> = BTreeMap::new();
        for asn in &self.nodes {
            adj.insert(*asn, Vec::new());
        }
        let mut edges = Vec::with_capacity(self.pairs.len());
        for (_, (a, b, rel)) in self.pairs {
            match rel {
                AsRelation::ProviderToCustomer => {
                    adj.get_mut(&a).unwrap().push((b, StepKind::ToCustomer));
                    adj.get_mut(&b).unwrap().push((a, StepKind::ToProvider));
                }
                AsRelation::PeerToPeer => {
                    adj.get_mut(&a).unwrap().push((b, StepKind::ToPeer));
                    adj.get_mut(&b).unwrap().push((a, StepKind::ToPeer));
                }
            }
            edges.push((a, b, rel));
        }
        for list in adj.values_mut() {
            list.sort_unstable_by_key(|(n, _)| *n);
        }
        AsGraph { adj, edges }
    }
}

/// Configured set of attacker ASes used for interception runs restricted to
/// tier-1 networks. Membership is validated against the graph.
#[derive(Debug, Clone)]
pub struct Tier1Set {
    asns: BTreeSet<Asn>,
}

impl Tier1Set {
    /// Default snapshot of 17 tier-1 ASNs.
    pub const DEFAULT_ASNS: [Asn; 17] = [
        174, 209, 286, 701, 1239, 1299, 2828, 2914, 3257, 3320, 3356, 5511, 6453, 6461, 6762,
        7018, 12956,
    ];

    pub fn from_asns(
        graph: &AsGraph,
        asns: impl IntoIterator<Item = Asn>,
    ) -> Result<Self, TopologyError> {
        let mut set = BTreeSet::new();
        for asn in asns {
            if !graph.contains(asn) {
                return Err(TopologyError::Tier1NotInGraph(asn));
            }
            set.insert(asn);
        }
        Ok(Tier1Set { asns: set })
    }

    pub fn default_for(graph: &AsGraph) -> Result<Self, TopologyError> {
        Self::from_asns(graph, Self::DEFAULT_ASNS)
    }

    pub fn asns(&self) -> &BTreeSet<Asn> {
        &self.asns
    }

    pub fn len(&self) -> usize {
        self.asns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asns.is_empty()
    }
}
