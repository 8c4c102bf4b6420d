//! Brute-force reference enumerator for valley-free path preference.
//!
//! Enumerates every simple valley-free path from a source by depth-first
//! search and records, per reachable node, the best (class, hops) rank and
//! the number of distinct paths achieving it. Exponential in graph size; it
//! exists to cross-check the breadth-first engine on small graphs and shares
//! no traversal code with it.

use std::collections::{BTreeMap, HashSet};

use crate::pathinfer::{Rank, RouteClass};
use crate::topology::{AsGraph, StepKind, TopologyError};
use crate::Asn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WalkStage {
    Up,
    Peer,
    Down,
}

/// Best rank and equal-best path count per reachable node.
#[derive(Debug, Clone, Default)]
pub struct OraclePaths {
    pub best: BTreeMap<Asn, (Rank, u64)>,
}

pub fn enumerate_valley_free(graph: &AsGraph, source: Asn) -> Result<OraclePaths, TopologyError> {
    let first_steps = graph.neighbors(source)?;
    let mut out = OraclePaths::default();
    let mut visited: HashSet<Asn> = HashSet::new();
    visited.insert(source);
    for &(n, kind) in first_steps {
        let (class, stage) = match kind {
            StepKind::ToCustomer => (RouteClass::Customer, WalkStage::Down),
            StepKind::ToPeer => (RouteClass::Peer, WalkStage::Peer),
            StepKind::ToProvider => (RouteClass::Provider, WalkStage::Up),
        };
        record(&mut out, n, Rank::new(class, 1));
        visited.insert(n);
        walk(graph, n, stage, class, 1, &mut visited, &mut out);
        visited.remove(&n);
    }
    Ok(out)
}

fn walk(
    graph: &AsGraph,
    node: Asn,
    stage: WalkStage,
    class: RouteClass,
    depth: u32,
    visited: &mut HashSet<Asn>,
    out: &mut OraclePaths,
) {
    for &(n, kind) in graph.neighbors(node).expect("walk stays in graph") {
        if visited.contains(&n) {
            continue;
        }
        let next_stage = match (stage, kind) {
            (WalkStage::Up, StepKind::ToProvider) => WalkStage::Up,
            (WalkStage::Up, StepKind::ToPeer) => WalkStage::Peer,
            (_, StepKind::ToCustomer) => WalkStage::Down,
            _ => continue,
        };
        record(out, n, Rank::new(class, depth + 1));
        visited.insert(n);
        walk(graph, n, next_stage, class, depth + 1, visited, out);
        visited.remove(&n);
    }
}

fn record(out: &mut OraclePaths, node: Asn, rank: Rank) {
    match out.best.get_mut(&node) {
        None => {
            out.best.insert(node, (rank, 1));
        }
        Some(entry) => {
            if rank < entry.0 {
                *entry = (rank, 1);
            } else if rank == entry.0 {
                entry.1 += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy5_oracle_counts() {
        let g = AsGraph::parse("1|2|0\n1|3|-1\n1|4|-1\n2|4|-1\n3|5|-1\n4|5|-1").unwrap();
        let paths = enumerate_valley_free(&g, 5).unwrap();
        assert_eq!(
            paths.best[&1],
            (Rank::new(RouteClass::Provider, 2), 2),
        );
        assert_eq!(
            paths.best[&2],
            (Rank::new(RouteClass::Provider, 2), 1),
        );
        let paths = enumerate_valley_free(&g, 1).unwrap();
        assert_eq!(paths.best[&5], (Rank::new(RouteClass::Customer, 2), 2));
        assert_eq!(paths.best[&2], (Rank::new(RouteClass::Peer, 1), 1));
    }

    #[test]
    fn rejects_unknown_source() {
        let g = AsGraph::parse("1|2|0").unwrap();
        assert!(enumerate_valley_free(&g, 9).is_err());
    }
}
