//! Port dependency graph used for initialization order and loop detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::config::{MultiModelConfig, PortId, Resolver};
use crate::units::ModelRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct LoopError {
    /// One directed cycle, each port followed by its successor and the last
    /// port wrapping around to the first.
    pub cycle: Vec<PortId>,
}

impl fmt::Display for LoopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("algebraic loop: ")?;
        for p in &self.cycle {
            write!(f, "{p} -> ")?;
        }
        match self.cycle.first() {
            Some(p) => write!(f, "{p}"),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DependencyGraph {
    nodes: BTreeSet<PortId>,
    edges: BTreeSet<(PortId, PortId)>,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, p: PortId) {
        self.nodes.insert(p);
    }

    pub fn add_edge(&mut self, from: PortId, to: PortId) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        self.edges.insert((from, to));
    }

    pub fn nodes(&self) -> &BTreeSet<PortId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(PortId, PortId)> {
        &self.edges
    }

    pub fn has_edge(&self, from: &PortId, to: &PortId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }
}

/// Builds the graph over every connected port, including swap connections,
/// with input-to-output edges inside units whose output has direct
/// feedthrough.
pub fn build_port_graph(cfg: &MultiModelConfig, registry: &ModelRegistry) -> DependencyGraph {
    let mut g = DependencyGraph::new();
    let mut wirings = vec![&cfg.connections];
    wirings.extend(cfg.model_swaps.values().map(|e| &e.swap_connections));
    for w in wirings {
        for (src, sinks) in w {
            g.add_node(src.clone());
            for sink in sinks {
                g.add_edge(src.clone(), sink.clone());
            }
        }
    }

    let resolver = Resolver::new(cfg, registry);
    let mut by_instance: BTreeMap<&str, Vec<&PortId>> = BTreeMap::new();
    for p in &g.nodes {
        by_instance.entry(p.instance.as_str()).or_default().push(p);
    }
    let mut internal = Vec::new();
    for (instance, ports) in by_instance {
        let Some(desc) = resolver.description(instance) else {
            continue;
        };
        for &input in &ports {
            if !desc.inputs().any(|v| v.name == input.variable) {
                continue;
            }
            for &output in &ports {
                if desc
                    .outputs()
                    .any(|v| v.name == output.variable && v.direct_feedthrough)
                {
                    internal.push((input.clone(), output.clone()));
                }
            }
        }
    }
    for (i, o) in internal {
        g.add_edge(i, o);
    }
    g
}

/// Drops every edge whose sink belongs to one of `transferred`.
pub fn prune_transfer_edges(g: &DependencyGraph, transferred: &BTreeSet<String>) -> DependencyGraph {
    DependencyGraph {
        nodes: g.nodes.clone(),
        edges: g
            .edges
            .iter()
            .filter(|(_, to)| !transferred.contains(&to.instance))
            .cloned()
            .collect(),
    }
}

/// Kahn topological sort, ties broken by serialized port id.
pub fn initialization_order(g: &DependencyGraph) -> Result<Vec<PortId>, LoopError> {
    let mut indegree: BTreeMap<&PortId, usize> = g.nodes.iter().map(|p| (p, 0)).collect();
    let mut succ: BTreeMap<&PortId, Vec<&PortId>> = BTreeMap::new();
    for (from, to) in &g.edges {
        *indegree.get_mut(to).expect("edge endpoint is a node") += 1;
        succ.entry(from).or_default().push(to);
    }
    let mut ready: BTreeSet<&PortId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&p, _)| p).collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(p) = ready.pop_first() {
        order.push(p.clone());
        for &s in succ.get(p).into_iter().flatten() {
            let d = indegree.get_mut(s).expect("node");
            *d -= 1;
            if *d == 0 {
                ready.insert(s);
            }
        }
        indegree.remove(p);
    }
    if indegree.is_empty() {
        return Ok(order);
    }
    Err(LoopError {
        cycle: witness(g, &indegree.keys().copied().collect()),
    })
}

fn witness(g: &DependencyGraph, remaining: &BTreeSet<&PortId>) -> Vec<PortId> {
    // Every remaining node has a remaining predecessor, so walking
    // predecessors must revisit a node.
    let pred = |p: &PortId| {
        g.edges
            .iter()
            .filter(|(from, to)| to == p && remaining.contains(from))
            .map(|(from, _)| from)
            .min()
            .expect("remaining node has a remaining predecessor")
    };
    let mut walk: Vec<&PortId> = vec![remaining.first().expect("non-empty")];
    let mut seen: BTreeMap<&PortId, usize> = BTreeMap::new();
    loop {
        let cur = *walk.last().expect("non-empty");
        if let Some(&at) = seen.get(cur) {
            let mut cycle: Vec<PortId> = walk[at..walk.len() - 1].iter().rev().map(|&p| p.clone()).collect();
            rotate(&mut cycle);
            return cycle;
        }
        seen.insert(cur, walk.len() - 1);
        walk.push(pred(cur));
    }
}

/// Starts the cycle at the smallest port whose successor is in another
/// instance, or at the smallest port when the cycle stays in one instance.
fn rotate(cycle: &mut [PortId]) {
    let n = cycle.len();
    let start = (0..n)
        .filter(|&i| cycle[i].instance != cycle[(i + 1) % n].instance)
        .min_by(|&a, &b| cycle[a].cmp(&cycle[b]))
        .or_else(|| (0..n).min_by(|&a, &b| cycle[a].cmp(&cycle[b])))
        .unwrap_or(0);
    cycle.rotate_left(start);
}
