//! Class-based aspect propagation over the instance/class bipartite graph.
//!
//! Instance nodes carry their instance-level aspect distribution over
//! canonical patterns. Each instance links to the single class node of its
//! entity (weight 1); the class node links back with weight `K`. Because the
//! knowledge base assigns one class per entity, two passes reach the fixed
//! point: the first aggregates instances into class distributions, the second
//! smooths every instance towards its class.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::candidates::SegmentedQuery;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;

pub const DEFAULT_K: f64 = 0.1;

/// Distribution over canonical aspect patterns.
pub type PatternDist = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Mean of member instance scores.
    Average,
    /// Fraction of members exhibiting the pattern at all.
    #[default]
    Indicator,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "average" => Ok(Variant::Average),
            "indicator" => Ok(Variant::Indicator),
            other => Err(Error::Config(format!("unknown propagation variant {other:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Average => "average",
            Variant::Indicator => "indicator",
        })
    }
}

/// `(class, property)` pair, e.g. "country travel".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassNode {
    pub class: String,
    pub property: Option<String>,
}

impl fmt::Display for ClassNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.property {
            Some(p) => write!(f, "{} {}", self.class, p),
            None => f.write_str(&self.class),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeRef {
    Instance(usize),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct BipartiteAspectGraph {
    pub instances: Vec<SegmentedQuery>,
    pub class_nodes: Vec<ClassNode>,
    /// class node index of each instance
    pub membership: Vec<usize>,
    pub k: f64,
    /// queries whose entity has no (unambiguous) class
    pub excluded: Vec<SegmentedQuery>,
}

impl BipartiteAspectGraph {
    /// Directed weighted edges: instance→class with weight 1, class→instance
    /// with weight `K`.
    pub fn edges(&self) -> Vec<(NodeRef, NodeRef, f64)> {
        let mut out = Vec::with_capacity(self.instances.len() * 2);
        for (i, &c) in self.membership.iter().enumerate() {
            out.push((NodeRef::Instance(i), NodeRef::Class(c), 1.0));
            out.push((NodeRef::Class(c), NodeRef::Instance(i), self.k));
        }
        out
    }

    pub fn members(&self, class_idx: usize) -> impl Iterator<Item = &SegmentedQuery> {
        self.membership
            .iter()
            .zip(&self.instances)
            .filter(move |(&c, _)| c == class_idx)
            .map(|(_, q)| q)
    }

    pub fn class_of(&self, query: &SegmentedQuery) -> Option<usize> {
        self.instances
            .iter()
            .position(|q| q == query)
            .map(|i| self.membership[i])
    }
}

/// Build the bipartite graph. Instances are sorted and deduplicated; class
/// nodes are sorted.
pub fn build_graph(kb: &KnowledgeBase, queries: &[SegmentedQuery], k: f64) -> BipartiteAspectGraph {
    assert!(k >= 0.0, "K must be nonnegative");
    let mut sorted: Vec<&SegmentedQuery> = queries.iter().collect();
    sorted.sort();
    sorted.dedup();

    let mut resolved: Vec<(SegmentedQuery, ClassNode)> = Vec::new();
    let mut excluded = Vec::new();
    for q in sorted {
        match kb.lookup_class(&q.entity) {
            Some(class) => resolved.push((
                q.clone(),
                ClassNode {
                    class: class.to_string(),
                    property: q.property.clone(),
                },
            )),
            None => excluded.push(q.clone()),
        }
    }
    let mut class_nodes: Vec<ClassNode> = resolved.iter().map(|(_, c)| c.clone()).collect();
    class_nodes.sort();
    class_nodes.dedup();
    let membership = resolved
        .iter()
        .map(|(_, c)| class_nodes.binary_search(c).expect("class node present"))
        .collect();
    BipartiteAspectGraph {
        instances: resolved.into_iter().map(|(q, _)| q).collect(),
        class_nodes,
        membership,
        k,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAspectDistribution {
    pub class_node: ClassNode,
    /// Literal formula values, before any renormalization.
    pub weights: PatternDist,
    pub variant: Variant,
    pub members: usize,
}

impl ClassAspectDistribution {
    /// Weights mixed into instance distributions: the average variant is used
    /// as is, the indicator variant is renormalized to sum to one.
    pub fn mixing_weights(&self) -> PatternDist {
        match self.variant {
            Variant::Average => self.weights.clone(),
            Variant::Indicator => {
                let total: f64 = self.weights.values().sum();
                if total <= 0.0 {
                    return PatternDist::new();
                }
                self.weights.iter().map(|(p, w)| (p.clone(), w / total)).collect()
            }
        }
    }
}

fn aggregate(
    graph: &BipartiteAspectGraph,
    class_idx: usize,
    dists: &BTreeMap<SegmentedQuery, PatternDist>,
    variant: Variant,
) -> ClassAspectDistribution {
    let empty = PatternDist::new();
    let members: Vec<&SegmentedQuery> = graph.members(class_idx).collect();
    let size = members.len() as f64;
    let mut weights = PatternDist::new();
    for q in &members {
        for (pattern, &p) in dists.get(*q).unwrap_or(&empty) {
            let contribution = match variant {
                Variant::Average => p,
                Variant::Indicator => {
                    if p > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            *weights.entry(pattern.clone()).or_insert(0.0) += contribution;
        }
    }
    for w in weights.values_mut() {
        *w /= size;
    }
    weights.retain(|_, w| *w > 0.0);
    ClassAspectDistribution {
        class_node: graph.class_nodes[class_idx].clone(),
        weights,
        variant,
        members: members.len(),
    }
}

/// Class-level aspect distributions, one per class node, in class-node order.
pub fn class_aspects(
    graph: &BipartiteAspectGraph,
    instance_dists: &BTreeMap<SegmentedQuery, PatternDist>,
    variant: Variant,
) -> Vec<ClassAspectDistribution> {
    (0..graph.class_nodes.len())
        .map(|c| aggregate(graph, c, instance_dists, variant))
        .collect()
}

/// Mix an instance distribution with its class distribution:
/// `p = (p_inst + K * p_class) / (1 + K)` over the union of both supports.
pub fn smooth(instance: &PatternDist, class: &ClassAspectDistribution, k: f64) -> PatternDist {
    assert!(k >= 0.0, "K must be nonnegative");
    let mixing = class.mixing_weights();
    let mut out = PatternDist::new();
    for pattern in instance.keys().chain(mixing.keys()) {
        if out.contains_key(pattern) {
            continue;
        }
        let p_inst = instance.get(pattern).copied().unwrap_or(0.0);
        let p_class = mixing.get(pattern).copied().unwrap_or(0.0);
        out.insert(pattern.clone(), (p_inst + k * p_class) / (1.0 + k));
    }
    out
}

/// Node labels after some number of propagation passes.
#[derive(Debug, Clone)]
pub struct PropagationState {
    pub classes: Vec<ClassAspectDistribution>,
    pub instances: BTreeMap<SegmentedQuery, PatternDist>,
}

/// Run `passes` alternating updates starting from the instance-level
/// distributions. Odd passes refresh class nodes from their members, even
/// passes smooth every instance against its class.
///
/// The average variant aggregates the members' current labels. The
/// indicator variant is defined on instance-level evidence, so it always
/// aggregates the injected distributions.
pub fn propagate_passes(
    graph: &BipartiteAspectGraph,
    instance_dists: &BTreeMap<SegmentedQuery, PatternDist>,
    variant: Variant,
    passes: usize,
) -> PropagationState {
    let empty = PatternDist::new();
    let mut state = PropagationState {
        classes: Vec::new(),
        instances: graph
            .instances
            .iter()
            .map(|q| (q.clone(), instance_dists.get(q).cloned().unwrap_or_default()))
            .collect(),
    };
    for pass in 0..passes {
        if pass % 2 == 0 {
            let source = match variant {
                Variant::Average => &state.instances,
                Variant::Indicator => instance_dists,
            };
            state.classes = class_aspects(graph, source, variant);
        } else {
            for (i, q) in graph.instances.iter().enumerate() {
                let class = &state.classes[graph.membership[i]];
                let seed = instance_dists.get(q).unwrap_or(&empty);
                state.instances.insert(q.clone(), smooth(seed, class, graph.k));
            }
        }
    }
    state
}

/// Smoothed distribution for every instance node (two passes).
pub fn propagate(
    graph: &BipartiteAspectGraph,
    instance_dists: &BTreeMap<SegmentedQuery, PatternDist>,
    variant: Variant,
) -> BTreeMap<SegmentedQuery, PatternDist> {
    propagate_passes(graph, instance_dists, variant, 2).instances
}

/// Write class distributions as `class_node<TAB>pattern<TAB>weight` rows.
/// The class node column is `class` or `class|property`.
pub fn write_class_distributions<W: Write>(mut out: W, dists: &[ClassAspectDistribution]) -> std::io::Result<()> {
    for d in dists {
        let node = match &d.class_node.property {
            Some(p) => format!("{}|{}", d.class_node.class, p),
            None => d.class_node.class.clone(),
        };
        for (pattern, w) in &d.weights {
            writeln!(out, "{node}\t{pattern}\t{w}")?;
        }
    }
    Ok(())
}

/// Read rows written by [`write_class_distributions`].
pub fn read_class_distributions<R: BufRead>(input: R, variant: Variant) -> Result<Vec<ClassAspectDistribution>> {
    let mut by_node: BTreeMap<ClassNode, PatternDist> = BTreeMap::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<class distributions>", e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::parse("<class distributions>", idx + 1, "expected class_node, pattern, weight");
        if cols.len() != 3 {
            return Err(bad());
        }
        let weight: f64 = cols[2].trim().parse().map_err(|_| bad())?;
        let (class, property) = match cols[0].split_once('|') {
            Some((c, p)) => (c.to_string(), Some(p.to_string())),
            None => (cols[0].to_string(), None),
        };
        by_node
            .entry(ClassNode { class, property })
            .or_default()
            .insert(cols[1].to_string(), weight);
    }
    Ok(by_node
        .into_iter()
        .map(|(class_node, weights)| ClassAspectDistribution {
            class_node,
            weights,
            variant,
            members: 0,
        })
        .collect())
}
