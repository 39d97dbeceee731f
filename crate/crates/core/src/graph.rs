//! Dictionary-encoded knowledge graph, scene records and the scene split.
//!
//! Node and relation labels are mapped to dense ids in first-appearance
//! order. Triples are kept in insertion order and indexed by `(head,
//! relation)` and `(tail, relation)`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RelationId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: NodeId,
    pub relation: RelationId,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: NodeId, relation: RelationId, tail: NodeId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Immutable after construction; all mutation goes through the builders
/// that return a new graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: IndexSet<String>,
    relations: IndexSet<String>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    by_head: HashMap<(NodeId, RelationId), Vec<NodeId>>,
    by_tail: HashMap<(NodeId, RelationId), Vec<NodeId>>,
}

/// Builds a graph from labelled triples. Vocabularies are assigned in
/// first-appearance order (head, relation, tail) and duplicates are dropped.
pub fn build_graph<I, S>(triples: I) -> KnowledgeGraph
where
    I: IntoIterator<Item = (S, S, S)>,
    S: AsRef<str>,
{
    let mut g = KnowledgeGraph::default();
    for (h, r, t) in triples {
        g.insert_labels(h.as_ref(), r.as_ref(), t.as_ref());
    }
    g
}

impl KnowledgeGraph {
    fn insert_labels(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_node(head);
        let r = RelationId(self.relations.insert_full(relation.to_string()).0 as u32);
        let t = self.intern_node(tail);
        self.insert(Triple::new(h, r, t))
    }

    fn intern_node(&mut self, label: &str) -> NodeId {
        if let Some(i) = self.nodes.get_index_of(label) {
            return NodeId(i as u32);
        }
        NodeId(self.nodes.insert_full(label.to_string()).0 as u32)
    }

    fn insert(&mut self, triple: Triple) -> bool {
        if !self.triple_set.insert(triple) {
            return false;
        }
        self.triples.push(triple);
        self.by_head.entry((triple.head, triple.relation)).or_default().push(triple.tail);
        self.by_tail.entry((triple.tail, triple.relation)).or_default().push(triple.head);
        true
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.nodes.get_index_of(label).map(|i| NodeId(i as u32))
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get_index_of(label).map(|i| RelationId(i as u32))
    }

    pub fn node_label(&self, id: NodeId) -> Option<&str> {
        self.nodes.get_index(id.index()).map(String::as_str)
    }

    pub fn relation_label(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id.index()).map(String::as_str)
    }

    pub fn has_relation(&self, id: RelationId) -> bool {
        id.index() < self.relations.len()
    }

    /// Tails `t` with `(head, relation, t)` in the graph, in insertion order.
    pub fn tails(&self, head: NodeId, relation: RelationId) -> &[NodeId] {
        self.by_head.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    /// Heads `h` with `(h, relation, tail)` in the graph, in insertion order.
    pub fn heads(&self, tail: NodeId, relation: RelationId) -> &[NodeId] {
        self.by_tail.get(&(tail, relation)).map_or(&[], Vec::as_slice)
    }

    /// Every node appearing as the tail of `relation`, ascending by id.
    pub fn range_of(&self, relation: RelationId) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.triples.iter().filter(|t| t.relation == relation).map(|t| t.tail).collect();
        set.into_iter().collect()
    }

    /// Triples as labels, in insertion order.
    pub fn labelled_triples(&self) -> impl Iterator<Item = (&str, &str, &str)> + '_ {
        self.triples.iter().map(move |t| {
            (
                self.nodes[t.head.index()].as_str(),
                self.relations[t.relation.index()].as_str(),
                self.nodes[t.tail.index()].as_str(),
            )
        })
    }

    /// A copy of this graph with the same vocabularies, keeping only the
    /// triples accepted by `keep`. Ids stay valid across the copy.
    pub fn filtered(&self, mut keep: impl FnMut(&Triple) -> bool) -> KnowledgeGraph {
        let mut g =
            KnowledgeGraph { nodes: self.nodes.clone(), relations: self.relations.clone(), ..Default::default() };
        for t in &self.triples {
            if keep(t) {
                g.insert(*t);
            }
        }
        g
    }

    /// A copy of this graph with extra triples appended (same vocabularies).
    pub fn with_triples(&self, extra: impl IntoIterator<Item = Triple>) -> Result<KnowledgeGraph> {
        let mut g = self.clone();
        for t in extra {
            g.check_triple(&t)?;
            g.insert(t);
        }
        Ok(g)
    }

    fn check_triple(&self, t: &Triple) -> Result<()> {
        for (kind, id, size) in [
            ("node", t.head.index(), self.num_nodes()),
            ("relation", t.relation.index(), self.num_relations()),
            ("node", t.tail.index(), self.num_nodes()),
        ] {
            if id >= size {
                return Err(Error::IdOutOfRange { kind, id, size });
            }
        }
        Ok(())
    }
}

/// Adds `(s, out_rel, c)` for every `(s, includes, e)` and `(e, type, c)`.
///
/// The input triples are kept; running it on its own output adds nothing.
pub fn reify_includes_type(
    g: &KnowledgeGraph,
    includes: RelationId,
    type_rel: RelationId,
    out_rel_label: &str,
) -> Result<KnowledgeGraph> {
    for rel in [includes, type_rel] {
        if !g.has_relation(rel) {
            return Err(Error::UnknownRelation(rel));
        }
    }
    let mut out = g.clone();
    let out_rel = RelationId(out.relations.insert_full(out_rel_label.to_string()).0 as u32);
    for t in g.triples.iter().filter(|t| t.relation == includes) {
        for &class in g.tails(t.tail, type_rel) {
            out.insert(Triple::new(t.head, out_rel, class));
        }
    }
    Ok(out)
}

/// One scene and its entity types: `observed` is the evidence, `masked` the
/// held-out ground truth (empty at inference time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneRecord {
    pub scene: NodeId,
    pub observed: BTreeSet<NodeId>,
    pub masked: BTreeSet<NodeId>,
}

impl SceneRecord {
    pub fn new(scene: NodeId, observed: impl IntoIterator<Item = NodeId>) -> Self {
        SceneRecord { scene, observed: observed.into_iter().collect(), masked: BTreeSet::new() }
    }

    /// All types known to be in the scene, observed or masked.
    pub fn all_types(&self) -> BTreeSet<NodeId> {
        self.observed.union(&self.masked).copied().collect()
    }
}

/// One record per distinct head of `includes_type`, in order of first
/// appearance; an absent relation yields no records.
pub fn extract_scenes(g: &KnowledgeGraph, includes_type: RelationId) -> Vec<SceneRecord> {
    let mut order = Vec::new();
    let mut grouped: HashMap<NodeId, BTreeSet<NodeId>> = HashMap::new();
    for t in g.triples.iter().filter(|t| t.relation == includes_type) {
        grouped
            .entry(t.head)
            .or_insert_with(|| {
                order.push(t.head);
                BTreeSet::new()
            })
            .insert(t.tail);
    }
    order
        .into_iter()
        .map(|scene| SceneRecord {
            scene,
            observed: grouped.remove(&scene).unwrap_or_default(),
            masked: BTreeSet::new(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, valid, test };
        if [train, valid, test].iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::config("ratios", "fractions must be finite and non-negative"));
        }
        if (train + valid + test - 1.0).abs() > 1e-9 {
            return Err(Error::config("ratios", format!("sum to {}, expected 1", train + valid + test)));
        }
        Ok(r)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, valid: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<SceneRecord>,
    pub valid: Vec<SceneRecord>,
    pub test: Vec<SceneRecord>,
    /// Valid/test scenes with fewer than two types, emitted unmasked.
    pub flagged: Vec<NodeId>,
}

/// Shuffles scenes by `seed`, partitions them by `ratios` and masks
/// `min(k_mask, |observed| - 1)` types in every valid and test scene.
pub fn split_and_mask(scenes: &[SceneRecord], ratios: SplitRatios, k_mask: usize, seed: u64) -> Result<Split> {
    let ratios = SplitRatios::new(ratios.train, ratios.valid, ratios.test)?;
    if k_mask == 0 {
        return Err(Error::config("k_mask", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<SceneRecord> = scenes.to_vec();
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_valid = ((ratios.valid * n as f64).round() as usize).min(n - n_train);

    let mut split = Split::default();
    let mut rest = shuffled.split_off(n_train);
    split.train = shuffled;
    let test = rest.split_off(n_valid);
    for (part, target) in [(rest, &mut split.valid), (test, &mut split.test)] {
        for mut scene in part {
            scene.observed.extend(std::mem::take(&mut scene.masked));
            if scene.observed.len() < 2 {
                split.flagged.push(scene.scene);
            } else {
                let k = k_mask.min(scene.observed.len() - 1);
                let pool: Vec<NodeId> = scene.observed.iter().copied().collect();
                for v in pool.choose_multiple(&mut rng, k) {
                    scene.observed.remove(v);
                    scene.masked.insert(*v);
                }
            }
            target.push(scene);
        }
    }
    Ok(split)
}
