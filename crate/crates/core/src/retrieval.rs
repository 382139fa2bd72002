//! Turning raw text into an aligned (token segment, local graph) pair.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;

use crate::kg::{Direction, EntityId, EntityVocab, KnowledgeGraph, RelationId, INTERACTION};
use crate::text::{tokenize, TextSegment, TokenVocab, INT, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalNode {
    /// The interaction node `v_int`, always at index 0.
    Interaction,
    Entity(EntityId),
    /// Zero-initialized stand-in when nothing was linked.
    Dummy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalEdge {
    pub head: usize,
    pub rel: RelationId,
    pub tail: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalKG {
    pub nodes: Vec<LocalNode>,
    pub edges: Vec<LocalEdge>,
    /// Surviving linked entities, sorted.
    pub linked: Vec<EntityId>,
    pub is_dummy: bool,
}

impl LocalKG {
    pub fn dummy() -> Self {
        Self {
            nodes: vec![LocalNode::Interaction, LocalNode::Dummy],
            edges: Vec::new(),
            linked: Vec::new(),
            is_dummy: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entity(&self, index: usize) -> Option<EntityId> {
        match self.nodes.get(index) {
            Some(LocalNode::Entity(e)) => Some(*e),
            _ => None,
        }
    }

    pub fn index_of(&self, e: EntityId) -> Option<usize> {
        self.nodes.iter().position(|n| *n == LocalNode::Entity(e))
    }

    /// Edges between entities, excluding the interaction wiring.
    pub fn kg_edges(&self) -> impl Iterator<Item = &LocalEdge> {
        self.edges.iter().filter(|e| e.rel != INTERACTION)
    }

    /// Checks the structural invariants, returning a description of the first violation.
    pub fn validate(&self, g: &KnowledgeGraph, max_nodes: usize) -> Result<(), String> {
        if self.nodes.first() != Some(&LocalNode::Interaction) {
            return Err("node 0 is not the interaction node".into());
        }
        if self.is_dummy {
            if self.nodes != [LocalNode::Interaction, LocalNode::Dummy] || !self.edges.is_empty() {
                return Err("malformed dummy graph".into());
            }
            return Ok(());
        }
        if self.nodes.len() > max_nodes + 1 {
            return Err(format!("{} nodes exceeds {}", self.nodes.len(), max_nodes + 1));
        }
        let distinct: BTreeSet<_> = self.nodes.iter().map(|n| format!("{n:?}")).collect();
        if distinct.len() != self.nodes.len() {
            return Err("duplicate nodes".into());
        }
        let mut wired = BTreeSet::new();
        for e in &self.edges {
            if e.head == 0 || e.tail == 0 {
                if e.rel != INTERACTION || e.head != 0 {
                    return Err(format!("bad interaction edge {e:?}"));
                }
                wired.insert(self.entity(e.tail).ok_or("interaction edge to non-entity")?);
                continue;
            }
            if e.rel == INTERACTION {
                return Err("interaction relation between entities".into());
            }
            let (h, t) = match (self.entity(e.head), self.entity(e.tail)) {
                (Some(h), Some(t)) => (h, t),
                _ => return Err("edge endpoint is not an entity".into()),
            };
            let exists = g
                .contains(&crate::kg::Triplet { head: h, rel: e.rel, tail: t })
                .map_err(|e| e.to_string())?;
            if !exists {
                return Err(format!("edge {e:?} missing from the global graph"));
            }
        }
        let linked: BTreeSet<_> = self.linked.iter().copied().collect();
        if wired != linked {
            return Err("interaction edges do not match the linked set".into());
        }
        Ok(())
    }
}

/// Tokenizes `text` (truncated to `max_seq_len - 1` tokens after `[INT]`) and links
/// entity mentions with a leftmost-longest dictionary scan.
pub fn link_entities(
    text: &str,
    entities: &EntityVocab,
    tokens: &TokenVocab,
    max_seq_len: usize,
) -> (TextSegment, Vec<EntityId>) {
    let mut seg = TextSegment::empty();
    let mut linked = BTreeSet::new();
    append_linked(&mut seg, &mut linked, text, 0, entities, tokens, max_seq_len);
    (seg, linked.into_iter().collect())
}

/// Links a question and an answer choice as one input, separated by `[SEP]`.
pub fn link_parts(
    parts: &[&str],
    entities: &EntityVocab,
    tokens: &TokenVocab,
    max_seq_len: usize,
) -> (TextSegment, Vec<EntityId>) {
    let mut seg = TextSegment::empty();
    let mut linked = BTreeSet::new();
    let mut offset = 0;
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            if seg.len() >= max_seq_len {
                break;
            }
            seg.push_special(SEP);
        }
        append_linked(&mut seg, &mut linked, part, offset, entities, tokens, max_seq_len);
        offset += part.len() + 1;
    }
    (seg, linked.into_iter().collect())
}

fn append_linked(
    seg: &mut TextSegment,
    linked: &mut BTreeSet<EntityId>,
    text: &str,
    offset: usize,
    entities: &EntityVocab,
    tokens: &TokenVocab,
    max_seq_len: usize,
) {
    let room = max_seq_len.saturating_sub(seg.len());
    let toks: Vec<_> = tokenize(text).into_iter().take(room).collect();
    for m in longest_matches(toks.iter().map(|t| t.text.as_str()), entities) {
        linked.insert(m.entity);
    }
    for t in toks {
        seg.ids.push(tokens.id(&t.text));
        seg.spans.push(Some(t.span.start + offset..t.span.end + offset));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub len: usize,
    pub entity: EntityId,
}

/// Leftmost-longest, non-overlapping alias matches over normalized tokens.
pub fn longest_matches<'a>(tokens: impl IntoIterator<Item = &'a str>, entities: &EntityVocab) -> Vec<Mention> {
    let toks: Vec<&str> = tokens.into_iter().collect();
    let max_len = entities.max_alias_tokens();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let longest = (1..=max_len.min(toks.len() - i))
            .rev()
            .find_map(|n| entities.lookup_alias(&toks[i..i + n].join(" ")).map(|e| (n, e)));
        match longest {
            Some((len, entity)) => {
                out.push(Mention { start: i, len, entity });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Non-linked nodes that sit in the middle of a 2-hop path between two distinct linked entities.
pub fn bridge_nodes(linked: &[EntityId], g: &KnowledgeGraph) -> Vec<EntityId> {
    let linked_set: BTreeSet<EntityId> = linked.iter().copied().collect();
    let mut touching: HashMap<EntityId, BTreeSet<EntityId>> = HashMap::new();
    for &a in &linked_set {
        for adj in g.adjacency(a) {
            if !linked_set.contains(&adj.neighbor) {
                touching.entry(adj.neighbor).or_default().insert(a);
            }
        }
    }
    let mut bridges: Vec<EntityId> = touching
        .into_iter()
        .filter(|(_, ends)| ends.len() >= 2)
        .map(|(b, _)| b)
        .collect();
    bridges.sort();
    bridges
}

/// Builds the local graph for linked entities `v_el`, pruning to at most `max_nodes`
/// entity nodes. Linked entities are kept before any bridge is sampled.
pub fn retrieve_local_kg<R: Rng + ?Sized>(
    v_el: &[EntityId],
    g: &KnowledgeGraph,
    max_nodes: usize,
    rng: &mut R,
) -> LocalKG {
    let max_nodes = max_nodes.max(1);
    let mut linked: Vec<EntityId> = v_el.iter().copied().filter(|e| e.0 < g.num_entities()).collect();
    linked.sort();
    linked.dedup();
    if linked.is_empty() {
        return LocalKG::dummy();
    }
    let mut bridges = bridge_nodes(&linked, g);
    if linked.len() > max_nodes {
        linked = pick(&linked, max_nodes, rng);
        bridges.clear();
    } else if linked.len() + bridges.len() > max_nodes {
        bridges = pick(&bridges, max_nodes - linked.len(), rng);
    }
    let nodes: Vec<LocalNode> = std::iter::once(LocalNode::Interaction)
        .chain(linked.iter().chain(&bridges).map(|&e| LocalNode::Entity(e)))
        .collect();
    let local_index: HashMap<EntityId, usize> =
        linked.iter().chain(&bridges).enumerate().map(|(i, &e)| (e, i + 1)).collect();
    let mut edges: Vec<LocalEdge> = (1..=linked.len())
        .map(|tail| LocalEdge {
            head: 0,
            rel: INTERACTION,
            tail,
        })
        .collect();
    for (i, n) in nodes.iter().enumerate().skip(1) {
        let LocalNode::Entity(e) = n else { continue };
        for adj in g.adjacency(*e) {
            if adj.direction != Direction::Out {
                continue;
            }
            if let Some(&tail) = local_index.get(&adj.neighbor) {
                edges.push(LocalEdge { head: i, rel: adj.rel, tail });
            }
        }
    }
    LocalKG {
        nodes,
        edges,
        linked,
        is_dummy: false,
    }
}

fn pick<R: Rng + ?Sized>(items: &[EntityId], k: usize, rng: &mut R) -> Vec<EntityId> {
    let mut chosen: Vec<EntityId> = sample(rng, items.len(), k).into_iter().map(|i| items[i]).collect();
    chosen.sort();
    chosen
}

/// "head relation tail" sentences for every non-interaction edge, in edge order.
pub fn verbalize_sentences(local: &LocalKG, g: &KnowledgeGraph) -> Vec<String> {
    if local.is_dummy {
        return Vec::new();
    }
    let readable = |s: &str| s.replace('_', " ");
    local
        .kg_edges()
        .filter_map(|e| {
            let h = local.entity(e.head)?;
            let t = local.entity(e.tail)?;
            Some(format!(
                "{} {} {}",
                readable(g.entities().name(h)),
                readable(g.relations().name(e.rel)),
                readable(g.entities().name(t))
            ))
        })
        .collect()
}

/// Appends the verbalized local graph to `segment`, each sentence preceded by `[SEP]`.
/// Sentences that would overflow `max_seq_len` are dropped whole.
pub fn verbalize_kg(
    segment: &TextSegment,
    local: &LocalKG,
    g: &KnowledgeGraph,
    tokens: &TokenVocab,
    max_seq_len: usize,
) -> TextSegment {
    let mut out = segment.clone();
    for sentence in verbalize_sentences(local, g) {
        let ids = tokens.encode(&sentence);
        if out.len() + 1 + ids.len() > max_seq_len {
            break;
        }
        out.push_special(SEP);
        ids.into_iter().for_each(|id| out.push_special(id));
    }
    debug_assert_eq!(out.ids[0], INT);
    out
}
