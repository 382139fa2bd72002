//! Token masking and edge holdout.

use rand::Rng;

use crate::kg::INTERACTION;
use crate::retrieval::{LocalEdge, LocalKG};
use crate::text::{TextSegment, TokenId, INT, MASK, PAD, SEP};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskingPlan {
    pub positions: Vec<usize>,
    pub originals: Vec<TokenId>,
    /// Set when sampling drew nothing and one position was masked anyway.
    pub forced: bool,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn is_maskable(position: usize, id: TokenId) -> bool {
    position > 0 && !matches!(id, INT | PAD | SEP | MASK)
}

/// Replaces each eligible token by `[MASK]` with probability `rate`. An empty draw
/// masks one uniformly chosen eligible token. A segment with no eligible token
/// yields an empty plan.
pub fn apply_masking<R: Rng + ?Sized>(seg: &TextSegment, rate: f64, rng: &mut R) -> (TextSegment, MaskingPlan) {
    let eligible: Vec<usize> = (0..seg.len()).filter(|&i| is_maskable(i, seg.ids[i])).collect();
    let mut plan = MaskingPlan::default();
    if eligible.is_empty() {
        return (seg.clone(), plan);
    }
    plan.positions = eligible.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
    if plan.positions.is_empty() {
        plan.positions.push(eligible[rng.random_range(0..eligible.len())]);
        plan.forced = true;
    }
    let mut out = seg.clone();
    for &p in &plan.positions {
        plan.originals.push(out.ids[p]);
        out.ids[p] = MASK;
    }
    (out, plan)
}

/// Held-out positives with, for each, corrupted `(head, tail)` local index pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeHoldout {
    pub positives: Vec<LocalEdge>,
    pub negatives: Vec<Vec<(usize, usize)>>,
    pub forced: bool,
}

impl EdgeHoldout {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Removes each entity-entity edge with probability `rate` from the encoder's view
/// and draws `n` negatives per removed edge by replacing its head or tail with another
/// local entity node.
pub fn hold_out_edges<R: Rng + ?Sized>(local: &LocalKG, rate: f64, n: usize, rng: &mut R) -> (LocalKG, EdgeHoldout) {
    let mut holdout = EdgeHoldout::default();
    if local.is_dummy {
        return (local.clone(), holdout);
    }
    let candidates: Vec<usize> = (0..local.edges.len()).filter(|&i| local.edges[i].rel != INTERACTION).collect();
    if candidates.is_empty() {
        return (local.clone(), holdout);
    }
    let mut held: Vec<usize> = candidates.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
    if held.is_empty() {
        held.push(candidates[rng.random_range(0..candidates.len())]);
        holdout.forced = true;
    }
    let n_nodes = local.nodes.len();
    for &i in &held {
        let pos = local.edges[i];
        let mut negs = Vec::with_capacity(n);
        // With a single entity node every corruption reproduces the positive.
        if n_nodes > 2 {
            while negs.len() < n {
                let node = rng.random_range(1..n_nodes);
                let neg = if rng.random::<bool>() { (node, pos.tail) } else { (pos.head, node) };
                if neg != (pos.head, pos.tail) {
                    negs.push(neg);
                }
            }
        }
        holdout.positives.push(pos);
        holdout.negatives.push(negs);
    }
    let mut reduced = local.clone();
    reduced.edges = local
        .edges
        .iter()
        .enumerate()
        .filter(|(i, _)| !held.contains(i))
        .map(|(_, e)| *e)
        .collect();
    (reduced, holdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, KnowledgeGraph, LoadOptions};
    use crate::retrieval::retrieve_local_kg;
    use crate::rng::SeedStream;

    fn seg(n: usize) -> TextSegment {
        let mut s = TextSegment::empty();
        (0..n).for_each(|i| s.push_special(10 + i as TokenId));
        s
    }

    #[test]
    fn tiny_rate_forces_one_mask() {
        let mut rng = SeedStream::new(0).rng("m");
        let (out, plan) = apply_masking(&seg(20), 1e-9, &mut rng);
        assert_eq!(plan.positions.len(), 1);
        assert!(plan.forced);
        assert_eq!(out.ids.iter().filter(|&&i| i == MASK).count(), 1);
    }

    #[test]
    fn full_rate_masks_everything_but_int() {
        let mut rng = SeedStream::new(0).rng("m");
        let (out, plan) = apply_masking(&seg(20), 1.0, &mut rng);
        assert_eq!(plan.positions, (1..21).collect::<Vec<_>>());
        assert_eq!(out.ids[0], INT);
    }

    #[test]
    fn no_eligible_tokens_gives_empty_plan() {
        let mut s = TextSegment::empty();
        s.push_special(SEP);
        let (_, plan) = apply_masking(&s, 0.5, &mut SeedStream::new(0).rng("m"));
        assert!(plan.is_empty());
    }

    #[test]
    fn single_edge_is_forced_out() {
        let g = KnowledgeGraph::from_named([("a", "r", "b")], LoadOptions::default());
        let local = retrieve_local_kg(&[EntityId(0), EntityId(1)], &g, 8, &mut SeedStream::new(0).rng("t"));
        let (reduced, h) = hold_out_edges(&local, 0.15, 4, &mut SeedStream::new(0).rng("h"));
        assert_eq!(h.positives.len(), 1);
        assert!(reduced.edges.iter().all(|e| e.rel == INTERACTION));
        for (p, negs) in h.positives.iter().zip(&h.negatives) {
            assert_eq!(negs.len(), 4);
            for &(a, b) in negs {
                assert!(a != 0 && b != 0);
                assert_eq!(usize::from(a != p.head) + usize::from(b != p.tail), 1);
            }
        }
    }
}
