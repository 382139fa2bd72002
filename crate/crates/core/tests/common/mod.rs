//! Reference implementations shared by the integration tests and the acceptance run.
#![allow(dead_code)]

pub mod checks;
pub mod ops;

use std::collections::{BTreeSet, VecDeque};

use dragonforge::config::{Provenance, RunConfig};
use dragonforge::encoder::{EncoderConfig, Fusion, Initializer, VocabSizes};
use dragonforge::kg::{KnowledgeGraph, LoadOptions, RelationId};
use dragonforge::numerics::{Binding, ParamGroup, ParamId, ParamStore, Tape, Tensor};
use dragonforge::pretrain::corrupt::EdgeHoldout;
use dragonforge::pretrain::heads::{LinkPredHead, NegativeTerm, Scorer};
use dragonforge::pretrain::optim::{Adam, OptimConfig};
use dragonforge::retrieval::{LocalEdge, LocalKG, LocalNode};
use dragonforge::rng::SeedStream;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const D: usize = 8;
pub const RELS: usize = 3;

pub fn tiny_encoder(fusion: Fusion) -> EncoderConfig {
    EncoderConfig {
        n_text_layers: 1,
        n_fusion_layers: 2,
        d_text: 8,
        d_node: 8,
        heads_text: 2,
        heads_gnn: 2,
        d_ff: 16,
        d_mint_hidden: 12,
        dropout: 0.0,
        max_seq_len: 16,
        max_nodes: 8,
        fusion,
    }
}

pub fn sizes(g: &KnowledgeGraph, tokens: usize) -> VocabSizes {
    VocabSizes {
        tokens,
        entities: g.num_entities(),
        relations: g.relations().len(),
    }
}

pub fn lp_head(scorer: Scorer, store: &mut ParamStore<f64>, negative_term: NegativeTerm) -> LinkPredHead {
    let mut init = Initializer {
        store,
        seeds: SeedStream::new(3),
    };
    LinkPredHead::new(&mut init, scorer, RELS, D, 0.0, negative_term).unwrap()
}

pub fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        for x in p.tensor.data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn score_one(lp: &LinkPredHead, store: &ParamStore<f64>, h: &[f64], r: usize, t: &[f64]) -> f64 {
    let tape = Tape::new();
    let p = Binding::new(&tape, store);
    let hv = tape.constant(Tensor::new(vec![1, h.len()], h.to_vec()).unwrap());
    let tv = tape.constant(Tensor::new(vec![1, t.len()], t.to_vec()).unwrap());
    lp.score(&p, hv, &[r], tv).unwrap().to_vec()[0]
}

/// Triple loops over the raw parameter values; complex arithmetic spelled out for RotatE.
pub fn brute_force_score(scorer: Scorer, store: &ParamStore<f64>, h: &[f64], r: usize, t: &[f64]) -> f64 {
    let rel = store.by_name("lp.rel").unwrap().row(r).to_vec();
    let d = h.len();
    match scorer {
        Scorer::DistMult => {
            let mut s = 0.0;
            for i in 0..d {
                s += h[i] * rel[i] * t[i];
            }
            s
        }
        Scorer::TransE => {
            let mut s = 0.0;
            for i in 0..d {
                s += (h[i] + rel[i] - t[i]).powi(2);
            }
            -s.sqrt()
        }
        Scorer::RotatE => {
            let phase = store.by_name("lp.rotate_phase").unwrap().row(r).to_vec();
            let half = d / 2;
            let mut s = 0.0;
            for k in 0..half {
                // (a + bi)(cos θ + i sin θ) - (c + di)
                let (a, b) = (h[k], h[half + k]);
                let (c, e) = (t[k], t[half + k]);
                let (cr, ci) = (phase[k].cos(), phase[k].sin());
                let re = a * cr - b * ci - c;
                let im = a * ci + b * cr - e;
                s += re * re + im * im;
            }
            -s.sqrt()
        }
    }
}

/// Largest deviation from the brute-force score over `cases` random inputs.
pub fn scoring_max_diff(scorer: Scorer, cases: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let lp = lp_head(scorer, &mut store, NegativeTerm::Verbatim);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        randomize(&mut store, rng);
        let h = random_vec(rng, D);
        let t = random_vec(rng, D);
        let r = rng.random_range(0..RELS);
        let got = score_one(&lp, &store, &h, r, &t);
        worst = worst.max((got - brute_force_score(scorer, &store, &h, r, &t)).abs());
    }
    worst
}

/// Up to 50 entities, some of them isolated, over three relations.
pub fn random_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.random_range(2..=50);
    let m = rng.random_range(1..=3 * n);
    let names: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
    let rels = ["r0", "r1", "r2"];
    let rows: Vec<(usize, usize, usize)> =
        (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..3), rng.random_range(0..n))).collect();
    let mut g = KnowledgeGraph::from_named(
        rows.iter().map(|&(h, r, t)| (names[h].as_str(), rels[r], names[t].as_str())),
        LoadOptions::default(),
    );
    for name in &names {
        g.entities_mut().intern(name);
    }
    g
}

/// Every node on a path of at most two hops between two distinct linked entities,
/// found by breadth-first enumeration over the undirected triplet list.
pub fn bfs_oracle(linked: &BTreeSet<usize>, g: &KnowledgeGraph) -> BTreeSet<usize> {
    let mut adj = vec![BTreeSet::new(); g.num_entities()];
    for t in g.triplets() {
        adj[t.head.0].insert(t.tail.0);
        adj[t.tail.0].insert(t.head.0);
    }
    let mut out = linked.clone();
    for &start in linked {
        let mut queue = VecDeque::from([(start, vec![start])]);
        while let Some((v, path)) = queue.pop_front() {
            if path.len() > 1 && linked.contains(&v) {
                out.extend(path.iter().copied());
            }
            if path.len() == 3 {
                continue;
            }
            for &u in &adj[v] {
                if !path.contains(&u) {
                    let mut p = path.clone();
                    p.push(u);
                    queue.push_back((u, p));
                }
            }
        }
    }
    out
}

pub fn entity_set(local: &LocalKG) -> BTreeSet<usize> {
    local.nodes.iter().filter_map(|n| local_entity(n)).collect()
}

fn local_entity(n: &LocalNode) -> Option<usize> {
    match n {
        LocalNode::Entity(e) => Some(e.0),
        _ => None,
    }
}

/// Reorders the non-interaction nodes and reverses the edge list; returns the new
/// graph and the old-to-new index map.
pub fn permute(local: &LocalKG, rng: &mut ChaCha8Rng) -> (LocalKG, Vec<usize>) {
    let mut order: Vec<usize> = (1..local.nodes.len()).collect();
    order.shuffle(rng);
    let mut map = vec![0; local.nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new + 1;
    }
    let mut nodes = vec![LocalNode::Interaction];
    nodes.extend(order.iter().map(|&o| local.nodes[o]));
    let mut edges: Vec<LocalEdge> = local
        .edges
        .iter()
        .map(|e| LocalEdge {
            head: map[e.head],
            rel: e.rel,
            tail: map[e.tail],
        })
        .collect();
    edges.reverse();
    (
        LocalKG {
            nodes,
            edges,
            ..local.clone()
        },
        map,
    )
}

/// One-dimensional DistMult with a unit relation: each score is the product of two node values.
pub fn scalar_loss(negative_term: NegativeTerm, nodes: &[f64], pos: (usize, usize), negs: &[(usize, usize)]) -> f64 {
    let mut store = ParamStore::new();
    let mut init = Initializer {
        store: &mut store,
        seeds: SeedStream::new(0),
    };
    let lp = LinkPredHead::new(&mut init, Scorer::DistMult, 1, 1, 0.0, negative_term).unwrap();
    let holdout = EdgeHoldout {
        positives: vec![LocalEdge {
            head: pos.0,
            rel: RelationId(0),
            tail: pos.1,
        }],
        negatives: vec![negs.to_vec()],
        forced: false,
    };
    let tape = Tape::new();
    let p = Binding::new(&tape, &store);
    let v = tape.constant(Tensor::new(vec![nodes.len(), 1], nodes.to_vec()).unwrap());
    lp.loss(&p, &holdout, v).unwrap().unwrap().item()
}

/// φ for positive and negative under the current store.
pub fn pair_scores(lp: &LinkPredHead, store: &ParamStore<f64>, nodes: ParamId) -> (f64, f64) {
    let v = store.tensor(nodes);
    (score_one(lp, store, v.row(0), 0, v.row(1)), score_one(lp, store, v.row(0), 0, v.row(2)))
}

/// One small Adam step on a single positive/negative pair; returns
/// `[φ⁺ before, φ⁺ after, φ⁻ before, φ⁻ after]`.
pub fn sign_step(scorer: Scorer) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let lp = lp_head(scorer, &mut store, NegativeTerm::Verbatim);
    let nodes =
        store.insert("nodes", Tensor::from_fn(&[3, D], |_| rng.random_range(-0.5..0.5)), ParamGroup::Other).unwrap();
    let holdout = EdgeHoldout {
        positives: vec![LocalEdge {
            head: 0,
            rel: RelationId(0),
            tail: 1,
        }],
        negatives: vec![vec![(0, 2)]],
        forced: false,
    };
    let (pos0, neg0) = pair_scores(&lp, &store, nodes);
    {
        let tape = Tape::new();
        let p = Binding::new(&tape, &store);
        let loss = lp.loss(&p, &holdout, p.var(nodes)).unwrap().unwrap();
        tape.backward(loss).unwrap();
        let grads = p.grads();
        store.zero_grad();
        store.accumulate(&grads);
    }
    let mut adam = Adam::new(
        OptimConfig {
            lr_other: 1e-4,
            warmup_ratio: 0.0,
            total_steps: 1,
            ..OptimConfig::default()
        },
        &store,
    );
    adam.step(&mut store);
    let mut probe = store.clone();
    probe.zero_grad();
    let (pos1, neg1) = pair_scores(&lp, &probe, nodes);
    [pos0, pos1, neg0, neg1]
}

/// Settings for a world and model small enough to pretrain in seconds.
pub const TINY_RUN: &str = "
seed = 7
world.n_entities = 60
world.n_relations = 4
world.n_facts = 300
world.n_clusters = 4
model.n_text_layers = 1
model.n_fusion_layers = 1
model.d_text = 16
model.d_node = 16
model.heads_text = 2
model.d_ff = 32
model.d_mint_hidden = 32
model.dropout = 0
model.max_seq_len = 48
model.max_nodes = 16
pretrain.steps = 20
pretrain.batch_size = 4
finetune.epochs = 2
baseline.epochs = 3
";

pub fn tiny_run_config(overrides: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.merge_text(TINY_RUN, "tiny", Provenance::File).unwrap();
    for (k, v) in overrides {
        cfg.set(k, v, Provenance::Flag).unwrap();
    }
    cfg
}
