//! Full checks that return their measurements, so each test asserts its own bound.

use std::collections::BTreeSet;

use dragonforge::checkpoint::{Checkpoint, CheckpointRef};
use dragonforge::config::RunConfig;
use dragonforge::encoder::{Encoder, EncoderOutput, Fusion, Mode};
use dragonforge::eval::ablation::Bench;
use dragonforge::eval::synthetic::{SyntheticWorld, WorldConfig};
use dragonforge::kg::{EntityId, KnowledgeGraph, LoadOptions, RelationId, INTERACTION};
use dragonforge::numerics::gradcheck::{check_store, GradCheckReport};
use dragonforge::numerics::{Binding, ParamStore, Tape, Tensor, Var};
use dragonforge::model::Model;
use dragonforge::pretrain::{build_examples, Pretrainer, TrainExample};
use dragonforge::pretrain::corrupt::{apply_masking, hold_out_edges, is_maskable};
use dragonforge::retrieval::{retrieve_local_kg, LocalEdge, LocalKG, LocalNode};
use dragonforge::rng::SeedStream;
use dragonforge::text::{segment_documents, TextSegment, TokenId, TokenVocab, INT, SEP};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bfs_oracle, entity_set, permute, random_graph, sizes, tiny_encoder};

pub const TOKENS: usize = 12;
pub const RATE: f64 = 0.15;

/// Twelve entities, thirty random facts over three relations.
pub fn graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let names: Vec<String> = (0..12).map(|i| format!("e{i}")).collect();
    let rows: Vec<(usize, usize, usize)> =
        (0..30).map(|_| (rng.random_range(0..12), rng.random_range(0..3), rng.random_range(0..12))).collect();
    let rels = ["r0", "r1", "r2"];
    let mut g = KnowledgeGraph::from_named(
        rows.iter().map(|&(h, r, t)| (names[h].as_str(), rels[r], names[t].as_str())),
        LoadOptions::default(),
    );
    for n in &names {
        g.entities_mut().intern(n);
    }
    g
}

pub fn segment(rng: &mut ChaCha8Rng, len: usize) -> TextSegment {
    let mut s = TextSegment::empty();
    for _ in 1..len {
        s.push_special(rng.random_range(5..TOKENS as TokenId));
    }
    s
}

pub fn local(rng: &mut ChaCha8Rng, g: &KnowledgeGraph, k: usize) -> LocalKG {
    let linked: Vec<EntityId> = sample(rng, g.num_entities(), k).into_iter().map(EntityId).collect();
    retrieve_local_kg(&linked, g, 8, rng)
}

pub fn f64s(v: Var<'_, f64>) -> Tensor<f64> {
    (*v.value()).clone()
}

fn projection_loss<'t>(out: &EncoderOutput<'t, f64>, tape: &'t Tape<f64>) -> dragonforge::Result<Var<'t, f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let wt = tape.constant(Tensor::from_fn(&out.tokens.shape(), |_| rng.random_range(-1.0..1.0)));
    let wn = tape.constant(Tensor::from_fn(&out.nodes.shape(), |_| rng.random_range(-1.0..1.0)));
    Ok(out.tokens.mul(wt)?.sum()?.add(out.nodes.mul(wn)?.sum()?)?)
}

/// Every encoder parameter at d=8: four text tokens after [INT], three entity nodes,
/// two fusion layers.
pub fn encoder_gradcheck(fusion: Fusion) -> GradCheckReport {
    let g = KnowledgeGraph::from_named([("a", "r", "b"), ("b", "s", "c"), ("c", "r", "a")], LoadOptions::default());
    let lk = retrieve_local_kg(&[EntityId(0), EntityId(1), EntityId(2)], &g, 8, &mut SeedStream::new(0).rng("t"));
    assert_eq!(lk.nodes.len(), 4);
    let seg = TextSegment {
        ids: vec![2, 5, 6, 7, 8],
        spans: vec![None; 5],
    };
    let mut store = ParamStore::<f64>::new();
    let enc = Encoder::new(tiny_encoder(fusion), sizes(&g, TOKENS), &mut store, SeedStream::new(2)).unwrap();
    // Spread the weights so that gradients are not dominated by the init scale.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (_, p) in store.iter_mut() {
        for x in p.tensor.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    check_store(&store, 1e-5, None, |p| {
        let out = enc.encode(p, &seg, &lk, Mode::Eval, None)?;
        projection_loss(&out, p.tape())
    })
    .unwrap()
}

/// Largest deviation over `cases` random node permutations: token outputs must not move,
/// node outputs must follow the permutation.
pub fn equivariance_worst(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < cases {
        let g = graph(&mut rng);
        let k = rng.random_range(2..=5);
        let lk = local(&mut rng, &g, k);
        if lk.nodes.len() < 3 {
            continue;
        }
        let len = rng.random_range(2..=10);
        let seg = segment(&mut rng, len);
        let mut store = ParamStore::<f64>::new();
        let enc =
            Encoder::new(tiny_encoder(Fusion::Bidirectional), sizes(&g, TOKENS), &mut store, SeedStream::new(checked as u64))
                .unwrap();
        let (perm, map) = permute(&lk, &mut rng);
        let tape = Tape::new();
        let p = Binding::new(&tape, &store);
        let a = enc.encode(&p, &seg, &lk, Mode::Eval, None).unwrap();
        let b = enc.encode(&p, &seg, &perm, Mode::Eval, None).unwrap();
        worst = worst.max(f64s(a.tokens).max_abs_diff(&f64s(b.tokens)));
        let (va, vb) = (f64s(a.nodes), f64s(b.nodes));
        for (old, &new) in map.iter().enumerate() {
            for (x, y) in va.row(old).iter().zip(vb.row(new)) {
                worst = worst.max((x - y).abs());
            }
        }
        checked += 1;
    }
    worst
}

fn long_segment(len: usize) -> TextSegment {
    let mut s = TextSegment::empty();
    for i in 1..len {
        s.push_special(if i % 25 == 0 { SEP } else { 10 + i as u32 });
    }
    s
}

/// Fraction of eligible tokens masked over at least 10^5 eligible positions.
pub fn masked_fraction() -> f64 {
    let seeds = SeedStream::new(5);
    let seg = long_segment(101);
    let eligible_per = (0..seg.len()).filter(|&i| is_maskable(i, seg.ids[i])).count();
    let (mut eligible, mut masked) = (0usize, 0usize);
    let mut i = 0;
    while eligible < 100_000 {
        let (_, plan) = apply_masking(&seg, RATE, &mut seeds.rng_at("mask", i));
        eligible += eligible_per;
        masked += plan.positions.len();
        i += 1;
    }
    masked as f64 / eligible as f64
}

/// A local graph with every entity wired to [INT] and `n_edges` KG edges.
pub fn wide_graph(n_entities: usize, n_edges: usize) -> LocalKG {
    let nodes = std::iter::once(LocalNode::Interaction)
        .chain((0..n_entities).map(|e| LocalNode::Entity(EntityId(e))))
        .collect();
    let mut edges: Vec<LocalEdge> = (1..=n_entities)
        .map(|tail| LocalEdge {
            head: 0,
            rel: INTERACTION,
            tail,
        })
        .collect();
    for k in 0..n_edges {
        edges.push(LocalEdge {
            head: 1 + k % n_entities,
            rel: RelationId(1 + k % 3),
            tail: 1 + (k * 7 + 3) % n_entities,
        });
    }
    LocalKG {
        nodes,
        edges,
        linked: (0..n_entities).map(EntityId).collect(),
        is_dummy: false,
    }
}

/// Fraction of eligible KG edges held out over 10^5 edges.
pub fn held_fraction() -> f64 {
    let seeds = SeedStream::new(6);
    let local = wide_graph(10, 50);
    let (mut total, mut held) = (0usize, 0usize);
    for i in 0..2000 {
        let (reduced, h) = hold_out_edges(&local, RATE, 2, &mut seeds.rng_at("holdout", i));
        assert_eq!(reduced.edges.len() + h.positives.len(), local.edges.len());
        total += 50;
        held += h.positives.len();
    }
    held as f64 / total as f64
}

/// Counts corruptions touching position 0, [INT] wiring, or negatives that do not
/// differ from their positive in exactly one endpoint, over 10^4 synthetic examples.
pub fn corruption_violations() -> usize {
    let world = SyntheticWorld::generate(WorldConfig {
        seed: 3,
        ..WorldConfig::default()
    })
    .unwrap();
    let g = world.knowledge_graph();
    let segments = segment_documents(&world.corpus(), 64);
    let tokens = TokenVocab::build(segments.iter().map(|s| s.text.as_str()), 2);
    let examples = build_examples(&segments, &g, &tokens, 64, 16, SeedStream::new(3));
    let seeds = SeedStream::new(9);
    let mut violations = 0;
    for i in 0..10_000u64 {
        let ex = &examples[i as usize % examples.len()];
        let (seg, plan) = apply_masking(&ex.segment, RATE, &mut seeds.rng_at("mask", i));
        if plan.positions.contains(&0) || seg.ids[0] != INT {
            violations += 1;
        }
        let (reduced, h) = hold_out_edges(&ex.local, RATE, 4, &mut seeds.rng_at("edges", i));
        if h.positives.iter().any(|e| e.rel == INTERACTION) {
            violations += 1;
        }
        let wiring = |l: &LocalKG| l.edges.iter().filter(|e| e.rel == INTERACTION).count();
        if wiring(&reduced) != wiring(&ex.local) {
            violations += 1;
        }
        for (p, negs) in h.positives.iter().zip(&h.negatives) {
            for &(a, b) in negs {
                if a == 0 || b == 0 || usize::from(a != p.head) + usize::from(b != p.tail) != 1 {
                    violations += 1;
                }
            }
        }
    }
    violations
}

#[derive(Debug, Default)]
pub struct RetrievalTally {
    pub node_mismatches: usize,
    pub edge_mismatches: usize,
    pub dummy_mismatches: usize,
    pub dummies: usize,
}

/// Local-graph retrieval against the BFS path oracle on `cases` random graphs.
pub fn retrieval_oracle(cases: u64) -> RetrievalTally {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut tally = RetrievalTally::default();
    for case in 0..cases {
        let g = random_graph(&mut rng);
        let n = g.num_entities();
        let k = rng.random_range(0..=n.min(6));
        let linked: BTreeSet<usize> = sample(&mut rng, n, k).into_iter().collect();
        let v_el: Vec<EntityId> = linked.iter().map(|&e| EntityId(e)).collect();
        let local = retrieve_local_kg(&v_el, &g, 64, &mut SeedStream::new(case).rng("r"));
        local.validate(&g, 64).unwrap();
        if local.is_dummy != linked.is_empty() {
            tally.dummy_mismatches += 1;
        }
        if local.is_dummy {
            tally.dummies += 1;
            continue;
        }
        let got = entity_set(&local);
        if got != bfs_oracle(&linked, &g) {
            tally.node_mismatches += 1;
        }
        let want_edges: BTreeSet<(usize, usize, usize)> = g
            .triplets()
            .iter()
            .filter(|t| got.contains(&t.head.0) && got.contains(&t.tail.0))
            .map(|t| (t.head.0, t.rel.0, t.tail.0))
            .collect();
        let got_edges: BTreeSet<(usize, usize, usize)> = local
            .kg_edges()
            .map(|e| (local.entity(e.head).unwrap().0, e.rel.0, local.entity(e.tail).unwrap().0))
            .collect();
        let wired: BTreeSet<usize> =
            local.edges.iter().filter(|e| e.rel == INTERACTION).map(|e| local.entity(e.tail).unwrap().0).collect();
        if got_edges != want_edges || wired != linked {
            tally.edge_mismatches += 1;
        }
    }
    tally
}

/// Pretraining metrics as JSON lines, plus the trained model.
pub fn pretrain_metrics(cfg: &RunConfig) -> (String, Model<f32>, Bench) {
    let bench = Bench::new(cfg).unwrap();
    let seeds = SeedStream::new(cfg.seed().unwrap());
    let mut model = Model::<f32>::new(cfg.model().unwrap(), bench.sizes(), seeds).unwrap();
    let mut trainer = Pretrainer::new(cfg.pretrain().unwrap(), &model, seeds).unwrap();
    let metrics = trainer.run(&mut model, bench.train(), |_, _| Ok(())).unwrap();
    (metrics.iter().map(|m| m.to_json_line() + "\n").collect(), model, bench)
}

fn forward_bits(model: &Model<f32>, ex: &TrainExample) -> Vec<u32> {
    let tape = Tape::new();
    let p = Binding::new(&tape, &model.store);
    let out = model.encoder.encode(&p, &ex.segment, &ex.local, Mode::Eval, None).unwrap();
    let pooled = model.pool.pool(&p, &out).unwrap();
    [out.tokens, out.nodes, pooled.logit].iter().flat_map(|v| v.to_vec()).map(f32::to_bits).collect()
}

/// Saves the model to disk, loads it back and counts examples whose tokens, nodes
/// or pooled logit differ in any bit.
pub fn checkpoint_forward_mismatches(cfg: &RunConfig, model: &Model<f32>, bench: &Bench, n: usize) -> usize {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let ck = CheckpointRef {
        config: cfg,
        tokens: &bench.tokens,
        entities: bench.graph.entities().names(),
        relations: bench.graph.relations().names(),
        model,
    };
    ck.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back.tokens, bench.tokens);
    bench.examples.iter().take(n).filter(|ex| forward_bits(model, ex) != forward_bits(&back.model, ex)).count()
}
