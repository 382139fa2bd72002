mod common;

use std::collections::{BTreeMap, HashSet};

use common::{tiny_encoder, tiny_run_config};
use dragonforge::encoder::{Fusion, VocabSizes};
use dragonforge::eval::ablation::{directional_grid, run_ablation, to_tsv};
use dragonforge::eval::attention::{dump_attention, parse_json_lines, to_json_lines, AttentionRecord};
use dragonforge::eval::linkpred::build_queries;
use dragonforge::eval::ranking::{rank_of, RankingReport};
use dragonforge::eval::synthetic::{SyntheticWorld, WorldConfig};
use dragonforge::kg::{EntityId, KnowledgeGraph, LoadOptions, Triplet};
use dragonforge::model::{Model, ModelConfig};
use dragonforge::pretrain::TrainExample;
use dragonforge::retrieval::{retrieve_local_kg, LocalKG};
use dragonforge::rng::SeedStream;
use dragonforge::text::TextSegment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn perfect_scorer_gives_unit_metrics() {
    let ranks: Vec<f64> = (2..9)
        .map(|k| {
            let scores: Vec<f64> = (0..k).map(|i| i as f64).collect();
            rank_of(&scores, k - 1, &vec![false; k])
        })
        .collect();
    let r = RankingReport::from_ranks(&ranks, 0, true);
    assert_eq!((r.hits_at_1, r.mrr, r.mean_rank), (1.0, 1.0, 1.0));
    assert!(r.is_monotone());
}

#[test]
fn random_scorer_mrr_matches_harmonic_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [2usize, 5, 12] {
        let n = 20_000;
        let inv: Vec<f64> = (0..n)
            .map(|_| {
                let scores: Vec<f64> = (0..k).map(|_| rng.random()).collect();
                1.0 / rank_of(&scores, 0, &vec![false; k])
            })
            .collect();
        let mean = inv.iter().sum::<f64>() / n as f64;
        let sd = (inv.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let want = (1..=k).map(|i| 1.0 / i as f64).sum::<f64>() / k as f64;
        // Four standard errors.
        assert!((mean - want).abs() < 4.0 * sd / (n as f64).sqrt(), "k={k}: {mean} vs {want}");
    }
}

fn toy_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let names: Vec<String> = (0..9).map(|i| format!("n{i}")).collect();
    let rels = ["p", "q"];
    let mut rows = HashSet::new();
    while rows.len() < 50 {
        rows.insert((rng.random_range(0..9), rng.random_range(0..2), rng.random_range(0..9)));
    }
    let mut rows: Vec<_> = rows.into_iter().collect();
    rows.sort_unstable();
    KnowledgeGraph::from_named(rows.iter().map(|&(h, r, t)| (names[h].as_str(), rels[r], names[t].as_str())), LoadOptions::default())
}

#[test]
fn filtered_ranking_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = toy_graph(&mut rng);
    assert_eq!(g.triplets().len(), 50);
    let all: Vec<EntityId> = (0..g.num_entities()).map(EntityId).collect();
    let local = retrieve_local_kg(&all, &g, 16, &mut SeedStream::new(0).rng("r"));
    let examples = vec![TrainExample {
        segment: TextSegment::empty(),
        local,
    }];
    let known: HashSet<Triplet> = g.triplets().iter().copied().collect();
    let (queries, skipped) = build_queries(g.triplets(), &examples, &known);
    assert_eq!((queries.len(), skipped), (50, 0));
    let local = &examples[0].local;
    let node_score: Vec<f64> = (0..local.nodes.len()).map(|_| rng.random_range(0..4) as f64).collect();
    for q in &queries {
        let t = q.triplet;
        let scores: Vec<f64> = q.candidates.iter().map(|&c| node_score[c]).collect();
        let pos = q.candidates.iter().position(|&c| c == q.tail).unwrap();
        let got = rank_of(&scores, pos, &q.excluded);
        // Scan every entity node; skip the head and known-true non-targets.
        let target = node_score[q.tail];
        let (mut above, mut tied) = (0.0, 0.0);
        for i in 0..local.nodes.len() {
            let Some(e) = local.entity(i) else { continue };
            if i == q.tail || e == t.head || known.contains(&Triplet { tail: e, ..t }) {
                continue;
            }
            if node_score[i] > target {
                above += 1.0;
            } else if node_score[i] == target {
                tied += 1.0;
            }
        }
        assert_eq!(got, 1.0 + above + tied / 2.0, "{t:?}");
        for (&c, &x) in q.candidates.iter().zip(&q.excluded) {
            let e = local.entity(c).unwrap();
            assert_eq!(x, c != q.tail && known.contains(&Triplet { tail: e, ..t }));
        }
    }
}

#[test]
fn world_entity_marginals_are_uniform() {
    let world = SyntheticWorld::generate(WorldConfig {
        n_facts: 10_000,
        seed: 4,
        ..WorldConfig::default()
    })
    .unwrap();
    let counts = world.entity_counts();
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Wilson-Hilferty upper 1% point for df = entities - 1.
    let df = (counts.len() - 1) as f64;
    let z = 2.326_348;
    let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn world_splits_are_disjoint_and_aligned() {
    let world = SyntheticWorld::generate(WorldConfig {
        seed: 9,
        ..WorldConfig::default()
    })
    .unwrap();
    let kg: HashSet<_> = world.kg_facts().copied().collect();
    let test = world.text_only_facts();
    assert!(!test.is_empty());
    assert!(test.iter().all(|f| !kg.contains(f)));
    for a in &world.alignment {
        let sentence = &world.documents[a.doc][a.sentence];
        assert_eq!(world.parse_sentence(sentence), Some(world.facts[a.fact]));
    }
    let aligned: HashSet<usize> = world.alignment.iter().map(|a| a.fact).collect();
    let text_visible = world.visibility.iter().filter(|v| **v != dragonforge::eval::synthetic::Visibility::KgOnly).count();
    assert_eq!(aligned.len(), text_visible);
}

fn attention_model(g: &KnowledgeGraph) -> Model<f64> {
    let config = ModelConfig {
        encoder: tiny_encoder(Fusion::Bidirectional),
        ..ModelConfig::default()
    };
    let sizes = VocabSizes {
        tokens: 12,
        entities: g.num_entities(),
        relations: g.relations().len(),
    };
    Model::new(config, sizes, SeedStream::new(6)).unwrap()
}

#[test]
fn attention_dump_parses_back_and_sums_to_one() {
    let g = KnowledgeGraph::from_named([("a", "r", "b"), ("b", "s", "c"), ("c", "r", "a"), ("a", "s", "c")], LoadOptions::default());
    let model = attention_model(&g);
    let local = retrieve_local_kg(&[EntityId(0), EntityId(2)], &g, 8, &mut SeedStream::new(0).rng("r"));
    let ex = TrainExample {
        segment: TextSegment {
            ids: vec![2, 5, 6, 7],
            spans: vec![None; 4],
        },
        local: local.clone(),
    };
    let records = dump_attention(&model, 3, &ex, &g).unwrap();
    let text = to_json_lines(&records);
    let back = parse_json_lines(&text).unwrap();
    assert_eq!(back, records);
    assert_eq!(text.lines().count(), records.len());
    let mut layers = 0;
    for r in &back {
        match r {
            AttentionRecord::Nodes { nodes, .. } => assert_eq!(nodes.len(), local.nodes.len()),
            AttentionRecord::Layer { edges, .. } => {
                layers += 1;
                let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
                for e in edges {
                    let stored = local.edges[e.edge];
                    let (src, dst) = if e.reversed { (stored.tail, stored.head) } else { (stored.head, stored.tail) };
                    assert_eq!((e.src, e.dst), (src, dst));
                    assert_eq!(e.relation, g.relations().name(stored.rel));
                    for (h, w) in e.weights.iter().enumerate() {
                        *sums.entry((e.dst, h)).or_default() += w;
                    }
                }
                assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-5), "{sums:?}");
            }
            AttentionRecord::Pooling { alpha, .. } => {
                assert_eq!(alpha.len(), local.nodes.len() - 1);
                assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }
    }
    assert_eq!(layers, 2);
}

#[test]
fn dummy_graph_pooling_is_certain() {
    let g = KnowledgeGraph::from_named([("a", "r", "b")], LoadOptions::default());
    let model = attention_model(&g);
    let ex = TrainExample {
        segment: TextSegment {
            ids: vec![2, 5],
            spans: vec![None; 2],
        },
        local: LocalKG::dummy(),
    };
    let records = dump_attention(&model, 0, &ex, &g).unwrap();
    let alpha = records.iter().find_map(|r| match r {
        AttentionRecord::Pooling { alpha, .. } => Some(alpha.clone()),
        _ => None,
    });
    assert_eq!(alpha, Some(vec![1.0]));
}

#[test]
fn ablation_rows_repeat_exactly() {
    let cfg = tiny_run_config(&[]);
    let cells = &directional_grid()[..2];
    let a = run_ablation(&cfg, cells, &[3], |_| {}).unwrap();
    let b = run_ablation(&cfg, cells, &[3], |_| {}).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.error.is_none()), "{}", to_tsv(&a));
    assert!(run_ablation(&cfg, &[], &[3], |_| {}).is_err());
}
