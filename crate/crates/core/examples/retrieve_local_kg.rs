//! Links entity mentions in a sentence and retrieves the two-hop local graph.

use dragonforge::kg::{KnowledgeGraph, LoadOptions};
use dragonforge::retrieval::{link_entities, retrieve_local_kg, verbalize_sentences, LocalNode};
use dragonforge::rng::SeedStream;
use dragonforge::text::TokenVocab;

fn main() {
    let g = KnowledgeGraph::from_named(
        [
            ("red fox", "preys on", "hen"),
            ("hen", "lays", "egg"),
            ("red fox", "lives in", "forest"),
            ("owl", "lives in", "forest"),
            ("egg", "found in", "nest"),
        ],
        LoadOptions::default(),
    );
    let text = "the red fox crept toward an egg in the nest";
    let tokens = TokenVocab::build([text], 1);
    let (segment, linked) = link_entities(text, g.entities(), &tokens, 32);
    println!("{} tokens, linked: {:?}", segment.len(), linked.iter().map(|&e| g.entities().name(e)).collect::<Vec<_>>());

    let local = retrieve_local_kg(&linked, &g, 8, &mut SeedStream::new(0).rng("example"));
    for (i, node) in local.nodes.iter().enumerate() {
        let label = match node {
            LocalNode::Interaction => "[interaction]".to_string(),
            LocalNode::Dummy => "[dummy]".to_string(),
            LocalNode::Entity(e) => g.entities().name(*e).to_string(),
        };
        println!("node {i}: {label}");
    }
    println!("{} edges", local.edges.len());
    for s in verbalize_sentences(&local, &g) {
        println!("  {s}");
    }
}
