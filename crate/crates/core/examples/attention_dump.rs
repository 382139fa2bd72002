//! Prints the per-edge graph attention and pooling weights for one example.

use dragonforge::config::{Provenance, RunConfig};
use dragonforge::eval::ablation::Bench;
use dragonforge::eval::attention::{dump_attention, AttentionRecord};
use dragonforge::model::Model;
use dragonforge::pretrain::Pretrainer;
use dragonforge::rng::SeedStream;

const SMALL: &str = "
world.n_entities = 60
world.n_facts = 300
model.n_text_layers = 1
model.n_fusion_layers = 2
model.d_text = 16
model.d_node = 16
model.heads_text = 2
model.d_ff = 32
model.d_mint_hidden = 32
model.dropout = 0
model.max_seq_len = 48
model.max_nodes = 12
pretrain.steps = 300
pretrain.batch_size = 4
";

fn main() -> dragonforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(SMALL, "example", Provenance::File)?;
    let bench = Bench::new(&cfg)?;
    let seeds = SeedStream::new(cfg.seed()?);
    let mut model = Model::<f32>::new(cfg.model()?, bench.sizes(), seeds)?;
    Pretrainer::new(cfg.pretrain()?, &model, seeds)?.run(&mut model, bench.train(), |_, _| Ok(()))?;

    let index = bench.examples.iter().position(|e| !e.local.is_dummy && e.local.edges.len() > 3).unwrap_or(0);
    for record in dump_attention(&model, index, &bench.examples[index], &bench.graph)? {
        match record {
            AttentionRecord::Nodes { nodes, .. } => println!("nodes: {}", nodes.join(", ")),
            AttentionRecord::Layer { layer, edges, .. } => {
                println!("layer {layer}:");
                // graph edges only; the interaction links are listed in the JSON dump
                for e in edges.iter().filter(|e| !e.relation.starts_with('[')).take(6) {
                    println!("  {} -[{}]-> {}: {:?}", e.src, e.relation, e.dst, e.weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
                }
            }
            AttentionRecord::Pooling { alpha, logit, .. } => println!("pooling alpha {alpha:.3?}, logit {logit:.3}"),
        }
    }
    Ok(())
}
