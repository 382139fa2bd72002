//! Filtered ranking of held-out facts: contextual node vectors vs a static DistMult baseline.

use dragonforge::config::{Provenance, RunConfig};
use dragonforge::eval::ablation::Bench;
use dragonforge::eval::linkpred::{eval_contextual, DistMultBaseline};
use dragonforge::eval::ranking::RankingReport;
use dragonforge::model::Model;
use dragonforge::pretrain::Pretrainer;
use dragonforge::rng::SeedStream;

const SMALL: &str = "
world.n_entities = 120
world.n_facts = 900
model.n_text_layers = 1
model.n_fusion_layers = 2
model.d_text = 16
model.d_node = 16
model.heads_text = 2
model.d_ff = 32
model.d_mint_hidden = 32
model.dropout = 0
model.max_seq_len = 48
model.max_nodes = 16
pretrain.steps = 1000
pretrain.batch_size = 4
baseline.epochs = 20
";

fn show(name: &str, r: &RankingReport) {
    println!(
        "{name:>9}: MRR {:.3}  Hits@1 {:.3}  Hits@3 {:.3}  Hits@10 {:.3}  ({} queries, {} skipped)",
        r.mrr, r.hits_at_1, r.hits_at_3, r.hits_at_10, r.n, r.skipped
    );
}

fn main() -> dragonforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(SMALL, "example", Provenance::File)?;
    let bench = Bench::new(&cfg)?;
    let seeds = SeedStream::new(cfg.seed()?);
    let mut model = Model::<f32>::new(cfg.model()?, bench.sizes(), seeds)?;
    Pretrainer::new(cfg.pretrain()?, &model, seeds)?.run(&mut model, bench.train(), |_, _| Ok(()))?;

    let contextual = eval_contextual(&model, &bench.examples, &bench.queries, bench.skipped)?;
    let baseline = DistMultBaseline::train(&bench.graph, &cfg.baseline()?, seeds)?;
    show("kg+text", &contextual);
    show("kg only", &baseline.evaluate(&bench.examples, &bench.queries, bench.skipped));
    Ok(())
}
