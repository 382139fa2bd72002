//! Pretrains on a small synthetic world and round-trips the checkpoint.

use dragonforge::checkpoint::{Checkpoint, CheckpointRef};
use dragonforge::config::{Provenance, RunConfig};
use dragonforge::eval::ablation::Bench;
use dragonforge::model::Model;
use dragonforge::pretrain::{evaluate_mlm, Pretrainer};
use dragonforge::rng::SeedStream;

const SMALL: &str = "
world.n_entities = 80
world.n_facts = 500
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
pretrain.steps = 600
pretrain.batch_size = 4
";

fn main() -> dragonforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(SMALL, "example", Provenance::File)?;
    let bench = Bench::new(&cfg)?;
    let seeds = SeedStream::new(cfg.seed()?);
    let mut model = Model::<f32>::new(cfg.model()?, bench.sizes(), seeds)?;
    let pc = cfg.pretrain()?;

    println!("held-out MLM before: {:.3}", evaluate_mlm(&model, bench.heldout(), pc.mask_rate, seeds)?);
    let mut trainer = Pretrainer::new(pc.clone(), &model, seeds)?;
    trainer.run(&mut model, bench.train(), |m, _| {
        if m.step % 150 == 0 {
            println!("{}", m.to_json_line());
        }
        Ok(())
    })?;
    println!("held-out MLM after:  {:.3}", evaluate_mlm(&model, bench.heldout(), pc.mask_rate, seeds)?);

    let path = std::env::temp_dir().join("dragonforge_example.bin");
    let ck = CheckpointRef {
        config: &cfg,
        tokens: &bench.tokens,
        entities: bench.graph.entities().names(),
        relations: bench.graph.relations().names(),
        model: &model,
    };
    ck.save(&path)?;
    let back = Checkpoint::<f32>::load(&path)?;
    println!("reloaded {} parameter values from {}", back.model.store.num_values(), path.display());
    Ok(())
}
