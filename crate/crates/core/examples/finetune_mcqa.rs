//! Pretrains briefly, then finetunes on synthetic multiple-choice questions.

use dragonforge::config::{Provenance, RunConfig};
use dragonforge::eval::ablation::Bench;
use dragonforge::finetune::{evaluate, finetune};
use dragonforge::model::Model;
use dragonforge::pretrain::Pretrainer;
use dragonforge::rng::SeedStream;

const SMALL: &str = "
world.n_entities = 200
world.n_facts = 2000
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
finetune.epochs = 8
finetune.freeze_lm_epochs = 2
";

fn main() -> dragonforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(SMALL, "example", Provenance::File)?;
    // e.g. `cargo run --example finetune_mcqa -- 0.1` for the low-resource setting
    if let Some(fraction) = std::env::args().nth(1) {
        cfg.set("finetune.train_fraction", &fraction, Provenance::Flag)?;
    }
    let bench = Bench::new(&cfg)?;
    let seeds = SeedStream::new(cfg.seed()?);
    let mut model = Model::<f32>::new(cfg.model()?, bench.sizes(), seeds)?;
    Pretrainer::new(cfg.pretrain()?, &model, seeds)?.run(&mut model, bench.train(), |_, _| Ok(()))?;

    let [train, dev, test] = &bench.mcqa;
    println!("questions: {} train, {} dev, {} test", train.len(), dev.len(), test.len());
    println!("before finetuning: {:.3}", evaluate(&model, test, "test")?.accuracy);
    let report = finetune(&mut model, train, dev, &cfg.finetune()?, seeds)?;
    for e in &report.epochs {
        let frozen = if e.lm_frozen { " (LM frozen)" } else { "" };
        println!("epoch {}: loss {:.3}, dev {:.3}{frozen}", e.epoch, e.train_loss, e.dev_accuracy);
    }
    let acc = evaluate(&model, test, "test")?;
    println!("used {} training questions; test accuracy {:.3}, predictions per choice {:?}", report.n_train_used, acc.accuracy, acc.per_choice_count);
    Ok(())
}
