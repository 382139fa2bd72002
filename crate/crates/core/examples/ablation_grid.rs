//! Runs a reduced ablation grid on a toy world and prints the result table.

use dragonforge::config::{Provenance, RunConfig};
use dragonforge::eval::ablation::{directional_grid, run_ablation, to_tsv};

const TOY: &str = "
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
model.max_nodes = 16
pretrain.steps = 40
pretrain.batch_size = 4
finetune.epochs = 2
baseline.epochs = 3
";

// At this length the two fusion styles barely separate; configs/synthetic.cfg is the real grid.
fn main() -> dragonforge::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.merge_text(TOY, "example", Provenance::File)?;
    let rows = run_ablation(&cfg, &directional_grid(), &[1, 2], |r| {
        eprintln!("done: seed {} {} / {}", r.seed, r.objective, r.fusion);
    })?;
    print!("{}", to_tsv(&rows));
    Ok(())
}
